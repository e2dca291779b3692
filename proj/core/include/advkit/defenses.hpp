#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advkit/dataset.hpp"
#include "advkit/models.hpp"
#include "advkit/rng.hpp"

namespace advkit {

enum class DetectorKind { recon_error, jsd };
const char* detector_kind_name(DetectorKind k);

// Manifold-distance detector. recon_error scores the mean per-pixel squared
// error between x and AE(x) (score unit: per-pixel mean of squared
// differences). jsd scores the Jensen-Shannon divergence between
// softmax(Z(x)/T) and softmax(Z(AE(x))/T), natural log, and needs a
// classifier for Z. An input is flagged when score > threshold; a score
// exactly equal to the threshold is benign.
struct Detector {
  DetectorKind kind = DetectorKind::recon_error;
  std::shared_ptr<const Autoencoder> autoencoder;
  std::shared_ptr<const Classifier> classifier;  // jsd only
  double temperature = 1.0;                      // jsd only, dimensionless
  double threshold = 0.0;                        // score units, >= 0
};

// Score for a single instance {1,H,W,C}.
double detector_score(const Detector& d, const TensorF& x);
// Differentiable scalar {1} score on the given tape; the gradient flows
// through the autoencoder (and, for jsd, the temperature-softmax path).
TensorF detector_score_graph(ContextF& ctx, const Detector& d, const TensorF& x);
// Scores over data[from, from+count); batched for speed.
std::vector<double> detector_scores(const Detector& d, const Dataset& data, int64_t from = 0,
                                    int64_t count = -1, int batch = 256);

// Jensen-Shannon divergence 0.5*KL(p||m) + 0.5*KL(q||m), m=(p+q)/2, natural
// log. Inputs must be distributions (nonnegative, sums within 1e-6 of 1).
// Symmetric, in [0, ln 2].
double jsd(std::span<const double> p, std::span<const double> q);

// Threshold at the given false-positive rate: the (1-fpr)-quantile of the
// clean scores, i.e. the smallest score value such that the fraction of
// scores strictly above it is <= fpr (and maximal under that constraint).
double calibrate_threshold(std::vector<double> scores, double fpr);

struct CalibrationRow {
  int detector_index = 0;
  DetectorKind kind = DetectorKind::recon_error;
  double temperature = 1.0;
  double threshold = 0.0;
  double empirical_fpr = 0.0;
};

// detector_index,kind,temperature,tau,empirical_fpr
void write_calibration_csv(const std::vector<CalibrationRow>& rows, const std::string& path);

// Detectors, a reformer pool and the protected classifier. Thresholds must
// be calibrated before classification.
struct DefensePipeline {
  std::vector<Detector> detectors;
  std::vector<std::shared_ptr<const Autoencoder>> reformers;
  std::shared_ptr<const Classifier> classifier;
  bool calibrated = false;
};

struct DefendedVerdict {
  bool detected = false;
  int detector_index = -1;  // first firing detector when detected
  TensorF reformed;         // defined only when not detected
  int final_class = -1;     // defined only when not detected
};

// Calibrates every detector threshold to the same per-detector FPR on the
// validation set. Returns one row per detector with its empirical FPR.
std::vector<CalibrationRow> calibrate_pipeline(DefensePipeline& pipeline,
                                               const Dataset& validation, double fpr);

// Detection runs on the raw input; if no detector fires, one reformer is
// picked uniformly at random (seeded rng), x <- R(x), and the classifier
// labels the reformed input. Deterministic given (pipeline, x, rng state).
DefendedVerdict defend_classify(const DefensePipeline& pipeline, const TensorF& x, Rng& rng);

// Fraction of instances the pipeline rejects (any detector fires).
double pipeline_rejection_rate(const DefensePipeline& pipeline, const Dataset& data,
                               int64_t from = 0, int64_t count = -1);

}  // namespace advkit
