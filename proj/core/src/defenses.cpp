#include "advkit/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace advkit {

const char* detector_kind_name(DetectorKind k) {
  return k == DetectorKind::recon_error ? "recon_error" : "jsd";
}

namespace {

void check_detector(const Detector& d) {
  if (!d.autoencoder) throw Error("detector: missing autoencoder");
  if (d.kind == DetectorKind::jsd) {
    if (!d.classifier) throw Error("detector: jsd kind needs a classifier");
    if (d.temperature <= 0) throw Error("detector: jsd temperature must be positive");
  }
}

// 0.5*KL(p||m) + 0.5*KL(q||m) as a graph over {1,K} distribution tensors.
TensorF jsd_graph(ContextF& ctx, const TensorF& p, const TensorF& q) {
  TensorF m = scale(ctx, add(ctx, p, q), 0.5);
  TensorF log_m = log_op(ctx, m);
  TensorF kl_p = sum(ctx, mul(ctx, p, sub(ctx, log_op(ctx, p), log_m)));
  TensorF kl_q = sum(ctx, mul(ctx, q, sub(ctx, log_op(ctx, q), log_m)));
  return scale(ctx, add(ctx, kl_p, kl_q), 0.5);
}

}  // namespace

TensorF detector_score_graph(ContextF& ctx, const Detector& d, const TensorF& x) {
  check_detector(d);
  TensorF recon = d.autoencoder->reconstruct(ctx, x);
  if (d.kind == DetectorKind::recon_error) {
    TensorF diff = sub(ctx, x, recon);
    return scale(ctx, sum_squares(ctx, diff), 1.0 / static_cast<double>(x.numel()));
  }
  TensorF p = softmax(ctx, d.classifier->logits(ctx, x), d.temperature);
  TensorF q = softmax(ctx, d.classifier->logits(ctx, recon), d.temperature);
  return jsd_graph(ctx, p, q);
}

double detector_score(const Detector& d, const TensorF& x) {
  ContextF ctx = ContextF::inference();
  return detector_score_graph(ctx, d, x).item();
}

std::vector<double> detector_scores(const Detector& d, const Dataset& data, int64_t from,
                                    int64_t count, int batch) {
  check_detector(d);
  if (count < 0) count = data.count - from;
  if (from < 0 || from + count > data.count) throw Error("detector_scores: range out of bounds");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(count));
  const int64_t px = data.pixels_per_image();
  std::vector<int64_t> idx;
  for (int64_t at = from; at < from + count; at += batch) {
    const int64_t n = std::min<int64_t>(batch, from + count - at);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), at);
    TensorF x = data.gather(idx);
    ContextF ctx = ContextF::inference();
    TensorF recon = d.autoencoder->reconstruct(ctx, x);
    if (d.kind == DetectorKind::recon_error) {
      const auto xv = x.values();
      const auto rv = recon.values();
      for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < px; ++j) {
          const double diff = static_cast<double>(xv[i * px + j]) - rv[i * px + j];
          acc += diff * diff;
        }
        scores.push_back(acc / static_cast<double>(px));
      }
    } else {
      TensorF p = softmax(ctx, d.classifier->logits(ctx, x), d.temperature);
      TensorF q = softmax(ctx, d.classifier->logits(ctx, recon), d.temperature);
      const int64_t k = p.shape()[1];
      for (int64_t i = 0; i < n; ++i) {
        std::vector<double> pr(static_cast<std::size_t>(k)), qr(static_cast<std::size_t>(k));
        for (int64_t j = 0; j < k; ++j) {
          pr[static_cast<std::size_t>(j)] = p.values()[i * k + j];
          qr[static_cast<std::size_t>(j)] = q.values()[i * k + j];
        }
        scores.push_back(jsd(pr, qr));
      }
    }
  }
  return scores;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("jsd: length mismatch");
  if (p.empty()) throw Error("jsd: empty distributions");
  double psum = 0.0, qsum = 0.0;
  for (double v : p) {
    if (v < 0) throw Error("jsd: negative probability");
    psum += v;
  }
  for (double v : q) {
    if (v < 0) throw Error("jsd: negative probability");
    qsum += v;
  }
  if (std::abs(psum - 1.0) > 1e-6 || std::abs(qsum - 1.0) > 1e-6)
    throw Error("jsd: inputs not normalized (sums " + std::to_string(psum) + ", " +
                std::to_string(qsum) + ")");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

double calibrate_threshold(std::vector<double> scores, double fpr) {
  if (scores.empty()) throw Error("calibrate_threshold: empty scores");
  if (!(fpr > 0.0 && fpr < 1.0)) throw Error("calibrate_threshold: fpr must be in (0,1)");
  const auto n = static_cast<int64_t>(scores.size());
  // Allow at most floor(fpr*n) scores above the threshold; the threshold is
  // the score at that depth from the top.
  const auto allowed = static_cast<int64_t>(fpr * static_cast<double>(n));
  const int64_t pos = n - 1 - allowed;
  std::nth_element(scores.begin(), scores.begin() + pos, scores.end());
  return scores[static_cast<std::size_t>(pos)];
}

void write_calibration_csv(const std::vector<CalibrationRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_calibration_csv: cannot open '" + path + "'");
  out << "detector_index,kind,temperature,tau,empirical_fpr\n";
  char line[160];
  for (const CalibrationRow& r : rows) {
    std::snprintf(line, sizeof line, "%d,%s,%.9g,%.9g,%.9g\n", r.detector_index,
                  detector_kind_name(r.kind), r.temperature, r.threshold, r.empirical_fpr);
    out << line;
  }
}

std::vector<CalibrationRow> calibrate_pipeline(DefensePipeline& pipeline,
                                               const Dataset& validation, double fpr) {
  if (pipeline.detectors.empty() && pipeline.reformers.empty())
    throw Error("calibrate_pipeline: pipeline has no detectors or reformers");
  std::vector<CalibrationRow> rows;
  for (std::size_t i = 0; i < pipeline.detectors.size(); ++i) {
    Detector& d = pipeline.detectors[i];
    const auto scores = detector_scores(d, validation);
    d.threshold = calibrate_threshold(scores, fpr);
    int64_t over = 0;
    for (double s : scores)
      if (s > d.threshold) ++over;
    CalibrationRow row;
    row.detector_index = static_cast<int>(i);
    row.kind = d.kind;
    row.temperature = d.temperature;
    row.threshold = d.threshold;
    row.empirical_fpr = static_cast<double>(over) / static_cast<double>(scores.size());
    rows.push_back(row);
  }
  pipeline.calibrated = true;
  return rows;
}

DefendedVerdict defend_classify(const DefensePipeline& pipeline, const TensorF& x, Rng& rng) {
  if (!pipeline.calibrated && !pipeline.detectors.empty())
    throw Error("defend_classify: pipeline not calibrated");
  if (pipeline.reformers.empty()) throw Error("defend_classify: no reformers");
  if (!pipeline.classifier) throw Error("defend_classify: no classifier");

  DefendedVerdict verdict;
  for (std::size_t i = 0; i < pipeline.detectors.size(); ++i) {
    // Detection sees the raw input only, never the reformed image.
    if (detector_score(pipeline.detectors[i], x) > pipeline.detectors[i].threshold) {
      verdict.detected = true;
      verdict.detector_index = static_cast<int>(i);
      return verdict;
    }
  }
  const auto pick = rng.below(pipeline.reformers.size());
  ContextF ctx = ContextF::inference();
  verdict.reformed = pipeline.reformers[pick]->reconstruct(ctx, x);
  verdict.final_class = pipeline.classifier->classify(verdict.reformed);
  return verdict;
}

double pipeline_rejection_rate(const DefensePipeline& pipeline, const Dataset& data,
                               int64_t from, int64_t count) {
  if (count < 0) count = data.count - from;
  if (count <= 0) throw Error("pipeline_rejection_rate: empty range");
  std::vector<uint8_t> rejected(static_cast<std::size_t>(count), 0);
  for (const Detector& d : pipeline.detectors) {
    const auto scores = detector_scores(d, data, from, count);
    for (int64_t i = 0; i < count; ++i)
      if (scores[static_cast<std::size_t>(i)] > d.threshold)
        rejected[static_cast<std::size_t>(i)] = 1;
  }
  int64_t total = 0;
  for (uint8_t r : rejected) total += r;
  return static_cast<double>(total) / static_cast<double>(count);
}

}  // namespace advkit
