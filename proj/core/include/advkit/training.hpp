#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advkit/dataset.hpp"
#include "advkit/models.hpp"
#include "advkit/rng.hpp"

namespace advkit {

enum class OptimizerKind { sgd, adam };
const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

// Updates parameters in place from their .grad() buffers. The parameter list
// must be the same (same order, same shapes) on every step.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<TensorF> params) = 0;
  static std::unique_ptr<Optimizer> make(OptimizerKind kind, double lr);
};

void zero_grads(std::span<TensorF> params);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  // Per-pixel Gaussian augmentation std, pixel units; 0 disables. Noise is
  // drawn fresh for each instance in each epoch.
  double augment_sigma = 0.0;
  uint64_t seed = 1;

  void validate() const;
};

struct AETrainConfig : TrainConfig {
  // Input-corruption std for denoising training; 0 trains plain
  // reconstruction.
  double noise_sigma = 0.1;
};

struct EpochStats {
  int epoch = 0;          // 1-based
  double train_loss = 0;  // mean over batches
  double val_metric = 0;  // accuracy for classifiers, MSE for reconstruction nets
};

struct TrainCurve {
  std::vector<EpochStats> epochs;
};

// CSV with header epoch,train_loss,val_metric.
void write_curve_csv(const TrainCurve& curve, const std::string& path);

// i.i.d. Gaussian(0, sigma^2) noise tensor.
TensorF gaussian_noise(const Shape& shape, double sigma, Rng& rng);
// x + noise, clamped back to [0,1]. sigma=0 returns x unchanged.
TensorF gaussian_augment(const TensorF& x, double sigma, Rng& rng);

struct ClassifierTrainResult {
  Classifier model;
  TrainCurve curve;
  double train_accuracy = 0;
  double val_accuracy = 0;
};

// Cross-entropy training with seeded shuffling and optional Gaussian
// augmentation. A non-finite loss raises an error naming the epoch.
ClassifierTrainResult train_classifier(const Dataset& train, const Dataset& val,
                                       const TrainConfig& cfg, Activation activation);

struct AutoencoderTrainResult {
  Autoencoder model;
  TrainCurve curve;
};

// Minimizes mean squared reconstruction error of clean targets from
// noise-corrupted inputs. Distinct seeds give distinct parameter vectors.
AutoencoderTrainResult train_autoencoder(const Dataset& train, const Dataset& val,
                                         const AETrainConfig& cfg);

// Aligned (adversarial, clean) image pairs.
struct ImagePairs {
  int64_t count = 0;
  Shape image_shape;
  std::vector<float> adv;
  std::vector<float> clean;

  TensorF adv_batch(std::span<const int64_t> indices) const;
  TensorF clean_batch(std::span<const int64_t> indices) const;
  ImagePairs slice(int64_t from, int64_t n) const;
};

struct PreprocessorTrainResult {
  Preprocessor model;
  TrainCurve curve;
};

// Trains G to map perturbed inputs back to their clean counterparts while
// leaving clean inputs unchanged: MSE(G(adv), clean) + MSE(G(clean), clean).
PreprocessorTrainResult train_preprocessor(const Dataset& clean_data, const ImagePairs& pairs,
                                           const TrainConfig& cfg);

// Mean per-pixel squared reconstruction error over a dataset.
double reconstruction_mse(const Autoencoder& ae, const Dataset& data, int batch = 256);
double classification_accuracy(const Classifier& model, const Dataset& data, int batch = 256);

}  // namespace advkit
