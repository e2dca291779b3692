#include "advkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace advkit {

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw Error("unknown optimizer '" + name + "'");
}

namespace {

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(static_cast<float>(lr)) {}
  void step(std::span<TensorF> params) override {
    for (TensorF& p : params) {
      auto v = p.values();
      auto g = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
    }
  }

 private:
  float lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(std::span<TensorF> params) override {
    if (m_.empty()) {
      for (const TensorF& p : params) {
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
      }
    }
    if (m_.size() != params.size())
      throw Error("adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    const float alpha = static_cast<float>(lr_ * std::sqrt(bc2) / bc1);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto vals = params[pi].values();
      auto grad = params[pi].grad();
      float* m = m_[pi].data();
      float* v = v_[pi].data();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const float g = grad[i];
        m[i] = kBeta1f * m[i] + (1.0f - kBeta1f) * g;
        v[i] = kBeta2f * v[i] + (1.0f - kBeta2f) * g * g;
        vals[i] -= alpha * m[i] / (std::sqrt(v[i]) + kEpsilonF);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999;
  static constexpr float kBeta1f = 0.9f, kBeta2f = 0.999f, kEpsilonF = 1e-8f;
  double lr_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> Optimizer::make(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::sgd) return std::make_unique<Sgd>(lr);
  return std::make_unique<Adam>(lr);
}

void zero_grads(std::span<TensorF> params) {
  for (TensorF& p : params) p.zero_grad();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("train config: epochs must be >= 1");
  if (batch_size < 1) throw Error("train config: batch size must be >= 1");
  if (lr <= 0) throw Error("train config: learning rate must be positive");
  if (augment_sigma < 0) throw Error("train config: sigma must be >= 0");
}

void write_curve_csv(const TrainCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_curve_csv: cannot open '" + path + "'");
  out << "epoch,train_loss,val_metric\n";
  char line[128];
  for (const EpochStats& e : curve.epochs) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_metric);
    out << line;
  }
}

TensorF gaussian_noise(const Shape& shape, double sigma, Rng& rng) {
  TensorF t(shape);
  if (sigma > 0)
    for (auto& v : t.values()) v = static_cast<float>(rng.normal(sigma));
  return t;
}

TensorF gaussian_augment(const TensorF& x, double sigma, Rng& rng) {
  if (sigma < 0) throw Error("gaussian_augment: sigma must be >= 0");
  if (sigma == 0) return x;
  TensorF out = x.clone();
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float noisy = v[i] + static_cast<float>(rng.normal(sigma));
    v[i] = std::clamp(noisy, 0.0f, 1.0f);
  }
  return out;
}

namespace {

std::vector<int64_t> shuffled_indices(int64_t n, Rng& rng) {
  std::vector<int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

TensorF mse_loss(ContextF& ctx, const TensorF& prediction, const TensorF& target) {
  return scale(ctx, sum_squares(ctx, sub(ctx, prediction, target)),
               1.0 / static_cast<double>(prediction.numel()));
}

}  // namespace

double classification_accuracy(const Classifier& model, const Dataset& data, int batch) {
  int64_t correct = 0;
  std::vector<int64_t> idx;
  for (int64_t from = 0; from < data.count; from += batch) {
    const int64_t n = std::min<int64_t>(batch, data.count - from);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), from);
    const auto classes = model.classify_batch(data.gather(idx));
    for (int64_t i = 0; i < n; ++i)
      if (classes[static_cast<std::size_t>(i)] == data.labels[static_cast<std::size_t>(from + i)])
        ++correct;
  }
  return data.count ? static_cast<double>(correct) / static_cast<double>(data.count) : 0.0;
}

double reconstruction_mse(const Autoencoder& ae, const Dataset& data, int batch) {
  double total = 0.0;
  std::vector<int64_t> idx;
  for (int64_t from = 0; from < data.count; from += batch) {
    const int64_t n = std::min<int64_t>(batch, data.count - from);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), from);
    TensorF x = data.gather(idx);
    ContextF ctx = ContextF::inference();
    TensorF r = ae.reconstruct(ctx, x);
    const auto xv = x.values();
    const auto rv = r.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double d = static_cast<double>(rv[i]) - xv[i];
      total += d * d;
    }
  }
  return data.count ? total / (static_cast<double>(data.count) * data.pixels_per_image()) : 0.0;
}

ClassifierTrainResult train_classifier(const Dataset& train, const Dataset& val,
                                       const TrainConfig& cfg, Activation activation) {
  cfg.validate();
  if (train.count < 1) throw Error("train_classifier: empty training set");

  ClassifierTrainResult result;
  result.model = Classifier::make_conv(activation, 10, mix_seed(cfg.seed, 0x1217));
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5u));
  Rng noise_rng(mix_seed(cfg.seed, 0x6u));
  auto opt = Optimizer::make(cfg.optimizer, cfg.lr);
  auto& params = result.model.stack().params();
  result.model.unfreeze();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.count, shuffle_rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t from = 0; from < train.count; from += cfg.batch_size) {
      const int64_t n = std::min<int64_t>(cfg.batch_size, train.count - from);
      std::span<const int64_t> batch_idx(order.data() + from, static_cast<std::size_t>(n));
      TensorF xb = train.gather(batch_idx);
      if (cfg.augment_sigma > 0) xb = gaussian_augment(xb, cfg.augment_sigma, noise_rng);
      std::vector<int> yb(static_cast<std::size_t>(n));
      for (int64_t i = 0; i < n; ++i)
        yb[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(batch_idx[i])];

      try {
        ContextF ctx;
        TensorF loss = cross_entropy(ctx, result.model.logits(ctx, xb), yb);
        loss_sum += loss.item();
        ctx.backward(loss);
      } catch (const Error& e) {
        throw Error("train_classifier: diverged at epoch " + std::to_string(epoch) + ": " +
                    e.what());
      }
      opt->step(params);
      zero_grads(params);
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.val_metric = classification_accuracy(result.model, val);
    result.curve.epochs.push_back(stats);
  }

  result.model.freeze();
  result.train_accuracy = classification_accuracy(result.model, train);
  result.val_accuracy = result.curve.epochs.back().val_metric;
  return result;
}

AutoencoderTrainResult train_autoencoder(const Dataset& train, const Dataset& val,
                                         const AETrainConfig& cfg) {
  cfg.validate();
  if (cfg.noise_sigma < 0) throw Error("train_autoencoder: noise sigma must be >= 0");
  if (train.count < 1) throw Error("train_autoencoder: empty training set");

  AutoencoderTrainResult result;
  result.model = Autoencoder::make_dense(train.image_shape, mix_seed(cfg.seed, 0xAE));
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5u));
  Rng noise_rng(mix_seed(cfg.seed, 0x6u));
  auto opt = Optimizer::make(cfg.optimizer, cfg.lr);
  auto& params = result.model.stack().params();
  result.model.unfreeze();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.count, shuffle_rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t from = 0; from < train.count; from += cfg.batch_size) {
      const int64_t n = std::min<int64_t>(cfg.batch_size, train.count - from);
      std::span<const int64_t> batch_idx(order.data() + from, static_cast<std::size_t>(n));
      TensorF clean = train.gather(batch_idx);
      TensorF input = cfg.noise_sigma > 0 ? gaussian_augment(clean, cfg.noise_sigma, noise_rng)
                                          : clean;
      try {
        ContextF ctx;
        TensorF loss = mse_loss(ctx, result.model.reconstruct(ctx, input), clean);
        loss_sum += loss.item();
        ctx.backward(loss);
      } catch (const Error& e) {
        throw Error("train_autoencoder: diverged at epoch " + std::to_string(epoch) + ": " +
                    e.what());
      }
      opt->step(params);
      zero_grads(params);
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.val_metric = reconstruction_mse(result.model, val);
    result.curve.epochs.push_back(stats);
  }
  result.model.freeze();
  return result;
}

// ---- ImagePairs ----

namespace {

TensorF pairs_batch(const std::vector<float>& store, const Shape& image_shape, int64_t count,
                    std::span<const int64_t> indices) {
  const int64_t px = shape_numel(image_shape);
  Shape s{static_cast<int64_t>(indices.size())};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  std::vector<float> v;
  v.reserve(indices.size() * static_cast<std::size_t>(px));
  for (int64_t i : indices) {
    if (i < 0 || i >= count) throw Error("image pairs: index out of range");
    v.insert(v.end(), store.begin() + i * px, store.begin() + (i + 1) * px);
  }
  return TensorF(std::move(s), std::move(v));
}

}  // namespace

TensorF ImagePairs::adv_batch(std::span<const int64_t> indices) const {
  return pairs_batch(adv, image_shape, count, indices);
}

TensorF ImagePairs::clean_batch(std::span<const int64_t> indices) const {
  return pairs_batch(clean, image_shape, count, indices);
}

ImagePairs ImagePairs::slice(int64_t from, int64_t n) const {
  if (from < 0 || n < 0 || from + n > count) throw Error("image pairs: slice out of range");
  const int64_t px = shape_numel(image_shape);
  ImagePairs out;
  out.count = n;
  out.image_shape = image_shape;
  out.adv.assign(adv.begin() + from * px, adv.begin() + (from + n) * px);
  out.clean.assign(clean.begin() + from * px, clean.begin() + (from + n) * px);
  return out;
}

PreprocessorTrainResult train_preprocessor(const Dataset& clean_data, const ImagePairs& pairs,
                                           const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.count < 1) throw Error("train_preprocessor: no training pairs");
  if (clean_data.count < 1) throw Error("train_preprocessor: empty clean set");
  if (pairs.image_shape != clean_data.image_shape)
    throw Error("train_preprocessor: pair shape " + shape_str(pairs.image_shape) +
                " vs clean shape " + shape_str(clean_data.image_shape));

  PreprocessorTrainResult result;
  result.model = Preprocessor::make_dense(pairs.image_shape, mix_seed(cfg.seed, 0x93));
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5u));
  Rng clean_rng(mix_seed(cfg.seed, 0x7u));
  auto opt = Optimizer::make(cfg.optimizer, cfg.lr);
  auto& params = result.model.stack().params();
  result.model.unfreeze();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(pairs.count, shuffle_rng);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t from = 0; from < pairs.count; from += cfg.batch_size) {
      const int64_t n = std::min<int64_t>(cfg.batch_size, pairs.count - from);
      std::span<const int64_t> batch_idx(order.data() + from, static_cast<std::size_t>(n));
      TensorF adv = pairs.adv_batch(batch_idx);
      TensorF target = pairs.clean_batch(batch_idx);
      // Clean batch sampled independently so G also learns to fix nothing.
      std::vector<int64_t> clean_idx(static_cast<std::size_t>(n));
      for (auto& ci : clean_idx)
        ci = static_cast<int64_t>(clean_rng.below(static_cast<uint64_t>(clean_data.count)));
      TensorF clean = clean_data.gather(clean_idx);

      try {
        ContextF ctx;
        TensorF adv_loss = mse_loss(ctx, result.model.apply(ctx, adv), target);
        TensorF clean_loss = mse_loss(ctx, result.model.apply(ctx, clean), clean);
        TensorF loss = add(ctx, adv_loss, clean_loss);
        loss_sum += loss.item();
        ctx.backward(loss);
      } catch (const Error& e) {
        throw Error("train_preprocessor: diverged at epoch " + std::to_string(epoch) + ": " +
                    e.what());
      }
      opt->step(params);
      zero_grads(params);
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    // Validation: how well G restores the training pairs it has not seen is
    // the caller's concern; here we track clean reconstruction error.
    double clean_mse = 0.0;
    {
      const int64_t probe = std::min<int64_t>(clean_data.count, 512);
      std::vector<int64_t> idx(static_cast<std::size_t>(probe));
      std::iota(idx.begin(), idx.end(), 0);
      TensorF x = clean_data.gather(idx);
      ContextF ctx = ContextF::inference();
      TensorF g = result.model.apply(ctx, x);
      const auto xv = x.values();
      const auto gv = g.values();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const double dd = static_cast<double>(gv[i]) - xv[i];
        clean_mse += dd * dd;
      }
      clean_mse /= static_cast<double>(xv.size());
    }
    stats.val_metric = clean_mse;
    result.curve.epochs.push_back(stats);
  }
  result.model.freeze();
  return result;
}

}  // namespace advkit
