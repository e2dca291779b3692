#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "advkit/tensor.hpp"

namespace advkit {

class Rng;

enum class Activation { relu, brelu, sigmoid, tanh };
const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// ---- architecture descriptors ----

struct DenseLayer {
  int64_t in = 0;
  int64_t out = 0;
};
struct Conv2dLayer {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
};
struct ActLayer {
  Activation act = Activation::relu;
};
struct FlattenLayer {};
// Restores a per-instance spatial shape after a dense stack.
struct UnflattenLayer {
  Shape dims;
};

using LayerSpec = std::variant<DenseLayer, Conv2dLayer, ActLayer, FlattenLayer, UnflattenLayer>;

// Ordered layers plus their parameters. All parameter tensors are float;
// initialization is Glorot-uniform with zero biases, fully seeded.
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(Shape input_shape, std::vector<LayerSpec> layers, uint64_t seed);

  // x is {N, ...input_shape}; returns the stack output.
  TensorF forward(ContextF& ctx, const TensorF& x) const;

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<TensorF>& params() { return params_; }
  const std::vector<TensorF>& params() const { return params_; }
  std::vector<std::string> param_names() const;
  int64_t param_count() const;

  void set_requires_grad(bool on);

  // Replaces parameter values; shapes must match (used by deserialization).
  void load_params(const std::vector<std::vector<float>>& blobs);

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<TensorF> params_;  // conv/dense contribute weight+bias in order
};

// ---- classifier: logits Z, probabilities F = softmax(Z), class C ----

class Classifier {
 public:
  Classifier() = default;
  Classifier(Shape input_shape, std::vector<LayerSpec> layers, int64_t classes, uint64_t seed);

  // Z(x): {N,K}. x must be {N, ...input_shape} with pixel values in [0,1].
  TensorF logits(ContextF& ctx, const TensorF& x) const;
  // F(x) = softmax(Z(x)).
  TensorF probs(ContextF& ctx, const TensorF& x) const;
  // C(x) for a single instance {1, ...}; ties break to the lowest class.
  int classify(const TensorF& x) const;
  std::vector<int> classify_batch(const TensorF& x) const;

  int64_t classes() const { return classes_; }
  const LayerStack& stack() const { return stack_; }
  LayerStack& stack() { return stack_; }
  // Marks parameters frozen (no gradient buffers); frozen models are
  // safe to share read-only across attack workers.
  void freeze() { stack_.set_requires_grad(false); }
  void unfreeze() { stack_.set_requires_grad(true); }

  // conv 3x3x16 /2 -> act -> conv 3x3x32 /2 -> act -> dense 128 -> act ->
  // dense K, for 28x28x1 inputs.
  static Classifier make_conv(Activation act, int64_t classes, uint64_t seed);
  // Single dense layer; used for closed-form attack checks.
  static Classifier make_linear(int64_t inputs, int64_t classes, uint64_t seed);

 private:
  LayerStack stack_;
  int64_t classes_ = 0;
};

// ---- shape-preserving reconstruction networks ----

// Dense autoencoder with sigmoid output; AE(x) has the shape of x and values
// in (0,1).
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(Shape input_shape, std::vector<int64_t> hidden, uint64_t seed);

  TensorF reconstruct(ContextF& ctx, const TensorF& x) const;
  bool is_identity() const { return stack_.layers().empty(); }

  const LayerStack& stack() const { return stack_; }
  LayerStack& stack() { return stack_; }
  void freeze() { stack_.set_requires_grad(false); }
  void unfreeze() { stack_.set_requires_grad(true); }

  // 784 -> 256 -> 64 -> 256 -> 784 for 28x28x1.
  static Autoencoder make_dense(const Shape& input_shape, uint64_t seed);
  // Pass-through reconstruction (empty stack); used for ablations and
  // reduction checks.
  static Autoencoder identity(const Shape& input_shape);

 private:
  friend class Preprocessor;
  explicit Autoencoder(LayerStack stack) : stack_(std::move(stack)) {}
  LayerStack stack_;
};

// Input-shape-preserving cleanup network applied before classification.
// Structurally the same dense family as Autoencoder; identity() passes the
// input through untouched (an empty stack).
class Preprocessor {
 public:
  Preprocessor() = default;
  Preprocessor(Shape input_shape, std::vector<int64_t> hidden, uint64_t seed);

  TensorF apply(ContextF& ctx, const TensorF& x) const;
  bool is_identity() const { return stack_.layers().empty(); }

  const LayerStack& stack() const { return stack_; }
  LayerStack& stack() { return stack_; }
  void freeze() { stack_.set_requires_grad(false); }
  void unfreeze() { stack_.set_requires_grad(true); }

  static Preprocessor make_dense(const Shape& input_shape, uint64_t seed);
  static Preprocessor identity(const Shape& input_shape);

 private:
  LayerStack stack_;
};

// Mean cross-entropy of softmax(logits) against integer labels.
TensorF cross_entropy(ContextF& ctx, const TensorF& logits, std::span<const int> labels);

}  // namespace advkit
