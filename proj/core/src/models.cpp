#include "advkit/models.hpp"

#include <cmath>

#include "advkit/rng.hpp"

namespace advkit {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::brelu: return "brelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  throw Error("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "brelu") return Activation::brelu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw Error("unknown activation '" + name + "'");
}

namespace {

TensorF glorot_uniform(Shape shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorF t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

TensorF apply_activation(ContextF& ctx, Activation a, const TensorF& x) {
  switch (a) {
    case Activation::relu: return relu(ctx, x);
    case Activation::brelu: return brelu(ctx, x);
    case Activation::sigmoid: return sigmoid(ctx, x);
    case Activation::tanh: return tanh_op(ctx, x);
  }
  throw Error("unknown activation");
}

}  // namespace

LayerStack::LayerStack(Shape input_shape, std::vector<LayerSpec> layers, uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  Rng rng(seed);
  for (const LayerSpec& spec : layers_) {
    if (const auto* d = std::get_if<DenseLayer>(&spec)) {
      params_.push_back(glorot_uniform({d->in, d->out}, d->in, d->out, rng));
      params_.push_back(TensorF({d->out}));
    } else if (const auto* c = std::get_if<Conv2dLayer>(&spec)) {
      const int64_t k = c->kernel;
      params_.push_back(glorot_uniform({k, k, c->in_channels, c->out_channels},
                                       k * k * c->in_channels, k * k * c->out_channels, rng));
      params_.push_back(TensorF({c->out_channels}));
    }
  }
}

TensorF LayerStack::forward(ContextF& ctx, const TensorF& x) const {
  const auto& xs = x.shape();
  if (xs.size() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), xs.begin() + 1))
    throw Error("forward: input shape " + shape_str(xs) + " does not match {N," +
                shape_str(input_shape_) + "}");
  TensorF cur = x;
  std::size_t p = 0;
  for (const LayerSpec& spec : layers_) {
    if (std::holds_alternative<DenseLayer>(spec)) {
      cur = add_bias(ctx, matmul(ctx, cur, params_[p]), params_[p + 1]);
      p += 2;
    } else if (const auto* c = std::get_if<Conv2dLayer>(&spec)) {
      cur = conv2d(ctx, cur, params_[p], params_[p + 1], c->stride, c->pad);
      p += 2;
    } else if (const auto* a = std::get_if<ActLayer>(&spec)) {
      cur = apply_activation(ctx, a->act, cur);
    } else if (std::holds_alternative<FlattenLayer>(spec)) {
      cur = reshape(ctx, cur, {cur.shape()[0], cur.numel() / cur.shape()[0]});
    } else if (const auto* u = std::get_if<UnflattenLayer>(&spec)) {
      Shape s{cur.shape()[0]};
      s.insert(s.end(), u->dims.begin(), u->dims.end());
      cur = reshape(ctx, cur, std::move(s));
    }
  }
  return cur;
}

std::vector<std::string> LayerStack::param_names() const {
  std::vector<std::string> names;
  std::size_t li = 0;
  for (const LayerSpec& spec : layers_) {
    if (std::holds_alternative<DenseLayer>(spec) || std::holds_alternative<Conv2dLayer>(spec)) {
      names.push_back("layer" + std::to_string(li) + ".weight");
      names.push_back("layer" + std::to_string(li) + ".bias");
    }
    ++li;
  }
  return names;
}

int64_t LayerStack::param_count() const {
  int64_t n = 0;
  for (const TensorF& p : params_) n += p.numel();
  return n;
}

void LayerStack::set_requires_grad(bool on) {
  for (TensorF& p : params_) p.set_requires_grad(on);
}

void LayerStack::load_params(const std::vector<std::vector<float>>& blobs) {
  if (blobs.size() != params_.size())
    throw Error("load_params: got " + std::to_string(blobs.size()) + " blobs for " +
                std::to_string(params_.size()) + " parameters");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (static_cast<int64_t>(blobs[i].size()) != params_[i].numel())
      throw Error("load_params: parameter " + std::to_string(i) + " size mismatch");
    std::copy(blobs[i].begin(), blobs[i].end(), params_[i].values().begin());
  }
}

// ---- Classifier ----

Classifier::Classifier(Shape input_shape, std::vector<LayerSpec> layers, int64_t classes,
                       uint64_t seed)
    : stack_(std::move(input_shape), std::move(layers), seed), classes_(classes) {
  if (classes_ < 2) throw Error("classifier: needs at least 2 classes");
}

TensorF Classifier::logits(ContextF& ctx, const TensorF& x) const {
  TensorF z = stack_.forward(ctx, x);
  if (z.shape().size() != 2 || z.shape()[1] != classes_)
    throw Error("classifier: architecture produced " + shape_str(z.shape()) + ", expected {N," +
                std::to_string(classes_) + "}");
  return z;
}

TensorF Classifier::probs(ContextF& ctx, const TensorF& x) const {
  return softmax(ctx, logits(ctx, x));
}

int Classifier::classify(const TensorF& x) const {
  ContextF ctx = ContextF::inference();
  TensorF z = logits(ctx, x);
  if (z.shape()[0] != 1)
    throw Error("classify: expected a single instance, got batch of " +
                std::to_string(z.shape()[0]));
  return static_cast<int>(argmax_lowest(z.values()));
}

std::vector<int> Classifier::classify_batch(const TensorF& x) const {
  ContextF ctx = ContextF::inference();
  TensorF z = logits(ctx, x);
  const int64_t n = z.shape()[0], k = z.shape()[1];
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    std::span<const float> row(z.values().data() + i * k, static_cast<std::size_t>(k));
    out[static_cast<std::size_t>(i)] = static_cast<int>(argmax_lowest(row));
  }
  return out;
}

Classifier Classifier::make_conv(Activation act, int64_t classes, uint64_t seed) {
  std::vector<LayerSpec> layers{
      Conv2dLayer{1, 16, 3, 2, 1}, ActLayer{act},
      Conv2dLayer{16, 32, 3, 2, 1}, ActLayer{act},
      FlattenLayer{},
      DenseLayer{7 * 7 * 32, 128}, ActLayer{act},
      DenseLayer{128, classes},
  };
  return Classifier({28, 28, 1}, std::move(layers), classes, seed);
}

Classifier Classifier::make_linear(int64_t inputs, int64_t classes, uint64_t seed) {
  std::vector<LayerSpec> layers{DenseLayer{inputs, classes}};
  return Classifier({inputs}, std::move(layers), classes, seed);
}

// ---- Autoencoder ----

namespace {

std::vector<LayerSpec> dense_bottleneck_layers(const Shape& input_shape,
                                               const std::vector<int64_t>& hidden) {
  if (hidden.empty()) throw Error("autoencoder: needs at least one hidden width");
  const int64_t dim = shape_numel(input_shape);
  std::vector<LayerSpec> layers;
  layers.push_back(FlattenLayer{});
  int64_t prev = dim;
  for (int64_t h : hidden) {
    layers.push_back(DenseLayer{prev, h});
    layers.push_back(ActLayer{Activation::relu});
    prev = h;
  }
  for (std::size_t i = hidden.size() - 1; i-- > 0;) {
    layers.push_back(DenseLayer{prev, hidden[i]});
    layers.push_back(ActLayer{Activation::relu});
    prev = hidden[i];
  }
  layers.push_back(DenseLayer{prev, dim});
  layers.push_back(ActLayer{Activation::sigmoid});
  layers.push_back(UnflattenLayer{input_shape});
  return layers;
}

}  // namespace

Autoencoder::Autoencoder(Shape input_shape, std::vector<int64_t> hidden, uint64_t seed)
    : stack_(input_shape, dense_bottleneck_layers(input_shape, hidden), seed) {}

TensorF Autoencoder::reconstruct(ContextF& ctx, const TensorF& x) const {
  if (is_identity()) {
    const auto& xs = x.shape();
    const auto& in = stack_.input_shape();
    if (xs.size() != in.size() + 1 || !std::equal(in.begin(), in.end(), xs.begin() + 1))
      throw Error("autoencode: input shape " + shape_str(xs) + " does not match {N," +
                  shape_str(in) + "}");
    return x;
  }
  return stack_.forward(ctx, x);
}

Autoencoder Autoencoder::make_dense(const Shape& input_shape, uint64_t seed) {
  return Autoencoder(input_shape, {256, 64}, seed);
}

Autoencoder Autoencoder::identity(const Shape& input_shape) {
  Autoencoder ae;
  ae.stack_ = LayerStack(input_shape, {}, 0);
  return ae;
}

// ---- Preprocessor ----

Preprocessor::Preprocessor(Shape input_shape, std::vector<int64_t> hidden, uint64_t seed) {
  stack_ = LayerStack(input_shape, dense_bottleneck_layers(input_shape, hidden), seed);
}

TensorF Preprocessor::apply(ContextF& ctx, const TensorF& x) const {
  if (is_identity()) {
    const auto& xs = x.shape();
    const auto& in = stack_.input_shape();
    if (xs.size() != in.size() + 1 || !std::equal(in.begin(), in.end(), xs.begin() + 1))
      throw Error("preprocess: input shape " + shape_str(xs) + " does not match {N," +
                  shape_str(in) + "}");
    return x;
  }
  return stack_.forward(ctx, x);
}

Preprocessor Preprocessor::make_dense(const Shape& input_shape, uint64_t seed) {
  return Preprocessor(input_shape, {256, 64}, seed);
}

Preprocessor Preprocessor::identity(const Shape& input_shape) {
  Preprocessor p;
  p.stack_ = LayerStack(input_shape, {}, 0);
  return p;
}

// ---- loss ----

TensorF cross_entropy(ContextF& ctx, const TensorF& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2)
    throw Error("cross_entropy: logits must be {N,K}, got " + shape_str(logits.shape()));
  const int64_t n = logits.shape()[0], k = logits.shape()[1];
  if (n != static_cast<int64_t>(labels.size()))
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                std::to_string(n));
  TensorF onehot({n, k});
  auto ov = onehot.values();
  for (int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw Error("cross_entropy: label " + std::to_string(y) + " out of range");
    ov[i * k + y] = 1.0f;
  }
  TensorF logp = log_op(ctx, softmax(ctx, logits));
  return scale(ctx, sum(ctx, mul(ctx, logp, onehot)), -1.0 / static_cast<double>(n));
}

}  // namespace advkit
