#include "advkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace advkit {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t extent : shape) {
    if (extent <= 0) throw Error("shape extents must be positive, got " + shape_str(shape));
    n *= extent;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  if (shape.empty()) return "()";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

// ---- Tensor ----

template <typename T>
Tensor<T>::Tensor(Shape shape) {
  const int64_t n = shape_numel(shape);
  node_ = std::make_shared<detail::TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->values.assign(static_cast<std::size_t>(n), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw Error("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  node_ = std::make_shared<detail::TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.node_->values.begin(), t.node_->values.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor({1}, {value});
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw Error("tensor: undefined");
  return node_->shape;
}

template <typename T>
int64_t Tensor<T>::numel() const {
  if (!node_) throw Error("tensor: undefined");
  return static_cast<int64_t>(node_->values.size());
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!node_) throw Error("tensor: undefined");
  return node_->values;
}

template <typename T>
std::span<T> Tensor<T>::values() {
  if (!node_) throw Error("tensor: undefined");
  return node_->values;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw Error("tensor: item() on non-scalar of shape " + shape_str(shape()));
  return node_->values[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw Error("tensor: undefined");
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->values.size())
    node_->grad.assign(node_->values.size(), T(0));
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_ || node_->grad.empty()) throw Error("tensor: no gradient buffer (requires_grad unset)");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!node_ || node_->grad.empty()) throw Error("tensor: no gradient buffer (requires_grad unset)");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  if (!node_) return Tensor();
  Tensor out(node_->shape, node_->values);
  return out;
}

// ---- Context ----

template <typename T>
void Context<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw Error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (tape_.empty())
    throw Error("backward: tape is empty (already consumed or nothing recorded)");
  if (loss.requires_grad()) loss.node()->grad[0] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
}

// ---- op helpers ----

namespace {

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  bool ok = true;
  for (const T x : v) ok &= (std::isfinite(x) != 0);
  if (!ok) throw Error(std::string(op) + ": produced non-finite values");
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
bool track(Context<T>& ctx, std::initializer_list<const Tensor<T>*> operands) {
  if (!ctx.recording()) return false;
  for (const Tensor<T>* t : operands)
    if (t->requires_grad()) return true;
  return false;
}

// Unary elementwise op with value map f(x) and gradient factor df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary_elementwise(Context<T>& ctx, const Tensor<T>& x, const char* name, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  check_finite(out.node()->values, name);
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node();
    auto on = out.shared_node();
    ctx.record([xn, on, df] {
      const auto& g = on->grad;
      auto& xg = xn->grad;
      const auto& xv = xn->values;
      const auto& yv = on->values;
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * df(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
int64_t argmax_lowest(std::span<const T> values) {
  if (values.empty()) throw Error("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int64_t>(best);
}

template int64_t argmax_lowest<float>(std::span<const float>);
template int64_t argmax_lowest<double>(std::span<const double>);

// ---- binary elementwise ----

template <typename T>
Tensor<T> add(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(out.node()->values, "add");
  if (track(ctx, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    ctx.record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  check_finite(out.node()->values, "sub");
  if (track(ctx, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    ctx.record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(out.node()->values, "mul");
  if (track(ctx, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    ctx.record([an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->values[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->values[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.shape().size() != 2 || bias.shape().size() != 1 || x.shape()[1] != bias.shape()[0])
    throw Error("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  const int64_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor<T> out(x.shape());
  const T* xv = x.values().data();
  const T* bv = bias.values().data();
  T* ov = out.values().data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) ov[i * cols + j] = xv[i * cols + j] + bv[j];
  check_finite(out.node()->values, "add_bias");
  if (track(ctx, {&x, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), bn = bias.shared_node(), on = out.shared_node();
    ctx.record([xn, bn, on, rows, cols] {
      const auto& g = on->grad;
      if (xn->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
      if (bn->requires_grad)
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < cols; ++j) bn->grad[j] += g[i * cols + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Context<T>& ctx, const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary_elementwise(
      ctx, x, "scale", [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> add_scalar(Context<T>& ctx, const Tensor<T>& x, double shift) {
  const T s = static_cast<T>(shift);
  return unary_elementwise(
      ctx, x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// ---- matmul ----

template <typename T>
Tensor<T> matmul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw Error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out({m, n});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* cv = out.values().data();
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = av + i * k;
    T* crow = cv + i * n;
    for (int64_t l = 0; l < k; ++l) {
      const T alv = arow[l];
      const T* brow = bv + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += alv * brow[j];
    }
  }
  check_finite(out.node()->values, "matmul");
  if (track(ctx, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.shared_node(), bn = b.shared_node(), on = out.shared_node();
    ctx.record([an, bn, on, m, k, n] {
      const T* g = on->grad.data();
      if (an->requires_grad) {
        // dA = dC * B^T
        T* da = an->grad.data();
        const T* bv = bn->values.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t l = 0; l < k; ++l) {
            const T* grow = g + i * n;
            const T* brow = bv + l * n;
            T acc = 0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + l] += acc;
          }
      }
      if (bn->requires_grad) {
        // dB = A^T * dC
        T* db = bn->grad.data();
        const T* av = an->values.data();
        for (int64_t i = 0; i < m; ++i) {
          const T* grow = g + i * n;
          for (int64_t l = 0; l < k; ++l) {
            const T alv = av[i * k + l];
            T* drow = db + l * n;
            for (int64_t j = 0; j < n; ++j) drow[j] += alv * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// ---- conv2d ----

template <typename T>
Tensor<T> conv2d(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw Error("conv2d: expects x {N,H,W,C} and w {KH,KW,Cin,Cout}, got " +
                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride != 1 && stride != 2) throw Error("conv2d: stride must be 1 or 2");
  if (pad < 0) throw Error("conv2d: pad must be >= 0");
  const int64_t n = x.shape()[0], h = x.shape()[1], wd = x.shape()[2], ci = x.shape()[3];
  const int64_t kh = w.shape()[0], kw = w.shape()[1], wci = w.shape()[2], co = w.shape()[3];
  if (ci != wci)
    throw Error("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (bias.shape() != Shape{co})
    throw Error("conv2d: bias shape " + shape_str(bias.shape()) + " vs " + std::to_string(co) + " filters");
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1)
    throw Error("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));

  Tensor<T> out({n, oh, ow, co});
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = bias.values().data();
  T* ov = out.values().data();
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xo = 0; xo < ow; ++xo) {
        T* optr = ov + ((in * oh + y) * ow + xo) * co;
        for (int64_t c = 0; c < co; ++c) optr[c] = bv[c];
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t ix = xo * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            const T* xptr = xv + ((in * h + iy) * wd + ix) * ci;
            const T* wbase = wv + (ky * kw + kx) * ci * co;
            for (int64_t c = 0; c < ci; ++c) {
              const T xval = xptr[c];
              const T* wptr = wbase + c * co;
              for (int64_t f = 0; f < co; ++f) optr[f] += xval * wptr[f];
            }
          }
        }
      }
    }
  }
  check_finite(out.node()->values, "conv2d");

  if (track(ctx, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), wn = w.shared_node(), bn = bias.shared_node(), on = out.shared_node();
    ctx.record([xn, wn, bn, on, n, h, wd, ci, kh, kw, co, oh, ow, stride, pad] {
      const T* g = on->grad.data();
      const T* xv = xn->values.data();
      const T* wv = wn->values.data();
      T* dx = xn->requires_grad ? xn->grad.data() : nullptr;
      T* dw = wn->requires_grad ? wn->grad.data() : nullptr;
      T* db = bn->requires_grad ? bn->grad.data() : nullptr;
      for (int64_t in = 0; in < n; ++in) {
        for (int64_t y = 0; y < oh; ++y) {
          for (int64_t xo = 0; xo < ow; ++xo) {
            const T* gptr = g + ((in * oh + y) * ow + xo) * co;
            if (db)
              for (int64_t f = 0; f < co; ++f) db[f] += gptr[f];
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = y * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = xo * stride + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                const int64_t xoff = ((in * h + iy) * wd + ix) * ci;
                const T* wbase = wv + (ky * kw + kx) * ci * co;
                if (dx) {
                  for (int64_t c = 0; c < ci; ++c) {
                    const T* wptr = wbase + c * co;
                    T acc = 0;
                    for (int64_t f = 0; f < co; ++f) acc += gptr[f] * wptr[f];
                    dx[xoff + c] += acc;
                  }
                }
                if (dw) {
                  T* dwbase = dw + (ky * kw + kx) * ci * co;
                  for (int64_t c = 0; c < ci; ++c) {
                    const T xval = xv[xoff + c];
                    T* dwptr = dwbase + c * co;
                    for (int64_t f = 0; f < co; ++f) dwptr[f] += xval * gptr[f];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- unary elementwise ----

template <typename T>
Tensor<T> relu(Context<T>& ctx, const Tensor<T>& x) {
  return unary_elementwise(
      ctx, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> brelu(Context<T>& ctx, const Tensor<T>& x) {
  return unary_elementwise(
      ctx, x, "brelu",
      [](T v) { return v < T(0) ? T(0) : (v > T(1) ? T(1) : v); },
      [](T v, T) { return (v > T(0) && v < T(1)) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Context<T>& ctx, const Tensor<T>& x) {
  return unary_elementwise(
      ctx, x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(Context<T>& ctx, const Tensor<T>& x) {
  return unary_elementwise(
      ctx, x, "tanh", [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp_op(Context<T>& ctx, const Tensor<T>& x) {
  return unary_elementwise(
      ctx, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(Context<T>& ctx, const Tensor<T>& x) {
  constexpr T kFloor = static_cast<T>(1e-30);
  return unary_elementwise(
      ctx, x, "log",
      [](T v) { return std::log(v < kFloor ? kFloor : v); },
      [](T v, T) { return v > kFloor ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> clamp(Context<T>& ctx, const Tensor<T>& x, double lo, double hi) {
  if (lo > hi) throw Error("clamp: lo > hi");
  const double l = lo, h = hi;
  return unary_elementwise(
      ctx, x, "clamp",
      [l, h](T v) {
        const double d = static_cast<double>(v);
        return static_cast<T>(d < l ? l : (d > h ? h : d));
      },
      [l, h](T v, T) {
        const double d = static_cast<double>(v);
        return (d > l && d < h) ? T(1) : T(0);
      });
}

// ---- softmax ----

template <typename T>
Tensor<T> softmax(Context<T>& ctx, const Tensor<T>& x, double temperature) {
  if (temperature <= 0) throw Error("softmax: temperature must be positive");
  const auto& shp = x.shape();
  if (shp.size() != 1 && shp.size() != 2)
    throw Error("softmax: expects {K} or {N,K}, got " + shape_str(shp));
  const int64_t rows = shp.size() == 2 ? shp[0] : 1;
  const int64_t cols = shp.size() == 2 ? shp[1] : shp[0];
  Tensor<T> out(shp);
  const T* xv = x.values().data();
  T* ov = out.values().data();
  const double invt = 1.0 / temperature;
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = xv + i * cols;
    T* orow = ov + i * cols;
    T mx = row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      const double e = std::exp((static_cast<double>(row[j]) - mx) * invt);
      orow[j] = static_cast<T>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int64_t j = 0; j < cols; ++j) orow[j] = static_cast<T>(orow[j] * inv);
  }
  check_finite(out.node()->values, "softmax");
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), on = out.shared_node();
    ctx.record([xn, on, rows, cols, invt] {
      const T* y = on->values.data();
      const T* g = on->grad.data();
      T* dx = xn->grad.data();
      for (int64_t i = 0; i < rows; ++i) {
        const T* yrow = y + i * cols;
        const T* grow = g + i * cols;
        double dot = 0.0;
        for (int64_t j = 0; j < cols; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
        for (int64_t j = 0; j < cols; ++j)
          dx[i * cols + j] += static_cast<T>(yrow[j] * (grow[j] - dot) * invt);
      }
    });
  }
  return out;
}

// ---- reshape ----

template <typename T>
Tensor<T> reshape(Context<T>& ctx, const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  Tensor<T> out(std::move(new_shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), on = out.shared_node();
    ctx.record([xn, on] {
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    });
  }
  return out;
}

// ---- reductions ----

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> full_reduction(Context<T>& ctx, const Tensor<T>& x, const char* name, Fwd fwd, Bwd bwd) {
  double acc = 0.0;
  for (const T v : x.values()) acc += fwd(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  check_finite(out.node()->values, name);
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), on = out.shared_node();
    ctx.record([xn, on, bwd] {
      const T g = on->grad[0];
      auto& xg = xn->grad;
      const auto& xv = xn->values;
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += bwd(g, xv[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> sum(Context<T>& ctx, const Tensor<T>& x) {
  return full_reduction(
      ctx, x, "sum", [](T v) { return static_cast<double>(v); },
      [](T g, T) { return g; });
}

template <typename T>
Tensor<T> mean(Context<T>& ctx, const Tensor<T>& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  return full_reduction(
      ctx, x, "mean", [inv](T v) { return static_cast<double>(v) * inv; },
      [inv](T g, T) { return static_cast<T>(g * inv); });
}

template <typename T>
Tensor<T> sum_squares(Context<T>& ctx, const Tensor<T>& x) {
  return full_reduction(
      ctx, x, "sum_squares",
      [](T v) { return static_cast<double>(v) * static_cast<double>(v); },
      [](T g, T v) { return T(2) * g * v; });
}

template <typename T>
Tensor<T> max_over_axis(Context<T>& ctx, const Tensor<T>& x, int axis) {
  const auto& shp = x.shape();
  const bool rank1 = shp.size() == 1;
  if (!rank1 && (shp.size() != 2 || axis != 1))
    throw Error("max_over_axis: supports {K} or {N,K} with axis=1, got " + shape_str(shp) +
                " axis " + std::to_string(axis));
  const int64_t rows = rank1 ? 1 : shp[0];
  const int64_t cols = rank1 ? shp[0] : shp[1];
  Tensor<T> out({rows});
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<std::size_t>(rows));
  const T* xv = x.values().data();
  T* ov = out.values().data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = xv + i * cols;
    int64_t best = 0;
    for (int64_t j = 1; j < cols; ++j)
      if (row[j] > row[best]) best = j;
    (*arg)[static_cast<std::size_t>(i)] = best;
    ov[i] = row[best];
  }
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), on = out.shared_node();
    ctx.record([xn, on, arg, cols] {
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        xn->grad[static_cast<std::size_t>(static_cast<int64_t>(i) * cols + (*arg)[i])] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_over_axis(Context<T>& ctx, const Tensor<T>& x, int axis) {
  const auto& shp = x.shape();
  if (shp.size() != 2 || axis != 1)
    throw Error("sum_over_axis: supports {N,K} with axis=1, got " + shape_str(shp) + " axis " +
                std::to_string(axis));
  const int64_t rows = shp[0], cols = shp[1];
  Tensor<T> out({rows});
  const T* xv = x.values().data();
  T* ov = out.values().data();
  for (int64_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    const T* row = xv + i * cols;
    for (int64_t j = 0; j < cols; ++j) acc += row[j];
    ov[i] = static_cast<T>(acc);
  }
  check_finite(out.node()->values, "sum_over_axis");
  if (track(ctx, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.shared_node(), on = out.shared_node();
    ctx.record([xn, on, rows, cols] {
      const auto& g = on->grad;
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) xn->grad[i * cols + j] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat0(Context<T>& ctx, std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw Error("concat0: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw Error("concat0: inputs must have rank >= 1");
  Shape out_shape = first;
  out_shape[0] = 0;
  for (const Tensor<T>& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
      throw Error("concat0: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    out_shape[0] += s[0];
  }
  Tensor<T> out(out_shape);
  T* ov = out.values().data();
  std::size_t offset = 0;
  bool any_grad = false;
  for (const Tensor<T>& p : parts) {
    const auto pv = p.values();
    std::copy(pv.begin(), pv.end(), ov + offset);
    offset += pv.size();
    any_grad |= p.requires_grad();
  }
  if (ctx.recording() && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor<T>& p : parts) nodes.push_back(p.shared_node());
    auto on = out.shared_node();
    ctx.record([nodes = std::move(nodes), on] {
      const auto& g = on->grad;
      std::size_t at = 0;
      for (const auto& node : nodes) {
        const std::size_t n = node->values.size();
        if (node->requires_grad)
          for (std::size_t i = 0; i < n; ++i) node->grad[i] += g[at + i];
        at += n;
      }
    });
  }
  return out;
}

// ---- explicit instantiations ----

template class Tensor<float>;
template class Tensor<double>;
template class Context<float>;
template class Context<double>;

#define ADVKIT_INSTANTIATE_OPS(T)                                                       \
  template Tensor<T> add<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> sub<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mul<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add_bias<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> scale<T>(Context<T>&, const Tensor<T>&, double);                   \
  template Tensor<T> add_scalar<T>(Context<T>&, const Tensor<T>&, double);              \
  template Tensor<T> matmul<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> conv2d<T>(Context<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               const Tensor<T>&, int, int);                             \
  template Tensor<T> relu<T>(Context<T>&, const Tensor<T>&);                            \
  template Tensor<T> brelu<T>(Context<T>&, const Tensor<T>&);                           \
  template Tensor<T> sigmoid<T>(Context<T>&, const Tensor<T>&);                         \
  template Tensor<T> tanh_op<T>(Context<T>&, const Tensor<T>&);                         \
  template Tensor<T> exp_op<T>(Context<T>&, const Tensor<T>&);                          \
  template Tensor<T> log_op<T>(Context<T>&, const Tensor<T>&);                          \
  template Tensor<T> softmax<T>(Context<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> clamp<T>(Context<T>&, const Tensor<T>&, double, double);           \
  template Tensor<T> reshape<T>(Context<T>&, const Tensor<T>&, Shape);                  \
  template Tensor<T> sum<T>(Context<T>&, const Tensor<T>&);                             \
  template Tensor<T> mean<T>(Context<T>&, const Tensor<T>&);                            \
  template Tensor<T> sum_squares<T>(Context<T>&, const Tensor<T>&);                     \
  template Tensor<T> max_over_axis<T>(Context<T>&, const Tensor<T>&, int);              \
  template Tensor<T> sum_over_axis<T>(Context<T>&, const Tensor<T>&, int);              \
  template Tensor<T> concat0<T>(Context<T>&, std::span<const Tensor<T>>);

ADVKIT_INSTANTIATE_OPS(float)
ADVKIT_INSTANTIATE_OPS(double)

#undef ADVKIT_INSTANTIATE_OPS

}  // namespace advkit
