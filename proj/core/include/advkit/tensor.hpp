#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advkit/error.hpp"

namespace advkit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized and zeroed iff requires_grad
  bool requires_grad = false;
};

}  // namespace detail

// Dense n-d array handle with value storage and an optional gradient buffer.
// Copying a Tensor copies the handle (shared storage); clone() deep-copies.
// Every completed operation leaves only finite values behind; an op that
// would produce NaN/Inf throws instead.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<T> values);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);  // shape {1}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  std::span<const T> values() const;
  std::span<T> values();
  T item() const;  // requires numel()==1

  bool requires_grad() const;
  // Turning the flag on allocates a zeroed gradient buffer, so tensors that
  // never participate in a backward pass read back zero grads.
  void set_requires_grad(bool on);
  std::span<const T> grad() const;
  std::span<T> grad();
  void zero_grad();

  Tensor clone() const;

  detail::TensorNode<T>* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode<T>> shared_node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Reverse-mode tape. Ops record a backward step when the context is recording
// and an operand carries gradients. backward() replays the tape in reverse
// (each recorded op visited exactly once), accumulates into .grad additively,
// then clears the tape — a second backward without re-recording throws.
// One Context and its tensors form one isolated optimization context;
// separate contexts may run on separate threads.
template <typename T>
class Context {
 public:
  Context() = default;
  static Context inference() {
    Context c;
    c.recording_ = false;
    return c;
  }

  bool recording() const { return recording_; }
  std::size_t op_count() const { return tape_.size(); }
  void clear() { tape_.clear(); }

  void backward(const Tensor<T>& loss);

  void record(std::function<void()> step) { tape_.push_back(std::move(step)); }

 private:
  bool recording_ = true;
  std::vector<std::function<void()>> tape_;
};

// ---------------------------------------------------------------------------
// Primitives. Shape rules are checked; a mismatch throws an Error that names
// the primitive and both shapes. Reductions accumulate in double regardless
// of T. Subgradient conventions at kinks: relu'(0)=0, brelu'(0)=brelu'(1)=0,
// clamp boundary gradient 0, log below its floor 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);

// {N,D} + {D}, bias broadcast over rows.
template <typename T>
Tensor<T> add_bias(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(Context<T>& ctx, const Tensor<T>& x, double factor);
template <typename T>
Tensor<T> add_scalar(Context<T>& ctx, const Tensor<T>& x, double shift);

// {M,K} x {K,N} -> {M,N}
template <typename T>
Tensor<T> matmul(Context<T>& ctx, const Tensor<T>& a, const Tensor<T>& b);

// x {N,H,W,C}, w {KH,KW,Cin,Cout}, bias {Cout}; zero padding `pad`, stride 1
// or 2. Output spatial extent floor((H + 2*pad - KH)/stride) + 1.
template <typename T>
Tensor<T> conv2d(Context<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias, int stride, int pad);

template <typename T>
Tensor<T> relu(Context<T>& ctx, const Tensor<T>& x);
// min(max(x,0),1)
template <typename T>
Tensor<T> brelu(Context<T>& ctx, const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(Context<T>& ctx, const Tensor<T>& x);
template <typename T>
Tensor<T> tanh_op(Context<T>& ctx, const Tensor<T>& x);
template <typename T>
Tensor<T> exp_op(Context<T>& ctx, const Tensor<T>& x);
// log(max(x, 1e-30)); the floor keeps log of near-zero probabilities finite.
template <typename T>
Tensor<T> log_op(Context<T>& ctx, const Tensor<T>& x);

// Row-wise softmax of {K} or {N,K} with a temperature divisor on the inputs:
// softmax(x/temperature). Numerically stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(Context<T>& ctx, const Tensor<T>& x,
                  double temperature = 1.0);

// Elementwise min(max(x,lo),hi); lo=-inf / hi=+inf disable a side.
template <typename T>
Tensor<T> clamp(Context<T>& ctx, const Tensor<T>& x, double lo, double hi);

template <typename T>
Tensor<T> reshape(Context<T>& ctx, const Tensor<T>& x, Shape new_shape);

// Full reductions to shape {1}.
template <typename T>
Tensor<T> sum(Context<T>& ctx, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Context<T>& ctx, const Tensor<T>& x);
template <typename T>
Tensor<T> sum_squares(Context<T>& ctx, const Tensor<T>& x);

// {N,K} along axis 1 -> {N} (or {K} -> {1}). Ties route the gradient to the
// first maximal element.
template <typename T>
Tensor<T> max_over_axis(Context<T>& ctx, const Tensor<T>& x, int axis);

// {N,K} along axis 1 -> {N}; rows accumulate in double.
template <typename T>
Tensor<T> sum_over_axis(Context<T>& ctx, const Tensor<T>& x, int axis);

// Concatenates along axis 0; trailing extents must match.
template <typename T>
Tensor<T> concat0(Context<T>& ctx, std::span<const Tensor<T>> parts);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using ContextF = Context<float>;
using ContextD = Context<double>;

// Index of the largest value; ties resolve to the lowest index.
template <typename T>
int64_t argmax_lowest(std::span<const T> values);
template <typename T>
int64_t argmax_lowest(std::span<T> values) {
  return argmax_lowest(std::span<const T>(values));
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Context<float>;
extern template class Context<double>;

}  // namespace advkit
