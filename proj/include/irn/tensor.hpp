#ifndef IRN_TENSOR_HPP
#define IRN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irn/common.hpp"

namespace irn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

enum class Dtype { f32, f64 };

// One record of the tape: the stored forward value plus the backward rule and
// parent links needed to reverse it. Gradients live here too, keyed by node
// identity. Nodes are shared by the tensors that view them; a graph is the set
// of records reachable from a root through parent links.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on demand; persistent for leaves
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Whether each parent participated in differentiation when this record was
  // written. Captured at build time: toggling requires_grad on a leaf after a
  // graph is built does not change that graph's backward behavior.
  std::vector<uint8_t> parent_rg;
  // Distributes this node's grad into its parents' grad buffers.
  std::function<void(Node<T>&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Dense N-d tensor with reverse-mode autodiff. Value semantics: copying a
// TensorT copies the handle, not the storage. Canonical image layout is
// NCHW, row-major, contiguous.
template <class T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static TensorT zeros(Shape s, bool requires_grad = false);
  static TensorT full(Shape s, T v, bool requires_grad = false);
  static TensorT from_vector(Shape s, std::vector<T> v, bool requires_grad = false);
  static TensorT scalar(T v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t numel() const { return n_->numel(); }
  int64_t dim(size_t i) const { return n_->shape.at(i); }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  static constexpr Dtype dtype() { return sizeof(T) == 4 ? Dtype::f32 : Dtype::f64; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  // spans view the node's storage: not available on temporaries
  std::span<const T> data() const& { return n_->value; }
  std::span<const T> data() const&& = delete;
  std::span<T> mut_data() & { return n_->value; }
  std::span<T> mut_data() && = delete;
  T item() const {
    IRN_REQUIRE(numel() == 1, "item(): tensor has ", numel(), " elements");
    return n_->value[0];
  }

  // Gradient of a leaf after backward(); empty span if never populated.
  std::span<const T> grad() const& { return n_->grad; }
  std::span<const T> grad() const&& = delete;
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // A new leaf sharing nothing with this graph (value copied, no history).
  TensorT detach() const;

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Scoped disable of graph recording (inference / numeric probes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Extension point for modules that define their own differentiable ops
// (Haar transform, straight-through quantization). `backward` receives the
// output node with populated grad and must accumulate into parents'
// ensure_grad() buffers. Parent links are dropped automatically when no input
// requires grad or recording is disabled.
template <class T>
TensorT<T> make_op(Shape out_shape, std::vector<T> out_value,
                   std::vector<TensorT<T>> parents,
                   std::function<void(Node<T>&)> backward);

enum class UnaryOp { exp, sigmoid, log_sigmoid, leaky_relu, neg };
enum class BinaryOp { add, sub, mul };
enum class ReduceOp { mean, sum, mean_abs, mean_square };

template <class T>
TensorT<T> elementwise_unary(const TensorT<T>& x, UnaryOp op, T leaky_slope = T(0.2));
template <class T>
TensorT<T> elementwise_binary(const TensorT<T>& a, const TensorT<T>& b, BinaryOp op);
template <class T>
TensorT<T> reduce(const TensorT<T>& x, ReduceOp op);

// Convenience wrappers.
template <class T> TensorT<T> exp(const TensorT<T>& x) { return elementwise_unary(x, UnaryOp::exp); }
template <class T> TensorT<T> sigmoid(const TensorT<T>& x) { return elementwise_unary(x, UnaryOp::sigmoid); }
template <class T> TensorT<T> log_sigmoid(const TensorT<T>& x) { return elementwise_unary(x, UnaryOp::log_sigmoid); }
template <class T> TensorT<T> leaky_relu(const TensorT<T>& x, T slope = T(0.2)) {
  return elementwise_unary(x, UnaryOp::leaky_relu, slope);
}
template <class T> TensorT<T> neg(const TensorT<T>& x) { return elementwise_unary(x, UnaryOp::neg); }
template <class T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) { return elementwise_binary(a, b, BinaryOp::add); }
template <class T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) { return elementwise_binary(a, b, BinaryOp::sub); }
template <class T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) { return elementwise_binary(a, b, BinaryOp::mul); }
template <class T> TensorT<T> add(const TensorT<T>& a, T s) { return add(a, TensorT<T>::scalar(s)); }
template <class T> TensorT<T> sub(const TensorT<T>& a, T s) { return sub(a, TensorT<T>::scalar(s)); }
template <class T> TensorT<T> mul(const TensorT<T>& a, T s) { return mul(a, TensorT<T>::scalar(s)); }
template <class T> TensorT<T> reduce_mean(const TensorT<T>& x) { return reduce(x, ReduceOp::mean); }
template <class T> TensorT<T> reduce_sum(const TensorT<T>& x) { return reduce(x, ReduceOp::sum); }
template <class T> TensorT<T> reduce_mean_abs(const TensorT<T>& x) { return reduce(x, ReduceOp::mean_abs); }
template <class T> TensorT<T> reduce_mean_square(const TensorT<T>& x) { return reduce(x, ReduceOp::mean_square); }

template <class T> TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <class T> TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <class T> TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }

// Cross-correlation, NCHW input, OIkk weight, O bias.
// Output size floor((H + 2p - k) / stride) + 1 per spatial dim.
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride = 1, int padding = 0);

// Fully connected: input [N, I], weight [O, I], bias [O] -> [N, O].
template <class T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias);

// Split along the channel axis at `at` (0 < at < C); exact inverse of concat.
template <class T>
std::pair<TensorT<T>, TensorT<T>> channel_split(const TensorT<T>& x, int64_t at);
template <class T>
TensorT<T> channel_concat(const TensorT<T>& a, const TensorT<T>& b);

// Same data, new shape (numel preserved).
template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape s);

// Reverse-mode sweep from a scalar loss. Visits each reachable record once in
// reverse topological order; leaf grads accumulate (call zero_grad between
// steps), intermediate grad buffers are released as soon as they are consumed.
template <class T>
void backward(const TensorT<T>& loss);

struct GradCheckOptions {
  double epsilon = 1e-5;
  int max_coords_per_param = 25;  // random subsample per parameter
  uint64_t seed = 0;
};

// Central finite-difference verification of the analytic gradient of
// loss_fn w.r.t. every listed parameter. loss_fn must be deterministic.
// Returns max over sampled coordinates of |a - n| / max(|a|, |n|, 1e-8).
template <class T>
double grad_check(const std::function<TensorT<T>()>& loss_fn,
                  const std::vector<TensorT<T>*>& params, const GradCheckOptions& opts = {});

}  // namespace irn

#endif
