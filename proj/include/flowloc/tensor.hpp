#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// Every op returns a fresh Tensor. When any input requires a gradient the
// result records its inputs and an adjoint closure; backward() replays those
// closures in reverse creation order. Creation ids increase monotonically, so
// sorting by id is a valid topological order of any graph built from here.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowloc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  // A rank-0 zero. Mostly useful as a placeholder before assignment.
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Writable storage; only leaves may be mutated (optimizer updates).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  // Gradient accumulated by backward(); all zeros when none was propagated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  // Copy of the values as a new leaf with no history.
  Tensor detach() const;

  std::uint64_t id() const;
  const std::string& op() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Propagates d(loss)/d(x) into every requires_grad leaf reachable from loss.
// Leaf gradients accumulate across calls; interior gradients are reset first,
// so calling twice on the same graph doubles the leaf gradients.
void backward(const Tensor& loss);

// Number of interior nodes backward() would visit from `loss`.
std::size_t graph_size(const Tensor& loss);

// -- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
// log(exp(a) + exp(b)), elementwise, without overflow.
Tensor logaddexp(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// -- reductions and reshaping ---------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Same-shape tensors stacked along a new leading axis.
Tensor stack(std::span<const Tensor> items);
// Slice a[i] along the leading axis.
Tensor select(const Tensor& a, std::size_t i);
// Flattened inner product of two same-shape tensors.
Tensor dot(const Tensor& a, const Tensor& b);

// -- imaging --------------------------------------------------------------

// zeros: taps outside the input read 0. replicate: they read the nearest
// edge pixel, so a constant input gives a constant output.
enum class PadMode { zeros, replicate };

// Cross-correlation of input[Cin,H,W] with kernel[Cout,Cin,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              PadMode mode = PadMode::zeros);
// Non-overlapping max pooling (stride == window) over input[C,H,W].
Tensor max_pool2d(const Tensor& input, std::size_t window);
// [C,H,W] -> [C]
Tensor global_avg_pool(const Tensor& input);
// [C,H,W] -> [H,W,C]
Tensor chw_to_hwc(const Tensor& input);
// [C,H,W] -> [channels,H,W]; output channel i copies input channel i % C.
Tensor tile_channels(const Tensor& input, std::size_t channels);
// x[C,H,W] + bias[C] per channel.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// -- per-location linear algebra (last axis is the feature axis) ----------

// x[...,c] times weight[d,c]^T -> [...,d]
Tensor project(const Tensor& x, const Tensor& weight);
// x[...,c] . v[c] -> [...]
Tensor matvec_lastdim(const Tensor& x, const Tensor& v);
// a[...,d], b[...,e] -> [...,d,e] with out[..,i,j] = a[..,i] * b[..,j]
Tensor outer_lastdim(const Tensor& a, const Tensor& b);
// v[...,d], m[...,d,e] -> [...,e] with out[..,j] = sum_i v[..,i] * m[..,i,j]
Tensor vecmat_lastdim(const Tensor& v, const Tensor& m);
Tensor softmax_lastdim(const Tensor& x);

// Vectors along the last axis with norm <= kNormGuard pass through unchanged.
inline constexpr double kNormGuard = 1e-12;
Tensor l2_normalize(const Tensor& x);
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// -- gradient checking ----------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;
using MultiScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// max_i |analytic_i - central_i| / max(1, |central_i|)
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);
// Same, taken jointly over every tensor in `inputs`.
double grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double h = 1e-5);

}  // namespace flowloc
