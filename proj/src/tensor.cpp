#include "flowloc/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "flowloc/error.hpp"

namespace flowloc {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> adjoint;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_next_id{1};

NodePtr new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_finite(const std::vector<double>& v, const std::string& op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(op + ": non-finite output");
  }
}

// Builds the result node of an op. The adjoint is kept only when some input
// participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> data, std::string op,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> adjoint) {
  check_finite(data, op);
  bool rg = std::any_of(inputs.begin(), inputs.end(),
                        [](const NodePtr& p) { return p->requires_grad; });
  auto n = new_node(std::move(shape), std::move(data), rg);
  n->op = std::move(op);
  if (rg) {
    n->inputs = std::move(inputs);
    n->adjoint = std::move(adjoint);
  }
  return Tensor(std::move(n));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(a.shape()));
  }
}

// Elementwise unary op: forward f(x), derivative df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
  const auto& x = a.node()->data;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(y), name, {an}, [an, df](Node& out) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      an->grad[i] += out.grad[i] * df(an->data[i], out.data[i]);
    }
  });
}

// Elementwise binary op with partials da(x, y, z) and db(x, y, z), z = f(x, y).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = f(x[i], y[i]);
  auto an = a.node();
  auto bn = b.node();
  return make_result(a.shape(), std::move(z), name, {an, bn}, [an, bn, da, db](Node& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        an->grad[i] += out.grad[i] * da(an->data[i], bn->data[i], out.data[i]);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        bn->grad[i] += out.grad[i] * db(an->data[i], bn->data[i], out.data[i]);
      }
    }
  });
}

// Splits a tensor into (rows, last) for per-location ops.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1");
  std::size_t last = x.shape().back();
  if (last == 0) throw ShapeError(std::string(op) + ": empty last axis");
  return {x.size() / last, last};
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(new_node({}, {0.0}, false)) {}
Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_finite(values, "tensor");
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("tensor: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw Error("tensor: only leaves may be mutated");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("tensor: item() on " + to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !node_->adjoint; }

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data, false)); }

std::uint64_t Tensor::id() const { return node_->id; }
const std::string& Tensor::op() const { return node_->op; }

// ---------------------------------------------------------------------------

namespace {

// Interior nodes reachable from root, in decreasing id (reverse topological).
std::vector<Node*> collect(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root->adjoint) return order;
  stack.emplace_back(root.get(), 0);
  state[root.get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (!child->adjoint || !child->requires_grad) continue;
      auto it = state.find(child);
      if (it == state.end()) {
        state[child] = 1;
        stack.emplace_back(child, 0);
      } else if (it->second == 1) {
        throw Error("backward: graph cycle");
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
  const auto& root = loss.node();
  if (!root->requires_grad) throw Error("backward: loss does not depend on any requires_grad tensor");
  auto order = collect(root);
  for (Node* n : order) n->grad.assign(n->data.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order) n->adjoint(*n);
}

std::size_t graph_size(const Tensor& loss) { return collect(loss.node()).size(); }

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor add(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double s) {
  return unary(
      a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary(
      a, "clamp_min", [lo](double x) { return x > lo ? x : lo; },
      [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor logaddexp(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "logaddexp",
      [](double x, double y) {
        double m = std::max(x, y);
        return m + std::log1p(std::exp(-std::abs(x - y)));
      },
      [](double x, double, double z) { return std::exp(x - z); },
      [](double, double y, double z) { return std::exp(y - z); });
}

// -- reductions and reshaping -------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  auto an = a.node();
  return make_result({}, {s}, "sum", {an}, [an](Node& out) {
    an->ensure_grad();
    for (auto& g : an->grad) g += out.grad[0];
  });
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  auto an = a.node();
  return make_result(std::move(shape), an->data, "reshape", {an}, [an](Node& out) {
    an->ensure_grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
  });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner = items[0].shape();
  std::vector<double> data;
  data.reserve(items.size() * items[0].size());
  std::vector<NodePtr> inputs;
  for (const auto& t : items) {
    if (t.shape() != inner) throw ShapeError("stack: mismatched shapes");
    data.insert(data.end(), t.data().begin(), t.data().end());
    inputs.push_back(t.node());
  }
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::size_t block = numel(inner);
  auto ins = inputs;
  return make_result(std::move(shape), std::move(data), "stack", std::move(inputs),
                     [ins, block](Node& out) {
                       for (std::size_t k = 0; k < ins.size(); ++k) {
                         if (!ins[k]->requires_grad) continue;
                         ins[k]->ensure_grad();
                         for (std::size_t i = 0; i < block; ++i) {
                           ins[k]->grad[i] += out.grad[k * block + i];
                         }
                       }
                     });
}

Tensor select(const Tensor& a, std::size_t i) {
  if (a.rank() == 0 || i >= a.dim(0)) throw ShapeError("select: index out of range");
  Shape inner(a.shape().begin() + 1, a.shape().end());
  std::size_t block = numel(inner);
  auto an = a.node();
  std::vector<double> data(an->data.begin() + i * block, an->data.begin() + (i + 1) * block);
  return make_result(std::move(inner), std::move(data), "select", {an}, [an, i, block](Node& out) {
    an->ensure_grad();
    for (std::size_t j = 0; j < block; ++j) an->grad[i * block + j] += out.grad[j];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  auto an = a.node();
  auto bn = b.node();
  return make_result({}, {s}, "dot", {an, bn}, [an, bn](Node& out) {
    double g = out.grad[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->data.size(); ++i) bn->grad[i] += g * an->data[i];
    }
  });
}

// -- imaging ----------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  PadMode mode;

  // Source index of padded coordinate v along an axis of length n, or -1
  // for a zero tap.
  long source(long v, std::size_t n) const {
    const long last = static_cast<long>(n) - 1;
    if (v >= 0 && v <= last) return v;
    if (mode == PadMode::zeros) return -1;
    return std::clamp(v, 0L, last);
  }
};

// cols[(c*kh + i)*kw + j, oy*wo + ox] = input[c, oy*s + i - pad, ox*s + j - pad]
void im2col(const ConvGeometry& g, const double* in, double* cols) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          long iy = g.source(static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad), g.h);
          double* dst = row + oy * g.wo;
          if (iy < 0) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            long ix = g.source(static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad), g.w);
            dst[ox] = ix < 0 ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* in) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          long iy = g.source(static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad), g.h);
          if (iy < 0) continue;
          double* dst = in + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            long ix = g.source(static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad), g.w);
            if (ix >= 0) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding, PadMode mode) {
  require_rank(input, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  ConvGeometry g{};
  g.cin = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cout = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.mode = mode;
  if (kernel.dim(1) != g.cin) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, got " + std::to_string(g.cin));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw ShapeError("conv2d: input smaller than kernel");
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  const std::size_t ckk = g.cin * g.kh * g.kw;
  const std::size_t hw = g.ho * g.wo;
  auto cols = std::make_shared<std::vector<double>>(ckk * hw);
  im2col(g, input.data().data(), cols->data());
  std::vector<double> out(g.cout * hw);
  {
    ConstMatMap k(kernel.data().data(), g.cout, ckk);
    ConstMatMap c(cols->data(), ckk, hw);
    MatMap o(out.data(), g.cout, hw);
    o.noalias() = k * c;
  }
  auto in = input.node();
  auto kn = kernel.node();
  if (!in->requires_grad && !kn->requires_grad) cols.reset();
  return make_result({g.cout, g.ho, g.wo}, std::move(out), "conv2d", {in, kn},
                     [in, kn, cols, g, ckk, hw](Node& o) {
                       ConstMatMap gy(o.grad.data(), g.cout, hw);
                       if (kn->requires_grad) {
                         kn->ensure_grad();
                         MatMap gk(kn->grad.data(), g.cout, ckk);
                         ConstMatMap c(cols->data(), ckk, hw);
                         gk.noalias() += gy * c.transpose();
                       }
                       if (in->requires_grad) {
                         in->ensure_grad();
                         std::vector<double> gcols(ckk * hw);
                         MatMap gc(gcols.data(), ckk, hw);
                         ConstMatMap k(kn->data.data(), g.cout, ckk);
                         gc.noalias() = k.transpose() * gy;
                         col2im(g, gcols.data(), in->grad.data());
                       }
                     });
}

Tensor max_pool2d(const Tensor& input, std::size_t window) {
  require_rank(input, 3, "max_pool2d");
  if (window == 0) throw ShapeError("max_pool2d: window must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t ho = h / window, wo = w / window;
  if (ho == 0 || wo == 0) throw ShapeError("max_pool2d: input smaller than window");
  std::vector<double> out(c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + oy * window) * w + ox * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            std::size_t idx = (ch * h + oy * window + i) * w + ox * window + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  auto in = input.node();
  return make_result({c, ho, wo}, std::move(out), "max_pool2d", {in},
                     [in, argmax = std::move(argmax)](Node& o) {
                       in->ensure_grad();
                       for (std::size_t i = 0; i < argmax.size(); ++i) in->grad[argmax[i]] += o.grad[i];
                     });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 3, "global_avg_pool");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  std::vector<double> out(c);
  const auto x = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  auto in = input.node();
  return make_result({c}, std::move(out), "global_avg_pool", {in}, [in, c, hw](Node& o) {
    in->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double g = o.grad[ch] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) in->grad[ch * hw + i] += g;
    }
  });
}

Tensor chw_to_hwc(const Tensor& input) {
  require_rank(input, 3, "chw_to_hwc");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  std::vector<double> out(input.size());
  const auto x = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) out[p * c + ch] = x[ch * h * w + p];
  }
  auto in = input.node();
  return make_result({h, w, c}, std::move(out), "chw_to_hwc", {in}, [in, c, h, w](Node& o) {
    in->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < h * w; ++p) in->grad[ch * h * w + p] += o.grad[p * c + ch];
    }
  });
}

Tensor tile_channels(const Tensor& input, std::size_t channels) {
  require_rank(input, 3, "tile_channels");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  if (channels == 0) throw ShapeError("tile_channels: zero channels");
  std::vector<double> out(channels * hw);
  const auto x = input.data();
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::copy_n(x.begin() + (ch % c) * hw, hw, out.begin() + ch * hw);
  }
  auto in = input.node();
  return make_result({channels, input.dim(1), input.dim(2)}, std::move(out), "tile_channels", {in},
                     [in, c, hw, channels](Node& o) {
                       in->ensure_grad();
                       for (std::size_t ch = 0; ch < channels; ++ch) {
                         for (std::size_t i = 0; i < hw; ++i) in->grad[(ch % c) * hw + i] += o.grad[ch * hw + i];
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  require_rank(bias, 1, "add_channel_bias");
  if (bias.dim(0) != x.dim(0)) {
    throw ShapeError("add_channel_bias: " + to_string(x.shape()) + " vs " + to_string(bias.shape()));
  }
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] += b[ch];
  }
  auto xn = x.node();
  auto bn = bias.node();
  return make_result(x.shape(), std::move(out), "add_channel_bias", {xn, bn}, [xn, bn, c, hw](Node& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < c * hw; ++i) xn->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += o.grad[ch * hw + i];
        bn->grad[ch] += acc;
      }
    }
  });
}

// -- per-location linear algebra --------------------------------------------

Tensor project(const Tensor& x, const Tensor& weight) {
  require_rank(weight, 2, "project");
  auto [rows, c] = rows_cols(x, "project");
  if (weight.dim(1) != c) {
    throw ShapeError("project: weight " + to_string(weight.shape()) + " vs input " + to_string(x.shape()));
  }
  const std::size_t d = weight.dim(0);
  std::vector<double> out(rows * d);
  {
    ConstMatMap xm(x.data().data(), rows, c);
    ConstMatMap wm(weight.data().data(), d, c);
    MatMap om(out.data(), rows, d);
    om.noalias() = xm * wm.transpose();
  }
  Shape shape = x.shape();
  shape.back() = d;
  auto xn = x.node();
  auto wn = weight.node();
  return make_result(std::move(shape), std::move(out), "project", {xn, wn},
                     [xn, wn, rows, c, d](Node& o) {
                       ConstMatMap g(o.grad.data(), rows, d);
                       if (xn->requires_grad) {
                         xn->ensure_grad();
                         MatMap gx(xn->grad.data(), rows, c);
                         ConstMatMap wm(wn->data.data(), d, c);
                         gx.noalias() += g * wm;
                       }
                       if (wn->requires_grad) {
                         wn->ensure_grad();
                         MatMap gw(wn->grad.data(), d, c);
                         ConstMatMap xm(xn->data.data(), rows, c);
                         gw.noalias() += g.transpose() * xm;
                       }
                     });
}

Tensor matvec_lastdim(const Tensor& x, const Tensor& v) {
  require_rank(v, 1, "matvec_lastdim");
  auto [rows, c] = rows_cols(x, "matvec_lastdim");
  if (v.dim(0) != c) throw ShapeError("matvec_lastdim: vector length mismatch");
  std::vector<double> out(rows);
  const auto xd = x.data();
  const auto vd = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += xd[r * c + k] * vd[k];
    out[r] = s;
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  auto xn = x.node();
  auto vn = v.node();
  return make_result(std::move(shape), std::move(out), "matvec_lastdim", {xn, vn},
                     [xn, vn, rows, c](Node& o) {
                       if (xn->requires_grad) {
                         xn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t k = 0; k < c; ++k) xn->grad[r * c + k] += o.grad[r] * vn->data[k];
                         }
                       }
                       if (vn->requires_grad) {
                         vn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t k = 0; k < c; ++k) vn->grad[k] += o.grad[r] * xn->data[r * c + k];
                         }
                       }
                     });
}

Tensor outer_lastdim(const Tensor& a, const Tensor& b) {
  auto [rows, d] = rows_cols(a, "outer_lastdim");
  auto [rows_b, e] = rows_cols(b, "outer_lastdim");
  if (rows != rows_b || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("outer_lastdim: leading shapes differ " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  std::vector<double> out(rows * d * e);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < e; ++j) out[(r * d + i) * e + j] = ad[r * d + i] * bd[r * e + j];
    }
  }
  Shape shape = a.shape();
  shape.push_back(e);
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(shape), std::move(out), "outer_lastdim", {an, bn},
                     [an, bn, rows, d, e](Node& o) {
                       if (an->requires_grad) an->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t i = 0; i < d; ++i) {
                           for (std::size_t j = 0; j < e; ++j) {
                             double g = o.grad[(r * d + i) * e + j];
                             if (an->requires_grad) an->grad[r * d + i] += g * bn->data[r * e + j];
                             if (bn->requires_grad) bn->grad[r * e + j] += g * an->data[r * d + i];
                           }
                         }
                       }
                     });
}

Tensor vecmat_lastdim(const Tensor& v, const Tensor& m) {
  auto [rows, d] = rows_cols(v, "vecmat_lastdim");
  if (m.rank() != v.rank() + 1 || m.shape()[m.rank() - 2] != d ||
      !std::equal(v.shape().begin(), v.shape().end() - 1, m.shape().begin())) {
    throw ShapeError("vecmat_lastdim: " + to_string(v.shape()) + " vs " + to_string(m.shape()));
  }
  const std::size_t e = m.shape().back();
  std::vector<double> out(rows * e, 0.0);
  const auto vd = v.data();
  const auto md = m.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      double vi = vd[r * d + i];
      const double* row = md.data() + (r * d + i) * e;
      for (std::size_t j = 0; j < e; ++j) out[r * e + j] += vi * row[j];
    }
  }
  Shape shape = v.shape();
  shape.back() = e;
  auto vn = v.node();
  auto mn = m.node();
  return make_result(std::move(shape), std::move(out), "vecmat_lastdim", {vn, mn},
                     [vn, mn, rows, d, e](Node& o) {
                       if (vn->requires_grad) vn->ensure_grad();
                       if (mn->requires_grad) mn->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t i = 0; i < d; ++i) {
                           double acc = 0.0;
                           double vi = vn->data[r * d + i];
                           for (std::size_t j = 0; j < e; ++j) {
                             double g = o.grad[r * e + j];
                             acc += g * mn->data[(r * d + i) * e + j];
                             if (mn->requires_grad) mn->grad[(r * d + i) * e + j] += vi * g;
                           }
                           if (vn->requires_grad) vn->grad[r * d + i] += acc;
                         }
                       }
                     });
}

Tensor softmax_lastdim(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "softmax_lastdim");
  const auto xd = x.data();
  for (double v : xd) {
    if (!std::isfinite(v)) throw NumericError("softmax_lastdim: non-finite input");
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double* y = out.data() + r * d;
    double mx = *std::max_element(in, in + d);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] = std::exp(in[i] - mx);
      s += y[i];
    }
    for (std::size_t i = 0; i < d; ++i) y[i] /= s;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), "softmax_lastdim", {xn}, [xn, rows, d](Node& o) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * d;
      const double* g = o.grad.data() + r * d;
      double gy = 0.0;
      for (std::size_t i = 0; i < d; ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) xn->grad[r * d + i] += y[i] * (g[i] - gy);
    }
  });
}

Tensor l2_normalize(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "l2_normalize");
  const auto xd = x.data();
  std::vector<double> out(x.size());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += xd[r * d + i] * xd[r * d + i];
    double n = std::sqrt(s);
    norms[r] = n;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = n > kNormGuard ? xd[r * d + i] / n : xd[r * d + i];
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), "l2_normalize", {xn},
                     [xn, rows, d, norms = std::move(norms)](Node& o) {
                       xn->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = o.data.data() + r * d;
                         const double* g = o.grad.data() + r * d;
                         if (norms[r] <= kNormGuard) {
                           for (std::size_t i = 0; i < d; ++i) xn->grad[r * d + i] += g[i];
                           continue;
                         }
                         double gy = 0.0;
                         for (std::size_t i = 0; i < d; ++i) gy += g[i] * y[i];
                         for (std::size_t i = 0; i < d; ++i) xn->grad[r * d + i] += (g[i] - y[i] * gy) / norms[r];
                       }
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  require_rank(a, 1, "cosine_similarity");
  return dot(l2_normalize(a), l2_normalize(b));
}

// -- gradient checking -------------------------------------------------------

double grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, double h) {
  if (!(h > 0.0)) throw UsageError("grad_check: step must be positive");
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto copy = t.detach();
    copy.set_requires_grad(true);
    leaves.push_back(copy);
  }
  backward(f(leaves));

  double worst = 0.0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::vector<double> analytic(leaves[k].grad().begin(), leaves[k].grad().end());
    for (std::size_t i = 0; i < leaves[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Tensor> probe;
        probe.reserve(leaves.size());
        for (std::size_t j = 0; j < leaves.size(); ++j) {
          auto p = leaves[j].detach();
          if (j == k) p.mutable_data()[i] += delta;
          probe.push_back(p);
        }
        return f(probe).item();
      };
      double central = (eval(h) - eval(-h)) / (2.0 * h);
      double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  std::vector<Tensor> one{x};
  return grad_check([&f](std::span<const Tensor> xs) { return f(xs[0]); }, one, h);
}

}  // namespace flowloc
