#include "flowloc/attention.hpp"

#include <cmath>

#include "flowloc/error.hpp"

namespace flowloc {

namespace {

void require_map(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [m,n,c] map, got " + to_string(t.shape()));
}

Tensor uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::vector<double> w(rows * cols);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  return Tensor::from({rows, cols}, std::move(w), true);
}

}  // namespace

void AttentionParams::validate() const {
  const std::size_t d = proj_k.rank() == 2 ? proj_k.dim(0) : 0;
  const std::size_t c = proj_k.rank() == 2 ? proj_k.dim(1) : 0;
  if (d == 0 || c == 0) throw ShapeError("attention: projections must be [d,c] with d,c >= 1");
  const Shape in{d, c}, out{c, d};
  if (proj_q.shape() != in || proj_v.shape() != in || proj_out.shape() != out) {
    throw ShapeError("attention: inconsistent projection shapes");
  }
}

AttentionParams AttentionParams::init(std::size_t channels, std::size_t d, std::mt19937_64& rng) {
  if (channels == 0 || d == 0) throw UsageError("attention: channels and width must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  AttentionParams p;
  p.proj_k = uniform_matrix(d, channels, bound, rng);
  p.proj_q = uniform_matrix(d, channels, bound, rng);
  p.proj_v = uniform_matrix(d, channels, bound, rng);
  p.proj_out = uniform_matrix(channels, d, 0.1 * bound, rng);
  return p;
}

std::vector<NamedTensor> AttentionParams::parameters() const {
  return {{"attention.k", proj_k}, {"attention.q", proj_q}, {"attention.v", proj_v}, {"attention.out", proj_out}};
}

void AttentionParams::set_frozen(bool frozen) {
  for (auto* t : {&proj_k, &proj_q, &proj_v, &proj_out}) t->set_requires_grad(!frozen);
}

Tensor attention_weights(const Tensor& f_v, const Tensor& f_f, const AttentionParams& params) {
  require_map(f_v, "cross_attention");
  require_map(f_f, "cross_attention");
  if (f_v.shape() != f_f.shape()) {
    throw ShapeError("cross_attention: visual " + to_string(f_v.shape()) + " vs flow " + to_string(f_f.shape()));
  }
  params.validate();
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.width()));
  Tensor k = project(f_v, params.proj_k);
  Tensor q = project(f_f, params.proj_q);
  return softmax_lastdim(mul(outer_lastdim(k, q), scale));
}

Tensor cross_attention(const Tensor& f_v, const Tensor& f_f, const AttentionParams& params) {
  Tensor beta = attention_weights(f_v, f_f, params);
  Tensor v = project(f_v, params.proj_v);
  return project(vecmat_lastdim(v, beta), params.proj_out);
}

Tensor enhance(const Tensor& f_v, const Tensor& e_p) {
  if (f_v.shape() != e_p.shape()) {
    throw ShapeError("enhance: " + to_string(f_v.shape()) + " vs " + to_string(e_p.shape()));
  }
  return add(f_v, e_p);
}

Tensor similarity_map(const Tensor& f_enh, const Tensor& a_avg) {
  require_map(f_enh, "similarity_map");
  if (a_avg.rank() != 1 || a_avg.dim(0) != f_enh.dim(2)) {
    throw ShapeError("similarity_map: audio vector " + to_string(a_avg.shape()) + " vs map " +
                     to_string(f_enh.shape()));
  }
  return matvec_lastdim(l2_normalize(f_enh), a_avg);
}

}  // namespace flowloc
