#pragma once

// Per-location cross-attention of flow features over visual features and the
// audio-visual similarity map built on the enhanced features.

#include <cstddef>
#include <random>
#include <vector>

#include "flowloc/encoders.hpp"
#include "flowloc/tensor.hpp"

namespace flowloc {

struct AttentionParams {
  Tensor proj_k;    // [d, c], applied to f_v
  Tensor proj_q;    // [d, c], applied to f_f
  Tensor proj_v;    // [d, c], applied to f_v
  Tensor proj_out;  // [c, d]

  std::size_t width() const { return proj_k.dim(0); }
  std::size_t channels() const { return proj_k.dim(1); }
  void validate() const;

  // Projections uniform in [-1/sqrt(c), 1/sqrt(c)], proj_out at 0.1x that.
  static AttentionParams init(std::size_t channels, std::size_t d, std::mt19937_64& rng);
  std::vector<NamedTensor> parameters() const;
  void set_frozen(bool frozen);
};

// Raw attention weights beta [m, n, d, d]; each row over the last index sums to 1.
Tensor attention_weights(const Tensor& f_v, const Tensor& f_f, const AttentionParams& params);

// E_p [m, n, c] from f_v [m, n, c] and f_f [m, n, c].
Tensor cross_attention(const Tensor& f_v, const Tensor& f_f, const AttentionParams& params);

// f_v + E_p.
Tensor enhance(const Tensor& f_v, const Tensor& e_p);

// S [m, n]: cosine of each L2-normalized location of f_enh with A_avg.
Tensor similarity_map(const Tensor& f_enh, const Tensor& a_avg);

}  // namespace flowloc
