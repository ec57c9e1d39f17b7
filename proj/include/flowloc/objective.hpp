#pragma once

// Tri-map pseudo masks, positive/negative responses and the contrastive loss.

#include <cstddef>
#include <span>
#include <vector>

#include "flowloc/tensor.hpp"

namespace flowloc {

struct TriMapConfig {
  double eps_p = 0.65;
  double eps_n = 0.4;
  double tau = 0.03;
  void validate() const;
};

enum class LossReduction { sum, mean };

// Floor applied to soft mask cardinalities.
inline constexpr double kMaskGuard = 1e-12;

// sigmoid((S - eps) / tau), elementwise.
Tensor pseudo_mask(const Tensor& s, double eps, double tau);

struct BatchResponses {
  std::vector<Tensor> pos;  // scalar per sample
  std::vector<Tensor> neg;
  std::size_t size() const { return pos.size(); }
};

// Pairwise similarity maps of a batch: maps[k][j] pairs image k with audio j,
// each [m, n]. maps[k][k] are the matched pairs.
using SimilarityMatrix = std::vector<std::vector<Tensor>>;

BatchResponses responses_selfsup(const SimilarityMatrix& maps, const TriMapConfig& cfg);

// Ground-truth masks (values in {0,1}, shape [m, n]) replace the pseudo masks.
BatchResponses responses_supervised(const SimilarityMatrix& maps, std::span<const Tensor> masks);

// Sum (or mean) over samples of -log(exp(pos) / (exp(pos) + exp(neg))).
Tensor contrastive_loss(const BatchResponses& responses, LossReduction reduction = LossReduction::sum);

}  // namespace flowloc
