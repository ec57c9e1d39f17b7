#include "flowloc/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowloc/error.hpp"

namespace flowloc {

namespace {

void check_matrix(const SimilarityMatrix& maps) {
  if (maps.empty()) throw ShapeError("responses: empty batch");
  const std::size_t b = maps.size();
  const Shape& shape = maps[0][0].shape();
  if (shape.size() != 2) throw ShapeError("responses: maps must be [m,n], got " + to_string(shape));
  for (const auto& row : maps) {
    if (row.size() != b) throw ShapeError("responses: similarity matrix must be B x B");
    for (const auto& s : row) {
      if (s.shape() != shape) throw ShapeError("responses: inconsistent map shapes");
    }
  }
}

// <mask, s> / max(|mask|, guard). The mask is first scaled by the constant
// 1 / max(mask), which leaves the ratio unchanged but keeps a pseudo-mask
// whose entries are all tiny (S far below the threshold) from hitting the
// guard and collapsing the response to zero.
Tensor masked_mean(const Tensor& mask, const Tensor& s) {
  double peak = 0.0;
  for (double v : mask.data()) peak = std::max(peak, v);
  Tensor m = peak > 0.0 ? mul(mask, 1.0 / peak) : mask;
  return div(dot(m, s), clamp_min(sum(m), kMaskGuard));
}

// (1 / mn) * sum_{j != k} sum(S_kj)
Tensor cross_term(const SimilarityMatrix& maps, std::size_t k) {
  const std::size_t b = maps.size();
  const double mn = static_cast<double>(maps[k][k].size());
  std::vector<Tensor> totals;
  for (std::size_t j = 0; j < b; ++j) {
    if (j != k) totals.push_back(sum(maps[k][j]));
  }
  if (totals.empty()) return Tensor::scalar(0.0);
  return mul(sum(stack(totals)), 1.0 / mn);
}

Tensor one_minus(const Tensor& m) { return add(neg(m), 1.0); }

}  // namespace

void TriMapConfig::validate() const {
  if (!(tau > 0.0)) throw UsageError("trimap: tau must be positive");
  if (!(eps_n < eps_p)) throw UsageError("trimap: eps_n must be below eps_p");
}

Tensor pseudo_mask(const Tensor& s, double eps, double tau) {
  if (!(tau > 0.0)) throw UsageError("pseudo_mask: tau must be positive");
  return sigmoid(mul(add(s, -eps), 1.0 / tau));
}

BatchResponses responses_selfsup(const SimilarityMatrix& maps, const TriMapConfig& cfg) {
  cfg.validate();
  check_matrix(maps);
  BatchResponses r;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const Tensor& s = maps[k][k];
    Tensor pm_p = pseudo_mask(s, cfg.eps_p, cfg.tau);
    Tensor pm_n = pseudo_mask(s, cfg.eps_n, cfg.tau);
    r.pos.push_back(masked_mean(pm_p, s));
    r.neg.push_back(add(masked_mean(one_minus(pm_n), s), cross_term(maps, k)));
  }
  return r;
}

BatchResponses responses_supervised(const SimilarityMatrix& maps, std::span<const Tensor> masks) {
  check_matrix(maps);
  if (masks.size() != maps.size()) throw ShapeError("responses_supervised: one mask per sample required");
  BatchResponses r;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const Tensor& s = maps[k][k];
    const Tensor& m = masks[k];
    if (m.shape() != s.shape()) throw ShapeError("responses_supervised: mask shape mismatch");
    std::size_t ones = 0;
    for (double v : m.data()) {
      if (v != 0.0 && v != 1.0) throw DataError("responses_supervised: mask must be binary");
      ones += v == 1.0;
    }
    if (ones == 0 || ones == m.size()) {
      throw DataError("responses_supervised: mask " + std::to_string(k) + " is all " + (ones == 0 ? "zeros" : "ones"));
    }
    r.pos.push_back(masked_mean(m, s));
    r.neg.push_back(add(masked_mean(one_minus(m), s), cross_term(maps, k)));
  }
  return r;
}

Tensor contrastive_loss(const BatchResponses& responses, LossReduction reduction) {
  if (responses.pos.empty() || responses.pos.size() != responses.neg.size()) {
    throw ShapeError("contrastive_loss: need matching, nonempty pos/neg lists");
  }
  std::vector<Tensor> terms;
  terms.reserve(responses.size());
  for (std::size_t k = 0; k < responses.size(); ++k) {
    terms.push_back(sub(logaddexp(responses.pos[k], responses.neg[k]), responses.pos[k]));
  }
  Tensor total = sum(stack(terms));
  if (reduction == LossReduction::mean) total = mul(total, 1.0 / static_cast<double>(terms.size()));
  return total;
}

}  // namespace flowloc
