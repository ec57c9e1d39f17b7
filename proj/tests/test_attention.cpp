#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "flowloc/attention.hpp"
#include "flowloc/error.hpp"

using namespace flowloc;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::from({n, n}, std::move(v));
}

// Direct per-location evaluation of the attention block.
std::vector<double> attention_oracle(const std::vector<double>& fv, const std::vector<double>& ff,
                                     const AttentionParams& p) {
  const std::size_t d = p.width(), c = p.channels();
  auto apply = [](const Tensor& w, const std::vector<double>& x, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < cols; ++k) out[r] += w[r * cols + k] * x[k];
    return out;
  };
  auto k = apply(p.proj_k, fv, d, c), q = apply(p.proj_q, ff, d, c), v = apply(p.proj_v, fv, d, c);
  std::vector<double> e(d, 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    std::vector<double> row(d);
    double z = 0.0;
    for (std::size_t b = 0; b < d; ++b) z += row[b] = std::exp(k[a] * q[b] / std::sqrt(static_cast<double>(d)));
    for (std::size_t b = 0; b < d; ++b) e[b] += v[a] * row[b] / z;
  }
  return apply(p.proj_out, e, c, d);
}

}  // namespace

TEST(Attention, InitBoundsAndShapes) {
  std::mt19937_64 rng(1);
  auto p = AttentionParams::init(16, 4, rng);
  EXPECT_EQ(p.proj_k.shape(), (Shape{4, 16}));
  EXPECT_EQ(p.proj_out.shape(), (Shape{16, 4}));
  for (double v : p.proj_q.data()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : p.proj_out.data()) EXPECT_LE(std::abs(v), 0.025);
  EXPECT_THROW(AttentionParams::init(0, 4, rng), UsageError);
}

TEST(Attention, BetaRowsSumToOne) {
  std::mt19937_64 rng(2);
  auto p = AttentionParams::init(8, 5, rng);
  auto beta = attention_weights(random_tensor({3, 4, 8}, rng, 0, 3), random_tensor({3, 4, 8}, rng, -2, 2), p);
  ASSERT_EQ(beta.shape(), (Shape{3, 4, 5, 5}));
  for (std::size_t row = 0; row < 3 * 4 * 5; ++row) {
    double total = 0.0;
    for (std::size_t b = 0; b < 5; ++b) total += beta[row * 5 + b];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Attention, HandCaseWidthTwo) {
  // c = d = 2 with identity projections: K = f_v, Q = f_f, V = f_v.
  AttentionParams p{identity(2), identity(2), identity(2), identity(2)};
  auto fv = Tensor::from({1, 1, 2}, {1.0, 0.0});
  auto ff = Tensor::from({1, 1, 2}, {0.0, 1.0});
  auto beta = attention_weights(fv, ff, p);
  const double s = 1.0 / std::sqrt(2.0);
  const double e0 = 1.0 / (1.0 + std::exp(s));
  EXPECT_NEAR(beta[0], e0, 1e-15);
  EXPECT_NEAR(beta[1], 1.0 - e0, 1e-15);
  EXPECT_NEAR(beta[2], 0.5, 1e-15);
  EXPECT_NEAR(beta[3], 0.5, 1e-15);

  // V = (2, 4) needs a V projection scaling f_v = (1, 0) to (2, 4).
  p.proj_v = Tensor::from({2, 2}, {2.0, 0.0, 4.0, 0.0});
  auto e = cross_attention(fv, ff, p);
  EXPECT_NEAR(e[0], 2.0 * e0 + 4.0 * 0.5, 1e-14);
  EXPECT_NEAR(e[1], 2.0 * (1.0 - e0) + 4.0 * 0.5, 1e-14);
}

TEST(Attention, MatchesPerLocationOracle) {
  std::mt19937_64 rng(3);
  auto p = AttentionParams::init(6, 3, rng);
  auto fv = random_tensor({2, 3, 6}, rng), ff = random_tensor({2, 3, 6}, rng);
  auto e = cross_attention(fv, ff, p);
  for (std::size_t loc = 0; loc < 6; ++loc) {
    std::vector<double> a(fv.data().begin() + loc * 6, fv.data().begin() + loc * 6 + 6);
    std::vector<double> b(ff.data().begin() + loc * 6, ff.data().begin() + loc * 6 + 6);
    auto ref = attention_oracle(a, b, p);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(e[loc * 6 + k], ref[k], 1e-13);
  }
}

TEST(Attention, UniformWhenKeysAreConstant) {
  std::mt19937_64 rng(4);
  auto p = AttentionParams::init(4, 3, rng);
  p.proj_k = Tensor::zeros({3, 4});
  auto beta = attention_weights(random_tensor({2, 2, 4}, rng), random_tensor({2, 2, 4}, rng), p);
  for (double v : beta.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Attention, WidthOneIgnoresFlow) {
  std::mt19937_64 rng(5);
  auto p = AttentionParams::init(8, 1, rng);
  auto fv = random_tensor({3, 3, 8}, rng, 0, 2);
  auto a_avg = l2_normalize(random_tensor({8}, rng));
  auto s1 = similarity_map(enhance(fv, cross_attention(fv, random_tensor({3, 3, 8}, rng), p)), a_avg);
  auto s2 = similarity_map(enhance(fv, cross_attention(fv, random_tensor({3, 3, 8}, rng, -5, 5), p)), a_avg);
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i], s2[i]);
}

TEST(Attention, ShapeErrors) {
  std::mt19937_64 rng(6);
  auto p = AttentionParams::init(4, 2, rng);
  EXPECT_THROW(cross_attention(Tensor::zeros({2, 2, 4}), Tensor::zeros({2, 3, 4}), p), ShapeError);
  EXPECT_THROW(cross_attention(Tensor::zeros({4, 4}), Tensor::zeros({4, 4}), p), ShapeError);
  EXPECT_THROW(cross_attention(Tensor::zeros({2, 2, 5}), Tensor::zeros({2, 2, 5}), p), ShapeError);
  EXPECT_THROW(enhance(Tensor::zeros({2, 2, 4}), Tensor::zeros({2, 2, 3})), ShapeError);
  EXPECT_THROW(similarity_map(Tensor::zeros({2, 2, 4}), Tensor::zeros({3})), ShapeError);
}

TEST(Enhance, IsElementwiseSum) {
  std::mt19937_64 rng(7);
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 4}, rng);
  auto e = enhance(a, b);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], a[i] + b[i]);
  auto z = enhance(a, Tensor::zeros({2, 3, 4}));
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], a[i]);
}

TEST(Similarity, SelfAndOrthogonal) {
  auto a = Tensor::from({3}, {0.6, 0.8, 0.0});
  auto f = Tensor::from({1, 2, 3}, {0.6, 0.8, 0.0, -0.8, 0.6, 0.0});
  auto s = similarity_map(f, a);
  EXPECT_NEAR(s[0], 1.0, 1e-15);
  EXPECT_NEAR(s[1], 0.0, 1e-15);
}

TEST(Similarity, MatchesCosineOracle) {
  std::mt19937_64 rng(8);
  auto f = random_tensor({2, 2, 3}, rng);
  auto a = l2_normalize(random_tensor({3}, rng));
  auto s = similarity_map(f, a);
  for (std::size_t loc = 0; loc < 4; ++loc) {
    double dot = 0.0, nf = 0.0, na = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      dot += f[loc * 3 + k] * a[k];
      nf += f[loc * 3 + k] * f[loc * 3 + k];
      na += a[k] * a[k];
    }
    const double ref = dot / (std::sqrt(nf) * std::sqrt(na));
    EXPECT_NEAR(s[loc], ref, 1e-12);
    EXPECT_GE(s[loc], -1.0);
    EXPECT_LE(s[loc], 1.0);
  }
}

TEST(Similarity, PositiveScaleInvariant) {
  std::mt19937_64 rng(9);
  auto f = random_tensor({2, 2, 5}, rng);
  auto a = l2_normalize(random_tensor({5}, rng));
  std::vector<double> scaled(f.data().begin(), f.data().end());
  for (std::size_t k = 0; k < 5; ++k) scaled[5 + k] *= 7.5;
  auto s1 = similarity_map(f, a), s2 = similarity_map(Tensor::from({2, 2, 5}, scaled), a);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s1[i], s2[i], 1e-12);
}

TEST(Similarity, ZeroFeatureIsGuarded) {
  auto s = similarity_map(Tensor::zeros({1, 1, 3}), Tensor::from({3}, {1.0, 0.0, 0.0}));
  EXPECT_EQ(s[0], 0.0);
}

TEST(Attention, CompositeGradientCheck) {
  std::mt19937_64 rng(10);
  auto p = AttentionParams::init(4, 3, rng);
  std::vector<Tensor> in{random_tensor({2, 2, 4}, rng, 0.1, 1.0), random_tensor({2, 2, 4}, rng),
                         p.proj_k.detach(),  p.proj_q.detach(),
                         p.proj_v.detach(),  random_tensor({4, 3}, rng),
                         l2_normalize(random_tensor({4}, rng))};
  auto f = [](std::span<const Tensor> t) {
    AttentionParams q{t[2], t[3], t[4], t[5]};
    auto s = similarity_map(enhance(t[0], cross_attention(t[0], t[1], q)), t[6]);
    return sum(mul(s, s));
  };
  EXPECT_LT(grad_check(f, in), 1e-4);
}
