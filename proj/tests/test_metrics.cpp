#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "flowloc/error.hpp"
#include "flowloc/metrics.hpp"

using namespace flowloc;
namespace fs = std::filesystem;

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

bool covers(const Box& b, std::size_t px, std::size_t py) {
  const double cx = px + 0.5, cy = py + 0.5;
  return b.x <= cx && cx < b.x + b.w && b.y <= cy && cy < b.y + b.h;
}

Plane box_plane(const Box& b, std::size_t w, std::size_t h) {
  Plane p(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) p.at(x, y) = covers(b, x, y) ? 1.0 : 0.0;
  return p;
}

// Loop-based reference: normalize, threshold, count.
double ciou_oracle(const Plane& pred, const std::vector<Box>& gt_boxes, std::size_t agreement, double threshold) {
  double lo = pred.values[0], hi = pred.values[0];
  for (double v : pred.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  long inter = 0, uni = 0;
  for (std::size_t y = 0; y < pred.height; ++y)
    for (std::size_t x = 0; x < pred.width; ++x) {
      const double n = hi > lo ? (pred.at(x, y) - lo) / (hi - lo) : 1.0;
      const bool p = n >= threshold;
      std::size_t votes = 0;
      for (const auto& b : gt_boxes) votes += covers(b, x, y);
      const bool g = votes >= agreement;
      inter += p && g;
      uni += p || g;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double auc_oracle(const std::vector<double>& c) {
  double total = 0.0;
  for (int i = 1; i <= 20; ++i) {
    int hits = 0;
    for (double v : c) hits += v >= i / 20.0;
    total += static_cast<double>(hits) / static_cast<double>(c.size());
  }
  return total / 20.0;
}

Box random_box(std::mt19937_64& rng, std::size_t w, std::size_t h) {
  std::uniform_int_distribution<int> pos(0, static_cast<int>(w) - 10), size(5, static_cast<int>(w) / 2);
  Box b{static_cast<double>(pos(rng)), static_cast<double>(pos(rng)), static_cast<double>(size(rng)),
        static_cast<double>(size(rng))};
  b.w = std::min(b.w, static_cast<double>(w) - b.x);
  b.h = std::min(b.h, static_cast<double>(h) - b.y);
  return b;
}

}  // namespace

TEST(Ciou, OffsetBoxesWorkedCase) {
  const Box gt{0, 0, 100, 100}, pred{50, 50, 100, 100};
  auto c = consensus_map(std::vector<Box>{gt}, 1, 200, 200);
  EXPECT_EQ(c.area(), 10000u);
  EXPECT_DOUBLE_EQ(ciou(box_plane(pred, 200, 200), c), 1.0 / 7.0);
}

TEST(Ciou, IdenticalAndDisjoint) {
  const Box a{10, 10, 30, 30}, b{60, 60, 20, 20};
  auto c = consensus_map(std::vector<Box>{a}, 1, 100, 100);
  EXPECT_DOUBLE_EQ(ciou(box_plane(a, 100, 100), c), 1.0);
  EXPECT_DOUBLE_EQ(ciou(box_plane(b, 100, 100), c), 0.0);
}

TEST(Ciou, ConstantMapIsAreaFraction) {
  auto c = consensus_map(std::vector<Box>{{0, 0, 50, 40}}, 1, 100, 100);
  EXPECT_DOUBLE_EQ(ciou(Plane(100, 100, 0.3), c), 2000.0 / 10000.0);
}

TEST(Ciou, MatchesOracleOnRandomConfigurations) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 60 + trial, h = 50 + 2 * trial;
    std::vector<Box> gt{random_box(rng, w, h), random_box(rng, w, h)};
    const std::size_t agreement = trial % 2 == 0 ? 1 : 2;
    gt[1] = agreement == 2 ? Box{gt[0].x + 2, gt[0].y + 1, gt[0].w, gt[0].h} : gt[1];
    Plane pred(w, h);
    // Smooth blob plus a box, so thresholds cut through graded values.
    const Box pb = random_box(rng, w, h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        pred.at(x, y) = 0.6 * covers(pb, x, y) + 0.4 * std::exp(-std::hypot(x - 20.0, y - 25.0) / 15.0);
    auto c = consensus_map(gt, agreement, w, h);
    for (double t : {0.25, 0.5, 0.75}) EXPECT_EQ(ciou(pred, c, t), ciou_oracle(pred, gt, agreement, t));
  }
}

TEST(Ciou, AffineRescaleInvariant) {
  std::mt19937_64 rng(22);
  Plane pred(40, 30);
  for (auto& v : pred.values) v = unit(rng);
  auto c = consensus_map(std::vector<Box>{{5, 5, 20, 15}}, 1, 40, 30);
  Plane scaled = pred;
  for (auto& v : scaled.values) v = 4.0 * v - 3.0;
  EXPECT_EQ(ciou(pred, c), ciou(scaled, c));
}

TEST(Ciou, SymmetricForBinaryMasks) {
  const Box a{3, 4, 20, 10}, b{10, 6, 15, 15};
  auto ca = consensus_map(std::vector<Box>{a}, 1, 40, 40), cb = consensus_map(std::vector<Box>{b}, 1, 40, 40);
  EXPECT_EQ(ciou(box_plane(b, 40, 40), ca), ciou(box_plane(a, 40, 40), cb));
}

TEST(Consensus, AgreementRules) {
  auto one = consensus_map(std::vector<Box>{{2, 2, 4, 4}}, 1, 10, 10);
  EXPECT_EQ(one.area(), 16u);
  auto twice = consensus_map(std::vector<Box>{{2, 2, 4, 4}, {2, 2, 4, 4}}, 2, 10, 10);
  EXPECT_EQ(twice.gt, one.gt);
  try {
    consensus_map(std::vector<Box>{{0, 0, 3, 3}, {5, 5, 3, 3}}, 2, 10, 10);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty consensus"), std::string::npos);
  }
}

TEST(Auc, WorkedValues) {
  std::vector<double> ones(4, 1.0), zeros(4, 0.0), single{0.6};
  EXPECT_DOUBLE_EQ(auc(ones), 1.0);
  EXPECT_DOUBLE_EQ(auc(zeros), 0.0);
  EXPECT_DOUBLE_EQ(auc(single), 12.0 / 20.0);
}

TEST(Auc, MatchesEnumerationOracle) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> c(1 + trial);
    for (auto& v : c) v = std::round(unit(rng) * 40.0) / 40.0;
    EXPECT_EQ(auc(c), auc_oracle(c));
  }
}

TEST(Auc, MonotoneInSampleValues) {
  std::vector<double> c{0.1, 0.4, 0.7};
  const double base = auc(c);
  c[1] = 0.55;
  EXPECT_GE(auc(c), base);
}

TEST(Summarize, SuccessRateAndAuc) {
  auto r = summarize({"a", "b", "c", "d"}, {0.2, 0.5, 0.8, 0.49});
  EXPECT_DOUBLE_EQ(r.ciou_at_05, 0.5);
  EXPECT_DOUBLE_EQ(r.auc, auc_oracle({0.2, 0.5, 0.8, 0.49}));
  EXPECT_NE(format_report(r).find("b"), std::string::npos);
}

TEST(Upsample, ConstantAndMonotone) {
  auto c = upsample_bilinear(Tensor::full({7, 7}, 0.4), 224, 224);
  for (double v : c.values) EXPECT_DOUBLE_EQ(v, 0.4);
  auto m = upsample_bilinear(Tensor::from({2, 2}, {0, 1, 0, 1}), 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 1; x < 4; ++x) EXPECT_GE(m.at(x, y), m.at(x - 1, y));
}

TEST(Upsample, MatchesPixelCenterFormula) {
  std::mt19937_64 rng(24);
  std::vector<double> v(49);
  for (auto& x : v) x = unit(rng);
  auto map = Tensor::from({7, 7}, v);
  auto up = upsample_bilinear(map, 224, 224);
  double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  for (std::size_t y = 0; y < 224; ++y)
    for (std::size_t x = 0; x < 224; ++x) {
      const double sx = std::clamp((x + 0.5) * 7.0 / 224.0 - 0.5, 0.0, 6.0);
      const double sy = std::clamp((y + 0.5) * 7.0 / 224.0 - 0.5, 0.0, 6.0);
      const std::size_t x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min<std::size_t>(x0 + 1, 6), y1 = std::min<std::size_t>(y0 + 1, 6);
      const double fx = sx - x0, fy = sy - y0;
      const double ref = (1 - fy) * ((1 - fx) * v[y0 * 7 + x0] + fx * v[y0 * 7 + x1]) +
                         fy * ((1 - fx) * v[y1 * 7 + x0] + fx * v[y1 * 7 + x1]);
      EXPECT_NEAR(up.at(x, y), ref, 1e-9);
      EXPECT_GE(up.at(x, y), lo - 1e-12);
      EXPECT_LE(up.at(x, y), hi + 1e-12);
    }
}

TEST(Annotations, RoundTripAndComments) {
  const fs::path path = fs::temp_directory_path() / "flowloc_ann.txt";
  Annotation a{"s1", 224, 200, {{1, 2, 30, 40}, {5.5, 6, 7, 8}}};
  {
    std::ofstream out(path);
    out << "# header\n\n" << format_annotation(a) << "\n";
  }
  auto m = read_annotations(path);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.at("s1").width, 224u);
  EXPECT_EQ(m.at("s1").boxes, a.boxes);
  {
    std::ofstream out(path);
    out << "s1 224 200 1 2 3\n";
  }
  EXPECT_THROW(read_annotations(path), DataError);
  fs::remove(path);
}
