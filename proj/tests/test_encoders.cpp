#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "flowloc/encoders.hpp"
#include "flowloc/error.hpp"

using namespace flowloc;
namespace fs = std::filesystem;

namespace {

Tensor random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

ConvEncoder make(std::size_t cin, bool frozen, std::uint64_t seed = 1, std::vector<std::size_t> stages = {4, 4, 4, 4, 8}) {
  std::mt19937_64 rng(seed);
  return ConvEncoder("enc", EncoderConfig{cin, std::move(stages), std::nullopt, frozen}, rng);
}

}  // namespace

TEST(Encoders, VisualGeometryIsSevenBySeven) {
  auto enc = make(3, true, 1, {16, 32, 64, 64, 128});
  auto f = visual_encode(random_input({3, 224, 224}, 2), enc);
  EXPECT_EQ(f.shape(), (Shape{7, 7, 128}));
  for (double v : f.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
}

TEST(Encoders, OutputIsInputOverThirtyTwo) {
  auto enc = make(3, true);
  EXPECT_EQ(enc.forward(random_input({3, 96, 64}, 3)).shape(), (Shape{3, 2, 8}));
}

TEST(Encoders, DeterministicForward) {
  auto enc = make(3, true);
  auto x = random_input({3, 64, 64}, 4);
  auto a = enc.forward(x), b = enc.forward(x);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Encoders, SameSeedSameWeights) {
  auto a = make(3, false, 9).parameters(), b = make(3, false, 9).parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    for (std::size_t j = 0; j < a[i].value.size(); ++j) EXPECT_EQ(a[i].value[j], b[i].value[j]);
  }
}

TEST(Encoders, FrozenGetsNoGradient) {
  auto enc = make(3, true);
  auto x = random_input({3, 64, 64}, 5);
  x.set_requires_grad(true);
  backward(sum(enc.forward(x)));
  for (const auto& p : enc.parameters()) {
    EXPECT_FALSE(p.value.requires_grad());
    for (double g : p.value.grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Encoders, TrainableGetsGradient) {
  auto enc = make(3, false);
  backward(sum(enc.forward(random_input({3, 64, 64}, 5))));
  double total = 0.0;
  for (const auto& p : enc.parameters())
    for (double g : p.value.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(Encoders, ShapeMismatchRejected) {
  auto enc = make(3, true);
  EXPECT_THROW(visual_encode(Tensor::zeros({1, 64, 64}), enc), ShapeError);
  EXPECT_THROW(enc.forward(Tensor::zeros({64, 64})), ShapeError);
}

TEST(Encoders, AudioPooledIsUnitNormAndMatchesMean) {
  auto enc = make(1, false);
  auto spec = random_input({1, 257, 300}, 6);
  auto f = audio_encode(spec, enc);
  const std::size_t c = f.map.dim(2), mn = f.map.dim(0) * f.map.dim(1);
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < mn; ++i)
    for (std::size_t k = 0; k < c; ++k) mean[k] += f.map[i * c + k] / static_cast<double>(mn);
  double norm = 0.0;
  for (double v : mean) norm += v * v;
  norm = std::sqrt(norm);
  ASSERT_GT(norm, 0.0);
  double pooled_norm = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    EXPECT_NEAR(f.pooled[k], mean[k] / norm, 1e-12);
    pooled_norm += f.pooled[k] * f.pooled[k];
  }
  EXPECT_NEAR(std::sqrt(pooled_norm), 1.0, 1e-9);
}

TEST(Encoders, AudioRejectsWrongRank) {
  auto enc = make(1, false);
  EXPECT_THROW(audio_encode(Tensor::zeros({257, 300}), enc), ShapeError);
}

TEST(Encoders, ConstantInputGivesSpatiallyConstantFeatures) {
  auto enc = make(3, false);
  auto f = enc.forward(Tensor::full({3, 64, 64}, 0.3));
  const std::size_t c = f.dim(2);
  for (std::size_t i = 1; i < f.dim(0) * f.dim(1); ++i)
    for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(f[i * c + k], f[k], 1e-12);
}

TEST(FlowEncode, MaxPoolOnConstantFlow) {
  auto f = flow_encode(Tensor::full({2, 224, 224}, 0.75), FlowEncoderKind::maxpool, nullptr, 6);
  EXPECT_EQ(f.shape(), (Shape{7, 7, 6}));
  for (double v : f.data()) EXPECT_EQ(v, 0.75);
}

TEST(FlowEncode, MaxPoolSpikeIsLocal) {
  auto x = Tensor::zeros({2, 224, 224});
  std::vector<double> v(x.data().begin(), x.data().end());
  v[10 * 224 + 10] = 5.0;
  auto f = flow_encode(Tensor::from({2, 224, 224}, v), FlowEncoderKind::maxpool, nullptr, 4);
  for (std::size_t cell = 0; cell < 49; ++cell) {
    // Channel 0 (and its tile, channel 2) carry the u spike.
    EXPECT_EQ(f[cell * 4 + 0], cell == 0 ? 5.0 : 0.0);
    EXPECT_EQ(f[cell * 4 + 2], cell == 0 ? 5.0 : 0.0);
    EXPECT_EQ(f[cell * 4 + 1], 0.0);
  }
}

TEST(FlowEncode, MaxPoolCommutesWithHorizontalFlip) {
  auto x = random_input({2, 224, 224}, 7);
  std::vector<double> flipped(x.size());
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 224; ++y)
      for (std::size_t col = 0; col < 224; ++col) flipped[(c * 224 + y) * 224 + col] = x[(c * 224 + y) * 224 + 223 - col];
  auto a = flow_encode(x, FlowEncoderKind::maxpool, nullptr, 2);
  auto b = flow_encode(Tensor::from({2, 224, 224}, flipped), FlowEncoderKind::maxpool, nullptr, 2);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t col = 0; col < 7; ++col)
      for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(a[(r * 7 + col) * 2 + k], b[(r * 7 + 6 - col) * 2 + k]);
}

TEST(FlowEncode, LearnableShapeAndMissingEncoder) {
  auto enc = make(2, false, 3, {8, 8, 8, 8, 16});
  EXPECT_EQ(flow_encode(random_input({2, 224, 224}, 8), FlowEncoderKind::learnable, &enc, 16).shape(),
            (Shape{7, 7, 16}));
  EXPECT_THROW(flow_encode(Tensor::zeros({2, 224, 224}), FlowEncoderKind::learnable, nullptr, 16), UsageError);
  EXPECT_THROW(flow_encode(Tensor::zeros({3, 224, 224}), FlowEncoderKind::maxpool, nullptr, 16), ShapeError);
}

TEST(Checkpoint, BlobRoundTrip) {
  auto enc = make(3, false, 4);
  const fs::path path = fs::temp_directory_path() / "flowloc_blobs.ckpt";
  write_blobs(path, enc.parameters());
  auto other = make(3, false, 5);
  assign_blobs(other.parameters(), read_blobs(path));
  fs::remove(path);
  auto a = enc.parameters(), b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].value.size(); ++j) EXPECT_EQ(a[i].value[j], b[i].value[j]);
}

TEST(Checkpoint, LayoutHeader) {
  auto bytes = encode_blobs({{"w", Tensor::from({2}, {1.5, -2.0})}});
  // magic + version + count + name_len + "w" + rank + dim + 2 doubles
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FLCK");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);
  double v;
  std::memcpy(&v, bytes.data() + 29, 8);
  EXPECT_EQ(v, 1.5);
}

TEST(Checkpoint, Errors) {
  auto bytes = encode_blobs({{"w", Tensor::from({2}, {1.5, -2.0})}});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_blobs(bad), DataError);
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  EXPECT_THROW(decode_blobs(cut), DataError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_blobs(version), DataError);
  auto target = std::vector<NamedTensor>{{"w", Tensor::zeros({3})}};
  EXPECT_THROW(assign_blobs(target, decode_blobs(bytes)), DataError);
  auto missing = std::vector<NamedTensor>{{"q", Tensor::zeros({2})}};
  EXPECT_THROW(assign_blobs(missing, decode_blobs(bytes)), DataError);
}
