#pragma once

// Convolutional feature extractors for the image, audio and flow inputs.
//
// Each encoder is a stack of stride-2 3x3 convolution + ReLU stages, so a
// 224x224 input with five stages yields a 7x7 map. Feature maps are returned
// channels-last, shape [m, n, c].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flowloc/optical_flow.hpp"
#include "flowloc/tensor.hpp"

namespace flowloc {

struct EncoderConfig {
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64, 64, 128};
  std::optional<std::filesystem::path> pretrained_weights;
  bool frozen = false;

  std::size_t out_channels() const { return stage_channels.empty() ? 0 : stage_channels.back(); }
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Deterministic uniform doubles in [lo, hi) from a 64-bit engine; avoids the
// implementation-defined std::uniform_real_distribution.
double uniform(std::mt19937_64& rng, double lo, double hi);

class ConvEncoder {
 public:
  ConvEncoder() = default;
  // Kernels are drawn He-uniform, biases start at zero.
  ConvEncoder(std::string name, EncoderConfig config, std::mt19937_64& rng);

  // input [Cin, H, W] -> [c, H/32, W/32] (channels-first, for five stages).
  Tensor forward_chw(const Tensor& input) const;
  // input [Cin, H, W] -> feature map [m, n, c].
  Tensor forward(const Tensor& input) const;

  const EncoderConfig& config() const { return config_; }
  const std::string& name() const { return name_; }
  std::vector<NamedTensor> parameters() const;
  // Marks parameters as (non-)trainable.
  void set_frozen(bool frozen);
  bool frozen() const { return config_.frozen; }

 private:
  std::string name_;
  EncoderConfig config_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
};

// Flow encoder choices (the CLI spells them flow / maxpool-flow).
enum class FlowEncoderKind { learnable, maxpool };

inline constexpr std::size_t kMaxPoolWindow = 32;

// f_v: image [3,224,224] -> [7,7,c].
Tensor visual_encode(const Tensor& image, const ConvEncoder& encoder);

struct AudioFeatures {
  Tensor map;      // f_a [m', n', c]
  Tensor pooled;   // A_avg: spatial mean of f_a, L2-normalized, [c]
};
// spec [1,257,300] -> (f_a, A_avg)
AudioFeatures audio_encode(const Tensor& spectrogram, const ConvEncoder& encoder);

// f_f: flow [2,224,224] -> [7,7,c]. The maxpool kind takes a 32x32 max per
// channel and tiles the two pooled channels to c (channel i <- i % 2), which
// needs no parameters; `encoder` is ignored for it and may be null.
Tensor flow_encode(const Tensor& flow, FlowEncoderKind kind, const ConvEncoder* encoder, std::size_t channels);

// Packs a flow field [2,H,W] (u then v).
Tensor flow_tensor(const FlowField& field);

// -- checkpoint blobs ---------------------------------------------------------

// Binary layout (little-endian):
//   "FLCK" | u32 version (=1) | u32 count |
//   count x ( u32 name_len | name bytes | u32 rank | rank x u64 dims | f64 data... )
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<unsigned char> encode_blobs(const std::vector<NamedTensor>& blobs);
std::vector<NamedTensor> decode_blobs(const std::vector<unsigned char>& bytes);
void write_blobs(const std::filesystem::path& path, const std::vector<NamedTensor>& blobs);
std::vector<NamedTensor> read_blobs(const std::filesystem::path& path);

// Copies values of matching names into `target`; every target must be
// present with an identical shape.
void assign_blobs(const std::vector<NamedTensor>& target, const std::vector<NamedTensor>& source,
                  const std::string& prefix = "");

}  // namespace flowloc
