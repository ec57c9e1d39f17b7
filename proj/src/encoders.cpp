#include "flowloc/encoders.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

void EncoderConfig::validate() const {
  if (input_channels == 0) throw UsageError("encoder: input_channels must be positive");
  if (stage_channels.empty()) throw UsageError("encoder: at least one stage required");
  for (auto c : stage_channels) {
    if (c == 0) throw UsageError("encoder: stage width must be positive");
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

ConvEncoder::ConvEncoder(std::string name, EncoderConfig config, std::mt19937_64& rng)
    : name_(std::move(name)), config_(std::move(config)) {
  config_.validate();
  std::size_t cin = config_.input_channels;
  for (std::size_t cout : config_.stage_channels) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    std::vector<double> k(cout * cin * 9);
    for (auto& v : k) v = uniform(rng, -bound, bound);
    kernels_.push_back(Tensor::from({cout, cin, 3, 3}, std::move(k), !config_.frozen));
    biases_.push_back(Tensor::zeros({cout}, !config_.frozen));
    cin = cout;
  }
}

Tensor ConvEncoder::forward_chw(const Tensor& input) const {
  if (input.rank() != 3 || input.dim(0) != config_.input_channels) {
    throw ShapeError(name_ + ": expected [" + std::to_string(config_.input_channels) + ",H,W] input, got " +
                     to_string(input.shape()));
  }
  Tensor x = input;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    x = relu(add_channel_bias(conv2d(x, kernels_[s], 2, 1, PadMode::replicate), biases_[s]));
  }
  return x;
}

Tensor ConvEncoder::forward(const Tensor& input) const { return chw_to_hwc(forward_chw(input)); }

std::vector<NamedTensor> ConvEncoder::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    out.push_back({name_ + ".stage" + std::to_string(s) + ".kernel", kernels_[s]});
    out.push_back({name_ + ".stage" + std::to_string(s) + ".bias", biases_[s]});
  }
  return out;
}

void ConvEncoder::set_frozen(bool frozen) {
  config_.frozen = frozen;
  for (auto& k : kernels_) k.set_requires_grad(!frozen);
  for (auto& b : biases_) b.set_requires_grad(!frozen);
}

Tensor visual_encode(const Tensor& image, const ConvEncoder& encoder) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("visual_encode: expected [3,H,W] image");
  return encoder.forward(image);
}

AudioFeatures audio_encode(const Tensor& spectrogram, const ConvEncoder& encoder) {
  if (spectrogram.rank() != 3 || spectrogram.dim(0) != 1) {
    throw ShapeError("audio_encode: expected [1,bins,frames] spectrogram, got " + to_string(spectrogram.shape()));
  }
  Tensor chw = encoder.forward_chw(spectrogram);
  return {chw_to_hwc(chw), l2_normalize(global_avg_pool(chw))};
}

Tensor flow_encode(const Tensor& flow, FlowEncoderKind kind, const ConvEncoder* encoder, std::size_t channels) {
  if (flow.rank() != 3 || flow.dim(0) != 2) throw ShapeError("flow_encode: expected [2,H,W] flow");
  switch (kind) {
    case FlowEncoderKind::learnable:
      if (encoder == nullptr) throw UsageError("flow_encode: learnable variant needs an encoder");
      return encoder->forward(flow);
    case FlowEncoderKind::maxpool:
      return chw_to_hwc(tile_channels(max_pool2d(flow, kMaxPoolWindow), channels));
  }
  throw UsageError("flow_encode: unknown variant");
}

Tensor flow_tensor(const FlowField& field) {
  std::vector<double> data;
  data.reserve(2 * field.u.size());
  data.insert(data.end(), field.u.begin(), field.u.end());
  data.insert(data.end(), field.v.begin(), field.v.end());
  return Tensor::from({2, field.height, field.width}, std::move(data));
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
void put(std::vector<unsigned char>& out, T v) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.insert(out.end(), bits.begin(), bits.end());
}

template <class T>
T take(const std::vector<unsigned char>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw DataError("checkpoint: truncated file");
  std::array<unsigned char, sizeof(T)> bits;
  std::memcpy(bits.data(), in.data() + off, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  off += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<unsigned char> encode_blobs(const std::vector<NamedTensor>& blobs) {
  std::vector<unsigned char> out{'F', 'L', 'C', 'K'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.value.rank()));
    for (auto d : b.value.shape()) put<std::uint64_t>(out, d);
    for (double v : b.value.data()) put<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_blobs(const std::vector<unsigned char>& in) {
  if (in.size() < 12 || std::memcmp(in.data(), "FLCK", 4) != 0) throw DataError("checkpoint: bad magic");
  std::size_t off = 4;
  auto version = take<std::uint32_t>(in, off);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  auto count = take<std::uint32_t>(in, off);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto len = take<std::uint32_t>(in, off);
    if (off + len > in.size()) throw DataError("checkpoint: truncated file");
    std::string name(in.begin() + static_cast<long>(off), in.begin() + static_cast<long>(off + len));
    off += len;
    auto rank = take<std::uint32_t>(in, off);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::uint64_t>(in, off));
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = take<double>(in, off);
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(data))});
  }
  return out;
}

void write_blobs(const std::filesystem::path& path, const std::vector<NamedTensor>& blobs) {
  auto bytes = encode_blobs(blobs);
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

std::vector<NamedTensor> read_blobs(const std::filesystem::path& path) {
  auto raw = read_file(path);
  return decode_blobs(std::vector<unsigned char>(raw.begin(), raw.end()));
}

void assign_blobs(const std::vector<NamedTensor>& target, const std::vector<NamedTensor>& source,
                  const std::string& prefix) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.value;
  for (const auto& t : target) {
    auto it = by_name.find(prefix + t.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing parameter " + prefix + t.name);
    if (it->second->shape() != t.value.shape()) {
      throw DataError("checkpoint: shape mismatch for " + t.name + ": " + to_string(it->second->shape()) + " vs " +
                      to_string(t.value.shape()));
    }
    Tensor dst = t.value;
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

}  // namespace flowloc
