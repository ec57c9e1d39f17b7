#include "flowloc/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

namespace {

std::uint32_t le32(std::span<const unsigned char> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

std::uint16_t le16(std::span<const unsigned char> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | b[off + 1] << 8);
}

void put32(std::vector<unsigned char>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put16(std::vector<unsigned char>& o, std::uint16_t v) {
  o.push_back(static_cast<unsigned char>(v & 0xff));
  o.push_back(static_cast<unsigned char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioClip decode_wav(std::span<const unsigned char> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw DataError("malformed header: not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const unsigned char> payload;
  bool have_data = false;
  std::size_t off = 12;
  while (off + 8 <= b.size()) {
    std::uint32_t len = le32(b, off + 4);
    std::size_t body = off + 8;
    if (body + len > b.size()) {
      if (std::memcmp(b.data() + off, "data", 4) != 0) throw DataError("malformed header: truncated chunk");
      len = static_cast<std::uint32_t>(b.size() - body);
    }
    if (std::memcmp(b.data() + off, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("malformed header: short fmt chunk");
      format = le16(b, body);
      channels = le16(b, body + 2);
      rate = le32(b, body + 4);
      bits = le16(b, body + 14);
      if (format == kFormatExtensible && len >= 26) format = le16(b, body + 24);
      have_fmt = true;
    } else if (std::memcmp(b.data() + off, "data", 4) == 0) {
      payload = b.subspan(body, len);
      have_data = true;
    }
    off = body + len + (len & 1u);
  }
  if (!have_fmt) throw DataError("malformed header: missing fmt chunk");
  if (!have_data) throw DataError("malformed header: missing data chunk");
  if (channels != 1) throw DataError("unsupported channel count " + std::to_string(channels) + " (mono required)");
  if (rate != kSampleRate) throw DataError("unsupported sample rate " + std::to_string(rate));

  AudioClip clip;
  clip.sample_rate = rate;
  if (format == kFormatPcm && bits == 16) {
    clip.samples.resize(payload.size() / 2);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      clip.samples[i] = static_cast<std::int16_t>(le16(payload, 2 * i)) / 32768.0;
    }
  } else if (format == kFormatFloat && bits == 32) {
    clip.samples.resize(payload.size() / 4);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      float v = std::bit_cast<float>(le32(payload, 4 * i));
      if (!std::isfinite(v)) throw DataError("malformed data: non-finite sample");
      clip.samples[i] = std::clamp(static_cast<double>(v), -1.0, 1.0);
    }
  } else {
    throw DataError("malformed header: unsupported encoding (format " + std::to_string(format) + ", " +
                    std::to_string(bits) + " bits)");
  }
  return clip;
}

AudioClip load_wav(const std::filesystem::path& path) {
  auto raw = read_file(path);
  try {
    return decode_wav(raw);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_wav(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<unsigned char> o;
  o.reserve(44 + 2 * n);
  o.insert(o.end(), {'R', 'I', 'F', 'F'});
  put32(o, 36 + 2 * n);
  o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(o, 16);
  put16(o, kFormatPcm);
  put16(o, 1);
  put32(o, clip.sample_rate);
  put32(o, clip.sample_rate * 2);
  put16(o, 2);
  put16(o, 16);
  o.insert(o.end(), {'d', 'a', 't', 'a'});
  put32(o, 2 * n);
  for (double s : clip.samples) {
    long q = std::lround(std::clamp(s, -1.0, 1.0) * 32768.0);
    q = std::clamp<long>(q, -32768, 32767);
    put16(o, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return o;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  auto bytes = encode_wav(clip);
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ShapeError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / n);
  return w;
}

std::vector<double> frame_magnitudes(std::span<const double> frame, std::span<const double> window) {
  if (frame.size() != kFftSize || window.size() != kFftSize) throw ShapeError("frame_magnitudes: need 512 samples");
  std::vector<std::complex<double>> buf(kFftSize);
  for (std::size_t i = 0; i < kFftSize; ++i) buf[i] = frame[i] * window[i];
  fft(buf);
  std::vector<double> mag(kFreqBins);
  for (std::size_t k = 0; k < kFreqBins; ++k) mag[k] = std::abs(buf[k]);
  return mag;
}

Spectrogram log_spectrogram(const AudioClip& clip) {
  if (clip.samples.size() < kFftSize) {
    throw DataError("log_spectrogram: clip shorter than one window (" + std::to_string(clip.samples.size()) +
                    " samples)");
  }
  const std::size_t available = 1 + (clip.samples.size() - kFftSize) / kHopSize;
  const std::size_t used = std::min(available, kSpecFrames);
  Spectrogram spec;
  spec.values.assign(kFreqBins * kSpecFrames, std::log(kLogFloor));
  const auto window = hann_window(kFftSize);
  std::span<const double> all(clip.samples);
  for (std::size_t f = 0; f < used; ++f) {
    auto mag = frame_magnitudes(all.subspan(f * kHopSize, kFftSize), window);
    for (std::size_t k = 0; k < kFreqBins; ++k) spec.values[k * kSpecFrames + f] = std::log(mag[k] + kLogFloor);
  }
  return spec;
}

}  // namespace flowloc
