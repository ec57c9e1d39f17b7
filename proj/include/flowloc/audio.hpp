#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace flowloc {

inline constexpr unsigned kSampleRate = 16000;
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kHopSize = 274;
inline constexpr std::size_t kFreqBins = kFftSize / 2 + 1;  // 257
inline constexpr std::size_t kSpecFrames = 300;
inline constexpr double kLogFloor = 1e-10;

struct AudioClip {
  std::vector<double> samples;  // mono, [-1, 1]
  unsigned sample_rate = kSampleRate;
};

// Log-magnitude spectrogram, values[bin * frames + frame].
struct Spectrogram {
  std::size_t bins = kFreqBins;
  std::size_t frames = kSpecFrames;
  std::vector<double> values;

  double at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
};

// Accepts RIFF/WAVE PCM16 or IEEE float32, mono, 16 kHz. Each violation is
// reported with its own DataError message ("unsupported sample rate",
// "unsupported channel count", "malformed header: ...").
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::span<const unsigned char> bytes);
// PCM16 mono writer; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
std::vector<unsigned char> encode_wav(const AudioClip& clip);

// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& data);

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

// Magnitudes of the one-sided spectrum of `frame` (length kFftSize) after
// applying `window`.
std::vector<double> frame_magnitudes(std::span<const double> frame, std::span<const double> window);

// Hop 274, Hann 512, 257 bins, log(|X| + 1e-10); the time axis is right-
// padded with log(1e-10) columns or truncated to exactly 300 frames.
Spectrogram log_spectrogram(const AudioClip& clip);

}  // namespace flowloc
