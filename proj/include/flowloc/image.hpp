#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace flowloc {

// Single-channel image, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  // Replicate-border access.
  double clamped(long x, long y) const;
  // Bilinear sample at continuous pixel coordinates, replicate border.
  double sample(double x, double y) const;
};

// Interleaved RGB with channel values in [0,1].
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> rgb;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

// 8-bit RGB/RGBA/gray PNG in, RGB out.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const Plane& gray);

// Luma 0.299 R + 0.587 G + 0.114 B.
Plane to_gray(const RgbImage& image);

// Pixel-center aligned bilinear resampling: src = (dst + 0.5) * in/out - 0.5.
Plane resize_bilinear(const Plane& in, std::size_t width, std::size_t height);
RgbImage resize_bilinear(const RgbImage& in, std::size_t width, std::size_t height);

// Separable Gaussian with replicate border; radius defaults to ceil(3 sigma).
Plane gaussian_blur(const Plane& in, double sigma, std::size_t radius = 0);
std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

}  // namespace flowloc
