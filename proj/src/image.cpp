#include "flowloc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

double Plane::clamped(long x, long y) const {
  x = std::clamp<long>(x, 0, static_cast<long>(width) - 1);
  y = std::clamp<long>(y, 0, static_cast<long>(height) - 1);
  return values[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
}

double Plane::sample(double x, double y) const {
  double fx = std::floor(x), fy = std::floor(y);
  double tx = x - fx, ty = y - fy;
  long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
  double v00 = clamped(ix, iy), v10 = clamped(ix + 1, iy);
  double v01 = clamped(ix, iy + 1), v11 = clamped(ix + 1, iy + 1);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png_bytes(const std::filesystem::path& path, std::size_t w, std::size_t h, png_uint_32 format,
                     const std::vector<std::uint8_t>& pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError("png encode failed: " + std::string(image.message));
  }
  std::vector<std::uint8_t> buffer(size);
  if (!png_image_write_to_memory(&image, buffer.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw DataError("png encode failed: " + std::string(image.message));
  }
  buffer.resize(size);
  write_file_atomic(path, buffer);
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read image " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode image " + path.string() + ": " + image.message);
  }
  RgbImage img(image.width, image.height);
  for (std::size_t i = 0; i < raw.size(); ++i) img.rgb[i] = raw[i] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> px(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), px.begin(), to_byte);
  write_png_bytes(path, image.width, image.height, PNG_FORMAT_RGB, px);
}

void write_png(const std::filesystem::path& path, const Plane& gray) {
  std::vector<std::uint8_t> px(gray.values.size());
  std::transform(gray.values.begin(), gray.values.end(), px.begin(), to_byte);
  write_png_bytes(path, gray.width, gray.height, PNG_FORMAT_GRAY, px);
}

Plane to_gray(const RgbImage& image) {
  Plane out(image.width, image.height);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = 0.299 * image.rgb[3 * i] + 0.587 * image.rgb[3 * i + 1] + 0.114 * image.rgb[3 * i + 2];
  }
  return out;
}

namespace {

// Source taps for one output coordinate under pixel-center alignment.
struct Tap {
  std::size_t i0, i1;
  double t;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    auto i0 = static_cast<std::size_t>(std::floor(s));
    std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, s - static_cast<double>(i0)};
  }
  return t;
}

}  // namespace

Plane resize_bilinear(const Plane& in, std::size_t width, std::size_t height) {
  if (in.width == 0 || in.height == 0 || width == 0 || height == 0) throw ShapeError("resize: empty image");
  auto tx = taps(in.width, width);
  auto ty = taps(in.height, height);
  Plane out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const auto& a = tx[x];
      const auto& b = ty[y];
      double top = (1 - a.t) * in.at(a.i0, b.i0) + a.t * in.at(a.i1, b.i0);
      double bot = (1 - a.t) * in.at(a.i0, b.i1) + a.t * in.at(a.i1, b.i1);
      out.at(x, y) = (1 - b.t) * top + b.t * bot;
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& in, std::size_t width, std::size_t height) {
  RgbImage out(width, height);
  for (std::size_t c = 0; c < 3; ++c) {
    Plane p(in.width, in.height);
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = in.rgb[3 * i + c];
    Plane r = resize_bilinear(p, width, height);
    for (std::size_t i = 0; i < r.values.size(); ++i) out.rgb[3 * i + c] = r.values[i];
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-t * t / (2 * sigma * sigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

Plane gaussian_blur(const Plane& in, double sigma, std::size_t radius) {
  if (sigma <= 0.0) return in;
  if (radius == 0) radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  auto k = gaussian_kernel(sigma, radius);
  const long r = static_cast<long>(radius);
  Plane tmp(in.width, in.height), out(in.width, in.height);
  parallel_for(in.height, [&](std::size_t y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long t = -r; t <= r; ++t) s += k[t + r] * in.clamped(static_cast<long>(x), static_cast<long>(y) + t);
      tmp.at(x, y) = s;
    }
  });
  parallel_for(in.height, [&](std::size_t y) {
    for (std::size_t x = 0; x < in.width; ++x) {
      double s = 0.0;
      for (long t = -r; t <= r; ++t) s += k[t + r] * tmp.clamped(static_cast<long>(x) + t, static_cast<long>(y));
      out.at(x, y) = s;
    }
  });
  return out;
}

}  // namespace flowloc
