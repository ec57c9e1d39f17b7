#include "flowloc/optical_flow.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

void FlowParams::validate() const {
  if (pyramid_levels < 1) throw UsageError("flow: pyramid_levels must be >= 1");
  if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) throw UsageError("flow: pyramid_scale must be in (0,1)");
  if (window < 3 || window % 2 == 0) throw UsageError("flow: window must be odd and >= 3");
  if (iterations < 1) throw UsageError("flow: iterations must be >= 1");
  if (!(poly_sigma > 0.0)) throw UsageError("flow: poly_sigma must be positive");
}

// ---------------------------------------------------------------------------
// Polynomial expansion

PolyExpansion polynomial_expansion(const Plane& frame, int window, double poly_sigma) {
  if (window < 3 || window % 2 == 0) throw UsageError("polynomial_expansion: window must be odd and >= 3");
  if (frame.width < static_cast<std::size_t>(window) || frame.height < static_cast<std::size_t>(window)) {
    throw ShapeError("polynomial_expansion: frame " + std::to_string(frame.width) + "x" +
                     std::to_string(frame.height) + " smaller than window " + std::to_string(window));
  }
  const long r = window / 2;
  std::vector<double> g(static_cast<std::size_t>(2 * r + 1));
  for (long t = -r; t <= r; ++t) g[t + r] = std::exp(-static_cast<double>(t * t) / (2 * poly_sigma * poly_sigma));

  // Gram matrix of the basis (1, dx, dy, dx^2, dy^2, dx*dy) under the weights.
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx) {
      double x = static_cast<double>(dx), y = static_cast<double>(dy);
      Eigen::Matrix<double, 6, 1> phi;
      phi << 1, x, y, x * x, y * y, x * y;
      gram += g[dx + r] * g[dy + r] * phi * phi.transpose();
    }
  }
  const Eigen::Matrix<double, 6, 6> inv = gram.inverse();

  const std::size_t w = frame.width, h = frame.height;
  // Vertical moments sum_t g(t) t^k I(x, y + t), k = 0..2.
  std::array<Plane, 3> vert{Plane(w, h), Plane(w, h), Plane(w, h)};
  parallel_for(h, [&](std::size_t y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s0 = 0, s1 = 0, s2 = 0;
      for (long t = -r; t <= r; ++t) {
        double v = g[t + r] * frame.clamped(static_cast<long>(x), static_cast<long>(y) + t);
        s0 += v;
        s1 += v * t;
        s2 += v * t * t;
      }
      vert[0].at(x, y) = s0;
      vert[1].at(x, y) = s1;
      vert[2].at(x, y) = s2;
    }
  });

  PolyExpansion out;
  out.width = w;
  out.height = h;
  for (auto* f : {&out.a11, &out.a12, &out.a22, &out.b1, &out.b2, &out.c}) f->assign(w * h, 0.0);
  parallel_for(h, [&](std::size_t y) {
    for (std::size_t x = 0; x < w; ++x) {
      Eigen::Matrix<double, 6, 1> m = Eigen::Matrix<double, 6, 1>::Zero();
      for (long s = -r; s <= r; ++s) {
        double gs = g[s + r];
        long xs = static_cast<long>(x) + s;
        double v0 = vert[0].clamped(xs, static_cast<long>(y));
        double v1 = vert[1].clamped(xs, static_cast<long>(y));
        double v2 = vert[2].clamped(xs, static_cast<long>(y));
        m[0] += gs * v0;
        m[1] += gs * s * v0;
        m[2] += gs * v1;
        m[3] += gs * s * s * v0;
        m[4] += gs * v2;
        m[5] += gs * s * v1;
      }
      Eigen::Matrix<double, 6, 1> p = inv * m;
      std::size_t i = y * w + x;
      out.c[i] = p[0];
      out.b1[i] = p[1];
      out.b2[i] = p[2];
      out.a11[i] = p[3];
      out.a22[i] = p[4];
      out.a12[i] = 0.5 * p[5];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Displacement estimation

namespace {

double averaging_sigma(int window) { return 0.3 * ((window - 1) * 0.5 - 1.0) + 0.8; }

double sample(const std::vector<double>& f, std::size_t w, std::size_t h, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  double tx = x - static_cast<double>(x0), ty = y - static_cast<double>(y0);
  double top = (1 - tx) * f[y0 * w + x0] + tx * f[y0 * w + x1];
  double bot = (1 - tx) * f[y1 * w + x0] + tx * f[y1 * w + x1];
  return (1 - ty) * top + ty * bot;
}

Plane blur(std::vector<double> values, std::size_t w, std::size_t h, int window) {
  Plane p;
  p.width = w;
  p.height = h;
  p.values = std::move(values);
  return gaussian_blur(p, averaging_sigma(window), static_cast<std::size_t>(window / 2));
}

// One refinement of `flow` against the expansions of both frames.
FlowField refine(const PolyExpansion& p1, const PolyExpansion& p2, const FlowField& flow, int window) {
  const std::size_t w = p1.width, h = p1.height, n = w * h;
  std::vector<double> g11(n), g12(n), g22(n), h1(n), h2(n);
  parallel_for(h, [&](std::size_t y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t i = y * w + x;
      double du = flow.u[i], dv = flow.v[i];
      double tx = static_cast<double>(x) + du, ty = static_cast<double>(y) + dv;
      double a11 = 0.5 * (p1.a11[i] + sample(p2.a11, w, h, tx, ty));
      double a12 = 0.5 * (p1.a12[i] + sample(p2.a12, w, h, tx, ty));
      double a22 = 0.5 * (p1.a22[i] + sample(p2.a22, w, h, tx, ty));
      double db1 = -0.5 * (sample(p2.b1, w, h, tx, ty) - p1.b1[i]) + a11 * du + a12 * dv;
      double db2 = -0.5 * (sample(p2.b2, w, h, tx, ty) - p1.b2[i]) + a12 * du + a22 * dv;
      g11[i] = a11 * a11 + a12 * a12;
      g12[i] = a12 * (a11 + a22);
      g22[i] = a12 * a12 + a22 * a22;
      h1[i] = a11 * db1 + a12 * db2;
      h2[i] = a12 * db1 + a22 * db2;
    }
  });
  Plane G11 = blur(std::move(g11), w, h, window);
  Plane G12 = blur(std::move(g12), w, h, window);
  Plane G22 = blur(std::move(g22), w, h, window);
  Plane H1 = blur(std::move(h1), w, h, window);
  Plane H2 = blur(std::move(h2), w, h, window);

  FlowField out(w, h);
  std::vector<double> valid(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double det = G11.values[i] * G22.values[i] - G12.values[i] * G12.values[i];
    if (det > kFlowSingularDet) {
      out.u[i] = (G22.values[i] * H1.values[i] - G12.values[i] * H2.values[i]) / det;
      out.v[i] = (G11.values[i] * H2.values[i] - G12.values[i] * H1.values[i]) / det;
      valid[i] = 1.0;
    }
  }
  // Fill singular pixels with the Gaussian-weighted mean of valid neighbours.
  if (std::find(valid.begin(), valid.end(), 0.0) != valid.end()) {
    std::vector<double> wu(n), wv(n);
    for (std::size_t i = 0; i < n; ++i) {
      wu[i] = out.u[i] * valid[i];
      wv[i] = out.v[i] * valid[i];
    }
    Plane W = blur(valid, w, h, window);
    Plane U = blur(std::move(wu), w, h, window);
    Plane V = blur(std::move(wv), w, h, window);
    for (std::size_t i = 0; i < n; ++i) {
      if (valid[i] != 0.0) continue;
      bool has = W.values[i] > 1e-12;
      out.u[i] = has ? U.values[i] / W.values[i] : 0.0;
      out.v[i] = has ? V.values[i] / W.values[i] : 0.0;
    }
  }
  return out;
}

FlowField resize_flow(const FlowField& f, std::size_t w, std::size_t h) {
  Plane u(f.width, f.height), v(f.width, f.height);
  u.values = f.u;
  v.values = f.v;
  Plane ru = resize_bilinear(u, w, h), rv = resize_bilinear(v, w, h);
  double sx = static_cast<double>(w) / static_cast<double>(f.width);
  double sy = static_cast<double>(h) / static_cast<double>(f.height);
  FlowField out(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    out.u[i] = ru.values[i] * sx;
    out.v[i] = rv.values[i] * sy;
  }
  return out;
}

}  // namespace

FlowField estimate_flow(const Plane& frame_a, const Plane& frame_b, const FlowParams& params) {
  params.validate();
  if (frame_a.width != frame_b.width || frame_a.height != frame_b.height) {
    throw ShapeError("estimate_flow: frame size mismatch");
  }
  if (frame_a.width == 0 || frame_a.height == 0) throw ShapeError("estimate_flow: empty frame");

  Plane a = frame_a, b = frame_b;
  for (auto& x : a.values) x *= 255.0;
  for (auto& x : b.values) x *= 255.0;

  struct Level {
    Plane a, b;
  };
  std::vector<Level> levels;
  const auto win = static_cast<std::size_t>(params.window);
  for (int k = 0; k < params.pyramid_levels; ++k) {
    double s = std::pow(params.pyramid_scale, k);
    auto w = static_cast<std::size_t>(std::lround(static_cast<double>(a.width) * s));
    auto h = static_cast<std::size_t>(std::lround(static_cast<double>(a.height) * s));
    if (w < win || h < win) break;
    if (k == 0) {
      levels.push_back({a, b});
      continue;
    }
    double sigma = (1.0 / s - 1.0) * 0.5;
    levels.push_back({resize_bilinear(gaussian_blur(a, sigma), w, h), resize_bilinear(gaussian_blur(b, sigma), w, h)});
  }
  if (levels.empty()) {
    throw ShapeError("estimate_flow: frame smaller than window " + std::to_string(params.window));
  }

  FlowField flow(levels.back().a.width, levels.back().a.height);
  for (auto k = static_cast<long>(levels.size()) - 1; k >= 0; --k) {
    const auto& lv = levels[static_cast<std::size_t>(k)];
    if (flow.width != lv.a.width || flow.height != lv.a.height) flow = resize_flow(flow, lv.a.width, lv.a.height);
    auto p1 = polynomial_expansion(lv.a, params.window, params.poly_sigma);
    auto p2 = polynomial_expansion(lv.b, params.window, params.poly_sigma);
    for (int it = 0; it < params.iterations; ++it) flow = refine(p1, p2, flow, params.window);
  }
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i])) throw NumericError("estimate_flow: non-finite flow");
  }
  return flow;
}

// ---------------------------------------------------------------------------
// .flo container

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<unsigned char> encode_flo(const FlowField& field) {
  if (field.u.size() != field.width * field.height || field.v.size() != field.u.size()) {
    throw ShapeError("write_flo: inconsistent field");
  }
  std::vector<unsigned char> out;
  out.reserve(12 + 8 * field.u.size());
  put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(out, static_cast<std::uint32_t>(field.width));
  put_u32(out, static_cast<std::uint32_t>(field.height));
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    if (!std::isfinite(field.u[i]) || !std::isfinite(field.v[i])) throw NumericError("write_flo: non-finite flow");
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(field.u[i])));
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(field.v[i])));
  }
  return out;
}

FlowField decode_flo(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4) throw DataError("read_flo: truncated file");
  if (std::bit_cast<float>(get_u32(bytes, 0)) != kFloMagic) throw DataError("read_flo: bad magic");
  if (bytes.size() < 12) throw DataError("read_flo: truncated file");
  auto w = static_cast<std::int32_t>(get_u32(bytes, 4));
  auto h = static_cast<std::int32_t>(get_u32(bytes, 8));
  if (w <= 0 || h <= 0) throw DataError("read_flo: invalid dimensions");
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < 12 + 8 * n) throw DataError("read_flo: truncated file");
  FlowField f(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = std::bit_cast<float>(get_u32(bytes, 12 + 8 * i));
    f.v[i] = std::bit_cast<float>(get_u32(bytes, 16 + 8 * i));
  }
  return f;
}

void write_flo(const FlowField& field, const std::filesystem::path& path) {
  auto bytes = encode_flo(field);
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

FlowField read_flo(const std::filesystem::path& path) {
  auto raw = read_file(path);
  return decode_flo(std::vector<unsigned char>(raw.begin(), raw.end()));
}

// ---------------------------------------------------------------------------

FlowField normalize_flow(const FlowField& field) {
  const std::size_t n = field.u.size();
  FlowField out(field.width, field.height);
  if (n == 0) return out;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += field.u[i] + field.v[i];
  double mean = s / static_cast<double>(2 * n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ss += (field.u[i] - mean) * (field.u[i] - mean) + (field.v[i] - mean) * (field.v[i] - mean);
  }
  double sd = std::sqrt(ss / static_cast<double>(2 * n));
  if (sd <= 1e-12) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out.u[i] = (field.u[i] - mean) / sd;
    out.v[i] = (field.v[i] - mean) / sd;
  }
  return out;
}

RgbImage flow_to_color(const FlowField& field) {
  RgbImage img(field.width, field.height, 1.0);
  double maxmag = 0.0;
  for (std::size_t i = 0; i < field.u.size(); ++i) maxmag = std::max(maxmag, std::hypot(field.u[i], field.v[i]));
  if (maxmag <= 0.0) return img;
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    double hue = (std::atan2(-field.v[i], -field.u[i]) / M_PI + 1.0) * 3.0;  // [0,6)
    double sat = std::hypot(field.u[i], field.v[i]) / maxmag;
    int sector = static_cast<int>(std::floor(hue)) % 6;
    double f = hue - std::floor(hue);
    double p = 1.0 - sat, q = 1.0 - sat * f, t = 1.0 - sat * (1.0 - f);
    std::array<double, 3> rgb{};
    switch (sector) {
      case 0: rgb = {1.0, t, p}; break;
      case 1: rgb = {q, 1.0, p}; break;
      case 2: rgb = {p, 1.0, t}; break;
      case 3: rgb = {p, q, 1.0}; break;
      case 4: rgb = {t, p, 1.0}; break;
      default: rgb = {1.0, p, q}; break;
    }
    for (std::size_t c = 0; c < 3; ++c) img.rgb[3 * i + c] = rgb[c];
  }
  return img;
}

}  // namespace flowloc
