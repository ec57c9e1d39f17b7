#pragma once

// Dense two-frame optical flow by polynomial expansion (Farneback), plus the
// Middlebury .flo container.

#include <cstddef>
#include <filesystem>
#include <vector>

#include "flowloc/image.hpp"

namespace flowloc {

// Per-pixel displacement from frame a to frame b, in pixels.
// Positive u points right, positive v points down.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), u(w * h, 0.0), v(w * h, 0.0) {}
};

struct FlowParams {
  int pyramid_levels = 3;
  double pyramid_scale = 0.5;
  // Odd neighborhood used for the polynomial fit and for averaging the
  // displacement constraints.
  int window = 15;
  int iterations = 3;
  double poly_sigma = 1.2;

  void validate() const;
};

// Local quadratic model I(x + d) ~ d^T A d + b^T d + c with
// A = [[a11, a12], [a12, a22]], d = (dx, dy) in pixels.
struct PolyExpansion {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> a11, a12, a22, b1, b2, c;
};

// Gaussian-weighted least-squares fit over a window x window neighborhood of
// every pixel. Pixels outside the frame are replicated from the border.
PolyExpansion polynomial_expansion(const Plane& frame, int window, double poly_sigma);

// Coarse-to-fine Farneback estimate. Frames are grayscale in [0,1]; internally
// intensities are expressed in 8-bit units so the singularity threshold of the
// constraint system is scale-independent of the caller's convention.
FlowField estimate_flow(const Plane& frame_a, const Plane& frame_b, const FlowParams& params = {});

// Constraint systems with determinant at or below this are treated as
// textureless and filled from their neighborhood.
inline constexpr double kFlowSingularDet = 1e-9;

// Middlebury: float 202021.25, int32 width, int32 height, then float32 (u,v)
// pairs row-major; all little-endian.
inline constexpr float kFloMagic = 202021.25f;
void write_flo(const FlowField& field, const std::filesystem::path& path);
FlowField read_flo(const std::filesystem::path& path);
std::vector<unsigned char> encode_flo(const FlowField& field);
FlowField decode_flo(const std::vector<unsigned char>& bytes);

// Joint standardization over both channels; zero variance maps to zeros.
FlowField normalize_flow(const FlowField& field);

// Middlebury-style color coding: hue from direction, saturation from
// magnitude relative to the field's maximum.
RgbImage flow_to_color(const FlowField& field);

}  // namespace flowloc
