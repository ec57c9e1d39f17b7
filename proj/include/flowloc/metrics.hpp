#pragma once

// Localization metrics: consensus IoU and the area under its success curve.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowloc/image.hpp"
#include "flowloc/tensor.hpp"

namespace flowloc {

// Axis-aligned box in pixels; covers pixel (px, py) when
// x <= px + 0.5 < x + w and y <= py + 0.5 < y + h.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
};

struct Annotation {
  std::string id;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Box> boxes;
};

struct ConsensusMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t agreement = 1;
  std::vector<std::uint8_t> gt;  // row-major, 1 = positive

  std::size_t area() const;
};

struct EvalResult {
  std::vector<std::string> ids;
  std::vector<double> ciou;
  double ciou_at_05 = 0.0;  // fraction of samples with cIoU >= 0.5
  double auc = 0.0;
};

// Map [m,n] (rows, cols) to a width x height plane, pixel-center aligned
// (the align_corners=false convention).
Plane upsample_bilinear(const Tensor& map, std::size_t width, std::size_t height);

// Pixels covered by at least `agreement` boxes. Throws DataError
// "empty consensus" when no pixel qualifies.
ConsensusMap consensus_map(std::span<const Box> boxes, std::size_t agreement, std::size_t width,
                           std::size_t height);

// Min-max normalizes pred to [0,1] (a constant map becomes all ones), keeps
// pixels >= map_threshold and returns |pred & gt| / |pred | gt|; an empty
// union yields 0.
double ciou(const Plane& pred, const ConsensusMap& gt, double map_threshold = 0.5);

// Mean over t_i = i/steps, i = 1..steps, of the fraction of samples with
// cIoU >= t_i.
double auc(std::span<const double> cious, std::size_t steps = 20);

EvalResult summarize(std::vector<std::string> ids, std::vector<double> cious, std::size_t auc_steps = 20);

// Annotation text format, one sample per line:
//   <id> <width> <height> <x> <y> <w> <h> [<x> <y> <w> <h> ...]
// Blank lines and lines starting with '#' are ignored.
std::map<std::string, Annotation> read_annotations(const std::filesystem::path& path);
std::string format_annotation(const Annotation& a);

// Per-sample table followed by the summary lines.
std::string format_report(const EvalResult& result);

}  // namespace flowloc
