#pragma once

// Dataset manifests, triplet construction (frames -> flow, audio ->
// spectrogram), geometric augmentation and input normalization.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowloc/audio.hpp"
#include "flowloc/image.hpp"
#include "flowloc/metrics.hpp"
#include "flowloc/model.hpp"
#include "flowloc/optical_flow.hpp"

namespace flowloc {

inline constexpr std::size_t kInputSize = 224;

// Manifest text format:
//   #flowloc-manifest v1 split=<tag>
//   <id>\t<frame_t>\t<frame_t1>\t<wav>\t<annotation file or ->\t<label or ->
// Paths are relative to the manifest's directory; lines starting with '#'
// after the header are comments.
struct ManifestRecord {
  std::string id;
  std::filesystem::path frame_t;
  std::filesystem::path frame_t1;
  std::filesystem::path wav;
  std::optional<std::filesystem::path> annotation;
  std::optional<int> label;
};

struct Manifest {
  std::string split = "train";
  std::vector<ManifestRecord> records;  // paths absolute after reading
};

// Throws DataError on format errors, duplicate ids or missing files.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Geometry and storage of one sample at network resolution. Pixel data is
// kept in single precision to bound dataset memory; it is widened when fed.
struct SampleTriplet {
  std::string id;
  std::size_t source_width = 0;
  std::size_t source_height = 0;
  std::vector<float> image;  // [3, 224, 224] in [0, 1]
  std::vector<float> flow;   // [2, 224, 224] in pixels of the 224 grid, not normalized
  std::vector<float> spec;   // [257 * 300]
  std::optional<Annotation> annotation;  // in source pixel coordinates
  std::optional<int> label;

  RgbImage rgb() const;
  FlowField flow_field() const;
  Tensor spec_tensor() const;  // [1, 257, 300]
};

struct BuildOptions {
  FlowParams flow;
  std::optional<std::filesystem::path> flow_cache;  // directory for .flo files
};

// Flow is estimated on the full-resolution frames, then image and flow are
// resized to 224x224 with u, v scaled by the per-axis resize ratio.
SampleTriplet build_triplet(const ManifestRecord& record, const BuildOptions& options,
                            const std::map<std::string, Annotation>* annotations = nullptr);

// Builds every record in parallel; output order follows the manifest.
std::vector<SampleTriplet> build_dataset(const Manifest& manifest, const BuildOptions& options);

// Flow scaled onto a new grid: u *= width / src.width, v *= height / src.height.
FlowField resize_flow(const FlowField& flow, std::size_t width, std::size_t height);

struct AugmentConfig {
  bool enabled = true;
  // Square crop whose area is this fraction of the frame.
  double crop_scale_min = 0.8;
  double crop_scale_max = 1.0;
  bool flip = true;
  void validate() const;
};

struct CropWindow {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  bool flipped = false;
  bool operator==(const CropWindow&) const = default;
};

struct Augmented {
  RgbImage image;
  FlowField flow;
  CropWindow window;  // the geometry applied to both modalities
};

// Draws one crop window and one flip bit from `seed` and applies both to the
// image and the flow; the output keeps the input size.
Augmented augment(const RgbImage& image, const FlowField& flow, std::uint64_t seed, const AugmentConfig& config);
CropWindow draw_window(std::size_t width, std::size_t height, std::uint64_t seed, const AugmentConfig& config);
Augmented apply_window(const RgbImage& image, const FlowField& flow, const CropWindow& window);

RgbImage flip_horizontal(const RgbImage& image);
// Mirrors the field and negates u.
FlowField flip_horizontal(const FlowField& flow);

inline constexpr double kImageMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kImageStd[3] = {0.229, 0.224, 0.225};

struct NormalizedInputs {
  Tensor image;  // [3, H, W]
  Tensor flow;   // [2, H, W]
};
NormalizedInputs normalize_inputs(const RgbImage& image, const FlowField& flow);
// Per-channel (x - mean) / std, as [3, H, W].
Tensor normalize_image(const RgbImage& image);

// Triplet -> network input, optionally augmented with `seed`.
ModelInput make_input(const SampleTriplet& sample, const AugmentConfig* augment = nullptr, std::uint64_t seed = 0);

}  // namespace flowloc
