#pragma once

// Synthetic moving-emitter scenes: two frames, a class tone and the box of
// the sounding shape.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowloc/audio.hpp"
#include "flowloc/data.hpp"
#include "flowloc/image.hpp"
#include "flowloc/metrics.hpp"

namespace flowloc {

enum class ShapeKind { circle, square, triangle, diamond };

// standard:    one moving emitter and same-sized static distractors.
// nonsalient:  small low-contrast emitter, large high-contrast distractors.
// environment: static emitter, moving background, no distractors.
enum class SceneVariant { standard, nonsalient, environment };

SceneVariant parse_scene_variant(const std::string& name);
std::string scene_variant_name(SceneVariant v);

struct ShapeClass {
  std::string name;
  ShapeKind kind = ShapeKind::circle;
  double frequency = 500.0;  // Hz
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneSpec {
  std::size_t canvas = 224;
  SceneVariant variant = SceneVariant::standard;
  std::vector<ShapeClass> classes{{"circle", ShapeKind::circle, 500.0},
                                  {"square", ShapeKind::square, 1000.0},
                                  {"triangle", ShapeKind::triangle, 2000.0},
                                  {"diamond", ShapeKind::diamond, 3000.0}};
  Range speed{2.0, 4.0};  // px/frame; applies to the background for environment scenes
  Range mover_radius{26.0, 40.0};
  double mover_contrast = 0.35;
  double mover_texture = 0.15;
  std::size_t distractors = 1;
  Range distractor_radius{26.0, 40.0};
  double distractor_contrast = 0.35;
  double distractor_texture = 0.15;
  double background_texture = 0.08;
  double pixel_noise = 0.01;
  double tone_amplitude = 0.5;
  double audio_noise = 0.05;
  double duration = 3.0;  // seconds

  // Defaults tuned per variant.
  static SceneSpec preset(SceneVariant variant);
  static SceneSpec from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;
};

struct SceneSample {
  RgbImage frame_t;
  RgbImage frame_t1;
  AudioClip audio;
  Box box;             // pixel bounding box of the emitter in frame_t
  std::vector<std::uint8_t> emitter_mask;  // frame_t, row-major
  int label = 0;
  double velocity_x = 0.0;
  double velocity_y = 0.0;
};

inline constexpr int kSceneMaxAttempts = 100;

// Deterministic in (spec, seed).
SceneSample render_scene(const SceneSpec& spec, std::uint64_t seed);

// Writes frames/<id>_t.png, frames/<id>_t1.png, audio/<id>.wav,
// annotations.txt and manifest.tsv below out_dir. Sample i uses
// derive_seed(seed, i).
Manifest synth_generate(const SceneSpec& spec, std::size_t count, std::uint64_t seed,
                        const std::filesystem::path& out_dir, const std::string& split = "train");

}  // namespace flowloc
