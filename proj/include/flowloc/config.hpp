#pragma once

// Run configuration: one JSON document holding every module's settings.
// Unknown keys are rejected at every level; absent keys keep their defaults.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "flowloc/model.hpp"
#include "flowloc/optical_flow.hpp"
#include "flowloc/training.hpp"

namespace flowloc {

enum class VisionPretrain { none, synthetic };

VisionPretrain parse_pretrain(const std::string& name);  // none | synthetic
std::string pretrain_name(VisionPretrain p);

struct EvalConfig {
  double map_threshold = 0.5;
  std::size_t auc_steps = 20;
  std::size_t consensus = 1;
};

struct PathConfig {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> flow_cache;
  std::optional<std::filesystem::path> checkpoint;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  VisionPretrain pretrain_vision = VisionPretrain::none;
  PretrainConfig pretrain;
  TrainConfig train;
  FlowParams flow;
  EvalConfig eval;
  PathConfig paths;

  // Relative paths inside the document resolve against `base`.
  static RunConfig from_json(const std::string& text, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json() const;
  // Propagates the top-level seed into the per-module seeds and validates.
  void finalize();
};

}  // namespace flowloc
