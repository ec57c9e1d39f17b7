#pragma once

// The command implementations behind the flowloc executable. Each throws a
// flowloc::Error subclass on failure; the executable maps those to exit codes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "flowloc/config.hpp"
#include "flowloc/data.hpp"
#include "flowloc/metrics.hpp"
#include "flowloc/synth.hpp"

namespace flowloc {

struct SynthArgs {
  std::optional<std::filesystem::path> spec;  // JSON SceneSpec; preset of `variant` when absent
  std::string variant = "standard";
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::string split = "train";
  std::filesystem::path out;
};
Manifest cmd_synth(const SynthArgs& args, std::ostream& log);

struct TrainArgs {
  RunConfig config;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
};

struct TrainSummary {
  std::size_t epochs = 0;
  std::uint64_t steps = 0;
  std::optional<double> first_loss;
  std::optional<double> last_loss;
  std::filesystem::path final_checkpoint;
};

// Writes <out>/latest.ckpt after every epoch, <out>/final.ckpt at the end,
// <out>/train_log.tsv (step, loss, wall seconds) and <out>/config.json.
TrainSummary cmd_train(const TrainArgs& args, std::ostream& log);

// Maps used in place of the model's output, for calibrating the metric.
enum class EvalBaseline { model, gt_box, constant };
EvalBaseline parse_baseline(const std::string& name);  // model | gt-box | constant

struct EvalArgs {
  RunConfig config;
  std::optional<std::filesystem::path> checkpoint;  // required for the model baseline
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> report;
  EvalBaseline baseline = EvalBaseline::model;
};
EvalResult cmd_eval(const EvalArgs& args, std::ostream& out);

struct LocalizeArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::filesystem::path next_image;
  std::filesystem::path wav;
  std::filesystem::path out;  // overlay PNG; the raw map goes to <stem>.map.png
  FlowParams flow;
};

struct LocalizeResult {
  Plane map;  // upsampled S at source resolution
  std::size_t peak_x = 0;
  std::size_t peak_y = 0;
  std::filesystem::path map_path;
};
LocalizeResult cmd_localize(const LocalizeArgs& args, std::ostream& log);

struct FlowArgs {
  std::filesystem::path image_a;
  std::filesystem::path image_b;
  std::filesystem::path out_flo;
  std::optional<std::filesystem::path> out_png;
  FlowParams params;
};
FlowField cmd_flow(const FlowArgs& args, std::ostream& log);

// Model built from a checkpoint's architecture entries and loaded with its
// parameters.
LocalizationModel load_model(const std::filesystem::path& checkpoint);

}  // namespace flowloc
