#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "flowloc/commands.hpp"
#include "flowloc/error.hpp"

namespace fs = std::filesystem;
using namespace flowloc;

namespace {

struct Overrides {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> frozen_vision;
  std::optional<std::string> pretrain_vision;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
};

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for all randomness");
  cmd->add_option("--variant", o.variant, "flow, no-flow or maxpool-flow")
      ->check(CLI::IsMember({"flow", "no-flow", "maxpool-flow"}));
  cmd->add_option("--frozen-vision", o.frozen_vision, "Freeze the visual encoder")
      ->check(CLI::IsMember({"true", "false"}));
  cmd->add_option("--pretrain-vision", o.pretrain_vision, "none or synthetic")
      ->check(CLI::IsMember({"none", "synthetic"}));
  cmd->add_option("--epochs", o.epochs, "Override train.epochs");
  cmd->add_option("--batch-size", o.batch_size, "Override train.batch_size");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig cfg = o.config ? RunConfig::load(*o.config) : RunConfig{};
  if (o.seed) cfg.seed = *o.seed;
  if (o.variant) cfg.model.variant = parse_variant(*o.variant);
  if (o.frozen_vision) cfg.model.visual.frozen = *o.frozen_vision == "true";
  if (o.pretrain_vision) cfg.pretrain_vision = parse_pretrain(*o.pretrain_vision);
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  cfg.finalize();
  return cfg;
}

template <class T>
T require(const std::optional<T>& v, const char* flag) {
  if (!v) throw UsageError(std::string(flag) + " is required");
  return *v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowloc: optical-flow-guided sound source localization"};
  app.require_subcommand(1);

  SynthArgs synth;
  std::optional<fs::path> synth_out;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic moving-emitter dataset");
  c_synth->add_option("--spec", synth.spec, "Scene spec JSON")->check(CLI::ExistingFile);
  c_synth->add_option("--scene", synth.variant, "standard, nonsalient or environment (without --spec)");
  c_synth->add_option("--count", synth.count, "Number of samples")->required();
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--split", synth.split, "Split tag and id prefix");
  c_synth->add_option("--out", synth_out, "Output directory")->required();

  Overrides train_o;
  std::optional<fs::path> train_manifest, train_out, train_resume;
  auto* c_train = app.add_subcommand("train", "Train a localization model");
  add_model_flags(c_train, train_o);
  c_train->add_option("--manifest", train_manifest, "Training manifest")->check(CLI::ExistingFile);
  c_train->add_option("--out", train_out, "Run directory");
  c_train->add_option("--checkpoint", train_resume, "Resume from this checkpoint")->check(CLI::ExistingFile);

  Overrides eval_o;
  std::optional<fs::path> eval_manifest, eval_ckpt, eval_report;
  std::string eval_baseline = "model";
  auto* c_eval = app.add_subcommand("eval", "Compute cIoU and AUC on an annotated manifest");
  add_model_flags(c_eval, eval_o);
  c_eval->add_option("--manifest", eval_manifest, "Evaluation manifest")->check(CLI::ExistingFile);
  c_eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->check(CLI::ExistingFile);
  c_eval->add_option("--out", eval_report, "Report file");
  c_eval->add_option("--baseline", eval_baseline, "model, gt-box or constant")
      ->check(CLI::IsMember({"model", "gt-box", "constant"}));

  LocalizeArgs loc;
  std::optional<fs::path> loc_ckpt, loc_out, loc_config;
  auto* c_loc = app.add_subcommand("localize", "Write a heatmap overlay for one frame pair and clip");
  c_loc->add_option("--checkpoint", loc_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  c_loc->add_option("--config", loc_config, "Run configuration (flow settings)")->check(CLI::ExistingFile);
  c_loc->add_option("image", loc.image, "Frame t (PNG)")->required();
  c_loc->add_option("next-image", loc.next_image, "Frame t+1 (PNG)")->required();
  c_loc->add_option("wav", loc.wav, "Audio clip (WAV)")->required();
  c_loc->add_option("--out", loc_out, "Overlay PNG")->required();

  FlowArgs flow;
  auto* c_flow = app.add_subcommand("flow", "Estimate dense optical flow between two frames");
  c_flow->add_option("image-a", flow.image_a, "First frame (PNG)")->required();
  c_flow->add_option("image-b", flow.image_b, "Second frame (PNG)")->required();
  c_flow->add_option("out-flo", flow.out_flo, "Output .flo")->required();
  c_flow->add_option("out-png", flow.out_png, "Color-coded visualization");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) {
      synth.out = *synth_out;
      cmd_synth(synth, std::cout);
    } else if (c_train->parsed()) {
      RunConfig cfg = resolve_config(train_o);
      TrainArgs args{cfg, train_manifest ? *train_manifest : require(cfg.paths.manifest, "--manifest"),
                     train_out ? *train_out : require(cfg.paths.out, "--out"), train_resume};
      auto s = cmd_train(args, std::cout);
      std::cout << "trained " << s.epochs << " epochs (" << s.steps << " steps); checkpoint "
                << s.final_checkpoint.string() << '\n';
    } else if (c_eval->parsed()) {
      RunConfig cfg = resolve_config(eval_o);
      EvalArgs args{cfg, eval_ckpt ? eval_ckpt : cfg.paths.checkpoint,
                    eval_manifest ? *eval_manifest : require(cfg.paths.manifest, "--manifest"), eval_report,
                    parse_baseline(eval_baseline)};
      cmd_eval(args, std::cout);
    } else if (c_loc->parsed()) {
      loc.checkpoint = *loc_ckpt;
      loc.out = *loc_out;
      if (loc_config) loc.flow = RunConfig::load(*loc_config).flow;
      cmd_localize(loc, std::cout);
    } else if (c_flow->parsed()) {
      cmd_flow(flow, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
