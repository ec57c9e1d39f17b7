#include "flowloc/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cull;

std::string read_text(const fs::path& p) {
  auto bytes = read_file(p);
  return {bytes.begin(), bytes.end()};
}

BuildOptions build_options(const RunConfig& cfg) { return {cfg.flow, cfg.paths.flow_cache}; }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

Manifest cmd_synth(const SynthArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("synth: --out is required");
  SceneSpec spec = args.spec ? SceneSpec::from_json(read_text(*args.spec))
                             : SceneSpec::preset(parse_scene_variant(args.variant));
  auto m = synth_generate(spec, args.count, args.seed, args.out, args.split);
  log << "wrote " << m.records.size() << " samples to " << (args.out / "manifest.tsv").string() << '\n';
  return m;
}

LocalizationModel load_model(const fs::path& checkpoint) {
  auto blobs = read_blobs(checkpoint);
  LocalizationModel model(LocalizationModel::config_from_blobs(blobs), 0);
  model.load_blobs(blobs);
  return model;
}

TrainSummary cmd_train(const TrainArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("train: --out is required");
  RunConfig cfg = args.config;
  cfg.finalize();
  fs::create_directories(args.out);
  if (!cfg.paths.flow_cache) cfg.paths.flow_cache = args.out / "flow_cache";

  auto manifest = read_manifest(args.manifest);
  log << "building " << manifest.records.size() << " triplets\n";
  auto data = build_dataset(manifest, build_options(cfg));

  LocalizationModel model(cfg.model, derive_seed(cfg.seed, kModelStream));
  Trainer trainer(model, data, cfg.train);
  if (args.resume) {
    trainer.restore(read_blobs(*args.resume));
    log << "resumed at epoch " << trainer.epochs_done() << ", step " << trainer.steps_done() << '\n';
  } else if (cfg.pretrain_vision == VisionPretrain::synthetic) {
    // Scenes follow the dataset's generator settings when synth left them
    // next to the manifest.
    const fs::path scene_path = args.manifest.parent_path() / "scene.json";
    const SceneSpec scenes = fs::exists(scene_path) ? SceneSpec::from_json(read_text(scene_path)) : SceneSpec{};
    double ce = pretrain_vision(model.visual_encoder(), scenes, cfg.pretrain);
    log << "vision pretraining: mean cross-entropy " << ce << '\n';
  }
  write_text_atomic(args.out / "config.json", cfg.to_json() + '\n');

  const fs::path log_path = args.out / "train_log.tsv";
  std::ofstream tlog;
  if (args.resume && fs::exists(log_path)) {
    // Keep only the entries up to the resumed step.
    std::ifstream in(log_path);
    std::string line, kept;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] != '#' && std::stoull(line.substr(0, line.find('\t'))) > trainer.steps_done()) break;
      kept += line + '\n';
    }
    in.close();
    std::ofstream(log_path, std::ios::trunc) << kept;
    tlog.open(log_path, std::ios::app);
  } else {
    tlog.open(log_path, std::ios::trunc);
    tlog << "# step\tloss\twall_seconds\n";
  }
  if (!tlog) throw DataError("cannot write " + log_path.string());

  TrainSummary summary;
  trainer.run(
      [&](const StepLog& s) {
        tlog << s.step << '\t' << fmt(s.loss) << '\t' << std::fixed << std::setprecision(3) << s.wall_seconds
             << std::defaultfloat << '\n';
        tlog.flush();
        if (!summary.first_loss) summary.first_loss = s.loss;
        summary.last_loss = s.loss;
      },
      [&](std::size_t epoch) {
        write_blobs(args.out / "latest.ckpt", trainer.checkpoint());
        log << "epoch " << epoch << "/" << cfg.train.epochs << " loss " << (summary.last_loss ? *summary.last_loss : 0.0)
            << '\n';
      });
  summary.final_checkpoint = args.out / "final.ckpt";
  write_blobs(summary.final_checkpoint, trainer.checkpoint());
  summary.epochs = trainer.epochs_done();
  summary.steps = trainer.steps_done();
  return summary;
}

EvalBaseline parse_baseline(const std::string& name) {
  if (name == "model") return EvalBaseline::model;
  if (name == "gt-box") return EvalBaseline::gt_box;
  if (name == "constant") return EvalBaseline::constant;
  throw UsageError("unknown baseline '" + name + "' (expected model, gt-box or constant)");
}

EvalResult cmd_eval(const EvalArgs& args, std::ostream& out) {
  RunConfig cfg = args.config;
  cfg.finalize();
  auto manifest = read_manifest(args.manifest);
  for (const auto& r : manifest.records) {
    if (!r.annotation) throw DataError("eval: sample " + r.id + " has no annotation");
  }
  std::optional<LocalizationModel> model;
  if (args.baseline == EvalBaseline::model) {
    if (!args.checkpoint) throw UsageError("eval: --checkpoint is required");
    model.emplace(load_model(*args.checkpoint));
  }
  auto data = build_dataset(manifest, build_options(cfg));
  std::vector<double> cious(data.size());
  std::vector<std::string> ids(data.size()), errors(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto& s = data[i];
    ids[i] = s.id;
    try {
      const auto& a = *s.annotation;
      if (a.width != s.source_width || a.height != s.source_height) {
        throw DataError("eval: annotation size of " + s.id + " does not match its frame");
      }
      auto gt = consensus_map(a.boxes, cfg.eval.consensus, a.width, a.height);
      Plane pred(a.width, a.height);
      switch (args.baseline) {
        case EvalBaseline::model:
          pred = upsample_bilinear(model->localize(make_input(s)), a.width, a.height);
          break;
        case EvalBaseline::gt_box:
          for (std::size_t p = 0; p < gt.gt.size(); ++p) pred.values[p] = gt.gt[p];
          break;
        case EvalBaseline::constant:
          break;
      }
      cious[i] = ciou(pred, gt, cfg.eval.map_threshold);
    } catch (const std::exception& e) {
      errors[i] = std::string("sample ") + s.id + ": " + e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }
  auto result = summarize(std::move(ids), std::move(cious), cfg.eval.auc_steps);
  const std::string report = format_report(result);
  out << report;
  if (args.report) write_text_atomic(*args.report, report);
  return result;
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red ramp for t in [0, 1].
void heat_color(double t, double rgb[3]) {
  static constexpr double stops[4][3] = {{0.0, 0.0, 0.8}, {0.0, 0.9, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}};
  t = std::clamp(t, 0.0, 1.0) * 3.0;
  const int i = std::min(2, static_cast<int>(t));
  const double f = t - i;
  for (int c = 0; c < 3; ++c) rgb[c] = stops[i][c] * (1.0 - f) + stops[i + 1][c] * f;
}

Plane normalized(const Plane& p) {
  Plane out = p;
  auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  const double range = *hi - *lo;
  for (auto& v : out.values) v = range > 0.0 ? (v - *lo) / range : 1.0;
  return out;
}

}  // namespace

LocalizeResult cmd_localize(const LocalizeArgs& args, std::ostream& log) {
  auto model = load_model(args.checkpoint);
  ManifestRecord rec{"input", args.image, args.next_image, args.wav, std::nullopt, std::nullopt};
  for (const auto& p : {rec.frame_t, rec.frame_t1, rec.wav}) {
    if (!fs::is_regular_file(p)) throw DataError("localize: missing file " + p.string());
  }
  auto sample = build_triplet(rec, {args.flow, std::nullopt});
  auto frame = read_png(args.image);
  LocalizeResult r;
  r.map = upsample_bilinear(model.localize(make_input(sample)), frame.width, frame.height);
  auto peak = std::max_element(r.map.values.begin(), r.map.values.end()) - r.map.values.begin();
  r.peak_x = static_cast<std::size_t>(peak) % frame.width;
  r.peak_y = static_cast<std::size_t>(peak) / frame.width;

  const Plane norm = normalized(r.map);
  RgbImage overlay = frame;
  for (std::size_t i = 0; i < norm.values.size(); ++i) {
    double rgb[3];
    heat_color(norm.values[i], rgb);
    for (int c = 0; c < 3; ++c) overlay.rgb[i * 3 + c] = 0.5 * frame.rgb[i * 3 + c] + 0.5 * rgb[c];
  }
  write_png(args.out, overlay);
  r.map_path = args.out.parent_path() / (args.out.stem().string() + ".map.png");
  write_png(r.map_path, norm);
  log << "peak at (" << r.peak_x << ", " << r.peak_y << "); wrote " << args.out.string() << " and "
      << r.map_path.string() << '\n';
  return r;
}

FlowField cmd_flow(const FlowArgs& args, std::ostream& log) {
  auto a = read_png(args.image_a);
  auto b = read_png(args.image_b);
  if (a.width != b.width || a.height != b.height) throw DataError("flow: input images differ in size");
  auto field = estimate_flow(to_gray(a), to_gray(b), args.params);
  write_flo(field, args.out_flo);
  if (args.out_png) write_png(*args.out_png, flow_to_color(field));
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    mu += field.u[i];
    mv += field.v[i];
  }
  const double n = static_cast<double>(field.u.size());
  log << "mean flow (" << mu / n << ", " << mv / n << ") px; wrote " << args.out_flo.string() << '\n';
  return field;
}

}  // namespace flowloc
