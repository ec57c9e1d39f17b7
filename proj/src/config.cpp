#include "flowloc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowloc/error.hpp"

namespace flowloc {

namespace fs = std::filesystem;
using nlohmann::json;

VisionPretrain parse_pretrain(const std::string& name) {
  if (name == "none") return VisionPretrain::none;
  if (name == "synthetic") return VisionPretrain::synthetic;
  throw UsageError("unknown vision pretraining '" + name + "' (expected none or synthetic)");
}

std::string pretrain_name(VisionPretrain p) { return p == VisionPretrain::none ? "none" : "synthetic"; }

namespace {

// Reads keys from one JSON object, remembering which were consumed so the
// remainder can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw UsageError("config: '" + where_ + "' must be an object");
  }
  void done() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k)) throw UsageError("config: unknown key '" + where_ + "." + k + "'");
    }
  }

  template <class T>
  void get(const char* key, T& dst) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: bad value for '" + where_ + "." + key + "'");
    }
  }

  void path(const char* key, std::optional<fs::path>& dst, const fs::path& base) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    if (!j_.at(key).is_string()) throw UsageError("config: '" + where_ + "." + key + "' must be a string");
    fs::path p(j_.at(key).get<std::string>());
    dst = p.is_absolute() || base.empty() ? p : base / p;
  }

  std::optional<Section> child(const char* key) {
    used_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return std::optional<Section>(std::in_place, j_.at(key), where_.empty() ? key : where_ + "." + key);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

json opt_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

}  // namespace

RunConfig RunConfig::from_json(const std::string& text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  RunConfig c;
  {
    Section root(j, "");
    root.get("seed", c.seed);
    if (auto m = root.child("model")) {
      std::string variant = variant_name(c.model.variant), pretrain = pretrain_name(c.pretrain_vision);
      m->get("variant", variant);
      c.model.variant = parse_variant(variant);
      m->get("attention_width", c.model.attention_width);
      m->get("visual_stages", c.model.visual.stage_channels);
      m->get("audio_stages", c.model.audio.stage_channels);
      m->get("flow_stages", c.model.flow.stage_channels);
      m->get("frozen_vision", c.model.visual.frozen);
      m->get("pretrain_vision", pretrain);
      c.pretrain_vision = parse_pretrain(pretrain);
      m->path("visual_weights", c.model.visual.pretrained_weights, base);
      m->done();
    }
    if (auto t = root.child("trimap")) {
      t->get("eps_p", c.train.step.trimap.eps_p);
      t->get("eps_n", c.train.step.trimap.eps_n);
      t->get("tau", c.train.step.trimap.tau);
      t->done();
    }
    if (auto o = root.child("optimizer")) {
      o->get("lr", c.train.adam.lr);
      o->get("beta1", c.train.adam.beta1);
      o->get("beta2", c.train.adam.beta2);
      o->get("eps", c.train.adam.eps);
      o->done();
    }
    if (auto t = root.child("train")) {
      std::string reduction = c.train.step.reduction == LossReduction::sum ? "sum" : "mean";
      std::vector<double> crop{c.train.augment.crop_scale_min, c.train.augment.crop_scale_max};
      t->get("epochs", c.train.epochs);
      t->get("batch_size", c.train.batch_size);
      t->get("loss_reduction", reduction);
      t->get("augment", c.train.augment.enabled);
      t->get("flip", c.train.augment.flip);
      t->get("crop_scale", crop);
      t->get("pretrain_samples", c.pretrain.samples);
      t->get("pretrain_epochs", c.pretrain.epochs);
      t->get("pretrain_batch_size", c.pretrain.batch_size);
      t->get("pretrain_lr", c.pretrain.lr);
      if (reduction == "sum") {
        c.train.step.reduction = LossReduction::sum;
      } else if (reduction == "mean") {
        c.train.step.reduction = LossReduction::mean;
      } else {
        throw UsageError("config: train.loss_reduction must be sum or mean");
      }
      if (crop.size() != 2) throw UsageError("config: train.crop_scale must be [min, max]");
      c.train.augment.crop_scale_min = crop[0];
      c.train.augment.crop_scale_max = crop[1];
      t->done();
    }
    if (auto f = root.child("flow")) {
      f->get("pyramid_levels", c.flow.pyramid_levels);
      f->get("pyramid_scale", c.flow.pyramid_scale);
      f->get("window", c.flow.window);
      f->get("iterations", c.flow.iterations);
      f->get("poly_sigma", c.flow.poly_sigma);
      f->done();
    }
    if (auto e = root.child("eval")) {
      e->get("map_threshold", c.eval.map_threshold);
      e->get("auc_steps", c.eval.auc_steps);
      e->get("consensus", c.eval.consensus);
      e->done();
    }
    if (auto p = root.child("paths")) {
      p->path("manifest", c.paths.manifest, base);
      p->path("out", c.paths.out, base);
      p->path("flow_cache", c.paths.flow_cache, base);
      p->path("checkpoint", c.paths.checkpoint, base);
      p->done();
    }
    root.done();
  }
  c.finalize();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), fs::absolute(path).parent_path());
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = {{"variant", variant_name(model.variant)},
                {"attention_width", model.attention_width},
                {"visual_stages", model.visual.stage_channels},
                {"audio_stages", model.audio.stage_channels},
                {"flow_stages", model.flow.stage_channels},
                {"frozen_vision", model.visual.frozen},
                {"pretrain_vision", pretrain_name(pretrain_vision)},
                {"visual_weights", opt_path(model.visual.pretrained_weights)}};
  j["trimap"] = {{"eps_p", train.step.trimap.eps_p}, {"eps_n", train.step.trimap.eps_n}, {"tau", train.step.trimap.tau}};
  j["optimizer"] = {{"lr", train.adam.lr}, {"beta1", train.adam.beta1}, {"beta2", train.adam.beta2}, {"eps", train.adam.eps}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"loss_reduction", train.step.reduction == LossReduction::sum ? "sum" : "mean"},
                {"augment", train.augment.enabled},
                {"flip", train.augment.flip},
                {"crop_scale", {train.augment.crop_scale_min, train.augment.crop_scale_max}},
                {"pretrain_samples", pretrain.samples},
                {"pretrain_epochs", pretrain.epochs},
                {"pretrain_batch_size", pretrain.batch_size},
                {"pretrain_lr", pretrain.lr}};
  j["flow"] = {{"pyramid_levels", flow.pyramid_levels},
               {"pyramid_scale", flow.pyramid_scale},
               {"window", flow.window},
               {"iterations", flow.iterations},
               {"poly_sigma", flow.poly_sigma}};
  j["eval"] = {{"map_threshold", eval.map_threshold}, {"auc_steps", eval.auc_steps}, {"consensus", eval.consensus}};
  j["paths"] = {{"manifest", opt_path(paths.manifest)},
                {"out", opt_path(paths.out)},
                {"flow_cache", opt_path(paths.flow_cache)},
                {"checkpoint", opt_path(paths.checkpoint)}};
  return j.dump(2);
}

void RunConfig::finalize() {
  train.seed = seed;
  pretrain.seed = seed;
  model.validate();
  train.step.trimap.validate();
  train.augment.validate();
  flow.validate();
  if (train.batch_size == 0) throw UsageError("config: train.batch_size must be positive");
  if (!(train.adam.lr >= 0.0)) throw UsageError("config: optimizer.lr must be non-negative");
  if (!(eval.map_threshold >= 0.0 && eval.map_threshold <= 1.0)) throw UsageError("config: eval.map_threshold must be in [0,1]");
  if (eval.auc_steps == 0) throw UsageError("config: eval.auc_steps must be positive");
  if (eval.consensus == 0) throw UsageError("config: eval.consensus must be at least 1");
}

}  // namespace flowloc
