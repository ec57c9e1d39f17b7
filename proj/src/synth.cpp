#include "flowloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowloc/encoders.hpp"
#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

namespace fs = std::filesystem;
using nlohmann::json;

SceneVariant parse_scene_variant(const std::string& name) {
  if (name == "standard") return SceneVariant::standard;
  if (name == "nonsalient") return SceneVariant::nonsalient;
  if (name == "environment") return SceneVariant::environment;
  throw UsageError("unknown scene variant '" + name + "' (expected standard, nonsalient or environment)");
}

std::string scene_variant_name(SceneVariant v) {
  switch (v) {
    case SceneVariant::standard: return "standard";
    case SceneVariant::nonsalient: return "nonsalient";
    case SceneVariant::environment: return "environment";
  }
  return "?";
}

namespace {

ShapeKind parse_kind(const std::string& s) {
  if (s == "circle") return ShapeKind::circle;
  if (s == "square") return ShapeKind::square;
  if (s == "triangle") return ShapeKind::triangle;
  if (s == "diamond") return ShapeKind::diamond;
  throw UsageError("scene spec: unknown shape '" + s + "'");
}

std::string kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::diamond: return "diamond";
  }
  return "?";
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw UsageError(where + ": unknown key '" + k + "'");
  }
}

Range read_range(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2) throw UsageError("scene spec: '" + key + "' must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

SceneSpec SceneSpec::preset(SceneVariant variant) {
  SceneSpec s;
  s.variant = variant;
  switch (variant) {
    case SceneVariant::standard:
      break;
    case SceneVariant::nonsalient:
      s.mover_radius = {20.0, 28.0};
      s.mover_contrast = 0.12;
      s.mover_texture = 0.05;
      s.distractor_radius = {40.0, 52.0};
      s.distractor_contrast = 0.55;
      s.distractor_texture = 0.3;
      break;
    case SceneVariant::environment:
      s.distractors = 0;
      s.background_texture = 0.25;
      break;
  }
  return s;
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("scene spec: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("scene spec: expected a JSON object");
  reject_unknown(j,
                 {"canvas", "variant", "classes", "speed", "mover_radius", "mover_contrast", "mover_texture",
                  "distractors", "distractor_radius", "distractor_contrast", "distractor_texture",
                  "background_texture", "pixel_noise", "tone_amplitude", "audio_noise", "duration"},
                 "scene spec");
  try {
    SceneSpec s = preset(j.contains("variant") ? parse_scene_variant(j["variant"].get<std::string>())
                                               : SceneVariant::standard);
    if (j.contains("canvas")) s.canvas = j["canvas"].get<std::size_t>();
    if (j.contains("classes")) {
      s.classes.clear();
      for (const auto& c : j["classes"]) {
        reject_unknown(c, {"name", "shape", "frequency"}, "scene spec class");
        ShapeClass sc;
        sc.kind = parse_kind(c.at("shape").get<std::string>());
        sc.name = c.value("name", kind_name(sc.kind));
        sc.frequency = c.at("frequency").get<double>();
        s.classes.push_back(sc);
      }
    }
    if (j.contains("speed")) s.speed = read_range(j["speed"], "speed");
    if (j.contains("mover_radius")) s.mover_radius = read_range(j["mover_radius"], "mover_radius");
    if (j.contains("distractor_radius")) s.distractor_radius = read_range(j["distractor_radius"], "distractor_radius");
    if (j.contains("distractors")) s.distractors = j["distractors"].get<std::size_t>();
    auto number = [&](const char* key, double& dst) {
      if (j.contains(key)) dst = j[key].get<double>();
    };
    number("mover_contrast", s.mover_contrast);
    number("mover_texture", s.mover_texture);
    number("distractor_contrast", s.distractor_contrast);
    number("distractor_texture", s.distractor_texture);
    number("background_texture", s.background_texture);
    number("pixel_noise", s.pixel_noise);
    number("tone_amplitude", s.tone_amplitude);
    number("audio_noise", s.audio_noise);
    number("duration", s.duration);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw UsageError(std::string("scene spec: ") + e.what());
  }
}

std::string SceneSpec::to_json() const {
  json j;
  j["canvas"] = canvas;
  j["variant"] = scene_variant_name(variant);
  j["classes"] = json::array();
  for (const auto& c : classes) j["classes"].push_back({{"name", c.name}, {"shape", kind_name(c.kind)}, {"frequency", c.frequency}});
  j["speed"] = {speed.lo, speed.hi};
  j["mover_radius"] = {mover_radius.lo, mover_radius.hi};
  j["mover_contrast"] = mover_contrast;
  j["mover_texture"] = mover_texture;
  j["distractors"] = distractors;
  j["distractor_radius"] = {distractor_radius.lo, distractor_radius.hi};
  j["distractor_contrast"] = distractor_contrast;
  j["distractor_texture"] = distractor_texture;
  j["background_texture"] = background_texture;
  j["pixel_noise"] = pixel_noise;
  j["tone_amplitude"] = tone_amplitude;
  j["audio_noise"] = audio_noise;
  j["duration"] = duration;
  return j.dump(2);
}

void SceneSpec::validate() const {
  if (canvas < 32) throw UsageError("scene spec: canvas must be at least 32 px");
  if (classes.empty()) throw UsageError("scene spec: at least one class required");
  std::set<double> freqs;
  for (const auto& c : classes) {
    if (!(c.frequency > 0.0 && c.frequency < kSampleRate / 2.0)) {
      throw UsageError("scene spec: class " + c.name + " frequency must be in (0, 8000) Hz");
    }
    if (!freqs.insert(c.frequency).second) throw UsageError("scene spec: class frequencies must be distinct");
  }
  const std::pair<Range, const char*> ranges[] = {
      {speed, "speed"}, {mover_radius, "mover_radius"}, {distractor_radius, "distractor_radius"}};
  for (const auto& [r, what] : ranges) {
    if (!(r.lo >= 0.0 && r.lo <= r.hi)) throw UsageError(std::string("scene spec: bad range for ") + what);
  }
  if (!(mover_radius.lo >= 2.0)) throw UsageError("scene spec: mover radius must be at least 2 px");
  if (distractors > 0 && classes.size() < 2) throw UsageError("scene spec: distractors need a second class");
  // The emitter must stay inside the canvas in both frames.
  const double margin = mover_radius.hi + speed.hi + 2.0;
  if (2.0 * margin >= static_cast<double>(canvas)) {
    throw UsageError("scene spec: moving shape leaves the canvas (radius + speed too large for canvas)");
  }
  if (distractors > 0 && 2.0 * (distractor_radius.hi + 2.0) >= static_cast<double>(canvas)) {
    throw UsageError("scene spec: distractor does not fit the canvas");
  }
  if (!(duration * kSampleRate >= kFftSize)) throw UsageError("scene spec: duration too short");
  for (double v : {mover_contrast, mover_texture, distractor_contrast, distractor_texture, background_texture,
                   pixel_noise, tone_amplitude, audio_noise}) {
    if (!(v >= 0.0 && std::isfinite(v))) throw UsageError("scene spec: amplitudes must be finite and non-negative");
  }
}

namespace {

struct Texture {
  double kx[3], ky[3], phase[3];
  double amp = 0.0;

  double eval(double x, double y) const {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += std::sin(kx[i] * x + ky[i] * y + phase[i]);
    return amp * v / 3.0;
  }
};

double sign(std::mt19937_64& rng) { return uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0; }

Texture draw_texture(std::mt19937_64& rng, double amp) {
  Texture t;
  for (int i = 0; i < 3; ++i) {
    t.kx[i] = uniform(rng, 0.15, 0.4) * sign(rng);
    t.ky[i] = uniform(rng, 0.15, 0.4) * sign(rng);
  }
  for (double& p : t.phase) p = uniform(rng, 0.0, 2.0 * M_PI);
  t.amp = amp;
  return t;
}

double gaussian(std::mt19937_64& rng) {
  double u1 = uniform(rng, 0.0, 1.0), u2 = uniform(rng, 0.0, 1.0);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))));
}

bool inside(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::triangle: return dy <= r && dy >= -r && std::abs(dx) <= (dy + r) * 0.5;
    case ShapeKind::diamond: return std::abs(dx) + std::abs(dy) <= r;
  }
  return false;
}

struct SceneShape {
  ShapeKind kind;
  double cx, cy, r;
  double color[3];
  Texture texture;
};

SceneShape make_shape(std::mt19937_64& rng, ShapeKind kind, double cx, double cy, double r, const double base[3],
                 double contrast, double texture_amp) {
  SceneShape s{kind, cx, cy, r, {}, draw_texture(rng, texture_amp)};
  double col[3], peak = 0.0;
  for (double& c : col) {
    c = uniform(rng, -1.0, 1.0);
    peak = std::max(peak, std::abs(c));
  }
  if (peak == 0.0) peak = 1.0;
  for (int c = 0; c < 3; ++c) s.color[c] = base[c] + contrast * col[c] / peak;
  return s;
}

// Paints `s` displaced by (ox, oy); returns its coverage when `mask` is given.
void paint(RgbImage& img, const SceneShape& s, double ox, double oy, std::vector<std::uint8_t>* mask) {
  const double cx = s.cx + ox, cy = s.cy + oy;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      if (!inside(s.kind, px - cx, py - cy, s.r)) continue;
      const double t = s.texture.eval(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = s.color[c] + t;
      if (mask) (*mask)[y * img.width + x] = 1;
    }
  }
}

}  // namespace

SceneSample render_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double w = static_cast<double>(spec.canvas);
  const bool env = spec.variant == SceneVariant::environment;

  Texture bg = draw_texture(rng, spec.background_texture);
  double base[3];
  for (double& b : base) b = uniform(rng, 0.3, 0.5);
  const double speed = uniform(rng, spec.speed.lo, spec.speed.hi);
  const double angle = uniform(rng, 0.0, 2.0 * M_PI);
  SceneSample out;
  out.velocity_x = speed * std::cos(angle);
  out.velocity_y = speed * std::sin(angle);
  const double r_m = uniform(rng, spec.mover_radius.lo, spec.mover_radius.hi);
  out.label = static_cast<int>(draw_index(rng, spec.classes.size()));
  const double margin = r_m + spec.speed.hi + 2.0;
  const double cx = uniform(rng, margin, w - margin), cy = uniform(rng, margin, w - margin);

  std::vector<SceneShape> distractors;
  for (std::size_t d = 0; d < spec.distractors; ++d) {
    for (int attempt = 0; attempt < kSceneMaxAttempts; ++attempt) {
      const std::size_t other = (static_cast<std::size_t>(out.label) + 1 + draw_index(rng, spec.classes.size() - 1)) %
                                spec.classes.size();
      const double dr = uniform(rng, spec.distractor_radius.lo, spec.distractor_radius.hi);
      const double dx = uniform(rng, dr + 2.0, w - dr - 2.0), dy = uniform(rng, dr + 2.0, w - dr - 2.0);
      bool clear = std::hypot(dx - cx, dy - cy) > dr + r_m + spec.speed.hi + 12.0;
      for (const auto& s : distractors) clear = clear && std::hypot(dx - s.cx, dy - s.cy) > dr + s.r + 4.0;
      if (clear) {
        distractors.push_back(make_shape(rng, spec.classes[other].kind, dx, dy, dr, base, spec.distractor_contrast,
                                         spec.distractor_texture));
        break;
      }
    }
  }
  SceneShape mover = make_shape(rng, spec.classes[static_cast<std::size_t>(out.label)].kind, cx, cy, r_m, base,
                           spec.mover_contrast, spec.mover_texture);

  // Sensor noise is a fixed pattern shared by both frames, so a static scene
  // renders identical frames.
  std::vector<double> noise(spec.canvas * spec.canvas * 3);
  for (double& n : noise) n = spec.pixel_noise * gaussian(rng);

  out.emitter_mask.assign(spec.canvas * spec.canvas, 0);
  for (int f = 0; f < 2; ++f) {
    const double ox = env ? 0.0 : out.velocity_x * f, oy = env ? 0.0 : out.velocity_y * f;
    const double bx = env ? out.velocity_x * f : 0.0, by = env ? out.velocity_y * f : 0.0;
    RgbImage img(spec.canvas, spec.canvas);
    for (std::size_t y = 0; y < spec.canvas; ++y) {
      for (std::size_t x = 0; x < spec.canvas; ++x) {
        const double t = bg.eval(static_cast<double>(x) - bx, static_cast<double>(y) - by);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = base[c] + t;
      }
    }
    for (const auto& d : distractors) paint(img, d, 0.0, 0.0, nullptr);
    paint(img, mover, ox, oy, f == 0 ? &out.emitter_mask : nullptr);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = std::clamp(img.rgb[i] + noise[i], 0.0, 1.0);
    (f == 0 ? out.frame_t : out.frame_t1) = std::move(img);
  }

  std::size_t x0 = spec.canvas, y0 = spec.canvas, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < spec.canvas; ++y) {
    for (std::size_t x = 0; x < spec.canvas; ++x) {
      if (!out.emitter_mask[y * spec.canvas + x]) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x0 > x1) throw DataError("render_scene: emitter covers no pixels");
  out.box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
             static_cast<double>(y1 - y0 + 1)};

  const auto n = static_cast<std::size_t>(std::lround(spec.duration * kSampleRate));
  const double freq = spec.classes[static_cast<std::size_t>(out.label)].frequency;
  out.audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    out.audio.samples[i] = spec.tone_amplitude * std::sin(2.0 * M_PI * freq * t) + spec.audio_noise * gaussian(rng);
  }
  return out;
}

Manifest synth_generate(const SceneSpec& spec, std::size_t count, std::uint64_t seed, const fs::path& out_dir,
                        const std::string& split) {
  spec.validate();
  fs::create_directories(out_dir / "frames");
  fs::create_directories(out_dir / "audio");
  const fs::path annotation_path = out_dir / "annotations.txt";
  Manifest m;
  m.split = split;
  m.records.resize(count);
  std::vector<std::string> lines(count);
  std::vector<std::string> errors(count);
  parallel_for(count, [&](std::size_t i) {
    try {
      std::ostringstream id;
      id << split << '_' << std::setw(5) << std::setfill('0') << i;
      auto scene = render_scene(spec, derive_seed(seed, i));
      ManifestRecord& r = m.records[i];
      r.id = id.str();
      r.frame_t = out_dir / "frames" / (r.id + "_t.png");
      r.frame_t1 = out_dir / "frames" / (r.id + "_t1.png");
      r.wav = out_dir / "audio" / (r.id + ".wav");
      r.annotation = annotation_path;
      r.label = scene.label;
      write_png(r.frame_t, scene.frame_t);
      write_png(r.frame_t1, scene.frame_t1);
      write_wav(r.wav, scene.audio);
      lines[i] = format_annotation({r.id, spec.canvas, spec.canvas, {scene.box}});
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }
  std::string text = "# id width height x y w h\n";
  for (const auto& l : lines) text += l + '\n';
  write_text_atomic(annotation_path, text);
  write_text_atomic(out_dir / "scene.json", spec.to_json() + '\n');
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace flowloc
