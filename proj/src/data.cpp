#include "flowloc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "flowloc/encoders.hpp"
#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestTag = "#flowloc-manifest";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

fs::path resolve(const fs::path& base, const std::string& field) {
  fs::path p(field);
  return p.is_absolute() ? p : base / p;
}

void require_file(const fs::path& p, const std::string& id) {
  if (!fs::is_regular_file(p)) throw DataError("sample " + id + ": missing file " + p.string());
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  Manifest m;
  std::string line;
  if (!std::getline(in, line) || !line.starts_with(kManifestTag)) {
    throw DataError(path.string() + ": missing '#flowloc-manifest v1' header");
  }
  {
    std::istringstream hs(line);
    std::string tag, version, kv;
    hs >> tag >> version;
    if (version != "v1") throw DataError(path.string() + ": unsupported manifest version '" + version + "'");
    while (hs >> kv) {
      if (kv.starts_with("split=")) m.split = kv.substr(6);
    }
  }
  std::set<std::string> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    auto f = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw DataError(where + ": expected 6 tab-separated fields, got " + std::to_string(f.size()));
    ManifestRecord r;
    r.id = f[0];
    if (r.id.empty() || r.id == "-") throw DataError(where + ": empty sample id");
    if (!seen.insert(r.id).second) throw DataError(where + ": duplicate sample id " + r.id);
    r.frame_t = resolve(base, f[1]);
    r.frame_t1 = resolve(base, f[2]);
    r.wav = resolve(base, f[3]);
    if (f[4] != "-") r.annotation = resolve(base, f[4]);
    if (f[5] != "-") {
      try {
        std::size_t used = 0;
        r.label = std::stoi(f[5], &used);
        if (used != f[5].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(where + ": bad label '" + f[5] + "'");
      }
    }
    for (const auto& p : {r.frame_t, r.frame_t1, r.wav}) require_file(p, r.id);
    if (r.annotation) require_file(*r.annotation, r.id);
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
  std::ostringstream os;
  os << kManifestTag << " v1 split=" << manifest.split << '\n';
  for (const auto& r : manifest.records) {
    os << r.id << '\t' << rel(r.frame_t) << '\t' << rel(r.frame_t1) << '\t' << rel(r.wav) << '\t'
       << (r.annotation ? rel(*r.annotation) : "-") << '\t' << (r.label ? std::to_string(*r.label) : "-") << '\n';
  }
  write_text_atomic(path, os.str());
}

// -- triplets -------------------------------------------------------------------

RgbImage SampleTriplet::rgb() const {
  RgbImage img(kInputSize, kInputSize);
  const std::size_t hw = kInputSize * kInputSize;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) img.rgb[i * 3 + c] = image[c * hw + i];
  }
  return img;
}

FlowField SampleTriplet::flow_field() const {
  FlowField f(kInputSize, kInputSize);
  const std::size_t hw = kInputSize * kInputSize;
  std::copy(flow.begin(), flow.begin() + static_cast<long>(hw), f.u.begin());
  std::copy(flow.begin() + static_cast<long>(hw), flow.end(), f.v.begin());
  return f;
}

Tensor SampleTriplet::spec_tensor() const {
  return Tensor::from({1, kFreqBins, kSpecFrames}, std::vector<double>(spec.begin(), spec.end()));
}

FlowField resize_flow(const FlowField& flow, std::size_t width, std::size_t height) {
  if (flow.width == 0 || flow.height == 0) throw ShapeError("resize_flow: empty field");
  Plane u(flow.width, flow.height), v(flow.width, flow.height);
  u.values = flow.u;
  v.values = flow.v;
  auto ru = resize_bilinear(u, width, height);
  auto rv = resize_bilinear(v, width, height);
  const double sx = static_cast<double>(width) / static_cast<double>(flow.width);
  const double sy = static_cast<double>(height) / static_cast<double>(flow.height);
  FlowField out(width, height);
  for (std::size_t i = 0; i < out.u.size(); ++i) {
    out.u[i] = ru.values[i] * sx;
    out.v[i] = rv.values[i] * sy;
  }
  return out;
}

namespace {

std::string flow_cache_name(const std::string& id, const FlowParams& p) {
  std::ostringstream key;
  key << p.pyramid_levels << ':' << p.pyramid_scale << ':' << p.window << ':' << p.iterations << ':' << p.poly_sigma;
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : key.str()) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
  std::ostringstream name;
  name << id << '.' << std::hex << (h & 0xffffffffu) << ".flo";
  return name.str();
}

FlowField compute_or_load_flow(const ManifestRecord& r, const Plane& a, const Plane& b, const BuildOptions& opt) {
  std::optional<fs::path> cached;
  if (opt.flow_cache) {
    cached = *opt.flow_cache / flow_cache_name(r.id, opt.flow);
    if (fs::exists(*cached)) {
      auto f = read_flo(*cached);
      if (f.width == a.width && f.height == a.height) return f;
    }
  }
  auto f = estimate_flow(a, b, opt.flow);
  if (cached) {
    fs::create_directories(cached->parent_path());
    write_flo(f, *cached);
  }
  return f;
}

}  // namespace

SampleTriplet build_triplet(const ManifestRecord& r, const BuildOptions& options,
                            const std::map<std::string, Annotation>* annotations) {
  auto frame_a = read_png(r.frame_t);
  auto frame_b = read_png(r.frame_t1);
  if (frame_a.width != frame_b.width || frame_a.height != frame_b.height) {
    throw DataError("sample " + r.id + ": frame sizes differ (" + std::to_string(frame_a.width) + "x" +
                    std::to_string(frame_a.height) + " vs " + std::to_string(frame_b.width) + "x" +
                    std::to_string(frame_b.height) + ")");
  }
  SampleTriplet s;
  s.id = r.id;
  s.label = r.label;
  s.source_width = frame_a.width;
  s.source_height = frame_a.height;

  auto flow = resize_flow(compute_or_load_flow(r, to_gray(frame_a), to_gray(frame_b), options), kInputSize, kInputSize);
  auto img = resize_bilinear(frame_a, kInputSize, kInputSize);
  const std::size_t hw = kInputSize * kInputSize;
  s.image.resize(3 * hw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) s.image[c * hw + i] = static_cast<float>(img.rgb[i * 3 + c]);
  }
  s.flow.resize(2 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    s.flow[i] = static_cast<float>(flow.u[i]);
    s.flow[hw + i] = static_cast<float>(flow.v[i]);
  }

  AudioClip clip;
  try {
    clip = load_wav(r.wav);
  } catch (const DataError& e) {
    throw DataError("sample " + r.id + ": " + e.what());
  }
  auto spec = log_spectrogram(clip);
  s.spec.assign(spec.values.begin(), spec.values.end());

  if (r.annotation) {
    std::map<std::string, Annotation> local;
    if (annotations == nullptr) {
      local = read_annotations(*r.annotation);
      annotations = &local;
    }
    auto it = annotations->find(r.id);
    if (it == annotations->end()) throw DataError("sample " + r.id + ": no entry in " + r.annotation->string());
    s.annotation = it->second;
  }
  return s;
}

std::vector<SampleTriplet> build_dataset(const Manifest& manifest, const BuildOptions& options) {
  std::map<fs::path, std::map<std::string, Annotation>> annotation_files;
  for (const auto& r : manifest.records) {
    if (r.annotation && !annotation_files.contains(*r.annotation)) {
      annotation_files[*r.annotation] = read_annotations(*r.annotation);
    }
  }
  std::vector<SampleTriplet> out(manifest.records.size());
  std::vector<std::string> errors(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    try {
      out[i] = build_triplet(r, options, r.annotation ? &annotation_files.at(*r.annotation) : nullptr);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw DataError(e);
  }
  return out;
}

// -- augmentation ---------------------------------------------------------------

void AugmentConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw UsageError("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
}

CropWindow draw_window(std::size_t width, std::size_t height, std::uint64_t seed, const AugmentConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const double side = std::sqrt(uniform(rng, config.crop_scale_min, config.crop_scale_max));
  CropWindow w;
  w.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(width))), 1, width);
  w.height =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(height))), 1, height);
  w.x = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(width - w.width + 1)));
  w.y = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(height - w.height + 1)));
  w.x = std::min(w.x, width - w.width);
  w.y = std::min(w.y, height - w.height);
  const double coin = uniform(rng, 0.0, 1.0);
  w.flipped = config.flip && coin < 0.5;
  return w;
}

RgbImage flip_horizontal(const RgbImage& image) {
  RgbImage out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
    }
  }
  return out;
}

FlowField flip_horizontal(const FlowField& flow) {
  FlowField out(flow.width, flow.height);
  for (std::size_t y = 0; y < flow.height; ++y) {
    for (std::size_t x = 0; x < flow.width; ++x) {
      const std::size_t src = y * flow.width + x, dst = y * flow.width + (flow.width - 1 - x);
      out.u[dst] = -flow.u[src];
      out.v[dst] = flow.v[src];
    }
  }
  return out;
}

Augmented apply_window(const RgbImage& image, const FlowField& flow, const CropWindow& w) {
  if (image.width != flow.width || image.height != flow.height) {
    throw ShapeError("augment: image and flow sizes differ");
  }
  if (w.width == 0 || w.height == 0 || w.x + w.width > image.width || w.y + w.height > image.height) {
    throw ShapeError("augment: crop window outside the frame");
  }
  RgbImage crop(w.width, w.height);
  FlowField fcrop(w.width, w.height);
  for (std::size_t y = 0; y < w.height; ++y) {
    for (std::size_t x = 0; x < w.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) crop.at(x, y, c) = image.at(w.x + x, w.y + y, c);
      const std::size_t src = (w.y + y) * flow.width + (w.x + x);
      fcrop.u[y * w.width + x] = flow.u[src];
      fcrop.v[y * w.width + x] = flow.v[src];
    }
  }
  Augmented out;
  out.window = w;
  out.image = resize_bilinear(crop, image.width, image.height);
  out.flow = resize_flow(fcrop, flow.width, flow.height);
  if (w.flipped) {
    out.image = flip_horizontal(out.image);
    out.flow = flip_horizontal(out.flow);
  }
  return out;
}

Augmented augment(const RgbImage& image, const FlowField& flow, std::uint64_t seed, const AugmentConfig& config) {
  if (!config.enabled) return {image, flow, {0, 0, image.width, image.height, false}};
  return apply_window(image, flow, draw_window(image.width, image.height, seed, config));
}

Tensor normalize_image(const RgbImage& image) {
  const std::size_t hw = image.width * image.height;
  std::vector<double> img(3 * hw);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) img[c * hw + i] = (image.rgb[i * 3 + c] - kImageMean[c]) / kImageStd[c];
  }
  return Tensor::from({3, image.height, image.width}, std::move(img));
}

NormalizedInputs normalize_inputs(const RgbImage& image, const FlowField& flow) {
  if (image.width != flow.width || image.height != flow.height) {
    throw ShapeError("normalize_inputs: image and flow sizes differ");
  }
  return {normalize_image(image), flow_tensor(normalize_flow(flow))};
}

ModelInput make_input(const SampleTriplet& sample, const AugmentConfig* config, std::uint64_t seed) {
  auto image = sample.rgb();
  auto flow = sample.flow_field();
  if (config != nullptr && config->enabled) {
    auto a = augment(image, flow, seed, *config);
    image = std::move(a.image);
    flow = std::move(a.flow);
  }
  auto n = normalize_inputs(image, flow);
  return {sample.id, std::move(n.image), std::move(n.flow), sample.spec_tensor()};
}

}  // namespace flowloc
