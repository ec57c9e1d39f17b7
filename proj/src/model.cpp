#include "flowloc/model.hpp"

#include <cmath>
#include <sstream>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

ModelVariant parse_variant(const std::string& name) {
  if (name == "flow") return ModelVariant::flow;
  if (name == "no-flow") return ModelVariant::no_flow;
  if (name == "maxpool-flow") return ModelVariant::maxpool_flow;
  throw UsageError("unknown variant '" + name + "' (expected flow, no-flow or maxpool-flow)");
}

std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::flow: return "flow";
    case ModelVariant::no_flow: return "no-flow";
    case ModelVariant::maxpool_flow: return "maxpool-flow";
  }
  return "?";
}

void ModelConfig::validate() const {
  visual.validate();
  audio.validate();
  if (visual.input_channels != 3) throw UsageError("model: visual encoder takes 3 channels");
  if (audio.input_channels != 1) throw UsageError("model: audio encoder takes 1 channel");
  if (audio.out_channels() != channels()) throw UsageError("model: audio and visual widths differ");
  if (variant == ModelVariant::flow) {
    flow.validate();
    if (flow.input_channels != 2) throw UsageError("model: flow encoder takes 2 channels");
    if (flow.out_channels() != channels()) throw UsageError("model: flow and visual widths differ");
  }
  if (variant != ModelVariant::no_flow && attention_width == 0) throw UsageError("model: attention width must be >= 1");
}

namespace {

void load_pretrained(ConvEncoder& enc) {
  const auto& path = enc.config().pretrained_weights;
  if (!path) return;
  assign_blobs(enc.parameters(), read_blobs(*path));
}

}  // namespace

LocalizationModel::LocalizationModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  // Each component draws from its own stream so toggling one does not shift
  // the initialization of the others.
  std::mt19937_64 rv(derive_seed(seed, 1)), ra(derive_seed(seed, 2)), rf(derive_seed(seed, 3)),
      rt(derive_seed(seed, 4));
  visual_ = ConvEncoder("visual", config_.visual, rv);
  audio_ = ConvEncoder("audio", config_.audio, ra);
  if (config_.variant == ModelVariant::flow) flow_ = ConvEncoder("flow", config_.flow, rf);
  if (config_.variant != ModelVariant::no_flow) {
    attention_ = AttentionParams::init(config_.channels(), config_.attention_width, rt);
  }
  load_pretrained(visual_);
  load_pretrained(audio_);
  if (flow_) load_pretrained(*flow_);
  visual_.set_frozen(config_.visual.frozen);
  audio_.set_frozen(config_.audio.frozen);
  if (flow_) flow_->set_frozen(config_.flow.frozen);
}

Tensor LocalizationModel::enhanced_features(const Tensor& image, const Tensor& flow) const {
  Tensor f_v = visual_encode(image, visual_);
  if (config_.variant == ModelVariant::no_flow) return f_v;
  if (flow.rank() != 3 || flow.dim(1) != image.dim(1) || flow.dim(2) != image.dim(2)) {
    throw ShapeError("model: flow " + to_string(flow.shape()) + " does not match image " + to_string(image.shape()));
  }
  const auto kind = config_.variant == ModelVariant::flow ? FlowEncoderKind::learnable : FlowEncoderKind::maxpool;
  Tensor f_f = flow_encode(flow, kind, flow_ ? &*flow_ : nullptr, config_.channels());
  if (f_f.shape() != f_v.shape()) {
    throw ShapeError("model: flow features " + to_string(f_f.shape()) + " vs visual " + to_string(f_v.shape()));
  }
  return enhance(f_v, cross_attention(f_v, f_f, *attention_));
}

AudioFeatures LocalizationModel::audio_features(const Tensor& spec) const { return audio_encode(spec, audio_); }

Tensor LocalizationModel::localize(const ModelInput& input) const {
  return similarity_map(enhanced_features(input.image, input.flow), audio_features(input.spec).pooled);
}

std::vector<NamedTensor> LocalizationModel::parameters() const {
  auto out = visual_.parameters();
  auto a = audio_.parameters();
  out.insert(out.end(), a.begin(), a.end());
  if (flow_) {
    auto f = flow_->parameters();
    out.insert(out.end(), f.begin(), f.end());
  }
  if (attention_) {
    auto t = attention_->parameters();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<NamedTensor> LocalizationModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) {
    if (p.value.requires_grad()) out.push_back(p);
  }
  return out;
}

void LocalizationModel::set_vision_frozen(bool frozen) {
  config_.visual.frozen = frozen;
  visual_.set_frozen(frozen);
}

namespace {

Tensor meta_vector(const std::vector<std::size_t>& v) {
  std::vector<double> d(v.begin(), v.end());
  const std::size_t n = d.size();
  return Tensor::from({n}, std::move(d));
}

const Tensor& find_blob(const std::vector<NamedTensor>& blobs, const std::string& name) {
  for (const auto& b : blobs) {
    if (b.name == name) return b.value;
  }
  throw DataError("checkpoint: missing entry " + name);
}

std::vector<std::size_t> stages_of(const Tensor& t) {
  std::vector<std::size_t> out;
  for (double v : t.data()) {
    if (!(v >= 1.0) || v != std::floor(v)) throw DataError("checkpoint: bad stage width");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

std::vector<NamedTensor> LocalizationModel::to_blobs() const {
  std::vector<NamedTensor> out;
  out.push_back({"meta.model.variant", Tensor::scalar(static_cast<double>(config_.variant))});
  out.push_back({"meta.model.attention_width", Tensor::scalar(static_cast<double>(config_.attention_width))});
  out.push_back({"meta.model.visual_stages", meta_vector(config_.visual.stage_channels)});
  out.push_back({"meta.model.audio_stages", meta_vector(config_.audio.stage_channels)});
  out.push_back({"meta.model.flow_stages", meta_vector(config_.flow.stage_channels)});
  out.push_back({"meta.model.visual_frozen", Tensor::scalar(config_.visual.frozen ? 1.0 : 0.0)});
  for (const auto& p : parameters()) out.push_back({p.name, p.value.detach()});
  return out;
}

ModelConfig LocalizationModel::config_from_blobs(const std::vector<NamedTensor>& blobs) {
  ModelConfig cfg;
  const double variant = find_blob(blobs, "meta.model.variant").item();
  if (variant != 0.0 && variant != 1.0 && variant != 2.0) throw DataError("checkpoint: bad variant");
  cfg.variant = static_cast<ModelVariant>(static_cast<int>(variant));
  cfg.attention_width = static_cast<std::size_t>(find_blob(blobs, "meta.model.attention_width").item());
  cfg.visual.stage_channels = stages_of(find_blob(blobs, "meta.model.visual_stages"));
  cfg.audio.stage_channels = stages_of(find_blob(blobs, "meta.model.audio_stages"));
  cfg.flow.stage_channels = stages_of(find_blob(blobs, "meta.model.flow_stages"));
  cfg.visual.frozen = find_blob(blobs, "meta.model.visual_frozen").item() != 0.0;
  return cfg;
}

void LocalizationModel::load_blobs(const std::vector<NamedTensor>& blobs) { assign_blobs(parameters(), blobs); }

// -- Adam ---------------------------------------------------------------------

void Adam::step(const std::vector<NamedTensor>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    if (!p.value.requires_grad()) continue;
    Tensor w = p.value;
    const auto g = w.grad();
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.size() != g.size()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto x = w.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

std::vector<NamedTensor> Adam::to_blobs() const {
  std::vector<NamedTensor> out;
  out.push_back({"adam.t", Tensor::scalar(static_cast<double>(t_))});
  for (const auto& [name, m] : m_) out.push_back({"adam.m/" + name, Tensor::from({m.size()}, m)});
  for (const auto& [name, v] : v_) out.push_back({"adam.v/" + name, Tensor::from({v.size()}, v)});
  return out;
}

void Adam::load_blobs(const std::vector<NamedTensor>& blobs) {
  m_.clear();
  v_.clear();
  t_ = static_cast<std::uint64_t>(find_blob(blobs, "adam.t").item());
  for (const auto& b : blobs) {
    auto d = b.value.data();
    if (b.name.starts_with("adam.m/")) m_[b.name.substr(7)].assign(d.begin(), d.end());
    if (b.name.starts_with("adam.v/")) v_[b.name.substr(7)].assign(d.begin(), d.end());
  }
}

// -- training step ------------------------------------------------------------

SimilarityMatrix batch_similarities(const LocalizationModel& model, std::span<const ModelInput> batch) {
  const std::size_t b = batch.size();
  std::vector<Tensor> visual, audio;
  visual.reserve(b);
  audio.reserve(b);
  for (const auto& s : batch) {
    visual.push_back(l2_normalize(model.enhanced_features(s.image, s.flow)));
    audio.push_back(model.audio_features(s.spec).pooled);
  }
  SimilarityMatrix maps(b);
  for (std::size_t k = 0; k < b; ++k) {
    maps[k].reserve(b);
    for (std::size_t j = 0; j < b; ++j) maps[k].push_back(matvec_lastdim(visual[k], audio[j]));
  }
  return maps;
}

namespace {

std::string batch_ids(std::span<const ModelInput> batch) {
  std::ostringstream os;
  for (std::size_t i = 0; i < batch.size(); ++i) os << (i ? "," : "") << batch[i].id;
  return os.str();
}

}  // namespace

StepResult train_step(LocalizationModel& model, Adam& adam, std::span<const ModelInput> batch, const StepConfig& cfg) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  auto params = model.trainable_parameters();
  if (params.empty()) throw UsageError("train_step: no trainable parameters");
  Tensor loss;
  BatchResponses r;
  try {
    r = responses_selfsup(batch_similarities(model, batch), cfg.trimap);
    loss = contrastive_loss(r, cfg.reduction);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (batch: " + batch_ids(batch) + ")");
  }
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("train_step: non-finite loss (batch: " + batch_ids(batch) + ")");
  for (auto& p : params) p.value.zero_grad();
  backward(loss);
  for (const auto& p : params) {
    for (double g : p.value.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("train_step: non-finite gradient in " + p.name + " (batch: " + batch_ids(batch) + ")");
      }
    }
  }
  adam.step(params);
  StepResult out;
  out.loss = value;
  for (std::size_t k = 0; k < r.size(); ++k) {
    out.mean_pos += r.pos[k].item() / static_cast<double>(r.size());
    out.mean_neg += r.neg[k].item() / static_cast<double>(r.size());
  }
  return out;
}

}  // namespace flowloc
