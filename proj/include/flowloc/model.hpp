#pragma once

// The full localization network (encoders + optional flow attention), its
// Adam optimizer and a single self-supervised training step.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowloc/attention.hpp"
#include "flowloc/encoders.hpp"
#include "flowloc/objective.hpp"
#include "flowloc/tensor.hpp"

namespace flowloc {

enum class ModelVariant { flow, no_flow, maxpool_flow };

ModelVariant parse_variant(const std::string& name);  // flow | no-flow | maxpool-flow
std::string variant_name(ModelVariant v);

struct ModelConfig {
  ModelVariant variant = ModelVariant::flow;
  EncoderConfig visual{3, {16, 32, 64, 64, 128}, std::nullopt, true};
  EncoderConfig audio{1, {16, 32, 64, 64, 128}, std::nullopt, false};
  EncoderConfig flow{2, {16, 32, 64, 64, 128}, std::nullopt, false};
  std::size_t attention_width = 64;

  std::size_t channels() const { return visual.out_channels(); }
  void validate() const;
};

// One preprocessed sample as fed to the network.
struct ModelInput {
  std::string id;
  Tensor image;  // [3, H, W], normalized
  Tensor flow;   // [2, H, W], normalized
  Tensor spec;   // [1, 257, 300]
};

class LocalizationModel {
 public:
  LocalizationModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // f_enh [m, n, c]; f_v itself for the no-flow variant.
  Tensor enhanced_features(const Tensor& image, const Tensor& flow) const;
  AudioFeatures audio_features(const Tensor& spec) const;
  // S [m, n] for a matched image/flow/audio triple.
  Tensor localize(const ModelInput& input) const;

  const ConvEncoder& visual_encoder() const { return visual_; }
  ConvEncoder& visual_encoder() { return visual_; }
  const std::optional<AttentionParams>& attention() const { return attention_; }

  // Every parameter, frozen or not, with stable names.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> trainable_parameters() const;
  void set_vision_frozen(bool frozen);

  // Parameters plus "meta.model.*" entries describing the architecture.
  std::vector<NamedTensor> to_blobs() const;
  static ModelConfig config_from_blobs(const std::vector<NamedTensor>& blobs);
  void load_blobs(const std::vector<NamedTensor>& blobs);

 private:
  ModelConfig config_;
  ConvEncoder visual_;
  ConvEncoder audio_;
  std::optional<ConvEncoder> flow_;
  std::optional<AttentionParams> attention_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every parameter that requires grad from its accumulated grad.
  void step(const std::vector<NamedTensor>& params);
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  std::vector<NamedTensor> to_blobs() const;  // "adam.m/<name>", "adam.v/<name>", "adam.t"
  void load_blobs(const std::vector<NamedTensor>& blobs);

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct StepConfig {
  TriMapConfig trimap;
  LossReduction reduction = LossReduction::sum;
};

struct StepResult {
  double loss = 0.0;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
};

// Batch similarity matrix: maps[k][j] = S(image k, audio j).
SimilarityMatrix batch_similarities(const LocalizationModel& model, std::span<const ModelInput> batch);

// Forward over all (k, j) pairs, tri-map loss, backward and one Adam update.
// A non-finite loss raises NumericError naming the batch ids.
StepResult train_step(LocalizationModel& model, Adam& adam, std::span<const ModelInput> batch, const StepConfig& cfg);

}  // namespace flowloc
