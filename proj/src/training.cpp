#include "flowloc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "flowloc/error.hpp"
#include "flowloc/util.hpp"

namespace flowloc {

namespace {

constexpr std::uint64_t kOrderStream = 0x6f72646572ull;
constexpr std::uint64_t kAugmentStream = 0x61756728ull;
constexpr std::uint64_t kPretrainRenderStream = 0x72656e646572ull;
constexpr std::uint64_t kPretrainHeadStream = 0x70726574ull;

std::size_t draw_below(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const Tensor* find(const std::vector<NamedTensor>& blobs, const std::string& name) {
  for (const auto& b : blobs) {
    if (b.name == name) return &b.value;
  }
  return nullptr;
}

std::vector<ModelInput> prepare(const std::vector<SampleTriplet>& data, std::span<const std::size_t> indices,
                                const AugmentConfig& augment, std::uint64_t seed, std::size_t epoch) {
  std::vector<ModelInput> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    const std::size_t idx = indices[i];
    out[i] = make_input(data[idx], &augment, augment_seed(seed, epoch, idx));
  });
  return out;
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kOrderStream), epoch));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[draw_below(rng, i)]);
  return order;
}

std::uint64_t augment_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  return derive_seed(derive_seed(derive_seed(seed, kAugmentStream), epoch), index);
}

Trainer::Trainer(LocalizationModel& model, const std::vector<SampleTriplet>& data, TrainConfig config)
    : model_(model), data_(data), config_(std::move(config)), adam_(config_.adam) {
  if (data_.empty()) throw DataError("train: empty dataset");
  if (config_.batch_size == 0) throw UsageError("train: batch size must be positive");
  config_.step.trimap.validate();
  config_.augment.validate();
}

std::size_t Trainer::effective_batch_size() const { return std::min(config_.batch_size, data_.size()); }

void Trainer::epoch(const std::function<void(const StepLog&)>& on_step) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto order = epoch_order(data_.size(), config_.seed, epoch_);
  const std::size_t bs = effective_batch_size();
  const double base = wall_offset_;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t n = std::min(bs, order.size() - start);
    auto batch = prepare(data_, std::span(order).subspan(start, n), config_.augment, config_.seed, epoch_);
    auto r = train_step(model_, adam_, batch, config_.step);
    ++step_;
    if (on_step) on_step({step_, epoch_, r.loss, r.mean_pos, r.mean_neg, base + seconds_since(t0)});
  }
  wall_offset_ = base + seconds_since(t0);
  ++epoch_;
}

std::vector<StepLog> Trainer::run_epoch() {
  std::vector<StepLog> logs;
  epoch([&](const StepLog& l) { logs.push_back(l); });
  return logs;
}

void Trainer::run(const std::function<void(const StepLog&)>& on_step,
                  const std::function<void(std::size_t)>& on_epoch) {
  while (epoch_ < config_.epochs) {
    epoch(on_step);
    if (on_epoch) on_epoch(epoch_);
  }
}

std::vector<NamedTensor> Trainer::checkpoint() const {
  auto out = model_.to_blobs();
  auto a = adam_.to_blobs();
  out.insert(out.end(), a.begin(), a.end());
  out.push_back({"meta.train.epoch", Tensor::scalar(static_cast<double>(epoch_))});
  out.push_back({"meta.train.step", Tensor::scalar(static_cast<double>(step_))});
  out.push_back({"meta.train.wall", Tensor::scalar(wall_offset_)});
  out.push_back({"meta.train.seed_lo", Tensor::scalar(static_cast<double>(config_.seed & 0xffffffffu))});
  out.push_back({"meta.train.seed_hi", Tensor::scalar(static_cast<double>(config_.seed >> 32))});
  return out;
}

void Trainer::restore(const std::vector<NamedTensor>& blobs) {
  model_.load_blobs(blobs);
  const Tensor* epoch = find(blobs, "meta.train.epoch");
  const Tensor* step = find(blobs, "meta.train.step");
  if (!epoch || !step) throw DataError("checkpoint: no training state to resume from");
  adam_.load_blobs(blobs);
  epoch_ = static_cast<std::size_t>(epoch->item());
  step_ = static_cast<std::uint64_t>(step->item());
  if (const Tensor* wall = find(blobs, "meta.train.wall")) wall_offset_ = wall->item();
}

// -- vision pretraining -----------------------------------------------------------

double pretrain_vision(ConvEncoder& encoder, const SceneSpec& scenes, const PretrainConfig& config) {
  if (config.samples == 0) throw UsageError("pretrain: sample count must be positive");
  if (config.batch_size == 0) throw UsageError("pretrain: batch size must be positive");
  SceneSpec single = scenes;
  single.distractors = 0;
  single.canvas = kInputSize;
  single.validate();
  const std::size_t k = single.classes.size(), c = encoder.config().out_channels();

  std::vector<Tensor> images(config.samples);
  std::vector<std::size_t> labels(config.samples);
  const std::uint64_t render_seed = derive_seed(config.seed, kPretrainRenderStream);
  parallel_for(config.samples, [&](std::size_t i) {
    auto scene = render_scene(single, derive_seed(render_seed, i));
    images[i] = normalize_image(scene.frame_t);
    labels[i] = static_cast<std::size_t>(scene.label);
  });

  std::mt19937_64 rng(derive_seed(config.seed, kPretrainHeadStream));
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<double> w(k * c);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  Tensor head_w = Tensor::from({k, c}, std::move(w), true);
  Tensor head_b = Tensor::zeros({k}, true);

  const bool was_frozen = encoder.frozen();
  encoder.set_frozen(false);
  auto params = encoder.parameters();
  params.push_back({"head.w", head_w});
  params.push_back({"head.b", head_b});
  Adam adam({config.lr});
  const std::size_t bs = std::min(config.batch_size, config.samples);
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(config.samples, config.seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      std::vector<Tensor> terms(n);
      parallel_for(n, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        Tensor feat = reshape(global_avg_pool(encoder.forward_chw(images[idx])), {1, c});
        Tensor logits = add(reshape(project(feat, head_w), {k}), head_b);
        Tensor lse = select(logits, 0);
        for (std::size_t j = 1; j < k; ++j) lse = logaddexp(lse, select(logits, j));
        terms[i] = sub(lse, select(logits, labels[idx]));
      });
      Tensor loss = mul(sum(stack(terms)), 1.0 / static_cast<double>(n));
      for (auto& p : params) p.value.zero_grad();
      backward(loss);
      adam.step(params);
      total += loss.item() * static_cast<double>(n);
    }
    last = total / static_cast<double>(config.samples);
  }
  encoder.set_frozen(was_frozen);
  return last;
}

}  // namespace flowloc
