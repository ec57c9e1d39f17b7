#pragma once

// Epoch loop over a built dataset with deterministic batching, checkpoints
// that resume bit-exactly, and the optional synthetic vision pretraining.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "flowloc/data.hpp"
#include "flowloc/model.hpp"
#include "flowloc/synth.hpp"

namespace flowloc {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;  // capped by the dataset size
  std::uint64_t seed = 0;
  AdamConfig adam;
  StepConfig step;
  AugmentConfig augment;
};

struct StepLog {
  std::uint64_t step = 0;  // 1-based global step
  std::size_t epoch = 0;   // 0-based
  double loss = 0.0;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double wall_seconds = 0.0;
};

// Order of sample indices for one epoch, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);

// Augmentation seed of sample `index` in `epoch`.
std::uint64_t augment_seed(std::uint64_t seed, std::size_t epoch, std::size_t index);

class Trainer {
 public:
  Trainer(LocalizationModel& model, const std::vector<SampleTriplet>& data, TrainConfig config);

  std::size_t effective_batch_size() const;
  std::size_t epochs_done() const { return epoch_; }
  std::uint64_t steps_done() const { return step_; }

  // Runs one epoch; returns the per-step log entries.
  std::vector<StepLog> run_epoch();

  // Runs until config.epochs, invoking the callbacks after every step and
  // every epoch.
  void run(const std::function<void(const StepLog&)>& on_step,
           const std::function<void(std::size_t epoch)>& on_epoch);

  // Model parameters, optimizer moments and progress counters.
  std::vector<NamedTensor> checkpoint() const;
  void restore(const std::vector<NamedTensor>& blobs);

 private:
  void epoch(const std::function<void(const StepLog&)>& on_step);

  LocalizationModel& model_;
  const std::vector<SampleTriplet>& data_;
  TrainConfig config_;
  Adam adam_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
  double wall_offset_ = 0.0;
};

struct PretrainConfig {
  std::size_t samples = 1000;
  std::size_t epochs = 8;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

// Object-centric prior for the visual encoder: renders `samples` scenes from
// `scenes` with the distractors removed and trains the encoder, through GAP
// and a linear head, to classify the single shape. Returns the final epoch's
// mean cross-entropy.
double pretrain_vision(ConvEncoder& encoder, const SceneSpec& scenes, const PretrainConfig& config);

}  // namespace flowloc
