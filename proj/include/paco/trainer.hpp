#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "paco/matchloss.hpp"
#include "paco/model.hpp"
#include "paco/segment.hpp"
#include "paco/synth.hpp"

namespace paco::trainer {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double lr_decay = 0.9;
  int decay_every = 20;  // epochs
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Ground-truth points kept per sample for the losses (strided subset).
  int gt_points = 2048;
  int checkpoint_every = 0;       // epochs; 0 disables
  std::string checkpoint_dir;     // required when checkpoint_every > 0
  std::string history_path;       // JSON lines; empty disables
  matchloss::LossWeights loss;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  /// Throws UsageError when a field is out of range.
  void validate() const;
};

/// Learning rate in effect during `epoch` (0-based).
double learning_rate(const TrainConfig& cfg, int epoch);

/// One training example with its segmentation precomputed.
struct TrainingItem {
  PointList cloud;
  segment::Segmentation seg;
  PrimitiveList gt;
};

/// Segments the input and thins ground-truth primitives to `gt_points` in total.
TrainingItem prepare(const synth::Sample& sample, int gt_points,
                     const segment::RegionGrowingParams& params = {});
/// Same, reusing a segmentation computed earlier.
TrainingItem prepare(const synth::Sample& sample, segment::Segmentation seg, int gt_points);

/// Adaptive-moment optimizer with decoupled weight decay.
struct AdamW {
  diff::GradientBuffer m, v;
  long step = 0;

  void update(diff::ParamStore& store, const diff::GradientBuffer& grads, double lr, const TrainConfig& cfg);
};

struct TrainState {
  int epoch = 0;  // epochs completed
  AdamW optimizer;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  int steps = 0;
  matchloss::LossBreakdown mean;
};

/// One shuffled pass over the items; updates `state` in place.
EpochStats train_epoch(model::Model& model, const std::vector<TrainingItem>& items, const TrainConfig& cfg,
                       TrainState& state);

/// Runs epochs state.epoch .. cfg.epochs-1, checkpointing and logging per the config.
/// `on_epoch` (optional) sees each epoch's stats as it completes.
std::vector<EpochStats> fit(model::Model& model, const std::vector<TrainingItem>& items, const TrainConfig& cfg,
                            TrainState& state, const std::function<void(const EpochStats&)>& on_epoch = {});

/// Weights, optimizer moments and progress in one ParamStore file.
void save_checkpoint(const std::string& path, const model::Model& model, const TrainState& state);
struct Checkpoint {
  model::Model model;
  TrainState state;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace paco::trainer
