#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fscascade/model.hpp"
#include "fscascade/rng.hpp"
#include "fscascade/synth.hpp"

// Seeded end-to-end training: per image, sample proposals, run the cascade,
// assign/subsample per stage, take a weighted-sum SGD step. (seed, config,
// dataset) fully determines the resulting parameters.

namespace fscascade {

struct TrainConfig {
  int64_t epochs = 20;
  double base_lr = 0.01;
  double warmup_epochs = 1.0;  // lr = base*decay_factor while epoch < warmup
  std::vector<double> decay_epochs = {10.0, 16.0};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t rois_per_image = 64;
  double fg_fraction = 0.25;
  std::vector<double> stage_loss_weights = {1.0, 0.5, 0.25};
  uint64_t seed = 1;
  ProposalConfig proposals;
};

void validate_train_config(const TrainConfig& cfg);

// Piecewise schedule over fractional epochs: base*factor during warmup, then
// base, multiplied by factor once per decay epoch already reached (>=).
double lr_at(double epoch, const TrainConfig& cfg);

// Balanced minibatch: up to fg_fraction*rois_per_image foregrounds plus
// backgrounds; a short bucket is topped up from the other. Returned indices
// are sorted ascending; selection order is driven by rng.
std::vector<int64_t> subsample_rois(const std::vector<Assignment>& assignments,
                                    int64_t rois_per_image, double fg_fraction,
                                    Rng& rng);

struct StageLosses {
  Tensor cls;  // scalar graph node
  Tensor box;  // scalar graph node; exact 0 constant when no foregrounds
};

// Cross-entropy over the sampled RoIs; smooth-L1 over the foreground subset.
StageLosses stage_loss(const StageOutput& out,
                       const std::vector<Assignment>& assignments,
                       const std::vector<int64_t>& sampled);

struct EpochRecord {
  int64_t epoch = 0;
  double lr = 0.0;  // value used on the epoch's last iteration
  std::vector<double> cls_loss;  // per stage, mean over the epoch
  std::vector<double> box_loss;
  double total_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int64_t iterations = 0;
};

// Trains in place. When metric_log_path is non-empty, appends one
// tab-separated record per epoch as it completes. Aborts with a diagnostic
// naming the iteration if the loss goes non-finite.
TrainResult train(CascadeModel& model, const std::vector<SceneRecord>& dataset,
                  const TrainConfig& cfg,
                  const std::string& metric_log_path = "");

}  // namespace fscascade
