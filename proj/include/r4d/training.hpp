// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss, distance augmentation, learning-rate schedule and the training loop.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "r4d/diffcore.hpp"
#include "r4d/metrics.hpp"
#include "r4d/model.hpp"

namespace r4d::train {

enum class Schedule { step, cosine };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double base_lr = 0.003;
  std::size_t warmup_iters = 100;
  std::vector<double> decay_epochs = {20, 26};
  double decay_factor = 0.1;
  Schedule schedule = Schedule::step;
  double sigma_aug_m = 50.0;
  double lambda_rel = 1.0;
  double huber_delta_m = 1.0;
  std::uint64_t seed = 42;
  // Momentum SGD at the desk lr needs clipping to stay stable early on.
  diff::OptimizerConfig optimizer{.clip_norm = 10.0};
  model::ModelConfig model;

  void validate() const;
  static TrainConfig desk();
  // 24 epochs, lr 5e-4 with x0.1 at epochs 16 and 22, 1800 warmup iterations.
  static TrainConfig paper();
  // 150 epochs, lr 5e-3, cosine decay.
  static TrainConfig paper_cosine();
  static TrainConfig preset(std::string_view name);

  // "preset = <name>" (if present) is applied first, other keys override it.
  static TrainConfig from_text(std::string_view text, const std::string& source);
  static TrainConfig load(const std::string& path);
  std::string to_text() const;
};

// Warmup multiplies the scheduled rate by min(1, iter / warmup_iters).
// epoch may be fractional; step decay applies once epoch >= a decay epoch.
double lr_at(std::size_t iter, double epoch, const TrainConfig& config);

struct AugmentedSample {
  model::TargetSample sample;  // perturbed label, reference distances and geo inputs
  double delta_m = 0.0;
  std::vector<double> relative_labels_m;  // label - d_r per reference, before the shift
};

// One shared shift delta ~ N(0, sigma^2) for the label and every reference.
// Redrawn (up to 16 times, then 0) while any shifted distance would be <= 1 m.
// Samples without references are returned unshifted.
AugmentedSample distance_augment(const model::TargetSample& sample, double sigma_m, double max_distance_m,
                                 std::mt19937_64& rng);

struct LossTargets {
  double label_m = 0.0;
  std::vector<double> relative_m;
};

// Mean over targets of abs_weight * smooth_l1(abs) + lambda * mean_i smooth_l1(rel_i).
// The relative term of a target without references is empty.
diff::Var compute_loss(const model::BatchOutput& output, std::span<const LossTargets> targets, double lambda_rel,
                       double delta_m, double abs_weight = 1.0);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;  // at the last step of the epoch
  double train_loss = 0.0;
  eval::MetricsReport val;
};

struct TrainResult {
  model::R4DModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t iterations = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Deterministic for fixed inputs and seed. Augmentation is skipped when the
// geo family is disabled; relative_only runs train the relative head alone.
// Keeps the parameters of the epoch with the lowest validation abs_rel
// (earliest on ties).
TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Predictions of a model over every target of a dataset, in dataset order.
std::vector<model::DistancePrediction> predict_dataset(model::R4DModel& model,
                                                       std::span<const model::TargetSample> samples,
                                                       std::size_t batch_size = 256);
eval::MetricsReport evaluate(model::R4DModel& model, std::span<const model::TargetSample> samples);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace r4d::train
