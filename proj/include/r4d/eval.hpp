// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Baseline estimators, ablation and sweep suites, and domain-shift evaluation.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "r4d/datamodel.hpp"
#include "r4d/diffcore.hpp"
#include "r4d/metrics.hpp"
#include "r4d/model.hpp"
#include "r4d/scenesim.hpp"
#include "r4d/training.hpp"

namespace r4d::eval {

// Box-size regressor: (1/w, 1/h, w, h, w/h) in pixels -> distance.
struct DisNetConfig {
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 0.003;
  double huber_delta_m = 1.0;
  std::uint64_t seed = 42;
};

inline constexpr std::size_t kDisNetInputDim = 5;
std::vector<double> disnet_input(const BBox& box);

class DisNetModel {
 public:
  DisNetModel(const DisNetConfig& config, std::span<const double> inputs, std::span<const double> labels);
  double predict(const BBox& box);
  const diff::ParameterStore& params() const { return params_; }
  diff::ParameterStore& params() { return params_; }
  diff::Var forward(diff::Graph& graph, const std::vector<double>& rows);

 private:
  diff::MLPSpec spec_;
  diff::ParameterStore params_;
  double out_mean_ = 0.0;
  double out_scale_ = 1.0;
};

// Trains on every target of the set with Adam and a smooth-L1 loss.
DisNetModel disnet_baseline(const Dataset& train_set, const DisNetConfig& config);
MetricsReport evaluate_disnet(DisNetModel& model, const Dataset& dataset);

// Target embedding only, constant weights, no references, no relative loss.
train::TrainConfig direct_regression_config(const train::TrainConfig& base);
train::TrainResult direct_regression_baseline(const Dataset& train_set, const Dataset& val_set,
                                              const train::TrainConfig& base);

struct NamedConfig {
  std::string name;
  train::TrainConfig config;
  bool disnet = false;
  // Scenes without references are dropped from both sets (relative-only rows
  // need at least one reference per target).
  bool require_references = false;
};

std::vector<NamedConfig> table1_configs(const train::TrainConfig& base);
std::vector<NamedConfig> table4_configs(const train::TrainConfig& base);
std::vector<NamedConfig> table5_configs(const train::TrainConfig& base);
std::vector<double> default_sigma_grid();
std::vector<NamedConfig> sigma_sweep_configs(const train::TrainConfig& base, const std::vector<double>& grid);
std::vector<std::size_t> default_refs_grid();
std::vector<NamedConfig> refs_sweep_configs(const train::TrainConfig& base, const std::vector<std::size_t>& grid);

// Mean wall-clock microseconds per target of single-target inference (best of
// `repeats` passes).
double measure_latency_us(model::R4DModel& model, std::span<const model::TargetSample> samples,
                          std::size_t repeats = 3);

struct SuiteOptions {
  bool measure_latency = false;
  std::function<void(const std::string& row, const ResultRow& result)> on_row;
};

struct SuiteResult {
  std::vector<ResultRow> rows;
  bool any_failed = false;
};

// Trains and evaluates each configuration in order. A failing row is recorded
// with its message and the suite continues.
SuiteResult run_suite(const Dataset& train_set, const Dataset& val_set, const std::vector<NamedConfig>& configs,
                      const SuiteOptions& options = {});

Dataset drop_reference_free(const Dataset& dataset);

struct RegimeReport {
  Regime regime = Regime::day;
  MetricsReport report;
  // (abs_rel - day abs_rel) / day abs_rel
  double degradation = 0.0;
};

// The same scene indices rendered under each regime.
std::vector<Dataset> regime_sets(const sim::SceneSpec& spec, std::size_t n_scenes, std::uint64_t first_index,
                                 const std::vector<Regime>& regimes);

// The first set must be the day regime; degradation is relative to it.
std::vector<RegimeReport> domain_shift_eval(model::R4DModel& model, const std::vector<Dataset>& sets,
                                            const std::vector<Regime>& regimes);

std::string format_domain_shift(const std::vector<RegimeReport>& reports);

// --- prediction files and attention dumps --------------------------------------

// Pairs every prediction with its labelled target. An id missing from the
// ground truth, or predicted twice, is an input error naming the first offender.
std::vector<DistancePair> match_predictions(const std::vector<data::PredictionRecord>& predictions,
                                            const Dataset& truth);

std::vector<data::PredictionRecord> prediction_records(std::span<const model::TargetSample> samples,
                                                       const std::vector<model::DistancePrediction>& predictions);

// One row per bucket, named "<prefix>_<lo>_<hi>"; empty buckets carry no report.
std::vector<ResultRow> breakdown_rows(const std::string& prefix, const RangeBucketReport& report);

// JSON lines: scene, target, target box, predicted and labelled distance, and
// each reference with its box, known distance and weight.
std::string attention_records_jsonl(std::span<const model::TargetSample> samples,
                                    const std::vector<model::DistancePrediction>& predictions);
// Flat CSV for plotting: one target row then one row per reference.
std::string attention_plot_csv(std::span<const model::TargetSample> samples,
                               const std::vector<model::DistancePrediction>& predictions);

}  // namespace r4d::eval
