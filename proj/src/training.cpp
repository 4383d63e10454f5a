// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include "r4d/error.hpp"
#include "r4d/io.hpp"
#include "r4d/kv.hpp"
#include "r4d/scenesim.hpp"

namespace r4d::train {

using model::TargetSample;

namespace {

const char* schedule_name(Schedule s) { return s == Schedule::step ? "step" : "cosine"; }

const char* optimizer_name(diff::OptimizerKind k) {
  switch (k) {
    case diff::OptimizerKind::sgd: return "sgd";
    case diff::OptimizerKind::momentum: return "momentum";
    case diff::OptimizerKind::adam: return "adam";
  }
  return "momentum";
}

diff::OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return diff::OptimizerKind::sgd;
  if (s == "momentum") return diff::OptimizerKind::momentum;
  if (s == "adam") return diff::OptimizerKind::adam;
  fail(ErrorKind::configuration, "unknown optimizer '" + s + "' (expected sgd, momentum or adam)");
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) fail(ErrorKind::configuration, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::configuration, "batch_size must be positive");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) fail(ErrorKind::configuration, "base_lr must be positive");
  if (!(sigma_aug_m >= 0.0)) fail(ErrorKind::configuration, "sigma_aug_m must be non-negative");
  if (!(lambda_rel >= 0.0)) fail(ErrorKind::configuration, "lambda_rel must be non-negative");
  if (!(huber_delta_m > 0.0)) fail(ErrorKind::configuration, "huber_delta_m must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail(ErrorKind::configuration, "decay_factor must lie in (0, 1]");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i)
    if (decay_epochs[i] < decay_epochs[i - 1]) fail(ErrorKind::configuration, "decay_epochs must be ascending");
  if (model.mode == model::Mode::relative_only && lambda_rel == 0.0)
    fail(ErrorKind::configuration, "relative_only training needs lambda_rel > 0");
  model.validate();
}

TrainConfig TrainConfig::desk() { return {}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.epochs = 24;
  c.batch_size = 32;
  c.base_lr = 0.0005;
  c.warmup_iters = 1800;
  c.decay_epochs = {16, 22};
  c.decay_factor = 0.1;
  c.schedule = Schedule::step;
  return c;
}

TrainConfig TrainConfig::paper_cosine() {
  TrainConfig c = paper();
  c.epochs = 150;
  c.base_lr = 0.005;
  c.decay_epochs.clear();
  c.schedule = Schedule::cosine;
  return c;
}

TrainConfig TrainConfig::preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  if (name == "paper_cosine") return paper_cosine();
  fail(ErrorKind::configuration, "unknown preset '" + std::string(name) + "' (expected desk, paper or paper_cosine)");
}

TrainConfig TrainConfig::from_text(std::string_view text, const std::string& source) {
  KeyValues kv = KeyValues::parse(text, source);
  TrainConfig c = preset(kv.take_string("preset", "desk"));
  auto take_size = [&](const char* key, std::size_t fallback) {
    const std::int64_t v = kv.take_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) fail(ErrorKind::configuration, std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.epochs = take_size("epochs", c.epochs);
  c.batch_size = take_size("batch_size", c.batch_size);
  c.base_lr = kv.take_double("base_lr", c.base_lr);
  c.warmup_iters = take_size("warmup_iters", c.warmup_iters);
  c.decay_epochs = kv.take_doubles("decay_epochs", c.decay_epochs);
  c.decay_factor = kv.take_double("decay_factor", c.decay_factor);
  const std::string sched = kv.take_string("schedule", schedule_name(c.schedule));
  if (sched == "step")
    c.schedule = Schedule::step;
  else if (sched == "cosine")
    c.schedule = Schedule::cosine;
  else
    fail(ErrorKind::configuration, "unknown schedule '" + sched + "' (expected step or cosine)");
  c.sigma_aug_m = kv.take_double("sigma_aug_m", c.sigma_aug_m);
  c.lambda_rel = kv.take_double("lambda_rel", c.lambda_rel);
  c.huber_delta_m = kv.take_double("huber_delta_m", c.huber_delta_m);
  c.seed = kv.take_uint("seed", c.seed);
  c.optimizer.kind = parse_optimizer(kv.take_string("optimizer", optimizer_name(c.optimizer.kind)));
  c.optimizer.momentum = kv.take_double("momentum", c.optimizer.momentum);
  c.optimizer.weight_decay = kv.take_double("weight_decay", c.optimizer.weight_decay);
  c.optimizer.clip_norm = kv.take_double("clip_norm", c.optimizer.clip_norm);
  auto& m = c.model;
  m.embed_dim = take_size("embed_dim", m.embed_dim);
  m.attention_hidden = take_size("attention_hidden", m.attention_hidden);
  m.head_hidden = take_size("head_hidden", m.head_hidden);
  m.toggles.target = kv.take_bool("use_target", m.toggles.target);
  m.toggles.reference = kv.take_bool("use_reference", m.toggles.reference);
  m.toggles.union_context = kv.take_bool("use_union", m.toggles.union_context);
  m.toggles.geo = kv.take_bool("use_geo", m.toggles.geo);
  try {
    m.mode = model::parse_mode(kv.take_string("mode", model::to_string(m.mode)));
  } catch (const Error& e) {
    fail(ErrorKind::configuration, e.what());
  }
  m.max_refs = take_size("max_refs", m.max_refs);
  m.max_distance_m = kv.take_double("max_distance_m", m.max_distance_m);
  kv.finish();
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) { return from_text(io::read_file(path), path); }

std::string TrainConfig::to_text() const {
  std::string s;
  auto put = [&](const char* key, const std::string& v) { s += std::string(key) + " = " + v + "\n"; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  put("epochs", std::to_string(epochs));
  put("batch_size", std::to_string(batch_size));
  put("base_lr", format_double(base_lr));
  put("warmup_iters", std::to_string(warmup_iters));
  put("decay_epochs", join(decay_epochs));
  put("decay_factor", format_double(decay_factor));
  put("schedule", schedule_name(schedule));
  put("sigma_aug_m", format_double(sigma_aug_m));
  put("lambda_rel", format_double(lambda_rel));
  put("huber_delta_m", format_double(huber_delta_m));
  put("seed", std::to_string(seed));
  put("optimizer", optimizer_name(optimizer.kind));
  put("momentum", format_double(optimizer.momentum));
  put("weight_decay", format_double(optimizer.weight_decay));
  put("clip_norm", format_double(optimizer.clip_norm));
  put("embed_dim", std::to_string(model.embed_dim));
  put("attention_hidden", std::to_string(model.attention_hidden));
  put("head_hidden", std::to_string(model.head_hidden));
  put("use_target", b(model.toggles.target));
  put("use_reference", b(model.toggles.reference));
  put("use_union", b(model.toggles.union_context));
  put("use_geo", b(model.toggles.geo));
  put("mode", model::to_string(model.mode));
  put("max_refs", std::to_string(model.max_refs));
  put("max_distance_m", format_double(model.max_distance_m));
  return s;
}

double lr_at(std::size_t iter, double epoch, const TrainConfig& config) {
  double lr = config.base_lr;
  if (config.schedule == Schedule::step) {
    for (double e : config.decay_epochs)
      if (epoch >= e) lr *= config.decay_factor;
  } else {
    const double t = std::clamp(epoch / static_cast<double>(config.epochs), 0.0, 1.0);
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  if (iter < config.warmup_iters)
    lr *= static_cast<double>(iter) / static_cast<double>(config.warmup_iters);
  return lr;
}

AugmentedSample distance_augment(const TargetSample& sample, double sigma_m, double max_distance_m,
                                 std::mt19937_64& rng) {
  if (!(sigma_m >= 0.0)) fail(ErrorKind::precondition, "augmentation sigma must be non-negative");
  AugmentedSample out;
  out.sample = sample;
  for (double d : sample.ref_known_m) out.relative_labels_m.push_back(sample.label_m - d);
  if (sample.k() == 0 || sigma_m == 0.0) return out;
  const double lowest = std::min(sample.label_m, *std::min_element(sample.ref_known_m.begin(), sample.ref_known_m.end()));
  std::normal_distribution<double> normal(0.0, 1.0);
  double delta = 0.0;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const double trial = sigma_m * normal(rng);
    if (lowest + trial > 1.0) {
      delta = trial;
      break;
    }
  }
  out.delta_m = delta;
  if (delta == 0.0) return out;
  out.sample.label_m = sample.label_m + delta;
  std::vector<double> shifted = sample.ref_known_m;
  for (double& d : shifted) d += delta;
  out.sample.set_reference_distances(shifted, max_distance_m);
  return out;
}

diff::Var compute_loss(const model::BatchOutput& output, std::span<const LossTargets> targets, double lambda_rel,
                       double delta_m, double abs_weight) {
  const std::size_t B = targets.size();
  if (B == 0 || output.segments.count() != B)
    fail(ErrorKind::dimension, "loss targets do not match the batch (" + std::to_string(B) + " vs " +
                                   std::to_string(output.segments.count()) + ")");
  std::vector<double> labels(B), abs_w(B, abs_weight / static_cast<double>(B)), rel_labels, rel_w;
  for (std::size_t b = 0; b < B; ++b) {
    labels[b] = targets[b].label_m;
    const std::size_t k = output.segments.length(b);
    if (targets[b].relative_m.size() != k)
      fail(ErrorKind::dimension, "target " + std::to_string(b) + " has " + std::to_string(targets[b].relative_m.size()) +
                                     " relative labels for " + std::to_string(k) + " references");
    for (double r : targets[b].relative_m) {
      rel_labels.push_back(r);
      rel_w.push_back(lambda_rel / (static_cast<double>(k) * static_cast<double>(B)));
    }
  }
  const bool use_rel = output.has_pairs && lambda_rel > 0.0;
  if (abs_weight == 0.0 && use_rel)
    return diff::weighted_smooth_l1(diff::flatten(output.relative), rel_labels, rel_w, delta_m);
  diff::Var loss = diff::weighted_smooth_l1(diff::flatten(output.absolute), labels, abs_w, delta_m);
  if (use_rel) loss = diff::add(loss, diff::weighted_smooth_l1(diff::flatten(output.relative), rel_labels, rel_w, delta_m));
  return loss;
}

std::vector<model::DistancePrediction> predict_dataset(model::R4DModel& model, std::span<const TargetSample> samples,
                                                       std::size_t batch_size) {
  std::vector<model::DistancePrediction> out;
  out.reserve(samples.size());
  std::vector<const TargetSample*> batch;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    batch.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) batch.push_back(&samples[j]);
    auto preds = model.predict(batch);
    std::move(preds.begin(), preds.end(), std::back_inserter(out));
  }
  return out;
}

eval::MetricsReport evaluate(model::R4DModel& model, std::span<const TargetSample> samples) {
  const auto preds = predict_dataset(model, samples);
  std::vector<eval::DistancePair> pairs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) pairs[i] = {preds[i].absolute_m, samples[i].label_m};
  return eval::compute_metrics(pairs);
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const auto train_samples = model::make_samples(train_set, config.model);
  const auto val_samples = model::make_samples(val_set, config.model);
  if (train_samples.empty()) fail(ErrorKind::input, "training set has no targets");
  if (val_samples.empty()) fail(ErrorKind::input, "validation set has no targets");

  TrainResult result{model::R4DModel(config.model, config.seed), {}, 0, 0};
  model::R4DModel& net = result.model;
  net.fit_normalizers(train_samples);
  diff::Optimizer optimizer(config.optimizer);
  diff::ParameterStore best = net.params();
  double best_abs_rel = std::numeric_limits<double>::infinity();

  const std::size_t n = train_samples.size();
  // Without the geo family no input carries d_r, so a shared shift would be
  // unlearnable label noise.
  const double sigma = config.model.toggles.geo ? config.sigma_aug_m : 0.0;
  const double abs_weight = config.model.mode == model::Mode::relative_only ? 0.0 : 1.0;
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  std::vector<std::size_t> order(n);
  std::vector<AugmentedSample> aug;
  std::vector<const TargetSample*> batch;
  std::vector<LossTargets> targets;
  std::size_t iter = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng = sim::scene_rng(config.seed, epoch, 0x5f1e);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 aug_rng = sim::scene_rng(config.seed, epoch, 0xa06);

    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size, hi = std::min(n, lo + config.batch_size);
      aug.clear();
      batch.clear();
      targets.clear();
      for (std::size_t i = lo; i < hi; ++i)
        aug.push_back(distance_augment(train_samples[order[i]], sigma, config.model.max_distance_m, aug_rng));
      for (const auto& a : aug) {
        batch.push_back(&a.sample);
        targets.push_back({a.sample.label_m, a.relative_labels_m});
      }
      diff::Graph graph;
      model::BatchOutput out = net.forward_batch(graph, batch);
      diff::Var loss = compute_loss(out, targets, config.lambda_rel, config.huber_delta_m, abs_weight);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        fail(ErrorKind::numeric, "training diverged: loss is not finite at iteration " + std::to_string(iter) +
                                     " (epoch " + std::to_string(epoch + 1) + ")");
      net.params().zero_grad();
      graph.backward(loss);
      lr = lr_at(iter, static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches), config);
      diff::optimizer_step(net.params(), optimizer, lr);
      if (!net.params().all_finite())
        fail(ErrorKind::numeric, "training diverged: parameters are not finite after iteration " + std::to_string(iter) +
                                     " (epoch " + std::to_string(epoch + 1) + ")");
      loss_sum += value * static_cast<double>(hi - lo);
      ++iter;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val = evaluate(net, val_samples);
    if (rec.val.abs_rel < best_abs_rel) {
      best_abs_rel = rec.val.abs_rel;
      best = net.params();
      result.best_epoch = rec.epoch;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  net.params() = best;
  result.iterations = iter;
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string s = "epoch,lr,train_loss,val_n,val_pct5,val_pct10,val_pct15,val_abs_rel,val_sq_rel,val_rmse,val_rmse_log\n";
  for (const auto& h : history) {
    s += std::to_string(h.epoch) + "," + format_double(h.lr) + "," + format_double(h.train_loss) + "," +
         std::to_string(h.val.n);
    for (double v : {h.val.pct_under_5, h.val.pct_under_10, h.val.pct_under_15, h.val.abs_rel, h.val.sq_rel,
                     h.val.rmse, h.val.rmse_log})
      s += "," + format_double(v);
    s += "\n";
  }
  return s;
}

}  // namespace r4d::train
