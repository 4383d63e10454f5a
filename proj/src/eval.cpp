// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "r4d/error.hpp"
#include "r4d/features.hpp"
#include "r4d/kv.hpp"

namespace r4d::eval {

using train::TrainConfig;

// --- DisNet-style baseline ----------------------------------------------------

std::vector<double> disnet_input(const BBox& box) {
  if (!(box.w > 0.0 && box.h > 0.0)) fail(ErrorKind::input, "box must have positive width and height");
  return {1.0 / box.w, 1.0 / box.h, box.w, box.h, box.w / box.h};
}

DisNetModel::DisNetModel(const DisNetConfig& config, std::span<const double> inputs, std::span<const double> labels) {
  spec_ = {kDisNetInputDim, config.hidden, false, diff::Activation::relu, false};
  spec_.layer_widths.push_back(1);
  std::mt19937_64 rng = sim::scene_rng(config.seed, 0, 0xd15);
  diff::MLP("disnet", spec_, params_, rng);
  feat::fit_standardizer(params_, "disnet", inputs, kDisNetInputDim);
  if (!labels.empty()) {
    out_mean_ = std::accumulate(labels.begin(), labels.end(), 0.0) / static_cast<double>(labels.size());
    double var = 0.0;
    for (double y : labels) var += (y - out_mean_) * (y - out_mean_);
    const double sd = std::sqrt(var / static_cast<double>(labels.size()));
    out_scale_ = sd > 1e-8 ? sd : 1.0;
  }
}

diff::Var DisNetModel::forward(diff::Graph& graph, const std::vector<double>& rows) {
  std::vector<double> x = rows;
  feat::standardize_rows(params_, "disnet", x, kDisNetInputDim);
  const std::size_t n = x.size() / kDisNetInputDim;
  diff::Var out = diff::mlp_forward(spec_, "disnet", params_, graph,
                                    graph.constant(diff::Tensor({n, kDisNetInputDim}, std::move(x))));
  return diff::affine(diff::flatten(out), out_scale_, out_mean_);
}

double DisNetModel::predict(const BBox& box) {
  diff::Graph g;
  g.set_grad_enabled(false);
  return std::max(forward(g, disnet_input(box)).value()[0], 1.0);
}

DisNetModel disnet_baseline(const Dataset& train_set, const DisNetConfig& config) {
  if (config.epochs == 0 || config.batch_size == 0 || !(config.lr > 0.0))
    fail(ErrorKind::configuration, "DisNet epochs, batch size and learning rate must be positive");
  std::vector<double> inputs, labels;
  for (const auto& s : train_set.scenes)
    for (const auto* t : s.targets()) {
      const auto x = disnet_input(t->bbox);
      inputs.insert(inputs.end(), x.begin(), x.end());
      labels.push_back(t->distance());
    }
  if (labels.empty()) fail(ErrorKind::input, "training set has no targets");
  DisNetModel m(config, inputs, labels);
  diff::OptimizerConfig oc;
  oc.kind = diff::OptimizerKind::adam;
  diff::Optimizer opt(oc);
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::vector<double> rows, y, w;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng = sim::scene_rng(config.seed, epoch, 0xd15f);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += config.batch_size) {
      const std::size_t hi = std::min(n, lo + config.batch_size);
      rows.clear();
      y.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        rows.insert(rows.end(), inputs.begin() + static_cast<std::ptrdiff_t>(order[i] * kDisNetInputDim),
                    inputs.begin() + static_cast<std::ptrdiff_t>((order[i] + 1) * kDisNetInputDim));
        y.push_back(labels[order[i]]);
      }
      w.assign(y.size(), 1.0 / static_cast<double>(y.size()));
      diff::Graph g;
      diff::Var loss = diff::weighted_smooth_l1(m.forward(g, rows), y, w, config.huber_delta_m);
      if (!std::isfinite(loss.value()[0])) fail(ErrorKind::numeric, "DisNet training diverged");
      m.params().zero_grad();
      g.backward(loss);
      diff::optimizer_step(m.params(), opt, config.lr);
    }
  }
  return m;
}

MetricsReport evaluate_disnet(DisNetModel& model, const Dataset& dataset) {
  std::vector<DistancePair> pairs;
  for (const auto& s : dataset.scenes)
    for (const auto* t : s.targets()) pairs.push_back({model.predict(t->bbox), t->distance()});
  return compute_metrics(pairs);
}

// --- direct regression ----------------------------------------------------------

TrainConfig direct_regression_config(const TrainConfig& base) {
  TrainConfig c = base;
  c.model.toggles = {true, false, false, false};
  c.model.mode = model::Mode::no_attention;
  c.model.max_refs = 0;
  c.lambda_rel = 0.0;
  return c;
}

train::TrainResult direct_regression_baseline(const Dataset& train_set, const Dataset& val_set,
                                              const TrainConfig& base) {
  return train::train(train_set, val_set, direct_regression_config(base));
}

// --- suites -------------------------------------------------------------------------

std::vector<NamedConfig> table1_configs(const TrainConfig& base) {
  TrainConfig na = base;
  na.model.mode = model::Mode::no_attention;
  NamedConfig disnet{"disnet", base, true, false};
  return {disnet, {"baseline", direct_regression_config(base)}, {"r4d_na", na}, {"r4d", base}};
}

std::vector<NamedConfig> table4_configs(const TrainConfig& base) {
  std::vector<NamedConfig> out;
  const std::pair<const char*, feat::EmbeddingToggles> grid[] = {
      {"tgt", {true, false, false, false}},
      {"tgt_ref", {true, true, false, false}},
      {"tgt_ref_uni", {true, true, true, false}},
      {"tgt_ref_gd", {true, true, false, true}},
      {"tgt_ref_uni_gd", {true, true, true, true}},
  };
  for (const auto& [name, toggles] : grid) {
    TrainConfig c = base;
    c.model.toggles = toggles;
    out.push_back({name, c});
  }
  return out;
}

std::vector<NamedConfig> table5_configs(const TrainConfig& base) {
  std::vector<NamedConfig> out;
  auto both = [&](const std::string& name, TrainConfig c) {
    TrainConfig off = c;
    off.sigma_aug_m = 0.0;
    out.push_back({name, off, false, true});
    out.push_back({name + "_da", c, false, true});
  };
  both("baseline", direct_regression_config(base));
  TrainConfig rel = base;
  rel.model.mode = model::Mode::relative_only;
  rel.model.relative_pick = model::ReferencePick::seeded_random;
  rel.model.relative_seed = base.seed;
  both("relative", rel);
  TrainConfig one = base;
  one.model.max_refs = 1;
  both("one_ref", one);
  both("r4d", base);
  return out;
}

std::vector<double> default_sigma_grid() { return {0, 1, 10, 50, 100, 200}; }

std::vector<NamedConfig> sigma_sweep_configs(const TrainConfig& base, const std::vector<double>& grid) {
  std::vector<NamedConfig> out;
  for (double s : grid) {
    TrainConfig c = base;
    c.sigma_aug_m = s;
    out.push_back({"sigma_" + format_double(s), c});
  }
  return out;
}

std::vector<std::size_t> default_refs_grid() { return {0, 1, 2, 5, 10}; }

std::vector<NamedConfig> refs_sweep_configs(const TrainConfig& base, const std::vector<std::size_t>& grid) {
  std::vector<NamedConfig> out;
  for (std::size_t k : grid) {
    TrainConfig c = base;
    c.model.max_refs = k;
    out.push_back({"refs_" + std::to_string(k), c});
  }
  return out;
}

double measure_latency_us(model::R4DModel& model, std::span<const model::TargetSample> samples, std::size_t repeats) {
  if (samples.empty()) fail(ErrorKind::input, "latency needs at least one sample");
  double best = std::numeric_limits<double>::infinity();
  double sink = 0.0;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& s : samples) sink += model.predict_one(s).absolute_m;
    const double us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
    best = std::min(best, us / static_cast<double>(samples.size()));
  }
  if (!std::isfinite(sink)) fail(ErrorKind::numeric, "non-finite prediction during latency measurement");
  return best;
}

Dataset drop_reference_free(const Dataset& dataset) {
  Dataset out;
  out.split = dataset.split;
  out.provenance = dataset.provenance;
  for (const auto& s : dataset.scenes)
    if (!s.references().empty()) out.scenes.push_back(s);
  return out;
}

SuiteResult run_suite(const Dataset& train_set, const Dataset& val_set, const std::vector<NamedConfig>& configs,
                      const SuiteOptions& options) {
  SuiteResult result;
  for (const auto& nc : configs) {
    ResultRow row;
    row.config = nc.name;
    try {
      const Dataset tr = nc.require_references ? drop_reference_free(train_set) : train_set;
      const Dataset va = nc.require_references ? drop_reference_free(val_set) : val_set;
      if (nc.disnet) {
        DisNetConfig dc;
        dc.seed = nc.config.seed;
        DisNetModel m = disnet_baseline(tr, dc);
        row.report = evaluate_disnet(m, va);
      } else {
        train::TrainResult res = train::train(tr, va, nc.config);
        const auto samples = model::make_samples(va, nc.config.model);
        row.report = train::evaluate(res.model, samples);
        if (options.measure_latency) row.latency_us = measure_latency_us(res.model, samples);
      }
    } catch (const std::exception& e) {
      row.report.reset();
      row.error = e.what();
      result.any_failed = true;
    }
    if (options.on_row) options.on_row(nc.name, row);
    result.rows.push_back(row);
  }
  return result;
}

// --- domain shift ---------------------------------------------------------------------

std::vector<Dataset> regime_sets(const sim::SceneSpec& spec, std::size_t n_scenes, std::uint64_t first_index,
                                 const std::vector<Regime>& regimes) {
  std::vector<Dataset> out;
  for (Regime r : regimes) {
    sim::SceneSpec s = spec;
    s.regime = r;
    Dataset d = sim::generate_dataset(s, n_scenes, first_index);
    d.split = SplitTag::val;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<RegimeReport> domain_shift_eval(model::R4DModel& model, const std::vector<Dataset>& sets,
                                            const std::vector<Regime>& regimes) {
  if (sets.size() != regimes.size() || sets.empty())
    fail(ErrorKind::input, "one dataset per regime is required");
  std::vector<RegimeReport> out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto samples = model::make_samples(sets[i], model.config());
    RegimeReport r;
    r.regime = regimes[i];
    r.report = train::evaluate(model, samples);
    out.push_back(r);
  }
  const double day = out.front().report.abs_rel;
  for (auto& r : out) r.degradation = day > 0.0 ? (r.report.abs_rel - day) / day : 0.0;
  return out;
}

std::string format_domain_shift(const std::vector<RegimeReport>& reports) {
  std::string s = "regime,n,pct5,pct10,pct15,abs_rel,sq_rel,rmse,rmse_log,degradation\n";
  for (const auto& r : reports) {
    s += std::string(to_string(r.regime)) + "," + std::to_string(r.report.n);
    for (double v : {r.report.pct_under_5, r.report.pct_under_10, r.report.pct_under_15, r.report.abs_rel,
                     r.report.sq_rel, r.report.rmse, r.report.rmse_log, r.degradation})
      s += "," + format_double(v);
    s += "\n";
  }
  return s;
}

// --- prediction files and attention dumps --------------------------------------

std::vector<DistancePair> match_predictions(const std::vector<data::PredictionRecord>& predictions,
                                            const Dataset& truth) {
  std::map<std::pair<std::uint64_t, int>, double> labels;
  for (const auto& s : truth.scenes)
    for (const auto* t : s.targets()) labels[{s.scene_id, t->id}] = t->distance();
  std::set<std::pair<std::uint64_t, int>> seen;
  std::vector<DistancePair> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    const std::pair<std::uint64_t, int> key{p.scene_id, p.target_id};
    auto it = labels.find(key);
    if (it == labels.end())
      fail(ErrorKind::input, "prediction for scene " + std::to_string(p.scene_id) + " target " +
                                 std::to_string(p.target_id) + " has no matching ground-truth target");
    if (!seen.insert(key).second)
      fail(ErrorKind::input, "scene " + std::to_string(p.scene_id) + " target " + std::to_string(p.target_id) +
                                 " is predicted more than once");
    out.push_back({p.predicted_distance_m, it->second});
  }
  return out;
}

std::vector<data::PredictionRecord> prediction_records(std::span<const model::TargetSample> samples,
                                                       const std::vector<model::DistancePrediction>& predictions) {
  if (samples.size() != predictions.size()) fail(ErrorKind::dimension, "one prediction per sample is required");
  std::vector<data::PredictionRecord> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    data::PredictionRecord r;
    r.scene_id = samples[i].scene_id;
    r.target_id = samples[i].target_id;
    r.predicted_distance_m = predictions[i].absolute_m;
    if (!predictions[i].weights.empty()) {
      std::vector<std::pair<int, double>> att;
      for (std::size_t k = 0; k < predictions[i].weights.size(); ++k)
        att.emplace_back(predictions[i].reference_ids[k], predictions[i].weights[k]);
      r.attention = std::move(att);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ResultRow> breakdown_rows(const std::string& prefix, const RangeBucketReport& report) {
  std::vector<ResultRow> rows;
  for (const auto& b : report.buckets) {
    ResultRow r;
    r.config = prefix + "_" + format_double(b.lo) + "_" + format_double(b.hi);
    r.report = b.report;
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

nlohmann::ordered_json box_json(const BBox& b) { return {b.cx, b.cy, b.w, b.h}; }

}  // namespace

std::string attention_records_jsonl(std::span<const model::TargetSample> samples,
                                    const std::vector<model::DistancePrediction>& predictions) {
  if (samples.size() != predictions.size()) fail(ErrorKind::dimension, "one prediction per sample is required");
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = predictions[i];
    nlohmann::ordered_json j;
    j["scene_id"] = s.scene_id;
    j["target_id"] = s.target_id;
    j["target_box"] = box_json(s.target_box);
    j["predicted_distance_m"] = p.absolute_m;
    j["label_distance_m"] = s.label_m;
    auto refs = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < s.k(); ++k) {
      nlohmann::ordered_json r;
      r["id"] = s.ref_ids[k];
      r["box"] = box_json(s.ref_boxes[k]);
      r["known_distance_m"] = s.ref_known_m[k];
      r["weight"] = p.weights[k];
      r["relative_m"] = p.per_pair_relative_m[k];
      refs.push_back(std::move(r));
    }
    j["references"] = std::move(refs);
    out += j.dump() + "\n";
  }
  return out;
}

std::string attention_plot_csv(std::span<const model::TargetSample> samples,
                               const std::vector<model::DistancePrediction>& predictions) {
  if (samples.size() != predictions.size()) fail(ErrorKind::dimension, "one prediction per sample is required");
  std::string out = "scene_id,target_id,role,object_id,cx,cy,w,h,weight,distance_m\n";
  auto row = [&](const model::TargetSample& s, const char* role, int id, const BBox& b, const std::string& w, double d) {
    out += std::to_string(s.scene_id) + "," + std::to_string(s.target_id) + "," + role + "," + std::to_string(id);
    for (double v : {b.cx, b.cy, b.w, b.h}) out += "," + format_double(v);
    out += "," + w + "," + format_double(d) + "\n";
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    row(s, "target", s.target_id, s.target_box, "", predictions[i].absolute_m);
    for (std::size_t k = 0; k < s.k(); ++k)
      row(s, "reference", s.ref_ids[k], s.ref_boxes[k], format_double(predictions[i].weights[k]), s.ref_known_m[k]);
  }
  return out;
}

}  // namespace r4d::eval
