// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/r4d.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include "r4d/datamodel.hpp"
#include "r4d/error.hpp"
#include "r4d/eval.hpp"
#include "r4d/io.hpp"
#include "r4d/scenesim.hpp"
#include "r4d/training.hpp"

struct r4d_dataset {
  r4d::Dataset data;
};

struct r4d_model {
  r4d::model::R4DModel net;
};

namespace {

thread_local std::string g_last_error;

struct NullArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

r4d_status status_of(r4d::ErrorKind kind) {
  using r4d::ErrorKind;
  switch (kind) {
    case ErrorKind::dimension: return R4D_ERR_DIMENSION;
    case ErrorKind::precondition: return R4D_ERR_PRECONDITION;
    case ErrorKind::configuration: return R4D_ERR_CONFIGURATION;
    case ErrorKind::input: return R4D_ERR_INPUT;
    case ErrorKind::parse: return R4D_ERR_PARSE;
    case ErrorKind::version: return R4D_ERR_VERSION;
    case ErrorKind::io: return R4D_ERR_IO;
    case ErrorKind::numeric: return R4D_ERR_NUMERIC;
    case ErrorKind::state: return R4D_ERR_STATE;
    case ErrorKind::assignment: return R4D_ERR_ASSIGNMENT;
  }
  return R4D_ERR_INTERNAL;
}

template <class F>
r4d_status guard(F&& body) {
  g_last_error.clear();
  try {
    body();
    return R4D_OK;
  } catch (const r4d::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const NullArgument& e) {
    g_last_error = e.what();
    return R4D_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
  } catch (...) {
    g_last_error = "internal error: unknown exception";
  }
  return R4D_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw NullArgument(what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_string(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

r4d_metrics to_c(const r4d::eval::MetricsReport& r) {
  return {r.n, r.pct_under_5, r.pct_under_10, r.pct_under_15, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log};
}

r4d::train::TrainConfig config_from(const char* text, const char* source, const uint64_t* seed = nullptr) {
  auto c = text == nullptr ? r4d::train::TrainConfig::desk()
                           : r4d::train::TrainConfig::from_text(text, source ? source : "config");
  if (seed != nullptr) c.seed = *seed;
  return c;
}

r4d::sim::SceneSpec spec_from(const char* text, const char* source, const uint64_t* seed = nullptr) {
  auto spec = text == nullptr ? r4d::sim::SceneSpec{} : r4d::sim::SceneSpec::from_text(text, source ? source : "spec");
  if (seed != nullptr) spec.seed = *seed;
  return spec;
}

std::vector<double> edges_from(const double* edges, size_t n) {
  if (n > 0 && edges == nullptr) r4d::fail(r4d::ErrorKind::input, "edge list is null");
  return n == 0 ? std::vector<double>{} : std::vector<double>(edges, edges + n);
}

}  // namespace

extern "C" {

const char* r4d_version(void) { return "1.0.0"; }

const char* r4d_last_error(void) { return g_last_error.c_str(); }

const char* r4d_status_name(r4d_status status) {
  switch (status) {
    case R4D_OK: return "ok";
    case R4D_ERR_DIMENSION: return "dimension";
    case R4D_ERR_PRECONDITION: return "precondition";
    case R4D_ERR_CONFIGURATION: return "configuration";
    case R4D_ERR_INPUT: return "input";
    case R4D_ERR_PARSE: return "parse";
    case R4D_ERR_VERSION: return "version";
    case R4D_ERR_IO: return "io";
    case R4D_ERR_NUMERIC: return "numeric";
    case R4D_ERR_STATE: return "state";
    case R4D_ERR_ASSIGNMENT: return "assignment";
    case R4D_ERR_ARGUMENT: return "argument";
    case R4D_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void r4d_string_free(char* s) { std::free(s); }

r4d_status r4d_write_file(const char* path, const char* data, size_t size) {
  return guard([&] {
    need(path, "null path");
    if (size > 0) need(data, "null data");
    r4d::io::write_file_atomic(path, std::string(data ? data : "", size));
  });
}

r4d_status r4d_dataset_generate(const char* spec_text, const char* spec_source, const uint64_t* seed,
                                uint64_t n_scenes, uint64_t first_index, r4d_dataset** out) {
  return guard([&] {
    need(out, "null output handle");
    *out = nullptr;
    const auto spec = spec_from(spec_text, spec_source, seed);
    auto ds = r4d::sim::generate_dataset(spec, static_cast<std::size_t>(n_scenes), first_index);
    *out = new r4d_dataset{std::move(ds)};
  });
}

r4d_status r4d_dataset_load(const char* path, r4d_dataset** out) {
  return guard([&] {
    need(path, "null path");
    need(out, "null output handle");
    *out = nullptr;
    *out = new r4d_dataset{r4d::data::read_dataset(path)};
  });
}

r4d_status r4d_dataset_save(const r4d_dataset* dataset, const char* path) {
  return guard([&] {
    need(dataset, "null dataset");
    need(path, "null path");
    r4d::data::write_dataset(path, dataset->data);
  });
}

void r4d_dataset_free(r4d_dataset* dataset) { delete dataset; }

r4d_status r4d_dataset_counts(const r4d_dataset* dataset, size_t* scenes, size_t* targets) {
  return guard([&] {
    need(dataset, "null dataset");
    if (scenes) *scenes = dataset->data.scenes.size();
    if (targets) *targets = dataset->data.target_count();
  });
}

r4d_status r4d_dataset_summary(const r4d_dataset* dataset, const double* edges, size_t n_edges, char** text) {
  return guard([&] {
    need(dataset, "null dataset");
    need(text, "null output string");
    put_string(text, r4d::sim::format_summary(r4d::sim::summarize(dataset->data, edges_from(edges, n_edges))));
  });
}

r4d_status r4d_config_check(const char* config_text, const char* source, char** canonical) {
  return guard([&] {
    need(config_text, "null config text");
    put_string(canonical, config_from(config_text, source).to_text());
  });
}

r4d_status r4d_scene_spec_check(const char* spec_text, const char* source, char** canonical) {
  return guard([&] {
    need(spec_text, "null spec text");
    const auto spec = spec_from(spec_text, source);
    spec.validate();
    put_string(canonical, spec.to_text());
  });
}

r4d_status r4d_train(const r4d_dataset* train_set, const r4d_dataset* val_set, const char* config_text,
                     const char* config_source, const uint64_t* seed, r4d_epoch_fn on_epoch, void* user,
                     r4d_model** out, char** history_csv) {
  return guard([&] {
    need(train_set, "null training set");
    need(val_set, "null validation set");
    need(out, "null output handle");
    *out = nullptr;
    const auto config = config_from(config_text, config_source, seed);
    r4d::train::EpochCallback cb;
    if (on_epoch != nullptr)
      cb = [&](const r4d::train::EpochRecord& r) {
        const r4d_metrics m = to_c(r.val);
        on_epoch(user, r.epoch, r.lr, r.train_loss, &m);
      };
    auto result = r4d::train::train(train_set->data, val_set->data, config, cb);
    const std::string history = r4d::train::history_csv(result.history);
    auto* model = new r4d_model{std::move(result.model)};
    try {
      put_string(history_csv, history);
    } catch (...) {
      delete model;
      throw;
    }
    *out = model;
  });
}

r4d_status r4d_model_save(const r4d_model* model, const char* path) {
  return guard([&] {
    need(model, "null model");
    need(path, "null path");
    model->net.save(path);
  });
}

r4d_status r4d_model_load(const char* path, r4d_model** out) {
  return guard([&] {
    need(path, "null path");
    need(out, "null output handle");
    *out = nullptr;
    *out = new r4d_model{r4d::model::R4DModel::load(path)};
  });
}

void r4d_model_free(r4d_model* model) { delete model; }

r4d_status r4d_evaluate(r4d_model* model, const r4d_dataset* dataset, const char* row_name, const double* edges,
                        size_t n_edges, const char* predictions_path, r4d_metrics* metrics, char** table) {
  return guard([&] {
    need(model, "null model");
    need(dataset, "null dataset");
    const auto samples = r4d::model::make_samples(dataset->data, model->net.config());
    const auto preds = r4d::train::predict_dataset(model->net, samples);
    std::vector<r4d::eval::DistancePair> pairs(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) pairs[i] = {preds[i].absolute_m, samples[i].label_m};
    const auto report = r4d::eval::compute_metrics(pairs);
    std::vector<r4d::eval::ResultRow> rows = {{row_name ? row_name : "eval", report, std::nullopt, ""}};
    if (n_edges > 0) {
      auto extra = r4d::eval::breakdown_rows("range", r4d::eval::per_range_breakdown(pairs, edges_from(edges, n_edges)));
      rows.insert(rows.end(), extra.begin(), extra.end());
    }
    if (predictions_path != nullptr)
      r4d::data::write_predictions(predictions_path, r4d::eval::prediction_records(samples, preds));
    if (metrics) *metrics = to_c(report);
    put_string(table, r4d::eval::format_results_table(rows));
  });
}

r4d_status r4d_score_predictions(const char* predictions_path, const r4d_dataset* truth, const double* edges,
                                 size_t n_edges, r4d_metrics* metrics, char** table) {
  return guard([&] {
    need(predictions_path, "null path");
    need(truth, "null dataset");
    const auto records = r4d::data::read_predictions(predictions_path);
    const auto pairs = r4d::eval::match_predictions(records, truth->data);
    const auto report = r4d::eval::compute_metrics(pairs);
    std::vector<r4d::eval::ResultRow> rows = {{"metrics", report, std::nullopt, ""}};
    if (n_edges > 0) {
      auto extra = r4d::eval::breakdown_rows("range", r4d::eval::per_range_breakdown(pairs, edges_from(edges, n_edges)));
      rows.insert(rows.end(), extra.begin(), extra.end());
    }
    if (metrics) *metrics = to_c(report);
    put_string(table, r4d::eval::format_results_table(rows));
  });
}

r4d_status r4d_run_suite(const r4d_dataset* train_set, const r4d_dataset* val_set, const char* suite,
                         const char* config_text, const char* config_source, const uint64_t* seed,
                         const double* grid, size_t n_grid,
                         int measure_latency, r4d_row_fn on_row, void* user, char** table, int* any_failed) {
  return guard([&] {
    need(train_set, "null training set");
    need(val_set, "null validation set");
    need(suite, "null suite name");
    const auto base = config_from(config_text, config_source, seed);
    const std::vector<double> values = edges_from(grid, n_grid);
    const std::string name = suite;
    std::vector<r4d::eval::NamedConfig> configs;
    if (name == "table1") {
      configs = r4d::eval::table1_configs(base);
    } else if (name == "table4") {
      configs = r4d::eval::table4_configs(base);
    } else if (name == "table5") {
      configs = r4d::eval::table5_configs(base);
    } else if (name == "sweep-sigma") {
      const auto g = values.empty() ? r4d::eval::default_sigma_grid() : values;
      for (double s : g)
        if (!(s >= 0.0)) r4d::fail(r4d::ErrorKind::input, "sigma grid values must be non-negative");
      configs = r4d::eval::sigma_sweep_configs(base, g);
    } else if (name == "sweep-refs") {
      std::vector<std::size_t> g;
      for (double v : values) {
        if (!(v >= 0.0) || v != std::floor(v)) r4d::fail(r4d::ErrorKind::input, "reference counts must be whole numbers");
        g.push_back(static_cast<std::size_t>(v));
      }
      configs = r4d::eval::refs_sweep_configs(base, g.empty() ? r4d::eval::default_refs_grid() : g);
    } else {
      r4d::fail(r4d::ErrorKind::input, "unknown suite '" + name + "'");
    }
    r4d::eval::SuiteOptions opt;
    opt.measure_latency = measure_latency != 0;
    if (on_row != nullptr)
      opt.on_row = [&](const std::string& row, const r4d::eval::ResultRow& r) {
        if (r.report) {
          const r4d_metrics m = to_c(*r.report);
          on_row(user, row.c_str(), &m, nullptr);
        } else {
          on_row(user, row.c_str(), nullptr, r.error.c_str());
        }
      };
    const auto result = r4d::eval::run_suite(train_set->data, val_set->data, configs, opt);
    if (any_failed) *any_failed = result.any_failed ? 1 : 0;
    put_string(table, r4d::eval::format_results_table(result.rows));
  });
}

r4d_status r4d_domain_shift(r4d_model* model, const char* spec_text, const char* spec_source,
                            const uint64_t* seed, uint64_t n_scenes, uint64_t first_index, char** table) {
  return guard([&] {
    need(model, "null model");
    const auto spec = spec_from(spec_text, spec_source, seed);
    const std::vector<r4d::Regime> regimes = {r4d::Regime::day, r4d::Regime::dawn_dusk, r4d::Regime::night};
    const auto sets = r4d::eval::regime_sets(spec, static_cast<std::size_t>(n_scenes), first_index, regimes);
    put_string(table, r4d::eval::format_domain_shift(r4d::eval::domain_shift_eval(model->net, sets, regimes)));
  });
}

r4d_status r4d_dump_attention(r4d_model* model, const r4d_dataset* dataset, const char* records_path,
                              const char* plot_path, size_t* n_targets) {
  return guard([&] {
    need(model, "null model");
    need(dataset, "null dataset");
    need(records_path, "null path");
    const auto samples = r4d::model::make_samples(dataset->data, model->net.config());
    const auto preds = r4d::train::predict_dataset(model->net, samples);
    r4d::io::write_file_atomic(records_path, r4d::eval::attention_records_jsonl(samples, preds));
    if (plot_path != nullptr) r4d::io::write_file_atomic(plot_path, r4d::eval::attention_plot_csv(samples, preds));
    if (n_targets) *n_targets = samples.size();
  });
}

}  // extern "C"
