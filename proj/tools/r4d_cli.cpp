// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// r4d command-line tool. Talks to the library only through r4d.h.
//
// Exit codes: 0 success, 1 suite finished with failed rows or internal error,
// 2 usage or input error, 3 IO error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "r4d/r4d.h"

namespace {

struct Exit {
  int code;
};

int exit_code(r4d_status s) {
  switch (s) {
    case R4D_OK: return 0;
    case R4D_ERR_IO: return 3;
    case R4D_ERR_NUMERIC: return 4;
    case R4D_ERR_STATE:
    case R4D_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

void check(r4d_status s) {
  if (s == R4D_OK) return;
  std::fprintf(stderr, "r4d: %s\n", r4d_last_error());
  throw Exit{exit_code(s)};
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "r4d: io error: cannot open '%s'\n", path.c_str());
    throw Exit{3};
  }
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const std::string& path, const std::string& text) { check(r4d_write_file(path.c_str(), text.data(), text.size())); }

std::string take(char* s) {
  std::string out = s ? s : "";
  r4d_string_free(s);
  return out;
}

struct DatasetDeleter {
  void operator()(r4d_dataset* d) const { r4d_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(r4d_model* m) const { r4d_model_free(m); }
};
using DatasetPtr = std::unique_ptr<r4d_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<r4d_model, ModelDeleter>;

DatasetPtr load_dataset(const std::string& path) {
  r4d_dataset* d = nullptr;
  check(r4d_dataset_load(path.c_str(), &d));
  return DatasetPtr(d);
}

ModelPtr load_model(const std::string& path) {
  r4d_model* m = nullptr;
  check(r4d_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

std::string format_metrics(const r4d_metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "n=%zu <5%%=%.2f <10%%=%.2f <15%%=%.2f abs_rel=%.4f sq_rel=%.4f rmse=%.3f rmse_log=%.4f",
                m.n, m.pct_under_5, m.pct_under_10, m.pct_under_15, m.abs_rel, m.sq_rel, m.rmse, m.rmse_log);
  return buf;
}

// Optional text file plus an optional seed override.
struct TextInput {
  std::string path;
  std::optional<std::uint64_t> seed;

  std::optional<std::string> text() const {
    if (path.empty()) return std::nullopt;
    return read_text(path);
  }
  const char* source() const { return path.empty() ? nullptr : path.c_str(); }
  const std::uint64_t* seed_ptr() const { return seed ? &*seed : nullptr; }
};

const char* c_str_or_null(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

// --- gen-data ---------------------------------------------------------------

struct GenData {
  TextInput spec;
  std::uint64_t scenes = 0;
  std::uint64_t first = 0;
  std::string out;
  std::string summary;
};

void add_gen_data(CLI::App& app, GenData& o) {
  auto* sub = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  sub->add_option("--spec", o.spec.path, "Scene spec file (key = value)")->check(CLI::ExistingFile);
  sub->add_option("--scenes", o.scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  sub->add_option("--seed", o.spec.seed, "Override the spec seed");
  sub->add_option("--first", o.first, "Index of the first scene")->capture_default_str();
  sub->add_option("--out", o.out, "Dataset output path")->required();
  sub->add_option("--summary", o.summary, "Summary output path (default: <out>.summary.txt)");
}

int run_gen_data(const GenData& o) {
  const auto text = o.spec.text();
  r4d_dataset* raw = nullptr;
  check(r4d_dataset_generate(c_str_or_null(text), o.spec.source(), o.spec.seed_ptr(), o.scenes, o.first, &raw));
  DatasetPtr ds(raw);
  check(r4d_dataset_save(ds.get(), o.out.c_str()));
  const double edges[] = {0, 20, 40, 60, 80, 120, 160, 200, 250, 300};
  char* summary = nullptr;
  check(r4d_dataset_summary(ds.get(), edges, std::size(edges), &summary));
  const std::string s = take(summary);
  write_text(o.summary.empty() ? o.out + ".summary.txt" : o.summary, s);
  std::fputs(s.c_str(), stdout);
  return 0;
}

// --- train ------------------------------------------------------------------

struct Train {
  TextInput config;
  std::string train, val, out, history;
  bool quiet = false;
};

void add_train(CLI::App& app, Train& o) {
  auto* sub = app.add_subcommand("train", "Train a model");
  sub->add_option("--config", o.config.path, "Run config file (key = value)")->check(CLI::ExistingFile);
  sub->add_option("--train", o.train, "Training dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--val", o.val, "Validation dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Checkpoint output path")->required();
  sub->add_option("--history", o.history, "Per-epoch history CSV (default: <out>.history.csv)");
  sub->add_option("--seed", o.config.seed, "Override the config seed");
  sub->add_flag("--quiet", o.quiet, "No per-epoch progress on stderr");
}

int run_train(const Train& o) {
  const auto text = o.config.text();
  auto tr = load_dataset(o.train);
  auto va = load_dataset(o.val);
  r4d_epoch_fn progress = [](void*, size_t epoch, double lr, double loss, const r4d_metrics* m) {
    std::fprintf(stderr, "epoch %zu lr %.6g loss %.4f val %s\n", epoch, lr, loss, format_metrics(*m).c_str());
  };
  r4d_model* raw = nullptr;
  char* history = nullptr;
  check(r4d_train(tr.get(), va.get(), c_str_or_null(text), o.config.source(), o.config.seed_ptr(),
                  o.quiet ? nullptr : progress, nullptr, &raw, &history));
  ModelPtr model(raw);
  const std::string h = take(history);
  check(r4d_model_save(model.get(), o.out.c_str()));
  write_text(o.history.empty() ? o.out + ".history.csv" : o.history, h);
  r4d_metrics m{};
  check(r4d_evaluate(model.get(), va.get(), nullptr, nullptr, 0, nullptr, &m, nullptr));
  std::printf("val %s\n", format_metrics(m).c_str());
  return 0;
}

// --- eval and metrics -------------------------------------------------------

struct Eval {
  std::string checkpoint, data, pred_out, out, name = "eval";
  std::vector<double> breakdown;
};

void add_eval(CLI::App& app, Eval& o) {
  auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", o.data, "Labelled dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--pred-out", o.pred_out, "Prediction file with attention fields")->required();
  sub->add_option("--breakdown", o.breakdown, "Range edges in meters, e.g. 80,150,220,300")->delimiter(',');
  sub->add_option("--out", o.out, "Results table path");
  sub->add_option("--name", o.name, "Row name")->capture_default_str();
}

int run_eval(const Eval& o) {
  auto model = load_model(o.checkpoint);
  auto ds = load_dataset(o.data);
  r4d_metrics m{};
  char* table = nullptr;
  check(r4d_evaluate(model.get(), ds.get(), o.name.c_str(), o.breakdown.data(), o.breakdown.size(),
                     o.pred_out.c_str(), &m, &table));
  const std::string t = take(table);
  if (!o.out.empty()) write_text(o.out, t);
  std::printf("%s %s\n", o.name.c_str(), format_metrics(m).c_str());
  std::fputs(t.c_str(), stdout);
  return 0;
}

struct Metrics {
  std::string pred, gt, out;
  std::vector<double> breakdown;
};

void add_metrics(CLI::App& app, Metrics& o) {
  auto* sub = app.add_subcommand("metrics", "Score a prediction file against ground truth");
  sub->add_option("--pred", o.pred, "Prediction file (JSON lines)")->required()->check(CLI::ExistingFile);
  sub->add_option("--gt", o.gt, "Labelled dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--breakdown", o.breakdown, "Range edges in meters")->delimiter(',');
  sub->add_option("--out", o.out, "Results table path");
}

int run_metrics(const Metrics& o) {
  auto gt = load_dataset(o.gt);
  r4d_metrics m{};
  char* table = nullptr;
  check(r4d_score_predictions(o.pred.c_str(), gt.get(), o.breakdown.data(), o.breakdown.size(), &m, &table));
  const std::string t = take(table);
  if (!o.out.empty()) write_text(o.out, t);
  std::printf("metrics %s\n", format_metrics(m).c_str());
  std::fputs(t.c_str(), stdout);
  return 0;
}

// --- suites -----------------------------------------------------------------

struct Suite {
  std::string suite;
  TextInput config;
  std::string train, val, out;
  std::vector<double> grid;
  bool latency = false;
};

CLI::App* add_suite_common(CLI::App& app, const char* name, const char* help, Suite& o) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", o.config.path, "Base run config file")->check(CLI::ExistingFile);
  sub->add_option("--train", o.train, "Training dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--val", o.val, "Validation dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Results table path")->required();
  sub->add_option("--seed", o.config.seed, "Override the config seed");
  return sub;
}

void add_suites(CLI::App& app, Suite& ablate, Suite& sigma, Suite& refs) {
  auto* a = add_suite_common(app, "ablate", "Run an ablation table", ablate);
  a->add_option("--suite", ablate.suite, "table1, table4 or table5")
      ->required()
      ->check(CLI::IsMember({"table1", "table4", "table5"}));
  a->add_flag("--latency", ablate.latency, "Measure per-target latency");
  sigma.suite = "sweep-sigma";
  auto* s = add_suite_common(app, "sweep-sigma", "Sweep the augmentation sigma", sigma);
  s->add_option("--grid", sigma.grid, "Sigma values in meters (default 0,1,10,50,100,200)")->delimiter(',');
  s->add_flag("--latency", sigma.latency, "Measure per-target latency");
  refs.suite = "sweep-refs";
  refs.latency = true;
  auto* r = add_suite_common(app, "sweep-refs", "Sweep the reference cap (with latency)", refs);
  r->add_option("--grid", refs.grid, "Reference caps (default 0,1,2,5,10)")->delimiter(',');
}

int run_suite(const Suite& o) {
  const auto text = o.config.text();
  auto tr = load_dataset(o.train);
  auto va = load_dataset(o.val);
  r4d_row_fn progress = [](void*, const char* name, const r4d_metrics* m, const char* error) {
    if (m != nullptr)
      std::fprintf(stderr, "%s %s\n", name, format_metrics(*m).c_str());
    else
      std::fprintf(stderr, "%s FAILED: %s\n", name, error);
  };
  char* table = nullptr;
  int failed = 0;
  check(r4d_run_suite(tr.get(), va.get(), o.suite.c_str(), c_str_or_null(text), o.config.source(),
                      o.config.seed_ptr(), o.grid.empty() ? nullptr : o.grid.data(), o.grid.size(),
                      o.latency ? 1 : 0, progress, nullptr, &table, &failed));
  const std::string t = take(table);
  write_text(o.out, t);
  std::fputs(t.c_str(), stdout);
  if (failed != 0) {
    std::fprintf(stderr, "r4d: one or more rows failed\n");
    return 1;
  }
  return 0;
}

// --- domain-shift and dump-attention ----------------------------------------

struct DomainShift {
  std::string checkpoint, out;
  TextInput spec;
  std::uint64_t scenes = 500;
  std::uint64_t first = 0;
};

void add_domain_shift(CLI::App& app, DomainShift& o) {
  auto* sub = app.add_subcommand("domain-shift", "Evaluate under day, dawn_dusk and night rendering");
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--spec", o.spec.path, "Scene spec file")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.spec.seed, "Override the spec seed");
  sub->add_option("--scenes", o.scenes, "Number of scenes per regime")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--first", o.first, "Index of the first scene")->capture_default_str();
  sub->add_option("--out", o.out, "Results table path")->required();
}

int run_domain_shift(const DomainShift& o) {
  const auto text = o.spec.text();
  auto model = load_model(o.checkpoint);
  char* table = nullptr;
  check(r4d_domain_shift(model.get(), c_str_or_null(text), o.spec.source(), o.spec.seed_ptr(), o.scenes, o.first,
                         &table));
  const std::string t = take(table);
  write_text(o.out, t);
  std::fputs(t.c_str(), stdout);
  return 0;
}

struct DumpAttention {
  std::string checkpoint, data, out, plot;
};

void add_dump_attention(CLI::App& app, DumpAttention& o) {
  auto* sub = app.add_subcommand("dump-attention", "Write per-target attention weights");
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", o.data, "Dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Attention records (JSON lines)")->required();
  sub->add_option("--plot", o.plot, "CSV of target and reference boxes with weights");
}

int run_dump_attention(const DumpAttention& o) {
  auto model = load_model(o.checkpoint);
  auto ds = load_dataset(o.data);
  size_t n = 0;
  check(r4d_dump_attention(model.get(), ds.get(), o.out.c_str(), o.plot.empty() ? nullptr : o.plot.c_str(), &n));
  std::printf("wrote attention for %zu targets\n", n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-range distance estimation with reference objects"};
  app.set_version_flag("--version", std::string(r4d_version()));
  app.require_subcommand(1);

  GenData gen;
  Train tr;
  Eval ev;
  Metrics met;
  Suite ablate, sigma, refs;
  DomainShift shift;
  DumpAttention dump;
  add_gen_data(app, gen);
  add_train(app, tr);
  add_eval(app, ev);
  add_metrics(app, met);
  add_suites(app, ablate, sigma, refs);
  add_domain_shift(app, shift);
  add_dump_attention(app, dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return run_gen_data(gen);
    if (app.got_subcommand("train")) return run_train(tr);
    if (app.got_subcommand("eval")) return run_eval(ev);
    if (app.got_subcommand("metrics")) return run_metrics(met);
    if (app.got_subcommand("ablate")) return run_suite(ablate);
    if (app.got_subcommand("sweep-sigma")) return run_suite(sigma);
    if (app.got_subcommand("sweep-refs")) return run_suite(refs);
    if (app.got_subcommand("domain-shift")) return run_domain_shift(shift);
    if (app.got_subcommand("dump-attention")) return run_dump_attention(dump);
  } catch (const Exit& e) {
    return e.code;
  }
  return 2;
}
