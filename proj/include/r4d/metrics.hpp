// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distance error metrics, per-range breakdowns and the results table format.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace r4d::eval {

struct DistancePair {
  double predicted_m = 0.0;
  double truth_m = 0.0;
};

struct MetricsReport {
  std::size_t n = 0;
  double pct_under_5 = 0.0;
  double pct_under_10 = 0.0;
  double pct_under_15 = 0.0;
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
};

// abs_rel = mean |d - d*| / d*, sq_rel = mean (d - d*)^2 / d*,
// rmse_log uses the natural log with predictions floored at 1 m.
// Non-positive predictions always count as threshold misses.
MetricsReport compute_metrics(std::span<const DistancePair> pairs);

struct RangeBucket {
  double lo = 0.0;  // exclusive
  double hi = 0.0;  // inclusive
  std::optional<MetricsReport> report;  // empty bucket: none
  std::size_t n = 0;
};

struct RangeBucketReport {
  std::vector<double> edges;
  std::vector<RangeBucket> buckets;
};

// Right-closed buckets (edges[i], edges[i+1]].
RangeBucketReport per_range_breakdown(std::span<const DistancePair> pairs, const std::vector<double>& edges);

// One results-table row. latency_us is per-target inference time, when measured.
struct ResultRow {
  std::string config;
  std::optional<MetricsReport> report;
  std::optional<double> latency_us;
  std::string error;  // non-empty for a failed row
};

std::string results_header();
std::string format_result_row(const ResultRow& row);
std::string format_results_table(const std::vector<ResultRow>& rows);
// Short human-readable summary of one report.
std::string format_report(const MetricsReport& report);

}  // namespace r4d::eval
