// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "r4d/error.hpp"
#include "r4d/kv.hpp"

namespace r4d::eval {

MetricsReport compute_metrics(std::span<const DistancePair> pairs) {
  if (pairs.empty()) fail(ErrorKind::input, "cannot compute metrics of an empty prediction list");
  std::size_t under5 = 0, under10 = 0, under15 = 0;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  for (const auto& p : pairs) {
    const double d = p.predicted_m, t = p.truth_m;
    if (!(t > 0.0) || !std::isfinite(t)) fail(ErrorKind::input, "ground-truth distance must be positive");
    if (!std::isfinite(d)) fail(ErrorKind::numeric, "predicted distance is not finite");
    const double err = d - t;
    const double rel = std::abs(err) / t;
    abs_rel += rel;
    sq_rel += err * err / t;
    sq += err * err;
    const double lg = std::log(std::max(d, 1.0)) - std::log(t);
    sq_log += lg * lg;
    if (d > 0.0) {
      under5 += rel < 0.05;
      under10 += rel < 0.10;
      under15 += rel < 0.15;
    }
  }
  const double n = static_cast<double>(pairs.size());
  MetricsReport r;
  r.n = pairs.size();
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  r.pct_under_5 = 100.0 * static_cast<double>(under5) / n;
  r.pct_under_10 = 100.0 * static_cast<double>(under10) / n;
  r.pct_under_15 = 100.0 * static_cast<double>(under15) / n;
  return r;
}

RangeBucketReport per_range_breakdown(std::span<const DistancePair> pairs, const std::vector<double>& edges) {
  if (edges.size() < 2) fail(ErrorKind::input, "range breakdown needs at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) fail(ErrorKind::input, "range edges must be strictly ascending");
  RangeBucketReport out;
  out.edges = edges;
  std::vector<std::vector<DistancePair>> members(edges.size() - 1);
  for (const auto& p : pairs) {
    // First edge >= d*; the bucket is the interval ending there.
    auto it = std::lower_bound(edges.begin(), edges.end(), p.truth_m);
    if (it == edges.begin() || it == edges.end()) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "distance %.17g lies outside (%g, %g]", p.truth_m, edges.front(), edges.back());
      fail(ErrorKind::assignment, buf);
    }
    members[static_cast<std::size_t>(it - edges.begin()) - 1].push_back(p);
  }
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    RangeBucket bucket;
    bucket.lo = edges[b];
    bucket.hi = edges[b + 1];
    bucket.n = members[b].size();
    if (!members[b].empty()) bucket.report = compute_metrics(members[b]);
    out.buckets.push_back(bucket);
  }
  return out;
}

std::string results_header() { return "config,n,pct5,pct10,pct15,abs_rel,sq_rel,rmse,rmse_log,latency_us"; }

std::string format_result_row(const ResultRow& row) {
  std::string s = row.config;
  if (row.report) {
    const MetricsReport& r = *row.report;
    s += "," + std::to_string(r.n);
    for (double v : {r.pct_under_5, r.pct_under_10, r.pct_under_15, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log})
      s += "," + format_double(v);
  } else {
    s += ",0,,,,,,,";
  }
  s += ",";
  if (row.latency_us) s += format_double(*row.latency_us);
  return s;
}

std::string format_results_table(const std::vector<ResultRow>& rows) {
  std::string out = results_header() + "\n";
  for (const auto& r : rows) out += format_result_row(r) + "\n";
  return out;
}

std::string format_report(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "n=%zu <5%%=%.2f <10%%=%.2f <15%%=%.2f abs_rel=%.4f sq_rel=%.4f rmse=%.3f rmse_log=%.4f",
                r.n, r.pct_under_5, r.pct_under_10, r.pct_under_15, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log);
  return buf;
}

}  // namespace r4d::eval
