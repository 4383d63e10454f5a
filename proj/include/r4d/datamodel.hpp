// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset and prediction files, splitting, the pseudo long-range cutoff and
// external label ingestion.
//
// Dataset files are JSON lines: a header object
//   {"format":"r4d-dataset","version":1,"split":..,"provenance":..,"scene_count":N}
// followed by one scene object per line. Prediction files use the header
//   {"format":"r4d-predictions","version":1}
// and one PredictionRecord per line.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "r4d/scene.hpp"

namespace r4d::data {

inline constexpr int kDatasetVersion = 1;
inline constexpr int kPredictionVersion = 1;
inline constexpr int kLabelFormatVersion = 1;

std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(std::string_view text, const std::string& source);
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

struct PredictionRecord {
  std::uint64_t scene_id = 0;
  int target_id = 0;
  double predicted_distance_m = 0.0;
  std::optional<std::vector<std::pair<int, double>>> attention;

  // Positive distance; attention weights, if present, sum to 1 within 1e-6.
  void validate() const;
};

std::string predictions_to_jsonl(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> predictions_from_jsonl(std::string_view text, const std::string& source);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::string& path);

// Objects at or inside the cutoff become references, the rest targets;
// scenes left without targets are dropped. Idempotent for a fixed cutoff.
Dataset pseudo_longrange_filter(const Dataset& dataset, double cutoff_m);

// Scene-level split; the val part gets round(n * val_fraction) scenes.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction, std::uint64_t seed);

// CSV with header "frame_id,cx,cy,w,h,distance_m,role"; role is reference or
// target. Appearance is derived from the box geometry alone.
Dataset ingest_labels(const std::string& path, int format_version = kLabelFormatVersion);
Dataset ingest_labels_text(std::string_view text, const std::string& source,
                           int format_version = kLabelFormatVersion);
std::string labels_to_csv(const Dataset& dataset);

}  // namespace r4d::data
