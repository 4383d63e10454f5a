// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded pinhole-camera driving scenes: short-range references with noisy
// known distances and long-range targets with exact labels.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "r4d/scene.hpp"

namespace r4d::sim {

struct SceneSpec {
  CameraModel camera;
  double lidar_range_m = 80.0;
  double max_distance_m = 300.0;
  double min_reference_distance_m = 5.0;
  int n_references_min = 1;
  int n_references_max = 8;
  int n_targets_min = 1;
  int n_targets_max = 3;
  double zero_reference_probability = 0.006;
  double ref_distance_noise_sigma_m = 0.5;
  // Indexed by Regime.
  std::array<double, 3> appearance_noise_sigma{0.05, 0.10, 0.20};
  Regime regime = Regime::day;
  std::uint64_t seed = 42;

  // Per-frame calibration drift the model never observes directly.
  double focal_jitter = 0.08;
  double horizon_sigma_px = 3.0;

  int lanes_min = 3;
  int lanes_max = 5;
  double lane_width_m = 3.7;
  double lane_jitter_m = 0.3;
  // Relative error of the lane-marking ruler between two objects in one lane.
  double road_ruler_noise = 0.03;

  void validate() const;
  double appearance_sigma() const { return appearance_noise_sigma[static_cast<int>(regime)]; }

  static SceneSpec from_text(std::string_view text, const std::string& source);
  static SceneSpec load(const std::string& path);
  std::string to_text() const;
  std::uint64_t fingerprint() const;
};

// Pinhole projection on a flat road. Returns nullopt when the box lies fully
// outside the image; throws a precondition error for distance <= 0.
std::optional<BBox> project(const WorldObject& obj, const CameraModel& cam);

// Appearance noise scale for a box of height h_px under regime sigma.
double appearance_noise_scale(double sigma, double h_px);

std::vector<double> synth_appearance(const WorldObject& obj, const BBox& bbox, int ego_lane, double sigma,
                                     std::mt19937_64& rng);

// Size/aspect-only appearance for boxes without synthetic ground truth.
std::vector<double> geometry_appearance(const BBox& bbox);

// Ruler multiplier per regime (lane markings fade at night).
double regime_ruler_factor(Regime regime);

std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_index);

// Scenes [first_index, first_index + n_scenes).
Dataset generate_dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t first_index = 0);

struct DatasetSummary {
  std::size_t scenes = 0;
  std::size_t references = 0;
  std::size_t targets = 0;
  std::size_t zero_reference_scenes = 0;
  double min_target_m = 0.0;
  double max_target_m = 0.0;
  std::vector<double> edges;
  std::vector<std::size_t> target_histogram;
  std::vector<std::size_t> reference_histogram;
};

// Histograms over (edges[i], edges[i+1]]; edges default to 20 m bins over
// (0, max_distance].
DatasetSummary summarize(const Dataset& dataset, std::vector<double> edges = {});
std::string format_summary(const DatasetSummary& summary);

}  // namespace r4d::sim
