// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene records shared by the simulator, persistence, features and model.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace r4d {

enum class Regime { day, dawn_dusk, night };

const char* to_string(Regime regime);
Regime parse_regime(std::string_view name);

struct CameraModel {
  double focal_px = 1000.0;
  int image_width = 1920;
  int image_height = 1280;
  double cx0 = 960.0;
  double cy0 = 640.0;
  double mount_height_m = 1.5;

  void validate() const;
};

// Center/size form, pixels.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  static BBox from_corners(double x1, double y1, double x2, double y2);
  bool intersects(const BBox& other) const;
  bool operator==(const BBox&) const = default;
};

struct WorldObject {
  double distance_m = 0.0;
  double lateral_m = 0.0;
  double height_m = 0.0;
  double width_m = 0.0;
  int lane_id = 0;
  double pose_deg = 0.0;
};

enum class Role { reference, target };

const char* to_string(Role role);

// Appearance layout: log h, log w, aspect, sin pose, cos pose, 5 lane slots
// (relative to the ego lane), 6 texture channels.
inline constexpr std::size_t kAppearanceDim = 16;
inline constexpr std::size_t kLaneSlots = 5;

struct RenderedObject {
  int id = 0;
  Role role = Role::target;
  BBox bbox;
  std::vector<double> appearance;
  std::optional<double> known_distance_m;  // references only
  std::optional<double> label_distance_m;  // targets only
  std::optional<WorldObject> world;        // synthetic ground truth, absent for ingested rows

  bool is_reference() const { return role == Role::reference; }
  // Known distance for references, label for targets.
  double distance() const;
  // Ground-truth range: world distance when present, else distance().
  double true_distance() const;
};

struct RoadInfo {
  int n_lanes = 0;
  int ego_lane = 0;
  std::uint64_t seed = 0;
  double ruler_noise = 0.0;
};

struct Scene {
  std::uint64_t scene_id = 0;
  Regime regime = Regime::day;
  // Nominal calibration; per-frame deviations are not recorded.
  CameraModel camera;
  std::optional<RoadInfo> road;
  std::vector<RenderedObject> objects;

  std::vector<const RenderedObject*> references() const;
  std::vector<const RenderedObject*> targets() const;
  const RenderedObject& object(int id) const;
  std::size_t target_count() const;
};

enum class SplitTag { train, val };

const char* to_string(SplitTag tag);
SplitTag parse_split(std::string_view name);

struct Dataset {
  std::vector<Scene> scenes;
  SplitTag split = SplitTag::train;
  std::string provenance;

  // Throws on duplicate scene ids, targetless scenes or overlapping roles.
  void validate() const;
  std::size_t target_count() const;
};

}  // namespace r4d
