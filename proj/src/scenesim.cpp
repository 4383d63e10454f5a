// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/scenesim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "r4d/error.hpp"
#include "r4d/io.hpp"
#include "r4d/kv.hpp"

namespace r4d::sim {

namespace {

constexpr std::uint64_t kStreamScene = 0x5ce7e;
constexpr int kMaxPlacementTries = 1000;

// Fixed mixing for the texture channels.
constexpr double kTexture[6][5] = {
    {0.9, -0.4, 0.3, 0.5, -0.2}, {-0.3, 0.8, -0.6, 0.1, 0.4}, {0.5, 0.5, 0.9, -0.7, 0.0},
    {-0.8, 0.2, 0.1, 0.6, 0.7},  {0.2, -0.9, 0.4, -0.3, 0.5}, {0.6, 0.6, -0.5, 0.2, -0.6},
};

double uniform_open_closed(std::mt19937_64& rng, double lo, double hi) {
  // (lo, hi]
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return hi - u * (hi - lo);
}

double normal(std::mt19937_64& rng, double mean, double sigma) {
  return mean + sigma * std::normal_distribution<double>(0.0, 1.0)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

void SceneSpec::validate() const {
  camera.validate();
  if (!(lidar_range_m > 0.0 && lidar_range_m < max_distance_m))
    fail(ErrorKind::configuration, "need 0 < lidar_range_m < max_distance_m");
  if (!(min_reference_distance_m > 0.0 && min_reference_distance_m < lidar_range_m))
    fail(ErrorKind::configuration, "need 0 < min_reference_distance_m < lidar_range_m");
  if (n_references_min < 0 || n_references_max < n_references_min)
    fail(ErrorKind::configuration, "reference count range is empty");
  if (n_targets_min < 1 || n_targets_max < n_targets_min)
    fail(ErrorKind::configuration, "target count range is empty or allows targetless scenes");
  if (!(zero_reference_probability >= 0.0 && zero_reference_probability <= 1.0))
    fail(ErrorKind::configuration, "zero_reference_probability must lie in [0, 1]");
  if (!(ref_distance_noise_sigma_m >= 0.0)) fail(ErrorKind::configuration, "noise sigmas must be >= 0");
  for (double s : appearance_noise_sigma)
    if (!(s >= 0.0)) fail(ErrorKind::configuration, "noise sigmas must be >= 0");
  if (!(focal_jitter >= 0.0 && focal_jitter < 0.5)) fail(ErrorKind::configuration, "focal_jitter must lie in [0, 0.5)");
  if (!(horizon_sigma_px >= 0.0)) fail(ErrorKind::configuration, "horizon_sigma_px must be >= 0");
  if (lanes_min < 1 || lanes_max < lanes_min || lanes_max > static_cast<int>(kLaneSlots))
    fail(ErrorKind::configuration, "lane count range must lie within [1, 5]");
  if (!(lane_width_m > 0.0 && lane_jitter_m >= 0.0)) fail(ErrorKind::configuration, "invalid lane geometry");
  if (!(road_ruler_noise >= 0.0)) fail(ErrorKind::configuration, "road_ruler_noise must be >= 0");
}

SceneSpec SceneSpec::from_text(std::string_view text, const std::string& source) {
  KeyValues kv = KeyValues::parse(text, source);
  SceneSpec s;
  s.camera.focal_px = kv.take_double("focal_px", s.camera.focal_px);
  s.camera.image_width = static_cast<int>(kv.take_int("image_width", s.camera.image_width));
  s.camera.image_height = static_cast<int>(kv.take_int("image_height", s.camera.image_height));
  s.camera.cx0 = kv.take_double("cx0", 0.5 * s.camera.image_width);
  s.camera.cy0 = kv.take_double("cy0", 0.5 * s.camera.image_height);
  s.camera.mount_height_m = kv.take_double("mount_height_m", s.camera.mount_height_m);
  s.lidar_range_m = kv.take_double("lidar_range_m", s.lidar_range_m);
  s.max_distance_m = kv.take_double("max_distance_m", s.max_distance_m);
  s.min_reference_distance_m = kv.take_double("min_reference_distance_m", s.min_reference_distance_m);
  s.n_references_min = static_cast<int>(kv.take_int("n_references_min", s.n_references_min));
  s.n_references_max = static_cast<int>(kv.take_int("n_references_max", s.n_references_max));
  s.n_targets_min = static_cast<int>(kv.take_int("n_targets_min", s.n_targets_min));
  s.n_targets_max = static_cast<int>(kv.take_int("n_targets_max", s.n_targets_max));
  s.zero_reference_probability = kv.take_double("zero_reference_probability", s.zero_reference_probability);
  s.ref_distance_noise_sigma_m = kv.take_double("ref_distance_noise_sigma_m", s.ref_distance_noise_sigma_m);
  s.appearance_noise_sigma[0] = kv.take_double("appearance_noise_day", s.appearance_noise_sigma[0]);
  s.appearance_noise_sigma[1] = kv.take_double("appearance_noise_dawn_dusk", s.appearance_noise_sigma[1]);
  s.appearance_noise_sigma[2] = kv.take_double("appearance_noise_night", s.appearance_noise_sigma[2]);
  s.regime = parse_regime(kv.take_string("regime", to_string(s.regime)));
  s.seed = kv.take_uint("seed", s.seed);
  s.focal_jitter = kv.take_double("focal_jitter", s.focal_jitter);
  s.horizon_sigma_px = kv.take_double("horizon_sigma_px", s.horizon_sigma_px);
  s.lanes_min = static_cast<int>(kv.take_int("lanes_min", s.lanes_min));
  s.lanes_max = static_cast<int>(kv.take_int("lanes_max", s.lanes_max));
  s.lane_width_m = kv.take_double("lane_width_m", s.lane_width_m);
  s.lane_jitter_m = kv.take_double("lane_jitter_m", s.lane_jitter_m);
  s.road_ruler_noise = kv.take_double("road_ruler_noise", s.road_ruler_noise);
  kv.finish();
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::string& path) { return from_text(io::read_file(path), path); }

std::string SceneSpec::to_text() const {
  std::ostringstream os;
  auto put = [&](const char* key, const std::string& v) { os << key << " = " << v << '\n'; };
  auto num = [&](const char* key, double v) { put(key, format_double(v)); };
  num("focal_px", camera.focal_px);
  put("image_width", std::to_string(camera.image_width));
  put("image_height", std::to_string(camera.image_height));
  num("cx0", camera.cx0);
  num("cy0", camera.cy0);
  num("mount_height_m", camera.mount_height_m);
  num("lidar_range_m", lidar_range_m);
  num("max_distance_m", max_distance_m);
  num("min_reference_distance_m", min_reference_distance_m);
  put("n_references_min", std::to_string(n_references_min));
  put("n_references_max", std::to_string(n_references_max));
  put("n_targets_min", std::to_string(n_targets_min));
  put("n_targets_max", std::to_string(n_targets_max));
  num("zero_reference_probability", zero_reference_probability);
  num("ref_distance_noise_sigma_m", ref_distance_noise_sigma_m);
  num("appearance_noise_day", appearance_noise_sigma[0]);
  num("appearance_noise_dawn_dusk", appearance_noise_sigma[1]);
  num("appearance_noise_night", appearance_noise_sigma[2]);
  put("regime", to_string(regime));
  put("seed", std::to_string(seed));
  num("focal_jitter", focal_jitter);
  num("horizon_sigma_px", horizon_sigma_px);
  put("lanes_min", std::to_string(lanes_min));
  put("lanes_max", std::to_string(lanes_max));
  num("lane_width_m", lane_width_m);
  num("lane_jitter_m", lane_jitter_m);
  num("road_ruler_noise", road_ruler_noise);
  return os.str();
}

std::uint64_t SceneSpec::fingerprint() const { return io::fnv1a64(to_text()); }

std::optional<BBox> project(const WorldObject& obj, const CameraModel& cam) {
  if (!(obj.distance_m > 0.0)) fail(ErrorKind::precondition, "projection needs distance_m > 0");
  const double f = cam.focal_px;
  const double d = obj.distance_m;
  BBox b;
  b.h = f * obj.height_m / d;
  b.w = f * obj.width_m / d;
  b.cx = cam.cx0 + f * obj.lateral_m / d;
  // Object center sits height_m / 2 above a flat road, below the camera.
  b.cy = cam.cy0 + f * (cam.mount_height_m - 0.5 * obj.height_m) / d;
  const BBox image{0.5 * cam.image_width, 0.5 * cam.image_height, static_cast<double>(cam.image_width),
                   static_cast<double>(cam.image_height)};
  if (!b.intersects(image)) return std::nullopt;
  return b;
}

double appearance_noise_scale(double sigma, double h_px) { return sigma * (1.0 + 10.0 / h_px); }

std::vector<double> synth_appearance(const WorldObject& obj, const BBox& bbox, int ego_lane, double sigma,
                                     std::mt19937_64& rng) {
  std::vector<double> a(kAppearanceDim, 0.0);
  const double pose = obj.pose_deg * std::numbers::pi / 180.0;
  const double z[5] = {std::log(bbox.h), std::log(bbox.w), bbox.w / bbox.h, std::sin(pose), std::cos(pose)};
  std::copy(std::begin(z), std::end(z), a.begin());
  const int slot = std::clamp(obj.lane_id - ego_lane + static_cast<int>(kLaneSlots) / 2, 0,
                              static_cast<int>(kLaneSlots) - 1);
  a[5 + slot] = 1.0;
  for (int k = 0; k < 6; ++k) {
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += kTexture[k][j] * (j < 2 ? z[j] - 3.0 : z[j]);
    a[10 + k] = std::tanh(s);
  }
  const double scale = appearance_noise_scale(sigma, bbox.h);
  for (double& v : a) v += scale * std::normal_distribution<double>(0.0, 1.0)(rng);
  return a;
}

std::vector<double> geometry_appearance(const BBox& bbox) {
  std::vector<double> a(kAppearanceDim, 0.0);
  a[0] = std::log(bbox.h);
  a[1] = std::log(bbox.w);
  a[2] = bbox.w / bbox.h;
  return a;
}

double regime_ruler_factor(Regime regime) {
  switch (regime) {
    case Regime::day: return 1.0;
    case Regime::dawn_dusk: return 1.2;
    case Regime::night: return 1.5;
  }
  return 1.0;
}

std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_index) {
  spec.validate();
  std::mt19937_64 rng = scene_rng(spec.seed, scene_index, kStreamScene);

  CameraModel frame = spec.camera;
  frame.focal_px *= 1.0 + std::uniform_real_distribution<double>(-spec.focal_jitter, spec.focal_jitter)(rng);
  frame.cy0 = normal(rng, spec.camera.cy0, spec.horizon_sigma_px);

  Scene scene;
  scene.scene_id = scene_index;
  scene.regime = spec.regime;
  scene.camera = spec.camera;
  RoadInfo road;
  road.n_lanes = uniform_int(rng, spec.lanes_min, spec.lanes_max);
  road.ego_lane = road.n_lanes / 2;
  road.seed = rng();
  road.ruler_noise = spec.road_ruler_noise * regime_ruler_factor(spec.regime);
  scene.road = road;

  const bool empty = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.zero_reference_probability;
  const int n_refs = uniform_int(rng, spec.n_references_min, spec.n_references_max);
  const int n_targets = uniform_int(rng, spec.n_targets_min, spec.n_targets_max);
  const int used_refs = empty ? 0 : n_refs;

  const double sigma = spec.appearance_sigma();
  for (int i = 0; i < used_refs + n_targets; ++i) {
    const bool is_ref = i < used_refs;
    WorldObject obj;
    std::optional<BBox> box;
    for (int attempt = 0; attempt < kMaxPlacementTries && !box; ++attempt) {
      obj.distance_m = is_ref ? uniform_open_closed(rng, spec.min_reference_distance_m, spec.lidar_range_m)
                              : uniform_open_closed(rng, spec.lidar_range_m, spec.max_distance_m);
      obj.lane_id = uniform_int(rng, 0, road.n_lanes - 1);
      obj.lateral_m = (obj.lane_id - road.ego_lane) * spec.lane_width_m + normal(rng, 0.0, spec.lane_jitter_m);
      obj.height_m = std::clamp(normal(rng, 1.6, 0.15), 1.2, 2.2);
      obj.width_m = std::clamp(normal(rng, 1.85, 0.1), 1.5, 2.3);
      obj.pose_deg = normal(rng, 0.0, 8.0);
      box = project(obj, frame);
    }
    if (!box) fail(ErrorKind::configuration, "could not place an object inside the image; spec is infeasible");

    RenderedObject r;
    r.id = i;
    r.role = is_ref ? Role::reference : Role::target;
    r.bbox = *box;
    r.appearance = synth_appearance(obj, *box, road.ego_lane, sigma, rng);
    if (is_ref) {
      const double noisy = normal(rng, obj.distance_m, spec.ref_distance_noise_sigma_m);
      r.known_distance_m = std::max(noisy, 0.5 * spec.min_reference_distance_m);
    } else {
      r.label_distance_m = obj.distance_m;
    }
    r.world = obj;
    scene.objects.push_back(std::move(r));
  }
  return scene;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t n_scenes, std::uint64_t first_index) {
  if (n_scenes == 0) fail(ErrorKind::configuration, "scene count must be at least 1");
  spec.validate();
  Dataset ds;
  ds.provenance = "synthetic:spec=" + io::hex64(spec.fingerprint()) + ":first=" + std::to_string(first_index);
  ds.scenes.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) ds.scenes.push_back(generate_scene(spec, first_index + i));
  return ds;
}

DatasetSummary summarize(const Dataset& dataset, std::vector<double> edges) {
  DatasetSummary s;
  double max_d = 0.0;
  for (const auto& scene : dataset.scenes)
    for (const auto& o : scene.objects) max_d = std::max(max_d, o.distance());
  if (edges.empty()) {
    const double top = std::max(20.0, std::ceil(max_d / 20.0) * 20.0);
    for (double e = 0.0; e <= top + 1e-9; e += 20.0) edges.push_back(e);
  }
  s.edges = edges;
  s.target_histogram.assign(edges.size() - 1, 0);
  s.reference_histogram.assign(edges.size() - 1, 0);
  s.min_target_m = std::numeric_limits<double>::infinity();
  s.max_target_m = -std::numeric_limits<double>::infinity();
  auto bucket = [&](double d) -> std::optional<std::size_t> {
    for (std::size_t b = 0; b + 1 < edges.size(); ++b)
      if (d > edges[b] && d <= edges[b + 1]) return b;
    return std::nullopt;
  };
  for (const auto& scene : dataset.scenes) {
    ++s.scenes;
    std::size_t refs = 0;
    for (const auto& o : scene.objects) {
      const double d = o.distance();
      if (o.is_reference()) {
        ++refs;
        if (auto b = bucket(d)) ++s.reference_histogram[*b];
      } else {
        ++s.targets;
        s.min_target_m = std::min(s.min_target_m, d);
        s.max_target_m = std::max(s.max_target_m, d);
        if (auto b = bucket(d)) ++s.target_histogram[*b];
      }
    }
    s.references += refs;
    if (refs == 0) ++s.zero_reference_scenes;
  }
  if (s.targets == 0) s.min_target_m = s.max_target_m = 0.0;
  return s;
}

std::string format_summary(const DatasetSummary& s) {
  std::ostringstream os;
  os << "scenes " << s.scenes << ", references " << s.references << ", targets " << s.targets
     << ", zero-reference scenes " << s.zero_reference_scenes << '\n';
  os << "target distance min " << format_double(s.min_target_m) << " m, max " << format_double(s.max_target_m)
     << " m\n";
  os << "bin_low_m,bin_high_m,references,targets\n";
  for (std::size_t b = 0; b + 1 < s.edges.size(); ++b)
    os << format_double(s.edges[b]) << ',' << format_double(s.edges[b + 1]) << ',' << s.reference_histogram[b]
       << ',' << s.target_histogram[b] << '\n';
  return os.str();
}

}  // namespace r4d::sim
