// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/features.hpp"

#include <algorithm>
#include <cmath>

#include "r4d/error.hpp"
#include "r4d/scenesim.hpp"

namespace r4d::feat {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

BBox union_box(const BBox& a, const BBox& b) {
  return BBox::from_corners(std::min(a.x1(), b.x1()), std::min(a.y1(), b.y1()), std::max(a.x2(), b.x2()),
                            std::max(a.y2(), b.y2()));
}

std::vector<double> union_features(const Scene& scene, const BBox& ubox) {
  std::vector<double> out(kUnionFeatureDim, 0.0);
  std::size_t hits = 0;
  for (const auto& o : scene.objects) {
    if (!o.bbox.intersects(ubox)) continue;
    if (o.appearance.size() != kAppearanceDim)
      fail(ErrorKind::input, "object " + std::to_string(o.id) + " has a malformed appearance vector");
    for (std::size_t k = 0; k < kAppearanceDim; ++k) out[k] += o.appearance[k];
    ++hits;
  }
  if (hits > 0)
    for (std::size_t k = 0; k < kAppearanceDim; ++k) out[k] /= static_cast<double>(hits);
  const double W = scene.camera.image_width, H = scene.camera.image_height;
  out[kAppearanceDim + 0] = ubox.cx / W;
  out[kAppearanceDim + 1] = ubox.cy / H;
  out[kAppearanceDim + 2] = ubox.w / W;
  out[kAppearanceDim + 3] = ubox.h / H;
  return out;
}

std::array<double, kRoadContextDim> road_context(const Scene& scene, const RenderedObject& target,
                                                 const RenderedObject& reference, double max_distance_m) {
  if (!scene.road || !target.world || !reference.world) return {0.0, 0.0};
  const RoadInfo& road = *scene.road;
  const int lanes_apart = std::abs(target.world->lane_id - reference.world->lane_id);
  const double lane_factor = lanes_apart == 0 ? 1.0 : lanes_apart == 1 ? 2.5 : 6.0;
  std::mt19937_64 rng = sim::scene_rng(road.seed, static_cast<std::uint64_t>(target.id),
                                       static_cast<std::uint64_t>(reference.id) + 1);
  const double eps = std::normal_distribution<double>(0.0, 1.0)(rng);
  const double gap = target.world->distance_m - reference.world->distance_m;
  const double reading = gap * (1.0 + road.ruler_noise * lane_factor * eps);
  return {reading / max_distance_m, 1.0};
}

std::vector<double> union_input(const Scene& scene, const RenderedObject& target, const RenderedObject& reference,
                                double max_distance_m) {
  std::vector<double> out = union_features(scene, union_box(target.bbox, reference.bbox));
  const auto road = road_context(scene, target, reference, max_distance_m);
  out.insert(out.end(), road.begin(), road.end());
  return out;
}

GeoDistanceInput GeoDistanceInput::from_boxes(const BBox& t, const BBox& r, double d_r) {
  if (!(r.w > 0.0 && r.h > 0.0)) fail(ErrorKind::input, "reference box must have positive width and height");
  if (!(t.w > 0.0 && t.h > 0.0)) fail(ErrorKind::input, "target box must have positive width and height");
  if (!(d_r > 0.0)) fail(ErrorKind::input, "reference distance must be positive");
  GeoDistanceInput g;
  g.cx_t = t.cx;
  g.cy_t = t.cy;
  g.cx_r = r.cx;
  g.cy_r = r.cy;
  g.dx = t.cx - r.cx;
  g.dy = t.cy - r.cy;
  g.w_t = t.w;
  g.h_t = t.h;
  g.w_r = r.w;
  g.h_r = r.h;
  g.w_ratio = t.w / r.w;
  g.h_ratio = t.h / r.h;
  g.d_r = d_r;
  return g;
}

std::array<double, kGeoInputDim> GeoDistanceInput::normalized(const CameraModel& camera,
                                                              double max_distance_m) const {
  if (!(w_r > 0.0 && h_r > 0.0)) fail(ErrorKind::input, "reference box must have positive width and height");
  if (!(d_r > 0.0)) fail(ErrorKind::input, "reference distance must be positive");
  const double W = camera.image_width, H = camera.image_height;
  return {cx_t / W, cy_t / H, cx_r / W, cy_r / H, dx / W, dy / H, w_t / W,
          h_t / H,  w_r / W,  h_r / H,  w_ratio,  h_ratio, d_r / max_distance_m};
}

FeatureEncoders FeatureEncoders::make(std::size_t embed_dim) {
  FeatureEncoders e;
  e.embed_dim = embed_dim;
  e.target = {kAppearanceDim, {embed_dim}, true, diff::Activation::relu, true};
  e.reference = e.target;
  e.union_context = {kUnionInputDim, {embed_dim}, true, diff::Activation::relu, true};
  e.geo = {kGeoInputDim, {embed_dim, embed_dim, embed_dim}, true, diff::Activation::relu, true};
  return e;
}

void FeatureEncoders::validate() const {
  for (const auto* s : {&target, &reference, &union_context, &geo}) {
    s->validate();
    if (s->output_dim() != embed_dim)
      fail(ErrorKind::configuration, "every encoder must output embed_dim = " + std::to_string(embed_dim));
  }
}

void FeatureEncoders::init(ParameterStore& store, std::mt19937_64& rng) const {
  validate();
  diff::MLP("enc.target", target, store, rng);
  diff::MLP("enc.reference", reference, store, rng);
  diff::MLP("enc.union", union_context, store, rng);
  diff::MLP("enc.geo", geo, store, rng);
}

namespace {

std::string norm_key(const char* family, const char* what) { return std::string("norm.") + family + "." + what; }

}  // namespace

void standardize_rows(const ParameterStore& store, const char* family, std::vector<double>& rows, std::size_t width) {
  const auto& mean = store.at(norm_key(family, "mean")).value;
  const auto& scale = store.at(norm_key(family, "scale")).value;
  if (mean.size() != width || scale.size() != width)
    fail(ErrorKind::configuration, std::string("standardizer '") + family + "' width mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t k = i % width;
    rows[i] = (rows[i] - mean[k]) / scale[k];
  }
}

void fit_standardizer(ParameterStore& store, const char* family, std::span<const double> rows, std::size_t width) {
  std::vector<double> mean(width, 0.0), scale(width, 1.0);
  const std::size_t n = width == 0 ? 0 : rows.size() / width;
  if (n >= 2) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < width; ++k) mean[k] += rows[i * width + k];
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> var(width, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < width; ++k) {
        const double d = rows[i * width + k] - mean[k];
        var[k] += d * d;
      }
    for (std::size_t k = 0; k < width; ++k) {
      const double sd = std::sqrt(var[k] / static_cast<double>(n - 1));
      scale[k] = sd > 1e-8 ? sd : 1.0;
    }
  }
  store.add(norm_key(family, "mean"), Tensor({width}, std::move(mean)), false);
  store.add(norm_key(family, "scale"), Tensor({width}, std::move(scale)), false);
}

void identity_standardizer(ParameterStore& store, const char* family, std::size_t width) {
  store.add(norm_key(family, "mean"), Tensor({width}), false);
  store.add(norm_key(family, "scale"), Tensor({width}, std::vector<double>(width, 1.0)), false);
}

Var encode_objects(const FeatureEncoders& enc, ParameterStore& store, Graph& graph, const char* which, Var rows) {
  const std::string name = std::string("enc.") + which;
  const diff::MLPSpec& spec = name == "enc.target" ? enc.target : enc.reference;
  return diff::mlp_forward(spec, name, store, graph, rows);
}

Var encode_union(const FeatureEncoders& enc, ParameterStore& store, Graph& graph, Var rows) {
  return diff::mlp_forward(enc.union_context, "enc.union", store, graph, rows);
}

Var encode_geo_rows(const FeatureEncoders& enc, ParameterStore& store, Graph& graph, Var rows) {
  return diff::mlp_forward(enc.geo, "enc.geo", store, graph, rows);
}

std::vector<double> encode_geo(const GeoDistanceInput& input, const CameraModel& camera, double max_distance_m,
                               const FeatureEncoders& enc, ParameterStore& store) {
  const auto x = input.normalized(camera, max_distance_m);
  std::vector<double> row(x.begin(), x.end());
  standardize_rows(store, "geo", row, kGeoInputDim);
  Graph g;
  Var out = encode_geo_rows(enc, store, g, g.constant(Tensor({1, kGeoInputDim}, std::move(row))));
  return out.value().storage();
}

std::vector<double> build_pair_embedding(const Scene& scene, const RenderedObject& target,
                                         const RenderedObject& reference, const FeatureEncoders& enc,
                                         ParameterStore& store, const EmbeddingToggles& toggles,
                                         double max_distance_m) {
  const std::size_t E = enc.embed_dim;
  std::vector<double> out(4 * E, 0.0);
  Graph g;
  auto put = [&](std::size_t slot, Var v) { std::copy_n(v.value().values().begin(), E, out.begin() + slot * E); };
  if (toggles.target) {
    std::vector<double> row = target.appearance;
    standardize_rows(store, "app", row, kAppearanceDim);
    put(0, encode_objects(enc, store, g, "target", g.constant(Tensor({1, kAppearanceDim}, row))));
  }
  if (toggles.reference) {
    std::vector<double> row = reference.appearance;
    standardize_rows(store, "app", row, kAppearanceDim);
    put(1, encode_objects(enc, store, g, "reference", g.constant(Tensor({1, kAppearanceDim}, row))));
  }
  if (toggles.union_context) {
    std::vector<double> row = union_input(scene, target, reference, max_distance_m);
    standardize_rows(store, "union", row, kUnionInputDim);
    put(2, encode_union(enc, store, g, g.constant(Tensor({1, kUnionInputDim}, row))));
  }
  if (toggles.geo) {
    const auto geo = GeoDistanceInput::from_boxes(target.bbox, reference.bbox, reference.distance());
    const auto e = encode_geo(geo, scene.camera, max_distance_m, enc, store);
    std::copy(e.begin(), e.end(), out.begin() + 3 * E);
  }
  return out;
}

}  // namespace r4d::feat
