// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inputs of the four embedding families (target, reference, union,
// geo-distance) and the encoders that map them to E-dimensional vectors.

#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "r4d/diffcore.hpp"
#include "r4d/scene.hpp"

namespace r4d::feat {

BBox union_box(const BBox& a, const BBox& b);

// Mean appearance of every object whose box meets ubox, then ubox geometry
// normalized by the image size (cx, cy, w, h).
inline constexpr std::size_t kUnionFeatureDim = kAppearanceDim + 4;
std::vector<double> union_features(const Scene& scene, const BBox& ubox);

// Lane-marking reading of the target-reference range gap seen inside the
// union region: [gap / max_distance, available]. Synthetic scenes only;
// zeros when the scene has no road record or ground truth.
inline constexpr std::size_t kRoadContextDim = 2;
std::array<double, kRoadContextDim> road_context(const Scene& scene, const RenderedObject& target,
                                                 const RenderedObject& reference, double max_distance_m);

inline constexpr std::size_t kUnionInputDim = kUnionFeatureDim + kRoadContextDim;
std::vector<double> union_input(const Scene& scene, const RenderedObject& target, const RenderedObject& reference,
                                double max_distance_m);

inline constexpr std::size_t kGeoInputDim = 13;

struct GeoDistanceInput {
  double cx_t = 0, cy_t = 0, cx_r = 0, cy_r = 0;
  double dx = 0, dy = 0;
  double w_t = 0, h_t = 0, w_r = 0, h_r = 0;
  double w_ratio = 0, h_ratio = 0;
  double d_r = 0;

  // Throws an input error unless w_r, h_r and d_r are positive.
  static GeoDistanceInput from_boxes(const BBox& target, const BBox& reference, double d_r);
  // Pixel terms divided by image width/height, d_r by max_distance_m.
  std::array<double, kGeoInputDim> normalized(const CameraModel& camera, double max_distance_m) const;
};

struct EmbeddingToggles {
  bool target = true;
  bool reference = true;
  bool union_context = true;
  bool geo = true;
};

struct FeatureEncoders {
  std::size_t embed_dim = 64;
  diff::MLPSpec target;
  diff::MLPSpec reference;
  diff::MLPSpec union_context;
  diff::MLPSpec geo;

  static FeatureEncoders make(std::size_t embed_dim);
  // Registers "enc.target", "enc.reference", "enc.union" and "enc.geo".
  void init(diff::ParameterStore& store, std::mt19937_64& rng) const;
  void validate() const;
};

// Fixed per-feature standardization, fitted on training data and stored
// alongside the weights as non-trainable parameters "norm.<family>.mean/scale".
void standardize_rows(const diff::ParameterStore& store, const char* family, std::vector<double>& rows,
                      std::size_t width);
void fit_standardizer(diff::ParameterStore& store, const char* family, std::span<const double> rows,
                      std::size_t width);
void identity_standardizer(diff::ParameterStore& store, const char* family, std::size_t width);

// Row-batched encoders (inputs are already standardized).
diff::Var encode_objects(const FeatureEncoders& enc, diff::ParameterStore& store, diff::Graph& graph,
                         const char* which, diff::Var rows);
diff::Var encode_union(const FeatureEncoders& enc, diff::ParameterStore& store, diff::Graph& graph, diff::Var rows);
diff::Var encode_geo_rows(const FeatureEncoders& enc, diff::ParameterStore& store, diff::Graph& graph,
                          diff::Var rows);

// Single-pair conveniences around the batched path.
std::vector<double> encode_geo(const GeoDistanceInput& input, const CameraModel& camera, double max_distance_m,
                               const FeatureEncoders& enc, diff::ParameterStore& store);

// [target | reference | union | geo], each E wide; disabled families are zeros.
std::vector<double> build_pair_embedding(const Scene& scene, const RenderedObject& target,
                                         const RenderedObject& reference, const FeatureEncoders& enc,
                                         diff::ParameterStore& store, const EmbeddingToggles& toggles,
                                         double max_distance_m);

}  // namespace r4d::feat
