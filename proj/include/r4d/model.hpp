// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference-based distance model: per-target reference selection, pair
// embeddings, two-round attention with global-local fusion, an absolute
// distance head on the fused embedding and a relative head on every pair.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "r4d/diffcore.hpp"
#include "r4d/features.hpp"
#include "r4d/scene.hpp"

namespace r4d::model {

enum class Mode { full, no_attention, relative_only };
enum class ReferencePick { nearest, seeded_random };

const char* to_string(Mode mode);
Mode parse_mode(std::string_view name);

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t attention_hidden = 64;
  std::size_t head_hidden = 64;
  feat::EmbeddingToggles toggles;
  Mode mode = Mode::full;
  std::size_t max_refs = 50;
  double max_distance_m = 300.0;
  // Heads emit offset + scale * raw so an untrained net starts near the
  // middle of the range with unit-scale activations.
  double abs_offset_m = 190.0;
  double abs_scale_m = 110.0;
  double rel_offset_m = 150.0;
  double rel_scale_m = 110.0;
  double min_distance_m = 1.0;
  ReferencePick relative_pick = ReferencePick::nearest;
  std::uint64_t relative_seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

// All references when there are at most max_refs, else the max_refs nearest
// by image-plane center distance (ties: lower id). Returned in id order.
std::vector<int> select_references(const Scene& scene, const RenderedObject& target, std::size_t max_refs);

// Raw numeric inputs for one target and its selected references.
struct TargetSample {
  std::uint64_t scene_id = 0;
  int target_id = 0;
  double label_m = 0.0;
  BBox target_box;
  CameraModel camera;
  std::vector<int> ref_ids;
  std::vector<BBox> ref_boxes;
  std::vector<double> ref_known_m;
  std::vector<double> target_app;  // kAppearanceDim
  std::vector<double> ref_app;     // k * kAppearanceDim
  std::vector<double> union_in;    // k * kUnionInputDim
  std::vector<double> geo_in;      // k * kGeoInputDim, normalized

  std::size_t k() const { return ref_ids.size(); }
  // Replaces the reference distances and rebuilds the geo inputs.
  void set_reference_distances(std::span<const double> d_r, double max_distance_m);
};

TargetSample make_sample(const Scene& scene, const RenderedObject& target, const ModelConfig& config);
std::vector<TargetSample> make_samples(const Dataset& dataset, const ModelConfig& config);

struct DistancePrediction {
  double absolute_m = 0.0;
  std::vector<int> reference_ids;
  std::vector<double> per_pair_relative_m;
  std::vector<double> weights;
};

struct AttentionOutput {
  std::vector<double> weights;
  std::vector<double> fused;
};

// Graph handles for one minibatch of B targets with P pairs in total.
struct BatchOutput {
  diff::Segments segments;
  diff::Var pairs;     // [P, 4E]
  diff::Var weights;   // [P]
  diff::Var fused;     // [B, 4E]
  diff::Var absolute;  // [B, 1] meters, unclamped
  diff::Var relative;  // [P, 1] meters
  bool has_pairs = false;
};

class R4DModel {
 public:
  // Initializes every parameter family from the seed, whatever the toggles,
  // so configurations that share a seed share their initial weights.
  R4DModel(ModelConfig config, std::uint64_t seed);

  // Fits the input standardizers on training samples (identity if empty).
  void fit_normalizers(std::span<const TargetSample> samples);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  diff::ParameterStore& params() { return params_; }
  const diff::ParameterStore& params() const { return params_; }
  const feat::FeatureEncoders& encoders() const { return encoders_; }

  BatchOutput forward_batch(diff::Graph& graph, std::span<const TargetSample* const> batch);

  // Inference with the clamp at min_distance_m and the configured mode.
  std::vector<DistancePrediction> predict(std::span<const TargetSample* const> batch);
  DistancePrediction predict_one(const TargetSample& sample);

  // Attention over explicit pair embeddings, each of width 4E.
  AttentionOutput attention_aggregate(const std::vector<std::vector<double>>& pairs, bool use_attention = true);
  double absolute_head(const std::vector<double>& fused);
  double relative_head(const std::vector<double>& pair);

  std::string metadata() const;
  void save(const std::string& path) const;
  static R4DModel load(const std::string& path);
  std::string serialize() const;

 private:
  R4DModel() = default;
  void build_specs();
  diff::Var attention_weights(diff::Graph& graph, diff::Var pairs, const diff::Segments& segments,
                              const std::vector<std::size_t>& owner);

  ModelConfig config_;
  feat::FeatureEncoders encoders_;
  diff::MLPSpec att1_, att2_, score_, abs_head_, rel_head_;
  diff::ParameterStore params_;
};

}  // namespace r4d::model
