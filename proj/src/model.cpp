// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "r4d/error.hpp"
#include "r4d/scenesim.hpp"

namespace r4d::model {

using diff::Graph;
using diff::MLPSpec;
using diff::Segments;
using diff::Tensor;
using diff::Var;
using json = nlohmann::ordered_json;

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::full: return "full";
    case Mode::no_attention: return "no_attention";
    case Mode::relative_only: return "relative_only";
  }
  return "full";
}

Mode parse_mode(std::string_view name) {
  if (name == "full") return Mode::full;
  if (name == "no_attention") return Mode::no_attention;
  if (name == "relative_only") return Mode::relative_only;
  fail(ErrorKind::parse, "unknown mode '" + std::string(name) + "' (expected full, no_attention or relative_only)");
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || attention_hidden == 0 || head_hidden == 0)
    fail(ErrorKind::configuration, "embedding and hidden widths must be positive");
  if (!(max_distance_m > 0.0)) fail(ErrorKind::configuration, "max_distance_m must be positive");
  if (!(abs_scale_m > 0.0 && rel_scale_m > 0.0)) fail(ErrorKind::configuration, "head scales must be positive");
  if (!(min_distance_m > 0.0)) fail(ErrorKind::configuration, "min_distance_m must be positive");
}

std::string ModelConfig::to_json() const {
  json j;
  j["embed_dim"] = embed_dim;
  j["attention_hidden"] = attention_hidden;
  j["head_hidden"] = head_hidden;
  j["use_target"] = toggles.target;
  j["use_reference"] = toggles.reference;
  j["use_union"] = toggles.union_context;
  j["use_geo"] = toggles.geo;
  j["mode"] = to_string(mode);
  j["max_refs"] = max_refs;
  j["max_distance_m"] = max_distance_m;
  j["abs_offset_m"] = abs_offset_m;
  j["abs_scale_m"] = abs_scale_m;
  j["rel_offset_m"] = rel_offset_m;
  j["rel_scale_m"] = rel_scale_m;
  j["min_distance_m"] = min_distance_m;
  j["relative_pick"] = relative_pick == ReferencePick::nearest ? "nearest" : "seeded_random";
  j["relative_seed"] = relative_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.attention_hidden = j.at("attention_hidden").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.toggles.target = j.at("use_target").get<bool>();
    c.toggles.reference = j.at("use_reference").get<bool>();
    c.toggles.union_context = j.at("use_union").get<bool>();
    c.toggles.geo = j.at("use_geo").get<bool>();
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.max_refs = j.at("max_refs").get<std::size_t>();
    c.max_distance_m = j.at("max_distance_m").get<double>();
    c.abs_offset_m = j.at("abs_offset_m").get<double>();
    c.abs_scale_m = j.at("abs_scale_m").get<double>();
    c.rel_offset_m = j.at("rel_offset_m").get<double>();
    c.rel_scale_m = j.at("rel_scale_m").get<double>();
    c.min_distance_m = j.at("min_distance_m").get<double>();
    c.relative_pick =
        j.at("relative_pick").get<std::string>() == "nearest" ? ReferencePick::nearest : ReferencePick::seeded_random;
    c.relative_seed = j.at("relative_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("model configuration metadata: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

}  // namespace

std::vector<int> select_references(const Scene& scene, const RenderedObject& target, std::size_t max_refs) {
  std::vector<const RenderedObject*> refs = scene.references();
  if (refs.size() > max_refs) {
    std::stable_sort(refs.begin(), refs.end(), [&](const RenderedObject* a, const RenderedObject* b) {
      const double da = center_distance(a->bbox, target.bbox), db = center_distance(b->bbox, target.bbox);
      if (da != db) return da < db;
      return a->id < b->id;
    });
    refs.resize(max_refs);
  }
  std::vector<int> ids;
  ids.reserve(refs.size());
  for (const auto* r : refs) ids.push_back(r->id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void TargetSample::set_reference_distances(std::span<const double> d_r, double max_distance_m) {
  if (d_r.size() != ref_ids.size()) fail(ErrorKind::dimension, "one distance per reference is required");
  ref_known_m.assign(d_r.begin(), d_r.end());
  for (std::size_t i = 0; i < d_r.size(); ++i) {
    const auto g = feat::GeoDistanceInput::from_boxes(target_box, ref_boxes[i], d_r[i]).normalized(camera, max_distance_m);
    std::copy(g.begin(), g.end(), geo_in.begin() + static_cast<std::ptrdiff_t>(i * feat::kGeoInputDim));
  }
}

TargetSample make_sample(const Scene& scene, const RenderedObject& target, const ModelConfig& config) {
  if (target.is_reference()) fail(ErrorKind::precondition, "make_sample needs a target object");
  TargetSample s;
  s.scene_id = scene.scene_id;
  s.target_id = target.id;
  s.label_m = target.distance();
  s.target_box = target.bbox;
  s.camera = scene.camera;
  s.target_app = target.appearance;
  s.ref_ids = select_references(scene, target, config.max_refs);
  for (int id : s.ref_ids) {
    const RenderedObject& r = scene.object(id);
    s.ref_boxes.push_back(r.bbox);
    s.ref_known_m.push_back(r.distance());
    s.ref_app.insert(s.ref_app.end(), r.appearance.begin(), r.appearance.end());
    const auto u = feat::union_input(scene, target, r, config.max_distance_m);
    s.union_in.insert(s.union_in.end(), u.begin(), u.end());
    const auto g = feat::GeoDistanceInput::from_boxes(target.bbox, r.bbox, r.distance())
                       .normalized(scene.camera, config.max_distance_m);
    s.geo_in.insert(s.geo_in.end(), g.begin(), g.end());
  }
  return s;
}

std::vector<TargetSample> make_samples(const Dataset& dataset, const ModelConfig& config) {
  std::vector<TargetSample> out;
  for (const auto& scene : dataset.scenes)
    for (const auto& o : scene.objects)
      if (!o.is_reference()) out.push_back(make_sample(scene, o, config));
  return out;
}

// --- model -------------------------------------------------------------------------

void R4DModel::build_specs() {
  config_.validate();
  const std::size_t E = config_.embed_dim, H = config_.attention_hidden;
  encoders_ = feat::FeatureEncoders::make(E);
  att1_ = {4 * E, {H}, true, diff::Activation::relu, true};
  att2_ = {2 * H, {H}, true, diff::Activation::relu, true};
  score_ = {2 * H, {1}, false, diff::Activation::none, false};
  abs_head_ = {4 * E, {config_.head_hidden, 1}, true, diff::Activation::relu, false};
  rel_head_ = abs_head_;
}

R4DModel::R4DModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  build_specs();
  std::mt19937_64 rng = sim::scene_rng(seed, 0, 0x3ead);
  encoders_.init(params_, rng);
  diff::MLP("att.l1", att1_, params_, rng);
  diff::MLP("att.l2", att2_, params_, rng);
  diff::MLP("att.score", score_, params_, rng);
  diff::MLP("head.abs", abs_head_, params_, rng);
  diff::MLP("head.rel", rel_head_, params_, rng);
  feat::identity_standardizer(params_, "app", kAppearanceDim);
  feat::identity_standardizer(params_, "union", feat::kUnionInputDim);
  feat::identity_standardizer(params_, "geo", feat::kGeoInputDim);
}

void R4DModel::fit_normalizers(std::span<const TargetSample> samples) {
  std::vector<double> app, uni, geo;
  for (const auto& s : samples) {
    app.insert(app.end(), s.target_app.begin(), s.target_app.end());
    app.insert(app.end(), s.ref_app.begin(), s.ref_app.end());
    uni.insert(uni.end(), s.union_in.begin(), s.union_in.end());
    geo.insert(geo.end(), s.geo_in.begin(), s.geo_in.end());
  }
  diff::ParameterStore fitted;
  feat::fit_standardizer(fitted, "app", app, kAppearanceDim);
  feat::fit_standardizer(fitted, "union", uni, feat::kUnionInputDim);
  feat::fit_standardizer(fitted, "geo", geo, feat::kGeoInputDim);
  for (auto& [name, p] : fitted) params_.at(name).value = p.value;
}

Var R4DModel::attention_weights(Graph& g, Var pairs, const Segments& seg, const std::vector<std::size_t>& owner) {
  Var h1 = diff::mlp_forward(att1_, "att.l1", params_, g, pairs);
  Var g1 = diff::gather_rows(diff::segment_mean(h1, seg), owner);
  const Var c1_parts[] = {h1, g1};
  Var h2 = diff::mlp_forward(att2_, "att.l2", params_, g, diff::concat_cols(c1_parts));
  Var g2 = diff::gather_rows(diff::segment_mean(h2, seg), owner);
  const Var c2_parts[] = {h2, g2};
  Var score = diff::mlp_forward(score_, "att.score", params_, g, diff::concat_cols(c2_parts));
  return diff::segment_softmax(diff::flatten(score), seg);
}

BatchOutput R4DModel::forward_batch(Graph& g, std::span<const TargetSample* const> batch) {
  const std::size_t B = batch.size();
  if (B == 0) fail(ErrorKind::precondition, "empty batch");
  const std::size_t E = config_.embed_dim;
  const auto& tg = config_.toggles;
  BatchOutput out;
  std::vector<std::size_t> owner;
  std::vector<double> t_rows, r_rows, u_rows, g_rows, uniform, fallback(B, 0.0);
  t_rows.reserve(B * kAppearanceDim);
  for (std::size_t b = 0; b < B; ++b) {
    const TargetSample& s = *batch[b];
    t_rows.insert(t_rows.end(), s.target_app.begin(), s.target_app.end());
    out.segments.push(s.k());
    if (s.k() == 0) fallback[b] = 1.0;
    for (std::size_t i = 0; i < s.k(); ++i) {
      owner.push_back(b);
      uniform.push_back(1.0 / static_cast<double>(s.k()));
    }
    r_rows.insert(r_rows.end(), s.ref_app.begin(), s.ref_app.end());
    u_rows.insert(u_rows.end(), s.union_in.begin(), s.union_in.end());
    g_rows.insert(g_rows.end(), s.geo_in.begin(), s.geo_in.end());
  }
  const std::size_t P = owner.size();
  out.has_pairs = P > 0;

  Var t_enc;
  if (tg.target) {
    feat::standardize_rows(params_, "app", t_rows, kAppearanceDim);
    t_enc = feat::encode_objects(encoders_, params_, g, "target", g.constant(Tensor({B, kAppearanceDim}, t_rows)));
  } else {
    t_enc = g.constant(Tensor({B, E}));
  }

  const Var fb_parts[] = {diff::scale_rows(t_enc, fallback), g.constant(Tensor({B, 3 * E}))};
  Var fused = diff::concat_cols(fb_parts);

  if (P > 0) {
    auto family = [&](bool on, auto&& encode) { return on ? encode() : g.constant(Tensor({P, E})); };
    Var t_pair = tg.target ? diff::gather_rows(t_enc, owner) : g.constant(Tensor({P, E}));
    Var r_enc = family(tg.reference, [&] {
      feat::standardize_rows(params_, "app", r_rows, kAppearanceDim);
      return feat::encode_objects(encoders_, params_, g, "reference",
                                  g.constant(Tensor({P, kAppearanceDim}, std::move(r_rows))));
    });
    Var u_enc = family(tg.union_context, [&] {
      feat::standardize_rows(params_, "union", u_rows, feat::kUnionInputDim);
      return feat::encode_union(encoders_, params_, g, g.constant(Tensor({P, feat::kUnionInputDim}, std::move(u_rows))));
    });
    Var g_enc = family(tg.geo, [&] {
      feat::standardize_rows(params_, "geo", g_rows, feat::kGeoInputDim);
      return feat::encode_geo_rows(encoders_, params_, g, g.constant(Tensor({P, feat::kGeoInputDim}, std::move(g_rows))));
    });
    const Var parts[] = {t_pair, r_enc, u_enc, g_enc};
    out.pairs = diff::concat_cols(parts);
    out.weights = config_.mode == Mode::no_attention ? g.constant(Tensor({P}, uniform))
                                                     : attention_weights(g, out.pairs, out.segments, owner);
    // Rows of targets with references are exactly sum_i w_i * pair_i; the
    // fallback term is zero there.
    fused = diff::add(diff::segment_weighted_sum(out.pairs, out.weights, out.segments), fused);
    out.relative = diff::affine(diff::mlp_forward(rel_head_, "head.rel", params_, g, out.pairs), config_.rel_scale_m,
                                config_.rel_offset_m);
  }
  out.fused = fused;
  out.absolute = diff::affine(diff::mlp_forward(abs_head_, "head.abs", params_, g, fused), config_.abs_scale_m,
                              config_.abs_offset_m);
  return out;
}

std::vector<DistancePrediction> R4DModel::predict(std::span<const TargetSample* const> batch) {
  Graph g;
  g.set_grad_enabled(false);
  BatchOutput out = forward_batch(g, batch);
  std::vector<DistancePrediction> preds(batch.size());
  std::size_t row = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TargetSample& s = *batch[b];
    DistancePrediction& p = preds[b];
    p.reference_ids = s.ref_ids;
    for (std::size_t i = 0; i < s.k(); ++i, ++row) {
      p.weights.push_back(out.weights.value()[row]);
      p.per_pair_relative_m.push_back(out.relative.value()[row]);
    }
    p.absolute_m = std::max(out.absolute.value()[b], config_.min_distance_m);
    if (config_.mode == Mode::relative_only) {
      if (s.k() == 0)
        fail(ErrorKind::precondition, "relative_only inference needs at least one reference (scene " +
                                          std::to_string(s.scene_id) + ", target " + std::to_string(s.target_id) + ")");
      std::size_t pick = 0;
      if (config_.relative_pick == ReferencePick::nearest) {
        for (std::size_t i = 1; i < s.k(); ++i) {
          const double di = center_distance(s.ref_boxes[i], s.target_box);
          const double dp = center_distance(s.ref_boxes[pick], s.target_box);
          if (di < dp) pick = i;
        }
      } else {
        std::mt19937_64 rng = sim::scene_rng(config_.relative_seed, s.scene_id, static_cast<std::uint64_t>(s.target_id));
        pick = std::uniform_int_distribution<std::size_t>(0, s.k() - 1)(rng);
      }
      p.absolute_m = std::max(s.ref_known_m[pick] + p.per_pair_relative_m[pick], config_.min_distance_m);
    }
  }
  return preds;
}

DistancePrediction R4DModel::predict_one(const TargetSample& sample) {
  const TargetSample* one[] = {&sample};
  return predict(one).front();
}

AttentionOutput R4DModel::attention_aggregate(const std::vector<std::vector<double>>& pairs, bool use_attention) {
  if (pairs.empty()) fail(ErrorKind::precondition, "attention needs at least one pair; use the zero-reference path");
  const std::size_t W = 4 * config_.embed_dim, k = pairs.size();
  std::vector<double> flat;
  for (const auto& p : pairs) {
    if (p.size() != W) fail(ErrorKind::dimension, "pair embeddings must have width " + std::to_string(W));
    flat.insert(flat.end(), p.begin(), p.end());
  }
  Graph g;
  g.set_grad_enabled(false);
  Segments seg;
  seg.push(k);
  Var x = g.constant(Tensor({k, W}, std::move(flat)));
  Var w = use_attention ? attention_weights(g, x, seg, std::vector<std::size_t>(k, 0))
                        : g.constant(Tensor({k}, std::vector<double>(k, 1.0 / static_cast<double>(k))));
  Var fused = diff::segment_weighted_sum(x, w, seg);
  return {w.value().storage(), fused.value().storage()};
}

double R4DModel::absolute_head(const std::vector<double>& fused) {
  Graph g;
  g.set_grad_enabled(false);
  Var out = diff::mlp_forward(abs_head_, "head.abs", params_, g, g.constant(Tensor({1, fused.size()}, fused)));
  return std::max(config_.abs_offset_m + config_.abs_scale_m * out.value()[0], config_.min_distance_m);
}

double R4DModel::relative_head(const std::vector<double>& pair) {
  Graph g;
  g.set_grad_enabled(false);
  Var out = diff::mlp_forward(rel_head_, "head.rel", params_, g, g.constant(Tensor({1, pair.size()}, pair)));
  return config_.rel_offset_m + config_.rel_scale_m * out.value()[0];
}

std::string R4DModel::metadata() const {
  json j;
  j["format"] = "r4d-model";
  j["config"] = json::parse(config_.to_json());
  return j.dump();
}

std::string R4DModel::serialize() const { return diff::serialize_checkpoint(params_, metadata()); }

void R4DModel::save(const std::string& path) const { diff::save_checkpoint(path, params_, metadata()); }

R4DModel R4DModel::load(const std::string& path) {
  std::string meta;
  diff::ParameterStore store = diff::load_checkpoint(path, &meta);
  json j;
  try {
    j = json::parse(meta);
  } catch (const json::exception&) {
    fail(ErrorKind::parse, "checkpoint '" + path + "' has unreadable metadata");
  }
  if (!j.is_object() || j.value("format", "") != "r4d-model" || !j.contains("config"))
    fail(ErrorKind::parse, "checkpoint '" + path + "' does not hold an r4d model");
  R4DModel m;
  m.config_ = ModelConfig::from_json(j.at("config").dump());
  m.build_specs();
  m.params_ = std::move(store);
  diff::MLP::bind("enc.target", m.encoders_.target, m.params_);
  diff::MLP::bind("enc.reference", m.encoders_.reference, m.params_);
  diff::MLP::bind("enc.union", m.encoders_.union_context, m.params_);
  diff::MLP::bind("enc.geo", m.encoders_.geo, m.params_);
  diff::MLP::bind("att.l1", m.att1_, m.params_);
  diff::MLP::bind("att.l2", m.att2_, m.params_);
  diff::MLP::bind("att.score", m.score_, m.params_);
  diff::MLP::bind("head.abs", m.abs_head_, m.params_);
  diff::MLP::bind("head.rel", m.rel_head_, m.params_);
  for (const char* key : {"norm.app.mean", "norm.app.scale", "norm.union.mean", "norm.union.scale", "norm.geo.mean",
                          "norm.geo.scale"})
    if (!m.params_.contains(key)) fail(ErrorKind::configuration, std::string("checkpoint lacks '") + key + "'");
  return m;
}

}  // namespace r4d::model
