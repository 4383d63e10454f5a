// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "r4d/error.hpp"
#include "r4d/model.hpp"
#include "r4d/scenesim.hpp"

using namespace r4d;
using namespace r4d::model;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.attention_hidden = 8;
  c.head_hidden = 8;
  return c;
}

// Brute force: every reference, sorted by (center distance, id), first k.
std::vector<int> nearest_oracle(const Scene& s, const RenderedObject& t, std::size_t k) {
  std::vector<std::pair<double, int>> all;
  for (const auto* r : s.references()) all.emplace_back(std::hypot(r->bbox.cx - t.bbox.cx, r->bbox.cy - t.bbox.cy), r->id);
  std::sort(all.begin(), all.end());
  std::vector<int> ids;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) ids.push_back(all[i].second);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Sets the last linear layer of an MLP head so it emits a constant raw value.
void pin_head(diff::ParameterStore& params, const std::string& head, double raw) {
  auto& w = params.at(head + ".l1.weight").value;
  std::fill(w.values().begin(), w.values().end(), 0.0);
  params.at(head + ".l1.bias").value[0] = raw;
}

TargetSample permuted(const TargetSample& s, const std::vector<std::size_t>& perm) {
  TargetSample p = s;
  p.ref_ids.clear();
  p.ref_boxes.clear();
  p.ref_known_m.clear();
  p.ref_app.clear();
  p.union_in.clear();
  p.geo_in.clear();
  auto block = [](const std::vector<double>& v, std::size_t i, std::size_t w, std::vector<double>& out) {
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * w), v.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
  };
  for (std::size_t i : perm) {
    p.ref_ids.push_back(s.ref_ids[i]);
    p.ref_boxes.push_back(s.ref_boxes[i]);
    p.ref_known_m.push_back(s.ref_known_m[i]);
    block(s.ref_app, i, kAppearanceDim, p.ref_app);
    block(s.union_in, i, feat::kUnionInputDim, p.union_in);
    block(s.geo_in, i, feat::kGeoInputDim, p.geo_in);
  }
  return p;
}

}  // namespace

TEST_SUITE("reference selection") {
  TEST_CASE("matches the brute-force nearest k") {
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 60);
    for (const auto& s : ds.scenes)
      for (const auto* t : s.targets())
        for (std::size_t k : {0u, 1u, 2u, 3u, 5u, 50u}) CHECK(select_references(s, *t, k) == nearest_oracle(s, *t, k));
  }

  TEST_CASE("ties resolve to the lower id") {
    Scene s;
    RenderedObject t;
    t.id = 9;
    t.bbox = {500, 500, 10, 10};
    t.label_distance_m = 100;
    s.objects.push_back(t);
    for (int id : {4, 2, 7}) {
      RenderedObject r;
      r.id = id;
      r.role = Role::reference;
      r.bbox = {500, 600, 10, 10};
      r.known_distance_m = 20;
      s.objects.push_back(r);
    }
    CHECK(select_references(s, s.objects[0], 2) == std::vector<int>{2, 4});
  }
}

TEST_SUITE("attention") {
  TEST_CASE("single pair gets weight one and identical pairs split evenly") {
    R4DModel m(small_config(), 1);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    std::vector<double> p(32);
    for (double& v : p) v = n(rng);
    auto one = m.attention_aggregate({p});
    REQUIRE(one.weights.size() == 1);
    CHECK(one.weights[0] == 1.0);
    CHECK(one.fused == p);
    auto two = m.attention_aggregate({p, p});
    CHECK(two.weights[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(two.weights[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_WITH(m.attention_aggregate({}), doctest::Contains("precondition error"));
    CHECK_THROWS_WITH(m.attention_aggregate({std::vector<double>(5)}), doctest::Contains("dimension error"));
  }

  TEST_CASE("no_attention equals forced uniform weights") {
    ModelConfig c = small_config();
    R4DModel att(c, 2);
    c.mode = Mode::no_attention;
    R4DModel flat(c, 2);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 20);
    for (const auto& s : make_samples(ds, c)) {
      if (s.k() == 0) continue;
      auto p = flat.predict_one(s);
      for (double w : p.weights) CHECK(w == 1.0 / static_cast<double>(s.k()));
    }
    std::vector<std::vector<double>> pairs(3, std::vector<double>(32));
    for (std::size_t i = 0; i < 3; ++i) pairs[i][i] = 3.0 * static_cast<double>(i + 1);
    auto out = att.attention_aggregate(pairs, false);
    for (double w : out.weights) CHECK(w == 1.0 / 3.0);
    CHECK(out.fused[2] == doctest::Approx(3.0));
  }

  TEST_CASE("weights form a distribution and fused is their weighted sum") {
    ModelConfig c = small_config();
    R4DModel m(c, 3);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 30);
    auto samples = make_samples(ds, c);
    m.fit_normalizers(samples);
    std::vector<const TargetSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    diff::Graph g;
    BatchOutput out = m.forward_batch(g, batch);
    const std::size_t W = 4 * c.embed_dim;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      double total = 0.0;
      std::vector<double> expect(W, 0.0);
      for (std::size_t i = out.segments.begin(b); i < out.segments.end(b); ++i) {
        const double w = out.weights.value()[i];
        CHECK(w >= 0.0);
        total += w;
        for (std::size_t j = 0; j < W; ++j) expect[j] += w * out.pairs.value().at(i, j);
      }
      if (batch[b]->k() == 0) continue;
      CHECK(std::abs(total - 1.0) < 1e-9);
      for (std::size_t j = 0; j < W; ++j) CHECK(std::abs(out.fused.value().at(b, j) - expect[j]) < 1e-12);
    }
  }

  TEST_CASE("permuting references leaves the prediction unchanged") {
    ModelConfig c = small_config();
    R4DModel m(c, 4);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 20);
    auto samples = make_samples(ds, c);
    m.fit_normalizers(samples);
    std::mt19937_64 rng(11);
    for (const auto& s : samples) {
      if (s.k() < 2) continue;
      std::vector<std::size_t> perm(s.k());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const double a = m.predict_one(s).absolute_m;
      const double b = m.predict_one(permuted(s, perm)).absolute_m;
      CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
    }
  }
}

TEST_SUITE("heads and modes") {
  TEST_CASE("absolute head clamps at the minimum distance") {
    ModelConfig c = small_config();
    R4DModel m(c, 5);
    pin_head(m.params(), "head.abs", (-5.0 - c.abs_offset_m) / c.abs_scale_m);
    CHECK(m.absolute_head(std::vector<double>(4 * c.embed_dim, 0.3)) == 1.0);
    pin_head(m.params(), "head.abs", (120.0 - c.abs_offset_m) / c.abs_scale_m);
    CHECK(m.absolute_head(std::vector<double>(4 * c.embed_dim, 0.3)) == doctest::Approx(120.0));
  }

  TEST_CASE("relative_only adds the predicted offset to the known distance") {
    ModelConfig c = small_config();
    c.mode = Mode::relative_only;
    R4DModel m(c, 6);
    pin_head(m.params(), "head.rel", (30.0 - c.rel_offset_m) / c.rel_scale_m);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 10);
    auto samples = make_samples(ds, c);
    bool tested = false;
    for (auto& s : samples) {
      if (s.k() == 0) continue;
      std::vector<double> d(s.k(), 100.0);
      s.set_reference_distances(d, c.max_distance_m);
      CHECK(m.predict_one(s).absolute_m == doctest::Approx(130.0).epsilon(1e-12));
      tested = true;
    }
    CHECK(tested);
    TargetSample empty = samples.front();
    empty = permuted(empty, {});
    CHECK_THROWS_WITH(m.predict_one(empty), doctest::Contains("precondition error"));
    m.mutable_config().relative_pick = ReferencePick::seeded_random;
    for (auto& s : samples)
      if (s.k() > 0) CHECK(m.predict_one(s).absolute_m == doctest::Approx(130.0));
  }

  TEST_CASE("targets without references fall back to the target embedding") {
    ModelConfig c = small_config();
    R4DModel m(c, 7);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 5);
    TargetSample s = permuted(make_samples(ds, c).front(), {});
    const TargetSample* one[] = {&s};
    diff::Graph g;
    BatchOutput out = m.forward_batch(g, one);
    CHECK_FALSE(out.has_pairs);
    const std::size_t E = c.embed_dim;
    bool target_slot_nonzero = false;
    for (std::size_t j = 0; j < 4 * E; ++j) {
      if (j < E)
        target_slot_nonzero = target_slot_nonzero || out.fused.value()[j] != 0.0;
      else
        CHECK(out.fused.value()[j] == 0.0);
    }
    CHECK(target_slot_nonzero);
    CHECK(std::isfinite(m.predict_one(s).absolute_m));
  }

  TEST_CASE("batched and single predictions agree") {
    ModelConfig c = small_config();
    R4DModel m(c, 8);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 25);
    auto samples = make_samples(ds, c);
    m.fit_normalizers(samples);
    std::vector<const TargetSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    auto all = m.predict(batch);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto one = m.predict_one(samples[i]);
      CHECK(std::abs(one.absolute_m - all[i].absolute_m) < 1e-12);
      CHECK(one.weights.size() == all[i].weights.size());
    }
  }

  TEST_CASE("initial weights depend on the seed only") {
    ModelConfig full = small_config();
    ModelConfig base = full;
    base.toggles = {true, false, false, false};
    base.mode = Mode::no_attention;
    base.max_refs = 0;
    R4DModel a(full, 21), b(base, 21), c(full, 22);
    for (const auto& [name, p] : a.params()) {
      CHECK(b.params().at(name).value.storage() == p.value.storage());
    }
    CHECK(c.params().at("head.abs.l0.weight").value.storage() != a.params().at("head.abs.l0.weight").value.storage());
  }
}

TEST_SUITE("model gradients and persistence") {
  TEST_CASE("full forward plus loss matches finite differences") {
    ModelConfig c = small_config();
    R4DModel m(c, 9);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 40);
    auto samples = make_samples(ds, c);
    m.fit_normalizers(samples);
    const TargetSample* pick = nullptr;
    for (const auto& s : samples)
      if (s.k() >= 3) pick = &s;
    REQUIRE(pick != nullptr);
    const TargetSample* one[] = {pick};
    auto build = [&](diff::Graph& g) {
      BatchOutput out = m.forward_batch(g, one);
      const std::vector<double> label = {pick->label_m};
      const std::vector<double> w1 = {1.0};
      diff::Var abs_loss = diff::weighted_smooth_l1(diff::flatten(out.absolute), label, w1, 1.0);
      std::vector<double> rel_label, rel_w;
      for (double d : pick->ref_known_m) {
        rel_label.push_back(pick->label_m - d);
        rel_w.push_back(1.0 / static_cast<double>(pick->k()));
      }
      diff::Var rel_loss = diff::weighted_smooth_l1(diff::flatten(out.relative), rel_label, rel_w, 1.0);
      return diff::add(abs_loss, rel_loss);
    };
    diff::GradCheckOptions opt;
    opt.max_samples = 400;
    auto res = diff::gradient_check(build, m.params(), opt);
    CHECK(res.checked >= 200);
    CHECK_MESSAGE(res.max_relative_error < 1e-4, res.worst_parameter);
  }

  TEST_CASE("checkpoint round trip is exact") {
    ModelConfig c = small_config();
    c.toggles.union_context = false;
    c.max_refs = 4;
    R4DModel m(c, 10);
    const Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 10);
    auto samples = make_samples(ds, c);
    m.fit_normalizers(samples);
    const auto path = (std::filesystem::temp_directory_path() / "r4d_model_roundtrip.ckpt").string();
    m.save(path);
    R4DModel back = R4DModel::load(path);
    CHECK(back.serialize() == m.serialize());
    CHECK(back.config().to_json() == c.to_json());
    for (const auto& s : samples) CHECK(back.predict_one(s).absolute_m == m.predict_one(s).absolute_m);
    std::filesystem::remove(path);
  }

  TEST_CASE("config metadata round trip and bad values") {
    ModelConfig c;
    c.mode = Mode::relative_only;
    c.relative_pick = ReferencePick::seeded_random;
    c.relative_seed = 77;
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK_THROWS_WITH(ModelConfig::from_json("{}"), doctest::Contains("parse error"));
    CHECK_THROWS_WITH(parse_mode("fancy"), doctest::Contains("parse error"));
    c.abs_scale_m = 0;
    CHECK_THROWS_WITH(R4DModel(c, 1), doctest::Contains("configuration error"));
  }
}
