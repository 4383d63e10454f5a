// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "r4d/error.hpp"
#include "r4d/scenesim.hpp"
#include "r4d/training.hpp"

using namespace r4d;
using namespace r4d::train;

namespace {

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
}

// One target at label_m with references at the given known distances.
model::TargetSample hand_sample(double label_m, std::vector<double> refs) {
  model::TargetSample s;
  s.label_m = label_m;
  s.target_box = {900, 640, 8, 6};
  s.target_app.assign(kAppearanceDim, 0.1);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    s.ref_ids.push_back(static_cast<int>(i));
    s.ref_boxes.push_back({200.0 + 100.0 * static_cast<double>(i), 800, 90, 70});
    s.ref_known_m.push_back(refs[i]);
    s.ref_app.insert(s.ref_app.end(), kAppearanceDim, 0.2);
    s.union_in.insert(s.union_in.end(), feat::kUnionInputDim, 0.3);
    s.geo_in.insert(s.geo_in.end(), feat::kGeoInputDim, 0.0);
  }
  s.set_reference_distances(s.ref_known_m, 300.0);
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.warmup_iters = 3;
  c.model.embed_dim = 8;
  c.model.attention_hidden = 8;
  c.model.head_hidden = 8;
  return c;
}

}  // namespace

TEST_SUITE("learning-rate schedule") {
  TEST_CASE("warmup endpoints") {
    TrainConfig c;
    CHECK(lr_at(0, 0.0, c) == 0.0);
    CHECK(lr_at(c.warmup_iters, 0.0, c) == c.base_lr);
    CHECK(lr_at(c.warmup_iters / 2, 0.0, c) == doctest::Approx(0.5 * c.base_lr));
  }

  TEST_CASE("step preset decays tenfold at epochs 16 and 22") {
    const TrainConfig c = TrainConfig::paper();
    const std::size_t late = 100000;
    CHECK(lr_at(late, 15.99, c) == doctest::Approx(0.0005).epsilon(1e-12));
    CHECK(lr_at(late, 16.0, c) == doctest::Approx(0.00005).epsilon(1e-12));
    CHECK(lr_at(late, 22.0, c) == doctest::Approx(0.000005).epsilon(1e-12));
  }

  TEST_CASE("step schedule is continuous at warmup end and non-increasing after") {
    TrainConfig c;
    CHECK(std::abs(lr_at(c.warmup_iters - 1, 0.0, c) - lr_at(c.warmup_iters, 0.0, c)) <= c.base_lr / c.warmup_iters + 1e-15);
    double prev = lr_at(c.warmup_iters, 0.0, c);
    for (std::size_t i = 1; i <= 600; ++i) {
      const double e = static_cast<double>(i) * 0.05;
      const double lr = lr_at(c.warmup_iters + i, e, c);
      CHECK(lr <= prev);
      prev = lr;
    }
  }

  TEST_CASE("cosine reaches zero at the final epoch") {
    const TrainConfig c = TrainConfig::paper_cosine();
    CHECK(std::abs(lr_at(1000000, static_cast<double>(c.epochs), c)) < 1e-12);
    CHECK(lr_at(1000000, 0.0, c) == doctest::Approx(c.base_lr));
    CHECK(lr_at(1000000, c.epochs / 2.0, c) == doctest::Approx(0.5 * c.base_lr));
  }
}

TEST_SUITE("distance augmentation") {
  TEST_CASE("shared shift keeps every relative label") {
    std::mt19937_64 rng(3);
    const auto s = hand_sample(200.0, {80.0, 60.0, 20.0});
    for (int i = 0; i < 200; ++i) {
      const auto a = distance_augment(s, 50.0, 300.0, rng);
      REQUIRE(a.relative_labels_m.size() == 3);
      CHECK(a.relative_labels_m[0] == 120.0);
      for (std::size_t r = 0; r < 3; ++r) {
        CHECK(std::abs((a.sample.label_m - a.sample.ref_known_m[r]) - a.relative_labels_m[r]) < 1e-9);
        CHECK(a.sample.ref_known_m[r] == s.ref_known_m[r] + a.delta_m);
        CHECK(a.sample.ref_known_m[r] > 1.0);
        CHECK(a.sample.geo_in[r * feat::kGeoInputDim + 12] == a.sample.ref_known_m[r] / 300.0);
      }
      CHECK(a.sample.label_m == s.label_m + a.delta_m);
    }
  }

  TEST_CASE("a reference at 80 m shifted by 20 m pairs with a 220 m label") {
    const auto s = hand_sample(200.0, {80.0});
    // Find a draw near +20 m and check the arithmetic of that shift.
    std::mt19937_64 rng(1);
    bool seen = false;
    for (int i = 0; i < 5000 && !seen; ++i) {
      const auto a = distance_augment(s, 20.0, 300.0, rng);
      if (std::abs(a.delta_m - 20.0) < 0.5) {
        CHECK(a.sample.ref_known_m[0] == doctest::Approx(100.0).epsilon(0.01));
        CHECK(a.sample.label_m == doctest::Approx(220.0).epsilon(0.01));
        CHECK(a.sample.label_m - a.sample.ref_known_m[0] == doctest::Approx(120.0).epsilon(1e-12));
        seen = true;
      }
    }
    CHECK(seen);
  }

  TEST_CASE("sigma zero and reference-free samples are unchanged") {
    std::mt19937_64 rng(5);
    const auto s = hand_sample(150.0, {30.0, 40.0});
    const auto a = distance_augment(s, 0.0, 300.0, rng);
    CHECK(a.delta_m == 0.0);
    CHECK(a.sample.label_m == 150.0);
    CHECK(a.sample.geo_in == s.geo_in);
    const auto none = hand_sample(150.0, {});
    CHECK(distance_augment(none, 100.0, 300.0, rng).sample.label_m == 150.0);
    CHECK_THROWS_WITH(distance_augment(s, -1.0, 300.0, rng), doctest::Contains("precondition error"));
  }

  TEST_CASE("large sigma never yields distances at or below 1 m") {
    std::mt19937_64 rng(8);
    const auto s = hand_sample(90.0, {3.0, 10.0});
    std::size_t shifted = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto a = distance_augment(s, 200.0, 300.0, rng);
      CHECK(a.sample.label_m > 1.0);
      for (double d : a.sample.ref_known_m) CHECK(d > 1.0);
      shifted += a.delta_m != 0.0;
    }
    CHECK(shifted > 9000);
  }
}

TEST_SUITE("loss") {
  TEST_CASE("matches a hand Huber oracle and handles empty reference lists") {
    model::ModelConfig mc = tiny_config().model;
    model::R4DModel m(mc, 1);
    const auto a = hand_sample(200.0, {80.0, 50.0});
    const auto b = hand_sample(120.0, {});
    const model::TargetSample* batch[] = {&a, &b};
    diff::Graph g;
    auto out = m.forward_batch(g, batch);
    const std::vector<LossTargets> t = {{200.0, {120.0, 150.0}}, {120.0, {}}};
    const double abs_a = out.absolute.value()[0], abs_b = out.absolute.value()[1];
    const double r0 = out.relative.value()[0], r1 = out.relative.value()[1];
    const double expect =
        0.5 * (huber(abs_a - 200.0, 1.0) + huber(abs_b - 120.0, 1.0)) +
        0.7 * 0.5 * (0.5 * (huber(r0 - 120.0, 1.0) + huber(r1 - 150.0, 1.0)));
    CHECK(compute_loss(out, t, 0.7, 1.0).value()[0] == doctest::Approx(expect).epsilon(1e-12));
    const double abs_only = 0.5 * (huber(abs_a - 200.0, 1.0) + huber(abs_b - 120.0, 1.0));
    CHECK(compute_loss(out, t, 0.0, 1.0).value()[0] == doctest::Approx(abs_only).epsilon(1e-14));

    const model::TargetSample* lone[] = {&b};
    diff::Graph g2;
    auto out2 = m.forward_batch(g2, lone);
    const std::vector<LossTargets> t2 = {{120.0, {}}};
    CHECK(compute_loss(out2, t2, 1.0, 1.0).value()[0] == doctest::Approx(huber(abs_b - 120.0, 1.0)).epsilon(1e-14));
  }

  TEST_CASE("perfect predictions give zero and misaligned lists are rejected") {
    model::R4DModel m(tiny_config().model, 2);
    const auto a = hand_sample(200.0, {80.0});
    const model::TargetSample* batch[] = {&a};
    diff::Graph g;
    auto out = m.forward_batch(g, batch);
    const std::vector<LossTargets> exact = {{out.absolute.value()[0], {out.relative.value()[0]}}};
    CHECK(compute_loss(out, exact, 1.0, 1.0).value()[0] == 0.0);
    const std::vector<LossTargets> wrong = {{200.0, {1.0, 2.0}}};
    CHECK_THROWS_WITH(compute_loss(out, wrong, 1.0, 1.0), doctest::Contains("dimension error"));
    CHECK_THROWS_WITH(compute_loss(out, {}, 1.0, 1.0), doctest::Contains("dimension error"));
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("two short runs are bit-identical") {
    sim::SceneSpec spec;
    const Dataset tr = sim::generate_dataset(spec, 2);
    const Dataset va = sim::generate_dataset(spec, 2, 2);
    const TrainConfig c = tiny_config();
    auto a = train::train(tr, va, c);
    auto b = train::train(tr, va, c);
    CHECK(history_csv(a.history) == history_csv(b.history));
    CHECK(a.model.serialize() == b.model.serialize());
    CHECK(a.history.size() == 2);
    CHECK(a.iterations == b.iterations);
  }

  TEST_CASE("loss falls over the first epochs") {
    sim::SceneSpec spec;
    const Dataset tr = sim::generate_dataset(spec, 400);
    const Dataset va = sim::generate_dataset(spec, 50, 400);
    TrainConfig c = tiny_config();
    c.epochs = 5;
    c.batch_size = 16;
    c.warmup_iters = 20;
    c.optimizer.clip_norm = 10;
    auto r = train::train(tr, va, c);
    REQUIRE(r.history.size() == 5);
    CHECK(r.history[4].train_loss < r.history[0].train_loss);
    CHECK(r.best_epoch >= 1);
  }

  TEST_CASE("a non-finite loss aborts naming the iteration") {
    sim::SceneSpec spec;
    Dataset tr = sim::generate_dataset(spec, 3);
    const Dataset va = sim::generate_dataset(spec, 2, 3);
    for (auto& o : tr.scenes[0].objects)
      if (!o.is_reference()) o.label_distance_m = std::numeric_limits<double>::quiet_NaN();
    TrainConfig c = tiny_config();
    c.batch_size = 64;
    CHECK_THROWS_WITH(train::train(tr, va, c), doctest::Contains("iteration 0"));
    try {
      train::train(tr, va, c);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numeric);
    }
  }

  TEST_CASE("empty sets are input errors") {
    const Dataset tr = sim::generate_dataset(sim::SceneSpec{}, 2);
    CHECK_THROWS_WITH(train::train(Dataset{}, tr, tiny_config()), doctest::Contains("input error"));
    CHECK_THROWS_WITH(train::train(tr, Dataset{}, tiny_config()), doctest::Contains("input error"));
  }
}

TEST_SUITE("run configuration") {
  TEST_CASE("text round trip and presets") {
    TrainConfig c = TrainConfig::paper();
    c.model.toggles.union_context = false;
    c.model.mode = model::Mode::no_attention;
    c.sigma_aug_m = 10;
    const TrainConfig back = TrainConfig::from_text(c.to_text(), "inline");
    CHECK(back.to_text() == c.to_text());
    const TrainConfig p = TrainConfig::from_text("preset = paper\nepochs = 3\n", "inline");
    CHECK(p.epochs == 3);
    CHECK(p.base_lr == 0.0005);
    CHECK(p.warmup_iters == 1800);
    const TrainConfig d = TrainConfig::desk();
    CHECK(d.epochs == 30);
    CHECK(d.batch_size == 16);
    CHECK(d.base_lr == 0.003);
    CHECK(d.warmup_iters == 100);
  }

  TEST_CASE("bad keys and values are configuration errors") {
    CHECK_THROWS_WITH(TrainConfig::from_text("epoch = 3\n", "inline"), doctest::Contains("unknown key"));
    CHECK_THROWS_WITH(TrainConfig::from_text("sigma_aug_m = -1\n", "inline"), doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(TrainConfig::from_text("schedule = linear\n", "inline"), doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(TrainConfig::from_text("mode = odd\n", "inline"), doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(TrainConfig::from_text("preset = huge\n", "inline"), doctest::Contains("configuration error"));
    CHECK_THROWS_WITH(TrainConfig::from_text("batch_size = 0\n", "inline"), doctest::Contains("configuration error"));
  }

  TEST_CASE("history rows") {
    EpochRecord r;
    r.epoch = 1;
    r.lr = 0.5;
    r.train_loss = 2.0;
    r.val.n = 3;
    const std::string csv = history_csv({r});
    CHECK(csv.starts_with("epoch,lr,train_loss,val_n"));
    CHECK(csv.find("\n1,0.5,2,3,") != std::string::npos);
  }
}
