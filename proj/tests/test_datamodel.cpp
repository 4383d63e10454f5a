// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "r4d/datamodel.hpp"
#include "r4d/error.hpp"
#include "r4d/io.hpp"
#include "r4d/scenesim.hpp"

using namespace r4d;
using namespace r4d::data;

namespace {

RenderedObject object_at(int id, double distance, Role role) {
  RenderedObject o;
  o.id = id;
  o.role = role;
  o.bbox = {900.0 + id, 640.0, 1000.0 * 1.8 / distance, 1000.0 * 1.5 / distance};
  o.appearance = sim::geometry_appearance(o.bbox);
  if (role == Role::reference)
    o.known_distance_m = distance;
  else
    o.label_distance_m = distance;
  return o;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("r4d_test_" + name)).string();
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_SUITE("pseudo_longrange_filter") {
  TEST_CASE("cutoff assigns roles") {
    Dataset ds;
    Scene s;
    s.objects = {object_at(0, 30, Role::target), object_at(1, 60, Role::target)};
    ds.scenes.push_back(s);
    Dataset out = pseudo_longrange_filter(ds, 40);
    REQUIRE(out.scenes.size() == 1);
    CHECK(out.scenes[0].objects[0].is_reference());
    CHECK(*out.scenes[0].objects[0].known_distance_m == 30);
    CHECK_FALSE(out.scenes[0].objects[1].is_reference());
    CHECK(*out.scenes[0].objects[1].label_distance_m == 60);
    out.validate();
  }

  TEST_CASE("scenes without targets are dropped; all-dropped is an error") {
    Dataset ds;
    Scene a, b;
    a.scene_id = 1;
    a.objects = {object_at(0, 20, Role::target), object_at(1, 35, Role::reference)};
    b.scene_id = 2;
    b.objects = {object_at(0, 20, Role::reference), object_at(1, 90, Role::target)};
    ds.scenes = {a, b};
    Dataset out = pseudo_longrange_filter(ds, 40);
    REQUIRE(out.scenes.size() == 1);
    CHECK(out.scenes[0].scene_id == 2);
    CHECK_THROWS_WITH(pseudo_longrange_filter(ds, 500), doctest::Contains("input error"));
  }

  TEST_CASE("idempotent and role-disjoint on generated data") {
    Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 200);
    Dataset once = pseudo_longrange_filter(ds, 40);
    Dataset twice = pseudo_longrange_filter(once, 40);
    once.validate();
    CHECK(dataset_to_jsonl(once).substr(dataset_to_jsonl(once).find('\n')) ==
          dataset_to_jsonl(twice).substr(dataset_to_jsonl(twice).find('\n')));
    for (const auto& s : once.scenes)
      for (const auto& o : s.objects) CHECK(o.is_reference() == (o.true_distance() <= 40));
  }
}

TEST_SUITE("split") {
  TEST_CASE("sizes, determinism and partition") {
    Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 10);
    auto [train, val] = split(ds, 0.2, 5);
    CHECK(train.scenes.size() == 8);
    CHECK(val.scenes.size() == 2);
    auto [train2, val2] = split(ds, 0.2, 5);
    CHECK(dataset_to_jsonl(train) == dataset_to_jsonl(train2));
    CHECK(dataset_to_jsonl(val) == dataset_to_jsonl(val2));
    std::set<std::uint64_t> ids;
    for (const auto& s : train.scenes) ids.insert(s.scene_id);
    for (const auto& s : val.scenes) CHECK(ids.insert(s.scene_id).second);
    CHECK(ids.size() == 10);
  }

  TEST_CASE("invalid fractions and tiny datasets") {
    Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 1);
    CHECK_THROWS(split(ds, 0.5, 1));
    CHECK_THROWS_WITH(split(ds, 1.0, 1), doctest::Contains("precondition error"));
  }
}

TEST_SUITE("dataset files") {
  TEST_CASE("write, read, write is byte identical and bit exact") {
    Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 50);
    const std::string path = temp_path("ds.jsonl");
    write_dataset(path, ds);
    Dataset back = read_dataset(path);
    CHECK(dataset_to_jsonl(back) == io::read_file(path));
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
      for (std::size_t k = 0; k < ds.scenes[i].objects.size(); ++k) {
        const auto& a = ds.scenes[i].objects[k];
        const auto& b = back.scenes[i].objects[k];
        CHECK(bit_equal(a.bbox.cx, b.bbox.cx));
        CHECK(bit_equal(a.bbox.h, b.bbox.h));
        CHECK(bit_equal(a.distance(), b.distance()));
        for (std::size_t j = 0; j < a.appearance.size(); ++j) CHECK(bit_equal(a.appearance[j], b.appearance[j]));
      }
    std::filesystem::remove(path);
  }

  TEST_CASE("missing fields, versions and truncation") {
    const std::string good = dataset_to_jsonl(sim::generate_dataset(sim::SceneSpec{}, 3));
    std::string no_field = good;
    no_field.replace(no_field.find("\"regime\""), 8, "\"regimX\"");
    CHECK_THROWS_WITH(dataset_from_jsonl(no_field, "f"), doctest::Contains("'regime'"));
    std::string bad_version = good;
    bad_version.replace(bad_version.find("\"version\":1"), 11, "\"version\":7");
    CHECK_THROWS_WITH(dataset_from_jsonl(bad_version, "f"), doctest::Contains("version error"));
    const std::string truncated = good.substr(0, good.rfind('\n', good.size() - 2) + 1);
    CHECK_THROWS_WITH(dataset_from_jsonl(truncated, "f"), doctest::Contains("truncated"));
    CHECK_THROWS_WITH(dataset_from_jsonl(good.substr(0, good.size() - 20), "f"), doctest::Contains("parse error"));
  }
}

TEST_SUITE("prediction files") {
  TEST_CASE("round trip") {
    std::vector<PredictionRecord> recs(2);
    recs[0] = {4, 2, 123.456789, std::vector<std::pair<int, double>>{{0, 0.25}, {1, 0.75}}};
    recs[1] = {5, 0, 0.1 + 0.2, std::nullopt};
    const std::string text = predictions_to_jsonl(recs);
    auto back = predictions_from_jsonl(text, "p");
    CHECK(predictions_to_jsonl(back) == text);
    CHECK(bit_equal(back[1].predicted_distance_m, 0.1 + 0.2));
  }

  TEST_CASE("weights summing to 0.8 fail validation") {
    const std::string text =
        "{\"format\":\"r4d-predictions\",\"version\":1}\n"
        "{\"scene_id\":1,\"target_id\":0,\"predicted_distance_m\":100.0,\"attention\":[[0,0.5],[1,0.3]]}\n";
    CHECK_THROWS_WITH(predictions_from_jsonl(text, "p"), doctest::Contains("sum to"));
    PredictionRecord r{1, 0, -3.0, std::nullopt};
    CHECK_THROWS_WITH(r.validate(), doctest::Contains("positive"));
  }
}

TEST_SUITE("ingest_labels") {
  TEST_CASE("empty file and unknown version") {
    CHECK_THROWS_WITH(ingest_labels_text("", "l"), doctest::Contains("empty"));
    CHECK_THROWS_WITH(ingest_labels_text("frame_id,cx,cy,w,h,distance_m,role\n", "l", 2),
                      doctest::Contains("version error"));
  }

  TEST_CASE("single valid row") {
    Dataset ds = ingest_labels_text("frame_id,cx,cy,w,h,distance_m,role\n7,960,650,12,9,150,target\n", "l");
    REQUIRE(ds.scenes.size() == 1);
    CHECK(ds.scenes[0].scene_id == 7);
    CHECK(*ds.scenes[0].objects[0].label_distance_m == 150);
    CHECK(ds.scenes[0].objects[0].appearance[0] == doctest::Approx(std::log(9.0)));
  }

  TEST_CASE("malformed rows name their line") {
    CHECK_THROWS_WITH(ingest_labels_text("frame_id,cx,cy,w,h,distance_m,role\n1,2,3,4,5,6,target\n1,2,x,4,5,6,target\n", "l"),
                      doctest::Contains("l:3"));
    CHECK_THROWS_WITH(ingest_labels_text("id,cx\n", "l"), doctest::Contains("header"));
    CHECK_THROWS_WITH(ingest_labels_text("frame_id,cx,cy,w,h,distance_m,role\n1,2,3,4,5,6,car\n", "l"),
                      doctest::Contains("role"));
  }

  TEST_CASE("export then ingest preserves boxes and distances") {
    Dataset ds = sim::generate_dataset(sim::SceneSpec{}, 40);
    const std::string path = temp_path("labels.csv");
    io::write_file_atomic(path, labels_to_csv(ds));
    Dataset back = ingest_labels(path);
    REQUIRE(back.scenes.size() == ds.scenes.size());
    for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
      REQUIRE(back.scenes[i].objects.size() == ds.scenes[i].objects.size());
      for (std::size_t k = 0; k < ds.scenes[i].objects.size(); ++k) {
        const auto& a = ds.scenes[i].objects[k];
        const auto& b = back.scenes[i].objects[k];
        CHECK(std::abs(a.bbox.cx - b.bbox.cx) < 1e-9);
        CHECK(std::abs(a.bbox.cy - b.bbox.cy) < 1e-9);
        CHECK(std::abs(a.bbox.w - b.bbox.w) < 1e-9);
        CHECK(std::abs(a.bbox.h - b.bbox.h) < 1e-9);
        CHECK(std::abs(a.distance() - b.distance()) < 1e-9);
        CHECK(a.role == b.role);
      }
    }
    std::filesystem::remove(path);
  }
}
