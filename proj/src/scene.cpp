// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "r4d/error.hpp"

namespace r4d {

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::day: return "day";
    case Regime::dawn_dusk: return "dawn_dusk";
    case Regime::night: return "night";
  }
  return "day";
}

Regime parse_regime(std::string_view name) {
  if (name == "day") return Regime::day;
  if (name == "dawn_dusk") return Regime::dawn_dusk;
  if (name == "night") return Regime::night;
  fail(ErrorKind::parse, "unknown regime '" + std::string(name) + "' (expected day, dawn_dusk or night)");
}

const char* to_string(Role role) { return role == Role::reference ? "reference" : "target"; }

const char* to_string(SplitTag tag) { return tag == SplitTag::train ? "train" : "val"; }

SplitTag parse_split(std::string_view name) {
  if (name == "train") return SplitTag::train;
  if (name == "val") return SplitTag::val;
  fail(ErrorKind::parse, "unknown split tag '" + std::string(name) + "'");
}

void CameraModel::validate() const {
  if (!(focal_px > 0.0)) fail(ErrorKind::configuration, "camera focal length must be positive");
  if (image_width <= 0 || image_height <= 0) fail(ErrorKind::configuration, "image dimensions must be positive");
  if (!(cx0 >= 0.0 && cx0 < image_width && cy0 >= 0.0 && cy0 < image_height))
    fail(ErrorKind::configuration, "principal point must lie inside the image");
  if (!(mount_height_m > 0.0)) fail(ErrorKind::configuration, "camera mount height must be positive");
}

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

bool BBox::intersects(const BBox& o) const {
  return x1() <= o.x2() && o.x1() <= x2() && y1() <= o.y2() && o.y1() <= y2();
}

double RenderedObject::distance() const {
  if (role == Role::reference) {
    if (!known_distance_m) fail(ErrorKind::state, "reference " + std::to_string(id) + " has no known distance");
    return *known_distance_m;
  }
  if (!label_distance_m) fail(ErrorKind::state, "target " + std::to_string(id) + " has no label distance");
  return *label_distance_m;
}

double RenderedObject::true_distance() const { return world ? world->distance_m : distance(); }

std::vector<const RenderedObject*> Scene::references() const {
  std::vector<const RenderedObject*> out;
  for (const auto& o : objects)
    if (o.is_reference()) out.push_back(&o);
  return out;
}

std::vector<const RenderedObject*> Scene::targets() const {
  std::vector<const RenderedObject*> out;
  for (const auto& o : objects)
    if (!o.is_reference()) out.push_back(&o);
  return out;
}

const RenderedObject& Scene::object(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return o;
  fail(ErrorKind::input, "scene " + std::to_string(scene_id) + " has no object " + std::to_string(id));
}

std::size_t Scene::target_count() const {
  return static_cast<std::size_t>(
      std::count_if(objects.begin(), objects.end(), [](const auto& o) { return !o.is_reference(); }));
}

void Dataset::validate() const {
  std::set<std::uint64_t> ids;
  for (const auto& s : scenes) {
    if (!ids.insert(s.scene_id).second)
      fail(ErrorKind::input, "duplicate scene id " + std::to_string(s.scene_id));
    if (s.target_count() == 0) fail(ErrorKind::input, "scene " + std::to_string(s.scene_id) + " has no target");
    std::set<int> object_ids;
    for (const auto& o : s.objects) {
      if (!object_ids.insert(o.id).second)
        fail(ErrorKind::input, "scene " + std::to_string(s.scene_id) + " repeats object id " + std::to_string(o.id));
      if (o.known_distance_m.has_value() == o.label_distance_m.has_value() ||
          o.is_reference() != o.known_distance_m.has_value())
        fail(ErrorKind::input, "scene " + std::to_string(s.scene_id) + " object " + std::to_string(o.id) +
                                   " must carry exactly one of known/label distance matching its role");
      if (!(o.bbox.w > 0.0 && o.bbox.h > 0.0))
        fail(ErrorKind::input, "scene " + std::to_string(s.scene_id) + " object " + std::to_string(o.id) +
                                   " has a non-positive box size");
    }
  }
}

std::size_t Dataset::target_count() const {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.target_count();
  return n;
}

}  // namespace r4d
