// Copyright (c) 2026, The r4d Authors
// SPDX-License-Identifier: Apache-2.0

#include "r4d/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "r4d/error.hpp"
#include "r4d/io.hpp"
#include "r4d/kv.hpp"
#include "r4d/scenesim.hpp"

namespace r4d::data {

using json = nlohmann::ordered_json;

namespace {

const json& need(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorKind::parse, ctx + ": missing required field '" + key + "'");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& ctx) {
  const json& v = need(j, key, ctx);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::parse, ctx + ": field '" + key + "' has the wrong type");
  }
}

double get_number(const json& j, const char* key, const std::string& ctx) {
  const json& v = need(j, key, ctx);
  if (!v.is_number()) fail(ErrorKind::parse, ctx + ": field '" + key + "' must be a number");
  return v.get<double>();
}

std::vector<double> get_numbers(const json& j, const char* key, const std::string& ctx) {
  const json& v = need(j, key, ctx);
  if (!v.is_array()) fail(ErrorKind::parse, ctx + ": field '" + key + "' must be an array");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) fail(ErrorKind::parse, ctx + ": field '" + key + "' must hold numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

json parse_line(std::string_view line, const std::string& ctx) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, ctx + ": malformed JSON (" + e.what() + ")");
  }
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

json world_to_json(const WorldObject& w) {
  return json{{"distance_m", w.distance_m}, {"lateral_m", w.lateral_m}, {"height_m", w.height_m},
              {"width_m", w.width_m},       {"lane_id", w.lane_id},     {"pose_deg", w.pose_deg}};
}

WorldObject world_from_json(const json& j, const std::string& ctx) {
  WorldObject w;
  w.distance_m = get_number(j, "distance_m", ctx);
  w.lateral_m = get_number(j, "lateral_m", ctx);
  w.height_m = get_number(j, "height_m", ctx);
  w.width_m = get_number(j, "width_m", ctx);
  w.lane_id = get_as<int>(j, "lane_id", ctx);
  w.pose_deg = get_number(j, "pose_deg", ctx);
  return w;
}

json scene_to_json(const Scene& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["regime"] = to_string(s.regime);
  j["camera"] = json{{"focal_px", s.camera.focal_px},         {"image_width", s.camera.image_width},
                     {"image_height", s.camera.image_height}, {"cx0", s.camera.cx0},
                     {"cy0", s.camera.cy0},                   {"mount_height_m", s.camera.mount_height_m}};
  if (s.road)
    j["road"] = json{{"n_lanes", s.road->n_lanes},
                     {"ego_lane", s.road->ego_lane},
                     {"seed", s.road->seed},
                     {"ruler_noise", s.road->ruler_noise}};
  else
    j["road"] = nullptr;
  json objects = json::array();
  for (const auto& o : s.objects) {
    json jo;
    jo["id"] = o.id;
    jo["role"] = to_string(o.role);
    jo["bbox"] = json::array({o.bbox.cx, o.bbox.cy, o.bbox.w, o.bbox.h});
    if (o.known_distance_m) jo["known_distance_m"] = *o.known_distance_m;
    if (o.label_distance_m) jo["label_distance_m"] = *o.label_distance_m;
    jo["appearance"] = o.appearance;
    if (o.world) jo["world"] = world_to_json(*o.world);
    objects.push_back(std::move(jo));
  }
  j["objects"] = std::move(objects);
  return j;
}

Scene scene_from_json(const json& j, const std::string& ctx) {
  Scene s;
  s.scene_id = get_as<std::uint64_t>(j, "scene_id", ctx);
  s.regime = parse_regime(get_as<std::string>(j, "regime", ctx));
  const json& cam = need(j, "camera", ctx);
  const std::string cctx = ctx + " camera";
  s.camera.focal_px = get_number(cam, "focal_px", cctx);
  s.camera.image_width = get_as<int>(cam, "image_width", cctx);
  s.camera.image_height = get_as<int>(cam, "image_height", cctx);
  s.camera.cx0 = get_number(cam, "cx0", cctx);
  s.camera.cy0 = get_number(cam, "cy0", cctx);
  s.camera.mount_height_m = get_number(cam, "mount_height_m", cctx);
  const json& road = need(j, "road", ctx);
  if (!road.is_null()) {
    RoadInfo r;
    r.n_lanes = get_as<int>(road, "n_lanes", ctx + " road");
    r.ego_lane = get_as<int>(road, "ego_lane", ctx + " road");
    r.seed = get_as<std::uint64_t>(road, "seed", ctx + " road");
    r.ruler_noise = get_number(road, "ruler_noise", ctx + " road");
    s.road = r;
  }
  const json& objects = need(j, "objects", ctx);
  if (!objects.is_array()) fail(ErrorKind::parse, ctx + ": field 'objects' must be an array");
  for (const auto& jo : objects) {
    RenderedObject o;
    o.id = get_as<int>(jo, "id", ctx + " object");
    const std::string octx = ctx + " object " + std::to_string(o.id);
    const auto role = get_as<std::string>(jo, "role", octx);
    if (role == "reference")
      o.role = Role::reference;
    else if (role == "target")
      o.role = Role::target;
    else
      fail(ErrorKind::parse, octx + ": unknown role '" + role + "'");
    const auto box = get_numbers(jo, "bbox", octx);
    if (box.size() != 4) fail(ErrorKind::parse, octx + ": field 'bbox' must hold 4 numbers");
    o.bbox = {box[0], box[1], box[2], box[3]};
    if (o.role == Role::reference)
      o.known_distance_m = get_number(jo, "known_distance_m", octx);
    else
      o.label_distance_m = get_number(jo, "label_distance_m", octx);
    o.appearance = get_numbers(jo, "appearance", octx);
    if (o.appearance.size() != kAppearanceDim)
      fail(ErrorKind::parse, octx + ": field 'appearance' must hold " + std::to_string(kAppearanceDim) + " numbers");
    if (jo.contains("world")) o.world = world_from_json(jo.at("world"), octx + " world");
    s.objects.push_back(std::move(o));
  }
  return s;
}

}  // namespace

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  json header{{"format", "r4d-dataset"},
              {"version", kDatasetVersion},
              {"split", to_string(dataset.split)},
              {"provenance", dataset.provenance},
              {"scene_count", dataset.scenes.size()}};
  out += header.dump();
  out += '\n';
  for (const auto& s : dataset.scenes) {
    out += scene_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  if (lines.empty()) fail(ErrorKind::parse, source + ": empty dataset file (missing header)");
  const json header = parse_line(lines[0], source + ":1");
  if (!header.is_object() || header.value("format", "") != "r4d-dataset")
    fail(ErrorKind::parse, source + ":1: not an r4d dataset header");
  const int version = get_as<int>(header, "version", source + ":1");
  if (version != kDatasetVersion)
    fail(ErrorKind::version, source + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.split = parse_split(get_as<std::string>(header, "split", source + ":1"));
  ds.provenance = get_as<std::string>(header, "provenance", source + ":1");
  const auto count = get_as<std::size_t>(header, "scene_count", source + ":1");
  if (lines.size() - 1 != count)
    fail(ErrorKind::parse, source + ": truncated or padded file: header announces " + std::to_string(count) +
                               " scenes, found " + std::to_string(lines.size() - 1));
  ds.scenes.reserve(count);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string ctx = source + ":" + std::to_string(i + 1);
    ds.scenes.push_back(scene_from_json(parse_line(lines[i], ctx), ctx));
  }
  ds.validate();
  return ds;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  io::write_file_atomic(path, dataset_to_jsonl(dataset));
}

Dataset read_dataset(const std::string& path) { return dataset_from_jsonl(io::read_file(path), path); }

// --- predictions -------------------------------------------------------------------

void PredictionRecord::validate() const {
  const std::string ctx = "prediction for scene " + std::to_string(scene_id) + " target " + std::to_string(target_id);
  if (!(predicted_distance_m > 0.0) || !std::isfinite(predicted_distance_m))
    fail(ErrorKind::input, ctx + ": predicted distance must be positive and finite");
  if (attention) {
    double total = 0.0;
    for (const auto& [ref, w] : *attention) {
      if (!(w >= 0.0)) fail(ErrorKind::input, ctx + ": attention weights must be non-negative");
      total += w;
    }
    if (!attention->empty() && std::abs(total - 1.0) > 1e-6)
      fail(ErrorKind::input, ctx + ": attention weights sum to " + format_double(total) + ", expected 1");
  }
}

std::string predictions_to_jsonl(const std::vector<PredictionRecord>& records) {
  std::string out = json{{"format", "r4d-predictions"}, {"version", kPredictionVersion}}.dump();
  out += '\n';
  for (const auto& r : records) {
    r.validate();
    json j{{"scene_id", r.scene_id}, {"target_id", r.target_id}, {"predicted_distance_m", r.predicted_distance_m}};
    if (r.attention) {
      json a = json::array();
      for (const auto& [ref, w] : *r.attention) a.push_back(json::array({ref, w}));
      j["attention"] = std::move(a);
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> predictions_from_jsonl(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  if (lines.empty()) fail(ErrorKind::parse, source + ": empty prediction file (missing header)");
  const json header = parse_line(lines[0], source + ":1");
  if (!header.is_object() || header.value("format", "") != "r4d-predictions")
    fail(ErrorKind::parse, source + ":1: not an r4d prediction header");
  const int version = get_as<int>(header, "version", source + ":1");
  if (version != kPredictionVersion)
    fail(ErrorKind::version, source + ": unsupported prediction version " + std::to_string(version));
  std::vector<PredictionRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string ctx = source + ":" + std::to_string(i + 1);
    const json j = parse_line(lines[i], ctx);
    PredictionRecord r;
    r.scene_id = get_as<std::uint64_t>(j, "scene_id", ctx);
    r.target_id = get_as<int>(j, "target_id", ctx);
    r.predicted_distance_m = get_number(j, "predicted_distance_m", ctx);
    if (j.contains("attention")) {
      const json& a = j.at("attention");
      if (!a.is_array()) fail(ErrorKind::parse, ctx + ": field 'attention' must be an array");
      std::vector<std::pair<int, double>> weights;
      for (const auto& e : a) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number())
          fail(ErrorKind::parse, ctx + ": attention entries must be [reference_id, weight]");
        weights.emplace_back(e[0].get<int>(), e[1].get<double>());
      }
      r.attention = std::move(weights);
    }
    try {
      r.validate();
    } catch (const Error& e) {
      fail(ErrorKind::input, ctx + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
  io::write_file_atomic(path, predictions_to_jsonl(records));
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  return predictions_from_jsonl(io::read_file(path), path);
}

// --- transforms ----------------------------------------------------------------------

Dataset pseudo_longrange_filter(const Dataset& dataset, double cutoff_m) {
  if (!(cutoff_m > 0.0)) fail(ErrorKind::precondition, "cutoff must be positive");
  Dataset out;
  out.split = dataset.split;
  out.provenance = dataset.provenance + "|cutoff=" + format_double(cutoff_m);
  for (const auto& scene : dataset.scenes) {
    Scene s = scene;
    for (auto& o : s.objects) {
      const double truth = o.true_distance();
      if (truth <= cutoff_m) {
        if (!o.is_reference()) {
          o.known_distance_m = o.label_distance_m;
          o.label_distance_m.reset();
          o.role = Role::reference;
        }
      } else if (o.is_reference()) {
        o.label_distance_m = truth;
        o.known_distance_m.reset();
        o.role = Role::target;
      }
    }
    if (s.target_count() > 0) out.scenes.push_back(std::move(s));
  }
  if (out.scenes.empty())
    fail(ErrorKind::input, "cutoff " + format_double(cutoff_m) + " m leaves no scene with a target");
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    fail(ErrorKind::precondition, "val_fraction must lie strictly between 0 and 1");
  const std::size_t n = dataset.scenes.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n_val < 1 || n_val >= n)
    fail(ErrorKind::input, "dataset of " + std::to_string(n) + " scenes is too small for a " +
                               format_double(val_fraction) + " validation fraction");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  Dataset train, val;
  train.split = SplitTag::train;
  val.split = SplitTag::val;
  train.provenance = dataset.provenance + "|split=train:" + std::to_string(seed);
  val.provenance = dataset.provenance + "|split=val:" + std::to_string(seed);
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).scenes.push_back(dataset.scenes[i]);
  return {std::move(train), std::move(val)};
}

// --- external labels -------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  while (true) {
    const auto comma = line.find(',');
    std::string_view cell = line.substr(0, comma);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return cells;
}

template <typename T>
T parse_cell(std::string_view cell, const std::string& ctx, const char* column) {
  T out{};
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    fail(ErrorKind::parse, ctx + ": column '" + column + "' is not a valid number: '" + std::string(cell) + "'");
  return out;
}

}  // namespace

Dataset ingest_labels_text(std::string_view text, const std::string& source, int format_version) {
  if (format_version != kLabelFormatVersion)
    fail(ErrorKind::version, "unsupported label format version " + std::to_string(format_version));
  const auto lines = split_lines(text);
  if (lines.empty()) fail(ErrorKind::input, source + ": empty label file");
  static const std::vector<std::string_view> kHeader{"frame_id", "cx", "cy", "w", "h", "distance_m", "role"};
  if (split_csv(lines[0]) != kHeader)
    fail(ErrorKind::parse, source + ":1: header must be 'frame_id,cx,cy,w,h,distance_m,role'");

  std::map<std::uint64_t, std::size_t> frame_slot;
  Dataset ds;
  ds.provenance = "ingested:" + source;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = source + ":" + std::to_string(i + 1);
    const auto cells = split_csv(lines[i]);
    if (cells.size() != 7)
      fail(ErrorKind::parse, ctx + ": expected 7 columns, found " + std::to_string(cells.size()));
    const auto frame = parse_cell<std::uint64_t>(cells[0], ctx, "frame_id");
    BBox box{parse_cell<double>(cells[1], ctx, "cx"), parse_cell<double>(cells[2], ctx, "cy"),
             parse_cell<double>(cells[3], ctx, "w"), parse_cell<double>(cells[4], ctx, "h")};
    const double distance = parse_cell<double>(cells[5], ctx, "distance_m");
    if (!(box.w > 0.0 && box.h > 0.0) || !std::isfinite(box.cx) || !std::isfinite(box.cy))
      fail(ErrorKind::parse, ctx + ": box must be finite with positive width and height");
    if (!(distance > 0.0) || !std::isfinite(distance))
      fail(ErrorKind::parse, ctx + ": distance_m must be positive");
    RenderedObject o;
    if (cells[6] == "reference") {
      o.role = Role::reference;
      o.known_distance_m = distance;
    } else if (cells[6] == "target") {
      o.role = Role::target;
      o.label_distance_m = distance;
    } else {
      fail(ErrorKind::parse, ctx + ": role must be 'reference' or 'target', got '" + std::string(cells[6]) + "'");
    }
    o.bbox = box;
    o.appearance = sim::geometry_appearance(box);
    auto [it, fresh] = frame_slot.emplace(frame, ds.scenes.size());
    if (fresh) {
      Scene s;
      s.scene_id = frame;
      ds.scenes.push_back(std::move(s));
    }
    Scene& scene = ds.scenes[it->second];
    o.id = static_cast<int>(scene.objects.size());
    scene.objects.push_back(std::move(o));
  }
  if (ds.scenes.empty()) fail(ErrorKind::input, source + ": label file holds no rows");
  std::erase_if(ds.scenes, [](const Scene& s) { return s.target_count() == 0; });
  if (ds.scenes.empty()) fail(ErrorKind::input, source + ": no frame contains a target");
  return ds;
}

Dataset ingest_labels(const std::string& path, int format_version) {
  if (format_version != kLabelFormatVersion)
    fail(ErrorKind::version, "unsupported label format version " + std::to_string(format_version));
  return ingest_labels_text(io::read_file(path), path, format_version);
}

std::string labels_to_csv(const Dataset& dataset) {
  std::ostringstream os;
  os << "frame_id,cx,cy,w,h,distance_m,role\n";
  for (const auto& s : dataset.scenes)
    for (const auto& o : s.objects)
      os << s.scene_id << ',' << format_double(o.bbox.cx) << ',' << format_double(o.bbox.cy) << ','
         << format_double(o.bbox.w) << ',' << format_double(o.bbox.h) << ',' << format_double(o.distance()) << ','
         << to_string(o.role) << '\n';
  return os.str();
}

}  // namespace r4d::data
