#include "lanesmith/scene_json.hpp"

#include "lanesmith/scene_ops.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace lanesmith {

using nlohmann::json;

json scene_to_json(const Scene& scene) {
  json j;
  j["version"] = 1;
  j["partitioned"] = scene.partitioned;
  j["condition"] = scene.condition == ConditionLabel::kCompat ? "compat" : "incompat";
  json lanes = json::array();
  for (const Lane& lane : scene.lanes) {
    json pts = json::array();
    for (const Vec2& p : lane.points) pts.push_back({p.x, p.y});
    lanes.push_back({{"points", pts}, {"type", to_string(lane.type)}});
  }
  j["lanes"] = std::move(lanes);
  json succ = json::array();
  for (auto [a, b] : scene.adjacency.successor) succ.push_back({a, b});
  json left = json::array();
  for (auto [a, b] : scene.adjacency.left) left.push_back({a, b});
  j["adjacency"] = {{"successor", std::move(succ)}, {"left", std::move(left)}};
  json objects = json::array();
  for (const Object& o : scene.objects) {
    objects.push_back({{"x", o.x},
                       {"y", o.y},
                       {"speed", o.speed},
                       {"cos", o.cos_h},
                       {"sin", o.sin_h},
                       {"length", o.length},
                       {"width", o.width},
                       {"class", to_string(o.cls)}});
  }
  j["objects"] = std::move(objects);
  return j;
}

namespace {

[[noreturn]] void malformed(const std::string& why) {
  throw std::runtime_error("scene json: " + why);
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) malformed("unknown key '" + it.key() + "' in " + where);
}

std::vector<std::pair<int, int>> parse_edges(const json& j, int n_lanes,
                                             const std::string& name) {
  std::vector<std::pair<int, int>> out;
  if (!j.is_array()) malformed(name + " must be an array");
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
        !e[1].is_number_integer())
      malformed(name + " entries must be [i, j]");
    const int a = e[0].get<int>();
    const int b = e[1].get<int>();
    if (a < 0 || b < 0 || a >= n_lanes || b >= n_lanes)
      malformed(name + " index out of range");
    if (a == b) malformed(name + " self loop");
    out.emplace_back(a, b);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Scene scene_from_json(const json& j) {
  if (!j.is_object()) malformed("root must be an object");
  reject_unknown_keys(
      j, {"version", "partitioned", "condition", "lanes", "adjacency", "objects"},
      "root");
  if (!j.contains("version") || j["version"] != 1) malformed("unsupported version");

  Scene scene;
  scene.partitioned = j.value("partitioned", false);
  const std::string cond = j.value("condition", "compat");
  if (cond == "compat")
    scene.condition = ConditionLabel::kCompat;
  else if (cond == "incompat")
    scene.condition = ConditionLabel::kIncompat;
  else
    malformed("condition must be compat or incompat");

  if (!j.contains("lanes") || !j["lanes"].is_array()) malformed("lanes missing");
  for (const auto& lj : j["lanes"]) {
    reject_unknown_keys(lj, {"points", "type"}, "lane");
    if (!lj.contains("points") || !lj["points"].is_array() ||
        lj["points"].size() != static_cast<std::size_t>(kLanePoints))
      malformed("each lane needs exactly 20 points");
    Lane lane;
    lane.points.reserve(kLanePoints);
    for (const auto& pj : lj["points"]) {
      if (!pj.is_array() || pj.size() != 2) malformed("lane point must be [x, y]");
      lane.points.push_back({pj[0].get<double>(), pj[1].get<double>()});
    }
    lane.type = lane_type_from_string(lj.value("type", "center"));
    scene.lanes.push_back(std::move(lane));
  }

  const int n = scene.num_lanes();
  if (j.contains("adjacency")) {
    const json& a = j["adjacency"];
    reject_unknown_keys(a, {"successor", "left", "predecessor", "right"}, "adjacency");
    if (a.contains("successor"))
      scene.adjacency.successor = parse_edges(a["successor"], n, "successor");
    if (a.contains("left")) scene.adjacency.left = parse_edges(a["left"], n, "left");
    // implied matrices may be present but must be exact transposes
    if (a.contains("predecessor")) {
      auto pred = parse_edges(a["predecessor"], n, "predecessor");
      std::vector<std::pair<int, int>> expect;
      for (auto [x, y] : scene.adjacency.successor) expect.emplace_back(y, x);
      std::sort(expect.begin(), expect.end());
      if (pred != expect) malformed("predecessor is not the transpose of successor");
    }
    if (a.contains("right")) {
      auto right = parse_edges(a["right"], n, "right");
      std::vector<std::pair<int, int>> expect;
      for (auto [x, y] : scene.adjacency.left) expect.emplace_back(y, x);
      std::sort(expect.begin(), expect.end());
      if (right != expect) malformed("right is not the transpose of left");
    }
  }

  if (j.contains("objects")) {
    if (!j["objects"].is_array()) malformed("objects must be an array");
    for (const auto& oj : j["objects"]) {
      reject_unknown_keys(
          oj, {"x", "y", "speed", "cos", "sin", "length", "width", "class"}, "object");
      Object o;
      o.x = oj.at("x").get<double>();
      o.y = oj.at("y").get<double>();
      o.speed = oj.at("speed").get<double>();
      o.cos_h = oj.at("cos").get<double>();
      o.sin_h = oj.at("sin").get<double>();
      o.length = oj.at("length").get<double>();
      o.width = oj.at("width").get<double>();
      o.cls = object_class_from_string(oj.at("class").get<std::string>());
      scene.objects.push_back(o);
    }
  }
  return scene;
}

void write_scene_file(const Scene& scene, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << scene_to_json(scene).dump();
  os << "\n";
}

Scene read_scene_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("scene json: parse error in " + path + ": " + e.what());
  }
  return scene_from_json(j);
}

json feature_stats_to_json(const FeatureStats& s) {
  auto r = [](const FieldRange& f) { return json::array({f.min, f.max}); };
  return {{"lane_x", r(s.lane_x)}, {"lane_y", r(s.lane_y)}, {"obj_x", r(s.obj_x)},
          {"obj_y", r(s.obj_y)},   {"speed", r(s.speed)},   {"cos_h", r(s.cos_h)},
          {"sin_h", r(s.sin_h)},   {"length", r(s.length)}, {"width", r(s.width)}};
}

FeatureStats feature_stats_from_json(const json& j) {
  auto r = [&](const char* key) {
    return FieldRange{j.at(key)[0].get<double>(), j.at(key)[1].get<double>()};
  };
  FeatureStats s;
  s.lane_x = r("lane_x");
  s.lane_y = r("lane_y");
  s.obj_x = r("obj_x");
  s.obj_y = r("obj_y");
  s.speed = r("speed");
  s.cos_h = r("cos_h");
  s.sin_h = r("sin_h");
  s.length = r("length");
  s.width = r("width");
  return s;
}

}  // namespace lanesmith
