#include "lanesmith/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lanesmith {

const char* to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::kEgo: return "ego";
    case ObjectClass::kVehicle: return "vehicle";
    case ObjectClass::kPedestrian: return "pedestrian";
    case ObjectClass::kCyclist: return "cyclist";
    case ObjectClass::kStatic: return "static";
  }
  return "vehicle";
}

const char* to_string(LaneType t) {
  switch (t) {
    case LaneType::kCenterline: return "center";
    case LaneType::kGreenLight: return "green";
    case LaneType::kRedLight: return "red";
  }
  return "center";
}

ObjectClass object_class_from_string(const std::string& s) {
  if (s == "ego") return ObjectClass::kEgo;
  if (s == "vehicle") return ObjectClass::kVehicle;
  if (s == "pedestrian") return ObjectClass::kPedestrian;
  if (s == "cyclist") return ObjectClass::kCyclist;
  if (s == "static") return ObjectClass::kStatic;
  throw std::runtime_error("unknown object class: " + s);
}

LaneType lane_type_from_string(const std::string& s) {
  if (s == "center") return LaneType::kCenterline;
  if (s == "green") return LaneType::kGreenLight;
  if (s == "red") return LaneType::kRedLight;
  throw std::runtime_error("unknown lane type: " + s);
}

double Lane::min_x() const {
  double m = points[0].x;
  for (const Vec2& p : points) m = std::min(m, p.x);
  return m;
}
double Lane::min_y() const {
  double m = points[0].y;
  for (const Vec2& p : points) m = std::min(m, p.y);
  return m;
}
double Lane::max_x() const {
  double m = points[0].x;
  for (const Vec2& p : points) m = std::max(m, p.x);
  return m;
}
double Lane::max_y() const {
  double m = points[0].y;
  for (const Vec2& p : points) m = std::max(m, p.y);
  return m;
}

void Adjacency::add_successor(int i, int j) {
  if (i == j) throw std::invalid_argument("adjacency: self loop");
  successor.emplace_back(i, j);
}

void Adjacency::add_left(int i, int j) {
  if (i == j) throw std::invalid_argument("adjacency: self loop");
  left.emplace_back(i, j);
}

bool Adjacency::has_successor(int i, int j) const {
  return std::find(successor.begin(), successor.end(), std::make_pair(i, j)) !=
         successor.end();
}

bool Adjacency::has_left(int i, int j) const {
  return std::find(left.begin(), left.end(), std::make_pair(i, j)) != left.end();
}

std::vector<int> Adjacency::successors_of(int i) const {
  std::vector<int> out;
  for (auto [a, b] : successor)
    if (a == i) out.push_back(b);
  return out;
}

std::vector<int> Adjacency::predecessors_of(int i) const {
  std::vector<int> out;
  for (auto [a, b] : successor)
    if (b == i) out.push_back(a);
  return out;
}

void Adjacency::sort_unique() {
  std::sort(successor.begin(), successor.end());
  successor.erase(std::unique(successor.begin(), successor.end()), successor.end());
  std::sort(left.begin(), left.end());
  left.erase(std::unique(left.begin(), left.end()), left.end());
}

Adjacency Adjacency::remapped(const std::vector<int>& new_index) const {
  Adjacency out;
  auto map_edges = [&](const std::vector<std::pair<int, int>>& in,
                       std::vector<std::pair<int, int>>& dst) {
    for (auto [a, b] : in) {
      const int na = new_index[a];
      const int nb = new_index[b];
      if (na >= 0 && nb >= 0 && na != nb) dst.emplace_back(na, nb);
    }
  };
  map_edges(successor, out.successor);
  map_edges(left, out.left);
  out.sort_unique();
  return out;
}

Adjacency Adjacency::permuted(const std::vector<int>& perm, int n_lanes) const {
  // perm[k] = old index at new position k; build old->new.
  std::vector<int> inv(n_lanes, -1);
  for (int k = 0; k < static_cast<int>(perm.size()); ++k) inv[perm[k]] = k;
  return remapped(inv);
}

void Adjacency::validate(int n_lanes) const {
  for (auto [a, b] : successor) {
    if (a < 0 || b < 0 || a >= n_lanes || b >= n_lanes)
      throw std::runtime_error("adjacency: successor index out of range");
    if (a == b) throw std::runtime_error("adjacency: successor self loop");
  }
  for (auto [a, b] : left) {
    if (a < 0 || b < 0 || a >= n_lanes || b >= n_lanes)
      throw std::runtime_error("adjacency: left index out of range");
    if (a == b) throw std::runtime_error("adjacency: left self loop");
  }
}

SceneRegion lane_region(const Lane& lane, double tol) {
  return lane.min_x() < -tol ? SceneRegion::kFN : SceneRegion::kFP;
}

SceneRegion object_region(const Object& obj) {
  return obj.x > 0.0 ? SceneRegion::kFP : SceneRegion::kFN;
}

int Scene::ego_index() const {
  for (int i = 0; i < num_objects(); ++i)
    if (objects[i].cls == ObjectClass::kEgo) return i;
  return -1;
}

void validate_scene(const Scene& scene, const ValidateOptions& opts) {
  if (scene.num_lanes() > kMaxLanes) throw std::runtime_error("scene: too many lanes");
  if (scene.num_objects() > opts.max_objects)
    throw std::runtime_error("scene: too many objects");
  for (const Lane& lane : scene.lanes) {
    if (static_cast<int>(lane.points.size()) != kLanePoints)
      throw std::runtime_error("scene: lane must have 20 points");
    if (lane.arclength() <= 0.0) throw std::runtime_error("scene: degenerate lane");
    for (const Vec2& p : lane.points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw std::runtime_error("scene: non-finite lane point");
  }
  int n_ego = 0;
  for (const Object& o : scene.objects) {
    if (o.cls == ObjectClass::kEgo) ++n_ego;
    const double hn = o.cos_h * o.cos_h + o.sin_h * o.sin_h;
    if (std::abs(hn - 1.0) > 1e-6)
      throw std::runtime_error("scene: heading not unit norm");
    if (o.speed < 0.0) throw std::runtime_error("scene: negative speed");
    if (o.length <= 0.0 || o.width <= 0.0)
      throw std::runtime_error("scene: non-positive box size");
    if (opts.check_fov &&
        (std::abs(o.x) > kFovHalfExtent + 1e-9 || std::abs(o.y) > kFovHalfExtent + 1e-9))
      throw std::runtime_error("scene: object outside FOV");
    if (!std::isfinite(o.x) || !std::isfinite(o.y) || !std::isfinite(o.speed))
      throw std::runtime_error("scene: non-finite object state");
  }
  if (opts.require_ego && n_ego != 1)
    throw std::runtime_error("scene: expected exactly one ego");
  scene.adjacency.validate(scene.num_lanes());
  // left/right are stored as a single list, so the transposition invariant is
  // structural; successor/predecessor likewise.
  if (scene.partitioned) {
    for (const Lane& lane : scene.lanes) {
      const bool in_fn = lane.max_x() <= 1e-9;
      const bool in_fp = lane.min_x() >= -1e-9;
      if (!in_fn && !in_fp)
        throw std::runtime_error("scene: partitioned lane crosses x=0");
    }
  }
  if (!scene.lane_order.empty()) {
    std::vector<int> seen(scene.num_lanes(), 0);
    if (static_cast<int>(scene.lane_order.size()) != scene.num_lanes())
      throw std::runtime_error("scene: lane ordering size mismatch");
    for (int v : scene.lane_order) {
      if (v < 0 || v >= scene.num_lanes() || seen[v]++)
        throw std::runtime_error("scene: lane ordering not a permutation");
    }
  }
  if (!scene.object_order.empty()) {
    std::vector<int> seen(scene.num_objects(), 0);
    if (static_cast<int>(scene.object_order.size()) != scene.num_objects())
      throw std::runtime_error("scene: object ordering size mismatch");
    for (int v : scene.object_order) {
      if (v < 0 || v >= scene.num_objects() || seen[v]++)
        throw std::runtime_error("scene: object ordering not a permutation");
    }
  }
}

}  // namespace lanesmith
