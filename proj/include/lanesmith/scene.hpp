#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lanesmith/geometry.hpp"

namespace lanesmith {

inline constexpr int kLanePoints = 20;
inline constexpr double kFovHalfExtent = 32.0;  // 64 m x 64 m field of view
inline constexpr int kMaxLanes = 100;

enum class ObjectClass { kEgo = 0, kVehicle, kPedestrian, kCyclist, kStatic };
enum class LaneType { kCenterline = 0, kGreenLight, kRedLight };
enum class ConditionLabel { kCompat = 0, kIncompat };

inline constexpr int kNumObjectClasses = 5;
inline constexpr int kNumLaneTypes = 3;

const char* to_string(ObjectClass c);
const char* to_string(LaneType t);
ObjectClass object_class_from_string(const std::string& s);
LaneType lane_type_from_string(const std::string& s);

struct Object {
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  double cos_h = 1.0;
  double sin_h = 0.0;
  double length = 4.5;
  double width = 2.0;
  ObjectClass cls = ObjectClass::kVehicle;

  double heading() const { return std::atan2(sin_h, cos_h); }
  Vec2 position() const { return {x, y}; }
  Obb box() const { return Obb{{x, y}, {cos_h, sin_h}, length / 2.0, width / 2.0}; }
};

struct Lane {
  Polyline points;  // exactly kLanePoints entries
  LaneType type = LaneType::kCenterline;

  double min_x() const;
  double min_y() const;
  double max_x() const;
  double max_y() const;
  double arclength() const { return polyline_length(points); }
};

// Lane connectivity. Only successor and left edges are stored; predecessor
// and right are their transposes by construction, which keeps the four
// matrices consistent at all times.
struct Adjacency {
  std::vector<std::pair<int, int>> successor;  // (i, j): j follows i
  std::vector<std::pair<int, int>> left;       // (i, j): j is i's left neighbor

  void add_successor(int i, int j);
  void add_left(int i, int j);
  bool has_successor(int i, int j) const;
  bool has_left(int i, int j) const;
  std::vector<int> successors_of(int i) const;
  std::vector<int> predecessors_of(int i) const;
  void sort_unique();

  // Remaps lane indices; entries mapping to -1 are dropped.
  Adjacency remapped(const std::vector<int>& new_index) const;
  // perm[k] = old index placed at position k.
  Adjacency permuted(const std::vector<int>& perm, int n_lanes) const;

  void validate(int n_lanes) const;
};

// The partition halves: F_N is behind the ego (x <= 0), F_P ahead (x > 0).
enum class SceneRegion { kFN = 0, kFP = 1 };

SceneRegion lane_region(const Lane& lane, double tol = 1e-9);
SceneRegion object_region(const Object& obj);

struct Scene {
  std::vector<Lane> lanes;
  std::vector<Object> objects;
  Adjacency adjacency;
  bool partitioned = false;
  ConditionLabel condition = ConditionLabel::kCompat;
  // Permutations assigning element k its source index; empty means unset
  // (canonical scenes carry the identity).
  std::vector<int> lane_order;
  std::vector<int> object_order;
  // Set when merging collapsed a pure degree-2 cycle into a loop lane.
  bool merged_loop = false;

  int num_lanes() const { return static_cast<int>(lanes.size()); }
  int num_objects() const { return static_cast<int>(objects.size()); }
  int ego_index() const;  // -1 when absent
};

struct ValidateOptions {
  bool require_ego = true;
  bool check_fov = true;
  int max_objects = 61;
};

// Throws std::runtime_error describing the first violated invariant.
void validate_scene(const Scene& scene, const ValidateOptions& opts = {});

}  // namespace lanesmith
