#include "lanesmith/scene_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lanesmith/logging.hpp"

namespace lanesmith {

namespace {

constexpr double kTouchTol = 1e-6;

Lane make_lane(Polyline pts, LaneType type) {
  Lane lane;
  lane.points = resample_polyline(pts, kLanePoints);
  lane.type = type;
  return lane;
}

}  // namespace

CropResult crop_fov(const Scene& scene, const SE2& center, double half_extent) {
  if (half_extent <= 0.0) throw std::invalid_argument("crop_fov: half_extent must be > 0");
  const SE2 inv = center.inverse();

  CropResult out;
  out.scene.partitioned = false;
  out.scene.condition = scene.condition;

  // Per input lane: indices of its pieces, and which piece carries the
  // original start / end (for reattaching successor edges).
  const int n = scene.num_lanes();
  std::vector<int> start_piece(n, -1), end_piece(n, -1);
  std::vector<int> piece_count(n, 0);
  std::vector<int> single_piece(n, -1);

  for (int i = 0; i < n; ++i) {
    Polyline local(scene.lanes[i].points.size());
    for (std::size_t k = 0; k < local.size(); ++k)
      local[k] = inv.apply(scene.lanes[i].points[k]);
    const auto pieces = clip_polyline_to_box(local, half_extent);
    for (const Polyline& piece : pieces) {
      const int idx = out.scene.num_lanes();
      out.scene.lanes.push_back(make_lane(piece, scene.lanes[i].type));
      out.lane_source.push_back(i);
      ++piece_count[i];
      single_piece[i] = idx;
      if ((piece.front() - local.front()).norm() < kTouchTol) start_piece[i] = idx;
      if ((piece.back() - local.back()).norm() < kTouchTol) end_piece[i] = idx;
    }
  }
  if (out.scene.lanes.empty())
    throw std::runtime_error("crop_fov: no lanes inside the field of view");

  for (auto [a, b] : scene.adjacency.successor)
    if (end_piece[a] >= 0 && start_piece[b] >= 0)
      out.scene.adjacency.add_successor(end_piece[a], start_piece[b]);
  for (auto [a, b] : scene.adjacency.left)
    if (piece_count[a] == 1 && piece_count[b] == 1)
      out.scene.adjacency.add_left(single_piece[a], single_piece[b]);
  out.scene.adjacency.sort_unique();

  for (int i = 0; i < scene.num_objects(); ++i) {
    Object o = scene.objects[i];
    const Vec2 p = inv.apply({o.x, o.y});
    if (std::abs(p.x) > half_extent || std::abs(p.y) > half_extent) continue;
    const Vec2 h = inv.rotate({o.cos_h, o.sin_h});
    o.x = p.x;
    o.y = p.y;
    o.cos_h = h.x;
    o.sin_h = h.y;
    out.scene.objects.push_back(o);
    out.object_source.push_back(i);
  }
  return out;
}

Scene merge_degree2_lanes(const Scene& scene) {
  Scene cur = scene;
  cur.lane_order.clear();
  cur.object_order.clear();
  bool merged = true;
  while (merged) {
    merged = false;
    const int n = cur.num_lanes();
    for (int i = 0; i < n && !merged; ++i) {
      const auto succs = cur.adjacency.successors_of(i);
      if (succs.size() != 1) continue;
      const int j = succs[0];
      if (j == i) continue;
      if (cur.adjacency.predecessors_of(j).size() != 1) continue;
      if (cur.lanes[i].type != cur.lanes[j].type) continue;

      // concatenate i then j, dropping the duplicated junction point
      Polyline pts = cur.lanes[i].points;
      const Polyline& q = cur.lanes[j].points;
      std::size_t from = (pts.back() - q.front()).norm() < kTouchTol ? 1 : 0;
      pts.insert(pts.end(), q.begin() + from, q.end());

      Scene next;
      next.partitioned = cur.partitioned;
      next.condition = cur.condition;
      next.merged_loop = cur.merged_loop;
      next.objects = cur.objects;

      std::vector<int> remap(n, -1);
      for (int k = 0; k < n; ++k) {
        if (k == j) continue;
        if (k == i) {
          remap[k] = next.num_lanes();
          next.lanes.push_back(make_lane(pts, cur.lanes[i].type));
        } else {
          remap[k] = next.num_lanes();
          next.lanes.push_back(cur.lanes[k]);
        }
      }
      remap[j] = remap[i];  // j's edges re-attach to the merged lane

      Adjacency adj;
      for (auto [a, b] : cur.adjacency.successor) {
        if (a == i && b == j) continue;  // the merged link disappears
        int na = remap[a], nb = remap[b];
        if (na == nb) {
          // a cycle of degree-2 lanes closed on itself
          next.merged_loop = true;
          continue;
        }
        adj.add_successor(na, nb);
      }
      for (auto [a, b] : cur.adjacency.left) {
        int na = remap[a], nb = remap[b];
        if (na != nb) adj.add_left(na, nb);
      }
      adj.sort_unique();
      next.adjacency = adj;
      cur = std::move(next);
      merged = true;
    }
  }
  return cur;
}

namespace {

// Splits a polyline at every x=0 crossing, inserting exact boundary points.
std::vector<Polyline> split_at_x0(const Polyline& pts, double tol = 1e-9) {
  auto sgn = [tol](double x) { return x > tol ? 1 : (x < -tol ? -1 : 0); };
  std::vector<Polyline> pieces;
  Polyline cur;
  cur.push_back(pts[0]);
  int last_sign = sgn(pts[0].x);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const Vec2 a = pts[k - 1];
    const Vec2 b = pts[k];
    const int sb = sgn(b.x);
    if (last_sign != 0 && sb != 0 && sb != last_sign) {
      // strict crossing within this segment (possibly through on-boundary
      // points handled below when a.x is exactly 0)
      if (sgn(a.x) != 0) {
        const double t = a.x / (a.x - b.x);
        Vec2 p{0.0, a.y + (b.y - a.y) * t};
        cur.push_back(p);
        pieces.push_back(cur);
        cur.clear();
        cur.push_back(p);
      } else {
        // crossing happens exactly at the stored boundary point a
        pieces.push_back(cur);
        cur.clear();
        cur.push_back(a);
      }
    }
    cur.push_back(b);
    if (sb != 0) last_sign = sb;
  }
  pieces.push_back(cur);
  return pieces;
}

}  // namespace

PartitionResult partition_scene(const Scene& scene) {
  if (scene.partitioned) throw std::invalid_argument("partition_scene: already partitioned");
  PartitionResult out;
  out.scene.partitioned = true;
  out.scene.condition = scene.condition;
  out.scene.objects = scene.objects;
  out.scene.merged_loop = scene.merged_loop;

  const int n = scene.num_lanes();
  std::vector<std::vector<int>> pieces_of(n);
  for (int i = 0; i < n; ++i) {
    auto pieces = split_at_x0(scene.lanes[i].points);
    for (Polyline& piece : pieces) {
      if (piece.size() < 2 || polyline_length(piece) <= 1e-9) continue;
      pieces_of[i].push_back(out.scene.num_lanes());
      out.scene.lanes.push_back(make_lane(piece, scene.lanes[i].type));
      out.lane_source.push_back(i);
    }
    // chain the pieces
    for (std::size_t k = 0; k + 1 < pieces_of[i].size(); ++k)
      out.scene.adjacency.add_successor(pieces_of[i][k], pieces_of[i][k + 1]);
  }

  for (auto [a, b] : scene.adjacency.successor)
    if (!pieces_of[a].empty() && !pieces_of[b].empty())
      out.scene.adjacency.add_successor(pieces_of[a].back(), pieces_of[b].front());

  auto side_of = [&](int lane_idx) { return lane_region(out.scene.lanes[lane_idx]); };
  auto unique_on_side = [&](int src, SceneRegion side) -> int {
    int found = -1;
    for (int idx : pieces_of[src]) {
      if (side_of(idx) != side) continue;
      if (found >= 0) return -1;
      found = idx;
    }
    return found;
  };
  for (auto [a, b] : scene.adjacency.left) {
    for (SceneRegion side : {SceneRegion::kFN, SceneRegion::kFP}) {
      const int pa = unique_on_side(a, side);
      const int pb = unique_on_side(b, side);
      if (pa >= 0 && pb >= 0) out.scene.adjacency.add_left(pa, pb);
    }
  }
  out.scene.adjacency.sort_unique();
  return out;
}

namespace {

struct SortKeys {
  double k[4];  // min_x, min_y, max_x, max_y
  int region = 0;
  int orig = 0;
};

// Orders indices [begin, end) of `keys` in place by key level `depth`.
// Values whose consecutive sorted gaps are < epsilon form one cluster that is
// refined by the next key.
void recursive_order(std::vector<int>& idx, std::vector<int>::iterator begin,
                     std::vector<int>::iterator end, const std::vector<SortKeys>& keys,
                     int depth, double epsilon) {
  if (end - begin <= 1) return;
  if (depth == 4) {
    std::sort(begin, end, [&](int a, int b) {
      for (int d = 0; d < 4; ++d)
        if (keys[a].k[d] != keys[b].k[d]) return keys[a].k[d] < keys[b].k[d];
      return keys[a].orig < keys[b].orig;
    });
    return;
  }
  std::stable_sort(begin, end, [&](int a, int b) {
    if (keys[a].k[depth] != keys[b].k[depth]) return keys[a].k[depth] < keys[b].k[depth];
    return keys[a].orig < keys[b].orig;
  });
  auto cluster_begin = begin;
  for (auto it = begin + 1; it != end; ++it) {
    if (keys[*it].k[depth] - keys[*(it - 1)].k[depth] >= epsilon) {
      recursive_order(idx, cluster_begin, it, keys, depth + 1, epsilon);
      cluster_begin = it;
    }
  }
  recursive_order(idx, cluster_begin, end, keys, depth + 1, epsilon);
}

std::vector<int> order_by_keys(std::vector<SortKeys> keys, bool partitioned,
                               double epsilon) {
  std::vector<int> idx(keys.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (partitioned) {
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (keys[a].region != keys[b].region) return keys[a].region < keys[b].region;
      return keys[a].orig < keys[b].orig;
    });
    auto split = std::find_if(idx.begin(), idx.end(),
                              [&](int i) { return keys[i].region == 1; });
    recursive_order(idx, idx.begin(), split, keys, 0, epsilon);
    recursive_order(idx, split, idx.end(), keys, 0, epsilon);
  } else {
    recursive_order(idx, idx.begin(), idx.end(), keys, 0, epsilon);
  }
  return idx;
}

}  // namespace

Ordering order_elements(const Scene& scene, double epsilon) {
  Ordering out;
  std::vector<SortKeys> lane_keys(scene.num_lanes());
  for (int i = 0; i < scene.num_lanes(); ++i) {
    const Lane& l = scene.lanes[i];
    lane_keys[i] = {{l.min_x(), l.min_y(), l.max_x(), l.max_y()},
                    lane_region(l) == SceneRegion::kFP ? 1 : 0, i};
  }
  std::vector<SortKeys> obj_keys(scene.num_objects());
  for (int i = 0; i < scene.num_objects(); ++i) {
    const auto corners = scene.objects[i].box().corners();
    double mnx = corners[0].x, mny = corners[0].y, mxx = corners[0].x, mxy = corners[0].y;
    for (const Vec2& c : corners) {
      mnx = std::min(mnx, c.x);
      mny = std::min(mny, c.y);
      mxx = std::max(mxx, c.x);
      mxy = std::max(mxy, c.y);
    }
    obj_keys[i] = {{mnx, mny, mxx, mxy},
                   object_region(scene.objects[i]) == SceneRegion::kFP ? 1 : 0, i};
  }
  out.lanes = order_by_keys(std::move(lane_keys), scene.partitioned, epsilon);
  out.objects = order_by_keys(std::move(obj_keys), scene.partitioned, epsilon);
  return out;
}

Scene reorder_scene(const Scene& scene, const Ordering& ordering) {
  Scene out;
  out.partitioned = scene.partitioned;
  out.condition = scene.condition;
  out.merged_loop = scene.merged_loop;
  out.lanes.reserve(scene.lanes.size());
  for (int src : ordering.lanes) out.lanes.push_back(scene.lanes[src]);
  out.objects.reserve(scene.objects.size());
  for (int src : ordering.objects) out.objects.push_back(scene.objects[src]);
  out.adjacency = scene.adjacency.permuted(ordering.lanes, scene.num_lanes());
  out.lane_order.resize(out.lanes.size());
  std::iota(out.lane_order.begin(), out.lane_order.end(), 0);
  out.object_order.resize(out.objects.size());
  std::iota(out.object_order.begin(), out.object_order.end(), 0);
  return out;
}

Scene canonicalize_scene(const Scene& scene, double epsilon) {
  return reorder_scene(scene, order_elements(scene, epsilon));
}

FeatureStats compute_feature_stats(const std::vector<Scene>& corpus) {
  const double inf = std::numeric_limits<double>::infinity();
  FeatureStats s;
  for (FieldRange* r : {&s.lane_x, &s.lane_y, &s.obj_x, &s.obj_y, &s.speed, &s.cos_h,
                        &s.sin_h, &s.length, &s.width}) {
    r->min = inf;
    r->max = -inf;
  }
  auto grow = [](FieldRange& r, double v) {
    r.min = std::min(r.min, v);
    r.max = std::max(r.max, v);
  };
  for (const Scene& scene : corpus) {
    for (const Lane& lane : scene.lanes)
      for (const Vec2& p : lane.points) {
        grow(s.lane_x, p.x);
        grow(s.lane_y, p.y);
      }
    for (const Object& o : scene.objects) {
      grow(s.obj_x, o.x);
      grow(s.obj_y, o.y);
      grow(s.speed, o.speed);
      grow(s.cos_h, o.cos_h);
      grow(s.sin_h, o.sin_h);
      grow(s.length, o.length);
      grow(s.width, o.width);
    }
  }
  for (FieldRange* r : {&s.lane_x, &s.lane_y, &s.obj_x, &s.obj_y, &s.speed, &s.cos_h,
                        &s.sin_h, &s.length, &s.width}) {
    if (!(r->min <= r->max)) {
      r->min = 0.0;
      r->max = 0.0;
    }
  }
  return s;
}

double normalize_value(double v, const FieldRange& r, int* clipped) {
  const double span = r.max - r.min;
  if (span < 1e-12) {
    log_warn("normalize: degenerate field range, mapping to 0");
    return 0.0;
  }
  double u = 2.0 * (v - r.min) / span - 1.0;
  if (u < -1.0 || u > 1.0) {
    if (clipped) ++(*clipped);
    u = std::clamp(u, -1.0, 1.0);
  }
  return u;
}

double denormalize_value(double v, const FieldRange& r) {
  const double span = r.max - r.min;
  if (span < 1e-12) return r.min;
  return r.min + (v + 1.0) * 0.5 * span;
}

SceneFeatures normalize_features(const Scene& scene, const FeatureStats& stats) {
  SceneFeatures out;
  out.lanes = tc::Tensor::zeros({scene.num_lanes(), kLaneFeatureDim});
  for (int i = 0; i < scene.num_lanes(); ++i) {
    const Lane& lane = scene.lanes[i];
    for (int k = 0; k < kLanePoints; ++k) {
      out.lanes.at(i, 2 * k) = normalize_value(lane.points[k].x, stats.lane_x, &out.clipped);
      out.lanes.at(i, 2 * k + 1) =
          normalize_value(lane.points[k].y, stats.lane_y, &out.clipped);
    }
    out.lane_types.push_back(static_cast<int>(lane.type));
  }
  out.objects = tc::Tensor::zeros({scene.num_objects(), kObjectFeatureDim});
  for (int i = 0; i < scene.num_objects(); ++i) {
    const Object& o = scene.objects[i];
    out.objects.at(i, 0) = normalize_value(o.x, stats.obj_x, &out.clipped);
    out.objects.at(i, 1) = normalize_value(o.y, stats.obj_y, &out.clipped);
    out.objects.at(i, 2) = normalize_value(o.speed, stats.speed, &out.clipped);
    out.objects.at(i, 3) = normalize_value(o.cos_h, stats.cos_h, &out.clipped);
    out.objects.at(i, 4) = normalize_value(o.sin_h, stats.sin_h, &out.clipped);
    out.objects.at(i, 5) = normalize_value(o.length, stats.length, &out.clipped);
    out.objects.at(i, 6) = normalize_value(o.width, stats.width, &out.clipped);
    out.object_classes.push_back(static_cast<int>(o.cls));
  }
  return out;
}

Lane denormalize_lane(const tc::Tensor& features, int row, int lane_type,
                      const FeatureStats& stats) {
  Lane lane;
  lane.points.resize(kLanePoints);
  for (int k = 0; k < kLanePoints; ++k) {
    lane.points[k].x = denormalize_value(features.at(row, 2 * k), stats.lane_x);
    lane.points[k].y = denormalize_value(features.at(row, 2 * k + 1), stats.lane_y);
  }
  lane.type = static_cast<LaneType>(lane_type);
  return lane;
}

Object denormalize_object(const tc::Tensor& features, int row, int object_class,
                          const FeatureStats& stats) {
  Object o;
  o.x = denormalize_value(features.at(row, 0), stats.obj_x);
  o.y = denormalize_value(features.at(row, 1), stats.obj_y);
  o.speed = std::max(0.0, denormalize_value(features.at(row, 2), stats.speed));
  o.cos_h = denormalize_value(features.at(row, 3), stats.cos_h);
  o.sin_h = denormalize_value(features.at(row, 4), stats.sin_h);
  const double hn = std::hypot(o.cos_h, o.sin_h);
  if (hn > 1e-9) {
    o.cos_h /= hn;
    o.sin_h /= hn;
  } else {
    o.cos_h = 1.0;
    o.sin_h = 0.0;
  }
  o.length = std::max(0.1, denormalize_value(features.at(row, 5), stats.length));
  o.width = std::max(0.1, denormalize_value(features.at(row, 6), stats.width));
  o.cls = static_cast<ObjectClass>(object_class);
  return o;
}

}  // namespace lanesmith
