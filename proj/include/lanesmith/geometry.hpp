#pragma once

#include <cmath>
#include <optional>
#include <vector>

namespace lanesmith {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

// Planar rigid transform (rotation + translation), stored as cos/sin to
// avoid repeated trig.
struct SE2 {
  double x = 0.0;
  double y = 0.0;
  double c = 1.0;
  double s = 0.0;

  static SE2 from_angle(double x, double y, double theta) {
    return {x, y, std::cos(theta), std::sin(theta)};
  }
  double angle() const { return std::atan2(s, c); }

  Vec2 apply(Vec2 p) const { return {c * p.x - s * p.y + x, s * p.x + c * p.y + y}; }
  Vec2 rotate(Vec2 p) const { return {c * p.x - s * p.y, s * p.x + c * p.y}; }

  SE2 inverse() const {
    // R^T and -R^T t
    return {-(c * x + s * y), -(-s * x + c * y), c, -s};
  }

  SE2 compose(const SE2& o) const {
    // this ∘ o: apply o first, then this.
    return {c * o.x - s * o.y + x, s * o.x + c * o.y + y,
            c * o.c - s * o.s, s * o.c + c * o.s};
  }
};

inline double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

using Polyline = std::vector<Vec2>;

double polyline_length(const Polyline& pts);

// n points equally spaced by arc length; endpoints preserved exactly.
// Throws std::invalid_argument for fewer than 2 input points or zero length.
Polyline resample_polyline(const Polyline& pts, int n);

// Distance from p to the segment [a, b] and the parameter t in [0,1] of the
// closest point.
double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out = nullptr);

struct PolylineHit {
  double distance = 0.0;
  double arclength = 0.0;  // along the polyline to the closest point
  Vec2 closest;
  Vec2 tangent;  // unit tangent of the closest segment
};
PolylineHit closest_on_polyline(const Polyline& pts, Vec2 p);

// Clip a polyline against the axis-aligned box [-he, he]^2. Returns the
// maximal in-box pieces in traversal order; crossing points are inserted
// exactly on the boundary.
std::vector<Polyline> clip_polyline_to_box(const Polyline& pts, double half_extent);

// Directed Hausdorff and symmetric Hausdorff between point sets sampled from
// polylines (point-to-polyline distances, not point-to-point).
double hausdorff_distance(const Polyline& a, const Polyline& b);

// Oriented rectangle used for collision tests.
struct Obb {
  Vec2 center;
  Vec2 axis;  // unit heading
  double half_length = 0.0;
  double half_width = 0.0;

  std::vector<Vec2> corners() const;
  bool contains(Vec2 p) const;
};

// Separating-axis overlap test for two oriented rectangles.
bool obb_overlap(const Obb& a, const Obb& b);

}  // namespace lanesmith
