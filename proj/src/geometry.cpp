#include "lanesmith/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace lanesmith {

double polyline_length(const Polyline& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

Polyline resample_polyline(const Polyline& pts, int n) {
  if (pts.size() < 2) throw std::invalid_argument("resample_polyline: need >= 2 points");
  if (n < 2) throw std::invalid_argument("resample_polyline: need n >= 2");

  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i)
    cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = cum.back();
  if (total <= 0.0) throw std::invalid_argument("resample_polyline: zero-length polyline");

  Polyline out(static_cast<std::size_t>(n));
  out.front() = pts.front();
  out.back() = pts.back();
  std::size_t seg = 0;
  for (int k = 1; k + 1 < n; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(n - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out[static_cast<std::size_t>(k)] = pts[seg] + (pts[seg + 1] - pts[seg]) * t;
  }
  return out;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  if (t_out) *t_out = t;
  return (p - (a + ab * t)).norm();
}

PolylineHit closest_on_polyline(const Polyline& pts, Vec2 p) {
  PolylineHit best;
  best.distance = std::numeric_limits<double>::infinity();
  double cum = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double seg_len = (pts[i + 1] - pts[i]).norm();
    double t = 0.0;
    const double d = point_segment_distance(p, pts[i], pts[i + 1], &t);
    if (d < best.distance) {
      best.distance = d;
      best.arclength = cum + t * seg_len;
      best.closest = pts[i] + (pts[i + 1] - pts[i]) * t;
      Vec2 tan = pts[i + 1] - pts[i];
      const double n = tan.norm();
      best.tangent = n > 0.0 ? tan * (1.0 / n) : Vec2{1.0, 0.0};
    }
    cum += seg_len;
  }
  return best;
}

namespace {

bool inside_box(Vec2 p, double he, double tol = 1e-12) {
  return p.x >= -he - tol && p.x <= he + tol && p.y >= -he - tol && p.y <= he + tol;
}

// Liang-Barsky clip of segment a->b against [-he,he]^2. Returns entry/exit
// parameters when a non-empty intersection exists.
bool clip_segment(Vec2 a, Vec2 b, double he, double& t0, double& t1) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  t0 = 0.0;
  t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x + he, he - a.x, a.y + he, he - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return false;
      if (r > t0) t0 = r;
    } else {
      if (r < t0) return false;
      if (r < t1) t1 = r;
    }
  }
  return t0 <= t1;
}

}  // namespace

std::vector<Polyline> clip_polyline_to_box(const Polyline& pts, double half_extent) {
  std::vector<Polyline> pieces;
  Polyline current;
  auto flush = [&]() {
    if (current.size() >= 2 && polyline_length(current) > 1e-9) pieces.push_back(current);
    current.clear();
  };
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double t0 = 0.0, t1 = 0.0;
    if (!clip_segment(pts[i], pts[i + 1], half_extent, t0, t1)) {
      flush();
      continue;
    }
    const Vec2 d = pts[i + 1] - pts[i];
    Vec2 p0 = pts[i] + d * t0;
    Vec2 p1 = pts[i] + d * t1;
    if (current.empty()) {
      current.push_back(p0);
    } else if ((current.back() - p0).norm() > 1e-9) {
      // The segment re-enters the box at a different point.
      flush();
      current.push_back(p0);
    }
    current.push_back(p1);
    if (t1 < 1.0) flush();  // exits the box
  }
  flush();
  (void)inside_box;
  return pieces;
}

double hausdorff_distance(const Polyline& a, const Polyline& b) {
  auto directed = [](const Polyline& from, const Polyline& to) {
    double worst = 0.0;
    for (const Vec2& p : from) worst = std::max(worst, closest_on_polyline(to, p).distance);
    return worst;
  };
  if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
  if (a.size() < 2 || b.size() < 2) {
    double worst = 0.0;
    for (const Vec2& p : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec2& q : b) best = std::min(best, (p - q).norm());
      worst = std::max(worst, best);
    }
    return worst;
  }
  return std::max(directed(a, b), directed(b, a));
}

std::vector<Vec2> Obb::corners() const {
  const Vec2 u = axis;
  const Vec2 v{-axis.y, axis.x};
  const Vec2 l = u * half_length;
  const Vec2 w = v * half_width;
  return {center + l + w, center + l - w, center - l - w, center - l + w};
}

bool Obb::contains(Vec2 p) const {
  const Vec2 d = p - center;
  const Vec2 v{-axis.y, axis.x};
  return std::abs(d.dot(axis)) <= half_length && std::abs(d.dot(v)) <= half_width;
}

bool obb_overlap(const Obb& a, const Obb& b) {
  const Vec2 axes[4] = {a.axis, {-a.axis.y, a.axis.x}, b.axis, {-b.axis.y, b.axis.x}};
  const auto ca = a.corners();
  const auto cb = b.corners();
  for (const Vec2& ax : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const Vec2& p : ca) {
      const double v = p.dot(ax);
      amin = std::min(amin, v);
      amax = std::max(amax, v);
    }
    for (const Vec2& p : cb) {
      const double v = p.dot(ax);
      bmin = std::min(bmin, v);
      bmax = std::max(bmax, v);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

}  // namespace lanesmith
