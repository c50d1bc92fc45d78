#include "lanesmith/render.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace lanesmith {

namespace {

const char* fill_for(ObjectClass c) {
  switch (c) {
    case ObjectClass::kEgo: return "#d62728";
    case ObjectClass::kVehicle: return "#1f77b4";
    case ObjectClass::kPedestrian: return "#9467bd";
    case ObjectClass::kCyclist: return "#2ca02c";
    case ObjectClass::kStatic: return "#7f7f7f";
  }
  return "#1f77b4";
}

}  // namespace

std::string scene_to_svg(const Scene& scene, const RenderOptions& opts) {
  double min_x = -kFovHalfExtent, max_x = kFovHalfExtent;
  double min_y = -kFovHalfExtent, max_y = kFovHalfExtent;
  for (const Lane& lane : scene.lanes) {
    min_x = std::min(min_x, lane.min_x());
    max_x = std::max(max_x, lane.max_x());
    min_y = std::min(min_y, lane.min_y());
    max_y = std::max(max_y, lane.max_y());
  }
  min_x -= opts.margin;
  min_y -= opts.margin;
  max_x += opts.margin;
  max_y += opts.margin;
  const double ppm = opts.pixels_per_meter;
  const double width = (max_x - min_x) * ppm;
  const double height = (max_y - min_y) * ppm;
  // svg y grows downward; flip so +y is up
  auto px = [&](Vec2 p) {
    return std::make_pair((p.x - min_x) * ppm, (max_y - p.y) * ppm);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (const Lane& lane : scene.lanes) {
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
    for (const Vec2& p : lane.points) {
      auto [x, y] = px(p);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  if (opts.route && opts.route->size() >= 2) {
    os << "<polyline fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2.5\" "
          "stroke-dasharray=\"6,4\" points=\"";
    for (const Vec2& p : *opts.route) {
      auto [x, y] = px(p);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  for (const Object& o : scene.objects) {
    os << "<polygon fill=\"" << fill_for(o.cls) << "\" fill-opacity=\"0.85\" points=\"";
    for (const Vec2& c : o.box().corners()) {
      auto [x, y] = px(c);
      os << x << "," << y << " ";
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_scene_svg(const Scene& scene, const std::string& path,
                     const RenderOptions& opts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open svg output: " + path);
  os << scene_to_svg(scene, opts);
}

}  // namespace lanesmith
