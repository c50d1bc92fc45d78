#pragma once

#include <string>

#include "lanesmith/scene.hpp"

namespace lanesmith {

struct RenderOptions {
  double margin = 4.0;      // meters around the content bounding box
  double pixels_per_meter = 8.0;
  const Polyline* route = nullptr;  // optional overlay
};

// Lanes in black, ego in red, vehicles in blue, pedestrians in purple,
// cyclists in teal, static objects in gray.
std::string scene_to_svg(const Scene& scene, const RenderOptions& opts = {});
void write_scene_svg(const Scene& scene, const std::string& path,
                     const RenderOptions& opts = {});

}  // namespace lanesmith
