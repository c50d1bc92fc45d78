#pragma once

#include <string>

#include <json.hpp>

#include "lanesmith/scene.hpp"

namespace lanesmith {

// Scene interchange schema, version 1:
// {
//   "version": 1,
//   "partitioned": bool,
//   "condition": "compat" | "incompat",
//   "lanes": [{"points": [[x, y] x20], "type": "center"|"green"|"red"}, ...],
//   "adjacency": {"successor": [[i, j], ...], "left": [[i, j], ...]},
//   "objects": [{"x", "y", "speed", "cos", "sin", "length", "width", "class"}, ...]
// }
// "predecessor"/"right" keys are accepted only when they equal the transposes
// of successor/left; anything else is rejected as malformed.
nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

void write_scene_file(const Scene& scene, const std::string& path);
Scene read_scene_file(const std::string& path);

struct FeatureStats;  // scene_ops.hpp
nlohmann::json feature_stats_to_json(const FeatureStats& stats);
FeatureStats feature_stats_from_json(const nlohmann::json& j);

}  // namespace lanesmith
