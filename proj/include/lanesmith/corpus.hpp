#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lanesmith/rng.hpp"
#include "lanesmith/scene.hpp"

namespace lanesmith {

struct CorpusConfig {
  std::uint64_t seed = 0;
  int n_scenes = 100;
  double intersection_prob = 0.45;  // of which half become T-junctions
  double curve_prob = 0.25;
  int min_agents = 2;
  int max_agents = 10;
  double min_speed = 0.0;
  double max_speed = 12.0;
  double lane_spacing = 3.5;

  void validate() const;
};

struct Corpus {
  CorpusConfig config;
  std::vector<Scene> scenes;  // canonical (merged, ordered) non-partitioned scenes
  std::vector<int> split;     // 0 = train, 1 = test, from a seed-derived hash

  std::vector<const Scene*> train_scenes() const;
  std::vector<const Scene*> test_scenes() const;
};

// Procedural scenes: straight multi-lane roads, arcs, T-junctions and 4-way
// intersections with agents placed on lane centerlines. Deterministic in the
// seed; every scene draws its own stream from (seed, index).
Corpus generate_corpus(const CorpusConfig& cfg);

Scene generate_scene(const CorpusConfig& cfg, std::uint64_t index);

// Partitioned training variant of a canonical scene (split at x=0, reordered).
Scene make_partitioned_variant(const Scene& scene);

// Joint histogram p(N_o, N_l) from training-set statistics.
class CountDistribution {
 public:
  CountDistribution() = default;
  explicit CountDistribution(const std::vector<const Scene*>& scenes);

  std::pair<int, int> sample(Rng& rng) const;  // (N_o, N_l)
  // Conditional draw; falls back to the nearest observed N_l bucket.
  int sample_objects_given_lanes(int n_lanes, Rng& rng) const;
  bool supports(int n_objects, int n_lanes) const;
  double probability(int n_objects, int n_lanes) const;
  const std::map<std::pair<int, int>, double>& joint() const { return joint_; }

  nlohmann::json to_json() const;
  static CountDistribution from_json(const nlohmann::json& j);

 private:
  std::map<std::pair<int, int>, double> joint_;
};

// Count statistics of partitioned scenes used when inpainting:
// p(N_o^FP | N_o^FN, N_l^FN + N_l^FP), with nearest-bucket fallback.
class PartitionCountModel {
 public:
  PartitionCountModel() = default;
  explicit PartitionCountModel(const std::vector<const Scene*>& partitioned_scenes);

  int sample_fp_objects(int fn_objects, int total_lanes, Rng& rng) const;

  nlohmann::json to_json() const;
  static PartitionCountModel from_json(const nlohmann::json& j);

 private:
  // (N_o^FN, N_l_total) -> histogram over N_o^FP
  std::map<std::pair<int, int>, std::map<int, double>> table_;
};

// Directory layout: manifest.json + scene_00000.json ...
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace lanesmith
