#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanesmith/scene.hpp"
#include "lanesmith/tensor.hpp"

namespace lanesmith {

// Directed traversal graph over lane segments. Nodes are lane endpoints
// merged by proximity and by successor relations; every lane contributes one
// edge from its start node to its end node, weighted by arc length.
// Left/right neighbor relations encode adjacency, not traversability, and are
// excluded.
struct LaneGraph {
  struct Edge {
    int from = 0;
    int to = 0;
    double length = 0.0;
    int lane = 0;
  };
  int n_nodes = 0;
  std::vector<Vec2> node_pos;
  std::vector<Edge> edges;
  std::vector<int> degree;  // in + out over lane edges

  std::vector<std::vector<int>> out_adjacency() const;  // node -> edge indices
};

LaneGraph build_lane_graph(const Scene& scene, double merge_tol = 0.5);

// Nodes with degree != 2, with their degrees.
std::vector<std::pair<int, int>> extract_keypoints(const LaneGraph& g);

struct UrbanFeatures {
  std::vector<double> connectivity;  // keypoint degrees
  std::vector<double> density;      // keypoint count (one entry per graph)
  std::vector<double> reach;        // reachable keypoints per keypoint
  std::vector<double> convenience;  // Dijkstra lengths over connected keypoint pairs
};

// Reach counts the distinct keypoints reachable from each keypoint by
// directed traversal; a keypoint with no outgoing edge reaches exactly
// itself.
UrbanFeatures urban_planning_features(const LaneGraph& g);
UrbanFeatures urban_planning_features(const std::vector<const Scene*>& scenes);

// 1-D Frechet distance under the Gaussian-moment convention:
// sqrt((mu_a - mu_b)^2 + (sigma_a - sigma_b)^2), population moments.
// Empty inputs have no defined value.
std::optional<double> frechet_1d(const std::vector<double>& a,
                                 const std::vector<double>& b);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> counts;

  static Histogram with_bins(double lo, double hi, int bins);
  static Histogram with_bin_size(double lo, double hi, double bin_size);
  void add(double value);  // clipped into [lo, hi]
  double total() const;
  std::vector<double> normalized() const;
  bool same_edges(const Histogram& o) const;
};

// Jensen-Shannon divergence in nats; 0 log 0 := 0. Requires identical edges.
double jsd(const Histogram& p, const Histogram& q);

struct AgentHistograms {
  Histogram nearest_distance;   // (0,50) m, 1 m bins,      reported x10
  Histogram lateral_deviation;  // (0,1.5) m, 0.1 m bins,   reported x10
  Histogram angular_deviation;  // (-200,200) deg, 5 deg,   reported x100
  Histogram length;             // (0,25) m, 0.1 m bins,    reported x100
  Histogram width;              // (0,5) m, 0.1 m bins,     reported x100
  Histogram speed;              // (0,50) m/s, 1 m/s bins,  reported x100
};

// Vehicle-class boxes only; lateral/angular restricted to vehicles within
// 1.5 m of a centerline.
AgentHistograms agent_jsd_features(const std::vector<const Scene*>& scenes);

struct RolloutTrace {
  struct Snap {
    Vec2 pos;
    double heading = 0.0;
    bool valid = false;
  };
  double dt = 0.1;
  std::vector<std::vector<Snap>> frames;  // frames[t][agent]
};

struct BehaviourHistograms {
  Histogram lin_speed;  // 200 bins in (0,30) m/s
  Histogram ang_speed;  // 200 bins in (-50,50) deg/s
  Histogram accel;      // 200 bins in (-10,10) m/s^2
  Histogram nearest;    // 200 bins in (0,40) m
};

// Per-agent per-timestep features from finite differences of the rollout.
// Throws for rollouts with fewer than 2 frames.
BehaviourHistograms behaviour_jsd_features(const std::vector<RolloutTrace>& rollouts);

// Longest simple successor path from the lane nearest the origin, in meters.
// 0 with a warning when no lane comes within 5 m of the origin.
double route_length(const Scene& scene);

// Mean endpoint gap over successor edges; empty when the scene has none.
std::optional<double> endpoint_distance(const Scene& scene);

bool scene_has_collision(const Scene& scene);
double collision_rate_percent(const std::vector<const Scene*>& scenes);

// Multivariate Gaussian Frechet distance
// sqrt(||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})).
double gaussian_frechet(const tc::Tensor& mu1, const tc::Tensor& cov1,
                        const tc::Tensor& mu2, const tc::Tensor& cov2);

// Frechet distance between two embedding sets (rows are samples). Sample
// covariance; shrinkage eps*I is applied with a warning when there are fewer
// samples than dimensions.
double embedding_frechet(const tc::Tensor& a, const tc::Tensor& b,
                         double shrinkage = 1e-3);

// Symmetric eigendecomposition (cyclic Jacobi). Returns eigenvalues; if
// vectors != nullptr it receives the column eigenvectors.
std::vector<double> sym_eig(const tc::Tensor& m, tc::Tensor* vectors = nullptr);

struct MetricValue {
  double raw = 0.0;
  double scaled = 0.0;
  std::int64_t n_samples = 0;
  bool missing = false;
};

using MetricsReport = std::map<std::string, MetricValue>;

// Scene-set comparison covering the lane-graph and agent metric families.
MetricsReport compare_scene_sets(const std::vector<const Scene*>& reference,
                                 const std::vector<const Scene*>& candidate);

nlohmann::json report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);

}  // namespace lanesmith
