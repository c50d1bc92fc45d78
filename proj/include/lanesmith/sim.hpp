#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lanesmith/behaviour.hpp"
#include "lanesmith/diffusion.hpp"

namespace lanesmith {

// Driving route: polyline resampled at 1 m, with cumulative arc length and
// the world lane ids it traverses.
struct Route {
  Polyline points;
  std::vector<double> cum;
  std::vector<int> source_lanes;

  double length() const { return cum.empty() ? 0.0 : cum.back(); }
  // Closest-point projection: arc length and lateral deviation.
  void project(Vec2 p, double* arclength, double* lateral) const;
  SE2 pose_at(double arclength) const;
};

// Longest-extension DFS from the lane nearest the origin, resampled at 1 m
// and truncated at target_length. Ties prefer the lower lane index.
Route build_route(const Scene& world_map, double target_length);

struct SimConfig {
  double route_target = 55.0;
  double behaviour_fov = 80.0;  // square window edge, ego-centered
  int max_agents_per_window = 24;
  double dt = kSimDt;
  double time_limit = -1.0;  // <= 0: 9 s per 55 m of route, scaled linearly
  double kappa = 0.0;
  double offroad_threshold = 2.5;
  double frontier_margin = 20.0;
  int max_extensions = 0;  // 0 = fixed world

  double effective_time_limit() const {
    return time_limit > 0.0 ? time_limit : 9.0 * route_target / 55.0;
  }
};

enum class Outcome { kSuccess, kCollision, kOffroad, kTimeout };
const char* to_string(Outcome o);

struct WorldAgent {
  int id = 0;
  AgentState state;
  bool ever_in_window = false;
  Polyline route;  // behaviour route (random successor traversal)
  std::deque<PolicyInput::HistoryItem> history;  // bounded by kContextHorizon
};

struct World {
  Scene map;  // lanes + adjacency in world frame; objects live in `agents`
  std::vector<WorldAgent> agents;  // agents[0] is the planner/ego
  Route route;
  int extensions_done = 0;
  int next_agent_id = 0;
};

// Builds a world from an initial scene: the ego object becomes the planner,
// other objects become behaviour agents with random routes.
World make_world(const Scene& initial_scene, double route_target, Rng& rng);

// Planner controllers output (accel, steer) for the bicycle model.
class PlannerController {
 public:
  virtual ~PlannerController() = default;
  virtual std::pair<double, double> control(const AgentState& ego, const Route& route,
                                            const World& world) = 0;
};

// Route-following planner: pure-pursuit steering with IDM speed control.
class RoutePlanner : public PlannerController {
 public:
  explicit RoutePlanner(IdmParams params = {}) : params_(params) {}
  std::pair<double, double> control(const AgentState& ego, const Route& route,
                                    const World& world) override;

 private:
  IdmParams params_;
};

// Fixed-control planner used to script failure cases.
class ScriptedPlanner : public PlannerController {
 public:
  ScriptedPlanner(double accel, double steer) : accel_(accel), steer_(steer) {}
  std::pair<double, double> control(const AgentState&, const Route&,
                                    const World&) override {
    return {accel_, steer_};
  }

 private:
  double accel_, steer_;
};

struct StepDiagnostics {
  std::vector<int> stepped_ids;   // non-ego agents advanced this tick
  std::vector<int> frozen_ids;    // agents newly frozen by window exit
  int subsets = 0;
};

// One 10 Hz tick: agents inside the ego-centered window step in 24-agent
// subsets (ego present in each); agents outside hold state; agents that exit
// the window freeze permanently; the planner advances via the bicycle model.
void step_world(World& world, Policy& policy, PlannerController& planner,
                const SimConfig& cfg, Rng& rng, StepDiagnostics* diag = nullptr);

struct Episode {
  Outcome outcome = Outcome::kTimeout;
  int steps = 0;
  double route_progress = 0.0;
  double max_lateral_dev = 0.0;
  std::vector<std::string> log_lines;  // one JSON object per step
  RolloutTrace trace;
};

struct ExtensionModels {
  const DmModel* dm = nullptr;
  const AeModel* ae = nullptr;
  const PartitionCountModel* counts = nullptr;
  SampleOptions options;
};

// Re-anchors at the route end, inpaints the forward half and stitches the
// new tile into the world (existing world lanes are never modified). Returns
// false when three consecutive attempts produced no new lanes.
bool extend_scene(World& world, const ExtensionModels& models, Rng& rng);

Episode run_episode(World world, Policy& policy, PlannerController& planner,
                    const SimConfig& cfg, Rng& rng,
                    const ExtensionModels* extension = nullptr);

struct EpisodeStats {
  double collision_pct = 0.0;
  double offroad_pct = 0.0;
  double success_pct = 0.0;
  double timeout_pct = 0.0;
  int n = 0;
};

EpisodeStats episode_metrics(const std::vector<Episode>& episodes);

struct SeedStats {
  double mean = 0.0;
  double stddev = 0.0;
};
// Per-seed aggregation (mean +- std of each percentage across seeds).
struct MultiSeedStats {
  SeedStats collision, offroad, success;
};
MultiSeedStats episode_metrics_multi(const std::vector<std::vector<Episode>>& per_seed);

void write_episode_log(const Episode& episode, const std::string& path);

}  // namespace lanesmith
