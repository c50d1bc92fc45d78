#include "lanesmith/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"
#include "lanesmith/scene_ops.hpp"

namespace lanesmith {

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kCollision: return "collision";
    case Outcome::kOffroad: return "offroad";
    case Outcome::kTimeout: return "timeout";
  }
  return "timeout";
}

void Route::project(Vec2 p, double* arclength, double* lateral) const {
  const PolylineHit hit = closest_on_polyline(points, p);
  if (arclength) *arclength = hit.arclength;
  if (lateral) *lateral = hit.distance;
}

SE2 Route::pose_at(double arclength) const {
  if (points.size() < 2) return SE2{};
  double s = std::clamp(arclength, 0.0, length());
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const double seg = (points[i + 1] - points[i]).norm();
    if (cum[i] + seg >= s || i + 2 == points.size()) {
      const double t = seg > 0 ? std::clamp((s - cum[i]) / seg, 0.0, 1.0) : 0.0;
      const Vec2 p = points[i] + (points[i + 1] - points[i]) * t;
      const Vec2 d = points[i + 1] - points[i];
      return SE2::from_angle(p.x, p.y, std::atan2(d.y, d.x));
    }
  }
  return SE2{};
}

namespace {

// longest successor-path continuation, ties to the lower lane index
double longest_from(const Scene& map, int lane, std::vector<bool>& on_path,
                    std::vector<int>* best_next) {
  on_path[lane] = true;
  double best = 0.0;
  int choice = -1;
  for (int nxt : map.adjacency.successors_of(lane)) {
    if (on_path[nxt]) continue;
    const double len = longest_from(map, nxt, on_path, nullptr);
    if (len > best + 1e-12) {
      best = len;
      choice = nxt;
    }
  }
  on_path[lane] = false;
  if (best_next) best_next->push_back(choice);
  return map.lanes[lane].arclength() + best;
}

Polyline resample_route_1m(const Polyline& raw, double target) {
  std::vector<double> cum(raw.size(), 0.0);
  for (std::size_t i = 1; i < raw.size(); ++i)
    cum[i] = cum[i - 1] + (raw[i] - raw[i - 1]).norm();
  const double total = std::min(cum.back(), target);
  Polyline out;
  const int whole = static_cast<int>(std::floor(total / 1.0));
  std::size_t seg = 0;
  for (int k = 0; k <= whole; ++k) {
    const double s = static_cast<double>(k);
    while (seg + 2 < raw.size() && cum[seg + 1] < s) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double t = span > 0 ? (s - cum[seg]) / span : 0.0;
    out.push_back(raw[seg] + (raw[seg + 1] - raw[seg]) * t);
  }
  if (total - whole > 1e-6) {
    const double s = total;
    while (seg + 2 < raw.size() && cum[seg + 1] < s) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double t = span > 0 ? (s - cum[seg]) / span : 0.0;
    out.push_back(raw[seg] + (raw[seg + 1] - raw[seg]) * t);
  }
  return out;
}

Route route_from_lanes(const Scene& map, const std::vector<int>& lanes, double target,
                       std::optional<Vec2> start_at = {}) {
  Polyline raw;
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const Polyline& pts = map.lanes[lanes[i]].points;
    const std::size_t from = raw.empty() ? 0 : 1;
    raw.insert(raw.end(), pts.begin() + from, pts.end());
  }
  if (start_at.has_value()) {
    // trim everything behind the start point's projection
    const PolylineHit hit = closest_on_polyline(raw, *start_at);
    Polyline trimmed;
    double cum = 0.0;
    trimmed.push_back(hit.closest);
    for (std::size_t i = 0; i + 1 < raw.size(); ++i) {
      const double seg = (raw[i + 1] - raw[i]).norm();
      if (cum + seg > hit.arclength + 1e-9) trimmed.push_back(raw[i + 1]);
      cum += seg;
    }
    if (trimmed.size() >= 2) raw = std::move(trimmed);
  }
  Route route;
  route.points = resample_route_1m(raw, target);
  route.source_lanes = lanes;
  route.cum.resize(route.points.size(), 0.0);
  for (std::size_t i = 1; i < route.points.size(); ++i)
    route.cum[i] = route.cum[i - 1] + (route.points[i] - route.points[i - 1]).norm();
  return route;
}

std::vector<int> longest_lane_chain(const Scene& map, int start) {
  std::vector<int> chain = {start};
  std::vector<bool> on_path(map.num_lanes(), false);
  int cur = start;
  while (true) {
    for (int idx : chain) on_path[idx] = true;
    double best = -1.0;
    int choice = -1;
    for (int nxt : map.adjacency.successors_of(cur)) {
      if (on_path[nxt]) continue;
      std::vector<bool> scratch = on_path;
      const double len = longest_from(map, nxt, scratch, nullptr);
      if (len > best + 1e-12) {
        best = len;
        choice = nxt;
      }
    }
    if (choice < 0) break;
    chain.push_back(choice);
    cur = choice;
  }
  return chain;
}

}  // namespace

Route build_route(const Scene& world_map, double target_length) {
  if (world_map.lanes.empty()) throw std::invalid_argument("build_route: no lanes");
  int origin_lane = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < world_map.num_lanes(); ++i) {
    const double d = closest_on_polyline(world_map.lanes[i].points, {0, 0}).distance;
    if (d < best) {
      best = d;
      origin_lane = i;
    }
  }
  if (best > 5.0) log_warn("build_route: nearest lane is over 5 m from the origin");
  const std::vector<int> chain = longest_lane_chain(world_map, origin_lane);
  Route route = route_from_lanes(world_map, chain, target_length, Vec2{0, 0});
  if (route.length() + 1.0 < target_length)
    log_debug("build_route: route ends early at " + std::to_string(route.length()) +
              " m");
  return route;
}

namespace {

Polyline random_agent_route(const Scene& map, Vec2 p, Rng& rng) {
  if (map.lanes.empty()) return {};
  int lane = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < map.num_lanes(); ++i) {
    const double d = closest_on_polyline(map.lanes[i].points, p).distance;
    if (d < best) {
      best = d;
      lane = i;
    }
  }
  Polyline route;
  std::vector<bool> used(map.num_lanes(), false);
  int cur = lane;
  while (cur >= 0 && !used[cur]) {
    used[cur] = true;
    const Polyline& pts = map.lanes[cur].points;
    const std::size_t from = route.empty() ? 0 : 1;
    route.insert(route.end(), pts.begin() + from, pts.end());
    const auto succs = map.adjacency.successors_of(cur);
    cur = succs.empty() ? -1
                        : succs[rng.uniform_int(0, static_cast<int>(succs.size()) - 1)];
  }
  return route;
}

}  // namespace

World make_world(const Scene& initial_scene, double route_target, Rng& rng) {
  World world;
  world.map = initial_scene;
  world.map.objects.clear();
  world.map.object_order.clear();
  world.route = build_route(world.map, route_target);

  const int ego = initial_scene.ego_index();
  if (ego < 0) throw std::invalid_argument("make_world: scene has no ego");
  {
    WorldAgent planner;
    planner.id = 0;
    planner.state = agent_from_object(initial_scene.objects[ego]);
    world.agents.push_back(std::move(planner));
  }
  for (int i = 0; i < initial_scene.num_objects(); ++i) {
    if (i == ego) continue;
    const Object& o = initial_scene.objects[i];
    if (o.cls == ObjectClass::kStatic) continue;
    WorldAgent a;
    a.id = static_cast<int>(world.agents.size());
    a.state = agent_from_object(o);
    a.route = random_agent_route(world.map, {o.x, o.y}, rng);
    world.agents.push_back(std::move(a));
  }
  world.next_agent_id = static_cast<int>(world.agents.size());
  return world;
}

std::pair<double, double> RoutePlanner::control(const AgentState& ego, const Route& route,
                                                const World& world) {
  double s = 0.0, lat = 0.0;
  route.project({ego.x, ego.y}, &s, &lat);
  // pure pursuit toward a speed-scaled lookahead point
  const double lookahead = std::clamp(1.5 + 0.8 * ego.speed, 2.0, 10.0);
  const SE2 target = route.pose_at(s + lookahead);
  const double dx = target.x - ego.x;
  const double dy = target.y - ego.y;
  const double c = std::cos(ego.theta), sn = std::sin(ego.theta);
  const double lx = c * dx + sn * dy;
  const double ly = -sn * dx + c * dy;
  double steer = 0.0;
  const double d2 = lx * lx + ly * ly;
  if (d2 > 1e-6 && lx > 0.0) {
    const double curvature = 2.0 * ly / d2;
    steer = std::atan(curvature * 0.8 * ego.length);
  } else if (d2 > 1e-6) {
    steer = ly >= 0 ? 0.5 : -0.5;
  }
  // IDM speed control against the nearest agent ahead on the route
  double gap = std::numeric_limits<double>::infinity();
  double leader_speed = 0.0;
  for (const WorldAgent& a : world.agents) {
    if (a.id == 0 || !a.state.alive) continue;
    double as = 0.0, alat = 0.0;
    route.project({a.state.x, a.state.y}, &as, &alat);
    if (alat > 2.5) continue;
    const double ds = as - s;
    if (ds <= 0.1) continue;
    const double g = ds - (ego.length + a.state.length) / 2.0;
    if (g < gap) {
      gap = g;
      leader_speed = a.state.speed;
    }
  }
  const double accel = idm_accel(ego.speed, gap, leader_speed, params_);
  return {accel, steer};
}

void step_world(World& world, Policy& policy, PlannerController& planner,
                const SimConfig& cfg, Rng& rng, StepDiagnostics* diag) {
  const AgentState ego = world.agents[0].state;
  const double half = cfg.behaviour_fov / 2.0;

  // window membership and permanent freezing on exit
  std::vector<int> eligible;
  for (WorldAgent& a : world.agents) {
    if (a.id == 0 || !a.state.alive) continue;
    const bool inside =
        std::abs(a.state.x - ego.x) <= half && std::abs(a.state.y - ego.y) <= half;
    if (inside) {
      if (a.state.frozen) continue;  // frozen-by-exit agents never reenter
      a.ever_in_window = true;
      eligible.push_back(a.id);
    } else if (a.ever_in_window && !a.state.frozen) {
      a.state.frozen = true;
      if (diag) diag->frozen_ids.push_back(a.id);
    }
  }

  std::sort(eligible.begin(), eligible.end(), [&](int lhs, int rhs) {
    const AgentState& a = world.agents[lhs].state;
    const AgentState& b = world.agents[rhs].state;
    const double da = std::hypot(a.x - ego.x, a.y - ego.y);
    const double db = std::hypot(b.x - ego.x, b.y - ego.y);
    if (da != db) return da < db;
    return lhs < rhs;
  });

  // step in subsets of (max_agents_per_window - 1) + the ego
  std::vector<AgentState> next(world.agents.size());
  for (std::size_t i = 0; i < world.agents.size(); ++i) next[i] = world.agents[i].state;

  const int chunk = cfg.max_agents_per_window - 1;
  std::vector<const std::deque<PolicyInput::HistoryItem>*> history_ptrs;
  for (std::size_t start = 0; start < eligible.size();
       start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(eligible.size(), start + chunk);
    PolicyInput in;
    in.map = &world.map;
    in.dt = cfg.dt;
    in.ego_slot = 0;
    in.states.push_back(ego);
    in.ids.push_back(0);
    std::vector<const Polyline*> routes = {&world.route.points};
    history_ptrs.clear();
    history_ptrs.push_back(&world.agents[0].history);
    for (std::size_t k = start; k < end; ++k) {
      const WorldAgent& a = world.agents[eligible[k]];
      in.states.push_back(a.state);
      in.ids.push_back(a.id);
      routes.push_back(a.route.size() >= 2 ? &a.route : nullptr);
      history_ptrs.push_back(&a.history);
    }
    in.routes = &routes;
    std::vector<const std::deque<PolicyInput::HistoryItem>*> hist = history_ptrs;
    in.history = &hist;
    const std::vector<int> tokens = policy.step(in, rng, cfg.kappa);
    if (diag) ++diag->subsets;
    // apply tokens to the chunk agents (ego excluded; the planner drives it)
    for (std::size_t k = start; k < end; ++k) {
      const int id = eligible[k];
      const int token = tokens[k - start + 1];  // slot 0 is the ego
      WorldAgent& wa = world.agents[id];
      if (wa.history.size() >= kContextHorizon) wa.history.pop_front();
      wa.history.push_back({wa.state, token, -1});
      const auto& d = policy.vocabulary().detokenize(token);
      next[id] = delta_forward(wa.state, d[0], d[1], d[2], cfg.dt);
      if (diag) diag->stepped_ids.push_back(id);
    }
  }
  // planner
  auto [accel, steer] = planner.control(ego, world.route, world);
  next[0] = bicycle_forward(ego, accel, steer, cfg.dt);
  {
    WorldAgent& pw = world.agents[0];
    if (pw.history.size() >= kContextHorizon) pw.history.pop_front();
    pw.history.push_back({ego, -1, -1});
  }
  for (std::size_t i = 0; i < world.agents.size(); ++i) world.agents[i].state = next[i];
}

bool extend_scene(World& world, const ExtensionModels& models, Rng& rng) {
  if (!models.dm || !models.ae || !models.counts)
    throw std::invalid_argument("extend_scene: missing models");
  const SE2 anchor = world.route.pose_at(world.route.length());

  // snapshot scene for conditioning: world lanes + live agents as objects
  Scene snapshot = world.map;
  snapshot.objects.clear();
  for (const WorldAgent& a : world.agents) snapshot.objects.push_back(object_from_agent(a.state));

  CropResult crop = crop_fov(snapshot, anchor, kFovHalfExtent);
  PartitionResult part = partition_scene(crop.scene);

  // keep the trailing half (F_N) with provenance back to world lanes
  Scene fn;
  fn.condition = world.map.condition;
  std::vector<int> fn_world_lane;
  std::vector<int> keep_index(part.scene.num_lanes(), -1);
  for (int i = 0; i < part.scene.num_lanes(); ++i) {
    if (lane_region(part.scene.lanes[i]) != SceneRegion::kFN) continue;
    keep_index[i] = fn.num_lanes();
    fn.lanes.push_back(part.scene.lanes[i]);
    fn_world_lane.push_back(crop.lane_source[part.lane_source[i]]);
  }
  if (fn.lanes.empty()) return false;
  fn.adjacency = part.scene.adjacency.remapped(keep_index);
  for (int i = 0; i < part.scene.num_objects(); ++i)
    if (object_region(part.scene.objects[i]) == SceneRegion::kFN)
      fn.objects.push_back(part.scene.objects[i]);

  // canonical ordering, tracking the lane permutation for the seam edges
  Ordering ord = order_elements(fn);
  Scene fn_canon = reorder_scene(fn, ord);
  std::vector<int> canon_world_lane(fn_canon.num_lanes());
  for (int k = 0; k < fn_canon.num_lanes(); ++k)
    canon_world_lane[k] = fn_world_lane[ord.lanes[k]];

  InpaintResult painted;
  bool ok = false;
  for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
    painted = inpaint(fn_canon, *models.dm, *models.ae, *models.counts, rng,
                      models.options);
    ok = !painted.empty_fp;
  }
  if (!ok) {
    log_warn("extend_scene: inpainting produced no new lanes after 3 attempts");
    return false;
  }

  // stitch the F_P content into world coordinates
  const int base = world.map.num_lanes();
  std::vector<int> new_world_index(painted.scene.num_lanes(), -1);
  for (int i = painted.fn_lanes; i < painted.scene.num_lanes(); ++i) {
    Lane lane = painted.scene.lanes[i];
    for (Vec2& p : lane.points) p = anchor.apply(p);
    new_world_index[i] = world.map.num_lanes();
    world.map.lanes.push_back(std::move(lane));
  }
  for (auto [a, b] : painted.scene.adjacency.successor) {
    const bool a_new = a >= painted.fn_lanes;
    const bool b_new = b >= painted.fn_lanes;
    if (a_new && b_new)
      world.map.adjacency.add_successor(new_world_index[a], new_world_index[b]);
    else if (!a_new && b_new)
      world.map.adjacency.add_successor(canon_world_lane[a], new_world_index[b]);
    else if (a_new && !b_new)
      world.map.adjacency.add_successor(new_world_index[a], canon_world_lane[b]);
    // known-known edges already exist in the world
  }
  for (auto [a, b] : painted.scene.adjacency.left) {
    if (a >= painted.fn_lanes && b >= painted.fn_lanes)
      world.map.adjacency.add_left(new_world_index[a], new_world_index[b]);
  }
  world.map.adjacency.sort_unique();

  // spawn the generated F_P agents
  for (int i = 0; i < painted.scene.num_objects(); ++i) {
    if (i < painted.fn_objects) continue;  // known agents already live
    Object o = painted.scene.objects[i];
    const Vec2 wp = anchor.apply({o.x, o.y});
    const Vec2 wh = anchor.rotate({o.cos_h, o.sin_h});
    o.x = wp.x;
    o.y = wp.y;
    o.cos_h = wh.x;
    o.sin_h = wh.y;
    if (o.cls == ObjectClass::kEgo) o.cls = ObjectClass::kVehicle;  // one ego per world
    if (o.cls == ObjectClass::kStatic) continue;
    WorldAgent a;
    a.id = world.next_agent_id++;
    a.state = agent_from_object(o);
    a.route = random_agent_route(world.map, {o.x, o.y}, rng);
    world.agents.push_back(std::move(a));
  }
  (void)base;

  // extend the route from its final lane across the seam
  {
    const int last_lane = world.route.source_lanes.empty()
                              ? -1
                              : world.route.source_lanes.back();
    if (last_lane >= 0) {
      std::vector<int> chain = longest_lane_chain(world.map, last_lane);
      // keep previously traversed lanes, then re-route from the last one
      std::vector<int> lanes = world.route.source_lanes;
      lanes.pop_back();
      lanes.insert(lanes.end(), chain.begin(), chain.end());
      const Vec2 start = world.route.points.front();
      world.route = route_from_lanes(world.map, lanes,
                                     world.route.length() + kFovHalfExtent + 16.0,
                                     start);
    }
  }
  ++world.extensions_done;
  return true;
}

Episode run_episode(World world, Policy& policy, PlannerController& planner,
                    const SimConfig& cfg, Rng& rng, const ExtensionModels* extension) {
  Episode ep;
  const double limit = cfg.effective_time_limit();
  const int max_steps = static_cast<int>(std::ceil(limit / cfg.dt));
  bool done = false;
  for (int t = 0; t < max_steps && !done; ++t) {
    if (extension && world.extensions_done < cfg.max_extensions) {
      double s = 0.0;
      world.route.project({world.agents[0].state.x, world.agents[0].state.y}, &s,
                          nullptr);
      if (world.route.length() - s < cfg.frontier_margin)
        extend_scene(world, *extension, rng);
    }
    step_world(world, policy, planner, cfg, rng);
    ep.steps = t + 1;

    // trace + log
    std::vector<RolloutTrace::Snap> frame;
    nlohmann::json agents_json = nlohmann::json::array();
    for (const WorldAgent& a : world.agents) {
      frame.push_back({{a.state.x, a.state.y}, a.state.theta, a.state.alive});
      agents_json.push_back({{"id", a.id},
                             {"x", a.state.x},
                             {"y", a.state.y},
                             {"theta", a.state.theta},
                             {"speed", a.state.speed},
                             {"frozen", a.state.frozen}});
    }
    ep.trace.frames.push_back(std::move(frame));
    nlohmann::json line = {{"t", t}, {"agents", agents_json}};
    ep.log_lines.push_back(line.dump());

    // outcome checks after all moves
    const AgentState& ego = world.agents[0].state;
    for (std::size_t i = 1; i < world.agents.size() && !done; ++i) {
      if (!world.agents[i].state.alive) continue;
      if (obb_overlap(ego.box(), world.agents[i].state.box())) {
        ep.outcome = Outcome::kCollision;
        done = true;
      }
    }
    if (done) break;
    double s = 0.0, lat = 0.0;
    world.route.project({ego.x, ego.y}, &s, &lat);
    ep.route_progress = s;
    ep.max_lateral_dev = std::max(ep.max_lateral_dev, lat);
    if (lat > cfg.offroad_threshold) {
      ep.outcome = Outcome::kOffroad;
      done = true;
    } else if (s >= world.route.length() - 1.0) {
      ep.outcome = Outcome::kSuccess;
      done = true;
    }
  }
  if (!done) ep.outcome = Outcome::kTimeout;
  return ep;
}

EpisodeStats episode_metrics(const std::vector<Episode>& episodes) {
  EpisodeStats s;
  if (episodes.empty()) throw std::invalid_argument("episode_metrics: no episodes");
  s.n = static_cast<int>(episodes.size());
  for (const Episode& e : episodes) {
    switch (e.outcome) {
      case Outcome::kCollision: s.collision_pct += 1; break;
      case Outcome::kOffroad: s.offroad_pct += 1; break;
      case Outcome::kSuccess: s.success_pct += 1; break;
      case Outcome::kTimeout: s.timeout_pct += 1; break;
    }
  }
  const double scale = 100.0 / s.n;
  s.collision_pct *= scale;
  s.offroad_pct *= scale;
  s.success_pct *= scale;
  s.timeout_pct *= scale;
  return s;
}

MultiSeedStats episode_metrics_multi(const std::vector<std::vector<Episode>>& per_seed) {
  auto agg = [&](auto pick) {
    SeedStats out;
    std::vector<double> vals;
    for (const auto& eps : per_seed) vals.push_back(pick(episode_metrics(eps)));
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= vals.size();
    out.mean = mean;
    out.stddev = std::sqrt(var);
    return out;
  };
  MultiSeedStats out;
  out.collision = agg([](const EpisodeStats& s) { return s.collision_pct; });
  out.offroad = agg([](const EpisodeStats& s) { return s.offroad_pct; });
  out.success = agg([](const EpisodeStats& s) { return s.success_pct; });
  return out;
}

void write_episode_log(const Episode& episode, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open episode log: " + path);
  for (const std::string& line : episode.log_lines) os << line << "\n";
  nlohmann::json tail = {{"outcome", to_string(episode.outcome)},
                         {"steps", episode.steps},
                         {"route_progress", episode.route_progress}};
  os << tail.dump() << "\n";
}

}  // namespace lanesmith
