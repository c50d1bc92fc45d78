#include "lanesmith/behaviour.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"

namespace lanesmith {

using tc::Binder;
using tc::Tape;
using tc::Tensor;
using tc::Var;

KdiskVocab::KdiskVocab(std::vector<std::array<double, 3>> templates, double theta_weight)
    : templates_(std::move(templates)), theta_weight_(theta_weight) {}

int KdiskVocab::tokenize(double dx, double dy, double dtheta) const {
  if (templates_.empty()) throw std::logic_error("kdisk vocab is empty");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < size(); ++i) {
    const auto& t = templates_[i];
    const double ddx = dx - t[0];
    const double ddy = dy - t[1];
    const double ddt = theta_weight_ * (dtheta - t[2]);
    const double d = ddx * ddx + ddy * ddy + ddt * ddt;
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = i;
    }
  }
  return best;
}

const std::array<double, 3>& KdiskVocab::detokenize(int token) const {
  return templates_.at(token);
}

nlohmann::json KdiskVocab::to_json() const {
  // bare list of [dx, dy, dtheta] triples
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : templates_) arr.push_back({t[0], t[1], t[2]});
  return arr;
}

KdiskVocab KdiskVocab::from_json(const nlohmann::json& j) {
  std::vector<std::array<double, 3>> templates;
  for (const auto& e : j)
    templates.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
  return KdiskVocab(std::move(templates), 1.0);
}

KdiskVocab build_kdisk_vocab(const std::vector<std::array<double, 3>>& samples, int k,
                             Rng& rng, double theta_weight, int max_iters) {
  if (static_cast<int>(samples.size()) < k)
    throw std::invalid_argument("build_kdisk_vocab: need at least k samples");
  std::vector<std::array<double, 3>> pts = samples;
  // count distinct points; pad with jittered duplicates when short of k
  {
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (static_cast<int>(sorted.size()) < k) {
      log_warn("build_kdisk_vocab: fewer distinct samples than k, padding with jitter");
      while (static_cast<int>(pts.size()) < 4 * k) {
        auto p = sorted[rng.uniform_int(0, static_cast<int>(sorted.size()) - 1)];
        p[0] += 1e-4 * rng.normal();
        p[1] += 1e-4 * rng.normal();
        p[2] += 1e-4 * rng.normal();
        pts.push_back(p);
      }
    }
  }
  auto dist2 = [&](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dt = theta_weight * (a[2] - b[2]);
    return dx * dx + dy * dy + dt * dt;
  };

  // k-means++ seeding
  std::vector<std::array<double, 3>> centers;
  centers.push_back(pts[rng.uniform_int(0, static_cast<int>(pts.size()) - 1)]);
  std::vector<double> d2(pts.size(), 0.0);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, dist2(pts[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(pts[rng.uniform_int(0, static_cast<int>(pts.size()) - 1)]);
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = pts.size() - 1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      u -= d2[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(pts[pick]);
  }

  // Lloyd iterations
  std::vector<int> assign(pts.size(), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = dist2(pts[i], centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    std::vector<std::array<double, 3>> sums(k, {0, 0, 0});
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (int d = 0; d < 3; ++d) sums[assign[i]][d] += pts[i][d];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0)
        centers[c] = {sums[c][0] / counts[c], sums[c][1] / counts[c],
                      sums[c][2] / counts[c]};
    if (!changed) break;
  }
  std::sort(centers.begin(), centers.end());
  return KdiskVocab(std::move(centers), theta_weight);
}

AgentState agent_from_object(const Object& o) {
  AgentState s;
  s.x = o.x;
  s.y = o.y;
  s.theta = o.heading();
  s.speed = o.speed;
  s.length = o.length;
  s.width = o.width;
  s.cls = o.cls;
  return s;
}

Object object_from_agent(const AgentState& s) {
  Object o;
  o.x = s.x;
  o.y = s.y;
  o.speed = s.speed;
  o.cos_h = std::cos(s.theta);
  o.sin_h = std::sin(s.theta);
  o.length = s.length;
  o.width = s.width;
  o.cls = s.cls;
  return o;
}

double reward(const AgentState& agent, const AgentState& ego) {
  const bool coll = obb_overlap(agent.box(), ego.box());
  const double d = std::hypot(agent.x - ego.x, agent.y - ego.y);
  return -10.0 * (coll ? 1.0 : 0.0) + std::min(d, 10.0) / 10.0;
}

ReturnValue discounted_return(const std::vector<double>& rewards, int start, int horizon,
                              double gamma) {
  ReturnValue out;
  const int n = static_cast<int>(rewards.size());
  if (start < 0 || start >= n) throw std::invalid_argument("discounted_return: bad start");
  double g = 1.0;
  int used = 0;
  for (int i = start; i < std::min(n, start + horizon); ++i, ++used) {
    out.value += g * rewards[i];
    g *= gamma;
  }
  out.truncated = used < horizon;
  return out;
}

int ReturnBinning::bin_of(double value) const {
  const double v = std::clamp(value, lo, hi);
  int idx = static_cast<int>((v - lo) / (hi - lo) * bins);
  return std::clamp(idx, 0, bins - 1);
}

double ReturnBinning::center(int bin) const {
  return lo + (bin + 0.5) * (hi - lo) / bins;
}

nlohmann::json ReturnBinning::to_json() const {
  return {{"lo", lo}, {"hi", hi}, {"bins", bins}};
}

ReturnBinning ReturnBinning::from_json(const nlohmann::json& j) {
  ReturnBinning b;
  b.lo = j.at("lo").get<double>();
  b.hi = j.at("hi").get<double>();
  b.bins = j.at("bins").get<int>();
  return b;
}

int tilted_return_sample(const std::vector<double>& logits, const ReturnBinning& bins,
                         double kappa, Rng& rng) {
  if (static_cast<int>(logits.size()) != bins.bins)
    throw std::invalid_argument("tilted_return_sample: logit count mismatch");
  std::vector<double> tilted(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    tilted[i] = logits[i] + kappa * bins.center(static_cast<int>(i));
    mx = std::max(mx, tilted[i]);
  }
  double total = 0.0;
  for (double& v : tilted) {
    v = std::exp(v - mx);
    total += v;
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < tilted.size(); ++i) {
    u -= tilted[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return bins.bins - 1;
}

AgentState delta_forward(const AgentState& s, double dx, double dy, double dtheta,
                         double dt) {
  AgentState out = s;
  if (s.frozen) return out;
  const double c = std::cos(s.theta);
  const double sn = std::sin(s.theta);
  out.x = s.x + c * dx - sn * dy;
  out.y = s.y + sn * dx + c * dy;
  out.theta = wrap_angle(s.theta + dtheta);
  out.speed = std::hypot(dx, dy) / dt;
  return out;
}

AgentState bicycle_forward(const AgentState& s, double accel, double steer, double dt) {
  AgentState out = s;
  if (s.frozen) return out;
  const double a = std::clamp(accel, -4.0, 4.0);
  const double st = std::clamp(steer, -0.7, 0.7);
  const double wheelbase = 0.8 * s.length;
  out.speed = std::clamp(s.speed + a * dt, 0.0, 30.0);
  const double dtheta = (s.speed / wheelbase) * std::tan(st) * dt;
  out.theta = wrap_angle(s.theta + dtheta);
  const double mid = s.theta + dtheta / 2.0;  // wrap-safe midpoint heading
  out.x = s.x + out.speed * dt * std::cos(mid);
  out.y = s.y + out.speed * dt * std::sin(mid);
  return out;
}

double idm_accel(double speed, double gap, double leader_speed, const IdmParams& p) {
  const double free_term = std::pow(speed / p.v0, p.delta);
  if (!std::isfinite(gap)) return p.a_max * (1.0 - free_term);
  const double dv = speed - leader_speed;
  const double s_star =
      p.s0 + std::max(0.0, speed * p.headway +
                               speed * dv / (2.0 * std::sqrt(p.a_max * p.b_comf)));
  const double s = std::max(gap, 0.1);
  return p.a_max * (1.0 - free_term - (s_star / s) * (s_star / s));
}

std::optional<double> IdmPolicy::leader_gap(const PolicyInput& in, int slot,
                                            double* leader_speed) {
  const AgentState& me = in.states[slot];
  const Polyline* route =
      in.routes && (*in.routes)[slot] ? (*in.routes)[slot] : nullptr;
  double best_gap = std::numeric_limits<double>::infinity();
  double best_speed = 0.0;
  if (route && route->size() >= 2) {
    const double my_s = closest_on_polyline(*route, {me.x, me.y}).arclength;
    for (std::size_t j = 0; j < in.states.size(); ++j) {
      if (static_cast<int>(j) == slot) continue;
      const AgentState& other = in.states[j];
      const PolylineHit hit = closest_on_polyline(*route, {other.x, other.y});
      if (hit.distance > 2.5) continue;
      const double ds = hit.arclength - my_s;
      if (ds <= 0.1) continue;
      const double gap = ds - (me.length + other.length) / 2.0;
      if (gap < best_gap) {
        best_gap = gap;
        best_speed = other.speed;
      }
    }
  } else {
    const double c = std::cos(me.theta), sn = std::sin(me.theta);
    for (std::size_t j = 0; j < in.states.size(); ++j) {
      if (static_cast<int>(j) == slot) continue;
      const AgentState& other = in.states[j];
      const double dx = other.x - me.x, dy = other.y - me.y;
      const double fwd = dx * c + dy * sn;
      const double lat = -dx * sn + dy * c;
      if (fwd <= 0.1 || std::abs(lat) > 2.5) continue;
      const double gap = fwd - (me.length + other.length) / 2.0;
      if (gap < best_gap) {
        best_gap = gap;
        best_speed = other.speed;
      }
    }
  }
  if (!std::isfinite(best_gap)) return std::nullopt;
  if (leader_speed) *leader_speed = best_speed;
  return best_gap;
}

AgentState IdmPolicy::follow_route_step(const AgentState& s, const Polyline* route,
                                        double accel, double dt) {
  AgentState out = s;
  out.speed = std::clamp(s.speed + std::clamp(accel, -4.0, 4.0) * dt, 0.0, 30.0);
  if (!route || route->size() < 2 || out.speed <= 1e-9) {
    out.x = s.x + out.speed * dt * std::cos(s.theta);
    out.y = s.y + out.speed * dt * std::sin(s.theta);
    return out;
  }
  const PolylineHit hit = closest_on_polyline(*route, {s.x, s.y});
  const double lookahead = std::max(2.0, 3.0 * out.speed * dt);
  const double target_s = hit.arclength + lookahead;
  // walk to target arclength
  double cum = 0.0;
  Vec2 target = route->back();
  Vec2 tangent = (*route)[route->size() - 1] - (*route)[route->size() - 2];
  for (std::size_t i = 0; i + 1 < route->size(); ++i) {
    const double seg = ((*route)[i + 1] - (*route)[i]).norm();
    if (cum + seg >= target_s) {
      const double t = seg > 0 ? (target_s - cum) / seg : 0.0;
      target = (*route)[i] + ((*route)[i + 1] - (*route)[i]) * t;
      tangent = (*route)[i + 1] - (*route)[i];
      break;
    }
    cum += seg;
  }
  Vec2 dir = target - Vec2{s.x, s.y};
  const double dn = dir.norm();
  if (dn < 1e-9) {
    const double tn = tangent.norm();
    dir = tn > 0 ? tangent * (1.0 / tn) : Vec2{std::cos(s.theta), std::sin(s.theta)};
  } else {
    dir = dir * (1.0 / dn);
  }
  out.x = s.x + dir.x * out.speed * dt;
  out.y = s.y + dir.y * out.speed * dt;
  out.theta = std::atan2(dir.y, dir.x);
  return out;
}

std::vector<int> IdmPolicy::step(const PolicyInput& in, Rng& rng, double kappa) {
  (void)rng;
  (void)kappa;  // rule-based, tilting does not apply
  std::vector<int> tokens(in.states.size(), 0);
  for (std::size_t slot = 0; slot < in.states.size(); ++slot) {
    const AgentState& me = in.states[slot];
    if (me.frozen || !me.alive) {
      tokens[slot] = vocab_->tokenize(0, 0, 0);
      continue;
    }
    double leader_speed = 0.0;
    auto gap = leader_gap(in, static_cast<int>(slot), &leader_speed);
    const double accel =
        idm_accel(me.speed, gap.value_or(std::numeric_limits<double>::infinity()),
                  leader_speed, params_);
    const Polyline* route =
        in.routes && (*in.routes)[slot] ? (*in.routes)[slot] : nullptr;
    const AgentState next = follow_route_step(me, route, accel, in.dt);
    // delta in the local frame
    const double c = std::cos(me.theta), sn = std::sin(me.theta);
    const double gdx = next.x - me.x, gdy = next.y - me.y;
    const double dx = c * gdx + sn * gdy;
    const double dy = -sn * gdx + c * gdy;
    tokens[slot] = vocab_->tokenize(dx, dy, wrap_angle(next.theta - me.theta));
  }
  return tokens;
}

std::array<double, kToyFeatureDim> toy_features(const AgentState& agent,
                                                const AgentState& ego,
                                                const AgentState* nearest_neighbor,
                                                const Scene& map) {
  std::array<double, kToyFeatureDim> f{};
  f[0] = agent.speed / 10.0;
  double best_d = std::numeric_limits<double>::infinity();
  Vec2 best_tan{1, 0};
  for (const Lane& lane : map.lanes) {
    const PolylineHit hit = closest_on_polyline(lane.points, {agent.x, agent.y});
    if (hit.distance < best_d) {
      best_d = hit.distance;
      best_tan = hit.tangent;
    }
  }
  const double rel = wrap_angle(std::atan2(best_tan.y, best_tan.x) - agent.theta);
  f[1] = std::cos(rel);
  f[2] = std::sin(rel);
  f[3] = std::min(best_d, 3.0) / 3.0;
  const double c = std::cos(agent.theta), sn = std::sin(agent.theta);
  {
    const double dx = ego.x - agent.x, dy = ego.y - agent.y;
    const double d = std::hypot(dx, dy);
    f[4] = std::min(d, 40.0) / 40.0;
    if (d > 1e-9) {
      f[5] = (c * dx + sn * dy) / d;
      f[6] = (-sn * dx + c * dy) / d;
    }
    f[7] = ego.speed / 10.0;
  }
  if (nearest_neighbor) {
    const double dx = nearest_neighbor->x - agent.x, dy = nearest_neighbor->y - agent.y;
    const double d = std::hypot(dx, dy);
    f[8] = std::min(d, 20.0) / 20.0;
    if (d > 1e-9) {
      f[9] = (c * dx + sn * dy) / d;
      f[10] = (-sn * dx + c * dy) / d;
    }
  } else {
    f[8] = 1.0;
  }
  return f;
}

namespace {

struct ToyNet {
  // builds the trunk and heads on the given tape; rows = batch
  static Var trunk(Binder& b, const ToyPolicyConfig& cfg, Var features) {
    return tc::mlp(b, "toy/trunk", features, {cfg.hidden, cfg.hidden});
  }
  static Var return_head(Binder& b, const ToyPolicyConfig& cfg, Var trunk_out) {
    (void)cfg;
    return tc::linear(b, "toy/head_g", trunk_out, kReturnBins);
  }
  static Var action_head(Binder& b, const ToyPolicyConfig& cfg, Var trunk_out,
                         const std::vector<int>& bins) {
    Var table = b.p("toy/g_emb", {kReturnBins, cfg.return_emb}, tc::Init::kNormal02);
    Var emb = tc::gather_rows(table, bins);
    Var joint = tc::concat_cols({trunk_out, emb});
    return tc::mlp(b, "toy/head_a", joint, {cfg.hidden, kVocabSize});
  }
};

}  // namespace

std::vector<double> ToyPolicy::return_logits(
    const std::array<double, kToyFeatureDim>& f) const {
  Tape tape(false);
  Binder b(tape, params_, false);
  Tensor x = Tensor::zeros({1, kToyFeatureDim});
  for (int i = 0; i < kToyFeatureDim; ++i) x.at(0, i) = f[i];
  Var t = ToyNet::trunk(b, cfg_, tape.leaf(x));
  Var logits = ToyNet::return_head(b, cfg_, t);
  return tape.val(logits).data;
}

int ToyPolicy::sample_action(const std::array<double, kToyFeatureDim>& f, int return_bin,
                             Rng& rng) const {
  Tape tape(false);
  Binder b(tape, params_, false);
  Tensor x = Tensor::zeros({1, kToyFeatureDim});
  for (int i = 0; i < kToyFeatureDim; ++i) x.at(0, i) = f[i];
  Var t = ToyNet::trunk(b, cfg_, tape.leaf(x));
  Var logits = ToyNet::action_head(b, cfg_, t, {return_bin});
  const Tensor& l = tape.val(logits);
  double mx = l.at(0, 0);
  for (int i = 1; i < l.cols(); ++i) mx = std::max(mx, l.at(0, i));
  std::vector<double> p(l.cols());
  double total = 0.0;
  for (int i = 0; i < l.cols(); ++i) {
    p[i] = std::exp(l.at(0, i) - mx);
    total += p[i];
  }
  double u = rng.uniform() * total;
  for (int i = 0; i < l.cols(); ++i) {
    u -= p[i];
    if (u < 0.0) return i;
  }
  return l.cols() - 1;
}

std::vector<int> ToyPolicy::step(const PolicyInput& in, Rng& rng, double kappa) {
  std::vector<int> tokens(in.states.size(), 0);
  const AgentState& ego = in.states[in.ego_slot];
  for (std::size_t slot = 0; slot < in.states.size(); ++slot) {
    const AgentState& me = in.states[slot];
    if (me.frozen || !me.alive) {
      tokens[slot] = vocab_.tokenize(0, 0, 0);
      continue;
    }
    const AgentState* nn = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < in.states.size(); ++j) {
      if (j == slot) continue;
      const double d = std::hypot(in.states[j].x - me.x, in.states[j].y - me.y);
      if (d < best) {
        best = d;
        nn = &in.states[j];
      }
    }
    const auto f = toy_features(me, ego, nn, *in.map);
    const int bin = tilted_return_sample(return_logits(f), binning_, kappa, rng);
    tokens[slot] = sample_action(f, bin, rng);
  }
  return tokens;
}

namespace {

// route from a random successor traversal starting at the lane nearest `p`
Polyline random_route(const Scene& scene, Vec2 p, Rng& rng) {
  if (scene.lanes.empty()) return {};
  int lane = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < scene.num_lanes(); ++i) {
    const double d = closest_on_polyline(scene.lanes[i].points, p).distance;
    if (d < best) {
      best = d;
      lane = i;
    }
  }
  Polyline route;
  std::vector<bool> used(scene.num_lanes(), false);
  int cur = lane;
  while (cur >= 0 && !used[cur]) {
    used[cur] = true;
    const Polyline& pts = scene.lanes[cur].points;
    const std::size_t from = route.empty() ? 0 : 1;
    route.insert(route.end(), pts.begin() + from, pts.end());
    const auto succs = scene.adjacency.successors_of(cur);
    cur = succs.empty()
              ? -1
              : succs[rng.uniform_int(0, static_cast<int>(succs.size()) - 1)];
  }
  return route;
}

struct RolloutAgent {
  AgentState state;
  Polyline route;
  bool pursuer = false;
  double v0 = 10.0;
  int retarget_countdown = 0;
};

}  // namespace

BehaviourDataset generate_behaviour_dataset(const Corpus& corpus,
                                            const RolloutGenConfig& cfg) {
  BehaviourDataset out;
  const auto train = corpus.train_scenes();
  const int n_scenes = std::min<int>(cfg.n_scenes, static_cast<int>(train.size()));
  if (n_scenes == 0) throw std::invalid_argument("behaviour dataset: no scenes");

  struct StepRecord {
    int scene = 0, t = 0, agent = 0;
    std::array<double, kToyFeatureDim> features{};
    std::array<double, 3> delta{};
    double reward = 0.0;
    AgentState state;
  };
  std::vector<StepRecord> records;
  std::vector<std::array<double, 3>> all_deltas;

  IdmParams idm;
  for (int s = 0; s < n_scenes; ++s) {
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(s));
    const Scene& scene = *train[s];
    std::vector<RolloutAgent> agents;
    int ego_idx = -1;
    for (const Object& o : scene.objects) {
      if (o.cls == ObjectClass::kStatic) continue;
      RolloutAgent a;
      a.state = agent_from_object(o);
      a.route = random_route(scene, {o.x, o.y}, rng);
      a.v0 = std::clamp(10.0 + rng.uniform(-cfg.v0_jitter, cfg.v0_jitter), 2.0, 15.0);
      if (o.cls == ObjectClass::kEgo) {
        ego_idx = static_cast<int>(agents.size());
      } else {
        a.pursuer = rng.uniform() < cfg.pursuit_fraction;
      }
      agents.push_back(std::move(a));
    }
    if (ego_idx < 0 || agents.size() < 2) continue;

    RolloutTrace trace;
    trace.dt = kSimDt;
    for (int t = 0; t < cfg.steps; ++t) {
      // snapshot for the trace
      std::vector<RolloutTrace::Snap> frame(agents.size());
      for (std::size_t a = 0; a < agents.size(); ++a)
        frame[a] = {{agents[a].state.x, agents[a].state.y}, agents[a].state.theta, true};
      trace.frames.push_back(std::move(frame));

      const AgentState ego_now = agents[ego_idx].state;
      std::vector<AgentState> next(agents.size());
      for (std::size_t a = 0; a < agents.size(); ++a) {
        RolloutAgent& ag = agents[a];
        const AgentState& me = ag.state;

        // leader search over all agents along this agent's route
        double leader_speed = 0.0;
        double gap = std::numeric_limits<double>::infinity();
        if (ag.route.size() >= 2) {
          const double my_s = closest_on_polyline(ag.route, {me.x, me.y}).arclength;
          for (std::size_t j = 0; j < agents.size(); ++j) {
            if (j == a) continue;
            const PolylineHit hit =
                closest_on_polyline(ag.route, {agents[j].state.x, agents[j].state.y});
            if (hit.distance > 2.5) continue;
            const double ds = hit.arclength - my_s;
            if (ds <= 0.1) continue;
            const double g = ds - (me.length + agents[j].state.length) / 2.0;
            if (g < gap) {
              gap = g;
              leader_speed = agents[j].state.speed;
            }
          }
        }
        IdmParams p = idm;
        p.v0 = ag.v0;
        AgentState stepped;
        if (ag.pursuer && static_cast<int>(a) != ego_idx) {
          // chase the ego: turn toward it, hold a brisk speed
          const double bearing = std::atan2(ego_now.y - me.y, ego_now.x - me.x);
          const double turn = std::clamp(wrap_angle(bearing - me.theta), -0.12, 0.12);
          AgentState tmp = me;
          tmp.theta = wrap_angle(me.theta + turn);
          const double v = std::clamp(me.speed + 1.5 * kSimDt, 0.0, 9.0);
          tmp.speed = v;
          tmp.x = me.x + v * kSimDt * std::cos(tmp.theta);
          tmp.y = me.y + v * kSimDt * std::sin(tmp.theta);
          stepped = tmp;
        } else {
          const double accel = idm_accel(me.speed, gap, leader_speed, p);
          stepped =
              IdmPolicy::follow_route_step(me, ag.route.size() >= 2 ? &ag.route : nullptr,
                                           accel, kSimDt);
        }
        next[a] = stepped;

        if (static_cast<int>(a) != ego_idx) {
          StepRecord rec;
          rec.scene = s;
          rec.t = t;
          rec.agent = static_cast<int>(a);
          const AgentState* nn = nullptr;
          double bestd = std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < agents.size(); ++j) {
            if (j == a) continue;
            const double d =
                std::hypot(agents[j].state.x - me.x, agents[j].state.y - me.y);
            if (d < bestd) {
              bestd = d;
              nn = &agents[j].state;
            }
          }
          rec.features = toy_features(me, ego_now, nn, scene);
          const double c = std::cos(me.theta), sn = std::sin(me.theta);
          const double gdx = stepped.x - me.x, gdy = stepped.y - me.y;
          rec.delta = {c * gdx + sn * gdy, -sn * gdx + c * gdy,
                       wrap_angle(stepped.theta - me.theta)};
          rec.state = me;
          records.push_back(rec);
          all_deltas.push_back(rec.delta);
        }
      }
      for (std::size_t a = 0; a < agents.size(); ++a) agents[a].state = next[a];
      // rewards for this transition, relative to the ego's new state
      const AgentState& ego_next = agents[ego_idx].state;
      for (std::size_t r = records.size(); r-- > 0;) {
        if (records[r].t != t || records[r].scene != s) break;
        records[r].reward = reward(agents[records[r].agent].state, ego_next);
      }
    }
    out.traces.push_back(std::move(trace));
  }

  if (static_cast<int>(all_deltas.size()) < kVocabSize)
    throw std::runtime_error("behaviour dataset: too few deltas for the vocabulary");
  Rng vocab_rng(cfg.seed ^ 0xABCDull);
  out.vocab = build_kdisk_vocab(all_deltas, kVocabSize, vocab_rng);

  // per-(scene, agent) reward streams -> returns
  std::map<std::pair<int, int>, std::vector<std::size_t>> streams;
  for (std::size_t i = 0; i < records.size(); ++i)
    streams[{records[i].scene, records[i].agent}].push_back(i);
  std::vector<double> all_returns;
  std::vector<ReturnValue> ret_of(records.size());
  for (const auto& [key, idxs] : streams) {
    std::vector<double> rewards;
    rewards.reserve(idxs.size());
    for (std::size_t i : idxs) rewards.push_back(records[i].reward);
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      ret_of[idxs[k]] = discounted_return(rewards, static_cast<int>(k));
      if (!ret_of[idxs[k]].truncated) all_returns.push_back(ret_of[idxs[k]].value);
    }
  }
  ReturnBinning binning;
  if (!all_returns.empty()) {
    const auto [mn, mx] = std::minmax_element(all_returns.begin(), all_returns.end());
    binning.lo = *mn - 1e-6;
    binning.hi = *mx + 1e-6;
  }
  out.binning = binning;

  for (std::size_t i = 0; i < records.size(); ++i) {
    BehaviourTuple tup;
    tup.features = records[i].features;
    tup.action = out.vocab.tokenize(records[i].delta[0], records[i].delta[1],
                                    records[i].delta[2]);
    tup.return_bin = binning.bin_of(ret_of[i].value);
    tup.truncated = ret_of[i].truncated;
    out.tuples.push_back(tup);
    out.raw_deltas.push_back(records[i].delta);

    RolloutStepLog log;
    log.t = records[i].t;
    log.agent = records[i].agent;
    log.x = records[i].state.x;
    log.y = records[i].state.y;
    log.theta = records[i].state.theta;
    log.speed = records[i].state.speed;
    log.token = tup.action;
    log.return_bin = tup.truncated ? -1 : tup.return_bin;
    out.step_logs.push_back(log);
  }
  return out;
}

void write_rollout_log(const std::vector<RolloutStepLog>& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open rollout log: " + path);
  for (const RolloutStepLog& l : log) {
    nlohmann::json j = {{"t", l.t},         {"agent", l.agent}, {"x", l.x},
                        {"y", l.y},         {"theta", l.theta}, {"speed", l.speed},
                        {"token", l.token}, {"return_bin", l.return_bin}};
    os << j.dump() << "\n";
  }
}

ToyTrainResult train_toy_policy(const BehaviourDataset& data, const ToyPolicyConfig& cfg,
                                const ToyTrainConfig& tcfg) {
  std::vector<const BehaviourTuple*> usable;
  for (const BehaviourTuple& t : data.tuples)
    if (!t.truncated) usable.push_back(&t);
  if (usable.size() < 32)
    throw std::invalid_argument("train_toy_policy: not enough usable tuples");

  ToyTrainResult result;
  result.params = tc::ParamStore(tcfg.seed + 101);
  tc::AdamW opt(tc::AdamConfig{tcfg.lr, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(tcfg.seed);
  result.log_csv.push_back("step,loss");

  for (int step = 0; step < tcfg.steps; ++step) {
    Tensor x = Tensor::zeros({tcfg.batch_size, kToyFeatureDim});
    std::vector<int> bins(tcfg.batch_size), tokens(tcfg.batch_size);
    for (int k = 0; k < tcfg.batch_size; ++k) {
      const BehaviourTuple& t =
          *usable[rng.uniform_int(0, static_cast<int>(usable.size()) - 1)];
      for (int j = 0; j < kToyFeatureDim; ++j) x.at(k, j) = t.features[j];
      bins[k] = t.return_bin;
      tokens[k] = t.action;
    }
    Tape tape(true);
    Binder b(tape, result.params, true);
    Var trunk = ToyNet::trunk(b, cfg, tape.leaf(x));
    Var g_logits = ToyNet::return_head(b, cfg, trunk);
    Var a_logits = ToyNet::action_head(b, cfg, trunk, bins);
    Var loss = tc::add(tc::cross_entropy(g_logits, bins),
                       tc::cross_entropy(a_logits, tokens));
    const double value = tc::scalar_value(loss);
    if (!std::isfinite(value))
      throw std::runtime_error("train_toy_policy diverged at step " +
                               std::to_string(step));
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : b.bound()) grads[name] = tape.grad(var);
    opt.step_grads(result.params, grads);
    if (step == 0) result.first_loss = value;
    result.last_loss = value;
    if (step % 100 == 0 || step + 1 == tcfg.steps)
      result.log_csv.push_back(std::to_string(step) + "," + std::to_string(value));
  }
  return result;
}

}  // namespace lanesmith
