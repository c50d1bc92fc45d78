#include "lanesmith/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"

namespace lanesmith {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<std::vector<int>> LaneGraph::out_adjacency() const {
  std::vector<std::vector<int>> out(n_nodes);
  for (int e = 0; e < static_cast<int>(edges.size()); ++e)
    out[edges[e].from].push_back(e);
  return out;
}

LaneGraph build_lane_graph(const Scene& scene, double merge_tol) {
  const int n = scene.num_lanes();
  UnionFind uf(2 * n);  // endpoint ids: 2i start of lane i, 2i+1 its end
  auto endpoint = [&](int id) -> Vec2 {
    const Lane& lane = scene.lanes[id / 2];
    return (id % 2 == 0) ? lane.points.front() : lane.points.back();
  };
  for (int a = 0; a < 2 * n; ++a)
    for (int b = a + 1; b < 2 * n; ++b)
      if ((endpoint(a) - endpoint(b)).norm() <= merge_tol) uf.unite(a, b);
  for (auto [i, j] : scene.adjacency.successor) uf.unite(2 * i + 1, 2 * j);

  LaneGraph g;
  std::map<int, int> node_of_root;
  std::vector<int> members;
  for (int a = 0; a < 2 * n; ++a) {
    const int root = uf.find(a);
    if (!node_of_root.count(root)) {
      node_of_root[root] = g.n_nodes++;
      g.node_pos.push_back({0, 0});
    }
  }
  std::vector<int> counts(g.n_nodes, 0);
  for (int a = 0; a < 2 * n; ++a) {
    const int node = node_of_root[uf.find(a)];
    g.node_pos[node] = g.node_pos[node] + endpoint(a);
    ++counts[node];
  }
  for (int v = 0; v < g.n_nodes; ++v)
    if (counts[v] > 0) g.node_pos[v] = g.node_pos[v] * (1.0 / counts[v]);

  g.degree.assign(g.n_nodes, 0);
  for (int i = 0; i < n; ++i) {
    LaneGraph::Edge e;
    e.from = node_of_root[uf.find(2 * i)];
    e.to = node_of_root[uf.find(2 * i + 1)];
    e.length = scene.lanes[i].arclength();
    e.lane = i;
    ++g.degree[e.from];
    ++g.degree[e.to];
    g.edges.push_back(e);
  }
  return g;
}

std::vector<std::pair<int, int>> extract_keypoints(const LaneGraph& g) {
  std::vector<std::pair<int, int>> out;
  for (int v = 0; v < g.n_nodes; ++v)
    if (g.degree[v] != 2) out.emplace_back(v, g.degree[v]);
  return out;
}

namespace {

// Dijkstra over the node graph; returns shortest distances from src.
std::vector<double> dijkstra(const LaneGraph& g,
                             const std::vector<std::vector<int>>& out_adj, int src) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(g.n_nodes, inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[src] = 0.0;
  heap.push({0.0, src});
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (int e : out_adj[v]) {
      const auto& edge = g.edges[e];
      const double nd = d + edge.length;
      if (nd < dist[edge.to]) {
        dist[edge.to] = nd;
        heap.push({nd, edge.to});
      }
    }
  }
  return dist;
}

}  // namespace

UrbanFeatures urban_planning_features(const LaneGraph& g) {
  UrbanFeatures f;
  const auto keypoints = extract_keypoints(g);
  f.density.push_back(static_cast<double>(keypoints.size()));
  const auto out_adj = g.out_adjacency();
  std::vector<bool> is_key(g.n_nodes, false);
  for (auto [v, deg] : keypoints) {
    is_key[v] = true;
    f.connectivity.push_back(static_cast<double>(deg));
  }
  for (auto [v, deg] : keypoints) {
    // directed reachability over >= 1 edge; a sink reaches itself
    if (out_adj[v].empty()) {
      f.reach.push_back(1.0);
    } else {
      std::vector<bool> seen(g.n_nodes, false);
      std::vector<int> stack;
      for (int e : out_adj[v])
        if (!seen[g.edges[e].to]) {
          seen[g.edges[e].to] = true;
          stack.push_back(g.edges[e].to);
        }
      int count = 0;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        if (is_key[u]) ++count;
        for (int e : out_adj[u])
          if (!seen[g.edges[e].to]) {
            seen[g.edges[e].to] = true;
            stack.push_back(g.edges[e].to);
          }
      }
      f.reach.push_back(static_cast<double>(count));
    }
    const auto dist = dijkstra(g, out_adj, v);
    for (auto [u, du] : keypoints)
      if (u != v && std::isfinite(dist[u])) f.convenience.push_back(dist[u]);
  }
  return f;
}

UrbanFeatures urban_planning_features(const std::vector<const Scene*>& scenes) {
  UrbanFeatures all;
  for (const Scene* s : scenes) {
    UrbanFeatures f = urban_planning_features(build_lane_graph(*s));
    all.connectivity.insert(all.connectivity.end(), f.connectivity.begin(),
                            f.connectivity.end());
    all.density.insert(all.density.end(), f.density.begin(), f.density.end());
    all.reach.insert(all.reach.end(), f.reach.begin(), f.reach.end());
    all.convenience.insert(all.convenience.end(), f.convenience.begin(),
                           f.convenience.end());
  }
  return all;
}

std::optional<double> frechet_1d(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.empty() || b.empty()) return std::nullopt;
  auto moments = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;
    return std::make_pair(mean, std::sqrt(var));
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  return std::sqrt((ma - mb) * (ma - mb) + (sa - sb) * (sa - sb));
}

Histogram Histogram::with_bins(double lo, double hi, int bins) {
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0.0);
  return h;
}

Histogram Histogram::with_bin_size(double lo, double hi, double bin_size) {
  const int bins = static_cast<int>(std::llround((hi - lo) / bin_size));
  return with_bins(lo, hi, bins);
}

void Histogram::add(double value) {
  const int bins = static_cast<int>(counts.size());
  const double v = std::clamp(value, lo, hi);
  int idx = static_cast<int>((v - lo) / (hi - lo) * bins);
  idx = std::clamp(idx, 0, bins - 1);
  counts[idx] += 1.0;
}

double Histogram::total() const {
  double t = 0.0;
  for (double c : counts) t += c;
  return t;
}

std::vector<double> Histogram::normalized() const {
  std::vector<double> out(counts.size(), 0.0);
  const double t = total();
  if (t <= 0.0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = counts[i] / t;
  return out;
}

bool Histogram::same_edges(const Histogram& o) const {
  return lo == o.lo && hi == o.hi && counts.size() == o.counts.size();
}

double jsd(const Histogram& p, const Histogram& q) {
  if (!p.same_edges(q)) throw std::invalid_argument("jsd: bin edges differ");
  const auto pn = p.normalized();
  const auto qn = q.normalized();
  auto kl = [](const std::vector<double>& x, const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) s += x[i] * std::log(x[i] / m[i]);
    return s;
  };
  std::vector<double> m(pn.size());
  for (std::size_t i = 0; i < pn.size(); ++i) m[i] = 0.5 * (pn[i] + qn[i]);
  return 0.5 * (kl(pn, m) + kl(qn, m));
}

AgentHistograms agent_jsd_features(const std::vector<const Scene*>& scenes) {
  AgentHistograms h{Histogram::with_bin_size(0, 50, 1.0),
                    Histogram::with_bin_size(0, 1.5, 0.1),
                    Histogram::with_bin_size(-200, 200, 5.0),
                    Histogram::with_bin_size(0, 25, 0.1),
                    Histogram::with_bin_size(0, 5, 0.1),
                    Histogram::with_bin_size(0, 50, 1.0)};
  for (const Scene* s : scenes) {
    std::vector<int> vehicles;
    for (int i = 0; i < s->num_objects(); ++i) {
      const ObjectClass c = s->objects[i].cls;
      if (c == ObjectClass::kVehicle || c == ObjectClass::kEgo) vehicles.push_back(i);
    }
    for (int idx : vehicles) {
      const Object& o = s->objects[idx];
      h.length.add(o.length);
      h.width.add(o.width);
      h.speed.add(o.speed);
      double nearest = std::numeric_limits<double>::infinity();
      for (int other : vehicles) {
        if (other == idx) continue;
        nearest = std::min(nearest, (o.position() - s->objects[other].position()).norm());
      }
      if (std::isfinite(nearest)) h.nearest_distance.add(nearest);

      double best_d = std::numeric_limits<double>::infinity();
      Vec2 best_tan{1, 0};
      for (const Lane& lane : s->lanes) {
        const PolylineHit hit = closest_on_polyline(lane.points, o.position());
        if (hit.distance < best_d) {
          best_d = hit.distance;
          best_tan = hit.tangent;
        }
      }
      if (best_d <= 1.5) {
        h.lateral_deviation.add(best_d);
        const double ang =
            wrap_angle(o.heading() - std::atan2(best_tan.y, best_tan.x)) * 180.0 / M_PI;
        h.angular_deviation.add(ang);
      }
    }
  }
  return h;
}

BehaviourHistograms behaviour_jsd_features(const std::vector<RolloutTrace>& rollouts) {
  BehaviourHistograms h{
      Histogram::with_bins(0, 30, 200), Histogram::with_bins(-50, 50, 200),
      Histogram::with_bins(-10, 10, 200), Histogram::with_bins(0, 40, 200)};
  for (const RolloutTrace& r : rollouts) {
    if (r.frames.size() < 2)
      throw std::invalid_argument("behaviour features: rollout needs >= 2 timesteps");
    const std::size_t n_agents = r.frames[0].size();
    for (std::size_t a = 0; a < n_agents; ++a) {
      std::vector<double> speeds(r.frames.size(), 0.0);
      std::vector<bool> has_speed(r.frames.size(), false);
      for (std::size_t t = 0; t + 1 < r.frames.size(); ++t) {
        const auto& s0 = r.frames[t][a];
        const auto& s1 = r.frames[t + 1][a];
        if (!s0.valid || !s1.valid) continue;
        const double spd = (s1.pos - s0.pos).norm() / r.dt;
        speeds[t] = spd;
        has_speed[t] = true;
        h.lin_speed.add(spd);
        h.ang_speed.add(wrap_angle(s1.heading - s0.heading) / r.dt * 180.0 / M_PI);
      }
      for (std::size_t t = 0; t + 1 < r.frames.size(); ++t)
        if (has_speed[t] && t + 1 < has_speed.size() && has_speed[t + 1])
          h.accel.add((speeds[t + 1] - speeds[t]) / r.dt);
    }
    for (std::size_t t = 0; t < r.frames.size(); ++t) {
      for (std::size_t a = 0; a < r.frames[t].size(); ++a) {
        if (!r.frames[t][a].valid) continue;
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < r.frames[t].size(); ++b) {
          if (a == b || !r.frames[t][b].valid) continue;
          nearest = std::min(nearest, (r.frames[t][a].pos - r.frames[t][b].pos).norm());
        }
        if (std::isfinite(nearest)) h.nearest.add(nearest);
      }
    }
  }
  return h;
}

namespace {

double longest_path_from(const std::vector<double>& lane_len,
                         const std::vector<std::vector<int>>& succ_of, int lane,
                         std::vector<bool>& on_path) {
  on_path[lane] = true;
  double best = 0.0;
  for (int next : succ_of[lane]) {
    if (on_path[next]) continue;  // cycle guard
    best = std::max(best, longest_path_from(lane_len, succ_of, next, on_path));
  }
  on_path[lane] = false;
  return lane_len[lane] + best;
}

}  // namespace

double route_length(const Scene& scene) {
  if (scene.lanes.empty()) {
    log_warn("route_length: scene has no lanes");
    return 0.0;
  }
  int origin_lane = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < scene.num_lanes(); ++i) {
    const double d = closest_on_polyline(scene.lanes[i].points, {0, 0}).distance;
    if (d < best) {
      best = d;
      origin_lane = i;
    }
  }
  if (best > 5.0) {
    log_warn("route_length: no lane within 5 m of the origin");
    return 0.0;
  }
  std::vector<double> lane_len(scene.num_lanes());
  for (int i = 0; i < scene.num_lanes(); ++i) lane_len[i] = scene.lanes[i].arclength();
  std::vector<std::vector<int>> succ_of(scene.num_lanes());
  for (auto [a, b] : scene.adjacency.successor) succ_of[a].push_back(b);
  std::vector<bool> on_path(scene.num_lanes(), false);
  return longest_path_from(lane_len, succ_of, origin_lane, on_path);
}

std::optional<double> endpoint_distance(const Scene& scene) {
  if (scene.adjacency.successor.empty()) return std::nullopt;
  double sum = 0.0;
  for (auto [i, j] : scene.adjacency.successor)
    sum += (scene.lanes[i].points.back() - scene.lanes[j].points.front()).norm();
  return sum / static_cast<double>(scene.adjacency.successor.size());
}

bool scene_has_collision(const Scene& scene) {
  for (int i = 0; i < scene.num_objects(); ++i)
    for (int j = i + 1; j < scene.num_objects(); ++j)
      if (obb_overlap(scene.objects[i].box(), scene.objects[j].box())) return true;
  return false;
}

double collision_rate_percent(const std::vector<const Scene*>& scenes) {
  if (scenes.empty()) return 0.0;
  int hits = 0;
  for (const Scene* s : scenes)
    if (scene_has_collision(*s)) ++hits;
  return 100.0 * hits / static_cast<double>(scenes.size());
}

std::vector<double> sym_eig(const tc::Tensor& m, tc::Tensor* vectors) {
  const int n = m.rows();
  if (m.cols() != n) throw std::invalid_argument("sym_eig: square matrix required");
  tc::Tensor a = m;
  tc::Tensor v = tc::Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-22) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = a.at(i, i);
  if (vectors) *vectors = v;
  return eig;
}

namespace {

tc::Tensor sqrtm_psd(const tc::Tensor& m) {
  tc::Tensor vecs;
  std::vector<double> eig = sym_eig(m, &vecs);
  const int n = m.rows();
  tc::Tensor out = tc::Tensor::zeros({n, n});
  for (int k = 0; k < n; ++k) {
    const double s = std::sqrt(std::max(eig[k], 1e-10));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) += s * vecs.at(i, k) * vecs.at(j, k);
  }
  return out;
}

}  // namespace

double gaussian_frechet(const tc::Tensor& mu1, const tc::Tensor& cov1,
                        const tc::Tensor& mu2, const tc::Tensor& cov2) {
  const int d = mu1.cols();
  double mean_term = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = mu1.at(0, j) - mu2.at(0, j);
    mean_term += diff * diff;
  }
  const tc::Tensor s1_half = sqrtm_psd(cov1);
  tc::Tensor inner = tc::matmul_vals(tc::matmul_vals(s1_half, cov2), s1_half);
  // symmetrize against round-off
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (inner.at(i, j) + inner.at(j, i));
      inner.at(i, j) = avg;
      inner.at(j, i) = avg;
    }
  const std::vector<double> eig = sym_eig(inner);
  double tr_sqrt = 0.0;
  for (double e : eig) tr_sqrt += std::sqrt(std::max(e, 0.0));
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < d; ++i) {
    tr1 += cov1.at(i, i);
    tr2 += cov2.at(i, i);
  }
  const double fd2 = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
  return std::sqrt(std::max(fd2, 0.0));
}

double embedding_frechet(const tc::Tensor& a, const tc::Tensor& b, double shrinkage) {
  const int d = a.cols();
  if (b.cols() != d) throw std::invalid_argument("embedding_frechet: dim mismatch");
  auto moments = [&](const tc::Tensor& x) {
    const int n = x.rows();
    tc::Tensor mu = tc::Tensor::zeros({1, d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mu.at(0, j) += x.at(i, j) / n;
    tc::Tensor cov = tc::Tensor::zeros({d, d});
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < d; ++p) {
        const double cp = x.at(i, p) - mu.at(0, p);
        for (int q = 0; q < d; ++q)
          cov.at(p, q) += cp * (x.at(i, q) - mu.at(0, q)) / denom;
      }
    if (n <= d) {
      log_warn("embedding_frechet: fewer samples than dims, covariance shrinkage applied");
      for (int p = 0; p < d; ++p) cov.at(p, p) += shrinkage;
    }
    return std::make_pair(mu, cov);
  };
  const auto [mu1, cov1] = moments(a);
  const auto [mu2, cov2] = moments(b);
  return gaussian_frechet(mu1, cov1, mu2, cov2);
}

namespace {

MetricValue make_metric(std::optional<double> raw, double scale, std::int64_t n) {
  MetricValue v;
  if (!raw.has_value()) {
    v.missing = true;
    return v;
  }
  v.raw = *raw;
  v.scaled = *raw * scale;
  v.n_samples = n;
  return v;
}

}  // namespace

MetricsReport compare_scene_sets(const std::vector<const Scene*>& reference,
                                 const std::vector<const Scene*>& candidate) {
  MetricsReport report;
  const UrbanFeatures fr = urban_planning_features(reference);
  const UrbanFeatures fc = urban_planning_features(candidate);
  report["urban_connectivity_fd"] =
      make_metric(frechet_1d(fr.connectivity, fc.connectivity), 10.0,
                  static_cast<std::int64_t>(fc.connectivity.size()));
  report["urban_density_fd"] = make_metric(frechet_1d(fr.density, fc.density), 1.0,
                                           static_cast<std::int64_t>(fc.density.size()));
  report["urban_reach_fd"] = make_metric(frechet_1d(fr.reach, fc.reach), 1.0,
                                         static_cast<std::int64_t>(fc.reach.size()));
  report["urban_convenience_fd"] =
      make_metric(frechet_1d(fr.convenience, fc.convenience), 10.0,
                  static_cast<std::int64_t>(fc.convenience.size()));

  const AgentHistograms hr = agent_jsd_features(reference);
  const AgentHistograms hc = agent_jsd_features(candidate);
  auto jsd_metric = [](const Histogram& p, const Histogram& q, double scale) {
    MetricValue v;
    if (p.total() <= 0 || q.total() <= 0) {
      v.missing = true;
      return v;
    }
    v.raw = jsd(p, q);
    v.scaled = v.raw * scale;
    v.n_samples = static_cast<std::int64_t>(q.total());
    return v;
  };
  report["agent_nearest_distance_jsd"] = jsd_metric(hr.nearest_distance, hc.nearest_distance, 10.0);
  report["agent_lateral_deviation_jsd"] = jsd_metric(hr.lateral_deviation, hc.lateral_deviation, 10.0);
  report["agent_angular_deviation_jsd"] = jsd_metric(hr.angular_deviation, hc.angular_deviation, 100.0);
  report["agent_length_jsd"] = jsd_metric(hr.length, hc.length, 100.0);
  report["agent_width_jsd"] = jsd_metric(hr.width, hc.width, 100.0);
  report["agent_speed_jsd"] = jsd_metric(hr.speed, hc.speed, 100.0);

  // connectivity-degree distribution divergence between the two sets
  Histogram deg_r = Histogram::with_bins(0, 16, 16);
  Histogram deg_c = Histogram::with_bins(0, 16, 16);
  for (double v : fr.connectivity) deg_r.add(v);
  for (double v : fc.connectivity) deg_c.add(v);
  report["connectivity_degree_jsd"] = jsd_metric(deg_r, deg_c, 1.0);

  // candidate-side scalar metrics
  {
    std::vector<double> lengths;
    for (const Scene* s : candidate) lengths.push_back(route_length(*s));
    double mean = 0.0;
    for (double l : lengths) mean += l;
    if (!lengths.empty()) mean /= lengths.size();
    report["route_length_mean"] =
        make_metric(mean, 1.0, static_cast<std::int64_t>(lengths.size()));
  }
  {
    double sum = 0.0;
    std::int64_t n = 0;
    for (const Scene* s : candidate) {
      const auto d = endpoint_distance(*s);
      if (d.has_value()) {
        sum += *d;
        ++n;
      }
    }
    report["endpoint_distance_mean"] =
        make_metric(n > 0 ? std::optional<double>(sum / n) : std::nullopt, 1.0, n);
  }
  report["collision_rate_percent"] = make_metric(collision_rate_percent(candidate), 1.0,
                                                 static_cast<std::int64_t>(candidate.size()));
  return report;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  for (const auto& [name, v] : report) {
    if (v.missing) {
      j[name] = {{"missing", true}};
    } else {
      j[name] = {{"raw", v.raw}, {"scaled", v.scaled}, {"n_samples", v.n_samples}};
    }
  }
  return j;
}

std::string report_to_table(const MetricsReport& report) {
  std::ostringstream os;
  os << "metric                              raw         scaled      n\n";
  os << "------------------------------------------------------------\n";
  for (const auto& [name, v] : report) {
    char line[160];
    if (v.missing) {
      std::snprintf(line, sizeof(line), "%-34s %-23s\n", name.c_str(), "(missing)");
    } else {
      std::snprintf(line, sizeof(line), "%-34s %-11.4f %-11.4f %lld\n", name.c_str(),
                    v.raw, v.scaled, static_cast<long long>(v.n_samples));
    }
    os << line;
  }
  return os.str();
}

}  // namespace lanesmith
