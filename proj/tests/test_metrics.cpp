#include <doctest.h>

#include <cmath>
#include <limits>

#include "lanesmith/corpus.hpp"
#include "lanesmith/metrics.hpp"
#include "lanesmith/rng.hpp"
#include "lanesmith/scene_ops.hpp"

using namespace lanesmith;

namespace {

Lane lane_between(Vec2 a, Vec2 b) {
  Lane lane;
  lane.points = resample_polyline({a, b}, kLanePoints);
  return lane;
}

// all-pairs shortest/longest simple paths by exhaustive DFS over lanes
struct BruteGraph {
  std::vector<double> length;
  std::vector<std::vector<int>> succ;

  void dfs_longest(int lane, std::vector<bool>& used, double acc, double& best) const {
    used[lane] = true;
    acc += length[lane];
    best = std::max(best, acc);
    for (int nxt : succ[lane])
      if (!used[nxt]) dfs_longest(nxt, used, acc, best);
    used[lane] = false;
  }
  double longest_from(int lane) const {
    std::vector<bool> used(length.size(), false);
    double best = 0.0;
    dfs_longest(lane, used, 0.0, best);
    return best;
  }
};

// shortest node-to-node distance by exhaustive simple-path enumeration
void enum_paths(const LaneGraph& g, const std::vector<std::vector<int>>& out_adj,
                int node, int target, std::vector<bool>& used_edge, double acc,
                double& best) {
  if (node == target && acc > 0.0) {
    best = std::min(best, acc);
    return;
  }
  if (node == target && acc == 0.0) best = std::min(best, 0.0);
  for (int e : out_adj[node]) {
    if (used_edge[e]) continue;
    used_edge[e] = true;
    enum_paths(g, out_adj, g.edges[e].to, target, used_edge, acc + g.edges[e].length, best);
    used_edge[e] = false;
  }
}

}  // namespace

TEST_CASE("lane graph keypoints: chain, intersection, ring") {
  // single straight chain of two linked lanes -> 2 endpoints of degree 1
  {
    Scene s;
    s.lanes.push_back(lane_between({-20, 0}, {0, 0}));
    s.lanes.push_back(lane_between({0, 0}, {20, 0}));
    s.adjacency.add_successor(0, 1);
    LaneGraph g = build_lane_graph(s);
    auto kp = extract_keypoints(g);
    REQUIRE(kp.size() == 2);
    CHECK(kp[0].second == 1);
    CHECK(kp[1].second == 1);
  }
  // X intersection: 4 in, 4 out merged at the center -> degree 8 keypoint
  {
    Scene s;
    const Vec2 c{0, 0};
    const Vec2 arms[4] = {{20, 0}, {0, 20}, {-20, 0}, {0, -20}};
    for (const Vec2& a : arms) s.lanes.push_back(lane_between(a, c));
    for (const Vec2& a : arms) s.lanes.push_back(lane_between(c, a * 0.99 + Vec2{1, 1}));
    LaneGraph g = build_lane_graph(s);
    auto kp = extract_keypoints(g);
    int center_degree = 0;
    for (auto [node, deg] : kp) center_degree = std::max(center_degree, deg);
    CHECK(center_degree == 8);
  }
  // ring of degree-2 nodes -> 0 keypoints
  {
    Scene s;
    const int n = 6;
    for (int i = 0; i < n; ++i) {
      const double a0 = 2 * M_PI * i / n;
      const double a1 = 2 * M_PI * (i + 1) / n;
      s.lanes.push_back(lane_between({10 * std::cos(a0), 10 * std::sin(a0)},
                                     {10 * std::cos(a1), 10 * std::sin(a1)}));
      s.adjacency.add_successor(i, (i + 1) % n);
    }
    LaneGraph g = build_lane_graph(s);
    CHECK(extract_keypoints(g).empty());
  }
}

TEST_CASE("urban planning features: two disconnected lanes") {
  Scene s;
  s.lanes.push_back(lane_between({-25, 3}, {-5, 3}));   // 20 m
  s.lanes.push_back(lane_between({5, -3}, {30, -3}));   // 25 m
  LaneGraph g = build_lane_graph(s);
  UrbanFeatures f = urban_planning_features(g);
  REQUIRE(f.connectivity.size() == 4);
  for (double d : f.connectivity) CHECK(d == 1.0);
  REQUIRE(f.density.size() == 1);
  CHECK(f.density[0] == 4.0);
  REQUIRE(f.reach.size() == 4);
  for (double r : f.reach) CHECK(r == 1.0);
  REQUIRE(f.convenience.size() == 2);
  std::sort(f.convenience.begin(), f.convenience.end());
  CHECK(f.convenience[0] == doctest::Approx(20.0));
  CHECK(f.convenience[1] == doctest::Approx(25.0));
}

TEST_CASE("urban planning features: single lane convenience") {
  Scene s;
  s.lanes.push_back(lane_between({-10, 0}, {10, 0}));  // 20 m through origin
  UrbanFeatures f = urban_planning_features(build_lane_graph(s));
  REQUIRE(f.convenience.size() == 1);
  CHECK(f.convenience[0] == doctest::Approx(20.0));
}

TEST_CASE("dijkstra convenience equals brute-force enumeration on random graphs") {
  Rng rng(1234);
  for (int rep = 0; rep < 200; ++rep) {
    // random sparse lane set with coincident junction points
    const int n_nodes = rng.uniform_int(3, 6);
    std::vector<Vec2> nodes;
    for (int i = 0; i < n_nodes; ++i)
      nodes.push_back({rng.uniform(-25, 25), rng.uniform(-25, 25)});
    // ensure nodes are not accidentally merged by the 0.5 m tolerance
    bool ok = true;
    for (int i = 0; i < n_nodes && ok; ++i)
      for (int j = i + 1; j < n_nodes; ++j)
        if ((nodes[i] - nodes[j]).norm() < 2.0) ok = false;
    if (!ok) continue;
    Scene s;
    const int n_edges = rng.uniform_int(2, 10);
    for (int e = 0; e < n_edges; ++e) {
      const int a = rng.uniform_int(0, n_nodes - 1);
      int b = rng.uniform_int(0, n_nodes - 1);
      if (a == b) b = (b + 1) % n_nodes;
      s.lanes.push_back(lane_between(nodes[a], nodes[b]));
    }
    LaneGraph g = build_lane_graph(s);
    const auto out_adj = g.out_adjacency();
    const auto keypoints = extract_keypoints(g);
    UrbanFeatures f = urban_planning_features(g);
    std::vector<double> brute;
    for (auto [a, da] : keypoints)
      for (auto [b, db] : keypoints) {
        if (a == b) continue;
        std::vector<bool> used(g.edges.size(), false);
        double best = std::numeric_limits<double>::infinity();
        enum_paths(g, out_adj, a, b, used, 0.0, best);
        if (std::isfinite(best) && best > 0.0) brute.push_back(best);
      }
    std::sort(brute.begin(), brute.end());
    std::vector<double> got = f.convenience;
    std::sort(got.begin(), got.end());
    REQUIRE(got.size() == brute.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(brute[i]).epsilon(1e-9));
  }
}

TEST_CASE("frechet_1d basics") {
  std::vector<double> a = {1, 2, 3, 4};
  CHECK(*frechet_1d(a, a) == 0.0);
  CHECK(*frechet_1d(a, {2, 3, 4, 5}) == *frechet_1d({2, 3, 4, 5}, a));
  CHECK_FALSE(frechet_1d({}, a).has_value());

  // large samples from N(0,1) vs N(1,1): FD -> 1
  Rng rng(5);
  std::vector<double> x, y;
  for (int i = 0; i < 200000; ++i) {
    x.push_back(rng.normal());
    y.push_back(rng.normal() + 1.0);
  }
  CHECK(*frechet_1d(x, y) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("jsd: identity, disjoint supports, hand-computed case") {
  Histogram p = Histogram::with_bins(0, 3, 3);
  Histogram q = Histogram::with_bins(0, 3, 3);
  p.add(0.5);
  p.add(1.5);
  q.add(0.5);
  q.add(1.5);
  CHECK(jsd(p, q) == 0.0);

  Histogram d1 = Histogram::with_bins(0, 2, 2);
  Histogram d2 = Histogram::with_bins(0, 2, 2);
  d1.add(0.5);
  d2.add(1.5);
  CHECK(std::abs(jsd(d1, d2) - std::log(2.0)) < 1e-12);

  // hand-computed 3-bin case: p = (1/2,1/4,1/4), q = (1/4,1/4,1/2)
  Histogram hp = Histogram::with_bins(0, 3, 3);
  Histogram hq = Histogram::with_bins(0, 3, 3);
  hp.add(0.5);
  hp.add(0.5);
  hp.add(1.5);
  hp.add(2.5);
  hq.add(0.5);
  hq.add(1.5);
  hq.add(2.5);
  hq.add(2.5);
  const double m0 = (0.5 + 0.25) / 2.0, m2 = (0.25 + 0.5) / 2.0;
  const double expect =
      0.5 * (0.5 * std::log(0.5 / m0) + 0.25 * std::log(0.25 / m2)) +
      0.5 * (0.25 * std::log(0.25 / m0) + 0.5 * std::log(0.5 / m2));
  CHECK(jsd(hp, hq) == doctest::Approx(expect).epsilon(1e-12));

  Histogram other = Histogram::with_bins(0, 4, 3);
  CHECK_THROWS(jsd(p, other));
}

TEST_CASE("agent jsd features edge cases") {
  // one vehicle alone: nearest-distance feature absent
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {10, 0}));
    Object v;
    v.cls = ObjectClass::kVehicle;
    s.objects.push_back(v);
    AgentHistograms h = agent_jsd_features({&s});
    CHECK(h.nearest_distance.total() == 0.0);
    CHECK(h.length.total() == 1.0);
  }
  // vehicle exactly on the centerline and aligned: lateral 0, angular 0
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {10, 0}));
    Object v;
    v.cls = ObjectClass::kVehicle;
    v.x = 1.0;
    v.y = 0.0;
    s.objects.push_back(v);
    AgentHistograms h = agent_jsd_features({&s});
    REQUIRE(h.lateral_deviation.total() == 1.0);
    CHECK(h.lateral_deviation.counts[0] == 1.0);  // first bin = 0 deviation
    REQUIRE(h.angular_deviation.total() == 1.0);
    // 0 deg falls in the central bin of (-200, 200)/5
    CHECK(h.angular_deviation.counts[40] == 1.0);
  }
}

TEST_CASE("corpus halves are self-consistent under agent JSDs") {
  CorpusConfig cfg;
  cfg.seed = 88;
  cfg.n_scenes = 400;
  Corpus corpus = generate_corpus(cfg);
  std::vector<const Scene*> first, second;
  for (int i = 0; i < cfg.n_scenes; ++i)
    (i % 2 == 0 ? first : second).push_back(&corpus.scenes[i]);
  AgentHistograms ha = agent_jsd_features(first);
  AgentHistograms hb = agent_jsd_features(second);
  CHECK(jsd(ha.nearest_distance, hb.nearest_distance) < 0.02);
  CHECK(jsd(ha.lateral_deviation, hb.lateral_deviation) < 0.02);
  CHECK(jsd(ha.angular_deviation, hb.angular_deviation) < 0.02);
  CHECK(jsd(ha.length, hb.length) < 0.02);
  CHECK(jsd(ha.width, hb.width) < 0.02);
  CHECK(jsd(ha.speed, hb.speed) < 0.02);
}

TEST_CASE("behaviour jsd features") {
  // stationary agent: all derivatives zero
  {
    RolloutTrace r;
    r.frames.assign(10, {RolloutTrace::Snap{{3, 4}, 1.0, true}});
    BehaviourHistograms h = behaviour_jsd_features({r});
    CHECK(h.lin_speed.counts[0] == doctest::Approx(9.0));
    // zero angular speed lands in the bin right of the center of (-50, 50)
    CHECK(h.ang_speed.counts[100] == doctest::Approx(9.0));
    CHECK(h.accel.counts[100] == doctest::Approx(8.0));
  }
  // constant 5 m/s straight motion: speed mass in the 5 m/s bin
  {
    RolloutTrace r;
    for (int t = 0; t < 20; ++t)
      r.frames.push_back({RolloutTrace::Snap{{0.5 * t, 0.0}, 0.0, true}});
    BehaviourHistograms h = behaviour_jsd_features({r});
    const int bin = static_cast<int>(5.0 / 30.0 * 200);
    CHECK(h.lin_speed.counts[bin] == doctest::Approx(19.0));
  }
  // single-timestep rollout is an error
  {
    RolloutTrace r;
    r.frames.assign(1, {RolloutTrace::Snap{{0, 0}, 0.0, true}});
    CHECK_THROWS(behaviour_jsd_features({r}));
  }
}

TEST_CASE("route_length basics and enumeration oracle") {
  {
    Scene s;
    s.lanes.push_back(lane_between({-20, 0}, {20, 0}));  // 40 m through origin
    CHECK(route_length(s) == doctest::Approx(40.0));
  }
  {
    Scene s;
    s.lanes.push_back(lane_between({-5, 0}, {5, 0}));     // 10 m
    s.lanes.push_back(lane_between({5, 0}, {35, 2}));     // ~30 m branch
    s.lanes.push_back(lane_between({5, 0}, {55, -2}));    // ~50 m branch
    s.adjacency.add_successor(0, 1);
    s.adjacency.add_successor(0, 2);
    const double expect = 10.0 + std::hypot(50.0, 2.0);
    CHECK(route_length(s) == doctest::Approx(expect).epsilon(1e-9));
  }
  {
    Scene s;  // nothing near the origin
    s.lanes.push_back(lane_between({20, 20}, {30, 20}));
    CHECK(route_length(s) == 0.0);
  }
  // random DAGs vs exhaustive enumeration
  Rng rng(777);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = rng.uniform_int(2, 8);
    BruteGraph bg;
    Scene s;
    Vec2 cursor{0, 0};
    for (int i = 0; i < n; ++i) {
      const Vec2 a{rng.uniform(-3, 3) + 10.0 * i, rng.uniform(-20, 20)};
      const Vec2 b = a + Vec2{rng.uniform(5, 15), rng.uniform(-5, 5)};
      s.lanes.push_back(lane_between(i == 0 ? cursor : a, i == 0 ? b : b));
      bg.length.push_back(s.lanes.back().arclength());
    }
    bg.succ.assign(n, {});
    const int n_edges = rng.uniform_int(1, std::min(10, n * (n - 1) / 2));
    for (int e = 0; e < n_edges; ++e) {
      const int a = rng.uniform_int(0, n - 2);
      const int b = rng.uniform_int(a + 1, n - 1);  // forward edges only: a DAG
      if (!s.adjacency.has_successor(a, b)) {
        s.adjacency.add_successor(a, b);
        bg.succ[a].push_back(b);
      }
    }
    s.adjacency.sort_unique();
    // the origin lane is lane 0 by construction
    CHECK(route_length(s) == doctest::Approx(bg.longest_from(0)).epsilon(1e-9));
  }
}

TEST_CASE("route_length is monotone under path extension") {
  Scene s;
  s.lanes.push_back(lane_between({-5, 0}, {25, 0}));
  const double base = route_length(s);
  s.lanes.push_back(lane_between({25, 0}, {45, 0}));
  s.adjacency.add_successor(0, 1);
  CHECK(route_length(s) >= base);
}

TEST_CASE("endpoint_distance") {
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {0, 0}));
    s.lanes.push_back(lane_between({0, 0}, {10, 0}));
    s.adjacency.add_successor(0, 1);
    CHECK(*endpoint_distance(s) == doctest::Approx(0.0));
  }
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {0, 0}));
    s.lanes.push_back(lane_between({0.5, 0}, {10, 0}));
    s.adjacency.add_successor(0, 1);
    CHECK(*endpoint_distance(s) == doctest::Approx(0.5));
  }
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {0, 0}));
    s.lanes.push_back(lane_between({1, 0}, {10, 0}));
    s.lanes.push_back(lane_between({0, 2}, {10, 2}));
    s.lanes.push_back(lane_between({0.25, 0}, {-1, 5}));
    s.adjacency.add_successor(0, 1);
    s.adjacency.add_successor(0, 2);
    s.adjacency.add_successor(0, 3);
    const double expect = (1.0 + 2.0 + 0.25) / 3.0;
    CHECK(*endpoint_distance(s) == doctest::Approx(expect));
  }
  {
    Scene s;
    s.lanes.push_back(lane_between({-10, 0}, {0, 0}));
    CHECK_FALSE(endpoint_distance(s).has_value());
  }
}

TEST_CASE("collision SAT agrees with point-sampling oracle") {
  // identical boxes collide; far boxes don't
  {
    Scene s;
    Object a, b;
    a.cls = b.cls = ObjectClass::kVehicle;
    s.objects.push_back(a);
    s.objects.push_back(b);
    CHECK(scene_has_collision(s));
    s.objects[1].x = 100.0;
    CHECK_FALSE(scene_has_collision(s));
  }
  Rng rng(99);
  int disagreements = 0;
  int near_touch = 0;
  const int trials = 1000;
  for (int rep = 0; rep < trials; ++rep) {
    const double ang_a = rng.uniform(0, 2 * M_PI);
    Obb a{{rng.uniform(-5, 5), rng.uniform(-5, 5)},
          {std::cos(ang_a), std::sin(ang_a)},
          rng.uniform(0.5, 3.0),
          rng.uniform(0.3, 1.5)};
    const double ang = rng.uniform(0, 2 * M_PI);
    Obb b{{rng.uniform(-5, 5), rng.uniform(-5, 5)},
          {std::cos(ang), std::sin(ang)},
          rng.uniform(0.5, 3.0),
          rng.uniform(0.3, 1.5)};
    const bool sat = obb_overlap(a, b);
    // dense point sampling inside each box
    bool sampled = false;
    const int grid = 45;  // ~2000 samples per box
    for (int gx = 0; gx <= grid && !sampled; ++gx)
      for (int gy = 0; gy <= grid && !sampled; ++gy) {
        const double u = -1.0 + 2.0 * gx / grid;
        const double v = -1.0 + 2.0 * gy / grid;
        const Vec2 axa = a.axis, axn{-a.axis.y, a.axis.x};
        const Vec2 pa = a.center + axa * (u * a.half_length) + axn * (v * a.half_width);
        if (b.contains(pa)) sampled = true;
        const Vec2 bxa = b.axis, bxn{-b.axis.y, b.axis.x};
        const Vec2 pb = b.center + bxa * (u * b.half_length) + bxn * (v * b.half_width);
        if (a.contains(pb)) sampled = true;
      }
    if (sat != sampled) {
      ++disagreements;
      // disagreements must be near-touching configurations only
      bool shrunk_agrees;
      {
        Obb a2 = a;
        a2.half_length *= 0.98;
        a2.half_width *= 0.98;
        shrunk_agrees = obb_overlap(a2, b) == sampled;
      }
      if (shrunk_agrees) ++near_touch;
    }
  }
  CHECK(disagreements <= trials * 0.005);
  CHECK(disagreements == near_touch);
}

TEST_CASE("gaussian frechet matches the diagonal closed form") {
  const int d = 6;
  Rng rng(3);
  tc::Tensor mu1 = tc::Tensor::zeros({1, d});
  tc::Tensor mu2 = tc::Tensor::zeros({1, d});
  tc::Tensor c1 = tc::Tensor::zeros({d, d});
  tc::Tensor c2 = tc::Tensor::zeros({d, d});
  double expect2 = 0.0;
  for (int j = 0; j < d; ++j) {
    mu1.at(0, j) = rng.uniform(-2, 2);
    mu2.at(0, j) = rng.uniform(-2, 2);
    const double v1 = rng.uniform(0.2, 3.0);
    const double v2 = rng.uniform(0.2, 3.0);
    c1.at(j, j) = v1;
    c2.at(j, j) = v2;
    const double dm = mu1.at(0, j) - mu2.at(0, j);
    expect2 += dm * dm + (std::sqrt(v1) - std::sqrt(v2)) * (std::sqrt(v1) - std::sqrt(v2));
  }
  const double fd = gaussian_frechet(mu1, c1, mu2, c2);
  CHECK(fd == doctest::Approx(std::sqrt(expect2)).epsilon(1e-6));
  CHECK(gaussian_frechet(mu2, c2, mu1, c1) == doctest::Approx(fd).epsilon(1e-9));
}

TEST_CASE("embedding frechet: identical sets give ~0 and symmetry holds") {
  Rng rng(4);
  tc::Tensor a = tc::Tensor::randn({40, 8}, rng);
  CHECK(embedding_frechet(a, a) < 1e-6);
  tc::Tensor b = tc::Tensor::randn({40, 8}, rng);
  CHECK(std::abs(embedding_frechet(a, b) - embedding_frechet(b, a)) < 1e-9);
}

TEST_CASE("urban planning features invariant to lane permutation") {
  CorpusConfig cfg;
  cfg.seed = 10;
  cfg.n_scenes = 10;
  Corpus corpus = generate_corpus(cfg);
  Rng rng(42);
  for (const Scene& s : corpus.scenes) {
    UrbanFeatures f1 = urban_planning_features(build_lane_graph(s));
    std::vector<int> perm(s.num_lanes());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Scene p;
    p.partitioned = s.partitioned;
    for (int src : perm) p.lanes.push_back(s.lanes[src]);
    p.adjacency = s.adjacency.permuted(perm, s.num_lanes());
    UrbanFeatures f2 = urban_planning_features(build_lane_graph(p));
    auto sorted = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    CHECK(sorted(f1.connectivity) == sorted(f2.connectivity));
    CHECK(f1.density == f2.density);
    CHECK(sorted(f1.reach) == sorted(f2.reach));
    auto c1 = sorted(f1.convenience);
    auto c2 = sorted(f2.convenience);
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i)
      CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-9));
  }
}

TEST_CASE("metric report serializes") {
  CorpusConfig cfg;
  cfg.seed = 2;
  cfg.n_scenes = 40;
  Corpus corpus = generate_corpus(cfg);
  std::vector<const Scene*> a, b;
  for (int i = 0; i < cfg.n_scenes; ++i) (i % 2 ? a : b).push_back(&corpus.scenes[i]);
  MetricsReport r = compare_scene_sets(a, b);
  CHECK(r.count("urban_connectivity_fd") == 1);
  CHECK(r.count("agent_speed_jsd") == 1);
  const auto j = report_to_json(r);
  CHECK(j.contains("collision_rate_percent"));
  CHECK(!report_to_table(r).empty());
  // self-comparison: all divergences ~ 0
  MetricsReport self = compare_scene_sets(a, a);
  CHECK(self["agent_speed_jsd"].raw == doctest::Approx(0.0));
  CHECK(self["urban_connectivity_fd"].raw == doctest::Approx(0.0));
}
