#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "lanesmith/corpus.hpp"
#include "lanesmith/scene_json.hpp"
#include "lanesmith/scene_ops.hpp"

using namespace lanesmith;

namespace {

Lane straight_lane(Vec2 a, Vec2 b, LaneType type = LaneType::kCenterline) {
  Lane lane;
  lane.points = resample_polyline({a, b}, kLanePoints);
  lane.type = type;
  return lane;
}

Object vehicle_at(double x, double y, double heading = 0.0,
                  ObjectClass cls = ObjectClass::kVehicle) {
  Object o;
  o.x = x;
  o.y = y;
  o.cos_h = std::cos(heading);
  o.sin_h = std::sin(heading);
  o.cls = cls;
  return o;
}

}  // namespace

TEST_CASE("resample_polyline basics") {
  Polyline seg = resample_polyline({{0, 0}, {1, 0}}, 3);
  REQUIRE(seg.size() == 3);
  CHECK(seg[0].x == 0.0);
  CHECK(seg[1].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(seg[2].x == 1.0);

  // identity on an already-uniform polyline
  Polyline uniform;
  for (int i = 0; i < 7; ++i) uniform.push_back({i * 2.0, 1.0});
  Polyline re = resample_polyline(uniform, 7);
  for (int i = 0; i < 7; ++i) {
    CHECK(std::abs(re[i].x - uniform[i].x) < 1e-12);
    CHECK(std::abs(re[i].y - uniform[i].y) < 1e-12);
  }

  // quarter circle: arc spacing uniform within 1e-3
  Polyline arc;
  for (int i = 0; i <= 256; ++i) {
    const double a = M_PI / 2.0 * i / 256.0;
    arc.push_back({std::cos(a), std::sin(a)});
  }
  Polyline rs = resample_polyline(arc, 20);
  const double expect = polyline_length(arc) / 19.0;
  for (std::size_t i = 1; i < rs.size(); ++i) {
    const double d = (rs[i] - rs[i - 1]).norm();
    CHECK(std::abs(d - expect) < 1e-3);
  }

  CHECK_THROWS(resample_polyline({{0, 0}}, 5));
  CHECK_THROWS(resample_polyline({{1, 1}, {1, 1}}, 5));
}

TEST_CASE("crop_fov clips and resamples") {
  Scene scene;
  scene.lanes.push_back(straight_lane({-50, 0}, {50, 0}));
  scene.objects.push_back(vehicle_at(0, 0, 0, ObjectClass::kEgo));
  scene.objects.push_back(vehicle_at(40, 0));  // outside the box
  scene.objects.push_back(vehicle_at(10, 5));

  CropResult res = crop_fov(scene, SE2{}, kFovHalfExtent);
  REQUIRE(res.scene.num_lanes() == 1);
  const Lane& lane = res.scene.lanes[0];
  REQUIRE(static_cast<int>(lane.points.size()) == kLanePoints);
  CHECK(std::abs(lane.points.front().x + 32.0) < 1e-6);
  CHECK(std::abs(lane.points.back().x - 32.0) < 1e-6);
  // equidistant spacing
  const double step = 64.0 / (kLanePoints - 1);
  for (int i = 1; i < kLanePoints; ++i)
    CHECK(std::abs((lane.points[i] - lane.points[i - 1]).norm() - step) < 1e-9);
  CHECK(res.scene.num_objects() == 2);  // the (40, 0) object was dropped
  CHECK(res.object_source == std::vector<int>({0, 2}));
}

TEST_CASE("crop_fov identity on an inside scene and empty-result error") {
  Scene scene;
  scene.lanes.push_back(straight_lane({-20, 3}, {20, 3}));
  scene.objects.push_back(vehicle_at(1, 2, 0.4, ObjectClass::kEgo));
  CropResult res = crop_fov(scene, SE2{}, kFovHalfExtent);
  REQUIRE(res.scene.num_lanes() == 1);
  CHECK(hausdorff_distance(res.scene.lanes[0].points, scene.lanes[0].points) < 1e-9);
  CHECK(res.scene.objects[0].x == doctest::Approx(1.0));

  Scene far;
  far.lanes.push_back(straight_lane({100, 100}, {120, 100}));
  CHECK_THROWS(crop_fov(far, SE2{}, kFovHalfExtent));
}

TEST_CASE("crop_fov keeps successor edges across surviving pieces") {
  Scene scene;
  scene.lanes.push_back(straight_lane({-20, 0}, {0, 0}));
  scene.lanes.push_back(straight_lane({0, 0}, {20, 0}));
  scene.adjacency.add_successor(0, 1);
  CropResult res = crop_fov(scene, SE2{}, kFovHalfExtent);
  REQUIRE(res.scene.num_lanes() == 2);
  CHECK(res.scene.adjacency.successor.size() == 1);
}

TEST_CASE("merge_degree2_lanes merges chains, keeps forks, flags loops") {
  // chain A -> B -> C
  {
    Scene s;
    s.lanes.push_back(straight_lane({-30, 0}, {-10, 0}));
    s.lanes.push_back(straight_lane({-10, 0}, {10, 0}));
    s.lanes.push_back(straight_lane({10, 0}, {30, 0}));
    s.adjacency.add_successor(0, 1);
    s.adjacency.add_successor(1, 2);
    Scene m = merge_degree2_lanes(s);
    REQUIRE(m.num_lanes() == 1);
    CHECK(m.adjacency.successor.empty());
    CHECK(std::abs(m.lanes[0].points.front().x + 30.0) < 1e-9);
    CHECK(std::abs(m.lanes[0].points.back().x - 30.0) < 1e-9);
    CHECK_FALSE(m.merged_loop);
  }
  // fork A -> {B, C}: A has two successors, nothing merges
  {
    Scene s;
    s.lanes.push_back(straight_lane({-30, 0}, {0, 0}));
    s.lanes.push_back(straight_lane({0, 0}, {30, 5}));
    s.lanes.push_back(straight_lane({0, 0}, {30, -5}));
    s.adjacency.add_successor(0, 1);
    s.adjacency.add_successor(0, 2);
    Scene m = merge_degree2_lanes(s);
    CHECK(m.num_lanes() == 3);
    CHECK(m.adjacency.successor.size() == 2);
  }
  // pure degree-2 cycle collapses to one loop lane with a flag
  {
    Scene s;
    s.lanes.push_back(straight_lane({0, 0}, {10, 0}));
    s.lanes.push_back(straight_lane({10, 0}, {5, 8}));
    s.lanes.push_back(straight_lane({5, 8}, {0, 0}));
    s.adjacency.add_successor(0, 1);
    s.adjacency.add_successor(1, 2);
    s.adjacency.add_successor(2, 0);
    Scene m = merge_degree2_lanes(s);
    CHECK(m.num_lanes() == 1);
    CHECK(m.adjacency.successor.empty());
    CHECK(m.merged_loop);
    CHECK((m.lanes[0].points.front() - m.lanes[0].points.back()).norm() < 1e-9);
  }
}

TEST_CASE("partition_scene splits crossing lanes") {
  // untouched when entirely at x < 0
  {
    Scene s;
    s.lanes.push_back(straight_lane({-30, 0}, {-5, 0}));
    PartitionResult r = partition_scene(s);
    CHECK(r.scene.num_lanes() == 1);
    CHECK(r.scene.partitioned);
    CHECK(r.scene.adjacency.successor.empty());
  }
  // symmetric split with a successor edge at (0, 0)
  {
    Scene s;
    s.lanes.push_back(straight_lane({-10, 0}, {10, 0}));
    PartitionResult r = partition_scene(s);
    REQUIRE(r.scene.num_lanes() == 2);
    REQUIRE(r.scene.adjacency.successor.size() == 1);
    auto [a, b] = r.scene.adjacency.successor[0];
    CHECK(std::abs(r.scene.lanes[a].points.back().x) < 1e-9);
    CHECK(std::abs(r.scene.lanes[b].points.front().x) < 1e-9);
    CHECK(std::abs(r.scene.lanes[a].points.back().y) < 1e-9);
    validate_scene(r.scene, {.require_ego = false});
  }
  // S-curve crossing twice -> 3 lanes, 2 new successor edges
  {
    Polyline pts;
    for (int i = 0; i <= 100; ++i) {
      const double t = -1.0 + 2.0 * i / 100.0;  // in [-1, 1]
      const double x = 10.0 * t;
      pts.push_back({x, 6.0 * std::sin(t * M_PI)});
    }
    // shift so it crosses x=0 twice: x(t) = 10 t - 8 sin(pi t) has 3 roots
    for (auto& p : pts) p.x = p.x - 8.0 * std::sin((p.x / 10.0) * M_PI);
    Scene s;
    Lane lane;
    lane.points = resample_polyline(pts, kLanePoints);
    s.lanes.push_back(lane);
    // verify construction: the resampled polyline crosses x=0 more than once
    int crossings = 0;
    for (int i = 1; i < kLanePoints; ++i)
      if ((s.lanes[0].points[i - 1].x < 0) != (s.lanes[0].points[i].x < 0)) ++crossings;
    REQUIRE(crossings >= 2);
    PartitionResult r = partition_scene(s);
    CHECK(r.scene.num_lanes() == crossings + 1);
    CHECK(static_cast<int>(r.scene.adjacency.successor.size()) == crossings);
    validate_scene(r.scene, {.require_ego = false});
  }
}

TEST_CASE("partition then merge reproduces geometry within resampling error") {
  CorpusConfig cfg;
  cfg.seed = 404;
  cfg.n_scenes = 12;
  Corpus corpus = generate_corpus(cfg);
  for (const Scene& scene : corpus.scenes) {
    PartitionResult part = partition_scene(scene);
    Scene undone = merge_degree2_lanes(part.scene);
    // every original lane matches some merged lane within 0.1 m Hausdorff
    for (const Lane& lane : scene.lanes) {
      double best = 1e18;
      for (const Lane& cand : undone.lanes)
        best = std::min(best, hausdorff_distance(lane.points, cand.points));
      CHECK(best < 0.1);
    }
  }
}

TEST_CASE("order_elements follows the recursive comparator") {
  Scene s;
  s.lanes.push_back(straight_lane({5, 0}, {25, 0}));
  s.lanes.push_back(straight_lane({0, 0}, {20, 0}));
  Ordering ord = order_elements(s);
  CHECK(ord.lanes == std::vector<int>({1, 0}));  // min-x 0 before min-x 5

  // min-x within epsilon: the smaller min-y goes first
  Scene s2;
  s2.lanes.push_back(straight_lane({0.0, 2.0}, {20, 2.0}));
  s2.lanes.push_back(straight_lane({0.3, -1.0}, {20, -1.0}));
  Ordering ord2 = order_elements(s2);
  CHECK(ord2.lanes == std::vector<int>({1, 0}));
}

TEST_CASE("order_elements is total and shuffle invariant") {
  Rng rng(2024);
  for (int rep = 0; rep < 20; ++rep) {
    Scene s;
    const int n = 50;
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(-30, 30);
      const double y = rng.uniform(-30, 30);
      const double a = rng.uniform(0, 2 * M_PI);
      s.lanes.push_back(
          straight_lane({x, y}, {x + 8 * std::cos(a), y + 8 * std::sin(a)}));
    }
    Scene canon = canonicalize_scene(s);

    // shuffle input lanes and re-canonicalize: geometry order must match
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Scene shuffled;
    for (int i = 0; i < n; ++i) shuffled.lanes.push_back(s.lanes[perm[i]]);
    Scene canon2 = canonicalize_scene(shuffled);
    REQUIRE(canon.num_lanes() == canon2.num_lanes());
    for (int i = 0; i < n; ++i) {
      CHECK(canon.lanes[i].points.front().x ==
            doctest::Approx(canon2.lanes[i].points.front().x).epsilon(1e-12));
      CHECK(canon.lanes[i].points.front().y ==
            doctest::Approx(canon2.lanes[i].points.front().y).epsilon(1e-12));
    }
  }
}

TEST_CASE("partitioned ordering puts all FN elements before FP") {
  Rng rng(77);
  CorpusConfig cfg;
  cfg.seed = 505;
  cfg.n_scenes = 20;
  Corpus corpus = generate_corpus(cfg);
  for (const Scene& scene : corpus.scenes) {
    Scene part = make_partitioned_variant(scene);
    int last_fn_lane = -1, first_fp_lane = part.num_lanes();
    for (int i = 0; i < part.num_lanes(); ++i) {
      if (lane_region(part.lanes[i]) == SceneRegion::kFN)
        last_fn_lane = std::max(last_fn_lane, i);
      else
        first_fp_lane = std::min(first_fp_lane, i);
    }
    CHECK(last_fn_lane < first_fp_lane);
    int last_fn_obj = -1, first_fp_obj = part.num_objects();
    for (int i = 0; i < part.num_objects(); ++i) {
      if (object_region(part.objects[i]) == SceneRegion::kFN)
        last_fn_obj = std::max(last_fn_obj, i);
      else
        first_fp_obj = std::min(first_fp_obj, i);
    }
    CHECK(last_fn_obj < first_fp_obj);
  }
}

TEST_CASE("normalize_features maps range ends and round-trips") {
  CorpusConfig cfg;
  cfg.seed = 1;
  cfg.n_scenes = 30;
  Corpus corpus = generate_corpus(cfg);
  FeatureStats stats = compute_feature_stats(corpus.scenes);

  CHECK(normalize_value(stats.speed.min, stats.speed) == doctest::Approx(-1.0));
  CHECK(normalize_value((stats.speed.min + stats.speed.max) / 2.0, stats.speed) ==
        doctest::Approx(0.0));

  double worst = 0.0;
  for (const Scene& scene : corpus.scenes) {
    SceneFeatures f = normalize_features(scene, stats);
    CHECK(f.clipped == 0);  // stats were computed over this corpus
    for (int i = 0; i < scene.num_lanes(); ++i) {
      Lane lane = denormalize_lane(f.lanes, i, f.lane_types[i], stats);
      for (int k = 0; k < kLanePoints; ++k)
        worst = std::max(worst, (lane.points[k] - scene.lanes[i].points[k]).norm());
    }
    for (int i = 0; i < scene.num_objects(); ++i) {
      Object o = denormalize_object(f.objects, i, f.object_classes[i], stats);
      worst = std::max(worst, std::abs(o.x - scene.objects[i].x));
      worst = std::max(worst, std::abs(o.speed - scene.objects[i].speed));
      worst = std::max(worst, std::abs(o.length - scene.objects[i].length));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("degenerate field maps to zero") {
  FieldRange r{3.0, 3.0};
  CHECK(normalize_value(3.0, r) == 0.0);
}

TEST_CASE("scene json round trip is lossless") {
  CorpusConfig cfg;
  cfg.seed = 9;
  cfg.n_scenes = 8;
  Corpus corpus = generate_corpus(cfg);
  for (const Scene& scene : corpus.scenes) {
    const auto j = scene_to_json(scene);
    Scene back = scene_from_json(j);
    const auto j2 = scene_to_json(back);
    CHECK(j.dump() == j2.dump());  // byte-identical serialization
    REQUIRE(back.num_lanes() == scene.num_lanes());
    for (int i = 0; i < scene.num_lanes(); ++i)
      for (int k = 0; k < kLanePoints; ++k) {
        CHECK(back.lanes[i].points[k].x == scene.lanes[i].points[k].x);
        CHECK(back.lanes[i].points[k].y == scene.lanes[i].points[k].y);
      }
    CHECK(back.adjacency.successor == scene.adjacency.successor);
    CHECK(back.adjacency.left == scene.adjacency.left);
  }
}

TEST_CASE("scene json rejects malformed input") {
  nlohmann::json j = scene_to_json(Scene{});
  j["bogus_key"] = 1;
  CHECK_THROWS(scene_from_json(j));

  nlohmann::json v = scene_to_json(Scene{});
  v["version"] = 2;
  CHECK_THROWS(scene_from_json(v));

  // inconsistent predecessor matrix
  Scene s;
  s.lanes.push_back(straight_lane({-10, 0}, {0, 0}));
  s.lanes.push_back(straight_lane({0, 0}, {10, 0}));
  s.adjacency.add_successor(0, 1);
  nlohmann::json js = scene_to_json(s);
  js["adjacency"]["predecessor"] = {{0, 1}};  // should be [[1, 0]]
  CHECK_THROWS(scene_from_json(js));
  js["adjacency"]["predecessor"] = {{1, 0}};
  CHECK_NOTHROW(scene_from_json(js));
}

TEST_CASE("corpus generation is deterministic and satisfies invariants") {
  CorpusConfig cfg;
  cfg.seed = 7;
  cfg.n_scenes = 60;
  Corpus a = generate_corpus(cfg);
  Corpus b = generate_corpus(cfg);
  REQUIRE(a.scenes.size() == b.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i)
    CHECK(scene_to_json(a.scenes[i]).dump() == scene_to_json(b.scenes[i]).dump());

  // count histogram is non-degenerate
  std::set<int> n_obj, n_lane;
  for (const Scene& s : a.scenes) {
    n_obj.insert(s.num_objects());
    n_lane.insert(s.num_lanes());
  }
  CHECK(n_obj.size() >= 5);
  CHECK(n_lane.size() >= 5);
}

TEST_CASE("all corpus agents sit within 1.5 m of a centerline") {
  CorpusConfig cfg;
  cfg.seed = 21;
  cfg.n_scenes = 100;
  Corpus corpus = generate_corpus(cfg);
  int total = 0;
  for (const Scene& s : corpus.scenes) {
    for (const Object& o : s.objects) {
      double best = 1e18;
      for (const Lane& lane : s.lanes)
        best = std::min(best, closest_on_polyline(lane.points, o.position()).distance);
      CHECK(best <= 1.5);
      ++total;
    }
  }
  CHECK(total > 100);
}

TEST_CASE("count distribution: point mass, normalization, sampling") {
  CorpusConfig cfg;
  cfg.seed = 3;
  cfg.n_scenes = 1;
  cfg.min_agents = 3;
  cfg.max_agents = 3;
  Corpus corpus = generate_corpus(cfg);
  std::vector<const Scene*> one = {&corpus.scenes[0]};
  CountDistribution d(one);
  REQUIRE(d.joint().size() == 1);
  CHECK(d.joint().begin()->second == doctest::Approx(1.0));

  CorpusConfig big;
  big.seed = 5;
  big.n_scenes = 120;
  Corpus corpus2 = generate_corpus(big);
  std::vector<const Scene*> all;
  for (const Scene& s : corpus2.scenes) all.push_back(&s);
  CountDistribution joint(all);
  double total = 0.0;
  for (const auto& [k, p] : joint.joint()) total += p;
  CHECK(std::abs(total - 1.0) < 1e-12);

  // sampling reproduces the histogram within total variation 0.02
  Rng rng(99);
  std::map<std::pair<int, int>, double> freq;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) freq[joint.sample(rng)] += 1.0 / draws;
  double tv = 0.0;
  for (const auto& [k, p] : joint.joint()) tv += std::abs(p - freq[k]);
  for (const auto& [k, f] : freq)
    if (!joint.joint().count(k)) tv += f;
  CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("corpus save and load round trip") {
  CorpusConfig cfg;
  cfg.seed = 31;
  cfg.n_scenes = 5;
  Corpus corpus = generate_corpus(cfg);
  const std::string dir = "corpus_test_dir";
  save_corpus(corpus, dir);
  Corpus loaded = load_corpus(dir);
  REQUIRE(loaded.scenes.size() == corpus.scenes.size());
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i)
    CHECK(scene_to_json(loaded.scenes[i]).dump() ==
          scene_to_json(corpus.scenes[i]).dump());
  CHECK(loaded.split == corpus.split);
  std::filesystem::remove_all(dir);
}

TEST_CASE("adjacency invariants survive corpus preprocessing") {
  CorpusConfig cfg;
  cfg.seed = 66;
  cfg.n_scenes = 30;
  Corpus corpus = generate_corpus(cfg);
  for (const Scene& s : corpus.scenes) {
    s.adjacency.validate(s.num_lanes());
    Scene part = make_partitioned_variant(s);
    part.adjacency.validate(part.num_lanes());
  }
}
