#include "lanesmith/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"
#include "lanesmith/scene_json.hpp"
#include "lanesmith/scene_ops.hpp"

namespace lanesmith {

namespace fs = std::filesystem;
using nlohmann::json;

void CorpusConfig::validate() const {
  if (intersection_prob < 0.0 || intersection_prob > 1.0 || curve_prob < 0.0 ||
      curve_prob > 1.0 || intersection_prob + curve_prob > 1.0)
    throw std::invalid_argument("corpus: probabilities must lie in [0,1] and sum <= 1");
  if (n_scenes <= 0) throw std::invalid_argument("corpus: n_scenes must be positive");
  if (min_agents < 1 || max_agents < min_agents)
    throw std::invalid_argument("corpus: invalid agent range");
  if (max_speed < min_speed) throw std::invalid_argument("corpus: invalid speed range");
  if (lane_spacing <= 0.0) throw std::invalid_argument("corpus: invalid lane spacing");
}

namespace {

struct Network {
  std::vector<Polyline> lanes;  // dense polylines, network frame
  Adjacency adjacency;
  std::vector<int> ego_candidates;  // lanes suitable for the ego
  // For junction approaches: how far before the lane end the ego may sit.
  bool junction = false;
};

Polyline line_pts(Vec2 a, Vec2 b, double step = 3.0) {
  const double len = (b - a).norm();
  const int n = std::max(2, static_cast<int>(len / step) + 1);
  Polyline out(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    out[i] = a + (b - a) * t;
  }
  return out;
}

Polyline bezier_pts(Vec2 a, Vec2 da, Vec2 b, Vec2 db, int n = 14) {
  const double k = 0.45 * (b - a).norm();
  const Vec2 c1 = a + da * k;
  const Vec2 c2 = b - db * k;
  Polyline out(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    const double u = 1.0 - t;
    out[i] = a * (u * u * u) + c1 * (3 * u * u * t) + c2 * (3 * u * t * t) + b * (t * t * t);
  }
  return out;
}

Network straight_network(Rng& rng, double spacing) {
  Network net;
  const double theta = rng.uniform(-0.26, 0.26);
  const Vec2 d{std::cos(theta), std::sin(theta)};
  const Vec2 nrm{-d.y, d.x};  // left normal
  const int n_fwd = rng.uniform_int(1, 3);
  const bool two_way = rng.bernoulli(0.5);
  const int n_back = two_way ? rng.uniform_int(1, 2) : 0;
  const double extent = 75.0;

  std::vector<int> fwd, back;
  for (int i = 0; i < n_fwd; ++i) {
    const Vec2 off = nrm * (-static_cast<double>(i) * spacing);
    fwd.push_back(static_cast<int>(net.lanes.size()));
    net.lanes.push_back(line_pts(off - d * extent, off + d * extent));
  }
  for (int i = 0; i < n_back; ++i) {
    const Vec2 off = nrm * ((static_cast<double>(i) + 1.0) * spacing);
    back.push_back(static_cast<int>(net.lanes.size()));
    net.lanes.push_back(line_pts(off + d * extent, off - d * extent));
  }
  // adjacent same-direction lanes: lane i's left neighbor is i-1
  for (int i = 1; i < n_fwd; ++i) net.adjacency.add_left(fwd[i], fwd[i - 1]);
  for (int i = 1; i < n_back; ++i) net.adjacency.add_left(back[i], back[i - 1]);
  net.ego_candidates = fwd;
  return net;
}

Network curve_network(Rng& rng, double spacing) {
  Network net;
  const double radius = rng.uniform(30.0, 70.0);
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double theta = rng.uniform(-0.26, 0.26);
  const Vec2 d{std::cos(theta), std::sin(theta)};
  const Vec2 nrm{-d.y, d.x};
  const Vec2 center = nrm * (sign * radius);
  const int n_lanes = rng.uniform_int(1, 2);

  auto arc = [&](double r) {
    const double span = std::min(M_PI * 0.9, 75.0 / r);
    const int n = std::max(8, static_cast<int>(2.0 * span * r / 3.0));
    Polyline out(n);
    const Vec2 u0 = (Vec2{0, 0} - center) * (1.0 / radius);
    for (int i = 0; i < n; ++i) {
      const double phi = sign * (-span + 2.0 * span * i / (n - 1));
      const Vec2 u{u0.x * std::cos(phi) - u0.y * std::sin(phi),
                   u0.x * std::sin(phi) + u0.y * std::cos(phi)};
      out[i] = center + u * r;
    }
    return out;
  };

  for (int i = 0; i < n_lanes; ++i) {
    // lanes to the right of the first one (away from the center when sign>0)
    const double r = radius + sign * static_cast<double>(i) * spacing;
    net.lanes.push_back(arc(r));
    if (i > 0) net.adjacency.add_left(i, i - 1);
    net.ego_candidates.push_back(i);
  }
  return net;
}

Network junction_network(Rng& rng, double spacing, bool four_way) {
  Network net;
  net.junction = true;
  const double s2 = spacing / 2.0;
  const double b = 8.0;
  const double extent = 75.0;

  // arm ids: 0=E, 1=N, 2=W, 3=S; drop one at random for a T-junction
  std::vector<bool> arm(4, true);
  if (!four_way) arm[rng.uniform_int(0, 3)] = false;

  struct Port {
    int approach = -1;  // lane ending at the junction
    int exit = -1;      // lane starting at the junction
    Vec2 app_end, app_dir;
    Vec2 exit_start, exit_dir;
  };
  std::vector<Port> ports(4);

  auto add_lane = [&](Polyline pts) {
    net.lanes.push_back(std::move(pts));
    return static_cast<int>(net.lanes.size()) - 1;
  };

  for (int a = 0; a < 4; ++a) {
    if (!arm[a]) continue;
    // unit direction pointing away from the junction along this arm
    const Vec2 out_dir = a == 0 ? Vec2{1, 0} : a == 1 ? Vec2{0, 1} : a == 2 ? Vec2{-1, 0}
                                                                             : Vec2{0, -1};
    const Vec2 in_dir = out_dir * -1.0;       // driving toward the junction
    const Vec2 right{in_dir.y, -in_dir.x};    // right-hand side of inbound traffic
    Port& p = ports[a];
    const Vec2 app_far = out_dir * extent + right * s2;
    const Vec2 app_near = out_dir * b + right * s2;
    p.approach = add_lane(line_pts(app_far, app_near));
    p.app_end = app_near;
    p.app_dir = in_dir;
    const Vec2 exit_near = out_dir * b - right * s2;  // right side of outbound traffic
    const Vec2 exit_far = out_dir * extent - right * s2;
    p.exit = add_lane(line_pts(exit_near, exit_far));
    p.exit_start = exit_near;
    p.exit_dir = out_dir;
    net.ego_candidates.push_back(p.approach);
  }

  for (int a = 0; a < 4; ++a) {
    if (!arm[a]) continue;
    const Port& src = ports[a];
    for (int t = 0; t < 4; ++t) {
      if (t == a || !arm[t]) continue;
      const Port& dst = ports[t];
      Polyline conn;
      if ((a + 2) % 4 == t) {
        conn = line_pts(src.app_end, dst.exit_start, 2.0);  // straight through
      } else {
        conn = bezier_pts(src.app_end, src.app_dir, dst.exit_start, dst.exit_dir);
      }
      const int c = add_lane(std::move(conn));
      net.adjacency.add_successor(src.approach, c);
      net.adjacency.add_successor(c, dst.exit);
    }
  }
  return net;
}

struct ClassSpec {
  ObjectClass cls;
  double length, width;
  double max_speed;
};

ClassSpec draw_class(Rng& rng, const CorpusConfig& cfg) {
  const double u = rng.uniform();
  if (u < 0.8) {
    return {ObjectClass::kVehicle, rng.uniform(4.0, 5.2), rng.uniform(1.8, 2.2),
            cfg.max_speed};
  }
  if (u < 0.9) {
    return {ObjectClass::kPedestrian, 0.8, 0.8, std::min(cfg.max_speed, 1.5)};
  }
  return {ObjectClass::kCyclist, 1.8, 0.6, std::min(cfg.max_speed, 5.0)};
}

}  // namespace

Scene generate_scene(const CorpusConfig& cfg, std::uint64_t index) {
  Rng rng = Rng::stream(cfg.seed, index);
  const double archetype = rng.uniform();
  Network net;
  if (archetype < cfg.intersection_prob)
    net = junction_network(rng, cfg.lane_spacing, rng.bernoulli(0.5));
  else if (archetype < cfg.intersection_prob + cfg.curve_prob)
    net = curve_network(rng, cfg.lane_spacing);
  else
    net = straight_network(rng, cfg.lane_spacing);

  // ego pose on a candidate lane
  const int ego_lane = net.ego_candidates[rng.uniform_int(
      0, static_cast<int>(net.ego_candidates.size()) - 1)];
  const Polyline& ego_pts = net.lanes[ego_lane];
  const double total = polyline_length(ego_pts);
  double s;
  if (net.junction) {
    s = total - rng.uniform(4.0, 26.0);  // junction visible ahead
  } else {
    s = total * rng.uniform(0.35, 0.65);
  }
  // locate the pose at arclength s
  Polyline dense = resample_polyline(ego_pts, std::max(64, static_cast<int>(total)));
  const double step = total / (dense.size() - 1);
  const std::size_t k = std::min(dense.size() - 2, static_cast<std::size_t>(s / step));
  const Vec2 tan_raw = dense[k + 1] - dense[k];
  const double tn = tan_raw.norm();
  const Vec2 tang = tn > 0 ? tan_raw * (1.0 / tn) : Vec2{1, 0};
  const double heading = std::atan2(tang.y, tang.x) + rng.uniform(-0.09, 0.09);
  const Vec2 nrm{-tang.y, tang.x};
  const Vec2 pos = dense[k] + nrm * rng.uniform(-0.4, 0.4);
  const SE2 ego_pose = SE2::from_angle(pos.x, pos.y, heading);

  Scene raw;
  for (const Polyline& pts : net.lanes) {
    Lane lane;
    lane.points = pts;  // dense; crop_fov resamples each clipped piece to 20
    raw.lanes.push_back(std::move(lane));
  }
  raw.adjacency = net.adjacency;

  Scene scene = merge_degree2_lanes(crop_fov(raw, ego_pose, kFovHalfExtent).scene);

  // ego exactly at the local origin; the pose jitter above puts the lane
  // slightly off-axis instead
  Object ego;
  ego.cls = ObjectClass::kEgo;
  ego.x = 0.0;
  ego.y = 0.0;
  ego.cos_h = 1.0;
  ego.sin_h = 0.0;
  ego.length = rng.uniform(4.2, 5.0);
  ego.width = rng.uniform(1.8, 2.1);
  ego.speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  scene.objects.push_back(ego);

  const int n_target = rng.uniform_int(cfg.min_agents, cfg.max_agents);
  int placed = 1;
  int attempts = 0;
  const int max_attempts = 40 * n_target;
  while (placed < n_target && attempts < max_attempts) {
    ++attempts;
    const int lane_idx = rng.uniform_int(0, scene.num_lanes() - 1);
    const Lane& lane = scene.lanes[lane_idx];
    const double len = lane.arclength();
    const double at = rng.uniform(0.0, len);
    const Polyline& rp = lane.points;
    // walk to arclength `at`
    double cum = 0.0;
    Vec2 p = rp.front(), tangent{1, 0};
    for (std::size_t i = 0; i + 1 < rp.size(); ++i) {
      const double seg = (rp[i + 1] - rp[i]).norm();
      if (cum + seg >= at || i + 2 == rp.size()) {
        const double t = seg > 0 ? std::clamp((at - cum) / seg, 0.0, 1.0) : 0.0;
        p = rp[i] + (rp[i + 1] - rp[i]) * t;
        tangent = (rp[i + 1] - rp[i]) * (seg > 0 ? 1.0 / seg : 0.0);
        break;
      }
      cum += seg;
    }
    const Vec2 lane_nrm{-tangent.y, tangent.x};
    const ClassSpec spec = draw_class(rng, cfg);
    Object o;
    o.cls = spec.cls;
    const Vec2 op = p + lane_nrm * rng.uniform(-0.5, 0.5);
    o.x = op.x;
    o.y = op.y;
    const double h = std::atan2(tangent.y, tangent.x) + rng.uniform(-0.17, 0.17);
    o.cos_h = std::cos(h);
    o.sin_h = std::sin(h);
    o.length = spec.length;
    o.width = spec.width;
    o.speed = rng.uniform(cfg.min_speed, spec.max_speed);
    if (std::abs(o.x) > kFovHalfExtent - 0.5 || std::abs(o.y) > kFovHalfExtent - 0.5)
      continue;
    bool overlaps = false;
    for (const Object& other : scene.objects)
      if (obb_overlap(o.box(), other.box())) {
        overlaps = true;
        break;
      }
    if (overlaps) continue;
    scene.objects.push_back(o);
    ++placed;
  }

  scene.condition = ConditionLabel::kCompat;
  scene.partitioned = false;
  Scene canon = canonicalize_scene(scene);
  validate_scene(canon);
  return canon;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  corpus.scenes.reserve(cfg.n_scenes);
  for (int i = 0; i < cfg.n_scenes; ++i)
    corpus.scenes.push_back(generate_scene(cfg, static_cast<std::uint64_t>(i)));
  corpus.split.resize(cfg.n_scenes);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    Rng h = Rng::stream(cfg.seed ^ 0xC0FFEEull, static_cast<std::uint64_t>(i));
    corpus.split[i] = h.uniform() < 0.9 ? 0 : 1;
  }
  return corpus;
}

std::vector<const Scene*> Corpus::train_scenes() const {
  std::vector<const Scene*> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (split[i] == 0) out.push_back(&scenes[i]);
  return out;
}

std::vector<const Scene*> Corpus::test_scenes() const {
  std::vector<const Scene*> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (split[i] == 1) out.push_back(&scenes[i]);
  return out;
}

Scene make_partitioned_variant(const Scene& scene) {
  return canonicalize_scene(partition_scene(scene).scene);
}

CountDistribution::CountDistribution(const std::vector<const Scene*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("count distribution: empty corpus");
  const double w = 1.0 / static_cast<double>(scenes.size());
  for (const Scene* s : scenes)
    joint_[{s->num_objects(), s->num_lanes()}] += w;
}

std::pair<int, int> CountDistribution::sample(Rng& rng) const {
  double u = rng.uniform();
  for (const auto& [k, p] : joint_) {
    u -= p;
    if (u < 0.0) return k;
  }
  return joint_.rbegin()->first;
}

int CountDistribution::sample_objects_given_lanes(int n_lanes, Rng& rng) const {
  // exact bucket if observed, else the nearest observed lane count
  int best_nl = -1;
  for (const auto& [k, p] : joint_) {
    if (best_nl < 0 || std::abs(k.second - n_lanes) < std::abs(best_nl - n_lanes))
      best_nl = k.second;
  }
  double total = 0.0;
  for (const auto& [k, p] : joint_)
    if (k.second == best_nl) total += p;
  double u = rng.uniform() * total;
  int last = 1;
  for (const auto& [k, p] : joint_) {
    if (k.second != best_nl) continue;
    last = k.first;
    u -= p;
    if (u < 0.0) return k.first;
  }
  return last;
}

bool CountDistribution::supports(int n_objects, int n_lanes) const {
  return joint_.count({n_objects, n_lanes}) > 0;
}

double CountDistribution::probability(int n_objects, int n_lanes) const {
  auto it = joint_.find({n_objects, n_lanes});
  return it == joint_.end() ? 0.0 : it->second;
}

json CountDistribution::to_json() const {
  json arr = json::array();
  for (const auto& [k, p] : joint_) arr.push_back({k.first, k.second, p});
  return {{"joint", arr}};
}

CountDistribution CountDistribution::from_json(const json& j) {
  CountDistribution d;
  for (const auto& e : j.at("joint"))
    d.joint_[{e[0].get<int>(), e[1].get<int>()}] = e[2].get<double>();
  return d;
}

PartitionCountModel::PartitionCountModel(
    const std::vector<const Scene*>& partitioned_scenes) {
  for (const Scene* s : partitioned_scenes) {
    int fn_obj = 0, fp_obj = 0;
    for (const Object& o : s->objects)
      (object_region(o) == SceneRegion::kFN ? fn_obj : fp_obj)++;
    table_[{fn_obj, s->num_lanes()}][fp_obj] += 1.0;
  }
}

int PartitionCountModel::sample_fp_objects(int fn_objects, int total_lanes,
                                           Rng& rng) const {
  if (table_.empty()) return 0;
  // nearest observed bucket by (|d_obj|, |d_lanes|)
  const std::pair<int, int> want{fn_objects, total_lanes};
  auto best = table_.begin();
  long best_cost = -1;
  for (auto it = table_.begin(); it != table_.end(); ++it) {
    const long cost = 100L * std::abs(it->first.first - want.first) +
                      std::abs(it->first.second - want.second);
    if (best_cost < 0 || cost < best_cost) {
      best_cost = cost;
      best = it;
    }
  }
  double total = 0.0;
  for (const auto& [k, w] : best->second) total += w;
  double u = rng.uniform() * total;
  int last = 0;
  for (const auto& [k, w] : best->second) {
    last = k;
    u -= w;
    if (u < 0.0) return k;
  }
  return last;
}

json PartitionCountModel::to_json() const {
  json arr = json::array();
  for (const auto& [k, hist] : table_) {
    json h = json::array();
    for (const auto& [v, w] : hist) h.push_back({v, w});
    arr.push_back({k.first, k.second, h});
  }
  return {{"table", arr}};
}

PartitionCountModel PartitionCountModel::from_json(const json& j) {
  PartitionCountModel m;
  for (const auto& e : j.at("table")) {
    std::map<int, double> hist;
    for (const auto& h : e[2]) hist[h[0].get<int>()] = h[1].get<double>();
    m.table_[{e[0].get<int>(), e[1].get<int>()}] = std::move(hist);
  }
  return m;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["config"] = {{"seed", corpus.config.seed},
                        {"n_scenes", corpus.config.n_scenes},
                        {"intersection_prob", corpus.config.intersection_prob},
                        {"curve_prob", corpus.config.curve_prob},
                        {"min_agents", corpus.config.min_agents},
                        {"max_agents", corpus.config.max_agents},
                        {"min_speed", corpus.config.min_speed},
                        {"max_speed", corpus.config.max_speed},
                        {"lane_spacing", corpus.config.lane_spacing}};
  manifest["split"] = corpus.split;
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  char name[32];
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
    std::snprintf(name, sizeof(name), "scene_%05zu.json", i);
    write_scene_file(corpus.scenes[i], (fs::path(dir) / name).string());
  }
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("corpus: missing manifest in " + dir);
  json manifest;
  mf >> manifest;
  Corpus corpus;
  const json& c = manifest.at("config");
  corpus.config.seed = c.at("seed").get<std::uint64_t>();
  corpus.config.n_scenes = c.at("n_scenes").get<int>();
  corpus.config.intersection_prob = c.at("intersection_prob").get<double>();
  corpus.config.curve_prob = c.at("curve_prob").get<double>();
  corpus.config.min_agents = c.at("min_agents").get<int>();
  corpus.config.max_agents = c.at("max_agents").get<int>();
  corpus.config.min_speed = c.at("min_speed").get<double>();
  corpus.config.max_speed = c.at("max_speed").get<double>();
  corpus.config.lane_spacing = c.at("lane_spacing").get<double>();
  corpus.split = manifest.at("split").get<std::vector<int>>();
  char name[32];
  for (int i = 0; i < corpus.config.n_scenes; ++i) {
    std::snprintf(name, sizeof(name), "scene_%05d.json", i);
    corpus.scenes.push_back(read_scene_file((fs::path(dir) / name).string()));
  }
  return corpus;
}

}  // namespace lanesmith
