// lanesmith: corpus generation, training, sampling, simulation, metrics and
// rendering behind one subcommand-style binary.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "lanesmith/autoencoder.hpp"
#include "lanesmith/behaviour.hpp"
#include "lanesmith/corpus.hpp"
#include "lanesmith/diffusion.hpp"
#include "lanesmith/logging.hpp"
#include "lanesmith/metrics.hpp"
#include "lanesmith/render.hpp"
#include "lanesmith/scene_json.hpp"
#include "lanesmith/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lanesmith;

namespace {

enum ExitCode {
  kOk = 0,
  kError = 1,
  kConfigError = 2,
  kMissingArtifact = 3,
  kBadScene = 4,
  kInvariantViolation = 5,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Atomic write: temp file in the same directory, then rename.
void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string());
    os << content;
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact("missing file: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad json in " + path.string() + ": " + e.what());
  }
  return j;
}

// Per-command parameter table: config-file section overridden by CLI flags.
class Params {
 public:
  Params(const json& section, std::string command) : command_(std::move(command)) {
    if (!section.is_null()) {
      if (!section.is_object())
        throw ConfigError("config section '" + command_ + "' must be an object");
      values_ = section;
    }
  }

  void mark_known(const std::string& key) { known_.insert(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    mark_known(key);
    if (overrides_.contains(key)) return overrides_[key].get<T>();
    if (values_.contains(key)) return values_[key].get<T>();
    resolved_[key] = fallback;
    return fallback;
  }

  template <typename T>
  void override_if(bool set, const std::string& key, const T& value) {
    if (set) overrides_[key] = value;
  }

  void finish() {
    for (auto it = values_.begin(); it != values_.end(); ++it)
      if (!known_.count(it.key()))
        throw ConfigError("unknown key '" + it.key() + "' in config section '" +
                          command_ + "'");
  }

  json resolved() const {
    json out = values_;
    for (auto it = resolved_.begin(); it != resolved_.end(); ++it)
      if (!out.contains(it.key())) out[it.key()] = it.value();
    for (auto it = overrides_.begin(); it != overrides_.end(); ++it)
      out[it.key()] = it.value();
    return out;
  }

 private:
  std::string command_;
  json values_ = json::object();
  json overrides_ = json::object();
  json resolved_ = json::object();
  std::set<std::string> known_;
};

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = hardware concurrency

  int worker_count() const {
    if (workers > 0) return workers;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }
};

Params load_params(const GlobalArgs& g, const std::string& command) {
  json section;
  if (!g.config_path.empty()) {
    json all = read_json_file(g.config_path);
    if (!all.is_object()) throw ConfigError("config root must be an object");
    for (auto it = all.begin(); it != all.end(); ++it) {
      static const std::set<std::string> commands = {
          "corpus",   "train-ae", "train-dm", "train-policy", "generate",
          "inpaint",  "simulate", "metrics",  "render"};
      if (!commands.count(it.key()))
        throw ConfigError("unknown config section '" + it.key() + "'");
    }
    if (all.contains(command)) section = all[command];
  }
  return Params(section, command);
}

void write_config_snapshot(const GlobalArgs& g, const std::string& command,
                           const Params& params) {
  json snap = {{"command", command}, {"seed", g.seed}, {"params", params.resolved()}};
  write_file_atomic(fs::path(g.out_dir) / (command + "_config.json"), snap.dump(2) + "\n");
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// artifact bundles

struct AeArtifacts {
  AeConfig config;
  FeatureStats stats;
  tc::ParamStore params;
};

json ae_config_to_json(const AeConfig& c) {
  return {{"lane_hidden", c.lane_hidden},     {"object_hidden", c.object_hidden},
          {"edge_hidden", c.edge_hidden},     {"lane_latent", c.lane_latent},
          {"object_latent", c.object_latent}, {"encoder_blocks", c.encoder_blocks},
          {"decoder_blocks", c.decoder_blocks},
          {"heads", c.heads},                 {"max_lane_count", c.max_lane_count},
          {"lambda_lane", c.lambda_lane},     {"lambda_conn", c.lambda_conn},
          {"lambda_num", c.lambda_num},       {"beta", c.beta}};
}

AeConfig ae_config_from_json(const json& j) {
  AeConfig c;
  c.lane_hidden = j.at("lane_hidden").get<int>();
  c.object_hidden = j.at("object_hidden").get<int>();
  c.edge_hidden = j.at("edge_hidden").get<int>();
  c.lane_latent = j.at("lane_latent").get<int>();
  c.object_latent = j.at("object_latent").get<int>();
  c.encoder_blocks = j.at("encoder_blocks").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.heads = j.at("heads").get<int>();
  c.max_lane_count = j.at("max_lane_count").get<int>();
  c.lambda_lane = j.at("lambda_lane").get<double>();
  c.lambda_conn = j.at("lambda_conn").get<double>();
  c.lambda_num = j.at("lambda_num").get<double>();
  c.beta = j.at("beta").get<double>();
  return c;
}

void save_ae(const AeArtifacts& ae, const fs::path& dir) {
  tc::save_checkpoint(ae.params, (dir / "ae.ckpt").string());
  json meta = {{"config", ae_config_to_json(ae.config)},
               {"feature_stats", feature_stats_to_json(ae.stats)}};
  write_file_atomic(dir / "ae_meta.json", meta.dump(2) + "\n");
}

AeArtifacts load_ae(const fs::path& dir) {
  if (!fs::exists(dir / "ae.ckpt"))
    throw MissingArtifact("missing checkpoint: " + (dir / "ae.ckpt").string());
  AeArtifacts ae;
  ae.params = tc::load_checkpoint((dir / "ae.ckpt").string());
  json meta = read_json_file(dir / "ae_meta.json");
  ae.config = ae_config_from_json(meta.at("config"));
  ae.stats = feature_stats_from_json(meta.at("feature_stats"));
  return ae;
}

struct DmArtifacts {
  DmConfig config;
  tc::ParamStore ema_params;
  LatentStats stats;
  NoiseSchedule schedule;
  CountDistribution counts;
  PartitionCountModel partition_counts;
};

json dm_config_to_json(const DmConfig& c) {
  return {{"lane_hidden", c.lane_hidden}, {"object_hidden", c.object_hidden},
          {"cond_dim", c.cond_dim},       {"blocks", c.blocks},
          {"l2l_per_block", c.l2l_per_block},
          {"heads", c.heads},             {"lane_latent", c.lane_latent},
          {"object_latent", c.object_latent}, {"max_positions", c.max_positions}};
}

DmConfig dm_config_from_json(const json& j) {
  DmConfig c;
  c.lane_hidden = j.at("lane_hidden").get<int>();
  c.object_hidden = j.at("object_hidden").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.l2l_per_block = j.at("l2l_per_block").get<int>();
  c.heads = j.at("heads").get<int>();
  c.lane_latent = j.at("lane_latent").get<int>();
  c.object_latent = j.at("object_latent").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  return c;
}

void save_dm(const DmArtifacts& dm, const tc::ParamStore& raw_params,
             const fs::path& dir) {
  tc::save_checkpoint(raw_params, (dir / "dm.ckpt").string());
  tc::save_checkpoint(dm.ema_params, (dir / "dm_ema.ckpt").string());
  json meta = {{"config", dm_config_to_json(dm.config)},
               {"latent_stats", dm.stats.to_json()},
               {"schedule_T", dm.schedule.T},
               {"counts", dm.counts.to_json()},
               {"partition_counts", dm.partition_counts.to_json()}};
  write_file_atomic(dir / "dm_meta.json", meta.dump(2) + "\n");
}

DmArtifacts load_dm(const fs::path& dir) {
  if (!fs::exists(dir / "dm_ema.ckpt"))
    throw MissingArtifact("missing checkpoint: " + (dir / "dm_ema.ckpt").string());
  DmArtifacts dm;
  dm.ema_params = tc::load_checkpoint((dir / "dm_ema.ckpt").string());
  json meta = read_json_file(dir / "dm_meta.json");
  dm.config = dm_config_from_json(meta.at("config"));
  dm.stats = LatentStats::from_json(meta.at("latent_stats"));
  dm.schedule = build_schedule(meta.at("schedule_T").get<int>());
  dm.counts = CountDistribution::from_json(meta.at("counts"));
  dm.partition_counts = PartitionCountModel::from_json(meta.at("partition_counts"));
  return dm;
}

struct PolicyArtifacts {
  ToyPolicyConfig config;
  tc::ParamStore params;
  KdiskVocab vocab;
  ReturnBinning binning;
};

void save_policy(const PolicyArtifacts& p, const fs::path& dir) {
  tc::save_checkpoint(p.params, (dir / "policy.ckpt").string());
  write_file_atomic(dir / "vocab.json", p.vocab.to_json().dump() + "\n");
  json meta = {{"hidden", p.config.hidden},
               {"return_emb", p.config.return_emb},
               {"binning", p.binning.to_json()}};
  write_file_atomic(dir / "policy_meta.json", meta.dump(2) + "\n");
}

PolicyArtifacts load_policy(const fs::path& dir) {
  if (!fs::exists(dir / "policy.ckpt"))
    throw MissingArtifact("missing checkpoint: " + (dir / "policy.ckpt").string());
  PolicyArtifacts p;
  p.params = tc::load_checkpoint((dir / "policy.ckpt").string());
  p.vocab = KdiskVocab::from_json(read_json_file(dir / "vocab.json"));
  json meta = read_json_file(dir / "policy_meta.json");
  p.config.hidden = meta.at("hidden").get<int>();
  p.config.return_emb = meta.at("return_emb").get<int>();
  p.binning = ReturnBinning::from_json(meta.at("binning"));
  return p;
}

// ---------------------------------------------------------------------------
// commands

int cmd_corpus(const GlobalArgs& g, Params params) {
  CorpusConfig cfg;
  cfg.seed = params.get<std::uint64_t>("seed", g.seed);
  cfg.n_scenes = params.get<int>("n_scenes", 200);
  cfg.intersection_prob = params.get<double>("intersection_prob", cfg.intersection_prob);
  cfg.curve_prob = params.get<double>("curve_prob", cfg.curve_prob);
  cfg.min_agents = params.get<int>("min_agents", cfg.min_agents);
  cfg.max_agents = params.get<int>("max_agents", cfg.max_agents);
  cfg.min_speed = params.get<double>("min_speed", cfg.min_speed);
  cfg.max_speed = params.get<double>("max_speed", cfg.max_speed);
  cfg.lane_spacing = params.get<double>("lane_spacing", cfg.lane_spacing);
  params.finish();
  cfg.validate();

  Corpus corpus;
  corpus.config = cfg;
  corpus.scenes.resize(cfg.n_scenes);
  parallel_for(cfg.n_scenes, g.worker_count(), [&](int i) {
    corpus.scenes[i] = generate_scene(cfg, static_cast<std::uint64_t>(i));
  });
  corpus.split.resize(cfg.n_scenes);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    Rng h = Rng::stream(cfg.seed ^ 0xC0FFEEull, static_cast<std::uint64_t>(i));
    corpus.split[i] = h.uniform() < 0.9 ? 0 : 1;
  }
  const fs::path dir = fs::path(g.out_dir) / "corpus";
  save_corpus(corpus, dir.string());
  write_config_snapshot(g, "corpus", params);
  std::printf("corpus: %d scenes -> %s\n", cfg.n_scenes, dir.string().c_str());
  return kOk;
}

Corpus load_corpus_checked(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw MissingArtifact("missing corpus manifest in " + dir.string());
  return load_corpus(dir.string());
}

int cmd_train_ae(const GlobalArgs& g, Params params) {
  const std::string corpus_dir =
      params.get<std::string>("corpus", (fs::path(g.out_dir) / "corpus").string());
  AeConfig cfg;
  cfg.lane_hidden = params.get<int>("lane_hidden", cfg.lane_hidden);
  cfg.object_hidden = params.get<int>("object_hidden", cfg.object_hidden);
  cfg.edge_hidden = params.get<int>("edge_hidden", cfg.edge_hidden);
  cfg.lane_latent = params.get<int>("lane_latent", cfg.lane_latent);
  cfg.object_latent = params.get<int>("object_latent", cfg.object_latent);
  AeTrainConfig tcfg;
  tcfg.steps = params.get<int>("steps", tcfg.steps);
  tcfg.batch_size = params.get<int>("batch_size", tcfg.batch_size);
  tcfg.lr = params.get<double>("lr", tcfg.lr);
  tcfg.weight_decay = params.get<double>("weight_decay", tcfg.weight_decay);
  tcfg.warmup = params.get<int>("warmup", tcfg.warmup);
  tcfg.seed = params.get<std::uint64_t>("seed", g.seed);
  params.finish();

  Corpus corpus = load_corpus_checked(corpus_dir);
  FeatureStats stats;
  {
    std::vector<Scene> train_copy;
    for (const Scene* s : corpus.train_scenes()) train_copy.push_back(*s);
    stats = compute_feature_stats(train_copy);
  }
  AeTrainResult result = train_autoencoder(corpus, stats, cfg, tcfg);
  AeArtifacts ae{cfg, stats, std::move(result.params)};
  save_ae(ae, g.out_dir);
  std::string log;
  for (const std::string& line : result.log_csv) log += line + "\n";
  write_file_atomic(fs::path(g.out_dir) / "ae_training_log.csv", log);
  write_config_snapshot(g, "train-ae", params);
  std::printf("train-ae: val %.4f -> %.4f\n", result.first_val, result.last_val);
  if (result.last_val > 0.7 * result.first_val)
    log_warn("train-ae: validation loss decreased by less than 30%");
  return kOk;
}

int cmd_train_dm(const GlobalArgs& g, Params params) {
  const std::string corpus_dir =
      params.get<std::string>("corpus", (fs::path(g.out_dir) / "corpus").string());
  const std::string ae_dir = params.get<std::string>("ae", g.out_dir);
  DmConfig cfg;
  cfg.lane_hidden = params.get<int>("lane_hidden", cfg.lane_hidden);
  cfg.object_hidden = params.get<int>("object_hidden", cfg.object_hidden);
  cfg.blocks = params.get<int>("blocks", cfg.blocks);
  cfg.l2l_per_block = params.get<int>("l2l_per_block", cfg.l2l_per_block);
  DmTrainConfig tcfg;
  tcfg.steps = params.get<int>("steps", tcfg.steps);
  tcfg.batch_size = params.get<int>("batch_size", tcfg.batch_size);
  tcfg.lr = params.get<double>("lr", tcfg.lr);
  tcfg.seed = params.get<std::uint64_t>("seed", g.seed);
  params.finish();

  Corpus corpus = load_corpus_checked(corpus_dir);
  AeArtifacts ae_art = load_ae(ae_dir);
  cfg.lane_latent = ae_art.config.lane_latent;
  cfg.object_latent = ae_art.config.object_latent;
  AeModel ae(ae_art.config, std::move(ae_art.params), ae_art.stats);

  DmTrainResult result = train_dm(corpus, ae, cfg, tcfg);
  DmArtifacts dm;
  dm.config = cfg;
  dm.ema_params = std::move(result.ema_params);
  dm.stats = result.stats;
  dm.schedule = result.schedule;
  dm.counts = CountDistribution(corpus.train_scenes());
  {
    std::vector<Scene> partitioned;
    std::vector<const Scene*> ptrs;
    for (const Scene* s : corpus.train_scenes())
      partitioned.push_back(make_partitioned_variant(*s));
    for (const Scene& s : partitioned) ptrs.push_back(&s);
    dm.partition_counts = PartitionCountModel(ptrs);
  }
  save_dm(dm, result.params, g.out_dir);
  std::string log;
  for (const std::string& line : result.log_csv) log += line + "\n";
  write_file_atomic(fs::path(g.out_dir) / "dm_training_log.csv", log);
  write_config_snapshot(g, "train-dm", params);
  std::printf("train-dm: done (%zu params)\n", dm.ema_params.parameter_count());
  return kOk;
}

int cmd_train_policy(const GlobalArgs& g, Params params) {
  const std::string corpus_dir =
      params.get<std::string>("corpus", (fs::path(g.out_dir) / "corpus").string());
  RolloutGenConfig rcfg;
  rcfg.n_scenes = params.get<int>("rollout_scenes", rcfg.n_scenes);
  rcfg.steps = params.get<int>("rollout_steps", rcfg.steps);
  rcfg.pursuit_fraction = params.get<double>("pursuit_fraction", rcfg.pursuit_fraction);
  rcfg.seed = params.get<std::uint64_t>("seed", g.seed);
  ToyTrainConfig tcfg;
  tcfg.steps = params.get<int>("steps", tcfg.steps);
  tcfg.batch_size = params.get<int>("batch_size", tcfg.batch_size);
  tcfg.lr = params.get<double>("lr", tcfg.lr);
  tcfg.seed = rcfg.seed;
  params.finish();

  Corpus corpus = load_corpus_checked(corpus_dir);
  BehaviourDataset data = generate_behaviour_dataset(corpus, rcfg);
  ToyPolicyConfig pcfg;
  ToyTrainResult result = train_toy_policy(data, pcfg, tcfg);
  PolicyArtifacts art{pcfg, std::move(result.params), data.vocab, data.binning};
  save_policy(art, g.out_dir);
  write_rollout_log(data.step_logs,
                    (fs::path(g.out_dir) / "rollout_log.jsonl").string());
  write_config_snapshot(g, "train-policy", params);
  std::printf("train-policy: ce %.3f -> %.3f over %zu tuples\n", result.first_loss,
              result.last_loss, data.tuples.size());
  return kOk;
}

int cmd_generate(const GlobalArgs& g, Params params) {
  const std::string ae_dir = params.get<std::string>("ae", g.out_dir);
  const std::string dm_dir = params.get<std::string>("dm", g.out_dir);
  const int n = params.get<int>("n", 8);
  const int agents = params.get<int>("agents", -1);
  const int lanes = params.get<int>("lanes", -1);
  const double guidance = params.get<double>("guidance_scale", 2.0);
  const double temp_alpha = params.get<double>("temp_alpha", 0.75);
  const bool render = params.get<bool>("render", false);
  const bool lane_conditioned = params.get<bool>("lane_conditioned", false);
  const std::string map_file = params.get<std::string>("map", "");
  const std::uint64_t seed = params.get<std::uint64_t>("seed", g.seed);
  params.finish();

  AeArtifacts ae_art = load_ae(ae_dir);
  AeModel ae(ae_art.config, std::move(ae_art.params), ae_art.stats);
  DmArtifacts dm_art = load_dm(dm_dir);
  DmModel dm(dm_art.config, std::move(dm_art.ema_params), dm_art.schedule,
             dm_art.stats);
  SampleOptions opts;
  opts.guidance_scale = guidance;
  opts.temp_alpha = temp_alpha;

  const fs::path dir = fs::path(g.out_dir) / "generated";
  fs::create_directories(dir);
  std::vector<Scene> scenes(n);
  std::vector<std::string> errors(n);
  parallel_for(n, g.worker_count(), [&](int i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    try {
      if (lane_conditioned) {
        Scene map = read_scene_file(map_file);
        scenes[i] =
            sample_objects_given_lanes(canonicalize_scene(map), dm, ae, dm_art.counts,
                                       rng, opts);
      } else if (agents > 0 && lanes > 0) {
        scenes[i] = sample_scene(agents, lanes, ConditionLabel::kCompat, dm, ae, rng, opts);
      } else {
        scenes[i] = sample_scene(dm_art.counts, ConditionLabel::kCompat, dm, ae, rng, opts);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (int i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw std::runtime_error("generate: " + errors[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d.json", i);
    write_file_atomic(dir / name, scene_to_json(scenes[i]).dump() + "\n");
    if (render) {
      std::snprintf(name, sizeof(name), "scene_%05d.svg", i);
      write_file_atomic(dir / name, scene_to_svg(scenes[i]));
    }
  }
  write_config_snapshot(g, "generate", params);
  std::printf("generate: %d scenes -> %s\n", n, dir.string().c_str());
  return kOk;
}

int cmd_inpaint(const GlobalArgs& g, Params params) {
  const std::string ae_dir = params.get<std::string>("ae", g.out_dir);
  const std::string dm_dir = params.get<std::string>("dm", g.out_dir);
  const std::string scene_file = params.get<std::string>("scene", "");
  const std::string out_file =
      params.get<std::string>("out_file", (fs::path(g.out_dir) / "inpainted.json").string());
  const double guidance = params.get<double>("guidance_scale", 2.0);
  const bool render = params.get<bool>("render", false);
  const std::uint64_t seed = params.get<std::uint64_t>("seed", g.seed);
  params.finish();
  if (scene_file.empty()) throw ConfigError("inpaint: --scene is required");

  AeArtifacts ae_art = load_ae(ae_dir);
  AeModel ae(ae_art.config, std::move(ae_art.params), ae_art.stats);
  DmArtifacts dm_art = load_dm(dm_dir);
  DmModel dm(dm_art.config, std::move(dm_art.ema_params), dm_art.schedule,
             dm_art.stats);

  Scene fn = read_scene_file(scene_file);
  // split lanes at x = 0, then keep only the trailing half
  Scene split = fn.partitioned ? fn : partition_scene(fn).scene;
  Scene fn_half;
  fn_half.condition = fn.condition;
  std::vector<int> keep(split.num_lanes(), -1);
  for (int i = 0; i < split.num_lanes(); ++i) {
    if (lane_region(split.lanes[i]) != SceneRegion::kFN) continue;
    keep[i] = fn_half.num_lanes();
    fn_half.lanes.push_back(split.lanes[i]);
  }
  fn_half.adjacency = split.adjacency.remapped(keep);
  for (const Object& o : split.objects)
    if (object_region(o) == SceneRegion::kFN) fn_half.objects.push_back(o);
  if (fn_half.lanes.empty()) throw std::runtime_error("inpaint: no lanes in x <= 0");

  SampleOptions opts;
  opts.guidance_scale = guidance;
  Rng rng(seed);
  InpaintResult result =
      inpaint(canonicalize_scene(fn_half), dm, ae, dm_art.partition_counts, rng, opts);
  if (result.empty_fp) log_warn("inpaint: classifier drew zero new lanes");
  write_file_atomic(out_file, scene_to_json(result.scene).dump() + "\n");
  if (render)
    write_file_atomic(fs::path(out_file).replace_extension(".svg").string(),
                      scene_to_svg(result.scene));
  write_config_snapshot(g, "inpaint", params);
  std::printf("inpaint: %d F_N + %d F_P lanes -> %s\n", result.fn_lanes,
              result.fp_lanes, out_file.c_str());
  return kOk;
}

int cmd_simulate(const GlobalArgs& g, Params params) {
  const std::string scene_dir = params.get<std::string>(
      "scenes", (fs::path(g.out_dir) / "generated").string());
  const std::string policy_dir = params.get<std::string>("policy", "");
  const int episodes = params.get<int>("episodes", 8);
  const double kappa = params.get<double>("kappa", 0.0);
  const double route_target = params.get<double>("route_target", 55.0);
  const int max_extensions = params.get<int>("max_extensions", 0);
  const std::string ae_dir = params.get<std::string>("ae", g.out_dir);
  const std::string dm_dir = params.get<std::string>("dm", g.out_dir);
  const std::uint64_t seed = params.get<std::uint64_t>("seed", g.seed);
  const bool keep_logs = params.get<bool>("episode_logs", true);
  params.finish();

  // scene pool: all scene_*.json in the directory
  if (!fs::is_directory(scene_dir))
    throw MissingArtifact("no scene directory: " + scene_dir);
  std::vector<Scene> pool;
  for (const auto& entry : fs::directory_iterator(scene_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && entry.path().extension() == ".json")
      pool.push_back(read_scene_file(entry.path().string()));
  }
  std::sort(pool.begin(), pool.end(), [](const Scene& a, const Scene& b) {
    return a.num_lanes() < b.num_lanes();  // deterministic order
  });
  if (pool.empty()) throw MissingArtifact("simulate: no scenes in " + scene_dir);

  std::unique_ptr<Policy> policy;
  std::unique_ptr<PolicyArtifacts> pol_art;
  std::unique_ptr<KdiskVocab> idm_vocab;
  if (!policy_dir.empty()) {
    pol_art = std::make_unique<PolicyArtifacts>(load_policy(policy_dir));
    policy = std::make_unique<ToyPolicy>(pol_art->config, std::move(pol_art->params),
                                         pol_art->vocab, pol_art->binning);
  } else {
    // rule-based fallback with a small grid vocabulary
    std::vector<std::array<double, 3>> samples;
    Rng srng(1);
    for (int i = 0; i < 2000; ++i)
      samples.push_back({srng.uniform(0.0, 1.5), srng.uniform(-0.1, 0.1),
                         srng.uniform(-0.12, 0.12)});
    Rng vr(2);
    idm_vocab = std::make_unique<KdiskVocab>(build_kdisk_vocab(samples, 128, vr));
    policy = std::make_unique<IdmPolicy>(idm_vocab.get());
  }

  std::optional<ExtensionModels> extension;
  std::unique_ptr<AeModel> ae_model;
  std::unique_ptr<DmModel> dm_model;
  std::unique_ptr<PartitionCountModel> pcm;
  if (max_extensions > 0) {
    AeArtifacts ae_art = load_ae(ae_dir);
    ae_model = std::make_unique<AeModel>(ae_art.config, std::move(ae_art.params),
                                         ae_art.stats);
    DmArtifacts dm_art = load_dm(dm_dir);
    dm_model = std::make_unique<DmModel>(dm_art.config, std::move(dm_art.ema_params),
                                         dm_art.schedule, dm_art.stats);
    pcm = std::make_unique<PartitionCountModel>(dm_art.partition_counts);
    extension = ExtensionModels{dm_model.get(), ae_model.get(), pcm.get(), {}};
  }

  SimConfig cfg;
  cfg.route_target = route_target;
  cfg.kappa = kappa;
  cfg.max_extensions = max_extensions;

  const fs::path dir = fs::path(g.out_dir) / "episodes";
  fs::create_directories(dir);
  std::vector<Episode> results;
  RoutePlanner planner;
  for (int e = 0; e < episodes; ++e) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(e));
    const Scene& scene = pool[e % pool.size()];
    World world = make_world(scene, route_target, rng);
    Episode ep = run_episode(std::move(world), *policy, planner, cfg, rng,
                             extension ? &*extension : nullptr);
    if (keep_logs) {
      char name[32];
      std::snprintf(name, sizeof(name), "episode_%04d.jsonl", e);
      write_episode_log(ep, (dir / name).string());
    }
    results.push_back(std::move(ep));
  }
  EpisodeStats stats = episode_metrics(results);
  json summary = {{"episodes", stats.n},
                  {"collision_pct", stats.collision_pct},
                  {"offroad_pct", stats.offroad_pct},
                  {"success_pct", stats.success_pct},
                  {"timeout_pct", stats.timeout_pct},
                  {"kappa", kappa},
                  {"route_target", route_target}};
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  write_config_snapshot(g, "simulate", params);
  std::printf("simulate: %d episodes  coll %.1f%%  offroad %.1f%%  succ %.1f%%\n",
              stats.n, stats.collision_pct, stats.offroad_pct, stats.success_pct);
  return kOk;
}

std::vector<Scene> load_scene_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw MissingArtifact("no scene directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Scene> scenes;
  for (const auto& f : files) scenes.push_back(read_scene_file(f.string()));
  return scenes;
}

int cmd_metrics(const GlobalArgs& g, Params params) {
  const std::string reference = params.get<std::string>("reference", "");
  const std::string candidate = params.get<std::string>("candidate", "");
  const std::string ae_dir = params.get<std::string>("probe_ae", "");
  params.finish();
  if (reference.empty() || candidate.empty())
    throw ConfigError("metrics: --reference and --candidate are required");

  std::vector<Scene> ref = load_scene_dir(reference);
  std::vector<Scene> cand = load_scene_dir(candidate);
  if (ref.empty() || cand.empty()) throw MissingArtifact("metrics: empty scene set");
  std::vector<const Scene*> ref_p, cand_p;
  for (const Scene& s : ref) ref_p.push_back(&s);
  for (const Scene& s : cand) cand_p.push_back(&s);

  MetricsReport report = compare_scene_sets(ref_p, cand_p);
  if (!ae_dir.empty()) {
    AeArtifacts probe_art = load_ae(ae_dir);
    AeModel probe(probe_art.config, std::move(probe_art.params), probe_art.stats);
    MetricValue fd;
    fd.raw = perceptual_fd(ref_p, cand_p, probe);
    fd.scaled = fd.raw;
    fd.n_samples = static_cast<std::int64_t>(cand_p.size());
    report["perceptual_fd"] = fd;
  }
  write_file_atomic(fs::path(g.out_dir) / "metrics.json",
                    report_to_json(report).dump(2) + "\n");
  write_config_snapshot(g, "metrics", params);
  std::fputs(report_to_table(report).c_str(), stdout);
  return kOk;
}

int cmd_render(const GlobalArgs& g, Params params) {
  const std::string scene_file = params.get<std::string>("scene", "");
  const std::string out_file = params.get<std::string>(
      "out_file", (fs::path(g.out_dir) / "scene.svg").string());
  params.finish();
  if (scene_file.empty()) throw ConfigError("render: --scene is required");
  Scene scene = read_scene_file(scene_file);
  write_file_atomic(out_file, scene_to_svg(scene));
  write_config_snapshot(g, "render", params);
  std::printf("render: %s\n", out_file.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lanesmith: vectorized driving-scene generation and simulation"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--workers", g.workers, "worker threads (0 = all cores)");

  // per-command flag storage: (set flag, value)
  struct Flags {
    std::map<std::string, std::pair<bool, double>> nums;
    std::map<std::string, std::pair<bool, std::string>> strs;
    std::map<std::string, std::pair<bool, bool>> bools;
  };
  std::map<std::string, Flags> flags;
  auto num_opt = [&](CLI::App* cmd, const std::string& key, const char* help) {
    auto& slot = flags[cmd->get_name()].nums[key];
    cmd->add_option_function<double>(
           "--" + key, [&slot](double v) { slot = {true, v}; }, help);
  };
  auto str_opt = [&](CLI::App* cmd, const std::string& key, const char* help) {
    auto& slot = flags[cmd->get_name()].strs[key];
    cmd->add_option_function<std::string>(
           "--" + key, [&slot](const std::string& v) { slot = {true, v}; }, help);
  };
  auto bool_opt = [&](CLI::App* cmd, const std::string& key, const char* help) {
    auto& slot = flags[cmd->get_name()].bools[key];
    cmd->add_flag_function(
           "--" + key, [&slot](std::int64_t n) { slot = {n > 0, n > 0}; }, help);
  };

  CLI::App* corpus = app.add_subcommand("corpus", "generate the synthetic corpus");
  num_opt(corpus, "n_scenes", "number of scenes");
  num_opt(corpus, "intersection_prob", "intersection archetype probability");
  num_opt(corpus, "curve_prob", "curved-road archetype probability");
  num_opt(corpus, "min_agents", "minimum agents per scene");
  num_opt(corpus, "max_agents", "maximum agents per scene");
  num_opt(corpus, "seed", "corpus seed (defaults to --seed)");

  CLI::App* train_ae = app.add_subcommand("train-ae", "train the scene autoencoder");
  str_opt(train_ae, "corpus", "corpus directory");
  num_opt(train_ae, "steps", "optimizer steps");
  num_opt(train_ae, "batch_size", "scenes per step");
  num_opt(train_ae, "lr", "learning rate");
  num_opt(train_ae, "seed", "training seed");

  CLI::App* train_dm = app.add_subcommand("train-dm", "train the latent denoiser");
  str_opt(train_dm, "corpus", "corpus directory");
  str_opt(train_dm, "ae", "autoencoder artifact directory");
  num_opt(train_dm, "steps", "optimizer steps");
  num_opt(train_dm, "batch_size", "latents per step");
  num_opt(train_dm, "lr", "learning rate");
  num_opt(train_dm, "seed", "training seed");

  CLI::App* train_policy =
      app.add_subcommand("train-policy", "train the toy behaviour policy");
  str_opt(train_policy, "corpus", "corpus directory");
  num_opt(train_policy, "steps", "optimizer steps");
  num_opt(train_policy, "rollout_scenes", "scenes to roll out");
  num_opt(train_policy, "rollout_steps", "rollout length");
  num_opt(train_policy, "seed", "training seed");

  CLI::App* generate = app.add_subcommand("generate", "sample initial scenes");
  str_opt(generate, "ae", "autoencoder artifact directory");
  str_opt(generate, "dm", "denoiser artifact directory");
  num_opt(generate, "n", "number of scenes");
  num_opt(generate, "agents", "fixed object count");
  num_opt(generate, "lanes", "fixed lane count");
  num_opt(generate, "guidance_scale", "classifier-free guidance scale");
  num_opt(generate, "temp_alpha", "lane noise temperature");
  num_opt(generate, "seed", "sampling seed");
  bool_opt(generate, "render", "also write SVGs");
  bool_opt(generate, "lane_conditioned", "objects conditioned on --map lanes");
  str_opt(generate, "map", "map scene for lane-conditioned generation");

  CLI::App* inpaint_cmd = app.add_subcommand("inpaint", "extend a half scene");
  str_opt(inpaint_cmd, "ae", "autoencoder artifact directory");
  str_opt(inpaint_cmd, "dm", "denoiser artifact directory");
  str_opt(inpaint_cmd, "scene", "input scene json (x<=0 half is kept)");
  str_opt(inpaint_cmd, "out_file", "output scene json");
  num_opt(inpaint_cmd, "guidance_scale", "classifier-free guidance scale");
  num_opt(inpaint_cmd, "seed", "sampling seed");
  bool_opt(inpaint_cmd, "render", "also write an SVG");

  CLI::App* simulate = app.add_subcommand("simulate", "closed-loop episodes");
  str_opt(simulate, "scenes", "scene directory");
  str_opt(simulate, "policy", "toy policy artifact directory (empty = IDM)");
  num_opt(simulate, "episodes", "episode count");
  num_opt(simulate, "kappa", "return-tilting inverse temperature");
  num_opt(simulate, "route_target", "route length target (m)");
  num_opt(simulate, "max_extensions", "inpainting extensions per episode");
  str_opt(simulate, "ae", "autoencoder artifacts (for extension)");
  str_opt(simulate, "dm", "denoiser artifacts (for extension)");
  num_opt(simulate, "seed", "episode seed");

  CLI::App* metrics = app.add_subcommand("metrics", "compare two scene sets");
  str_opt(metrics, "reference", "reference scene directory");
  str_opt(metrics, "candidate", "candidate scene directory");
  str_opt(metrics, "probe_ae", "probe autoencoder for the perceptual FD");

  CLI::App* render = app.add_subcommand("render", "scene to SVG");
  str_opt(render, "scene", "scene json");
  str_opt(render, "out_file", "output svg");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Params params = load_params(g, command);
    const Flags& f = flags[command];
    for (const auto& [key, v] : f.nums)
      if (v.first) {
        // integer-valued keys stay integers in the resolved snapshot
        if (v.second == std::floor(v.second) && key != "lr" && key != "kappa")
          params.override_if(true, key, static_cast<std::int64_t>(v.second));
        else
          params.override_if(true, key, v.second);
      }
    for (const auto& [key, v] : f.strs) params.override_if(v.first, key, v.second);
    for (const auto& [key, v] : f.bools) params.override_if(v.first, key, v.second);

    fs::create_directories(g.out_dir);
    if (command == "corpus") return cmd_corpus(g, std::move(params));
    if (command == "train-ae") return cmd_train_ae(g, std::move(params));
    if (command == "train-dm") return cmd_train_dm(g, std::move(params));
    if (command == "train-policy") return cmd_train_policy(g, std::move(params));
    if (command == "generate") return cmd_generate(g, std::move(params));
    if (command == "inpaint") return cmd_inpaint(g, std::move(params));
    if (command == "simulate") return cmd_simulate(g, std::move(params));
    if (command == "metrics") return cmd_metrics(g, std::move(params));
    if (command == "render") return cmd_render(g, std::move(params));
    std::fprintf(stderr, "unknown command %s\n", command.c_str());
    return kError;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return kMissingArtifact;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    std::fprintf(stderr, "error: %s\n", what.c_str());
    if (what.find("scene json") != std::string::npos) return kBadScene;
    if (what.find("scene:") != std::string::npos ||
        what.find("adjacency:") != std::string::npos)
      return kInvariantViolation;
    return kError;
  }
}
