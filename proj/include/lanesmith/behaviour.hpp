#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanesmith/corpus.hpp"
#include "lanesmith/metrics.hpp"
#include "lanesmith/nn.hpp"
#include "lanesmith/scene.hpp"

namespace lanesmith {

inline constexpr double kSimDt = 0.1;           // 10 Hz
inline constexpr int kReturnHorizonSteps = 20;  // 2 s
inline constexpr int kVocabSize = 384;
inline constexpr int kReturnBins = 350;
inline constexpr int kContextHorizon = 32;

// (dx, dy, dtheta) action templates quantizing one 0.1 s step.
class KdiskVocab {
 public:
  KdiskVocab() = default;
  explicit KdiskVocab(std::vector<std::array<double, 3>> templates,
                      double theta_weight = 1.0);

  int size() const { return static_cast<int>(templates_.size()); }
  // Nearest template under the (dx, dy, w*dtheta) metric; ties break to the
  // lower index.
  int tokenize(double dx, double dy, double dtheta) const;
  const std::array<double, 3>& detokenize(int token) const;

  nlohmann::json to_json() const;
  static KdiskVocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::array<double, 3>> templates_;
  double theta_weight_ = 1.0;
};

// k-means++ seeded Lloyd iterations over sampled deltas. Fewer than k
// distinct samples are padded with jittered duplicates (with a warning).
KdiskVocab build_kdisk_vocab(const std::vector<std::array<double, 3>>& samples,
                             int k, Rng& rng, double theta_weight = 1.0,
                             int max_iters = 40);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double speed = 0.0;
  double length = 4.5;
  double width = 2.0;
  ObjectClass cls = ObjectClass::kVehicle;
  bool alive = true;
  bool frozen = false;

  Obb box() const {
    return Obb{{x, y}, {std::cos(theta), std::sin(theta)}, length / 2.0, width / 2.0};
  }
};

AgentState agent_from_object(const Object& o);
Object object_from_agent(const AgentState& s);

// r = -10 * [collides with ego] + min(||p - p_ego||, 10) / 10, in [-10, 1].
double reward(const AgentState& agent, const AgentState& ego);

struct ReturnValue {
  double value = 0.0;
  bool truncated = false;  // fewer than the full horizon of rewards remained
};

// Sum of the next `horizon` rewards starting at `start` (discount exposed,
// default 1 as in the plain-sum definition).
ReturnValue discounted_return(const std::vector<double>& rewards, int start,
                              int horizon = kReturnHorizonSteps, double gamma = 1.0);

struct ReturnBinning {
  double lo = -10.0 * kReturnHorizonSteps;
  double hi = 1.0 * kReturnHorizonSteps;
  int bins = kReturnBins;

  int bin_of(double value) const;
  double center(int bin) const;
  nlohmann::json to_json() const;
  static ReturnBinning from_json(const nlohmann::json& j);
};

// Sample from softmax(logits + kappa * bin_center), computed in log space.
int tilted_return_sample(const std::vector<double>& logits, const ReturnBinning& bins,
                         double kappa, Rng& rng);

// Pose composed with a local-frame delta; speed = |(dx, dy)| / dt.
AgentState delta_forward(const AgentState& s, double dx, double dy, double dtheta,
                         double dt = kSimDt);

// Kinematic bicycle with wheelbase 0.8 * length; steer clamped to +-0.7 rad,
// accel to +-4 m/s^2, speed to [0, 30].
AgentState bicycle_forward(const AgentState& s, double accel, double steer,
                           double dt = kSimDt);

struct IdmParams {
  double v0 = 10.0;     // desired speed
  double headway = 1.5; // T
  double a_max = 1.5;
  double b_comf = 2.0;
  double s0 = 2.0;      // jam distance
  double delta = 4.0;
};

// Plain IDM acceleration; gap floored at 0.1 m. No leader: pass infinite gap.
double idm_accel(double speed, double gap, double leader_speed, const IdmParams& p);

// What a policy sees each tick for one agent subset (ego always included).
struct PolicyInput {
  struct HistoryItem {
    AgentState state;
    int action = -1;
    int return_bin = -1;
  };
  std::vector<AgentState> states;  // subset agents, ego at ego_slot
  std::vector<int> ids;            // world agent ids, aligned with states
  int ego_slot = 0;
  const Scene* map = nullptr;
  const std::vector<const Polyline*>* routes = nullptr;  // aligned, may be null
  const std::vector<const std::deque<HistoryItem>*>* history = nullptr;
  double dt = kSimDt;
};

class Policy {
 public:
  virtual ~Policy() = default;
  // One action token per subset agent (ego included; the caller decides
  // whether to use it).
  virtual std::vector<int> step(const PolicyInput& in, Rng& rng, double kappa) = 0;
  // Vocabulary that issued the tokens; the simulator decodes through it.
  virtual const KdiskVocab& vocabulary() const = 0;
};

// Rule-based route-following IDM with a leader search along the route.
class IdmPolicy : public Policy {
 public:
  IdmPolicy(const KdiskVocab* vocab, IdmParams params = {})
      : vocab_(vocab), params_(params) {}
  std::vector<int> step(const PolicyInput& in, Rng& rng, double kappa) override;
  const KdiskVocab& vocabulary() const override { return *vocab_; }

  // Continuous-space step used internally and by the rollout generator.
  static AgentState follow_route_step(const AgentState& s, const Polyline* route,
                                      double accel, double dt);
  static std::optional<double> leader_gap(const PolicyInput& in, int slot,
                                          double* leader_speed);

 private:
  const KdiskVocab* vocab_;
  IdmParams params_;
};

// Neighborhood feature vector shared by toy-policy training and inference.
inline constexpr int kToyFeatureDim = 11;
std::array<double, kToyFeatureDim> toy_features(const AgentState& agent,
                                                const AgentState& ego,
                                                const AgentState* nearest_neighbor,
                                                const Scene& map);

struct ToyPolicyConfig {
  int hidden = 64;
  int return_emb = 16;
};

// Return-conditioned feed-forward policy: a shared trunk with a return-bin
// head and an action head conditioned on the sampled return bin.
class ToyPolicy : public Policy {
 public:
  ToyPolicy(ToyPolicyConfig cfg, tc::ParamStore params, KdiskVocab vocab,
            ReturnBinning binning)
      : cfg_(cfg), params_(std::move(params)), vocab_(std::move(vocab)),
        binning_(binning) {}

  std::vector<int> step(const PolicyInput& in, Rng& rng, double kappa) override;
  const KdiskVocab& vocabulary() const override { return vocab_; }

  std::vector<double> return_logits(const std::array<double, kToyFeatureDim>& f) const;
  int sample_action(const std::array<double, kToyFeatureDim>& f, int return_bin,
                    Rng& rng) const;

  const KdiskVocab& vocab() const { return vocab_; }
  const ReturnBinning& binning() const { return binning_; }
  tc::ParamStore& params() { return params_; }
  const ToyPolicyConfig& config() const { return cfg_; }

 private:
  ToyPolicyConfig cfg_;
  mutable tc::ParamStore params_;
  KdiskVocab vocab_;
  ReturnBinning binning_;
};

// One supervised tuple extracted from a rollout.
struct BehaviourTuple {
  std::array<double, kToyFeatureDim> features;
  int action = 0;
  int return_bin = 0;
  bool truncated = false;
};

struct RolloutStepLog {
  int t = 0;
  int agent = 0;
  double x = 0, y = 0, theta = 0, speed = 0;
  int token = -1;
  int return_bin = -1;
};

struct BehaviourDataset {
  KdiskVocab vocab;
  ReturnBinning binning;
  std::vector<BehaviourTuple> tuples;
  std::vector<std::array<double, 3>> raw_deltas;  // aligned with tuples
  std::vector<RolloutTrace> traces;               // for behaviour JSD metrics
  std::vector<RolloutStepLog> step_logs;          // JSON-lines export
};

struct RolloutGenConfig {
  int n_scenes = 64;          // corpus scenes to roll out
  int steps = 80;             // rollout length
  double pursuit_fraction = 0.3;  // agents that periodically chase the ego
  double v0_jitter = 4.0;     // per-agent desired-speed spread
  std::uint64_t seed = 0;
};

// Randomized-IDM rollouts over corpus scenes (with a pursuing minority so
// returns carry behavioural signal), tokenized with a freshly built k-disks
// vocabulary.
BehaviourDataset generate_behaviour_dataset(const Corpus& corpus,
                                            const RolloutGenConfig& cfg);

void write_rollout_log(const std::vector<RolloutStepLog>& log, const std::string& path);

struct ToyTrainConfig {
  int steps = 3000;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct ToyTrainResult {
  tc::ParamStore params;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::vector<std::string> log_csv;
};

ToyTrainResult train_toy_policy(const BehaviourDataset& data, const ToyPolicyConfig& cfg,
                                const ToyTrainConfig& tcfg);

}  // namespace lanesmith
