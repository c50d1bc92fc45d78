#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lanesmith/autoencoder.hpp"
#include "lanesmith/corpus.hpp"

namespace lanesmith {

// Cosine variance schedule tables, 1-indexed by timestep; index 0 carries the
// alpha_bar[0] = 1 convention so beta_tilde[1] = 0.
struct NoiseSchedule {
  int T = 100;
  std::vector<double> beta;        // [T+1]
  std::vector<double> alpha;       // [T+1]
  std::vector<double> alpha_bar;   // [T+1], alpha_bar[0] = 1
  std::vector<double> beta_tilde;  // [T+1], beta_tilde[1] = 0
};

NoiseSchedule build_schedule(int T);

tc::Tensor q_sample(const tc::Tensor& h0, int t, const tc::Tensor& eps,
                    const NoiseSchedule& sched);

struct DmConfig {
  int lane_hidden = 128;
  int object_hidden = 64;
  int cond_dim = 128;
  int blocks = 2;
  int l2l_per_block = 1;  // the large layout uses 3
  int heads = 4;
  int lane_latent = 24;
  int object_latent = 8;
  int max_positions = 160;
};

struct DmConditioning {
  int timestep = 1;
  bool partitioned = false;
  ConditionLabel label = ConditionLabel::kCompat;
  bool null_cond = false;  // replaces the class conditioning with the null embedding
};

struct DenoiserOut {
  tc::Var eps_lane;  // [N_l, K_l]; invalid when the lane stream is empty
  tc::Var eps_obj;   // [N_o, K_o]; invalid when the object stream is empty
};

// Factorized AdaLN-Zero denoiser over whitened latent tokens. Token i of each
// type receives the sinusoidal positional encoding of ordering index i.
DenoiserOut denoise_eps(tc::Binder& b, const DmConfig& cfg, tc::Var lane_tokens,
                        tc::Var obj_tokens, const DmConditioning& cond);

struct DmLossOut {
  tc::Var loss;       // valid while the tape is alive
  double value = 0.0;
  double lane_mse = 0.0;
  double obj_mse = 0.0;
};

// 10 * mean lane MSE + mean object MSE on noise prediction. The leading
// known_lanes / known_objects token rows are presented clean (not noised) and
// excluded from the loss; zero for the unconditional objective.
DmLossOut dm_loss(tc::Binder& b, const DmConfig& cfg, const NoiseSchedule& sched,
                  const tc::Tensor& lane_h0, const tc::Tensor& obj_h0, int t,
                  const tc::Tensor& lane_eps, const tc::Tensor& obj_eps,
                  const DmConditioning& cond, int known_lanes = 0,
                  int known_objects = 0);

// Per-dimension whitening statistics over sampled autoencoder latents.
struct LatentStats {
  tc::Tensor lane_mean, lane_std;  // [1, K_l]
  tc::Tensor obj_mean, obj_std;    // [1, K_o]

  tc::Tensor whiten_lanes(const tc::Tensor& h) const;
  tc::Tensor unwhiten_lanes(const tc::Tensor& h) const;
  tc::Tensor whiten_objects(const tc::Tensor& h) const;
  tc::Tensor unwhiten_objects(const tc::Tensor& h) const;

  nlohmann::json to_json() const;
  static LatentStats from_json(const nlohmann::json& j);
};

LatentStats latent_stats(const Corpus& corpus, const AeModel& ae, int max_scenes,
                         std::uint64_t seed);

struct SampleOptions {
  double guidance_scale = 4.0;
  double temp_alpha = 0.75;  // scales the noise added to lane tokens
  double clip = 5.0;
};

// One reverse step; adds no noise at t = 1 and clips all tokens to
// (-clip, clip) afterwards.
struct LatentPair {
  tc::Tensor lanes;
  tc::Tensor objects;
};
LatentPair p_sample_step(const LatentPair& h_t, int t, const LatentPair& eps_hat,
                         const NoiseSchedule& sched, Rng& rng, double temp_alpha,
                         double clip = 5.0);

// Inference wrapper over trained denoiser parameters.
class DmModel {
 public:
  DmModel(DmConfig cfg, tc::ParamStore params, NoiseSchedule sched, LatentStats stats)
      : cfg_(cfg), params_(std::move(params)), sched_(std::move(sched)),
        stats_(std::move(stats)) {}

  LatentPair eps(const LatentPair& h_t, const DmConditioning& cond) const;
  // eps_null + s * (eps_cond - eps_null)
  LatentPair guided_eps(const LatentPair& h_t, const DmConditioning& cond,
                        double s) const;

  const DmConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const LatentStats& latents() const { return stats_; }
  tc::ParamStore& params() { return params_; }
  const tc::ParamStore& params() const { return params_; }

 private:
  DmConfig cfg_;
  mutable tc::ParamStore params_;
  NoiseSchedule sched_;
  LatentStats stats_;
};

// Full initial-scene generation: T reverse steps over N_o + N_l noise tokens,
// then autoencoder decoding. Counts must respect the dataset caps.
Scene sample_scene(int n_objects, int n_lanes, ConditionLabel label, const DmModel& dm,
                   const AeModel& ae, Rng& rng, const SampleOptions& opts = {});
Scene sample_scene(const CountDistribution& counts, ConditionLabel label,
                   const DmModel& dm, const AeModel& ae, Rng& rng,
                   const SampleOptions& opts = {});

// Lane-conditioned object generation: lane tokens stay fixed to the encoded
// map latents at every denoising step; the input map is preserved exactly.
Scene sample_objects_given_lanes(const Scene& map_scene, const DmModel& dm,
                                 const AeModel& ae, const CountDistribution& counts,
                                 Rng& rng, const SampleOptions& opts = {});

// Instrumentation hook for inpainting: called once per reverse step after the
// known-region replacement, with the freshly drawn replacement noise.
struct InpaintStep {
  int t = 0;
  const LatentPair* tokens = nullptr;
  const LatentPair* replacement_noise = nullptr;  // rows beyond F_N are zero
  int fn_lanes = 0;
  int fn_objects = 0;
};
using InpaintHook = std::function<void(const InpaintStep&)>;

struct InpaintResult {
  Scene scene;         // decoded F_N + F_P scene (partitioned)
  bool empty_fp = false;  // classifier drew zero new lanes
  int fn_lanes = 0, fp_lanes = 0;
  int fn_objects = 0, fp_objects = 0;
};

// Replacement-method inpainting: at every step the F_N token rows are set to
// q_sample of their encoded latents with fresh noise; new F_P tokens follow
// the reverse chain. The number of new lanes comes from the autoencoder's
// lane-count classifier; new object counts from partitioned corpus statistics.
InpaintResult inpaint(const Scene& scene_fn, const DmModel& dm, const AeModel& ae,
                      const PartitionCountModel& counts, Rng& rng,
                      const SampleOptions& opts = {}, const InpaintHook& hook = {});

struct DmTrainConfig {
  int steps = 6000;
  int batch_size = 8;
  double lr = 3e-4;
  double weight_decay = 1e-5;
  double ema_decay = 0.9999;
  double cond_dropout = 0.1;
  double partitioned_fraction = 0.5;
  // fraction of batches trained in a conditional mode (clean known tokens)
  double lane_conditioned_fraction = 0.15;
  double fn_conditioned_fraction = 0.25;
  std::uint64_t seed = 0;
  int latent_stat_scenes = 256;
};

struct DmTrainResult {
  tc::ParamStore params;
  tc::ParamStore ema_params;
  LatentStats stats;
  NoiseSchedule schedule;
  std::vector<std::string> log_csv;
};

DmTrainResult train_dm(const Corpus& corpus, const AeModel& ae, const DmConfig& cfg,
                       const DmTrainConfig& tcfg);

}  // namespace lanesmith
