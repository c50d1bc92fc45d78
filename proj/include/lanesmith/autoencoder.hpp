#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lanesmith/corpus.hpp"
#include "lanesmith/nn.hpp"
#include "lanesmith/scene_ops.hpp"

namespace lanesmith {

struct AeConfig {
  int lane_hidden = 64;
  int object_hidden = 32;
  int edge_hidden = 16;
  int lane_latent = 24;
  int object_latent = 8;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int heads = 4;
  int max_lane_count = kMaxLanes;  // classifier over 0..max_lane_count

  double lambda_lane = 10.0;
  double lambda_conn = 10.0;
  double lambda_num = 0.1;
  double beta = 0.01;
};

// Model inputs for one (canonically ordered) scene.
struct AeInputs {
  const SceneFeatures* features = nullptr;
  const Adjacency* adjacency = nullptr;
  bool partitioned = false;
  // Number of leading lanes belonging to F_N; the lane-count query attends
  // only to those. -1 means all lanes (used when encoding a bare F_N scene).
  int fn_lane_count = -1;
};

struct EncoderOutput {
  tc::Var lane_mu, lane_logsigma;  // [N_l, K_l]
  tc::Var obj_mu, obj_logsigma;    // [N_o, K_o]; invalid when N_o = 0
  tc::Var lane_count_logits;       // [1, max_lane_count+1]; valid when partitioned
  tc::Var lane_embedding;          // [N_l, lane_hidden], penultimate features
};

struct DecoderOutput {
  tc::Var lane_recon;        // [N_l, 40]
  tc::Var lane_type_logits;  // [N_l, 3]
  tc::Var obj_recon;         // [N_o, 7]; invalid when N_o = 0
  tc::Var obj_class_logits;  // [N_o, 5]
  tc::Var conn_logits;       // [N_l*N_l, 4], row i*N_l+j; diagonal rows masked out
};

// Connectivity classes per ordered lane pair.
enum ConnClass { kConnNone = 0, kConnSuccessor = 1, kConnLeft = 2, kConnRight = 3 };

std::vector<int> connectivity_targets(const Adjacency& adj, int n_lanes);

EncoderOutput ae_encode(tc::Binder& b, const AeConfig& cfg, const AeInputs& in);
DecoderOutput ae_decode(tc::Binder& b, const AeConfig& cfg, tc::Var lane_latents,
                        tc::Var obj_latents);

// In-graph reparameterization h = mu + sigma * eps with sigma = exp(logsigma)
// clamped to [1e-8, 1e3].
tc::Var reparameterize(tc::Var mu, tc::Var logsigma, Rng& rng);
// Value-level variant used outside training.
tc::Tensor reparameterize_values(const tc::Tensor& mu, const tc::Tensor& sigma, Rng& rng);
tc::Tensor sigma_from_logsigma(const tc::Tensor& logsigma);

struct AeLossBreakdown {
  tc::Var total;              // valid while the building tape is alive
  double total_value = 0.0;   // scalar copy that outlives the tape
  double lane_l2 = 0.0;
  double lane_type_ce = 0.0;
  double obj_l2 = 0.0;
  double obj_class_ce = 0.0;
  double conn_ce = 0.0;
  double kl = 0.0;
  double num_ce = 0.0;
};

// total = lambda_lane*(lane_l2 + lane_type_ce) + (obj_l2 + obj_class_ce)
//       + lambda_conn*conn_ce + beta*kl + lambda_num*num_ce
// where l2 terms are per-element mean squared-norm errors, ce terms are mean
// cross entropies, and num_ce applies only to partitioned scenes.
AeLossBreakdown elbo_loss(const AeConfig& cfg, const SceneFeatures& targets,
                          const Adjacency& adjacency, const EncoderOutput& enc,
                          const DecoderOutput& dec, bool partitioned,
                          int fp_lane_count);

struct AeTrainConfig {
  int steps = 4000;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int warmup = 200;
  std::uint64_t seed = 0;
  double partitioned_fraction = 0.5;
  int val_every = 500;
  int val_scenes = 24;
};

struct AeTrainResult {
  tc::ParamStore params;
  std::vector<std::string> log_csv;  // "step,total,lane_l2,lane_type,obj_l2,obj_ce,conn,kl,num"
  double first_val = 0.0;
  double last_val = 0.0;
};

AeTrainResult train_autoencoder(const Corpus& corpus, const FeatureStats& stats,
                                const AeConfig& cfg, const AeTrainConfig& tcfg);

// Inference wrapper around trained parameters.
class AeModel {
 public:
  AeModel(AeConfig cfg, tc::ParamStore params, FeatureStats stats)
      : cfg_(cfg), params_(std::move(params)), stats_(stats) {}

  struct Encoded {
    tc::Tensor lane_mu, lane_sigma;  // [N_l, K_l]
    tc::Tensor obj_mu, obj_sigma;    // [N_o, K_o]
    tc::Tensor lane_count_logits;    // [1, C]; empty when not partitioned
    tc::Tensor lane_embedding;       // penultimate lane features
  };

  // Scene must be canonical (ordered). fn_lane_count as in AeInputs.
  Encoded encode(const Scene& scene, bool partitioned, int fn_lane_count = -1) const;

  struct DecodedTensors {
    tc::Tensor lane_recon, lane_type_logits, obj_recon, obj_class_logits, conn_logits;
  };
  DecodedTensors decode_tensors(const tc::Tensor& lane_latents,
                                const tc::Tensor& obj_latents) const;

  // Full decode into a Scene: clamps features into the training range,
  // derives adjacency from the connectivity head and enforces the
  // single-ego rule.
  Scene decode_scene(const tc::Tensor& lane_latents, const tc::Tensor& obj_latents,
                     bool partitioned, ConditionLabel condition) const;

  const AeConfig& config() const { return cfg_; }
  const FeatureStats& stats() const { return stats_; }
  const tc::ParamStore& params() const { return params_; }
  tc::ParamStore& params() { return params_; }

 private:
  AeConfig cfg_;
  mutable tc::ParamStore params_;  // lazy shape registration on first bind
  FeatureStats stats_;
};

// Mean-pooled penultimate lane embeddings, one row per scene; the input of
// the perceptual Frechet distance.
tc::Tensor scene_lane_embeddings(const AeModel& model,
                                 const std::vector<const Scene*>& scenes);

double perceptual_fd(const std::vector<const Scene*>& real_scenes,
                     const std::vector<const Scene*>& gen_scenes,
                     const AeModel& probe);

tc::Tensor one_hot(const std::vector<int>& indices, int classes);

}  // namespace lanesmith
