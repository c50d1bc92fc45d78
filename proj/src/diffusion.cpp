#include "lanesmith/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"

namespace lanesmith {

using tc::Binder;
using tc::Init;
using tc::Tape;
using tc::Tensor;
using tc::Var;

NoiseSchedule build_schedule(int T) {
  if (T < 1) throw std::invalid_argument("build_schedule: T >= 1 required");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.beta_tilde.assign(T + 1, 0.0);
  const double offs = 0.008;
  auto f = [&](double t) {
    const double x = (t / T + offs) / (1.0 + offs) * M_PI / 2.0;
    const double c = std::cos(x);
    return c * c;
  };
  const double f0 = f(0.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double raw = f(static_cast<double>(t)) / f0;
    s.beta[t] = std::min(1.0 - raw / prev_raw, 0.999);
    prev_raw = raw;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.beta_tilde[t] =
        (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

Tensor q_sample(const Tensor& h0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw std::invalid_argument("q_sample: t out of range");
  if (!h0.same_shape(eps)) throw std::invalid_argument("q_sample: shape mismatch");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = h0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * h0.data[i] + b * eps.data[i];
  return out;
}

namespace {

// x * (1 + scale) + shift, all row-broadcast
Var modulate(Var x, Var shift, Var scale) {
  return tc::add_rowvec(tc::mul_rowvec(x, tc::add_scalar(scale, 1.0)), shift);
}

Var plain_ln(Binder& b, Var x) {
  Tape& T = b.tape();
  const int d = T.val(x).cols();
  Var gain = T.leaf(Tensor::full({1, d}, 1.0));
  Var bias = T.leaf(Tensor::zeros({1, d}));
  return tc::layer_norm(x, gain, bias);
}

struct Modulation {
  Var shift_a, scale_a, gate_a, shift_m, scale_m, gate_m;
};

Modulation adaln_modulation(Binder& b, const std::string& prefix, Var cond, int d) {
  Var h = tc::silu(cond);
  Var m = tc::linear(b, prefix + "/mod", h, 6 * d, Init::kZeros);
  Modulation out;
  out.shift_a = tc::slice_cols(m, 0, d);
  out.scale_a = tc::slice_cols(m, d, d);
  out.gate_a = tc::slice_cols(m, 2 * d, d);
  out.shift_m = tc::slice_cols(m, 3 * d, d);
  out.scale_m = tc::slice_cols(m, 4 * d, d);
  out.gate_m = tc::slice_cols(m, 5 * d, d);
  return out;
}

// DiT block with AdaLN-Zero conditioning; context empty -> self attention.
Var dit_block(Binder& b, const std::string& prefix, Var x, std::optional<Var> context,
              Var cond, int heads) {
  Tape& T = b.tape();
  const int d = T.val(x).cols();
  Modulation mod = adaln_modulation(b, prefix, cond, d);
  Var h = modulate(plain_ln(b, x), mod.shift_a, mod.scale_a);
  Var ctx = context.has_value() ? plain_ln(b, *context) : h;
  tc::AttentionInputs in{h, ctx, {}, {}};
  Var attn = tc::multi_head_attention(b, prefix + "/attn", in, heads);
  x = tc::add(x, tc::mul_rowvec(attn, mod.gate_a));
  Var m = modulate(plain_ln(b, x), mod.shift_m, mod.scale_m);
  m = tc::mlp(b, prefix + "/mlp", m, {4 * d, d});
  return tc::add(x, tc::mul_rowvec(m, mod.gate_m));
}

Var conditioning_vector(Binder& b, const DmConfig& cfg, const DmConditioning& cond) {
  Tape& T = b.tape();
  Var t_sin = T.leaf(tc::sinusoidal_timestep(cond.timestep, cfg.cond_dim));
  Var t_emb = tc::mlp(b, "dm/t_emb", t_sin, {cfg.cond_dim, cfg.cond_dim});
  Var scene_emb = b.p("dm/scene_emb", {2, cfg.cond_dim}, Init::kNormal02);
  Var label_emb = b.p("dm/label_emb", {2, cfg.cond_dim}, Init::kNormal02);
  Var null_emb = b.p("dm/null_emb", {1, cfg.cond_dim}, Init::kNormal02);
  Var cls;
  if (cond.null_cond) {
    cls = null_emb;
  } else {
    Var s = tc::gather_rows(scene_emb, {cond.partitioned ? 1 : 0});
    Var l = tc::gather_rows(label_emb,
                            {cond.label == ConditionLabel::kIncompat ? 1 : 0});
    cls = tc::add(s, l);
  }
  return tc::add(t_emb, cls);
}

}  // namespace

DenoiserOut denoise_eps(Binder& b, const DmConfig& cfg, Var lane_tokens, Var obj_tokens,
                        const DmConditioning& cond) {
  Tape& T = b.tape();
  const int nl = lane_tokens.valid() ? T.val(lane_tokens).rows() : 0;
  const int no = obj_tokens.valid() ? T.val(obj_tokens).rows() : 0;
  if (nl == 0 && no == 0)
    throw std::invalid_argument("denoise_eps: both token streams empty");
  if (nl > cfg.max_positions || no > cfg.max_positions)
    throw std::invalid_argument("denoise_eps: token count exceeds positional table");
  if (cond.timestep < 1) throw std::invalid_argument("denoise_eps: bad timestep");

  Var c = conditioning_vector(b, cfg, cond);

  Var L, O;
  if (nl > 0) {
    L = tc::mlp(b, "dm/f_emb_l", lane_tokens, {cfg.lane_hidden, cfg.lane_hidden});
    Tensor pe = tc::sinusoidal_encoding(cfg.max_positions, cfg.lane_hidden);
    std::vector<int> rows(nl);
    std::iota(rows.begin(), rows.end(), 0);
    L = tc::add(L, tc::gather_rows(T.leaf(pe), rows));
  }
  if (no > 0) {
    O = tc::mlp(b, "dm/f_emb_o", obj_tokens, {cfg.object_hidden, cfg.object_hidden});
    Tensor pe = tc::sinusoidal_encoding(cfg.max_positions, cfg.object_hidden);
    std::vector<int> rows(no);
    std::iota(rows.begin(), rows.end(), 0);
    O = tc::add(O, tc::gather_rows(T.leaf(pe), rows));
  }

  for (int k = 0; k < cfg.blocks; ++k) {
    const std::string p = "dm/fab" + std::to_string(k);
    if (nl > 0 && no > 0) {
      Var Op = tc::linear(b, p + "/proj_o2l", O, cfg.lane_hidden);
      L = dit_block(b, p + "/o2l", L, Op, c, cfg.heads);
    }
    if (nl > 0)
      for (int r = 0; r < cfg.l2l_per_block; ++r)
        L = dit_block(b, p + "/l2l" + std::to_string(r), L, {}, c, cfg.heads);
    if (no > 0 && nl > 0) {
      Var Lp = tc::linear(b, p + "/proj_l2o", L, cfg.object_hidden);
      O = dit_block(b, p + "/l2o", O, Lp, c, cfg.heads);
    }
    if (no > 0) O = dit_block(b, p + "/o2o", O, {}, c, cfg.heads);
  }

  DenoiserOut out;
  if (nl > 0)
    out.eps_lane = tc::mlp(b, "dm/f_eps_l", L,
                           {cfg.lane_hidden, cfg.lane_hidden, cfg.lane_hidden,
                            cfg.lane_latent});
  if (no > 0)
    out.eps_obj = tc::mlp(b, "dm/f_eps_o", O,
                          {cfg.object_hidden, cfg.object_hidden, cfg.object_hidden,
                           cfg.object_latent});
  return out;
}

DmLossOut dm_loss(Binder& b, const DmConfig& cfg, const NoiseSchedule& sched,
                  const Tensor& lane_h0, const Tensor& obj_h0, int t,
                  const Tensor& lane_eps, const Tensor& obj_eps,
                  const DmConditioning& cond, int known_lanes, int known_objects) {
  Tape& T = b.tape();
  const int nl = lane_h0.rows();
  const int no = obj_h0.rows();
  if (known_lanes > nl || known_objects > no)
    throw std::invalid_argument("dm_loss: known counts exceed token counts");

  auto noised = [&](const Tensor& h0, const Tensor& eps, int known) {
    Tensor h_t = q_sample(h0, t, eps, sched);
    for (int i = 0; i < known; ++i)
      for (int j = 0; j < h0.cols(); ++j) h_t.at(i, j) = h0.at(i, j);
    return h_t;
  };

  Var lane_tokens, obj_tokens;
  if (nl > 0) lane_tokens = T.leaf(noised(lane_h0, lane_eps, known_lanes));
  if (no > 0) obj_tokens = T.leaf(noised(obj_h0, obj_eps, known_objects));
  DmConditioning c = cond;
  c.timestep = t;
  DenoiserOut eps_hat = denoise_eps(b, cfg, lane_tokens, obj_tokens, c);

  DmLossOut out;
  Var loss;
  const int loss_lanes = nl - known_lanes;
  if (loss_lanes > 0) {
    Var pred = tc::slice_rows(eps_hat.eps_lane, known_lanes, loss_lanes);
    Tensor want = Tensor::zeros({loss_lanes, lane_h0.cols()});
    for (int i = 0; i < loss_lanes; ++i)
      for (int j = 0; j < lane_h0.cols(); ++j)
        want.at(i, j) = lane_eps.at(known_lanes + i, j);
    Var lane_mse = tc::mean_squares(tc::sub(pred, T.leaf(want)));
    out.lane_mse = tc::scalar_value(lane_mse);
    loss = tc::scale(lane_mse, 10.0);
  }
  const int loss_objs = no - known_objects;
  if (loss_objs > 0) {
    Var pred = tc::slice_rows(eps_hat.eps_obj, known_objects, loss_objs);
    Tensor want = Tensor::zeros({loss_objs, obj_h0.cols()});
    for (int i = 0; i < loss_objs; ++i)
      for (int j = 0; j < obj_h0.cols(); ++j)
        want.at(i, j) = obj_eps.at(known_objects + i, j);
    Var obj_mse = tc::mean_squares(tc::sub(pred, T.leaf(want)));
    out.obj_mse = tc::scalar_value(obj_mse);
    loss = loss.valid() ? tc::add(loss, obj_mse) : obj_mse;
  }
  if (!loss.valid()) throw std::invalid_argument("dm_loss: nothing to supervise");
  out.loss = loss;
  out.value = tc::scalar_value(loss);
  return out;
}

Tensor LatentStats::whiten_lanes(const Tensor& h) const {
  Tensor out = h;
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j)
      out.at(i, j) = (h.at(i, j) - lane_mean.at(0, j)) / lane_std.at(0, j);
  return out;
}
Tensor LatentStats::unwhiten_lanes(const Tensor& h) const {
  Tensor out = h;
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j)
      out.at(i, j) = h.at(i, j) * lane_std.at(0, j) + lane_mean.at(0, j);
  return out;
}
Tensor LatentStats::whiten_objects(const Tensor& h) const {
  Tensor out = h;
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j)
      out.at(i, j) = (h.at(i, j) - obj_mean.at(0, j)) / obj_std.at(0, j);
  return out;
}
Tensor LatentStats::unwhiten_objects(const Tensor& h) const {
  Tensor out = h;
  for (int i = 0; i < h.rows(); ++i)
    for (int j = 0; j < h.cols(); ++j)
      out.at(i, j) = h.at(i, j) * obj_std.at(0, j) + obj_mean.at(0, j);
  return out;
}

nlohmann::json LatentStats::to_json() const {
  auto vec = [](const Tensor& t) { return t.data; };
  return {{"lane_mean", vec(lane_mean)},
          {"lane_std", vec(lane_std)},
          {"obj_mean", vec(obj_mean)},
          {"obj_std", vec(obj_std)}};
}

LatentStats LatentStats::from_json(const nlohmann::json& j) {
  LatentStats s;
  auto load = [&](const char* key) {
    std::vector<double> v = j.at(key).get<std::vector<double>>();
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  };
  s.lane_mean = load("lane_mean");
  s.lane_std = load("lane_std");
  s.obj_mean = load("obj_mean");
  s.obj_std = load("obj_std");
  return s;
}

LatentStats latent_stats(const Corpus& corpus, const AeModel& ae, int max_scenes,
                         std::uint64_t seed) {
  const auto train = corpus.train_scenes();
  if (train.empty()) throw std::invalid_argument("latent_stats: empty corpus");
  Rng rng(seed);
  const int kl = ae.config().lane_latent;
  const int ko = ae.config().object_latent;
  std::vector<double> lane_sum(kl, 0.0), lane_sq(kl, 0.0);
  std::vector<double> obj_sum(ko, 0.0), obj_sq(ko, 0.0);
  std::int64_t n_lane = 0, n_obj = 0;
  const int n = std::min<int>(max_scenes, static_cast<int>(train.size()));
  for (int s = 0; s < n; ++s) {
    for (int variant = 0; variant < 2; ++variant) {
      Scene scene = variant == 0 ? *train[s] : make_partitioned_variant(*train[s]);
      AeModel::Encoded enc = ae.encode(scene, scene.partitioned);
      Tensor lanes = reparameterize_values(enc.lane_mu, enc.lane_sigma, rng);
      for (int i = 0; i < lanes.rows(); ++i, ++n_lane)
        for (int j = 0; j < kl; ++j) {
          lane_sum[j] += lanes.at(i, j);
          lane_sq[j] += lanes.at(i, j) * lanes.at(i, j);
        }
      if (enc.obj_mu.rows() > 0) {
        Tensor objs = reparameterize_values(enc.obj_mu, enc.obj_sigma, rng);
        for (int i = 0; i < objs.rows(); ++i, ++n_obj)
          for (int j = 0; j < ko; ++j) {
            obj_sum[j] += objs.at(i, j);
            obj_sq[j] += objs.at(i, j) * objs.at(i, j);
          }
      }
    }
  }
  LatentStats out;
  out.lane_mean = Tensor::zeros({1, kl});
  out.lane_std = Tensor::zeros({1, kl});
  out.obj_mean = Tensor::zeros({1, ko});
  out.obj_std = Tensor::zeros({1, ko});
  for (int j = 0; j < kl; ++j) {
    const double m = lane_sum[j] / std::max<std::int64_t>(1, n_lane);
    out.lane_mean.at(0, j) = m;
    double v = lane_sq[j] / std::max<std::int64_t>(1, n_lane) - m * m;
    double sd = std::sqrt(std::max(v, 0.0));
    if (sd < 1e-8) {
      log_warn("latent_stats: lane dim " + std::to_string(j) + " has ~zero std");
      sd = 1e-8;
    }
    out.lane_std.at(0, j) = sd;
  }
  for (int j = 0; j < ko; ++j) {
    const double m = obj_sum[j] / std::max<std::int64_t>(1, n_obj);
    out.obj_mean.at(0, j) = m;
    double v = obj_sq[j] / std::max<std::int64_t>(1, n_obj) - m * m;
    double sd = std::sqrt(std::max(v, 0.0));
    if (sd < 1e-8) {
      log_warn("latent_stats: object dim " + std::to_string(j) + " has ~zero std");
      sd = 1e-8;
    }
    out.obj_std.at(0, j) = sd;
  }
  return out;
}

LatentPair p_sample_step(const LatentPair& h_t, int t, const LatentPair& eps_hat,
                         const NoiseSchedule& sched, Rng& rng, double temp_alpha,
                         double clip) {
  if (t < 1 || t > sched.T) throw std::invalid_argument("p_sample_step: t out of range");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double coef = (1.0 - sched.alpha[t]) / std::sqrt(1.0 - sched.alpha_bar[t]);
  const double sigma = std::sqrt(sched.beta_tilde[t]);
  auto step_one = [&](const Tensor& h, const Tensor& eps, double z_scale) {
    Tensor out = h;
    for (std::size_t i = 0; i < h.data.size(); ++i) {
      double mu = inv_sqrt_alpha * (h.data[i] - coef * eps.data[i]);
      if (t > 1) mu += sigma * z_scale * rng.normal();
      out.data[i] = std::clamp(mu, -clip, clip);
    }
    return out;
  };
  LatentPair out;
  if (h_t.lanes.rows() > 0) out.lanes = step_one(h_t.lanes, eps_hat.lanes, temp_alpha);
  else out.lanes = h_t.lanes;
  if (h_t.objects.rows() > 0)
    out.objects = step_one(h_t.objects, eps_hat.objects, 1.0);
  else out.objects = h_t.objects;
  return out;
}

LatentPair DmModel::eps(const LatentPair& h_t, const DmConditioning& cond) const {
  Tape tape(false);
  Binder binder(tape, params_, false);
  Var lanes, objs;
  if (h_t.lanes.rows() > 0) lanes = tape.leaf(h_t.lanes);
  if (h_t.objects.rows() > 0) objs = tape.leaf(h_t.objects);
  DenoiserOut out = denoise_eps(binder, cfg_, lanes, objs, cond);
  LatentPair pair;
  pair.lanes = out.eps_lane.valid() ? tape.val(out.eps_lane)
                                    : Tensor::zeros({0, cfg_.lane_latent});
  pair.objects = out.eps_obj.valid() ? tape.val(out.eps_obj)
                                     : Tensor::zeros({0, cfg_.object_latent});
  return pair;
}

LatentPair DmModel::guided_eps(const LatentPair& h_t, const DmConditioning& cond,
                               double s) const {
  DmConditioning null_cond = cond;
  null_cond.null_cond = true;
  if (s == 1.0) return eps(h_t, cond);
  if (s == 0.0) return eps(h_t, null_cond);
  LatentPair e_cond = eps(h_t, cond);
  LatentPair e_null = eps(h_t, null_cond);
  LatentPair out = e_null;
  for (std::size_t i = 0; i < out.lanes.data.size(); ++i)
    out.lanes.data[i] += s * (e_cond.lanes.data[i] - e_null.lanes.data[i]);
  for (std::size_t i = 0; i < out.objects.data.size(); ++i)
    out.objects.data[i] += s * (e_cond.objects.data[i] - e_null.objects.data[i]);
  return out;
}

namespace {

LatentPair noise_tokens(int nl, int no, int kl, int ko, Rng& rng) {
  LatentPair h;
  h.lanes = Tensor::randn({nl, kl}, rng);
  h.objects = Tensor::randn({no, ko}, rng);
  return h;
}

}  // namespace

Scene sample_scene(int n_objects, int n_lanes, ConditionLabel label, const DmModel& dm,
                   const AeModel& ae, Rng& rng, const SampleOptions& opts) {
  if (n_lanes < 1 || n_lanes > kMaxLanes)
    throw std::invalid_argument("sample_scene: lane count out of range");
  if (n_objects < 1)
    throw std::invalid_argument("sample_scene: need at least one object (the ego)");
  const NoiseSchedule& sched = dm.schedule();
  DmConditioning cond;
  cond.partitioned = false;
  cond.label = label;
  LatentPair h = noise_tokens(n_lanes, n_objects, dm.config().lane_latent,
                              dm.config().object_latent, rng);
  for (int t = sched.T; t >= 1; --t) {
    cond.timestep = t;
    LatentPair eps_hat = dm.guided_eps(h, cond, opts.guidance_scale);
    h = p_sample_step(h, t, eps_hat, sched, rng, opts.temp_alpha, opts.clip);
  }
  const Tensor lanes = dm.latents().unwhiten_lanes(h.lanes);
  const Tensor objs = dm.latents().unwhiten_objects(h.objects);
  Scene scene = ae.decode_scene(lanes, objs, false, label);
  return scene;
}

Scene sample_scene(const CountDistribution& counts, ConditionLabel label,
                   const DmModel& dm, const AeModel& ae, Rng& rng,
                   const SampleOptions& opts) {
  auto [no, nl] = counts.sample(rng);
  return sample_scene(no, nl, label, dm, ae, rng, opts);
}

Scene sample_objects_given_lanes(const Scene& map_scene, const DmModel& dm,
                                 const AeModel& ae, const CountDistribution& counts,
                                 Rng& rng, const SampleOptions& opts) {
  if (map_scene.num_lanes() > kMaxLanes)
    throw std::invalid_argument("sample_objects_given_lanes: too many lanes");
  Scene map_only = map_scene;
  map_only.objects.clear();
  map_only.object_order.clear();
  AeModel::Encoded enc = ae.encode(map_only, false);
  const Tensor lane_tokens = dm.latents().whiten_lanes(enc.lane_mu);

  const int no = counts.sample_objects_given_lanes(map_only.num_lanes(), rng);
  const NoiseSchedule& sched = dm.schedule();
  DmConditioning cond;
  cond.partitioned = false;
  cond.label = map_scene.condition;
  LatentPair h;
  h.lanes = lane_tokens;  // fixed at every step, never noised
  h.objects = Tensor::randn({std::max(1, no), dm.config().object_latent}, rng);
  for (int t = sched.T; t >= 1; --t) {
    cond.timestep = t;
    LatentPair eps_hat = dm.guided_eps(h, cond, opts.guidance_scale);
    LatentPair next = p_sample_step(h, t, eps_hat, sched, rng, opts.temp_alpha, opts.clip);
    h.objects = next.objects;  // lane tokens stay pinned to the encoder means
  }
  const Tensor objs = dm.latents().unwhiten_objects(h.objects);
  Scene decoded = ae.decode_scene(enc.lane_mu, objs, false, map_scene.condition);
  Scene out = map_only;  // the input map is preserved exactly
  out.objects = decoded.objects;
  out.object_order.clear();
  return out;
}

InpaintResult inpaint(const Scene& scene_fn, const DmModel& dm, const AeModel& ae,
                      const PartitionCountModel& counts, Rng& rng,
                      const SampleOptions& opts, const InpaintHook& hook) {
  for (const Lane& lane : scene_fn.lanes)
    if (lane.max_x() > 1e-9)
      throw std::invalid_argument("inpaint: scene_fn must occupy x <= 0");

  InpaintResult result;
  result.fn_lanes = scene_fn.num_lanes();
  result.fn_objects = scene_fn.num_objects();

  AeModel::Encoded enc =
      ae.encode(scene_fn, /*partitioned=*/true, /*fn_lane_count=*/scene_fn.num_lanes());

  // draw the number of new lanes from the classifier head
  int fp_lanes = 0;
  {
    const Tensor& logits = enc.lane_count_logits;
    std::vector<double> probs(logits.cols());
    double mx = logits.at(0, 0);
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(0, j));
    double denom = 0.0;
    for (int j = 0; j < logits.cols(); ++j) {
      probs[j] = std::exp(logits.at(0, j) - mx);
      denom += probs[j];
    }
    double u = rng.uniform() * denom;
    for (int j = 0; j < logits.cols(); ++j) {
      u -= probs[j];
      if (u < 0.0) {
        fp_lanes = j;
        break;
      }
    }
    fp_lanes = std::min(fp_lanes, kMaxLanes - scene_fn.num_lanes());
  }
  if (fp_lanes == 0) {
    result.scene = scene_fn;
    result.empty_fp = true;
    return result;
  }
  const int fp_objects =
      counts.sample_fp_objects(scene_fn.num_objects(),
                               scene_fn.num_lanes() + fp_lanes, rng);
  result.fp_lanes = fp_lanes;
  result.fp_objects = fp_objects;

  const Tensor known_lanes = dm.latents().whiten_lanes(enc.lane_mu);
  const Tensor known_objs = enc.obj_mu.rows() > 0
                                ? dm.latents().whiten_objects(enc.obj_mu)
                                : Tensor::zeros({0, dm.config().object_latent});
  const int nl = result.fn_lanes + fp_lanes;
  const int no = result.fn_objects + fp_objects;

  const NoiseSchedule& sched = dm.schedule();
  DmConditioning cond;
  cond.partitioned = true;
  cond.label = scene_fn.condition;

  LatentPair h = noise_tokens(nl, no, dm.config().lane_latent,
                              dm.config().object_latent, rng);
  for (int t = sched.T; t >= 1; --t) {
    // known-region replacement with fresh noise
    LatentPair repl;
    repl.lanes = Tensor::zeros({nl, dm.config().lane_latent});
    repl.objects = Tensor::zeros({no, dm.config().object_latent});
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
    for (int i = 0; i < result.fn_lanes; ++i)
      for (int j = 0; j < dm.config().lane_latent; ++j) {
        const double z = rng.normal();
        repl.lanes.at(i, j) = z;
        h.lanes.at(i, j) = a * known_lanes.at(i, j) + s * z;
      }
    for (int i = 0; i < result.fn_objects; ++i)
      for (int j = 0; j < dm.config().object_latent; ++j) {
        const double z = rng.normal();
        repl.objects.at(i, j) = z;
        h.objects.at(i, j) = a * known_objs.at(i, j) + s * z;
      }
    if (hook) {
      InpaintStep step{t, &h, &repl, result.fn_lanes, result.fn_objects};
      hook(step);
    }
    cond.timestep = t;
    LatentPair eps_hat = dm.guided_eps(h, cond, opts.guidance_scale);
    h = p_sample_step(h, t, eps_hat, sched, rng, opts.temp_alpha, opts.clip);
  }
  // pin the known region to its exact latents for decoding
  for (int i = 0; i < result.fn_lanes; ++i)
    for (int j = 0; j < dm.config().lane_latent; ++j)
      h.lanes.at(i, j) = known_lanes.at(i, j);
  for (int i = 0; i < result.fn_objects; ++i)
    for (int j = 0; j < dm.config().object_latent; ++j)
      h.objects.at(i, j) = known_objs.at(i, j);

  const Tensor lanes = dm.latents().unwhiten_lanes(h.lanes);
  const Tensor objs = dm.latents().unwhiten_objects(h.objects);
  result.scene = ae.decode_scene(lanes, objs, true, scene_fn.condition);
  return result;
}

namespace {

struct DmPrepared {
  Tensor lane_mu, lane_sigma, obj_mu, obj_sigma;
  bool partitioned = false;
  int fn_lanes = 0, fn_objects = 0;
};

void register_dm_params(tc::ParamStore& store, const DmConfig& cfg) {
  Tape tape(false);
  Binder binder(tape, store, false);
  Rng rng(0);
  Var lanes = tape.leaf(Tensor::randn({2, cfg.lane_latent}, rng));
  Var objs = tape.leaf(Tensor::randn({1, cfg.object_latent}, rng));
  DmConditioning cond;
  cond.timestep = 1;
  denoise_eps(binder, cfg, lanes, objs, cond);
}

}  // namespace

DmTrainResult train_dm(const Corpus& corpus, const AeModel& ae, const DmConfig& cfg,
                       const DmTrainConfig& tcfg) {
  if (cfg.lane_latent != ae.config().lane_latent ||
      cfg.object_latent != ae.config().object_latent)
    throw std::invalid_argument("train_dm: latent dims disagree with the autoencoder");

  DmTrainResult result;
  result.schedule = build_schedule(100);
  result.stats = latent_stats(corpus, ae, tcfg.latent_stat_scenes, tcfg.seed + 5);
  result.params = tc::ParamStore(tcfg.seed + 23);
  register_dm_params(result.params, cfg);

  const auto train = corpus.train_scenes();
  if (train.empty()) throw std::invalid_argument("train_dm: empty train split");

  std::vector<DmPrepared> plain(train.size()), part(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    {
      AeModel::Encoded enc = ae.encode(*train[i], false);
      plain[i] = {enc.lane_mu, enc.lane_sigma, enc.obj_mu, enc.obj_sigma, false, 0, 0};
    }
    {
      Scene p = make_partitioned_variant(*train[i]);
      AeModel::Encoded enc = ae.encode(p, true);
      DmPrepared prep{enc.lane_mu, enc.lane_sigma, enc.obj_mu, enc.obj_sigma, true, 0, 0};
      for (const Lane& lane : p.lanes)
        if (lane_region(lane) == SceneRegion::kFN) ++prep.fn_lanes;
      for (const Object& o : p.objects)
        if (object_region(o) == SceneRegion::kFN) ++prep.fn_objects;
      part[i] = std::move(prep);
    }
  }

  tc::AdamW opt(tc::AdamConfig{tcfg.lr, 0.9, 0.999, 1e-8, tcfg.weight_decay});
  tc::Ema ema(tcfg.ema_decay);
  Rng rng(tcfg.seed);
  result.log_csv.push_back("step,loss,lane_mse,obj_mse");

  for (int step = 0; step < tcfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    double loss_sum = 0.0, lane_sum = 0.0, obj_sum = 0.0;
    for (int k = 0; k < tcfg.batch_size; ++k) {
      const int idx = rng.uniform_int(0, static_cast<int>(train.size()) - 1);
      const bool use_part = rng.uniform() < tcfg.partitioned_fraction;
      const DmPrepared& prep = use_part ? part[idx] : plain[idx];

      Tensor lane_h0 = result.stats.whiten_lanes(
          reparameterize_values(prep.lane_mu, prep.lane_sigma, rng));
      Tensor obj_h0 =
          prep.obj_mu.rows() > 0
              ? result.stats.whiten_objects(
                    reparameterize_values(prep.obj_mu, prep.obj_sigma, rng))
              : Tensor::zeros({0, cfg.object_latent});

      int known_lanes = 0, known_objects = 0;
      const double mode = rng.uniform();
      if (!prep.partitioned && obj_h0.rows() > 0 &&
          mode < tcfg.lane_conditioned_fraction) {
        // lane-conditioned object generation: clean lane means as context
        known_lanes = lane_h0.rows();
        lane_h0 = result.stats.whiten_lanes(prep.lane_mu);
      } else if (prep.partitioned &&
                 mode < tcfg.lane_conditioned_fraction + tcfg.fn_conditioned_fraction &&
                 prep.fn_lanes > 0 && prep.fn_lanes < lane_h0.rows()) {
        // explicit inpainting context: clean F_N means, loss on F_P
        known_lanes = prep.fn_lanes;
        known_objects = std::min(prep.fn_objects, obj_h0.rows());
        Tensor lane_means = result.stats.whiten_lanes(prep.lane_mu);
        for (int i = 0; i < known_lanes; ++i)
          for (int j = 0; j < cfg.lane_latent; ++j)
            lane_h0.at(i, j) = lane_means.at(i, j);
        if (prep.obj_mu.rows() > 0) {
          Tensor obj_means = result.stats.whiten_objects(prep.obj_mu);
          for (int i = 0; i < known_objects; ++i)
            for (int j = 0; j < cfg.object_latent; ++j)
              obj_h0.at(i, j) = obj_means.at(i, j);
        }
        if (known_objects == obj_h0.rows() && known_lanes == lane_h0.rows())
          known_objects = 0;  // keep something to supervise
      }

      const int t = rng.uniform_int(1, result.schedule.T);
      Tensor lane_eps = Tensor::randn(lane_h0.shape, rng);
      Tensor obj_eps = Tensor::randn(obj_h0.shape, rng);
      DmConditioning cond;
      cond.partitioned = prep.partitioned;
      cond.label = ConditionLabel::kCompat;
      cond.null_cond = rng.uniform() < tcfg.cond_dropout;

      Tape tape(true);
      Binder binder(tape, result.params, true);
      DmLossOut loss = dm_loss(binder, cfg, result.schedule, lane_h0, obj_h0, t,
                               lane_eps, obj_eps, cond, known_lanes, known_objects);
      if (!std::isfinite(loss.value))
        throw std::runtime_error("train_dm diverged at step " + std::to_string(step) +
                                 ", scene " + std::to_string(idx));
      tape.backward(loss.loss);
      for (const auto& [name, var] : binder.bound()) {
        Tensor g = tape.grad(var);
        auto it = grads.find(name);
        if (it == grads.end())
          grads.emplace(name, std::move(g));
        else
          for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
      }
      loss_sum += loss.value;
      lane_sum += loss.lane_mse;
      obj_sum += loss.obj_mse;
    }
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v /= tcfg.batch_size;
    opt.step_grads(result.params, grads);
    ema.update(result.params);

    if (step % 50 == 0 || step + 1 == tcfg.steps) {
      std::ostringstream os;
      os << step << "," << loss_sum / tcfg.batch_size << ","
         << lane_sum / tcfg.batch_size << "," << obj_sum / tcfg.batch_size;
      result.log_csv.push_back(os.str());
    }
  }
  result.ema_params = ema.shadow();
  return result;
}

}  // namespace lanesmith
