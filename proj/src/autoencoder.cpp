#include "lanesmith/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lanesmith/logging.hpp"
#include "lanesmith/metrics.hpp"

namespace lanesmith {

using tc::Binder;
using tc::Init;
using tc::Tape;
using tc::Tensor;
using tc::Var;

tc::Tensor one_hot(const std::vector<int>& indices, int classes) {
  Tensor t = Tensor::zeros({static_cast<int>(indices.size()), classes});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= classes)
      throw std::invalid_argument("one_hot: index out of range");
    t.at(static_cast<int>(i), indices[i]) = 1.0;
  }
  return t;
}

namespace {

// Multi-hot [succ, pred, left, right] per ordered lane pair, row i*n + j.
Tensor edge_features(const Adjacency& adj, int n) {
  Tensor t = Tensor::zeros({n * n, 4});
  for (auto [i, j] : adj.successor) {
    t.at(i * n + j, 0) = 1.0;
    t.at(j * n + i, 1) = 1.0;
  }
  for (auto [i, j] : adj.left) {
    t.at(i * n + j, 2) = 1.0;
    t.at(j * n + i, 3) = 1.0;
  }
  return t;
}

void pair_indices(int n, std::vector<int>& I, std::vector<int>& J) {
  I.resize(static_cast<std::size_t>(n) * n);
  J.resize(I.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      I[i * n + j] = i;
      J[i * n + j] = j;
    }
}

}  // namespace

std::vector<int> connectivity_targets(const Adjacency& adj, int n_lanes) {
  std::vector<int> t(static_cast<std::size_t>(n_lanes) * n_lanes, kConnNone);
  for (auto [i, j] : adj.left) {
    t[i * n_lanes + j] = kConnLeft;
    t[j * n_lanes + i] = kConnRight;
  }
  for (auto [i, j] : adj.successor) t[i * n_lanes + j] = kConnSuccessor;
  return t;
}

EncoderOutput ae_encode(Binder& b, const AeConfig& cfg, const AeInputs& in) {
  Tape& T = b.tape();
  const SceneFeatures& f = *in.features;
  const int nl = f.lanes.rows();
  const int no = f.objects.rows();
  if (nl == 0) throw std::invalid_argument("ae_encode: empty lane set");

  Var lane_in = tc::concat_cols(
      {T.leaf(f.lanes), T.leaf(one_hot(f.lane_types, kNumLaneTypes))});
  Var L = tc::mlp(b, "ae/enc/f_l", lane_in, {cfg.lane_hidden, cfg.lane_hidden});
  Var O;
  if (no > 0) {
    Var obj_in = tc::concat_cols(
        {T.leaf(f.objects), T.leaf(one_hot(f.object_classes, kNumObjectClasses))});
    O = tc::mlp(b, "ae/enc/f_o", obj_in, {cfg.object_hidden, cfg.object_hidden});
  }
  Var A = tc::mlp(b, "ae/enc/f_a", T.leaf(edge_features(*in.adjacency, nl)),
                  {cfg.edge_hidden, cfg.edge_hidden});
  Var Q = b.p("ae/enc/query", {1, cfg.lane_hidden}, Init::kNormal02);

  const int fn = in.fn_lane_count < 0 ? nl : in.fn_lane_count;
  std::vector<int> I, J;
  pair_indices(nl, I, J);

  for (int k = 0; k < cfg.encoder_blocks; ++k) {
    const std::string p = "ae/enc/fab" + std::to_string(k);
    Var ek = tc::linear(b, p + "/edge_k", A, cfg.lane_hidden);
    Var ev = tc::linear(b, p + "/edge_v", A, cfg.lane_hidden);
    L = tc::transformer_self_block(b, p + "/l2l", L, cfg.heads, ek, ev);
    if (in.partitioned && fn > 0)
      Q = tc::transformer_cross_block(b, p + "/l2q", Q, tc::slice_rows(L, 0, fn),
                                      cfg.heads);
    if (no > 0) {
      Var Lp = tc::linear(b, p + "/proj", L, cfg.object_hidden);
      O = tc::transformer_cross_block(b, p + "/l2o", O, Lp, cfg.heads);
      O = tc::transformer_self_block(b, p + "/o2o", O, cfg.heads);
    }
    Var pair = tc::concat_cols({tc::gather_rows(L, I), tc::gather_rows(L, J)});
    Var f1 = tc::mlp(b, p + "/edge_f1", pair, {2 * cfg.edge_hidden, cfg.edge_hidden});
    A = tc::mlp(b, p + "/edge_f2", tc::concat_cols({A, f1}),
                {2 * cfg.edge_hidden, cfg.edge_hidden});
  }

  EncoderOutput out;
  out.lane_embedding = L;
  // small/zero head inits keep the initial posterior near N(0, 1)
  out.lane_mu = tc::linear(b, "ae/enc/lane_mu", L, cfg.lane_latent, tc::Init::kNormal02);
  out.lane_logsigma =
      tc::linear(b, "ae/enc/lane_logsigma", L, cfg.lane_latent, tc::Init::kZeros);
  if (no > 0) {
    out.obj_mu = tc::linear(b, "ae/enc/obj_mu", O, cfg.object_latent, tc::Init::kNormal02);
    out.obj_logsigma =
        tc::linear(b, "ae/enc/obj_logsigma", O, cfg.object_latent, tc::Init::kZeros);
  }
  if (in.partitioned)
    out.lane_count_logits = tc::mlp(
        b, "ae/enc/f_num", Q, {cfg.lane_hidden, cfg.lane_hidden, cfg.max_lane_count + 1});
  return out;
}

DecoderOutput ae_decode(Binder& b, const AeConfig& cfg, Var lane_latents,
                        Var obj_latents) {
  Tape& T = b.tape();
  const int nl = T.val(lane_latents).rows();
  const int no = obj_latents.valid() ? T.val(obj_latents).rows() : 0;
  if (nl == 0) throw std::invalid_argument("ae_decode: empty lane set");

  Var L = tc::mlp(b, "ae/dec/f_hl", lane_latents, {cfg.lane_hidden, cfg.lane_hidden});
  Var O;
  if (no > 0)
    O = tc::mlp(b, "ae/dec/f_ho", obj_latents, {cfg.object_hidden, cfg.object_hidden});

  std::vector<int> I, J;
  pair_indices(nl, I, J);
  Var pair0 = tc::concat_cols({tc::gather_rows(L, I), tc::gather_rows(L, J)});
  Var A = tc::mlp(b, "ae/dec/f_ha", pair0, {2 * cfg.edge_hidden, cfg.edge_hidden});

  for (int k = 0; k < cfg.decoder_blocks; ++k) {
    const std::string p = "ae/dec/fab" + std::to_string(k);
    Var ek = tc::linear(b, p + "/edge_k", A, cfg.lane_hidden);
    Var ev = tc::linear(b, p + "/edge_v", A, cfg.lane_hidden);
    L = tc::transformer_self_block(b, p + "/l2l", L, cfg.heads, ek, ev);
    if (no > 0) {
      Var Lp = tc::linear(b, p + "/proj", L, cfg.object_hidden);
      O = tc::transformer_cross_block(b, p + "/l2o", O, Lp, cfg.heads);
      O = tc::transformer_self_block(b, p + "/o2o", O, cfg.heads);
    }
    Var pair = tc::concat_cols({tc::gather_rows(L, I), tc::gather_rows(L, J)});
    Var f1 = tc::mlp(b, p + "/edge_f1", pair, {2 * cfg.edge_hidden, cfg.edge_hidden});
    A = tc::mlp(b, p + "/edge_f2", tc::concat_cols({A, f1}),
                {2 * cfg.edge_hidden, cfg.edge_hidden});
  }

  DecoderOutput out;
  out.lane_recon = tc::mlp(b, "ae/dec/f_lane", L,
                           {cfg.lane_hidden, cfg.lane_hidden, cfg.lane_hidden,
                            kLaneFeatureDim});
  out.lane_type_logits =
      tc::mlp(b, "ae/dec/f_lane_type", L, {cfg.lane_hidden, cfg.lane_hidden, kNumLaneTypes});
  if (no > 0) {
    out.obj_recon = tc::mlp(b, "ae/dec/f_object", O,
                            {cfg.object_hidden, cfg.object_hidden, cfg.object_hidden,
                             kObjectFeatureDim});
    out.obj_class_logits = tc::mlp(b, "ae/dec/f_object_type", O,
                                   {cfg.object_hidden, cfg.object_hidden,
                                    kNumObjectClasses});
  }
  out.conn_logits = tc::mlp(b, "ae/dec/f_connectivity", A,
                            {cfg.edge_hidden, cfg.edge_hidden, 4});
  return out;
}

Var reparameterize(Var mu, Var logsigma, Rng& rng) {
  Tape& T = *mu.tape;
  Var sigma = tc::clamp_v(tc::exp_v(logsigma), 1e-8, 1e3);
  Tensor eps = Tensor::randn(T.val(mu).shape, rng);
  return tc::add(mu, tc::mul(sigma, T.leaf(eps)));
}

Tensor sigma_from_logsigma(const Tensor& logsigma) {
  Tensor sigma = logsigma;
  for (auto& v : sigma.data) v = std::clamp(std::exp(v), 1e-8, 1e3);
  return sigma;
}

Tensor reparameterize_values(const Tensor& mu, const Tensor& sigma, Rng& rng) {
  Tensor h = mu;
  for (std::size_t i = 0; i < h.data.size(); ++i)
    h.data[i] += sigma.data[i] * rng.normal();
  return h;
}

namespace {

// -0.5 * mean over rows of sum_k (1 + 2 log sigma - mu^2 - sigma^2)
Var kl_term(Var mu, Var logsigma) {
  Var two_logsigma = tc::scale(logsigma, 2.0);
  Var sigma2 = tc::exp_v(two_logsigma);
  Var inner = tc::add_scalar(
      tc::sub(two_logsigma, tc::add(tc::square(mu), sigma2)), 1.0);
  const int n = mu.tape->val(mu).rows();
  return tc::scale(tc::sum_all(inner), -0.5 / std::max(1, n));
}

}  // namespace

AeLossBreakdown elbo_loss(const AeConfig& cfg, const SceneFeatures& targets,
                          const Adjacency& adjacency, const EncoderOutput& enc,
                          const DecoderOutput& dec, bool partitioned,
                          int fp_lane_count) {
  Tape& T = *dec.lane_recon.tape;
  const int nl = targets.lanes.rows();
  const int no = targets.objects.rows();

  AeLossBreakdown out;
  Var lane_l2 = tc::scale(
      tc::sum_squares(tc::sub(dec.lane_recon, T.leaf(targets.lanes))), 1.0 / nl);
  Var lane_type_ce = tc::cross_entropy(dec.lane_type_logits, targets.lane_types);
  Var total = tc::scale(tc::add(lane_l2, lane_type_ce), cfg.lambda_lane);

  Var obj_l2, obj_ce;
  if (no > 0) {
    obj_l2 = tc::scale(
        tc::sum_squares(tc::sub(dec.obj_recon, T.leaf(targets.objects))), 1.0 / no);
    obj_ce = tc::cross_entropy(dec.obj_class_logits, targets.object_classes);
    total = tc::add(total, tc::add(obj_l2, obj_ce));
  }

  Var conn_ce;
  if (nl > 1) {
    const std::vector<int> all_targets = connectivity_targets(adjacency, nl);
    std::vector<int> off_rows, off_targets;
    for (int i = 0; i < nl; ++i)
      for (int j = 0; j < nl; ++j)
        if (i != j) {
          off_rows.push_back(i * nl + j);
          off_targets.push_back(all_targets[i * nl + j]);
        }
    conn_ce = tc::cross_entropy(tc::gather_rows(dec.conn_logits, off_rows), off_targets);
    total = tc::add(total, tc::scale(conn_ce, cfg.lambda_conn));
  }

  Var kl = kl_term(enc.lane_mu, enc.lane_logsigma);
  if (no > 0) kl = tc::add(kl, kl_term(enc.obj_mu, enc.obj_logsigma));
  total = tc::add(total, tc::scale(kl, cfg.beta));

  Var num_ce;
  if (partitioned && enc.lane_count_logits.valid()) {
    if (fp_lane_count < 0 || fp_lane_count > cfg.max_lane_count)
      throw std::invalid_argument("elbo_loss: bad F_P lane count target");
    num_ce = tc::cross_entropy(enc.lane_count_logits, {fp_lane_count});
    total = tc::add(total, tc::scale(num_ce, cfg.lambda_num));
  }

  out.total = total;
  out.total_value = tc::scalar_value(total);
  out.lane_l2 = tc::scalar_value(lane_l2);
  out.lane_type_ce = tc::scalar_value(lane_type_ce);
  out.obj_l2 = obj_l2.valid() ? tc::scalar_value(obj_l2) : 0.0;
  out.obj_class_ce = obj_ce.valid() ? tc::scalar_value(obj_ce) : 0.0;
  out.conn_ce = conn_ce.valid() ? tc::scalar_value(conn_ce) : 0.0;
  out.kl = tc::scalar_value(kl);
  out.num_ce = num_ce.valid() ? tc::scalar_value(num_ce) : 0.0;
  return out;
}

namespace {

struct PreparedScene {
  SceneFeatures features;
  Adjacency adjacency;
  bool partitioned = false;
  int fn_lane_count = -1;
  int fp_lane_count = -1;
};

PreparedScene prepare(const Scene& scene, const FeatureStats& stats) {
  PreparedScene p;
  p.features = normalize_features(scene, stats);
  p.adjacency = scene.adjacency;
  p.partitioned = scene.partitioned;
  if (scene.partitioned) {
    int fn = 0;
    for (const Lane& lane : scene.lanes)
      if (lane_region(lane) == SceneRegion::kFN) ++fn;
    p.fn_lane_count = fn;
    p.fp_lane_count = scene.num_lanes() - fn;
  }
  return p;
}

// One forward/backward pass; returns the loss breakdown and adds parameter
// gradients into `grads`.
AeLossBreakdown ae_step(tc::ParamStore& store, const AeConfig& cfg,
                        const PreparedScene& ps, Rng& rng,
                        std::map<std::string, Tensor>* grads) {
  Tape tape(grads != nullptr);
  Binder binder(tape, store, grads != nullptr);
  AeInputs in{&ps.features, &ps.adjacency, ps.partitioned, ps.fn_lane_count};
  EncoderOutput enc = ae_encode(binder, cfg, in);
  Var lane_h = reparameterize(enc.lane_mu, enc.lane_logsigma, rng);
  Var obj_h;
  if (enc.obj_mu.valid()) obj_h = reparameterize(enc.obj_mu, enc.obj_logsigma, rng);
  DecoderOutput dec = ae_decode(binder, cfg, lane_h, obj_h);
  AeLossBreakdown loss =
      elbo_loss(cfg, ps.features, ps.adjacency, enc, dec, ps.partitioned,
                ps.fp_lane_count);
  if (grads) {
    tape.backward(loss.total);
    for (const auto& [name, var] : binder.bound()) {
      Tensor g = tape.grad(var);
      auto it = grads->find(name);
      if (it == grads->end())
        grads->emplace(name, std::move(g));
      else
        for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
    }
  }
  loss.total = tc::Var{};  // the tape dies with this frame
  return loss;
}

// Registers every parameter once, in a fixed order, so initialization does
// not depend on which scene type is seen first.
void register_params(tc::ParamStore& store, const AeConfig& cfg) {
  Scene tiny;
  Lane a, bl;
  a.points = resample_polyline({{-10, 0}, {0, 0}}, kLanePoints);
  bl.points = resample_polyline({{0, 0}, {10, 0}}, kLanePoints);
  tiny.lanes = {a, bl};
  tiny.adjacency.add_successor(0, 1);
  Object ego;
  ego.cls = ObjectClass::kEgo;
  tiny.objects.push_back(ego);
  tiny.partitioned = true;
  FeatureStats stats;
  stats.lane_x = {-32, 32};
  stats.lane_y = {-32, 32};
  stats.obj_x = {-32, 32};
  stats.obj_y = {-32, 32};
  stats.speed = {0, 15};
  stats.cos_h = {-1, 1};
  stats.sin_h = {-1, 1};
  stats.length = {0.5, 6};
  stats.width = {0.4, 3};
  PreparedScene ps = prepare(tiny, stats);
  ps.fn_lane_count = 1;
  ps.fp_lane_count = 1;
  Rng rng(0);
  ae_step(store, cfg, ps, rng, nullptr);
}

}  // namespace

AeTrainResult train_autoencoder(const Corpus& corpus, const FeatureStats& stats,
                                const AeConfig& cfg, const AeTrainConfig& tcfg) {
  const auto train = corpus.train_scenes();
  const auto test = corpus.test_scenes();
  if (train.empty()) throw std::invalid_argument("train_autoencoder: empty train split");

  std::vector<PreparedScene> plain, part;
  plain.reserve(train.size());
  part.reserve(train.size());
  for (const Scene* s : train) {
    plain.push_back(prepare(*s, stats));
    part.push_back(prepare(make_partitioned_variant(*s), stats));
  }
  std::vector<PreparedScene> val;
  for (std::size_t i = 0; i < test.size() && static_cast<int>(i) < tcfg.val_scenes; ++i) {
    val.push_back(prepare(*test[i], stats));
    val.push_back(prepare(make_partitioned_variant(*test[i]), stats));
  }
  if (val.empty()) val.push_back(plain[0]);

  AeTrainResult result;
  result.params = tc::ParamStore(tcfg.seed + 17);
  register_params(result.params, cfg);

  tc::AdamW opt(tc::AdamConfig{tcfg.lr, 0.9, 0.999, 1e-8, tcfg.weight_decay});
  Rng rng(tcfg.seed);

  auto validate = [&]() {
    Rng val_rng(1234);
    double sum = 0.0;
    for (const PreparedScene& ps : val)
      sum += ae_step(result.params, cfg, ps, val_rng, nullptr).total_value;
    return sum / static_cast<double>(val.size());
  };
  result.first_val = validate();
  result.log_csv.push_back("step,total,lane_l2,lane_type_ce,obj_l2,obj_class_ce,conn_ce,kl,num_ce");

  for (int step = 0; step < tcfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    double total = 0.0;
    AeLossBreakdown sample_loss;
    int batch_scene = -1;
    for (int k = 0; k < tcfg.batch_size; ++k) {
      const int idx = rng.uniform_int(0, static_cast<int>(train.size()) - 1);
      const bool use_part = rng.uniform() < tcfg.partitioned_fraction;
      const PreparedScene& ps = use_part ? part[idx] : plain[idx];
      batch_scene = idx;
      sample_loss = ae_step(result.params, cfg, ps, rng, &grads);
      const double l = sample_loss.total_value;
      if (!std::isfinite(l))
        throw std::runtime_error("train_autoencoder diverged at step " +
                                 std::to_string(step) + ", scene " +
                                 std::to_string(idx));
      total += l;
    }
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v /= tcfg.batch_size;
    opt.config().lr = tc::lr_warmup_linear_decay(tcfg.lr, step, tcfg.warmup, tcfg.steps);
    opt.step_grads(result.params, grads);
    (void)batch_scene;

    if (step % 50 == 0 || step + 1 == tcfg.steps) {
      std::ostringstream os;
      os << step << "," << total / tcfg.batch_size << "," << sample_loss.lane_l2 << ","
         << sample_loss.lane_type_ce << "," << sample_loss.obj_l2 << ","
         << sample_loss.obj_class_ce << "," << sample_loss.conn_ce << ","
         << sample_loss.kl << "," << sample_loss.num_ce;
      result.log_csv.push_back(os.str());
    }
    if (tcfg.val_every > 0 && step > 0 && step % tcfg.val_every == 0)
      log_debug("ae val loss @" + std::to_string(step) + ": " +
                std::to_string(validate()));
  }
  result.last_val = validate();
  return result;
}

AeModel::Encoded AeModel::encode(const Scene& scene, bool partitioned,
                                 int fn_lane_count) const {
  PreparedScene ps = prepare(scene, stats_);
  ps.partitioned = partitioned;
  if (fn_lane_count >= 0) ps.fn_lane_count = fn_lane_count;
  Tape tape(false);
  Binder binder(tape, params_, false);
  AeInputs in{&ps.features, &ps.adjacency, ps.partitioned, ps.fn_lane_count};
  EncoderOutput enc = ae_encode(binder, cfg_, in);
  Encoded out;
  out.lane_mu = tape.val(enc.lane_mu);
  out.lane_sigma = sigma_from_logsigma(tape.val(enc.lane_logsigma));
  if (enc.obj_mu.valid()) {
    out.obj_mu = tape.val(enc.obj_mu);
    out.obj_sigma = sigma_from_logsigma(tape.val(enc.obj_logsigma));
  } else {
    out.obj_mu = Tensor::zeros({0, cfg_.object_latent});
    out.obj_sigma = Tensor::zeros({0, cfg_.object_latent});
  }
  if (enc.lane_count_logits.valid())
    out.lane_count_logits = tape.val(enc.lane_count_logits);
  out.lane_embedding = tape.val(enc.lane_embedding);
  return out;
}

AeModel::DecodedTensors AeModel::decode_tensors(const Tensor& lane_latents,
                                                const Tensor& obj_latents) const {
  Tape tape(false);
  Binder binder(tape, params_, false);
  Var lanes = tape.leaf(lane_latents);
  Var objs;
  if (obj_latents.rows() > 0) objs = tape.leaf(obj_latents);
  DecoderOutput dec = ae_decode(binder, cfg_, lanes, objs);
  DecodedTensors out;
  out.lane_recon = tape.val(dec.lane_recon);
  out.lane_type_logits = tape.val(dec.lane_type_logits);
  if (dec.obj_recon.valid()) {
    out.obj_recon = tape.val(dec.obj_recon);
    out.obj_class_logits = tape.val(dec.obj_class_logits);
  } else {
    out.obj_recon = Tensor::zeros({0, kObjectFeatureDim});
    out.obj_class_logits = Tensor::zeros({0, kNumObjectClasses});
  }
  out.conn_logits = tape.val(dec.conn_logits);
  return out;
}

Scene AeModel::decode_scene(const Tensor& lane_latents, const Tensor& obj_latents,
                            bool partitioned, ConditionLabel condition) const {
  DecodedTensors dt = decode_tensors(lane_latents, obj_latents);
  const int nl = dt.lane_recon.rows();
  const int no = dt.obj_recon.rows();
  if (!tc::all_finite(dt.lane_recon) || !tc::all_finite(dt.obj_recon))
    throw std::runtime_error("decode_scene: non-finite reconstruction rejected");

  Scene scene;
  scene.partitioned = partitioned;
  scene.condition = condition;
  Tensor lane_feats = dt.lane_recon;
  for (auto& v : lane_feats.data) v = std::clamp(v, -1.0, 1.0);
  for (int i = 0; i < nl; ++i) {
    int type = 0;
    double best = dt.lane_type_logits.at(i, 0);
    for (int c = 1; c < kNumLaneTypes; ++c)
      if (dt.lane_type_logits.at(i, c) > best) {
        best = dt.lane_type_logits.at(i, c);
        type = c;
      }
    scene.lanes.push_back(denormalize_lane(lane_feats, i, type, stats_));
  }
  Tensor obj_feats = dt.obj_recon;
  for (auto& v : obj_feats.data) v = std::clamp(v, -1.0, 1.0);
  int ego_row = -1;
  double ego_best = -1e300;
  for (int i = 0; i < no; ++i) {
    if (dt.obj_class_logits.at(i, static_cast<int>(ObjectClass::kEgo)) > ego_best) {
      ego_best = dt.obj_class_logits.at(i, static_cast<int>(ObjectClass::kEgo));
      ego_row = i;
    }
  }
  for (int i = 0; i < no; ++i) {
    int cls = 0;
    double best = dt.obj_class_logits.at(i, 0);
    for (int c = 1; c < kNumObjectClasses; ++c)
      if (dt.obj_class_logits.at(i, c) > best) {
        best = dt.obj_class_logits.at(i, c);
        cls = c;
      }
    // exactly one ego: the strongest ego logit wins, other claims demote
    if (i == ego_row)
      cls = static_cast<int>(ObjectClass::kEgo);
    else if (cls == static_cast<int>(ObjectClass::kEgo))
      cls = static_cast<int>(ObjectClass::kVehicle);
    scene.objects.push_back(denormalize_object(obj_feats, i, cls, stats_));
  }

  // adjacency from the connectivity head; right labels imply left(j, i)
  for (int i = 0; i < nl; ++i)
    for (int j = 0; j < nl; ++j) {
      if (i == j) continue;
      int cls = 0;
      double best = dt.conn_logits.at(i * nl + j, 0);
      for (int c = 1; c < 4; ++c)
        if (dt.conn_logits.at(i * nl + j, c) > best) {
          best = dt.conn_logits.at(i * nl + j, c);
          cls = c;
        }
      if (cls == kConnSuccessor) scene.adjacency.add_successor(i, j);
      if (cls == kConnLeft) scene.adjacency.add_left(i, j);
      if (cls == kConnRight) scene.adjacency.add_left(j, i);
    }
  scene.adjacency.sort_unique();
  return scene;
}

tc::Tensor scene_lane_embeddings(const AeModel& model,
                                 const std::vector<const Scene*>& scenes) {
  const int d = model.config().lane_hidden;
  Tensor out = Tensor::zeros({static_cast<int>(scenes.size()), d});
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    AeModel::Encoded enc = model.encode(*scenes[s], false);
    const Tensor& emb = enc.lane_embedding;
    for (int i = 0; i < emb.rows(); ++i)
      for (int j = 0; j < d; ++j)
        out.at(static_cast<int>(s), j) += emb.at(i, j) / emb.rows();
  }
  return out;
}

double perceptual_fd(const std::vector<const Scene*>& real_scenes,
                     const std::vector<const Scene*>& gen_scenes,
                     const AeModel& probe) {
  return embedding_frechet(scene_lane_embeddings(probe, real_scenes),
                           scene_lane_embeddings(probe, gen_scenes));
}

}  // namespace lanesmith
