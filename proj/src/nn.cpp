#include "lanesmith/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lanesmith::tc {

Tensor& ParamStore::ensure(const std::string& name, const std::vector<int>& shape,
                           Init init) {
  auto it = values_.find(name);
  if (it != values_.end()) {
    if (it->second.shape != shape)
      throw std::invalid_argument("param shape changed: " + name);
    return it->second;
  }
  Tensor t = Tensor::zeros(shape);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kXavier: {
      const int fan_in = shape.size() >= 2 ? shape[0] : 1;
      const int fan_out = shape.size() >= 2 ? shape[1] : shape[0];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t.data) v = rng_.uniform(-bound, bound);
      break;
    }
    case Init::kNormal02:
      for (auto& v : t.data) v = rng_.normal() * 0.02;
      break;
  }
  return values_.emplace(name, std::move(t)).first->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : values_) n += t.data.size();
  return n;
}

Var Binder::p(const std::string& name, const std::vector<int>& shape, Init init) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Tensor& value = store_->ensure(name, shape, init);
  Var v = tape_->leaf(value, train_);
  bound_.emplace(name, v);
  return v;
}

Tensor Binder::grad_of(const std::string& name) const {
  auto it = bound_.find(name);
  if (it == bound_.end()) return Tensor::zeros(store_->at(name).shape);
  return tape_->grad(it->second);
}

Var linear(Binder& b, const std::string& prefix, Var x, int out_dim, Init w_init) {
  const int in_dim = x.tape->val(x).cols();
  Var w = b.p(prefix + "/w", {in_dim, out_dim}, w_init);
  Var bias = b.p(prefix + "/b", {1, out_dim}, Init::kZeros);
  return add_rowvec(matmul(x, w), bias);
}

Var mlp(Binder& b, const std::string& prefix, Var x, const std::vector<int>& dims,
        Activation act, Init last_init) {
  Var h = x;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const bool last = i + 1 == dims.size();
    h = linear(b, prefix + "/l" + std::to_string(i), h, dims[i],
               last ? last_init : Init::kXavier);
    if (!last) h = act(h);
  }
  return h;
}

Var multi_head_attention(Binder& b, const std::string& prefix, const AttentionInputs& in,
                         int heads) {
  Tape& T = b.tape();
  const int d = T.val(in.queries).cols();
  if (d % heads != 0)
    throw std::invalid_argument("attention: hidden dim not divisible by heads");
  if (T.val(in.keys_values).cols() != d)
    throw std::invalid_argument("attention: query/key dim mismatch");
  const int n_q = T.val(in.queries).rows();
  const int n_k = T.val(in.keys_values).rows();
  if (in.edge_keys &&
      (T.val(*in.edge_keys).rows() != n_q * n_k || T.val(*in.edge_keys).cols() != d))
    throw std::invalid_argument("attention: edge_keys must be [n_q*n_k, d]");
  if (in.edge_values &&
      (T.val(*in.edge_values).rows() != n_q * n_k || T.val(*in.edge_values).cols() != d))
    throw std::invalid_argument("attention: edge_values must be [n_q*n_k, d]");

  Var q = linear(b, prefix + "/q", in.queries, d);
  Var k = linear(b, prefix + "/k", in.keys_values, d);
  Var v = linear(b, prefix + "/v", in.keys_values, d);

  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var scores = matmul(qh, transpose(kh));
    if (in.edge_keys) {
      Var ekh = slice_cols(*in.edge_keys, h * dh, dh);
      scores = add(scores, qe_scores(qh, ekh, n_k));
    }
    Var probs = softmax(scale(scores, inv_sqrt), 1);
    Var out = matmul(probs, vh);
    if (in.edge_values) {
      Var evh = slice_cols(*in.edge_values, h * dh, dh);
      out = add(out, pe_mix(probs, evh));
    }
    head_outs.push_back(out);
  }
  Var merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return linear(b, prefix + "/o", merged, d);
}

namespace {

Var ln(Binder& b, const std::string& prefix, Var x) {
  const int d = x.tape->val(x).cols();
  Var gain = b.p(prefix + "/g", {1, d}, Init::kZeros);  // stored as offset from 1
  Var bias = b.p(prefix + "/b", {1, d}, Init::kZeros);
  return layer_norm(x, add_scalar(gain, 1.0), bias);
}

}  // namespace

Var transformer_self_block(Binder& b, const std::string& prefix, Var x, int heads,
                           std::optional<Var> edge_keys, std::optional<Var> edge_values) {
  const int d = x.tape->val(x).cols();
  Var h = ln(b, prefix + "/ln1", x);
  AttentionInputs in{h, h, edge_keys, edge_values};
  x = add(x, multi_head_attention(b, prefix + "/attn", in, heads));
  Var m = ln(b, prefix + "/ln2", x);
  m = mlp(b, prefix + "/mlp", m, {4 * d, d});
  return add(x, m);
}

Var transformer_cross_block(Binder& b, const std::string& prefix, Var x, Var context,
                            int heads) {
  const int d = x.tape->val(x).cols();
  Var h = ln(b, prefix + "/ln1", x);
  Var c = ln(b, prefix + "/lnc", context);
  AttentionInputs in{h, c, {}, {}};
  x = add(x, multi_head_attention(b, prefix + "/attn", in, heads));
  Var m = ln(b, prefix + "/ln2", x);
  m = mlp(b, prefix + "/mlp", m, {4 * d, d});
  return add(x, m);
}

void AdamW::step(ParamStore& store, const Binder& binder) {
  ++t_;
  for (auto& [name, param] : store.values()) {
    auto it = binder.bound().find(name);
    if (it == binder.bound().end()) continue;
    Tensor g = binder.grad_of(name);
    step_one_inner(name, param, g);
  }
}

void AdamW::step_grads(ParamStore& store, const std::map<std::string, Tensor>& grads) {
  ++t_;
  for (auto& [name, param] : store.values()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    step_one_inner(name, param, it->second);
  }
}

void AdamW::step_one(const std::string& name, Tensor& param, const Tensor& grad) {
  ++t_;
  step_one_inner(name, param, grad);
}

void AdamW::step_one_inner(const std::string& name, Tensor& param, const Tensor& grad) {
  Slot& slot = slots_[name];
  if (slot.m.data.empty()) {
    slot.m = Tensor::zeros(param.shape);
    slot.v = Tensor::zeros(param.shape);
  }
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    slot.m.data[i] = b1 * slot.m.data[i] + (1.0 - b1) * g;
    slot.v.data[i] = b2 * slot.v.data[i] + (1.0 - b2) * g * g;
    const double mhat = slot.m.data[i] / bc1;
    const double vhat = slot.v.data[i] / bc2;
    param.data[i] -=
        cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * param.data[i]);
  }
}

double lr_warmup_linear_decay(double base_lr, std::int64_t step, std::int64_t warmup,
                              std::int64_t total_steps) {
  if (warmup > 0 && step < warmup)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return base_lr;
  const double frac = static_cast<double>(step - warmup) /
                      static_cast<double>(total_steps - warmup);
  return base_lr * std::max(0.0, 1.0 - frac);
}

void Ema::update(const ParamStore& store) {
  if (!init_) {
    for (const auto& [name, t] : store.values()) shadow_.values()[name] = t;
    init_ = true;
    return;
  }
  for (const auto& [name, t] : store.values()) {
    auto it = shadow_.values().find(name);
    if (it == shadow_.values().end()) {
      shadow_.values()[name] = t;
      continue;
    }
    Tensor& s = it->second;
    for (std::size_t i = 0; i < t.data.size(); ++i)
      s.data[i] = decay_ * s.data[i] + (1.0 - decay_) * t.data[i];
  }
}

namespace {

constexpr char kMagic[5] = {'L', 'S', 'M', 'T', '1'};

void write_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::ifstream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64(std::ofstream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

double read_f64(std::ifstream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 5);
  for (const auto& [name, t] : store.values()) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.data) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  ParamStore store;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = read_f64(is);
    store.values().emplace(std::move(name), std::move(t));
  }
  return store;
}

Tensor sinusoidal_encoding(int positions, int dim, double base) {
  Tensor t = Tensor::zeros({positions, dim});
  for (int pos = 0; pos < positions; ++pos)
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(base, -2.0 * i / static_cast<double>(dim));
      t.at(pos, 2 * i) = std::sin(pos * freq);
      t.at(pos, 2 * i + 1) = std::cos(pos * freq);
    }
  return t;
}

Tensor sinusoidal_timestep(int tstep, int dim, double base) {
  Tensor t = Tensor::zeros({1, dim});
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(base, -2.0 * i / static_cast<double>(dim));
    t.at(0, 2 * i) = std::sin(tstep * freq);
    t.at(0, 2 * i + 1) = std::cos(tstep * freq);
  }
  return t;
}

}  // namespace lanesmith::tc
