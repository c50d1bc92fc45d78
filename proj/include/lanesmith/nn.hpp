#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include "lanesmith/autodiff.hpp"

namespace lanesmith::tc {

enum class Init { kZeros, kXavier, kNormal02 };

// Persistent parameter set. Values survive across tapes; a Binder exposes
// them as leaf Vars on the current tape. Parameters are created on first use
// so model code is the single source of truth for shapes.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  Tensor& ensure(const std::string& name, const std::vector<int>& shape, Init init);
  bool has(const std::string& name) const { return values_.count(name) != 0; }
  Tensor& at(const std::string& name) { return values_.at(name); }
  const std::map<std::string, Tensor>& values() const { return values_; }
  std::map<std::string, Tensor>& values() { return values_; }

  std::size_t parameter_count() const;

 private:
  std::map<std::string, Tensor> values_;
  Rng rng_;
};

// Per-tape view of a ParamStore. In training mode every bound parameter is a
// requires-grad leaf; gradients are read back by name after backward().
class Binder {
 public:
  Binder(Tape& tape, ParamStore& store, bool train)
      : tape_(&tape), store_(&store), train_(train) {}

  Var p(const std::string& name, const std::vector<int>& shape, Init init = Init::kXavier);
  Tape& tape() { return *tape_; }
  ParamStore& store() { return *store_; }
  bool train() const { return train_; }

  // Gradient of a bound parameter (zeros when the parameter was never bound
  // or unreached).
  Tensor grad_of(const std::string& name) const;
  const std::unordered_map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  bool train_;
  std::unordered_map<std::string, Var> bound_;
};

// y = x W + b
Var linear(Binder& b, const std::string& prefix, Var x, int out_dim,
           Init w_init = Init::kXavier);
// Multi-layer perceptron: hidden layers use `act`, final layer is affine.
using Activation = Var (*)(Var);
Var mlp(Binder& b, const std::string& prefix, Var x, const std::vector<int>& dims,
        Activation act = &gelu, Init last_init = Init::kXavier);

struct AttentionInputs {
  Var queries;                     // [n_q, d]
  Var keys_values;                 // [n_k, d]
  std::optional<Var> edge_keys;    // [n_q*n_k, d] added to projected keys
  std::optional<Var> edge_values;  // [n_q*n_k, d] added to projected values
};

// Scaled dot-product multi-head attention with optional per-pair edge terms
// fused into keys and values. Returns [n_q, d].
Var multi_head_attention(Binder& b, const std::string& prefix, const AttentionInputs& in,
                         int heads);

// Pre-LN transformer encoder/decoder blocks.
Var transformer_self_block(Binder& b, const std::string& prefix, Var x, int heads,
                           std::optional<Var> edge_keys = {},
                           std::optional<Var> edge_values = {});
Var transformer_cross_block(Binder& b, const std::string& prefix, Var x, Var context,
                            int heads);

// AdamW with decoupled weight decay.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update to every parameter with a bound gradient on `binder`.
  void step(ParamStore& store, const Binder& binder);
  // Update from an explicit gradient map (e.g. accumulated over a batch).
  void step_grads(ParamStore& store, const std::map<std::string, Tensor>& grads);
  // Direct form used by tests and simple loops.
  void step_one(const std::string& name, Tensor& param, const Tensor& grad);

  AdamConfig& config() { return cfg_; }
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Tensor m;
    Tensor v;
  };
  void step_one_inner(const std::string& name, Tensor& param, const Tensor& grad);
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

// Linear warmup followed by linear decay to zero at total_steps.
double lr_warmup_linear_decay(double base_lr, std::int64_t step, std::int64_t warmup,
                              std::int64_t total_steps);

// Exponential moving average of a parameter set.
class Ema {
 public:
  explicit Ema(double decay = 0.9999) : decay_(decay) {}
  void update(const ParamStore& store);
  const ParamStore& shadow() const { return shadow_; }
  ParamStore& shadow() { return shadow_; }
  bool initialized() const { return init_; }

 private:
  double decay_;
  bool init_ = false;
  ParamStore shadow_;
};

// Flat binary checkpoint: magic "LSMT1", then per parameter
// (u32 name length, name bytes, u32 rank, u32 dims..., little-endian f64 data).
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

// Standard sinusoidal table, one row per position.
Tensor sinusoidal_encoding(int positions, int dim, double base = 10000.0);
Tensor sinusoidal_timestep(int t, int dim, double base = 10000.0);

}  // namespace lanesmith::tc
