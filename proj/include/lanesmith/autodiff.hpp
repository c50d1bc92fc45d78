#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "lanesmith/tensor.hpp"

namespace lanesmith::tc {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalidated when the tape dies.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Define-by-run reverse-mode tape. A fresh tape is built for every training
// step; inference runs on a tape with gradients disabled, which skips all
// closure recording.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(double value) { return leaf(Tensor::scalar(value)); }

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  // Gradient accumulated for v after backward(); zeros if none reached it.
  Tensor grad(Var v) const;

  void backward(Var scalar_loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // NaN/Inf detection after each op; throws on the first non-finite output.
  static void set_check_finite(bool on);
  static bool check_finite_enabled();

  // --- used by op implementations ---
  Var push(const char* op, Tensor out, std::initializer_list<Var> parents,
           std::function<void(Tape&, int)> back);
  Var push(const char* op, Tensor out, const std::vector<Var>& parents,
           std::function<void(Tape&, int)> back);
  bool node_requires_grad(int id) const { return nodes_[id].requires_grad; }
  Tensor& grad_accum(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_;
};

// Elementwise / broadcast
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var add_rowvec(Var x, Var r);  // [n,d] + [1,d]
Var mul_rowvec(Var x, Var r);  // [n,d] * [1,d]
Var relu(Var a);
Var gelu(Var a);
Var silu(Var a);
Var tanh_v(Var a);
Var exp_v(Var a);
Var log_v(Var a);
Var square(Var a);
// Gradient passes through only where the value lies strictly inside [lo, hi].
Var clamp_v(Var a, double lo, double hi);

// Linear algebra / shape
Var matmul(Var a, Var b);
Var transpose(Var a);
Var slice_rows(Var a, int start, int len);
Var slice_cols(Var a, int start, int len);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var a, std::vector<int> idx);

// Reductions / losses
Var sum_all(Var a);
Var mean_all(Var a);
Var sum_squares(Var a);
Var mean_squares(Var a);
// Mean negative log-likelihood over rows of logits for integer targets,
// computed with a stable log-softmax.
Var cross_entropy(Var logits, std::vector<int> targets);

// Normalization / attention pieces
Var softmax(Var a, int axis = 1);
Var log_softmax(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Per-pair edge terms used to fuse edge features into attention keys/values:
//   qe_scores(q, e)[i, j] = dot(q[i], e[i*m + j])      q:[n,d], e:[n*m,d]
//   pe_mix(p, e)[i, :]    = sum_j p[i, j] * e[i*m + j] p:[n,m], e:[n*m,d]
Var qe_scores(Var q, Var e, int m);
Var pe_mix(Var p, Var e);

double scalar_value(Var v);

}  // namespace lanesmith::tc
