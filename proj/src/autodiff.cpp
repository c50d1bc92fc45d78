#include "lanesmith/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lanesmith::tc {

namespace {
std::atomic<bool> g_check_finite{false};

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("ops require vars from one tape");
}
}  // namespace

void Tape::set_check_finite(bool on) { g_check_finite.store(on); }
bool Tape::check_finite_enabled() { return g_check_finite.load(); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::push(const char* op, Tensor out, std::initializer_list<Var> parents,
               std::function<void(Tape&, int)> back) {
  return push(op, std::move(out), std::vector<Var>(parents), std::move(back));
}

Var Tape::push(const char* op, Tensor out, const std::vector<Var>& parents,
               std::function<void(Tape&, int)> back) {
  if (g_check_finite.load() && !all_finite(out))
    throw std::runtime_error(std::string("non-finite output of op ") + op);
  Node n;
  n.value = std::move(out);
  if (grad_enabled_) {
    for (Var p : parents)
      if (p.valid() && nodes_[p.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    if (n.requires_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Tensor& Tape::grad_accum(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor::zeros(n.value.shape);
}

void Tape::backward(Var scalar_loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
  if (val(scalar_loss).numel() != 1)
    throw std::invalid_argument("backward expects a scalar loss");
  grad_accum(scalar_loss.id).data[0] = 1.0;
  for (int i = scalar_loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.back) n.back(*this, i);
  }
}

// ---------------------------------------------------------------------------
// helpers

namespace {

Var unary_op(const char* name, Var a, double (*f)(double), double (*df)(double, double)) {
  Tape& T = *a.tape;
  Tensor out = T.val(a);
  for (auto& v : out.data) v = f(v);
  const int aid = a.id;
  return T.push(name, std::move(out), {a}, [aid, df](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    const Tensor& x = t.val(Var{aid, &t});
    const Tensor& y = t.val(Var{self, &t});
    Tensor& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      ga.data[i] += g.data[i] * df(x.data[i], y.data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& T = *a.tape;
  if (!T.val(a).same_shape(T.val(b)))
    throw std::invalid_argument("add: shape mismatch");
  Tensor out = T.val(a);
  const Tensor& vb = T.val(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  const int aid = a.id, bid = b.id;
  return T.push("add", std::move(out), {a, b}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    for (int id : {aid, bid}) {
      if (!t.node_requires_grad(id)) continue;
      Tensor& gi = t.grad_accum(id);
      for (std::size_t i = 0; i < g.data.size(); ++i) gi.data[i] += g.data[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  Tape& T = *a.tape;
  if (!T.val(a).same_shape(T.val(b)))
    throw std::invalid_argument("sub: shape mismatch");
  Tensor out = T.val(a);
  const Tensor& vb = T.val(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  const int aid = a.id, bid = b.id;
  return T.push("sub", std::move(out), {a, b}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    if (t.node_requires_grad(aid)) {
      Tensor& ga = t.grad_accum(aid);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    }
    if (t.node_requires_grad(bid)) {
      Tensor& gb = t.grad_accum(bid);
      for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& T = *a.tape;
  if (!T.val(a).same_shape(T.val(b)))
    throw std::invalid_argument("mul: shape mismatch");
  Tensor out = T.val(a);
  const Tensor& vb = T.val(b);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  const int aid = a.id, bid = b.id;
  return T.push("mul", std::move(out), {a, b}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const Tensor& va = t.val(Var{aid, &t});
    const Tensor& vb2 = t.val(Var{bid, &t});
    if (t.node_requires_grad(aid)) {
      Tensor& ga = t.grad_accum(aid);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
    }
    if (t.node_requires_grad(bid)) {
      Tensor& gb = t.grad_accum(bid);
      for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
    }
  });
}

Var scale(Var a, double c) {
  Tape& T = *a.tape;
  Tensor out = T.val(a);
  for (auto& v : out.data) v *= c;
  const int aid = a.id;
  return T.push("scale", std::move(out), {a}, [aid, c](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    Tensor& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
  });
}

Var add_scalar(Var a, double c) {
  Tape& T = *a.tape;
  Tensor out = T.val(a);
  for (auto& v : out.data) v += c;
  const int aid = a.id;
  return T.push("add_scalar", std::move(out), {a}, [aid](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    Tensor& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
  });
}

Var add_rowvec(Var x, Var r) {
  require_same_tape(x, r);
  Tape& T = *x.tape;
  const Tensor& vx = T.val(x);
  const Tensor& vr = T.val(r);
  if (vr.rows() != 1 || vr.cols() != vx.cols())
    throw std::invalid_argument("add_rowvec: expected [1,d] row");
  Tensor out = vx;
  const int n = vx.rows(), d = vx.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += vr.at(0, j);
  const int xid = x.id, rid = r.id;
  return T.push("add_rowvec", std::move(out), {x, r}, [xid, rid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const int n2 = g.rows(), d2 = g.cols();
    if (t.node_requires_grad(xid)) {
      Tensor& gx = t.grad_accum(xid);
      for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    }
    if (t.node_requires_grad(rid)) {
      Tensor& gr = t.grad_accum(rid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < d2; ++j) gr.at(0, j) += g.at(i, j);
    }
  });
}

Var mul_rowvec(Var x, Var r) {
  require_same_tape(x, r);
  Tape& T = *x.tape;
  const Tensor& vx = T.val(x);
  const Tensor& vr = T.val(r);
  if (vr.rows() != 1 || vr.cols() != vx.cols())
    throw std::invalid_argument("mul_rowvec: expected [1,d] row");
  Tensor out = vx;
  const int n = vx.rows(), d = vx.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) *= vr.at(0, j);
  const int xid = x.id, rid = r.id;
  return T.push("mul_rowvec", std::move(out), {x, r}, [xid, rid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const Tensor& vx2 = t.val(Var{xid, &t});
    const Tensor& vr2 = t.val(Var{rid, &t});
    const int n2 = g.rows(), d2 = g.cols();
    if (t.node_requires_grad(xid)) {
      Tensor& gx = t.grad_accum(xid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < d2; ++j) gx.at(i, j) += g.at(i, j) * vr2.at(0, j);
    }
    if (t.node_requires_grad(rid)) {
      Tensor& gr = t.grad_accum(rid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < d2; ++j) gr.at(0, j) += g.at(i, j) * vx2.at(i, j);
    }
  });
}

Var relu(Var a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  // exact erf form
  return unary_op(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        return cdf + x * pdf;
      });
}

Var silu(Var a) {
  return unary_op(
      "silu", a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh_v(Var a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp_v(Var a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log_v(Var a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var clamp_v(Var a, double lo, double hi) {
  Tape& T = *a.tape;
  Tensor out = T.val(a);
  for (auto& v : out.data) v = std::clamp(v, lo, hi);
  const int aid = a.id;
  return T.push("clamp", std::move(out), {a}, [aid, lo, hi](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    const Tensor& x = t.val(Var{aid, &t});
    Tensor& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (x.data[i] > lo && x.data[i] < hi) ga.data[i] += g.data[i];
  });
}

// ---------------------------------------------------------------------------
// linear algebra / shape

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& T = *a.tape;
  Tensor out = matmul_vals(T.val(a), T.val(b));
  const int aid = a.id, bid = b.id;
  return T.push("matmul", std::move(out), {a, b}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const Tensor& va = t.val(Var{aid, &t});
    const Tensor& vb = t.val(Var{bid, &t});
    if (t.node_requires_grad(aid)) {
      Tensor da = matmul_vals(g, transpose_vals(vb));
      Tensor& ga = t.grad_accum(aid);
      for (std::size_t i = 0; i < da.data.size(); ++i) ga.data[i] += da.data[i];
    }
    if (t.node_requires_grad(bid)) {
      Tensor db = matmul_vals(transpose_vals(va), g);
      Tensor& gb = t.grad_accum(bid);
      for (std::size_t i = 0; i < db.data.size(); ++i) gb.data[i] += db.data[i];
    }
  });
}

Var transpose(Var a) {
  Tape& T = *a.tape;
  Tensor out = transpose_vals(T.val(a));
  const int aid = a.id;
  return T.push("transpose", std::move(out), {a}, [aid](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    Tensor gt = transpose_vals(t.grad_accum(self));
    Tensor& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < gt.data.size(); ++i) ga.data[i] += gt.data[i];
  });
}

Var slice_rows(Var a, int start, int len) {
  Tape& T = *a.tape;
  const Tensor& va = T.val(a);
  if (start < 0 || len < 0 || start + len > va.rows())
    throw std::invalid_argument("slice_rows: out of range");
  const int d = va.cols();
  Tensor out = Tensor::zeros({len, d});
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = va.at(start + i, j);
  const int aid = a.id;
  return T.push("slice_rows", std::move(out), {a}, [aid, start](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    Tensor& ga = t.grad_accum(aid);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(start + i, j) += g.at(i, j);
  });
}

Var slice_cols(Var a, int start, int len) {
  Tape& T = *a.tape;
  const Tensor& va = T.val(a);
  if (start < 0 || len < 0 || start + len > va.cols())
    throw std::invalid_argument("slice_cols: out of range");
  const int n = va.rows();
  Tensor out = Tensor::zeros({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = va.at(i, start + j);
  const int aid = a.id;
  return T.push("slice_cols", std::move(out), {a}, [aid, start](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    Tensor& ga = t.grad_accum(aid);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(i, start + j) += g.at(i, j);
  });
}

namespace {

Var concat_impl(const std::vector<Var>& parts, bool rows) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input");
  Tape& T = *parts[0].tape;
  int total = 0;
  const Tensor& first = T.val(parts[0]);
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    const Tensor& v = T.val(p);
    if (rows ? v.cols() != first.cols() : v.rows() != first.rows())
      throw std::invalid_argument("concat: incompatible shapes");
    total += rows ? v.rows() : v.cols();
  }
  Tensor out = rows ? Tensor::zeros({total, first.cols()})
                    : Tensor::zeros({first.rows(), total});
  int offset = 0;
  for (Var p : parts) {
    const Tensor& v = T.val(p);
    if (rows) {
      for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) out.at(offset + i, j) = v.at(i, j);
      offset += v.rows();
    } else {
      for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < v.cols(); ++j) out.at(i, offset + j) = v.at(i, j);
      offset += v.cols();
    }
  }
  std::vector<int> ids;
  std::vector<int> sizes;
  for (Var p : parts) {
    ids.push_back(p.id);
    const Tensor& v = T.val(p);
    sizes.push_back(rows ? v.rows() : v.cols());
  }
  return T.push(rows ? "concat_rows" : "concat_cols", std::move(out), parts,
                [ids, sizes, rows](Tape& t, int self) {
                  const Tensor& g = t.grad_accum(self);
                  int off = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    const int sz = sizes[k];
                    if (t.node_requires_grad(ids[k])) {
                      Tensor& gp = t.grad_accum(ids[k]);
                      if (rows) {
                        for (int i = 0; i < sz; ++i)
                          for (int j = 0; j < g.cols(); ++j)
                            gp.at(i, j) += g.at(off + i, j);
                      } else {
                        for (int i = 0; i < g.rows(); ++i)
                          for (int j = 0; j < sz; ++j)
                            gp.at(i, j) += g.at(i, off + j);
                      }
                    }
                    off += sz;
                  }
                });
}

}  // namespace

Var concat_rows(const std::vector<Var>& parts) { return concat_impl(parts, true); }
Var concat_cols(const std::vector<Var>& parts) { return concat_impl(parts, false); }

Var gather_rows(Var a, std::vector<int> idx) {
  Tape& T = *a.tape;
  const Tensor& va = T.val(a);
  const int d = va.cols();
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= va.rows())
      throw std::invalid_argument("gather_rows: index out of range");
    for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = va.at(idx[r], j);
  }
  const int aid = a.id;
  return T.push("gather_rows", std::move(out), {a},
                [aid, idx = std::move(idx)](Tape& t, int self) {
                  if (!t.node_requires_grad(aid)) return;
                  const Tensor& g = t.grad_accum(self);
                  Tensor& ga = t.grad_accum(aid);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (int j = 0; j < g.cols(); ++j)
                      ga.at(idx[r], j) += g.at(static_cast<int>(r), j);
                });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(Var a) {
  Tape& T = *a.tape;
  double s = 0.0;
  for (double v : T.val(a).data) s += v;
  const int aid = a.id;
  return T.push("sum_all", Tensor::scalar(s), {a}, [aid](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const double g = t.grad_accum(self).data[0];
    Tensor& ga = t.grad_accum(aid);
    for (auto& v : ga.data) v += g;
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.tape->val(a).numel());
  return scale(sum_all(a), 1.0 / n);
}

Var sum_squares(Var a) { return sum_all(square(a)); }
Var mean_squares(Var a) { return mean_all(square(a)); }

Var cross_entropy(Var logits, std::vector<int> targets) {
  Tape& T = *logits.tape;
  const Tensor& z = T.val(logits);
  const int n = z.rows(), c = z.cols();
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: one target per row");
  for (int t : targets)
    if (t < 0 || t >= c) throw std::invalid_argument("cross_entropy: target out of range");
  // stable log-softmax + mean NLL, fused for a simple exact backward
  double loss = 0.0;
  Tensor probs = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i) {
    double mx = z.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, z.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(z.at(i, j) - mx);
    const double log_denom = std::log(denom);
    for (int j = 0; j < c; ++j) probs.at(i, j) = std::exp(z.at(i, j) - mx) / denom;
    loss -= (z.at(i, targets[i]) - mx - log_denom);
  }
  loss /= static_cast<double>(n);
  const int lid = logits.id;
  return T.push("cross_entropy", Tensor::scalar(loss), {logits},
                [lid, probs = std::move(probs), targets = std::move(targets)](
                    Tape& t, int self) {
                  if (!t.node_requires_grad(lid)) return;
                  const double g = t.grad_accum(self).data[0];
                  Tensor& gl = t.grad_accum(lid);
                  const int n2 = probs.rows(), c2 = probs.cols();
                  const double inv_n = 1.0 / static_cast<double>(n2);
                  for (int i = 0; i < n2; ++i)
                    for (int j = 0; j < c2; ++j) {
                      double p = probs.at(i, j) - (targets[i] == j ? 1.0 : 0.0);
                      gl.at(i, j) += g * inv_n * p;
                    }
                });
}

// ---------------------------------------------------------------------------
// normalization / attention

Var softmax(Var a, int axis) {
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  Tape& T = *a.tape;
  const Tensor& x = T.val(a);
  Tensor out = Tensor::zeros(x.shape);
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < d; ++j) denom += std::exp(x.at(i, j) - mx);
    for (int j = 0; j < d; ++j) out.at(i, j) = std::exp(x.at(i, j) - mx) / denom;
  }
  const int aid = a.id;
  return T.push("softmax", std::move(out), {a}, [aid](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    const Tensor& y = t.val(Var{self, &t});
    Tensor& ga = t.grad_accum(aid);
    const int n2 = y.rows(), d2 = y.cols();
    for (int i = 0; i < n2; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d2; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < d2; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var log_softmax(Var a) {
  Tape& T = *a.tape;
  const Tensor& x = T.val(a);
  Tensor out = Tensor::zeros(x.shape);
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < d; ++j) denom += std::exp(x.at(i, j) - mx);
    const double log_denom = std::log(denom) + mx;
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) - log_denom;
  }
  const int aid = a.id;
  return T.push("log_softmax", std::move(out), {a}, [aid](Tape& t, int self) {
    if (!t.node_requires_grad(aid)) return;
    const Tensor& g = t.grad_accum(self);
    const Tensor& y = t.val(Var{self, &t});
    Tensor& ga = t.grad_accum(aid);
    const int n2 = y.rows(), d2 = y.cols();
    for (int i = 0; i < n2; ++i) {
      double gsum = 0.0;
      for (int j = 0; j < d2; ++j) gsum += g.at(i, j);
      for (int j = 0; j < d2; ++j)
        ga.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  Tape& T = *x.tape;
  const Tensor& vx = T.val(x);
  const int n = vx.rows(), d = vx.cols();
  if (T.val(gain).cols() != d || T.val(bias).cols() != d)
    throw std::invalid_argument("layer_norm: gain/bias must be [1,d]");
  Tensor xhat = Tensor::zeros(vx.shape);
  Tensor inv_std = Tensor::zeros({n, 1});
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += vx.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = vx.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std.at(i, 0) = is;
    for (int j = 0; j < d; ++j) xhat.at(i, j) = (vx.at(i, j) - mean) * is;
  }
  Tensor out = Tensor::zeros(vx.shape);
  const Tensor& vg = T.val(gain);
  const Tensor& vb = T.val(bias);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = xhat.at(i, j) * vg.at(0, j) + vb.at(0, j);
  const int xid = x.id, gid = gain.id, bid = bias.id;
  return T.push(
      "layer_norm", std::move(out), {x, gain, bias},
      [xid, gid, bid, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                            int self) {
        const Tensor& g = t.grad_accum(self);
        const Tensor& vg2 = t.val(Var{gid, &t});
        const int n2 = g.rows(), d2 = g.cols();
        if (t.node_requires_grad(gid)) {
          Tensor& gg = t.grad_accum(gid);
          for (int i = 0; i < n2; ++i)
            for (int j = 0; j < d2; ++j) gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
        }
        if (t.node_requires_grad(bid)) {
          Tensor& gb = t.grad_accum(bid);
          for (int i = 0; i < n2; ++i)
            for (int j = 0; j < d2; ++j) gb.at(0, j) += g.at(i, j);
        }
        if (t.node_requires_grad(xid)) {
          Tensor& gx = t.grad_accum(xid);
          for (int i = 0; i < n2; ++i) {
            // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d2; ++j) {
              const double dxh = g.at(i, j) * vg2.at(0, j);
              m1 += dxh;
              m2 += dxh * xhat.at(i, j);
            }
            m1 /= d2;
            m2 /= d2;
            const double is = inv_std.at(i, 0);
            for (int j = 0; j < d2; ++j) {
              const double dxh = g.at(i, j) * vg2.at(0, j);
              gx.at(i, j) += (dxh - m1 - xhat.at(i, j) * m2) * is;
            }
          }
        }
      });
}

Var qe_scores(Var q, Var e, int m) {
  require_same_tape(q, e);
  Tape& T = *q.tape;
  const Tensor& vq = T.val(q);
  const Tensor& ve = T.val(e);
  const int n = vq.rows(), d = vq.cols();
  if (ve.rows() != n * m || ve.cols() != d)
    throw std::invalid_argument("qe_scores: e must be [n*m,d]");
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += vq.at(i, k) * ve.at(i * m + j, k);
      out.at(i, j) = s;
    }
  const int qid = q.id, eid = e.id;
  return T.push("qe_scores", std::move(out), {q, e}, [qid, eid, m](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const Tensor& vq2 = t.val(Var{qid, &t});
    const Tensor& ve2 = t.val(Var{eid, &t});
    const int n2 = vq2.rows(), d2 = vq2.cols();
    if (t.node_requires_grad(qid)) {
      Tensor& gq = t.grad_accum(qid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < m; ++j) {
          const double gij = g.at(i, j);
          for (int k = 0; k < d2; ++k) gq.at(i, k) += gij * ve2.at(i * m + j, k);
        }
    }
    if (t.node_requires_grad(eid)) {
      Tensor& ge = t.grad_accum(eid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < m; ++j) {
          const double gij = g.at(i, j);
          for (int k = 0; k < d2; ++k) ge.at(i * m + j, k) += gij * vq2.at(i, k);
        }
    }
  });
}

Var pe_mix(Var p, Var e) {
  require_same_tape(p, e);
  Tape& T = *p.tape;
  const Tensor& vp = T.val(p);
  const Tensor& ve = T.val(e);
  const int n = vp.rows(), m = vp.cols();
  if (ve.rows() != n * m) throw std::invalid_argument("pe_mix: e must be [n*m,d]");
  const int d = ve.cols();
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double pij = vp.at(i, j);
      for (int k = 0; k < d; ++k) out.at(i, k) += pij * ve.at(i * m + j, k);
    }
  const int pid = p.id, eid = e.id;
  return T.push("pe_mix", std::move(out), {p, e}, [pid, eid](Tape& t, int self) {
    const Tensor& g = t.grad_accum(self);
    const Tensor& vp2 = t.val(Var{pid, &t});
    const Tensor& ve2 = t.val(Var{eid, &t});
    const int n2 = vp2.rows(), m2 = vp2.cols(), d2 = ve2.cols();
    if (t.node_requires_grad(pid)) {
      Tensor& gp = t.grad_accum(pid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < m2; ++j) {
          double s = 0.0;
          for (int k = 0; k < d2; ++k) s += g.at(i, k) * ve2.at(i * m2 + j, k);
          gp.at(i, j) += s;
        }
    }
    if (t.node_requires_grad(eid)) {
      Tensor& ge = t.grad_accum(eid);
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < m2; ++j) {
          const double pij = vp2.at(i, j);
          for (int k = 0; k < d2; ++k) ge.at(i * m2 + j, k) += pij * g.at(i, k);
        }
    }
  });
}

double scalar_value(Var v) {
  const Tensor& t = v.tape->val(v);
  if (t.numel() != 1) throw std::invalid_argument("scalar_value: not a scalar");
  return t.data[0];
}

}  // namespace lanesmith::tc
