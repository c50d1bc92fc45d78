#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "lanesmith/nn.hpp"
#include "test_util.hpp"

using namespace lanesmith;
using namespace lanesmith::tc;
using lanesmith::testing::max_rel_grad_error;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  return Tensor::randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Tape t(false);
  Var i2 = t.leaf(Tensor::mat({{1, 0}, {0, 1}}));
  Var prod = matmul(i2, i2);
  CHECK(t.val(prod).at(0, 0) == 1.0);
  CHECK(t.val(prod).at(0, 1) == 0.0);
  CHECK(t.val(prod).at(1, 1) == 1.0);

  Var a = t.leaf(Tensor::mat({{1, 2}, {3, 4}}));
  Var b = t.leaf(Tensor::mat({{0}, {1}}));
  Var c = matmul(a, b);
  CHECK(t.val(c).at(0, 0) == 2.0);
  CHECK(t.val(c).at(1, 0) == 4.0);

  Var bad = t.leaf(Tensor::zeros({3, 5}));
  CHECK_THROWS(matmul(a, bad));
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  auto f = [](Tape& t, const std::vector<Var>& v) {
    return sum_squares(matmul(v[0], v[1]));
  };
  const double err =
      max_rel_grad_error(f, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax basics") {
  Tape t(false);
  Var x = t.leaf(Tensor::row({0, 0, 0}));
  Tensor y = t.val(softmax(x, 1));
  for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Var big = t.leaf(Tensor::row({1000, 0}));
  Tensor yb = t.val(softmax(big, 1));
  CHECK(std::abs(yb.at(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(yb.at(0, 1)) < 1e-12);

  Rng rng(3);
  Var r = t.leaf(random_tensor({5, 7}, rng));
  Tensor yr = t.val(softmax(r, 1));
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += yr.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(11);
  // weight the entries so the gradient is not identically zero
  auto g = [](Tape& t, const std::vector<Var>& v) {
    Var p = softmax(v[0], 1);
    return sum_squares(mul(p, v[1]));
  };
  const double err =
      max_rel_grad_error(g, {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  CHECK(err < 1e-5);
}

TEST_CASE("layer_norm values") {
  Tape t(false);
  Var gain = t.leaf(Tensor::row({1, 1, 1}));
  Var bias = t.leaf(Tensor::row({0, 0, 0}));
  Var c = t.leaf(Tensor::row({4, 4, 4}));
  Tensor yc = t.val(layer_norm(c, gain, bias));
  for (int j = 0; j < 3; ++j) CHECK(std::abs(yc.at(0, j)) < 1e-9);

  Var gain2 = t.leaf(Tensor::row({1, 1}));
  Var bias2 = t.leaf(Tensor::row({0, 0}));
  Var x = t.leaf(Tensor::row({1, 3}));
  Tensor y = t.val(layer_norm(x, gain2, bias2));
  CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient") {
  Rng rng(5);
  auto f = [](Tape& t, const std::vector<Var>& v) {
    return sum_squares(mul(layer_norm(v[0], v[1], v[2]), v[3]));
  };
  const double err = max_rel_grad_error(
      f, {random_tensor({3, 6}, rng), random_tensor({1, 6}, rng),
          random_tensor({1, 6}, rng), random_tensor({3, 6}, rng)});
  CHECK(err < 1e-5);
}

TEST_CASE("elementwise and shape ops gradients on random shapes") {
  Rng rng(13);
  for (int rep = 0; rep < 3; ++rep) {
    const int n = 2 + rng.uniform_int(0, 3);
    const int d = 2 + rng.uniform_int(0, 4);
    auto mixer = [n, d](Tape& t, const std::vector<Var>& v) {
      Var a = v[0], b = v[1], r = v[2];
      Var s = add(mul(a, b), sub(a, b));
      s = add_rowvec(s, r);
      s = mul_rowvec(s, r);
      s = scale(s, 0.7);
      Var u = concat_cols({slice_cols(s, 0, d / 2), slice_cols(s, d / 2, d - d / 2)});
      Var w = concat_rows({slice_rows(u, 0, n / 2), slice_rows(u, n / 2, n - n / 2)});
      Var g = gather_rows(w, {0, n - 1, 0});
      Var acts = add(add(relu(g), gelu(g)), add(silu(g), tanh_v(g)));
      return add(mean_all(add(acts, square(g))), mean_all(square(w)));
    };
    const double err = max_rel_grad_error(
        mixer,
        {random_tensor({n, d}, rng), random_tensor({n, d}, rng), random_tensor({1, d}, rng)});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("exp log transpose gradients") {
  Rng rng(17);
  auto f = [](Tape& t, const std::vector<Var>& v) {
    Var pos = add_scalar(square(v[0]), 0.5);
    return sum_all(log_v(pos));
  };
  CHECK(max_rel_grad_error(f, {random_tensor({4, 3}, rng)}) < 1e-5);

  auto g = [](Tape& t, const std::vector<Var>& v) {
    return sum_squares(matmul(transpose(v[0]), v[0]));
  };
  CHECK(max_rel_grad_error(g, {random_tensor({3, 4}, rng)}) < 1e-5);

  auto e = [](Tape& t, const std::vector<Var>& v) {
    return mean_all(exp_v(scale(v[0], 0.3)));
  };
  CHECK(max_rel_grad_error(e, {random_tensor({2, 5}, rng)}) < 1e-5);
}

TEST_CASE("cross_entropy value and gradient") {
  Tape t(false);
  // logits with a huge margin: ce -> 0 exactly in double precision
  Var sharp = t.leaf(Tensor::mat({{1000, 0, 0}, {0, 1000, 0}}));
  CHECK(scalar_value(cross_entropy(sharp, {0, 1})) == 0.0);

  // uniform logits: ce = ln(C)
  Var flat = t.leaf(Tensor::mat({{0, 0, 0, 0}}));
  CHECK(scalar_value(cross_entropy(flat, {2})) == doctest::Approx(std::log(4.0)));

  Rng rng(23);
  auto f = [](Tape& tape, const std::vector<Var>& v) {
    return cross_entropy(v[0], {1, 0, 2});
  };
  CHECK(max_rel_grad_error(f, {random_tensor({3, 4}, rng)}) < 1e-5);
}

TEST_CASE("log_softmax gradient") {
  Rng rng(29);
  auto f = [](Tape& t, const std::vector<Var>& v) {
    return sum_squares(mul(log_softmax(v[0]), v[1]));
  };
  CHECK(max_rel_grad_error(
            f, {random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)}) < 1e-5);
}

TEST_CASE("qe_scores and pe_mix gradients") {
  Rng rng(31);
  const int n = 3, m = 4, d = 5;
  auto f = [m](Tape& t, const std::vector<Var>& v) {
    return sum_squares(qe_scores(v[0], v[1], m));
  };
  CHECK(max_rel_grad_error(
            f, {random_tensor({n, d}, rng), random_tensor({n * m, d}, rng)}) < 1e-5);

  auto g = [](Tape& t, const std::vector<Var>& v) {
    return sum_squares(pe_mix(v[0], v[1]));
  };
  CHECK(max_rel_grad_error(
            g, {random_tensor({n, m}, rng), random_tensor({n * m, d}, rng)}) < 1e-5);
}

TEST_CASE("attention: single key equals projected value") {
  Rng rng(41);
  ParamStore store(1);
  Tape tape(false);
  Binder b(tape, store, false);
  Tensor x = random_tensor({1, 8}, rng);
  Var q = tape.leaf(x);
  AttentionInputs in{q, q, {}, {}};
  Var out = multi_head_attention(b, "attn", in, 2);

  // With one key the softmax is 1, so out = (x Wv + bv) Wo + bo.
  Var v_proj = linear(b, "attn/v", q, 8);
  Var expect = linear(b, "attn/o", v_proj, 8);
  const Tensor& got = tape.val(out);
  const Tensor& want = tape.val(expect);
  for (int j = 0; j < 8; ++j) CHECK(got.at(0, j) == doctest::Approx(want.at(0, j)).epsilon(1e-12));
}

TEST_CASE("attention: permutation equivariance of key set with edge bias") {
  Rng rng(43);
  ParamStore store(2);
  const int n_q = 3, n_k = 5, d = 8;
  Tensor q_in = random_tensor({n_q, d}, rng);
  Tensor kv = random_tensor({n_k, d}, rng);
  Tensor ek = random_tensor({n_q * n_k, d}, rng);
  Tensor ev = random_tensor({n_q * n_k, d}, rng);

  auto run = [&](const Tensor& kv_t, const Tensor& ek_t, const Tensor& ev_t) {
    Tape tape(false);
    Binder b(tape, store, false);
    AttentionInputs in{tape.leaf(q_in), tape.leaf(kv_t), tape.leaf(ek_t), tape.leaf(ev_t)};
    return tape.val(multi_head_attention(b, "attn", in, 2));
  };

  Tensor base = run(kv, ek, ev);

  // rotate the key set by 2 and permute the per-pair rows identically
  std::vector<int> perm(n_k);
  for (int i = 0; i < n_k; ++i) perm[i] = (i + 2) % n_k;
  Tensor kv_p = Tensor::zeros({n_k, d});
  for (int i = 0; i < n_k; ++i)
    for (int j = 0; j < d; ++j) kv_p.at(i, j) = kv.at(perm[i], j);
  Tensor ek_p = Tensor::zeros({n_q * n_k, d});
  Tensor ev_p = Tensor::zeros({n_q * n_k, d});
  for (int i = 0; i < n_q; ++i)
    for (int k = 0; k < n_k; ++k)
      for (int j = 0; j < d; ++j) {
        ek_p.at(i * n_k + k, j) = ek.at(i * n_k + perm[k], j);
        ev_p.at(i * n_k + k, j) = ev.at(i * n_k + perm[k], j);
      }
  Tensor permuted = run(kv_p, ek_p, ev_p);
  for (std::size_t i = 0; i < base.data.size(); ++i)
    CHECK(std::abs(base.data[i] - permuted.data[i]) <= 1e-12);
}

TEST_CASE("attention: two-token case matches hand-expanded formula") {
  Rng rng(47);
  ParamStore store(3);
  const int d = 4;
  Tensor q_in = random_tensor({1, d}, rng);
  Tensor kv = random_tensor({2, d}, rng);

  Tape tape(false);
  Binder b(tape, store, false);
  AttentionInputs in{tape.leaf(q_in), tape.leaf(kv), {}, {}};
  Tensor got = tape.val(multi_head_attention(b, "attn", in, 1));

  auto apply_linear = [&](const std::string& name, const Tensor& x) {
    Tensor w = store.at("attn/" + name + "/w");
    Tensor bias = store.at("attn/" + name + "/b");
    Tensor y = matmul_vals(x, w);
    for (int i = 0; i < y.rows(); ++i)
      for (int j = 0; j < y.cols(); ++j) y.at(i, j) += bias.at(0, j);
    return y;
  };
  Tensor q = apply_linear("q", q_in);
  Tensor k = apply_linear("k", kv);
  Tensor v = apply_linear("v", kv);
  double s0 = 0.0, s1 = 0.0;
  for (int j = 0; j < d; ++j) {
    s0 += q.at(0, j) * k.at(0, j);
    s1 += q.at(0, j) * k.at(1, j);
  }
  s0 /= std::sqrt(double(d));
  s1 /= std::sqrt(double(d));
  const double mx = std::max(s0, s1);
  const double w0 = std::exp(s0 - mx), w1 = std::exp(s1 - mx);
  const double p0 = w0 / (w0 + w1), p1 = w1 / (w0 + w1);
  Tensor mix = Tensor::zeros({1, d});
  for (int j = 0; j < d; ++j) mix.at(0, j) = p0 * v.at(0, j) + p1 * v.at(1, j);
  Tensor want = apply_linear("o", mix);
  for (int j = 0; j < d; ++j) CHECK(got.at(0, j) == doctest::Approx(want.at(0, j)).epsilon(1e-10));
}

TEST_CASE("attention gradient") {
  Rng rng(53);
  ParamStore store(4);
  const int n_q = 2, n_k = 3, d = 4;
  Tensor q_in = random_tensor({n_q, d}, rng);
  Tensor kv = random_tensor({n_k, d}, rng);
  Tensor ek = random_tensor({n_q * n_k, d}, rng);

  // check input gradients through the full attention composite
  auto f = [&store](Tape& t, const std::vector<Var>& v) {
    Binder b(t, store, false);
    AttentionInputs in{v[0], v[1], v[2], {}};
    return sum_squares(multi_head_attention(b, "attn", in, 2));
  };
  CHECK(max_rel_grad_error(f, {q_in, kv, ek}) < 1e-5);
}

TEST_CASE("adam: zero gradient leaves params unchanged") {
  AdamW opt(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  Tensor p = Tensor::row({1.0, -2.0});
  Tensor g = Tensor::zeros({1, 2});
  Tensor before = p;
  opt.step_one("p", p, g);
  CHECK(p.at(0, 0) == before.at(0, 0));
  CHECK(p.at(0, 1) == before.at(0, 1));
}

TEST_CASE("adam: descent on x^2 and convergence on a 2-d quadratic") {
  {
    AdamW opt(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    Tensor x = Tensor::scalar(1.0);
    Tensor g = Tensor::scalar(2.0);  // d/dx of x^2 at x=1
    opt.step_one("x", x, g);
    CHECK(x.data[0] < 1.0);
  }
  {
    // f(x, y) = (x - 3)^2 + 4 (y + 1)^2
    AdamW opt(AdamConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
    Tensor x = Tensor::row({0.0, 0.0});
    for (int i = 0; i < 200; ++i) {
      Tensor g = Tensor::row({2.0 * (x.at(0, 0) - 3.0), 8.0 * (x.at(0, 1) + 1.0)});
      opt.step_one("x", x, g);
    }
    Tensor g = Tensor::row({2.0 * (x.at(0, 0) - 3.0), 8.0 * (x.at(0, 1) + 1.0)});
    CHECK(norm_all(g) < 1e-3);
  }
}

TEST_CASE("adam: decoupled weight decay shrinks params even with zero grad") {
  AdamW opt(AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.1});
  Tensor p = Tensor::row({1.0});
  Tensor g = Tensor::zeros({1, 1});
  opt.step_one("p", p, g);
  CHECK(p.data[0] == doctest::Approx(1.0 - 0.1 * 0.1 * 1.0));
}

TEST_CASE("checkpoint round trip") {
  ParamStore store(9);
  store.ensure("alpha/w", {3, 2}, Init::kXavier);
  store.ensure("beta/b", {1, 5}, Init::kNormal02);
  const std::string path = "ckpt_test.bin";
  save_checkpoint(store, path);
  ParamStore loaded = load_checkpoint(path);
  REQUIRE(loaded.has("alpha/w"));
  REQUIRE(loaded.has("beta/b"));
  CHECK(loaded.at("alpha/w").shape == std::vector<int>({3, 2}));
  for (std::size_t i = 0; i < store.at("beta/b").data.size(); ++i)
    CHECK(loaded.at("beta/b").data[i] == store.at("beta/b").data[i]);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects bad magic") {
  const std::string path = "ckpt_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("BOGUS", f);
    std::fclose(f);
  }
  CHECK_THROWS(load_checkpoint(path));
  std::remove(path.c_str());
}

TEST_CASE("ema equals closed form on a scripted trajectory") {
  const double decay = 0.9999;
  Ema ema(decay);
  ParamStore store;
  store.ensure("p", {1, 1}, Init::kZeros);
  std::vector<double> values = {1.0, 2.0, -0.5, 3.25, 0.0, 7.5};
  double expect = 0.0;
  bool first = true;
  for (double v : values) {
    store.at("p").data[0] = v;
    ema.update(store);
    if (first) {
      expect = v;
      first = false;
    } else {
      expect = decay * expect + (1.0 - decay) * v;
    }
  }
  CHECK(ema.shadow().at("p").data[0] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("forward pass deterministic given same inputs") {
  Rng rng1(99), rng2(99);
  Tensor a1 = Tensor::randn({4, 4}, rng1);
  Tensor a2 = Tensor::randn({4, 4}, rng2);
  for (std::size_t i = 0; i < a1.data.size(); ++i) CHECK(a1.data[i] == a2.data[i]);
  Tape t1(false), t2(false);
  Tensor r1 = t1.val(softmax(matmul(t1.leaf(a1), t1.leaf(a1)), 1));
  Tensor r2 = t2.val(softmax(matmul(t2.leaf(a2), t2.leaf(a2)), 1));
  for (std::size_t i = 0; i < r1.data.size(); ++i) CHECK(r1.data[i] == r2.data[i]);
}

TEST_CASE("non-finite detection toggle") {
  Tape t(false);
  Var x = t.leaf(Tensor::row({-1.0}));
  Tape::set_check_finite(true);
  CHECK_THROWS(log_v(x));  // log of a negative number
  Tape::set_check_finite(false);
  CHECK_NOTHROW(log_v(x));
}

TEST_CASE("sinusoidal encodings are bounded and distinct") {
  Tensor pe = sinusoidal_encoding(16, 8);
  for (double v : pe.data) CHECK(std::abs(v) <= 1.0);
  bool differs = false;
  for (int j = 0; j < 8; ++j)
    if (pe.at(0, j) != pe.at(5, j)) differs = true;
  CHECK(differs);
}
