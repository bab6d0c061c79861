#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "gsup/params.hpp"
#include "gsup/rng.hpp"
#include "gsup/tensor.hpp"

using namespace gsup;
using Catch::Approx;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1,
                               double hi = 1) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Graph<float> g;
  auto x = g.input({1, 4}, {2.f, 2.f, 2.f, 2.f});
  auto y = g.softmax(x);
  for (float v : g.value(y)) REQUIRE(v == Approx(0.25).margin(1e-7));
}

TEST_CASE("softmax rows are non-negative and sum to one") {
  Rng rng(1);
  Graph<float> g;
  std::vector<float> data(8 * 5);
  for (float& v : data) v = float(rng.uniform(-10, 10));
  auto y = g.softmax(g.input({8, 5}, data));
  const auto& yv = g.value(y);
  for (int r = 0; r < 8; ++r) {
    float sum = 0;
    for (int c = 0; c < 5; ++c) {
      REQUIRE(yv[std::size_t(r) * 5 + c] >= 0.0f);
      sum += yv[std::size_t(r) * 5 + c];
    }
    REQUIRE(sum == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("matmul of ones gives 3s and sum-gradient gives 2s") {
  Graph<float> g;
  auto a = g.input({2, 3}, std::vector<float>(6, 1.f));
  auto b = g.input({3, 2}, std::vector<float>(6, 1.f));
  auto c = g.matmul(a, b);
  for (float v : g.value(c)) REQUIRE(v == 3.0f);
  g.backward(g.sum(c));
  for (float v : g.grad(a)) REQUIRE(v == 2.0f);
  for (float v : g.grad(b)) REQUIRE(v == 2.0f);
}

TEST_CASE("layer_norm maps a constant row to zeros") {
  Graph<float> g;
  auto y = g.layer_norm(g.input({1, 6}, std::vector<float>(6, 3.25f)));
  for (float v : g.value(y)) REQUIRE(v == 0.0f);
}

TEST_CASE("gradient of x + x with respect to x is 2") {
  Graph<float> g;
  auto x = g.input({1, 3}, {1.f, 2.f, 3.f});
  g.backward(g.sum(g.add(x, x)));
  for (float v : g.grad(x)) REQUIRE(v == 2.0f);
}

TEST_CASE("shape mismatches name both shapes") {
  Graph<float> g;
  auto a = g.input({2, 3}, std::vector<float>(6, 0.f));
  auto b = g.input({4, 2}, std::vector<float>(8, 0.f));
  REQUIRE_THROWS_WITH(g.matmul(a, b),
                      Catch::Matchers::ContainsSubstring("(2x3)") &&
                          Catch::Matchers::ContainsSubstring("(4x2)"));
  REQUIRE_THROWS_WITH(g.add(a, b),
                      Catch::Matchers::ContainsSubstring("(2x3)") &&
                          Catch::Matchers::ContainsSubstring("(4x2)"));
}

TEST_CASE("debug mode flags non-finite results") {
  Graph<float> g;
  g.debug_check_finite = true;
  auto x = g.input({1, 2}, {700.f, 0.f});
  REQUIRE_THROWS_WITH(g.exp_op(x),
                      Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("gradcheck: add is exact") {
  Rng rng(2);
  auto a = random_vec(rng, 6);
  auto b = random_vec(rng, 6);
  auto report = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        return g.sum(g.add(in[0], in[1]));
      },
      {{{2, 3}, &a}, {{2, 3}, &b}});
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: gelu at 100 random points") {
  Rng rng(3);
  auto x = random_vec(rng, 100, -3, 3);
  auto report = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        return g.sum(g.gelu(in[0]));
      },
      {{{100}, &x}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: softmax-matmul chain") {
  Rng rng(4);
  auto a = random_vec(rng, 12);
  auto b = random_vec(rng, 12);
  auto w = random_vec(rng, 12);
  auto report = gradcheck<double>(
      [&](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        auto h = g.softmax(g.matmul(in[0], g.transpose(in[1])));
        return g.mse(g.matmul(h, in[2]), in[1]);
      },
      {{{4, 3}, &a}, {{4, 3}, &b}, {{4, 3}, &w}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: every elementwise and shape op") {
  Rng rng(5);
  auto a = random_vec(rng, 12);
  auto b = random_vec(rng, 12);
  // Avoid the clamp kinks: keep data away from the boundaries.
  for (double& v : a)
    if (std::fabs(std::fabs(v) - 0.5) < 0.05) v += 0.1;
  auto report = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        auto x = in[0];
        auto chain = g.mul(g.tanh_op(x), g.sigmoid(in[1]));
        chain = g.add(chain, g.exp_op(g.scale(x, 0.3)));
        chain = g.add(chain, g.clamp(x, -0.5, 0.5));
        chain = g.sub(chain, g.reshape(g.transpose(in[1]), {3, 4}));
        auto cat = g.concat(chain, x, 1);          // (3 x 8)
        auto rows = g.concat(chain, x, 0);         // (6 x 4)
        auto sl = g.slice_rows(rows, 1, 5);        // (4 x 4)
        auto gt = g.gather_rows(sl, {0, 3, 3, 1}); // duplicate gather index
        auto rep = g.repeat_rows(g.slice_rows(gt, 0, 1), 3);
        return g.add(g.add(g.mean(cat), g.sum(gt)), g.mean(rep));
      },
      {{{3, 4}, &a}, {{3, 4}, &b}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: layer_norm, linear, broadcast_add") {
  Rng rng(6);
  auto x = random_vec(rng, 15);
  auto w = random_vec(rng, 10);
  auto bias = random_vec(rng, 2);
  auto report = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        auto h = g.layer_norm(in[0]);
        h = g.linear(h, in[1], in[2]);
        h = g.broadcast_add(h, in[2]);
        return g.mean(g.mul(h, h));
      },
      {{{3, 5}, &x}, {{2, 5}, &w}, {{2}, &bias}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: multi-head attention") {
  Rng rng(7);
  auto q = random_vec(rng, 5 * 6);
  auto k = random_vec(rng, 4 * 6);
  auto v = random_vec(rng, 4 * 6);
  auto report = gradcheck<double>(
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        return g.sum(
            g.mul(g.scaled_dot_attention(in[0], in[1], in[2], 2), in[0]));
      },
      {{{5, 6}, &q}, {{4, 6}, &k}, {{4, 6}, &v}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("gradcheck: neighbor-restricted attention with logit bias") {
  Rng rng(8);
  auto q = random_vec(rng, 6 * 4);
  auto k = random_vec(rng, 6 * 4);
  auto v = random_vec(rng, 6 * 4);
  auto bias = random_vec(rng, 6 * 3 * 2);
  std::vector<int> nbr;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) nbr.push_back((i + j) % 6);
  auto report = gradcheck<double>(
      [&](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        auto out = g.knn_attention(in[0], in[1], in[2], nbr, 3, 2, in[3]);
        return g.sum(g.mul(out, out));
      },
      {{{6, 4}, &q}, {{6, 4}, &k}, {{6, 4}, &v}, {{18, 2}, &bias}});
  INFO("worst " << report.worst_rel << " at " << report.worst_at);
  REQUIRE(report.pass);
}

TEST_CASE("neighbor attention over all points equals dense attention") {
  // With every point listing all points as neighbors and zero bias, the
  // restricted op must reproduce dense attention exactly.
  Rng rng(9);
  const int n = 5, c = 8, heads = 2;
  std::vector<float> q(n * c), k(n * c), v(n * c);
  for (float& x : q) x = float(rng.uniform(-1, 1));
  for (float& x : k) x = float(rng.uniform(-1, 1));
  for (float& x : v) x = float(rng.uniform(-1, 1));
  std::vector<int> nbr;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) nbr.push_back(j);
  Graph<float> g;
  auto tq = g.input({n, c}, q), tk = g.input({n, c}, k),
       tv = g.input({n, c}, v);
  auto zero_bias = g.zeros({n * n, heads});
  auto restricted = g.knn_attention(tq, tk, tv, nbr, n, heads, zero_bias);
  auto dense = g.scaled_dot_attention(tq, tk, tv, heads);
  const auto& rv = g.value(restricted);
  const auto& dv = g.value(dense);
  for (std::size_t i = 0; i < rv.size(); ++i)
    REQUIRE(rv[i] == Approx(dv[i]).margin(1e-6));
}

TEST_CASE("attention row-sum telemetry reports near-zero deviation") {
  Rng rng(10);
  Graph<float> g;
  g.record_attention = true;
  std::vector<float> q(7 * 4), k(6 * 4), v(6 * 4);
  for (float& x : q) x = float(rng.uniform(-2, 2));
  for (float& x : k) x = float(rng.uniform(-2, 2));
  for (float& x : v) x = float(rng.uniform(-2, 2));
  g.scaled_dot_attention(g.input({7, 4}, q), g.input({6, 4}, k),
                         g.input({6, 4}, v), 2);
  REQUIRE(g.attention_row_sum_dev.size() == 2);  // one per head
  for (float dev : g.attention_row_sum_dev) REQUIRE(dev < 1e-6f);
}

TEST_CASE("backward through shared subexpressions accumulates") {
  // y = sum(h) + mse(h, 0) with h reused: both consumers contribute.
  Graph<float> g;
  auto x = g.input({1, 2}, {3.f, -1.f});
  auto h = g.scale(x, 2.f);
  auto loss = g.add(g.sum(h), g.mse(h, g.zeros({1, 2})));
  g.backward(loss);
  // d/dx [2x1 + 2x2 + ((2x1)^2 + (2x2)^2)/2] = 2 + 4*x
  REQUIRE(g.grad(x)[0] == Approx(2 + 4 * 3.0).margin(1e-5));
  REQUIRE(g.grad(x)[1] == Approx(2 + 4 * -1.0).margin(1e-5));
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
  ParamStore store(11);
  store.trunc_normal("w", {2, 2});
  const std::vector<float> before = store.entry("w").value;
  store.zero_grads();
  store.adam_step(1e-2);
  REQUIRE(store.entry("w").value == before);
}

TEST_CASE("adam: moments decay under zero gradient") {
  ParamStore store(12);
  store.zeros("w", {1});
  store.entry("w").grad[0] = 1.0f;
  store.adam_step(1e-3);
  const float m1 = store.entry("w").m[0];
  store.zero_grads();
  store.adam_step(1e-3);
  REQUIRE(store.entry("w").m[0] == Approx(m1 * 0.9).margin(1e-8));
}

TEST_CASE("adam: first step with unit gradient moves by almost exactly lr") {
  ParamStore store(13);
  store.zeros("w", {1});
  store.entry("w").grad[0] = 1.0f;
  const double lr = 2.5e-5;
  store.adam_step(lr);
  // m-hat = 1, v-hat = 1 after bias correction: update = -lr / (1 + eps).
  REQUIRE(store.entry("w").value[0] ==
          Approx(-lr / (1.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam: two steps with constant gradient match a scalar reference") {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, grad = 0.7;
  double w = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }
  ParamStore store(14);
  store.constant("w", {1}, 0.5f);
  for (int t = 0; t < 2; ++t) {
    store.zero_grads();
    store.entry("w").grad[0] = float(grad);
    store.adam_step(lr, b1, b2, eps);
  }
  REQUIRE(store.entry("w").value[0] == Approx(w).margin(1e-6));
}

TEST_CASE("parameter init is deterministic and order-independent") {
  ParamStore a(21), b(21);
  a.trunc_normal("x", {4});
  a.trunc_normal("y", {4});
  b.trunc_normal("y", {4});
  b.trunc_normal("x", {4});
  REQUIRE(a.entry("x").value == b.entry("x").value);
  REQUIRE(a.entry("y").value == b.entry("y").value);
  // Truncated normal keeps |v| <= 2 std.
  for (float v : a.entry("x").value) REQUIRE(std::fabs(v) <= 0.04f);
  ParamStore c(22);
  c.trunc_normal("x", {4});
  REQUIRE(a.entry("x").value != c.entry("x").value);
}

TEST_CASE("parameter binding accumulates gradients across two tapes") {
  ParamStore store(15);
  store.constant("w", {1, 2}, 1.5f);
  store.zero_grads();
  for (int rep = 0; rep < 2; ++rep) {
    Graph<float> g;
    ParamBinding<float> params(g, store);
    auto w = params("w");
    g.backward(g.sum(g.mul(w, w)));
    params.collect();
  }
  // d(w*w)/dw = 2w = 3, twice.
  REQUIRE(store.entry("w").grad[0] == Approx(6.0).margin(1e-5));
  REQUIRE(store.entry("w").grad[1] == Approx(6.0).margin(1e-5));
}

TEST_CASE("checkpoint round-trips values, moments, step, and flags") {
  namespace fs = std::filesystem;
  const std::string prefix = (fs::temp_directory_path() / "gsup_ckpt").string();
  ParamStore store(16);
  store.trunc_normal("enc.w", {3, 4});
  store.zeros("enc.b", {4});
  store.constant("head.w", {2}, 0.25f);
  store.set_trainable("enc.", false);
  for (int i = 0; i < 3; ++i) {
    store.zero_grads();
    store.entry("head.w").grad[0] = 0.3f;
    store.adam_step(1e-3);
  }
  store.save(prefix);

  ParamStore loaded(999);  // seed replaced by the checkpoint's
  loaded.load(prefix);
  REQUIRE(loaded.step() == 3);
  REQUIRE(loaded.seed() == 16);
  REQUIRE(loaded.entry("enc.w").value == store.entry("enc.w").value);
  REQUIRE(loaded.entry("head.w").value == store.entry("head.w").value);
  REQUIRE(loaded.entry("head.w").m == store.entry("head.w").m);
  REQUIRE(loaded.entry("head.w").v == store.entry("head.w").v);
  REQUIRE_FALSE(loaded.entry("enc.b").trainable);
  REQUIRE(loaded.entry("head.w").trainable);

  // Resuming reproduces continued training exactly.
  auto step_once = [](ParamStore& s) {
    s.zero_grads();
    s.entry("head.w").grad[0] = -0.2f;
    s.adam_step(1e-3);
  };
  step_once(store);
  step_once(loaded);
  REQUIRE(loaded.entry("head.w").value == store.entry("head.w").value);
  fs::remove(prefix + ".manifest");
  fs::remove(prefix + ".bin");
}

TEST_CASE("loading a missing checkpoint reports the path") {
  ParamStore store(17);
  REQUIRE_THROWS_WITH(store.load("/nonexistent/ckpt"),
                      Catch::Matchers::ContainsSubstring("/nonexistent/ckpt"));
}
