// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "support/testutil.hpp"
#include "tfuse/autodiff.hpp"
#include "tfuse/checkpoint.hpp"
#include "tfuse/optim.hpp"
#include "tfuse/tensor.hpp"

using namespace tfuse;
using test::naive_matmul;
using test::random_uniform;

TEST_CASE("matmul identity and hand cases") {
  Tensord id = Tensord::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(1);
  Tensord b = random_uniform<double>({3, 4}, rng);
  REQUIRE(max_abs_diff(matmul(id, b), b) == 0.0);

  Tensord a = Tensord::from({2, 2}, {1, 2, 3, 4});
  Tensord v = Tensord::from({2, 1}, {1, 1});
  Tensord r = matmul(a, v);
  REQUIRE(r[0] == 3.0);
  REQUIRE(r[1] == 7.0);
}

TEST_CASE("matmul matches naive triple-loop oracle") {
  Rng rng(42);
  Tensord a = random_uniform<double>({5, 7}, rng);
  Tensord b = random_uniform<double>({7, 3}, rng);
  REQUIRE(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul shape mismatch raises dimension error") {
  Tensord a({2, 3}), b({4, 2});
  REQUIRE_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("matmul associativity on random conforming triples") {
  Rng rng(7);
  for (int it = 0; it < 10; ++it) {
    Tensord a = random_uniform<double>({4, 6}, rng);
    Tensord b = random_uniform<double>({6, 5}, rng);
    Tensord c = random_uniform<double>({5, 3}, rng);
    REQUIRE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-8);
  }
}

TEST_CASE("softmax symmetry, stability, oracle") {
  Tensord x = Tensord::from({1, 2}, {0, 0});
  Tensord y = softmax_rows(x, 1.0);
  REQUIRE(y[0] == Catch::Approx(0.5).margin(1e-15));

  Tensord hot = Tensord::from({1, 2}, {1000, 0});
  Tensord yh = softmax_rows(hot, 1.0);
  REQUIRE(std::isfinite(yh[0]));
  REQUIRE(yh[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(yh[1] == Catch::Approx(0.0).margin(1e-12));

  Rng rng(3);
  Tensord r = random_uniform<double>({1, 9}, rng, -2.0, 2.0);
  const double tau = 0.1;
  Tensord got = softmax_rows(r, tau);
  double z = 0;
  for (int i = 0; i < 9; ++i) z += std::exp(r[i] / tau);
  for (int i = 0; i < 9; ++i)
    REQUIRE(got[i] == Catch::Approx(std::exp(r[i] / tau) / z).margin(1e-10));
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
  Rng rng(11);
  Tensord x = random_uniform<double>({40, 17}, rng, -30.0, 30.0);
  Tensord y = softmax_rows(x, 0.7);
  for (int r = 0; r < 40; ++r) {
    double s = 0;
    for (int c = 0; c < 17; ++c) {
      s += y[r * 17 + c];
      REQUIRE(y[r * 17 + c] >= 0.0);
      REQUIRE(y[r * 17 + c] <= 1.0);
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
  }
  REQUIRE_THROWS_AS(softmax_rows(x, 0.0), Error);
}

TEST_CASE("layer_norm degenerate, normalized, oracle") {
  Tensord gain = Tensord::full({4}, 1.0), bias({4});
  Tensord c = Tensord::full({1, 4}, 3.25);
  Tensord yc = layer_norm_rows(c, gain, bias);
  for (int i = 0; i < 4; ++i) REQUIRE(std::abs(yc[i]) < 1e-9);

  Tensord g2 = Tensord::full({2}, 1.0), b2({2});
  Tensord pm = Tensord::from({1, 2}, {1, -1});
  Tensord ypm = layer_norm_rows(pm, g2, b2);
  REQUIRE(ypm[0] == Catch::Approx(1.0).epsilon(1e-4));
  REQUIRE(ypm[1] == Catch::Approx(-1.0).epsilon(1e-4));

  Rng rng(5);
  Tensord x = random_uniform<double>({1, 12}, rng);
  Tensord y = layer_norm_rows(x, Tensord::full({12}, 1.0), Tensord({12}), 1e-12);
  double mu = 0;
  for (int i = 0; i < 12; ++i) mu += x[i];
  mu /= 12;
  double var = 0;
  for (int i = 0; i < 12; ++i) var += (x[i] - mu) * (x[i] - mu);
  var /= 12;
  for (int i = 0; i < 12; ++i)
    REQUIRE(y[i] == Catch::Approx((x[i] - mu) / std::sqrt(var + 1e-12)).margin(1e-10));
}

TEST_CASE("backward: loss = sum(W) gives ones") {
  ParamSet<double> ps;
  int w = ps.add("W", random_uniform<double>({3, 4}, *(new Rng(9))));
  GradStore<double> gs(ps);
  Graph<double> g;
  auto loss = g.sum_all(g.param(ps, w, &gs));
  g.backward(loss);
  Tensord gw = gs.at(w);
  for (int64_t i = 0; i < gw.size(); ++i) REQUIRE(gw[i] == 1.0);
}

TEST_CASE("backward: least squares closed form") {
  Rng rng(13);
  ParamSet<double> ps;
  int w = ps.add("W", random_uniform<double>({3, 2}, rng));
  Tensord x = random_uniform<double>({2, 1}, rng);
  Tensord y = random_uniform<double>({3, 1}, rng);
  GradStore<double> gs(ps);
  Graph<double> g;
  auto W = g.param(ps, w, &gs);
  auto r = g.sub(g.matmul(W, g.constant(x)), g.constant(y));
  auto loss = g.scale(g.sum_all(g.mul(r, r)), 0.5);
  g.backward(loss);

  // dW = (Wx - y) x^T
  Tensord resid = sub(matmul(ps.value(w), x), y);
  Tensord expect = matmul(resid, transpose(x));
  REQUIRE(max_abs_diff(gs.at(w), expect) < 1e-12);
}

TEST_CASE("backward rejects non-scalar loss") {
  ParamSet<double> ps;
  Rng rng(1);
  int w = ps.add("W", random_uniform<double>({2, 2}, rng));
  GradStore<double> gs(ps);
  Graph<double> g;
  auto W = g.param(ps, w, &gs);
  REQUIRE_THROWS_AS(g.backward(W), Error);
}

TEST_CASE("gradient check: every differentiable op, 100 random probes") {
  Rng rng(2024);
  ParamSet<double> ps;
  int a = ps.add("a", random_uniform<double>({4, 6}, rng, -0.8, 0.8));
  int b = ps.add("b", random_uniform<double>({6, 5}, rng, -0.8, 0.8));
  int c = ps.add("c", random_uniform<double>({4, 5}, rng, -0.8, 0.8));
  int gn = ps.add("gain", random_uniform<double>({5}, rng, 0.5, 1.5));
  int bs = ps.add("bias", random_uniform<double>({5}, rng, -0.5, 0.5));
  int rowv = ps.add("rowv", random_uniform<double>({1, 5}, rng, -0.5, 0.5));

  auto build = [&](Graph<double>& g, GradStore<double>* sink) {
    auto A = g.param(ps, a, sink);
    auto B = g.param(ps, b, sink);
    auto C = g.param(ps, c, sink);
    auto G = g.param(ps, gn, sink);
    auto Bi = g.param(ps, bs, sink);
    auto Rv = g.param(ps, rowv, sink);
    auto m = g.matmul(A, B);                         // matmul
    auto ln = g.layer_norm(m, G, Bi);                // layer_norm
    auto sm = g.softmax(ln, 0.7);                    // softmax
    auto lsm = g.log_softmax(g.add(m, Rv), 1.3);     // log_softmax + broadcast add
    auto ge = g.gelu(g.mul(sm, C));                  // gelu + mul
    auto th = g.tanh_op(g.sub(ge, C));               // tanh + sub
    auto nm = g.l2_normalize(g.slice_rows(th, 0, 2));
    auto cc = g.concat_cols(std::vector<Graph<double>::Val>{nm, g.slice_rows(lsm, 0, 2)});
    auto sel = g.select_rows(cc, {1, 0, 1});
    auto mr = g.mean_rows(g.matmul_nt(sel, cc));
    auto av = g.average(std::vector<Graph<double>::Val>{g.mean_all(mr), g.mean_all(ge)});
    return g.add(g.scale(g.sum_all(sel), 0.25), av);
  };

  auto res = test::grad_check<double>(ps, build, rng, 100);
  INFO("max relative error " << res.max_rel_err);
  REQUIRE(res.probes == 100);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("lr schedule endpoints") {
  LrSchedule sched{1e-3, 100, 1000, 0.01};
  REQUIRE(sched.at(0) == 0.0);
  REQUIRE(sched.at(1) == Catch::Approx(1e-5));
  REQUIRE(sched.at(100) == Catch::Approx(1e-3));
  REQUIRE(sched.at(1000) == Catch::Approx(1e-5));   // floor = 1e-2 * base
  REQUIRE(sched.at(550) == Catch::Approx(1e-5 + (1e-3 - 1e-5) * 0.5));
}

TEST_CASE("optimizer: quadratic bowl shrinks monotonically after warmup") {
  Rng rng(77);
  ParamSet<double> ps;
  int w = ps.add("w", random_uniform<double>({8, 4}, rng, -1.0, 1.0));
  AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0}, ps);
  LrSchedule sched{5e-2, 50, 500, 0.01};
  double prev = 1e30;
  for (int step = 1; step <= 500; ++step) {
    GradStore<double> gs(ps);
    Graph<double> g;
    auto W = g.param(ps, w, &gs);
    auto loss = g.sum_all(g.mul(W, W));
    g.backward(loss);
    opt.step(ps, gs, sched.at(step));
    if (step > 50) {
      double norm = 0;
      const Tensord& v = ps.value(w);
      for (int64_t i = 0; i < v.size(); ++i) norm += v[i] * v[i];
      // strict decrease until the iterate is numerically at the optimum
      if (prev > 1e-8) REQUIRE(norm < prev);
      prev = norm;
    }
  }
  REQUIRE(prev < 1e-6);
}

TEST_CASE("optimizer: zero gradient and zero weight decay is a no-op") {
  Rng rng(5);
  ParamSet<float> ps;
  int w = ps.add("w", random_uniform<float>({3, 3}, rng));
  Tensorf before = ps.value(w);
  AdamW<float> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0}, ps);
  GradStore<float> gs(ps);  // untouched -> zero grads
  opt.step(ps, gs, 1e-3);
  REQUIRE(max_abs_diff(ps.value(w), before) == 0.0f);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(31);
  ParamSet<float> ps;
  ps.add("enc/W", random_uniform<float>({7, 5}, rng));
  ps.add("enc/b", random_uniform<float>({5}, rng));
  ps.add("head/q", random_uniform<float>({1, 16}, rng));

  TensorBundle<float> out;
  out.meta["step"] = 12;
  for (int s = 0; s < ps.size(); ++s) out.put(ps.name(s), ps.value(s));
  const std::string path = (std::filesystem::temp_directory_path() / "tfuse_ck_test.bin").string();
  save_checkpoint(out, path);

  TensorBundle<float> in = load_checkpoint<float>(path);
  REQUIRE(in.meta.at("step") == 12);
  ParamSet<float> ps2;
  Rng rng2(99);
  ps2.add("enc/W", random_uniform<float>({7, 5}, rng2));
  ps2.add("enc/b", random_uniform<float>({5}, rng2));
  ps2.add("head/q", random_uniform<float>({1, 16}, rng2));
  load_into(in, ps2);
  for (int s = 0; s < ps.size(); ++s)
    REQUIRE(max_abs_diff(ps.value(s), ps2.value(s)) == 0.0f);
  std::filesystem::remove(path);

  // corrupt magic -> data error
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTME1xxxxxxxxxxxxxxxx";
  }
  REQUIRE_THROWS_AS(load_checkpoint<float>(path), Error);
  std::filesystem::remove(path);
}
