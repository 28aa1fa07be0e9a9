// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "support/testutil.hpp"
#include "tfuse/heads.hpp"
#include "tfuse/report.hpp"

using namespace tfuse;
using test::random_uniform;

TEST_CASE("attentive pool: single token reduces to its projected value") {
  ParamSet<double> ps;
  PoolerSlots<double> p = PoolerSlots<double>::build(ps, 6, 8, 3, Rng(1));
  Rng rng(2);
  Tensord tok = random_uniform<double>({1, 6}, rng);
  Graph<double> g;
  auto pooled = attentive_pool<double>(g, ps, p, g.constant(tok), nullptr);
  Tensord expect = add(matmul(tok, ps.value(p.wv)), ps.value(p.bv));
  REQUIRE(max_abs_diff(g.value(pooled), expect) < 1e-12);
}

TEST_CASE("attentive pool: permutation invariance") {
  ParamSet<double> ps;
  PoolerSlots<double> p = PoolerSlots<double>::build(ps, 8, 8, 2, Rng(3));
  Rng rng(4);
  Tensord tok = random_uniform<double>({7, 8}, rng);
  std::vector<int> perm{4, 2, 6, 0, 5, 1, 3};
  Tensord shuffled = select_rows(tok, perm);
  Graph<double> g1, g2;
  auto a = attentive_pool<double>(g1, ps, p, g1.constant(tok), nullptr);
  auto b = attentive_pool<double>(g2, ps, p, g2.constant(shuffled), nullptr);
  REQUIRE(max_abs_diff(g1.value(a), g2.value(b)) < 1e-10);
}

TEST_CASE("attentive pool matches an explicit n=3 d=4 oracle") {
  ParamSet<double> ps;
  PoolerSlots<double> p = PoolerSlots<double>::build(ps, 4, 8, 2, Rng(5));
  Rng rng(6);
  Tensord tok = random_uniform<double>({3, 4}, rng);
  Graph<double> g;
  auto pooled = attentive_pool<double>(g, ps, p, g.constant(tok), nullptr);

  // explicit computation
  const Tensord& q = ps.value(p.q);
  Tensord k = add(matmul(tok, ps.value(p.wk)), ps.value(p.bk));
  Tensord v = add(matmul(tok, ps.value(p.wv)), ps.value(p.bv));
  double s[3], mx = -1e300, z = 0;
  for (int i = 0; i < 3; ++i) {
    s[i] = 0;
    for (int c = 0; c < 4; ++c) s[i] += q[c] * k[i * 4 + c];
    s[i] /= 2.0;  // sqrt(4)
    mx = std::max(mx, s[i]);
  }
  for (int i = 0; i < 3; ++i) {
    s[i] = std::exp(s[i] - mx);
    z += s[i];
  }
  for (int c = 0; c < 4; ++c) {
    double acc = 0;
    for (int i = 0; i < 3; ++i) acc += s[i] / z * v[i * 4 + c];
    REQUIRE(g.value(pooled)[c] == Catch::Approx(acc).margin(1e-10));
  }
}

TEST_CASE("evaluate: perfect, constant, and row-sum properties") {
  // perfect predictor
  std::vector<int> truth;
  for (int i = 0; i < 72; ++i) truth.push_back(i % 36);
  ProbeMetrics perfect = evaluate_predictions(truth, truth, 36);
  REQUIRE(perfect.accuracy == 1.0);
  for (int c = 0; c < 36; ++c)
    for (int k = 0; k < 36; ++k)
      REQUIRE(perfect.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)] ==
              (c == k ? 2 : 0));

  // constant predictor on a balanced set
  std::vector<int> constant(truth.size(), 4);
  ProbeMetrics cm = evaluate_predictions(constant, truth, 36);
  REQUIRE(cm.accuracy == Catch::Approx(1.0 / 36));

  // confusion row sums equal per-class support (recount oracle)
  Rng rng(7);
  std::vector<int> pred;
  for (size_t i = 0; i < truth.size(); ++i) pred.push_back(rng.uniform_int(36));
  ProbeMetrics rm = evaluate_predictions(pred, truth, 36);
  for (int c = 0; c < 36; ++c) {
    int sum = 0, support = 0;
    for (int k = 0; k < 36; ++k) sum += rm.confusion[static_cast<size_t>(c)][static_cast<size_t>(k)];
    for (int t : truth) support += (t == c) ? 1 : 0;
    REQUIRE(sum == support);
  }

  REQUIRE_THROWS_AS(evaluate_predictions({}, {}, 4), Error);
}

TEST_CASE("label budget subsampling is balanced and deterministic") {
  ProbeDataset<float> data;
  for (int i = 0; i < 120; ++i) {
    ProbeSample<float> s;
    s.label = i % 6;
    s.test_split = (i >= 96);
    data.push_back(std::move(s));
  }
  auto a = budget_train_indices(data, 0.5, 11, true);
  auto b = budget_train_indices(data, 0.5, 11, true);
  REQUIRE(a == b);
  std::map<int, int> per_class;
  for (int i : a) per_class[data[static_cast<size_t>(i)].label]++;
  for (auto& [cls, n] : per_class) REQUIRE(n == 8);  // 16 train per class * 0.5
  auto full = budget_train_indices(data, 1.0, 11, true);
  REQUIRE(full.size() == 96);
}

TEST_CASE("frozen probe on a tiny synthetic task learns and freezes the encoder") {
  GenConfig gen;
  gen.events_per_class = 4;
  gen.duration = 1.30;
  DatasetManifest manifest = plan_dataset(gen, TaskFamily::material_quantity);
  // keep it small: take three well-separated classes only
  DatasetManifest small = manifest;
  small.events.clear();
  for (const auto& e : manifest.events) {
    const int l = e.scenario.label();
    if (l == 0 || l == 7 || l == 16) small.events.push_back(e);
  }

  FeaturizeConfig feat;
  FusionConfig fc;
  fc.d = 16;
  fc.heads = 2;
  fc.layers_unimodal = 1;
  fc.layers_fusion = 1;
  fc.bottleneck_tokens = 2;
  ParamSet<float> enc_ps;
  auto enc = EncoderParams<float>::build(enc_ps, fc, feat, Rng(21));

  ProbeDataset<float> data = build_probe_dataset<float>(small, feat, 1);
  // compact labels to 0..2
  for (auto& s : data) s.label = s.label == 0 ? 0 : (s.label == 7 ? 1 : 2);
  cache_encoded(data, enc_ps, enc);

  std::vector<Tensorf> before;
  for (int s = 0; s < enc_ps.size(); ++s) before.push_back(enc_ps.value(s));

  ProbeConfig pc;
  pc.task = TaskFamily::material_quantity;
  pc.mode = ProbeMode::frozen_random;
  pc.epochs = 400;  // 9 train samples -> a few steps per epoch
  pc.batch = 4;
  pc.lr = 5e-3;
  pc.seed = 3;
  ProbeMetrics m = train_probe<float>(data, pc, &enc_ps, &enc, feat);
  // 18-class head over 3 present classes; well above the 1/18 chance floor
  INFO("tiny-task accuracy " << m.accuracy);
  REQUIRE(m.accuracy > 0.5);

  // freeze contract: encoder params bit-identical after training
  for (int s = 0; s < enc_ps.size(); ++s)
    REQUIRE(max_abs_diff(before[static_cast<size_t>(s)], enc_ps.value(s)) == 0.0f);
}

TEST_CASE("svg bar chart writes a well-formed file") {
  const auto path = std::filesystem::temp_directory_path() / "tfuse_chart.svg";
  svg_grouped_bars("probe accuracy", {"image", "audio", "all"},
                   {BarSeries{"frozen", {0.4, 0.5, 0.8}}, BarSeries{"e2e", {0.3, 0.45, 0.6}}},
                   path.string());
  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(text.find("<svg") != std::string::npos);
  REQUIRE(text.find("</svg>") != std::string::npos);
  REQUIRE(text.find("frozen") != std::string::npos);
  std::filesystem::remove(path);
}
