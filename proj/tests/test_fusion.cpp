// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "support/testutil.hpp"
#include "tfuse/fusion.hpp"

using namespace tfuse;
using test::random_uniform;

namespace {

// Naive, loop-only re-implementation of the pre-norm transformer block used
// as an oracle: layer_norm -> per-head attention -> residual -> mlp.
Tensord naive_layer_norm(const Tensord& x, const Tensord& g, const Tensord& b) {
  const int n = x.cols(), m = x.rows();
  Tensord out({m, n});
  for (int r = 0; r < m; ++r) {
    double mu = 0, var = 0;
    for (int c = 0; c < n; ++c) mu += x[r * n + c];
    mu /= n;
    for (int c = 0; c < n; ++c) var += (x[r * n + c] - mu) * (x[r * n + c] - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int c = 0; c < n; ++c) out.data()[r * n + c] = (x[r * n + c] - mu) * inv * g[c] + b[c];
  }
  return out;
}

Tensord naive_affine(const Tensord& x, const Tensord& w, const Tensord& b) {
  Tensord y = test::naive_matmul(x, w);
  Tensord out(y.shape());
  for (int r = 0; r < y.rows(); ++r)
    for (int c = 0; c < y.cols(); ++c) out.data()[r * y.cols() + c] = y[r * y.cols() + c] + b[c];
  return out;
}

Tensord naive_mha(const Tensord& x, const ParamSet<double>& ps, const detail::BlockSlots& b,
                  int heads) {
  const int n = x.rows(), d = x.cols(), dh = d / heads;
  Tensord q = naive_affine(x, ps.value(b.wq), ps.value(b.bq));
  Tensord k = naive_affine(x, ps.value(b.wk), ps.value(b.bk));
  Tensord v = naive_affine(x, ps.value(b.wv), ps.value(b.bv));
  Tensord cat({n, d});
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      // attention weights of query i within head h
      std::vector<double> s(static_cast<size_t>(n));
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        s[static_cast<size_t>(j)] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[static_cast<size_t>(j)]);
      }
      double z = 0;
      for (int j = 0; j < n; ++j) {
        s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - mx);
        z += s[static_cast<size_t>(j)];
      }
      for (int c = 0; c < dh; ++c) {
        double acc = 0;
        for (int j = 0; j < n; ++j) acc += s[static_cast<size_t>(j)] / z * v[j * d + h * dh + c];
        cat.data()[i * d + h * dh + c] = acc;
      }
    }
  }
  return naive_affine(cat, ps.value(b.wo), ps.value(b.bo));
}

Tensord naive_block(const Tensord& x, const ParamSet<double>& ps, const detail::BlockSlots& b,
                    int heads) {
  Tensord a = naive_mha(naive_layer_norm(x, ps.value(b.ln1_g), ps.value(b.ln1_b)), ps, b, heads);
  Tensord x1 = add(x, a);
  Tensord h = naive_layer_norm(x1, ps.value(b.ln2_g), ps.value(b.ln2_b));
  h = naive_affine(h, ps.value(b.w1), ps.value(b.b1));
  h = map(h, [](double v) { return v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))); });
  h = naive_affine(h, ps.value(b.w2), ps.value(b.b2));
  return add(x1, h);
}

FusionConfig desk_cfg(int d = 16, int heads = 2, int lf = 2, int lb = 1, int bt = 2) {
  FusionConfig c;
  c.d = d;
  c.heads = heads;
  c.layers_unimodal = lf;
  c.layers_fusion = lb;
  c.bottleneck_tokens = bt;
  return c;
}

template <class T>
FeatureBundle<T> random_bundle(const FeaturizeConfig& f, Rng& rng, T lo = T(-1), T hi = T(1)) {
  FeatureBundle<T> b;
  b.image = random_uniform<T>({f.tokens(Modality::image), f.patch_dim(Modality::image)}, rng, lo, hi);
  b.audio = random_uniform<T>({f.tokens(Modality::audio), f.patch_dim(Modality::audio)}, rng, lo, hi);
  b.imu = random_uniform<T>({f.tokens(Modality::imu), f.patch_dim(Modality::imu)}, rng, lo, hi);
  b.pressure =
      random_uniform<T>({f.tokens(Modality::pressure), f.patch_dim(Modality::pressure)}, rng, lo, hi);
  return b;
}

}  // namespace

TEST_CASE("zero-weight block is the identity (residual path)") {
  ParamSet<double> ps;
  Rng rng(1);
  auto b = detail::build_block(ps, "blk", 8, 32, rng);
  for (int s = 0; s < ps.size(); ++s) ps.set_value(s, Tensord(ps.value(s).shape()));

  Graph<double> g;
  FusionConfig cfg = desk_cfg(8, 2);
  FeaturizeConfig feat;
  ParamSet<double> eps_;
  auto enc = EncoderParams<double>::build(eps_, cfg, feat, Rng(3));
  EncoderForward<double> fwd(g, ps, enc, nullptr);
  Tensord x = random_uniform<double>({5, 8}, rng);
  auto out = fwd.block(g.constant(x), b);
  REQUIRE(max_abs_diff(g.value(out), x) == 0.0);
}

TEST_CASE("one block matches the brute-force per-head oracle") {
  Rng rng(2);
  ParamSet<double> ps;
  auto b = detail::build_block(ps, "blk", 8, 32, rng);

  FusionConfig cfg = desk_cfg(8, 2);
  FeaturizeConfig feat;
  ParamSet<double> scratch;
  auto enc = EncoderParams<double>::build(scratch, cfg, feat, Rng(3));

  Tensord x = random_uniform<double>({3, 8}, rng);
  Graph<double> g;
  EncoderForward<double> fwd(g, ps, enc, nullptr);
  auto out = fwd.block(g.constant(x), b);
  Tensord expect = naive_block(x, ps, b, 2);
  REQUIRE(max_abs_diff(g.value(out), expect) < 1e-10);
}

TEST_CASE("multi-head attention edge cases: single token, duplicate tokens") {
  Rng rng(4);
  ParamSet<double> ps;
  auto b = detail::build_block(ps, "blk", 8, 32, rng);
  FusionConfig cfg = desk_cfg(8, 2);
  FeaturizeConfig feat;
  ParamSet<double> scratch;
  auto enc = EncoderParams<double>::build(scratch, cfg, feat, Rng(3));

  // n=1: attention weight is exactly 1, so output = projected value + residual stack
  Tensord x1 = random_uniform<double>({1, 8}, rng);
  {
    Graph<double> g;
    EncoderForward<double> fwd(g, ps, enc, nullptr);
    auto h = g.layer_norm(g.constant(x1), g.param(ps, b.ln1_g, nullptr),
                          g.param(ps, b.ln1_b, nullptr));
    auto a = fwd.attention(h, b);
    Tensord v = naive_affine(g.value(h), ps.value(b.wv), ps.value(b.bv));
    Tensord expect = naive_affine(v, ps.value(b.wo), ps.value(b.bo));
    REQUIRE(max_abs_diff(g.value(a), expect) < 1e-12);
  }

  // two identical tokens -> identical output rows
  Tensord row = random_uniform<double>({1, 8}, rng);
  std::vector<double> two(row.data(), row.data() + 8);
  two.insert(two.end(), row.data(), row.data() + 8);
  Tensord x2 = Tensord::from({2, 8}, two);
  {
    Graph<double> g;
    EncoderForward<double> fwd(g, ps, enc, nullptr);
    auto out = fwd.block(g.constant(x2), b);
    const Tensord& y = g.value(out);
    for (int c = 0; c < 8; ++c) REQUIRE(y[c] == y[8 + c]);
  }
}

TEST_CASE("config validation rejects d not divisible by heads") {
  FusionConfig cfg = desk_cfg(10, 4);
  REQUIRE_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("no cross-modal flow through unimodal layers") {
  FusionConfig cfg = desk_cfg(16, 2, 2, /*lb=*/0, 0);
  FeaturizeConfig feat;
  ParamSet<float> ps;
  auto enc = EncoderParams<float>::build(ps, cfg, feat, Rng(5));
  Rng rng(6);
  FeatureBundle<float> a = random_bundle<float>(feat, rng);
  FeatureBundle<float> b = a;
  b.audio = random_uniform<float>({feat.tokens(Modality::audio), feat.patch_dim(Modality::audio)},
                                  rng);

  auto ea = encode_frozen(ps, enc, a);
  auto eb = encode_frozen(ps, enc, b);
  REQUIRE(max_abs_diff(ea.tokens[0], eb.tokens[0]) == 0.0f);  // image untouched
  REQUIRE(max_abs_diff(ea.tokens[2], eb.tokens[2]) == 0.0f);  // imu untouched
  REQUIRE(max_abs_diff(ea.tokens[1], eb.tokens[1]) > 0.0f);   // audio changed
}

TEST_CASE("bottleneck fusion: cross-modal influence and averaging law") {
  FusionConfig cfg = desk_cfg(16, 2, 1, 2, 2);
  FeaturizeConfig feat;
  ParamSet<float> ps;
  auto enc = EncoderParams<float>::build(ps, cfg, feat, Rng(7));
  Rng rng(8);
  FeatureBundle<float> a = random_bundle<float>(feat, rng);
  FeatureBundle<float> b = a;
  b.audio = random_uniform<float>({feat.tokens(Modality::audio), feat.patch_dim(Modality::audio)},
                                  rng);

  Graph<float> g;
  EncoderForward<float> fwd(g, ps, enc, nullptr);
  auto e = fwd.encode(a);

  // averaging law: stored bottleneck equals the recomputed branch mean
  Tensorf mean(g.value(e.branch_bottleneck[0]).shape());
  for (auto br : e.branch_bottleneck) mean = add(mean, g.value(br));
  mean = scale(mean, 1.0f / e.branch_bottleneck.size());
  REQUIRE(max_abs_diff(mean, g.value(e.bottleneck_raw)) < 1e-12f);

  // with fusion layers present, audio perturbations reach the image branch
  auto ea = encode_frozen(ps, enc, a);
  auto eb = encode_frozen(ps, enc, b);
  REQUIRE(max_abs_diff(ea.tokens[0], eb.tokens[0]) > 0.0f);
}

TEST_CASE("fusion step: symmetry under shared weights and single-branch identity") {
  FusionConfig cfg = desk_cfg(8, 2, 1, 1, 1);
  cfg.share_fusion_weights = true;
  cfg.modalities = {Modality::imu, Modality::pressure};
  FeaturizeConfig feat;
  ParamSet<double> ps;
  auto enc = EncoderParams<double>::build(ps, cfg, feat, Rng(9));
  Rng rng(10);

  Graph<double> g;
  EncoderForward<double> fwd(g, ps, enc, nullptr);
  Tensord x = random_uniform<double>({4, 8}, rng);
  Tensord bn = random_uniform<double>({1, 8}, rng);
  std::vector<Graph<double>::Val> toks{g.constant(x), g.constant(x)};
  std::vector<Graph<double>::Val> branches;
  auto [nt, nbn] = fwd.fusion_block(toks, g.constant(bn), 1, &branches);

  // identical tokens + shared weights -> identical candidates equal to the mean
  REQUIRE(max_abs_diff(g.value(branches[0]), g.value(branches[1])) == 0.0);
  REQUIRE(max_abs_diff(g.value(branches[0]), g.value(nbn)) == 0.0);
  REQUIRE(max_abs_diff(g.value(nt[0]), g.value(nt[1])) == 0.0);

  // hand-rolled oracle: explicit concat -> block -> split -> mean
  const auto& blk = enc.mods[0].blocks[1];
  std::vector<Tensord> cat_parts{x, bn};
  Tensord expect_full = naive_block(concat_rows(std::span<const Tensord>(cat_parts)), ps, blk, 2);
  Tensord expect_tok = slice_rows(expect_full, 0, 4);
  Tensord expect_bn = slice_rows(expect_full, 4, 5);
  REQUIRE(max_abs_diff(g.value(nt[0]), expect_tok) < 1e-10);
  REQUIRE(max_abs_diff(g.value(nbn), expect_bn) < 1e-10);
}

TEST_CASE("encode output shapes and determinism at a small config") {
  FusionConfig cfg = desk_cfg(16, 4, 2, 1, 2);
  FeaturizeConfig feat;
  ParamSet<float> ps1, ps2;
  auto enc1 = EncoderParams<float>::build(ps1, cfg, feat, Rng(42));
  auto enc2 = EncoderParams<float>::build(ps2, cfg, feat, Rng(42));
  Rng rng(11);
  FeatureBundle<float> bundle = random_bundle<float>(feat, rng);

  auto a = encode_frozen(ps1, enc1, bundle);
  auto b = encode_frozen(ps2, enc2, bundle);
  REQUIRE(a.tokens[0].shape() == std::vector<int>{197, 16});
  REQUIRE(a.tokens[1].shape() == std::vector<int>{225, 16});
  REQUIRE(a.tokens[2].shape() == std::vector<int>{15, 16});
  REQUIRE(a.tokens[3].shape() == std::vector<int>{15, 16});
  REQUIRE(a.bottleneck.shape() == std::vector<int>{2, 16});
  for (size_t m = 0; m < 4; ++m) REQUIRE(max_abs_diff(a.tokens[m], b.tokens[m]) == 0.0f);
  REQUIRE(max_abs_diff(a.bottleneck, b.bottleneck) == 0.0f);

  // missing modality input -> config error
  FeatureBundle<float> missing = bundle;
  missing.audio = Tensorf();
  REQUIRE_THROWS_AS(encode_frozen(ps1, enc1, missing), Error);
}

TEST_CASE("masked tokenization preserves original position embeddings") {
  FusionConfig cfg = desk_cfg(16, 2, 1, 0, 0);
  FeaturizeConfig feat;
  ParamSet<float> ps;
  auto enc = EncoderParams<float>::build(ps, cfg, feat, Rng(12));
  Rng rng(13);
  FeatureBundle<float> bundle = random_bundle<float>(feat, rng);

  Graph<float> g;
  EncoderForward<float> fwd(g, ps, enc, nullptr);
  auto full = fwd.tokenize(0, bundle.image, nullptr);
  std::vector<int> retained{3, 17, 101};
  auto masked = fwd.tokenize(0, bundle.image, &retained);
  const Tensorf& fv = g.value(full);
  const Tensorf& mv = g.value(masked);
  REQUIRE(mv.rows() == 4);  // register + 3 retained
  for (int c = 0; c < 16; ++c) {
    REQUIRE(mv[c] == fv[c]);                                  // register row
    REQUIRE(mv[1 * 16 + c] == fv[(3 + 1) * 16 + c]);          // token 3
    REQUIRE(mv[2 * 16 + c] == fv[(17 + 1) * 16 + c]);         // token 17
    REQUIRE(mv[3 * 16 + c] == fv[(101 + 1) * 16 + c]);        // token 101
  }
}

TEST_CASE("zero window with zero projection makes tokens = position + type embeddings") {
  FusionConfig cfg = desk_cfg(16, 2, 1, 0, 0);
  FeaturizeConfig feat;
  ParamSet<float> ps;
  auto enc = EncoderParams<float>::build(ps, cfg, feat, Rng(14));
  // zero the projection bias and give the type embedding a recognizable value
  ps.set_value(enc.mods[0].proj_b, Tensorf({1, 16}));
  ps.set_value(enc.mods[0].type_emb, Tensorf::full({1, 16}, 0.25f));

  Graph<float> g;
  EncoderForward<float> fwd(g, ps, enc, nullptr);
  Tensorf zero_window({196, 1536});
  auto tok = fwd.tokenize(0, zero_window, nullptr);
  const Tensorf& tv = g.value(tok);
  const Tensorf& pos = enc.pos[0];
  for (int r = 1; r < 197; ++r)
    for (int c = 0; c < 16; ++c)
      REQUIRE(tv[r * 16 + c] == pos[r * 16 + c] + 0.25f);
}

TEST_CASE("desk-config encoder gradient-checks against central differences") {
  FusionConfig cfg = desk_cfg(8, 2, 1, 1, 1);
  cfg.modalities = {Modality::imu, Modality::pressure};
  FeaturizeConfig feat;
  ParamSet<double> ps;
  auto enc = EncoderParams<double>::build(ps, cfg, feat, Rng(15));
  Rng rng(16);
  FeatureBundle<double> bundle;
  bundle.imu = random_uniform<double>({14, 48}, rng);
  bundle.pressure = random_uniform<double>({14, 16}, rng);

  auto build = [&](Graph<double>& g, GradStore<double>* sink) {
    EncoderForward<double> fwd(g, ps, enc, sink);
    auto e = fwd.encode(bundle);
    auto pooled = g.mean_all(g.concat_rows(e.tokens));
    return g.average(std::vector<Graph<double>::Val>{pooled, g.mean_all(e.bottleneck)});
  };
  auto res = test::grad_check<double>(ps, build, rng, 60);
  INFO("max rel err " << res.max_rel_err);
  REQUIRE(res.max_rel_err < 1e-4);
}
