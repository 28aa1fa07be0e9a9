// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tfuse/autodiff.hpp"
#include "tfuse/featurize.hpp"

namespace tfuse {

/// Encoder architecture: L_f unimodal self-attention layers per modality,
/// then L_b fusion layers where B shared bottleneck tokens are concatenated
/// to every modality and re-averaged across modalities after each layer.
struct FusionConfig {
  int d = 768;
  int heads = 12;
  int layers_unimodal = 8;    // L_f
  int layers_fusion = 4;      // L_b
  int bottleneck_tokens = 4;  // B
  int mlp_ratio = 4;
  bool share_fusion_weights = false;  // per-modality fusion blocks by default
  std::vector<Modality> modalities{Modality::image, Modality::audio, Modality::imu,
                                   Modality::pressure};

  int layers() const { return layers_unimodal + layers_fusion; }

  void validate() const {
    check(d > 0 && heads > 0 && d % heads == 0, Errc::config,
          "fusion: d must be divisible by heads");
    check(layers_unimodal >= 0 && layers_fusion >= 0, Errc::config, "fusion: bad layer counts");
    check(layers_fusion == 0 || bottleneck_tokens >= 1, Errc::config,
          "fusion: need at least one bottleneck token");
    check(!modalities.empty(), Errc::config, "fusion: no modalities configured");
  }
};

/// Fixed sinusoidal position table [n x d].
template <class T>
Tensor<T> sinusoidal_positions(int n, int d) {
  Tensor<T> out({n, d});
  T* o = out.data();
  for (int p = 0; p < n; ++p)
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / d);
      const double a = p / rate;
      o[static_cast<int64_t>(p) * d + i] = static_cast<T>((i % 2 == 0) ? std::sin(a) : std::cos(a));
    }
  return out;
}

namespace detail {

struct BlockSlots {
  int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <class T>
BlockSlots build_block(ParamSet<T>& ps, const std::string& prefix, int d, int hidden,
                       Rng& rng) {
  const T sigma = T(0.02);
  BlockSlots b;
  b.ln1_g = ps.add(prefix + "/ln1_g", Tensor<T>::full({d}, T(1)));
  b.ln1_b = ps.add(prefix + "/ln1_b", Tensor<T>({d}));
  b.wq = ps.add(prefix + "/wq", trunc_normal_init<T>({d, d}, rng, sigma));
  b.bq = ps.add(prefix + "/bq", Tensor<T>({1, d}));
  b.wk = ps.add(prefix + "/wk", trunc_normal_init<T>({d, d}, rng, sigma));
  b.bk = ps.add(prefix + "/bk", Tensor<T>({1, d}));
  b.wv = ps.add(prefix + "/wv", trunc_normal_init<T>({d, d}, rng, sigma));
  b.bv = ps.add(prefix + "/bv", Tensor<T>({1, d}));
  b.wo = ps.add(prefix + "/wo", trunc_normal_init<T>({d, d}, rng, sigma));
  b.bo = ps.add(prefix + "/bo", Tensor<T>({1, d}));
  b.ln2_g = ps.add(prefix + "/ln2_g", Tensor<T>::full({d}, T(1)));
  b.ln2_b = ps.add(prefix + "/ln2_b", Tensor<T>({d}));
  b.w1 = ps.add(prefix + "/w1", trunc_normal_init<T>({d, hidden}, rng, sigma));
  b.b1 = ps.add(prefix + "/b1", Tensor<T>({1, hidden}));
  b.w2 = ps.add(prefix + "/w2", trunc_normal_init<T>({hidden, d}, rng, sigma));
  b.b2 = ps.add(prefix + "/b2", Tensor<T>({1, d}));
  return b;
}

}  // namespace detail

/// Slot layout of one encoder inside a ParamSet, plus constant position tables.
template <class T>
struct EncoderParams {
  FusionConfig cfg;
  FeaturizeConfig feat;

  struct ModalitySlots {
    Modality modality;
    int proj_w, proj_b, reg, type_emb;
    std::vector<detail::BlockSlots> blocks;  // length L
  };
  std::vector<ModalitySlots> mods;
  int bottleneck = -1;
  int final_g = -1, final_b = -1;
  std::vector<Tensor<T>> pos;  // per modality, [(1+N) x d]
  int64_t value_count = 0;

  static EncoderParams build(ParamSet<T>& ps, const FusionConfig& cfg,
                             const FeaturizeConfig& feat, Rng rng,
                             const std::string& prefix = "enc") {
    cfg.validate();
    EncoderParams e;
    e.cfg = cfg;
    e.feat = feat;
    const int64_t before = ps.total_values();
    const int hidden = cfg.d * cfg.mlp_ratio;
    const T sigma = T(0.02);

    std::vector<detail::BlockSlots> shared;
    if (cfg.share_fusion_weights) {
      for (int l = cfg.layers_unimodal; l < cfg.layers(); ++l)
        shared.push_back(detail::build_block(
            ps, prefix + "/shared/block" + std::to_string(l), cfg.d, hidden, rng));
    }

    for (Modality m : cfg.modalities) {
      ModalitySlots ms;
      ms.modality = m;
      const std::string mp = prefix + "/" + modality_name(m);
      ms.proj_w = ps.add(mp + "/tok/w",
                         trunc_normal_init<T>({feat.patch_dim(m), cfg.d}, rng, sigma));
      ms.proj_b = ps.add(mp + "/tok/b", Tensor<T>({1, cfg.d}));
      ms.reg = ps.add(mp + "/tok/register", trunc_normal_init<T>({1, cfg.d}, rng, sigma));
      // zero-initialized so the modality tag cannot hurt at start
      ms.type_emb = ps.add(mp + "/tok/type", Tensor<T>({1, cfg.d}));
      for (int l = 0; l < cfg.layers(); ++l) {
        if (l >= cfg.layers_unimodal && cfg.share_fusion_weights) {
          ms.blocks.push_back(shared[static_cast<size_t>(l - cfg.layers_unimodal)]);
        } else {
          ms.blocks.push_back(detail::build_block(
              ps, mp + "/block" + std::to_string(l), cfg.d, hidden, rng));
        }
      }
      e.mods.push_back(std::move(ms));
      e.pos.push_back(sinusoidal_positions<T>(1 + feat.tokens(m), cfg.d));
    }
    if (cfg.layers_fusion > 0)
      e.bottleneck = ps.add(prefix + "/bottleneck",
                            trunc_normal_init<T>({cfg.bottleneck_tokens, cfg.d}, rng, sigma));
    e.final_g = ps.add(prefix + "/final_ln/g", Tensor<T>::full({cfg.d}, T(1)));
    e.final_b = ps.add(prefix + "/final_ln/b", Tensor<T>({cfg.d}));
    e.value_count = ps.total_values() - before;
    return e;
  }

  int modality_index(Modality m) const {
    for (size_t i = 0; i < mods.size(); ++i)
      if (mods[i].modality == m) return static_cast<int>(i);
    return -1;
  }
};

/// Retained patch-token indices (register excluded, always kept) per modality.
struct MaskSpec {
  bool global = true;
  std::vector<std::vector<int>> retained;  // aligned with cfg.modalities
  std::vector<double> fractions;
};

template <class T>
class EncoderForward {
 public:
  using Val = typename Graph<T>::Val;

  struct Encoded {
    std::vector<Val> tokens;            // per modality, [(1+n_kept) x d]
    Val bottleneck = -1;                // post final-norm summary tokens
    Val bottleneck_raw = -1;            // as averaged in the last fusion layer
    std::vector<Val> branch_bottleneck; // per-modality candidates of that layer
  };

  EncoderForward(Graph<T>& g, const ParamSet<T>& ps, const EncoderParams<T>& enc,
                 GradStore<T>* sink)
      : g_(g), ps_(ps), enc_(enc), sink_(sink) {}

  Val p(int slot) const { return g_.param(ps_, slot, sink_); }

  Val affine(Val x, int w, int b) const { return g_.add(g_.matmul(x, p(w)), p(b)); }

  Val attention(Val x, const detail::BlockSlots& b) const {
    const int d = enc_.cfg.d;
    const int heads = enc_.cfg.heads;
    const int dh = d / heads;
    Val q = affine(x, b.wq, b.bq);
    Val k = affine(x, b.wk, b.bk);
    Val v = affine(x, b.wv, b.bv);
    std::vector<Val> out;
    out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Val qh = g_.slice_cols(q, h * dh, (h + 1) * dh);
      Val kh = g_.slice_cols(k, h * dh, (h + 1) * dh);
      Val vh = g_.slice_cols(v, h * dh, (h + 1) * dh);
      Val scores = g_.scale(g_.matmul_nt(qh, kh), T(1) / std::sqrt(static_cast<T>(dh)));
      out.push_back(g_.matmul(g_.softmax(scores, T(1)), vh));
    }
    return affine(g_.concat_cols(out), b.wo, b.bo);
  }

  /// Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x)).
  Val block(Val x, const detail::BlockSlots& b) const {
    x = g_.add(x, attention(g_.layer_norm(x, p(b.ln1_g), p(b.ln1_b)), b));
    Val h = g_.layer_norm(x, p(b.ln2_g), p(b.ln2_b));
    h = g_.add(g_.matmul(g_.gelu(affine(h, b.w1, b.b1)), p(b.w2)), p(b.b2));
    return g_.add(x, h);
  }

  /// Patch projection + register + sinusoidal position + modality type.
  /// Masking keeps the register and drops non-retained patch rows while their
  /// position embeddings keep the original indices.
  Val tokenize(int mod_idx, const Tensor<T>& patches, const std::vector<int>* retained) const {
    const auto& ms = enc_.mods[static_cast<size_t>(mod_idx)];
    check(!patches.empty(), Errc::config,
          std::string("encode: modality missing from input: ") +
              modality_name(ms.modality));
    check(patches.rows() == enc_.feat.tokens(ms.modality) &&
              patches.cols() == enc_.feat.patch_dim(ms.modality),
          Errc::shape, std::string("tokenize: bad window shape for ") +
                           modality_name(ms.modality) + " " + patches.shape_str());
    Val x = affine(g_.constant(patches), ms.proj_w, ms.proj_b);
    std::vector<Val> rows{p(ms.reg), x};
    x = g_.concat_rows(rows);
    x = g_.add(x, g_.constant(enc_.pos[static_cast<size_t>(mod_idx)]));
    x = g_.add(x, p(ms.type_emb));
    if (retained != nullptr) {
      std::vector<int> keep{0};
      keep.reserve(retained->size() + 1);
      for (int i : *retained) keep.push_back(i + 1);
      x = g_.select_rows(x, std::move(keep));
    }
    return x;
  }

  Val unimodal_block(Val tokens, int mod_idx, int layer) const {
    return block(tokens, enc_.mods[static_cast<size_t>(mod_idx)].blocks[static_cast<size_t>(layer)]);
  }

  /// One fusion layer: each modality attends over [tokens ; bottleneck] with
  /// its own block, candidates are averaged into the shared bottleneck.
  std::pair<std::vector<Val>, Val> fusion_block(const std::vector<Val>& tokens, Val bottleneck,
                                                int layer, std::vector<Val>* branches) const {
    const int b_rows = enc_.cfg.bottleneck_tokens;
    std::vector<Val> new_tokens(tokens.size());
    std::vector<Val> cands(tokens.size());
    for (size_t m = 0; m < tokens.size(); ++m) {
      const int n = g_.value(tokens[m]).rows();
      std::vector<Val> cat{tokens[m], bottleneck};
      Val out = block(g_.concat_rows(cat), enc_.mods[m].blocks[static_cast<size_t>(layer)]);
      new_tokens[m] = g_.slice_rows(out, 0, n);
      cands[m] = g_.slice_rows(out, n, n + b_rows);
    }
    Val avg = g_.average(cands);
    if (branches != nullptr) *branches = std::move(cands);
    return {std::move(new_tokens), avg};
  }

  Encoded encode(const FeatureBundle<T>& bundle, const MaskSpec* mask = nullptr) const {
    const auto& cfg = enc_.cfg;
    Encoded out;
    std::vector<Val> xs;
    for (size_t m = 0; m < enc_.mods.size(); ++m) {
      const std::vector<int>* retained =
          (mask != nullptr) ? &mask->retained[m] : nullptr;
      Val x = tokenize(static_cast<int>(m), bundle.of(enc_.mods[m].modality), retained);
      for (int l = 0; l < cfg.layers_unimodal; ++l) x = unimodal_block(x, static_cast<int>(m), l);
      xs.push_back(x);
    }
    Val bn = -1;
    if (cfg.layers_fusion > 0) {
      bn = p(enc_.bottleneck);
      for (int l = cfg.layers_unimodal; l < cfg.layers(); ++l) {
        const bool last = (l == cfg.layers() - 1);
        auto [nx, nbn] = fusion_block(xs, bn, l, last ? &out.branch_bottleneck : nullptr);
        xs = std::move(nx);
        bn = nbn;
      }
      out.bottleneck_raw = bn;
    }
    for (auto& x : xs) x = g_.layer_norm(x, p(enc_.final_g), p(enc_.final_b));
    if (bn >= 0) out.bottleneck = g_.layer_norm(bn, p(enc_.final_g), p(enc_.final_b));
    out.tokens = std::move(xs);
    return out;
  }

 private:
  Graph<T>& g_;
  const ParamSet<T>& ps_;
  const EncoderParams<T>& enc_;
  GradStore<T>* sink_;
};

/// Convenience: frozen forward, plain tensors out.
template <class T>
struct EncodedTensors {
  std::vector<Tensor<T>> tokens;
  Tensor<T> bottleneck;

  /// All output rows stacked: per-modality tokens then bottleneck rows.
  Tensor<T> all_rows() const {
    std::vector<Tensor<T>> parts = tokens;
    if (!bottleneck.empty()) parts.push_back(bottleneck);
    return concat_rows(std::span<const Tensor<T>>(parts));
  }
};

template <class T>
EncodedTensors<T> encode_frozen(const ParamSet<T>& ps, const EncoderParams<T>& enc,
                                const FeatureBundle<T>& bundle) {
  Graph<T> g;
  EncoderForward<T> fwd(g, ps, enc, nullptr);
  auto e = fwd.encode(bundle);
  EncodedTensors<T> out;
  for (auto v : e.tokens) out.tokens.push_back(g.value(v));
  if (e.bottleneck >= 0) out.bottleneck = g.value(e.bottleneck);
  return out;
}

}  // namespace tfuse
