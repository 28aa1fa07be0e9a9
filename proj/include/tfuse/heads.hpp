// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfuse/distill.hpp"
#include "tfuse/fusion.hpp"
#include "tfuse/optim.hpp"
#include "tfuse/synthdata.hpp"

namespace tfuse {

enum class ProbeMode { frozen_pretrained, frozen_random, e2e };

inline const char* probe_mode_name(ProbeMode m) {
  switch (m) {
    case ProbeMode::frozen_pretrained: return "frozen_pretrained";
    case ProbeMode::frozen_random: return "frozen_random";
    case ProbeMode::e2e: return "e2e";
  }
  return "?";
}

inline ProbeMode probe_mode_from_name(const std::string& s) {
  if (s == "frozen_pretrained") return ProbeMode::frozen_pretrained;
  if (s == "frozen_random") return ProbeMode::frozen_random;
  if (s == "e2e") return ProbeMode::e2e;
  fail(Errc::usage, "unknown probe mode: " + s);
}

struct ProbeConfig {
  TaskFamily task = TaskFamily::material_quantity;
  ProbeMode mode = ProbeMode::frozen_pretrained;
  std::vector<Modality> modalities{Modality::image, Modality::audio, Modality::imu,
                                   Modality::pressure};
  double label_budget = 1.0;  // fraction of train labels used
  int decoder_hidden = 128;
  int epochs = 30;
  int batch = 16;
  double lr = 2e-3;
  int lr_warmup = 20;
  double weight_decay = 0.01;
  int samples_per_event = 2;
  uint64_t seed = 0;

  int classes() const { return task == TaskFamily::force ? 1 : class_count(task); }
  bool regression() const { return task == TaskFamily::force; }
};

/// Single learned-query cross-attention plus a two-layer decoder MLP.
template <class T>
struct PoolerSlots {
  int q, wk, bk, wv, bv, w1, b1, w2, b2;

  static PoolerSlots build(ParamSet<T>& ps, int d, int hidden, int out_dim, Rng rng,
                           const std::string& prefix = "probe") {
    const T sigma = T(0.02);
    PoolerSlots p;
    p.q = ps.add(prefix + "/q", trunc_normal_init<T>({1, d}, rng, sigma));
    p.wk = ps.add(prefix + "/wk", trunc_normal_init<T>({d, d}, rng, sigma));
    p.bk = ps.add(prefix + "/bk", Tensor<T>({1, d}));
    p.wv = ps.add(prefix + "/wv", trunc_normal_init<T>({d, d}, rng, sigma));
    p.bv = ps.add(prefix + "/bv", Tensor<T>({1, d}));
    p.w1 = ps.add(prefix + "/w1", trunc_normal_init<T>({d, hidden}, rng, sigma));
    p.b1 = ps.add(prefix + "/b1", Tensor<T>({1, hidden}));
    p.w2 = ps.add(prefix + "/w2", trunc_normal_init<T>({hidden, out_dim}, rng, sigma));
    p.b2 = ps.add(prefix + "/b2", Tensor<T>({1, out_dim}));
    return p;
  }
};

/// softmax(q K^T / sqrt(d)) V over the token rows -> [1 x d].
template <class T>
typename Graph<T>::Val attentive_pool(Graph<T>& g, const ParamSet<T>& ps,
                                      const PoolerSlots<T>& p, typename Graph<T>::Val tokens,
                                      GradStore<T>* sink) {
  auto par = [&](int slot) { return g.param(ps, slot, sink); };
  const int d = g.value(tokens).cols();
  auto k = g.add(g.matmul(tokens, par(p.wk)), par(p.bk));
  auto v = g.add(g.matmul(tokens, par(p.wv)), par(p.bv));
  auto scores = g.scale(g.matmul_nt(par(p.q), k), T(1) / std::sqrt(static_cast<T>(d)));
  return g.matmul(g.softmax(scores, T(1)), v);
}

template <class T>
typename Graph<T>::Val probe_logits(Graph<T>& g, const ParamSet<T>& ps,
                                    const PoolerSlots<T>& p, typename Graph<T>::Val tokens,
                                    GradStore<T>* sink) {
  auto par = [&](int slot) { return g.param(ps, slot, sink); };
  auto pooled = attentive_pool(g, ps, p, tokens, sink);
  auto h = g.gelu(g.add(g.matmul(pooled, par(p.w1)), par(p.b1)));
  return g.add(g.matmul(h, par(p.w2)), par(p.b2));
}

// ---------------------------------------------------------------------------
// probe datasets

template <class T>
struct ProbeSample {
  FeatureBundle<T> bundle;  // retained for e2e; frozen modes use features
  Tensor<T> features;       // encoded token rows (frozen modes)
  int label = 0;
  double target = 0;        // regression
  bool test_split = false;
};

template <class T>
using ProbeDataset = std::vector<ProbeSample<T>>;

/// Featurize every event at samples_per_event reference times.
template <class T>
ProbeDataset<T> build_probe_dataset(const DatasetManifest& m, const FeaturizeConfig& feat,
                                    int samples_per_event) {
  ProbeDataset<T> out;
  const Tensor<T> fb = mel_filterbank<T>(feat);
  for (size_t i = 0; i < m.events.size(); ++i) {
    RawEvent e = load_event(m, i);
    SeqStats stats = event_stats(e);
    SensorStreams streams;
    feed(streams, e);
    for (double ref : reference_times(m.cfg, samples_per_event)) {
      SyncedSample ss = sync_at(streams, ref, feat.window_spec());
      ProbeSample<T> ps;
      ps.bundle = featurize_sample<T>(ss, feat, &stats, &fb);
      ps.label = m.events[i].scenario.label();
      ps.target = m.events[i].scenario.force_peak;
      ps.test_split = m.events[i].test_split;
      out.push_back(std::move(ps));
    }
  }
  return out;
}

/// Freeze encoder outputs into each sample's `features`.
template <class T>
void cache_encoded(ProbeDataset<T>& data, const ParamSet<T>& enc_ps,
                   const EncoderParams<T>& enc) {
  for (auto& s : data) s.features = encode_frozen(enc_ps, enc, s.bundle).all_rows();
}

/// Restrict an encoder's slot map to a modality subset (same ParamSet).
template <class T>
EncoderParams<T> subset_view(const EncoderParams<T>& enc, const std::vector<Modality>& mods) {
  EncoderParams<T> out = enc;
  out.cfg.modalities = mods;
  out.mods.clear();
  out.pos.clear();
  for (Modality m : mods) {
    const int idx = enc.modality_index(m);
    check(idx >= 0, Errc::config, "subset_view: encoder lacks modality");
    out.mods.push_back(enc.mods[static_cast<size_t>(idx)]);
    out.pos.push_back(enc.pos[static_cast<size_t>(idx)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics

struct ProbeMetrics {
  std::string task, mode;
  std::vector<std::string> modalities;
  double budget = 1.0;
  uint64_t seed = 0;
  double accuracy = 0;
  double mae = 0;
  int n_train = 0, n_test = 0;
  std::vector<std::vector<int>> confusion;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["mode"] = mode;
    j["modalities"] = modalities;
    j["budget"] = budget;
    j["seed"] = seed;
    j["n_train"] = n_train;
    j["n_test"] = n_test;
    if (confusion.empty()) {
      j["mae"] = mae;
    } else {
      j["accuracy"] = accuracy;
      j["confusion"] = confusion;
    }
    return j;
  }
};

/// Accuracy and confusion matrix (classification) or MAE (regression) of a
/// set of predictions.
inline ProbeMetrics evaluate_predictions(const std::vector<int>& pred,
                                         const std::vector<int>& truth, int classes) {
  check(!pred.empty() && pred.size() == truth.size(), Errc::usage,
        "evaluate: empty or mismatched split");
  ProbeMetrics m;
  m.n_test = static_cast<int>(pred.size());
  m.confusion.assign(static_cast<size_t>(classes), std::vector<int>(static_cast<size_t>(classes), 0));
  int correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    m.confusion[static_cast<size_t>(truth[i])][static_cast<size_t>(pred[i])]++;
    correct += (pred[i] == truth[i]) ? 1 : 0;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  return m;
}

// ---------------------------------------------------------------------------
// training

/// Deterministic per-class label-budget subsample of the train split.
template <class T>
std::vector<int> budget_train_indices(const ProbeDataset<T>& data, double budget,
                                      uint64_t seed, bool classification) {
  std::vector<int> train;
  for (size_t i = 0; i < data.size(); ++i)
    if (!data[i].test_split) train.push_back(static_cast<int>(i));
  if (budget >= 1.0) return train;
  Rng rng(splitmix64(seed ^ 0xb0d9e7u));
  std::vector<int> keep;
  if (classification) {
    std::map<int, std::vector<int>> per_class;
    for (int i : train) per_class[data[static_cast<size_t>(i)].label].push_back(i);
    for (auto& [cls, idx] : per_class) {
      const int k = std::max(1, static_cast<int>(std::round(budget * idx.size())));
      for (int i = 0; i < k; ++i)
        std::swap(idx[static_cast<size_t>(i)],
                  idx[static_cast<size_t>(i + rng.uniform_int(static_cast<int>(idx.size()) - i))]);
      keep.insert(keep.end(), idx.begin(), idx.begin() + k);
    }
  } else {
    const int k = std::max(1, static_cast<int>(std::round(budget * train.size())));
    for (int i = 0; i < k; ++i)
      std::swap(train[static_cast<size_t>(i)],
                train[static_cast<size_t>(i + rng.uniform_int(static_cast<int>(train.size()) - i))]);
    keep.assign(train.begin(), train.begin() + k);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Train the attentive probe. Frozen modes consume cached features (pass the
/// encoder only to verify the freeze contract upstream); e2e trains a fresh
/// encoder jointly on the configured modality subset.
template <class T>
ProbeMetrics train_probe(ProbeDataset<T>& data, const ProbeConfig& cfg,
                         const ParamSet<T>* frozen_ps, const EncoderParams<T>* frozen_enc,
                         const FeaturizeConfig& feat) {
  check(!data.empty(), Errc::usage, "train_probe: empty dataset");
  const bool e2e = cfg.mode == ProbeMode::e2e;
  const int out_dim = cfg.regression() ? 1 : cfg.classes();

  ParamSet<T> ps;
  std::optional<EncoderParams<T>> own_enc;
  if (e2e) {
    FusionConfig fc;
    if (frozen_enc != nullptr) fc = frozen_enc->cfg;  // same architecture, fresh weights
    fc.modalities = cfg.modalities;
    own_enc = EncoderParams<T>::build(ps, fc, feat, Rng(cfg.seed).fork("e2e_enc"));
  } else {
    check(frozen_ps != nullptr && frozen_enc != nullptr, Errc::usage,
          "frozen probe needs an encoder");
  }
  const int d = e2e ? own_enc->cfg.d : frozen_enc->cfg.d;
  PoolerSlots<T> pooler =
      PoolerSlots<T>::build(ps, d, cfg.decoder_hidden, out_dim, Rng(cfg.seed).fork("pooler"));

  std::vector<int> train =
      budget_train_indices(data, cfg.label_budget, cfg.seed, !cfg.regression());
  check(!train.empty(), Errc::usage, "train_probe: no training labels under budget");

  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay}, ps);
  const int steps_per_epoch =
      (static_cast<int>(train.size()) + cfg.batch - 1) / cfg.batch;
  LrSchedule sched{cfg.lr, cfg.lr_warmup, cfg.epochs * steps_per_epoch, 0.01};

  EncoderParams<T> frozen_subset;
  if (!e2e) frozen_subset = subset_view(*frozen_enc, cfg.modalities);

  auto forward = [&](Graph<T>& g, const ProbeSample<T>& s,
                     GradStore<T>* sink) -> typename Graph<T>::Val {
    typename Graph<T>::Val tokens;
    if (e2e) {
      EncoderForward<T> fwd(g, ps, *own_enc, sink);
      auto enc = fwd.encode(s.bundle);
      std::vector<typename Graph<T>::Val> rows = enc.tokens;
      if (enc.bottleneck >= 0) rows.push_back(enc.bottleneck);
      tokens = g.concat_rows(rows);
    } else {
      tokens = g.constant(s.features);
    }
    return probe_logits(g, ps, pooler, tokens, sink);
  };

  Rng order_root(splitmix64(cfg.seed ^ 0x5eed));
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train;
    Rng erng = order_root.fork("epoch", static_cast<uint64_t>(epoch));
    for (size_t i = 0; i + 1 < order.size(); ++i)
      std::swap(order[i], order[static_cast<size_t>(
                              static_cast<int>(i) +
                              erng.uniform_int(static_cast<int>(order.size() - i)))]);
    for (int b0 = 0; b0 < static_cast<int>(order.size()); b0 += cfg.batch) {
      const int b1 = std::min<int>(b0 + cfg.batch, static_cast<int>(order.size()));
      GradStore<T> grads(ps);
      const T inv = T(1) / static_cast<T>(b1 - b0);
      for (int i = b0; i < b1; ++i) {
        const ProbeSample<T>& s = data[static_cast<size_t>(order[static_cast<size_t>(i)])];
        Graph<T> g;
        auto logits = forward(g, s, &grads);
        typename Graph<T>::Val loss;
        if (cfg.regression()) {
          auto diff = g.sub(logits, g.constant(Tensor<T>::scalar(static_cast<T>(s.target))));
          loss = g.mean_all(g.mul(diff, diff));
        } else {
          Tensor<T> onehot({1, out_dim});
          onehot.data()[s.label] = T(1);
          loss = g.scale(g.sum_all(g.mul(g.constant(onehot), g.log_softmax(logits, T(1)))),
                         T(-1));
        }
        check(std::isfinite(g.scalar(loss)), Errc::numeric, "probe: NaN loss");
        g.backward(loss, inv);
      }
      ++step;
      opt.step(ps, grads, sched.at(step));
    }
  }

  // evaluation on the held-out split
  std::vector<int> pred, truth;
  double abs_err = 0;
  int n_test = 0;
  for (const auto& s : data) {
    if (!s.test_split) continue;
    Graph<T> g;
    auto logits = forward(g, s, nullptr);
    const Tensor<T>& lv = g.value(logits);
    if (cfg.regression()) {
      abs_err += std::abs(static_cast<double>(lv[0]) - s.target);
    } else {
      int arg = 0;
      for (int c = 1; c < out_dim; ++c)
        if (lv[c] > lv[arg]) arg = c;
      pred.push_back(arg);
      truth.push_back(s.label);
    }
    ++n_test;
  }
  check(n_test > 0, Errc::usage, "train_probe: empty evaluation split");

  ProbeMetrics m;
  if (cfg.regression()) {
    m.mae = abs_err / n_test;
    m.n_test = n_test;
  } else {
    m = evaluate_predictions(pred, truth, out_dim);
  }
  m.task = task_name(cfg.task);
  m.mode = probe_mode_name(cfg.mode);
  for (Modality mod : cfg.modalities) m.modalities.push_back(modality_name(mod));
  m.budget = cfg.label_budget;
  m.seed = cfg.seed;
  m.n_train = static_cast<int>(train.size());
  return m;
}

}  // namespace tfuse
