// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tfuse/fusion.hpp"
#include "tfuse/optim.hpp"

namespace tfuse {

struct DistillConfig {
  int prototypes = 1024;  // K
  int head_hidden = 2048;
  int head_bottleneck = 256;

  double student_temp = 0.1;
  double teacher_temp_start = 0.04;
  double teacher_temp_end = 0.07;
  int teacher_temp_warmup = 50;

  double center_momentum = 0.9;
  double teacher_momentum_start = 0.996;
  double teacher_momentum_end = 1.0;

  int n_global = 2;
  int n_local = 4;
  double local_lo = 0.10, local_hi = 0.50;
  double global_lo = 0.50, global_hi = 1.00;

  int steps = 200;
  int batch = 8;
  double base_lr = 1e-3;
  int lr_warmup = 20;
  double weight_decay = 0.02;

  double teacher_temp(int step) const {
    if (teacher_temp_warmup <= 0 || step >= teacher_temp_warmup) return teacher_temp_end;
    return teacher_temp_start +
           (teacher_temp_end - teacher_temp_start) * step / teacher_temp_warmup;
  }

  double teacher_momentum(int step) const {
    const double t = std::min(1.0, static_cast<double>(step) / std::max(1, steps));
    return teacher_momentum_end -
           (teacher_momentum_end - teacher_momentum_start) * 0.5 * (1.0 + std::cos(M_PI * t));
  }

  void validate() const {
    check(prototypes > 0 && head_hidden > 0 && head_bottleneck > 0, Errc::config,
          "distill: bad head dims");
    check(student_temp > 0 && teacher_temp_start > 0 && teacher_temp_end > 0, Errc::config,
          "distill: temperatures must be positive");
    check(center_momentum >= 0 && center_momentum <= 1, Errc::config,
          "distill: center momentum out of [0,1]");
    check(teacher_momentum_start >= 0 && teacher_momentum_end <= 1, Errc::config,
          "distill: teacher momentum out of [0,1]");
    check(0 < local_lo && local_lo <= local_hi && local_hi <= global_hi, Errc::config,
          "distill: bad mask intervals");
  }
};

/// Draw one student view's retained token indices. The fraction is uniform in
/// the view interval per modality; the retained count is ceil(frac*N) clamped
/// into [ceil(lo*N), floor(hi*N)] and at least 1; indices are a uniform
/// without-replacement subset, kept in ascending order.
inline MaskSpec sample_masks(const std::vector<int>& token_counts, Rng& rng, bool global,
                             const DistillConfig& cfg) {
  MaskSpec spec;
  spec.global = global;
  const double lo = global ? cfg.global_lo : cfg.local_lo;
  const double hi = global ? cfg.global_hi : cfg.local_hi;
  for (int n : token_counts) {
    check(n >= 1, Errc::usage, "sample_masks: empty token set");
    const double frac = rng.uniform(lo, hi);
    int k = static_cast<int>(std::ceil(frac * n));
    const int k_lo = static_cast<int>(std::ceil(lo * n));
    const int k_hi = static_cast<int>(std::floor(hi * n));
    k = std::clamp(k, std::min(k_lo, k_hi), std::max(k_lo, k_hi));
    k = std::max(1, std::min(k, n));
    // partial Fisher-Yates
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i)
      std::swap(pool[static_cast<size_t>(i)],
                pool[static_cast<size_t>(i + rng.uniform_int(n - i))]);
    std::vector<int> keep(pool.begin(), pool.begin() + k);
    std::sort(keep.begin(), keep.end());
    spec.fractions.push_back(frac);
    spec.retained.push_back(std::move(keep));
  }
  return spec;
}

/// DINO-style projection head: 3-layer GELU MLP to a normalized bottleneck,
/// then cosine logits against weight-normalized prototypes.
template <class T>
struct HeadSlots {
  int w1, b1, w2, b2, w3, b3, protos;
  int64_t value_count = 0;

  static HeadSlots build(ParamSet<T>& ps, int d, const DistillConfig& cfg, Rng rng,
                         const std::string& prefix = "head") {
    const int64_t before = ps.total_values();
    const T sigma = T(0.02);
    HeadSlots h;
    h.w1 = ps.add(prefix + "/w1", trunc_normal_init<T>({d, cfg.head_hidden}, rng, sigma));
    h.b1 = ps.add(prefix + "/b1", Tensor<T>({1, cfg.head_hidden}));
    h.w2 = ps.add(prefix + "/w2",
                  trunc_normal_init<T>({cfg.head_hidden, cfg.head_hidden}, rng, sigma));
    h.b2 = ps.add(prefix + "/b2", Tensor<T>({1, cfg.head_hidden}));
    h.w3 = ps.add(prefix + "/w3",
                  trunc_normal_init<T>({cfg.head_hidden, cfg.head_bottleneck}, rng, sigma));
    h.b3 = ps.add(prefix + "/b3", Tensor<T>({1, cfg.head_bottleneck}));
    h.protos = ps.add(prefix + "/prototypes",
                      trunc_normal_init<T>({cfg.prototypes, cfg.head_bottleneck}, rng, sigma));
    h.value_count = ps.total_values() - before;
    return h;
  }
};

template <class T>
typename Graph<T>::Val head_forward(Graph<T>& g, const ParamSet<T>& ps, const HeadSlots<T>& h,
                                    typename Graph<T>::Val x, GradStore<T>* sink) {
  auto p = [&](int slot) { return g.param(ps, slot, sink); };
  x = g.gelu(g.add(g.matmul(x, p(h.w1)), p(h.b1)));
  x = g.gelu(g.add(g.matmul(x, p(h.w2)), p(h.b2)));
  x = g.add(g.matmul(x, p(h.w3)), p(h.b3));
  x = g.l2_normalize(x);
  return g.matmul_nt(x, g.l2_normalize(p(h.protos)));
}

/// Register tokens of every modality and the bottleneck mean, averaged into
/// one summary vector [1 x d].
template <class T>
typename Graph<T>::Val pool_summary(Graph<T>& g,
                                    const typename EncoderForward<T>::Encoded& e) {
  std::vector<typename Graph<T>::Val> rows;
  for (auto t : e.tokens) rows.push_back(g.slice_rows(t, 0, 1));
  if (e.bottleneck >= 0) rows.push_back(g.mean_rows(e.bottleneck));
  return g.mean_rows(g.concat_rows(rows));
}

/// Sharpened, centered teacher distribution (computed off-graph; teacher
/// gradients are structurally impossible).
template <class T>
Tensor<T> teacher_probabilities(const Tensor<T>& logits, const Tensor<T>& center, T tau_t) {
  return softmax_rows(sub(logits, center), tau_t);
}

/// Cross-entropy between fixed teacher probabilities and the student's
/// tempered log-softmax.
template <class T>
typename Graph<T>::Val distill_loss(Graph<T>& g, typename Graph<T>::Val student_logits,
                                    const Tensor<T>& teacher_probs, T tau_s) {
  auto logq = g.log_softmax(student_logits, tau_s);
  return g.scale(g.sum_all(g.mul(g.constant(teacher_probs), logq)), T(-1));
}

/// EMA of every parameter slot; teacher and student must share slot layout.
template <class T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, T momentum) {
  check(teacher.size() == student.size(), Errc::usage, "ema: param sets differ");
  for (int s = 0; s < teacher.size(); ++s) {
    const Tensor<T>& t = teacher.value(s);
    const Tensor<T>& u = student.value(s);
    Tensor<T> next(t.shape());
    T* o = next.data();
    for (int64_t i = 0; i < t.size(); ++i) o[i] = momentum * t[i] + (T(1) - momentum) * u[i];
    teacher.set_value(s, std::move(next));
  }
}

template <class T>
double param_distance(const ParamSet<T>& a, const ParamSet<T>& b) {
  double acc = 0;
  for (int s = 0; s < a.size(); ++s) {
    const Tensor<T>& x = a.value(s);
    const Tensor<T>& y = b.value(s);
    for (int64_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  }
  return std::sqrt(acc);
}

struct StepStats {
  int step = 0;
  double loss = 0;
  double lr = 0;
  double teacher_student_distance = 0;
  int argmax_diversity = 0;
};

/// Masked teacher-student self-distillation over the fusion encoder.
template <class T>
class Pretrainer {
 public:
  Pretrainer(FusionConfig fusion, FeaturizeConfig feat, DistillConfig distill, uint64_t seed)
      : fusion_(fusion),
        feat_(feat),
        cfg_(distill),
        seed_(seed),
        student_enc_(EncoderParams<T>::build(student_, fusion, feat, Rng(seed).fork("enc"))),
        student_head_(HeadSlots<T>::build(student_, fusion.d, distill, Rng(seed).fork("head"))),
        teacher_enc_(EncoderParams<T>::build(teacher_, fusion, feat, Rng(seed).fork("enc"))),
        teacher_head_(HeadSlots<T>::build(teacher_, fusion.d, distill, Rng(seed).fork("head"))),
        center_({1, distill.prototypes}),
        opt_(AdamWConfig{0.9, 0.999, 1e-8, distill.weight_decay}, student_) {
    cfg_.validate();
    schedule_ = LrSchedule{cfg_.base_lr, cfg_.lr_warmup, cfg_.steps, 0.01};
    // teacher starts as an exact copy of the student
    for (int s = 0; s < student_.size(); ++s) teacher_.set_value(s, student_.value(s));
  }

  const ParamSet<T>& student() const { return student_; }
  ParamSet<T>& student_mut() { return student_; }
  const ParamSet<T>& teacher() const { return teacher_; }
  ParamSet<T>& teacher_mut() { return teacher_; }
  const EncoderParams<T>& student_encoder() const { return student_enc_; }
  const EncoderParams<T>& teacher_encoder() const { return teacher_enc_; }
  const Tensor<T>& center() const { return center_; }
  void set_center(Tensor<T> c) { center_ = std::move(c); }
  int step_index() const { return step_; }
  void restore_step(int s) {
    step_ = s;
    opt_.restore_step(s);
  }
  AdamW<T>& optimizer() { return opt_; }
  const DistillConfig& config() const { return cfg_; }

  std::vector<int> token_counts() const {
    std::vector<int> n;
    for (Modality m : fusion_.modalities) n.push_back(feat_.tokens(m));
    return n;
  }

  Tensor<T> teacher_logits(const FeatureBundle<T>& bundle) const {
    Graph<T> g;
    EncoderForward<T> fwd(g, teacher_, teacher_enc_, nullptr);
    auto e = fwd.encode(bundle);
    auto logits = head_forward<T>(g, teacher_, teacher_head_, pool_summary<T>(g, e), nullptr);
    return g.value(logits);
  }

  /// One optimizer step over a batch. Throws Errc::numeric on NaN loss with
  /// the offending view named.
  StepStats train_step(std::span<const FeatureBundle<T>* const> batch) {
    check(!batch.empty(), Errc::usage, "train_step: empty batch");
    Rng step_rng = Rng(seed_).fork("step", static_cast<uint64_t>(step_));
    GradStore<T> grads(student_);
    const int views = cfg_.n_global + cfg_.n_local;
    const T inv = T(1) / static_cast<T>(views * static_cast<int>(batch.size()));
    const T tau_t = static_cast<T>(cfg_.teacher_temp(step_));

    double loss_acc = 0;
    std::vector<Tensor<T>> t_logits;
    t_logits.reserve(batch.size());
    for (const FeatureBundle<T>* b : batch) t_logits.push_back(teacher_logits(*b));

    for (size_t bi = 0; bi < batch.size(); ++bi) {
      const Tensor<T> probs = teacher_probabilities(t_logits[bi], center_, tau_t);
      for (int v = 0; v < views; ++v) {
        const bool global = v < cfg_.n_global;
        MaskSpec mask = sample_masks(token_counts(), step_rng, global, cfg_);
        Graph<T> g;
        EncoderForward<T> fwd(g, student_, student_enc_, &grads);
        auto e = fwd.encode(*batch[bi], &mask);
        auto logits = head_forward<T>(g, student_, student_head_, pool_summary<T>(g, e), &grads);
        auto loss = distill_loss(g, logits, probs, static_cast<T>(cfg_.student_temp));
        const double lv = g.scalar(loss);
        if (!std::isfinite(lv)) {
          fail(Errc::numeric, "NaN loss at step " + std::to_string(step_) + ", sample " +
                                  std::to_string(bi) + ", " +
                                  (global ? "global" : "local") + " view " + std::to_string(v));
        }
        loss_acc += lv;
        g.backward(loss, inv);
      }
    }

    const double lr = schedule_.at(step_ + 1);
    opt_.step(student_, grads, lr);
    ema_update(teacher_, student_, static_cast<T>(cfg_.teacher_momentum(step_)));

    // center <- EMA of the batch-mean teacher logits
    Tensor<T> batch_mean({1, cfg_.prototypes});
    for (const auto& t : t_logits) batch_mean = add(batch_mean, t);
    batch_mean = scale(batch_mean, T(1) / static_cast<T>(t_logits.size()));
    center_ = add(scale(center_, static_cast<T>(cfg_.center_momentum)),
                  scale(batch_mean, T(1) - static_cast<T>(cfg_.center_momentum)));

    StepStats stats;
    stats.step = step_;
    stats.loss = loss_acc / (views * static_cast<double>(batch.size()));
    stats.lr = lr;
    stats.teacher_student_distance = param_distance(teacher_, student_);
    stats.argmax_diversity = distinct_argmax(t_logits);
    ++step_;
    return stats;
  }

  static int distinct_argmax(const std::vector<Tensor<T>>& logits) {
    std::vector<int> seen;
    for (const auto& t : logits) {
      int arg = 0;
      for (int i = 1; i < t.cols(); ++i)
        if (t[i] > t[arg]) arg = i;
      if (std::find(seen.begin(), seen.end(), arg) == seen.end()) seen.push_back(arg);
    }
    return static_cast<int>(seen.size());
  }

 private:
  FusionConfig fusion_;
  FeaturizeConfig feat_;
  DistillConfig cfg_;
  uint64_t seed_;
  ParamSet<T> student_, teacher_;
  EncoderParams<T> student_enc_;
  HeadSlots<T> student_head_;
  EncoderParams<T> teacher_enc_;
  HeadSlots<T> teacher_head_;
  Tensor<T> center_;
  AdamW<T> opt_;
  LrSchedule schedule_;
  int step_ = 0;
};

}  // namespace tfuse
