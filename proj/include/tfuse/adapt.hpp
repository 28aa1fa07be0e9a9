// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "tfuse/fusion.hpp"
#include "tfuse/heads.hpp"
#include "tfuse/optim.hpp"
#include "tfuse/synthdata.hpp"

namespace tfuse {

/// Toy regulation task: a unit mass under velocity drag tracks a sinusoidal
/// reference at 20 Hz control. Drag and mass vary per episode and are
/// observable only through the synthetic tactile streams.
struct SimConfig {
  double dt = 0.05;
  int horizon = 200;  // 10 s episodes
  double ref_amp = 0.8;
  double ref_hz = 0.25;
  double fail_threshold = 0.8;
  double kp = 14.0, kd = 6.0;

  double nominal_mu_lo = 0.5, nominal_mu_hi = 1.5;
  double nominal_m_lo = 0.7, nominal_m_hi = 1.3;
  double shifted_mu_lo = 2.4, shifted_mu_hi = 3.4;
  double shifted_m_lo = 1.7, shifted_m_hi = 2.3;

  int history = 30;        // 1.5 s of proprioception
  double rep_stride = 0.19;
  int rep_slots = 8;
  int fingers = 4;
  // control handover: expert drives the shared warmup prefix while stream
  // history and representation slots fill up
  double warmup = 2.9;

  double ref_pos(double t) const { return ref_amp * std::sin(2.0 * M_PI * ref_hz * t); }
  double ref_vel(double t) const {
    return ref_amp * 2.0 * M_PI * ref_hz * std::cos(2.0 * M_PI * ref_hz * t);
  }
  double ref_acc(double t) const {
    const double w = 2.0 * M_PI * ref_hz;
    return -ref_amp * w * w * std::sin(w * t);
  }
};

struct Disturbance {
  double mu = 1.0;  // velocity drag
  double mass = 1.0;
};

inline Disturbance sample_disturbance(const SimConfig& cfg, Rng& rng, bool shifted) {
  if (shifted)
    return {rng.uniform(cfg.shifted_mu_lo, cfg.shifted_mu_hi),
            rng.uniform(cfg.shifted_m_lo, cfg.shifted_m_hi)};
  return {rng.uniform(cfg.nominal_mu_lo, cfg.nominal_mu_hi),
          rng.uniform(cfg.nominal_m_lo, cfg.nominal_m_hi)};
}

/// Feedback-linearizing expert with privileged access to (mu, mass); tracks
/// the reference for any disturbance. Source of successful demonstrations.
inline double expert_action(const SimConfig& cfg, const Disturbance& d, double t, double x,
                            double v) {
  const double a_cmd = cfg.ref_acc(t) + cfg.kp * (cfg.ref_pos(t) - x) +
                       cfg.kd * (cfg.ref_vel(t) - v);
  return d.mu * v + d.mass * a_cmd;
}

// ---------------------------------------------------------------------------
// proprioception history

/// Rolling (tracking error, velocity, previous action) triples, oldest first.
class ProprioHistory {
 public:
  explicit ProprioHistory(int steps) : steps_(steps) {}

  void push(double err, double v, double u_prev) {
    buf_.push_back({err, v, u_prev});
    if (static_cast<int>(buf_.size()) > steps_) buf_.pop_front();
  }

  bool full() const { return static_cast<int>(buf_.size()) == steps_; }

  template <class T>
  Tensor<T> as_row() const {
    check(full(), Errc::not_ready, "proprio history not yet full");
    Tensor<T> out({1, steps_ * 3});
    T* o = out.data();
    for (int i = 0; i < steps_; ++i) {
      o[i * 3 + 0] = static_cast<T>(buf_[static_cast<size_t>(i)][0]);
      o[i * 3 + 1] = static_cast<T>(buf_[static_cast<size_t>(i)][1]);
      o[i * 3 + 2] = static_cast<T>(buf_[static_cast<size_t>(i)][2]);
    }
    return out;
  }

 private:
  int steps_;
  std::deque<std::array<double, 3>> buf_;
};

// ---------------------------------------------------------------------------
// base policy (privileged training, then proprio-only deployment)

struct BasePolicyConfig {
  int z_dim = 8;
  int hidden = 64;
  int train_episodes = 48;
  int stage1_epochs = 60;
  int stage2_epochs = 60;
  double lr = 3e-3;
};

/// Frozen two-stage policy. Stage 1 learns an action head on a privileged
/// embedding z of (mu, mass); stage 2 learns to estimate z from
/// proprioception history. The estimate extrapolates poorly outside the
/// nominal disturbance range, which is what tactile adaptation repairs.
template <class T>
struct BasePolicy {
  SimConfig sim;
  BasePolicyConfig cfg;
  ParamSet<T> ps;
  // privileged embedding
  int priv_w = -1, priv_b = -1;
  // proprio estimator: hist -> z
  int est_w1 = -1, est_b1 = -1, est_w2 = -1, est_b2 = -1;
  // action head: [hist ; z] -> u
  int act_w1 = -1, act_b1 = -1, act_w2 = -1, act_b2 = -1;

  int hist_dim() const { return sim.history * 3; }

  static BasePolicy make(const SimConfig& sim, const BasePolicyConfig& cfg, Rng rng) {
    BasePolicy p;
    p.sim = sim;
    p.cfg = cfg;
    const T sigma = T(0.08);
    const int h = cfg.hidden, z = cfg.z_dim, in = sim.history * 3;
    p.priv_w = p.ps.add("base/priv_w", trunc_normal_init<T>({2, z}, rng, sigma));
    p.priv_b = p.ps.add("base/priv_b", Tensor<T>({1, z}));
    p.est_w1 = p.ps.add("base/est_w1", trunc_normal_init<T>({in, h}, rng, sigma));
    p.est_b1 = p.ps.add("base/est_b1", Tensor<T>({1, h}));
    p.est_w2 = p.ps.add("base/est_w2", trunc_normal_init<T>({h, z}, rng, sigma));
    p.est_b2 = p.ps.add("base/est_b2", Tensor<T>({1, z}));
    p.act_w1 = p.ps.add("base/act_w1", trunc_normal_init<T>({in + z, h}, rng, sigma));
    p.act_b1 = p.ps.add("base/act_b1", Tensor<T>({1, h}));
    p.act_w2 = p.ps.add("base/act_w2", trunc_normal_init<T>({h, 1}, rng, sigma));
    p.act_b2 = p.ps.add("base/act_b2", Tensor<T>({1, 1}));
    return p;
  }

  typename Graph<T>::Val privileged_embedding(Graph<T>& g, const Disturbance& d,
                                              GradStore<T>* sink) const {
    Tensor<T> in({1, 2});
    in.data()[0] = static_cast<T>(d.mu);
    in.data()[1] = static_cast<T>(d.mass);
    return g.add(g.matmul(g.constant(in), g.param(ps, priv_w, sink)), g.param(ps, priv_b, sink));
  }

  /// Stage-2 estimate of the privileged embedding from proprioception.
  typename Graph<T>::Val estimate_embedding(Graph<T>& g, typename Graph<T>::Val hist,
                                            GradStore<T>* sink) const {
    auto h = g.tanh_op(g.add(g.matmul(hist, g.param(ps, est_w1, sink)), g.param(ps, est_b1, sink)));
    return g.add(g.matmul(h, g.param(ps, est_w2, sink)), g.param(ps, est_b2, sink));
  }

  typename Graph<T>::Val action_from(Graph<T>& g, typename Graph<T>::Val hist,
                                     typename Graph<T>::Val z, GradStore<T>* sink) const {
    std::vector<typename Graph<T>::Val> parts{hist, z};
    auto in = g.concat_cols(parts);
    auto h = g.tanh_op(g.add(g.matmul(in, g.param(ps, act_w1, sink)), g.param(ps, act_b1, sink)));
    return g.add(g.matmul(h, g.param(ps, act_w2, sink)), g.param(ps, act_b2, sink));
  }

  /// Deployed action: estimate z from history, then act.
  double act(const Tensor<T>& hist) const {
    Graph<T> g;
    auto hv = g.constant(hist);
    auto z = estimate_embedding(g, hv, nullptr);
    return g.scalar(action_from(g, hv, z, nullptr));
  }
};

/// Supervised two-stage training on expert rollouts over the nominal range.
template <class T>
BasePolicy<T> train_base_policy(const SimConfig& sim, const BasePolicyConfig& cfg,
                                uint64_t seed) {
  BasePolicy<T> p = BasePolicy<T>::make(sim, cfg, Rng(seed).fork("base_init"));

  struct Sample {
    Tensor<T> hist;
    Disturbance d;
    double u = 0;
  };
  std::vector<Sample> samples;
  Rng rng = Rng(seed).fork("base_data");
  for (int ep = 0; ep < cfg.train_episodes; ++ep) {
    Disturbance d = sample_disturbance(sim, rng, false);
    double x = 0, v = 0, u_prev = 0;
    ProprioHistory hist(sim.history);
    for (int step = 0; step < sim.horizon; ++step) {
      const double t = step * sim.dt;
      hist.push(sim.ref_pos(t) - x, v, u_prev);
      const double u = expert_action(sim, d, t, x, v);
      if (hist.full() && step % 2 == 0) samples.push_back({hist.as_row<T>(), d, u});
      v += sim.dt * (u - d.mu * v) / d.mass;
      x += sim.dt * v;
      u_prev = u;
    }
  }

  // stage 1: action head + privileged embedding
  {
    AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0}, p.ps);
    LrSchedule sched{cfg.lr, 20, cfg.stage1_epochs * 8, 0.01};
    Rng order(seed ^ 0x51a6e1);
    int step = 0;
    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
      for (int b = 0; b < 8; ++b) {
        GradStore<T> grads(p.ps);
        const int bs = 64;
        for (int i = 0; i < bs; ++i) {
          const Sample& s = samples[static_cast<size_t>(order.uniform_int(
              static_cast<int>(samples.size())))];
          Graph<T> g;
          auto z = p.privileged_embedding(g, s.d, &grads);
          auto u = p.action_from(g, g.constant(s.hist), z, &grads);
          auto diff = g.sub(u, g.constant(Tensor<T>::scalar(static_cast<T>(s.u))));
          g.backward(g.mul(diff, diff), T(1) / bs);
        }
        opt.step(p.ps, grads, sched.at(++step));
      }
    }
  }

  // stage 2: proprio estimator regresses the (now frozen) privileged embedding
  {
    // only estimator slots receive gradients; others never enter the sink
    AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0}, p.ps);
    LrSchedule sched{cfg.lr, 20, cfg.stage2_epochs * 8, 0.01};
    Rng order(seed ^ 0x51a6e2);
    int step = 0;
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
      for (int b = 0; b < 8; ++b) {
        GradStore<T> grads(p.ps);
        const int bs = 64;
        for (int i = 0; i < bs; ++i) {
          const Sample& s = samples[static_cast<size_t>(order.uniform_int(
              static_cast<int>(samples.size())))];
          Graph<T> g;
          Tensor<T> target;
          {
            Graph<T> gt;
            target = gt.value(p.privileged_embedding(gt, s.d, nullptr));
          }
          auto z = p.estimate_embedding(g, g.constant(s.hist), &grads);
          auto diff = g.sub(z, g.constant(target));
          g.backward(g.mean_all(g.mul(diff, diff)), T(1) / bs);
        }
        opt.step(p.ps, grads, sched.at(++step));
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// reactive tactile synthesis for the simulator

/// Streams one finger's four modalities during a rollout; drag and mass are
/// encoded in audio color/loudness, pressure amplitude, and vibration.
class FingerTactile {
 public:
  FingerTactile(const Disturbance& d, int finger, uint64_t seed, const GenConfig& gen)
      : d_(d),
        gen_(gen),
        phase_(finger * M_PI / 3.0),
        rng_(splitmix64(seed ^ (0xf1u + static_cast<uint64_t>(finger)))),
        res_audio_(500.0 + 550.0 * d.mu, kAudioRateHz),
        res_vib_(90.0 + 40.0 * d.mass, kImuRateHz, 0.9),
        tex_seed_(splitmix64(seed ^ 0x7e97u)) {}

  /// Generate and push all samples with timestamp in [t0, t1).
  void advance(SensorStreams& s, double t0, double t1, double v, double a_cmd) {
    t1 -= 1e-9;  // samples landing exactly on t1 belong to the next call
    // pressure 200 Hz
    for (int i = tick(t0, kPressureRateHz); i / kPressureRateHz < t1; ++i) {
      const double t = i / kPressureRateHz;
      const double val = 0.1 + 0.45 * d_.mass * (1.0 + 0.25 * std::sin(2.0 * M_PI * 0.9 * t + phase_)) +
                         gen_.noise_pressure * rng_.normal();
      s.pressure.push(t, PressureSample{static_cast<float>(val)});
    }
    // imu 400 Hz
    for (int i = tick(t0, kImuRateHz); i / kImuRateHz < t1; ++i) {
      const double t = i / kImuRateHz;
      const double vib = res_vib_(0.5 * d_.mass * std::abs(a_cmd) * rng_.normal());
      const double ax = 0.5 * a_cmd + vib + gen_.noise_imu * rng_.normal();
      const double ay = 0.4 * vib + gen_.noise_imu * rng_.normal();
      const double az = 9.81 + 0.35 * d_.mass * std::abs(a_cmd) + gen_.noise_imu * rng_.normal();
      s.imu.push(t, ImuSample{static_cast<float>(ax), static_cast<float>(ay),
                              static_cast<float>(az)});
    }
    // audio 48 kHz chunks
    for (int i = tick(t0, 100.0); i / 100.0 < t1; ++i) {
      const double ct = i / 100.0;
      AudioChunk c;
      c.mic[0].resize(kAudioChunkFrames);
      c.mic[1].resize(kAudioChunkFrames);
      const double amp = 0.1 + 0.5 * d_.mu * std::abs(v);
      for (int k = 0; k < kAudioChunkFrames; ++k) {
        const double w = amp * res_audio_(rng_.normal()) + gen_.noise_audio * rng_.normal();
        c.mic[0][static_cast<size_t>(k)] = static_cast<float>(w);
        c.mic[1][static_cast<size_t>(k)] =
            static_cast<float>(w * 1.07 + gen_.noise_audio * 0.5 * rng_.normal());
      }
      s.audio.push(ct, std::move(c));
    }
    // image 30 fps
    for (int i = tick(t0, kImageRateHz); i / kImageRateHz < t1; ++i) {
      const double t = i / kImageRateHz;
      const double press = 0.45 * d_.mass;
      const int w = gen_.image_w, h = gen_.image_h;
      ImageFrame f;
      f.width = w;
      f.height = h;
      f.rgb.resize(static_cast<size_t>(w) * h * 3);
      const double cx = w * (0.5 + 0.1 * std::sin(2.0 * M_PI * 0.9 * t + phase_));
      const double radius = (0.08 + 0.20 * std::sqrt(press)) * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double tex = synth_detail::texture(x, y, tex_seed_, 5.0);
          const double d2 =
              ((x - cx) * (x - cx) + (y - h / 2.0) * (y - h / 2.0)) / (radius * radius);
          const double val = 80.0 + 40.0 * tex + 100.0 * press * std::exp(-0.5 * d2) +
                             gen_.noise_image * rng_.normal();
          for (int ch = 0; ch < 3; ++ch)
            f.rgb[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(ch)] =
                static_cast<uint8_t>(std::clamp(val * (ch == 2 ? 1.1 : 1.0), 0.0, 255.0));
        }
      s.image.push(t, std::move(f));
    }
  }

 private:
  static int tick(double t, double rate) { return static_cast<int>(std::ceil(t * rate - 1e-9)); }

  Disturbance d_;
  GenConfig gen_;
  double phase_;
  Rng rng_;
  synth_detail::Resonator res_audio_;
  synth_detail::Resonator res_vib_;
  uint64_t tex_seed_;
};

// ---------------------------------------------------------------------------
// adaptation module

struct AdaptConfig {
  int trunk_hidden = 64;
  int epochs = 12;
  int batch = 32;
  double lr = 2e-3;
  int lr_warmup = 40;
  int demo_episodes = 16;
  double demo_shifted_fraction = 0.5;
};

/// Shared attentive pooler over the encoder's summary rows plus a shallow
/// trunk ending in a zero-initialized linear map onto the privileged
/// embedding. Residual output is exactly zero before training.
template <class T>
struct AdaptModule {
  SimConfig sim;
  AdaptConfig cfg;
  int d = 0, z_dim = 0;
  ParamSet<T> ps;
  int q = -1, wk = -1, bk = -1, wv = -1, bv = -1;
  int t_w1 = -1, t_b1 = -1, zero_w = -1, zero_b = -1;

  static AdaptModule make(const SimConfig& sim, const AdaptConfig& cfg, int d, int z_dim,
                          Rng rng) {
    AdaptModule m;
    m.sim = sim;
    m.cfg = cfg;
    m.d = d;
    m.z_dim = z_dim;
    const T sigma = T(0.05);
    const int in = sim.rep_slots * sim.fingers * d;
    m.q = m.ps.add("adapt/q", trunc_normal_init<T>({1, d}, rng, sigma));
    m.wk = m.ps.add("adapt/wk", trunc_normal_init<T>({d, d}, rng, sigma));
    m.bk = m.ps.add("adapt/bk", Tensor<T>({1, d}));
    m.wv = m.ps.add("adapt/wv", trunc_normal_init<T>({d, d}, rng, sigma));
    m.bv = m.ps.add("adapt/bv", Tensor<T>({1, d}));
    m.t_w1 = m.ps.add("adapt/trunk_w1", trunc_normal_init<T>({in, cfg.trunk_hidden}, rng, sigma));
    m.t_b1 = m.ps.add("adapt/trunk_b1", Tensor<T>({1, cfg.trunk_hidden}));
    // the zero convolution: 1x1 conv == pointwise linear, zero-initialized
    m.zero_w = m.ps.add("adapt/zero_w", Tensor<T>({cfg.trunk_hidden, z_dim}));
    m.zero_b = m.ps.add("adapt/zero_b", Tensor<T>({1, z_dim}));
    return m;
  }

  /// Tactile input: per (finger, slot) summary-token matrix, fingers-major.
  /// Each is attentively pooled to one row; rows concatenate along time and
  /// fingers into the (slots*fingers) x d embedding consumed by the trunk.
  typename Graph<T>::Val residual(Graph<T>& g,
                                  const std::vector<std::vector<Tensor<T>>>& slots,
                                  GradStore<T>* sink) const {
    check(static_cast<int>(slots.size()) == sim.fingers, Errc::shape,
          "adapt: finger count mismatch");
    auto par = [&](int slot) { return g.param(ps, slot, sink); };
    std::vector<typename Graph<T>::Val> rows;
    for (const auto& finger : slots) {
      check(static_cast<int>(finger.size()) == sim.rep_slots, Errc::shape,
            "adapt: rep slot count mismatch");
      for (const Tensor<T>& summary : finger) {
        auto tokens = g.constant(summary);
        auto k = g.add(g.matmul(tokens, par(wk)), par(bk));
        auto v = g.add(g.matmul(tokens, par(wv)), par(bv));
        auto scores = g.scale(g.matmul_nt(par(q), k), T(1) / std::sqrt(static_cast<T>(d)));
        rows.push_back(g.matmul(g.softmax(scores, T(1)), v));
      }
    }
    // rows are 1 x d each; lay them out along time/fingers into 1 x (32*d)
    auto wide = g.concat_cols(rows);
    auto h = g.gelu(g.add(g.matmul(wide, par(t_w1)), par(t_b1)));
    return g.add(g.matmul(h, par(zero_w)), par(zero_b));
  }
};

/// base action with the tactile residual added to the estimated privileged
/// embedding. Window alignment beyond one control period is a sync error.
template <class T>
double adapted_action(const BasePolicy<T>& base, const AdaptModule<T>& adapt,
                      const Tensor<T>& hist, const std::vector<std::vector<Tensor<T>>>& slots,
                      double hist_end_ts, double tactile_end_ts) {
  check(std::abs(hist_end_ts - tactile_end_ts) <= base.sim.dt + 1e-9, Errc::ordering,
        "adapted_action: proprio and tactile windows misaligned");
  Graph<T> g;
  auto hv = g.constant(hist);
  auto z = base.estimate_embedding(g, hv, nullptr);
  auto dz = adapt.residual(g, slots, nullptr);
  return g.scalar(base.action_from(g, hv, g.add(z, dz), nullptr));
}

// ---------------------------------------------------------------------------
// representation extraction during rollouts

/// Rolls the four per-finger sensor stacks forward and captures an encoder
/// summary (register rows + bottleneck) every rep_stride seconds.
template <class T>
class TactileRig {
 public:
  TactileRig(const SimConfig& sim, const Disturbance& d, const ParamSet<T>& enc_ps,
             const EncoderParams<T>& enc, const FeaturizeConfig& feat, uint64_t seed)
      : sim_(sim), enc_ps_(enc_ps), enc_(enc), feat_(feat), fb_(mel_filterbank<T>(feat)) {
    GenConfig gen;
    gen.image_w = 48;
    gen.image_h = 48;
    for (int f = 0; f < sim.fingers; ++f) {
      streams_.push_back(std::make_unique<SensorStreams>());
      synths_.emplace_back(d, f, splitmix64(seed ^ static_cast<uint64_t>(f + 1)), gen);
      slots_.emplace_back();
    }
    next_slot_ts_ = 1.22;  // earliest ts with a full pressure window
  }

  void advance(double t0, double t1, double v, double a_cmd) {
    for (int f = 0; f < sim_.fingers; ++f)
      synths_[static_cast<size_t>(f)].advance(*streams_[static_cast<size_t>(f)], t0, t1, v, a_cmd);
    data_end_ts_ = t1;
    while (next_slot_ts_ < t1 - 1e-9) {
      capture(next_slot_ts_);
      last_capture_ts_ = next_slot_ts_;
      next_slot_ts_ += sim_.rep_stride;
    }
  }

  bool ready() const {
    for (const auto& f : slots_)
      if (static_cast<int>(f.size()) < sim_.rep_slots) return false;
    return true;
  }

  double last_capture_ts() const { return last_capture_ts_; }
  double data_end_ts() const { return data_end_ts_; }

  /// Latest rep_slots summaries per finger, oldest first.
  std::vector<std::vector<Tensor<T>>> window() const {
    check(ready(), Errc::not_ready, "tactile rig: representation slots not filled");
    std::vector<std::vector<Tensor<T>>> out(static_cast<size_t>(sim_.fingers));
    for (int f = 0; f < sim_.fingers; ++f) {
      const auto& dq = slots_[static_cast<size_t>(f)];
      out[static_cast<size_t>(f)].assign(dq.end() - sim_.rep_slots, dq.end());
    }
    return out;
  }

 private:
  void capture(double ts) {
    for (int f = 0; f < sim_.fingers; ++f) {
      const SensorStreams& s = *streams_[static_cast<size_t>(f)];
      const double ref = s.image.ts(s.image.nearest(ts));
      SyncedSample ss = sync_at(s, ref, feat_.window_spec());
      FeatureBundle<T> bundle = featurize_sample<T>(ss, feat_, nullptr, &fb_);
      EncodedTensors<T> e = encode_frozen(enc_ps_, enc_, bundle);
      std::vector<Tensor<T>> rows;
      for (const auto& toks : e.tokens) rows.push_back(slice_rows(toks, 0, 1));
      if (!e.bottleneck.empty()) rows.push_back(e.bottleneck);
      auto& dq = slots_[static_cast<size_t>(f)];
      dq.push_back(concat_rows(std::span<const Tensor<T>>(rows)));
      if (dq.size() > 32) dq.pop_front();
    }
  }

  SimConfig sim_;
  const ParamSet<T>& enc_ps_;
  const EncoderParams<T>& enc_;
  FeaturizeConfig feat_;
  Tensor<T> fb_;
  std::vector<std::unique_ptr<SensorStreams>> streams_;
  std::vector<FingerTactile> synths_;
  std::vector<std::deque<Tensor<T>>> slots_;
  double next_slot_ts_ = 0;
  double last_capture_ts_ = 0;
  double data_end_ts_ = 0;
};

// ---------------------------------------------------------------------------
// demonstrations, adapter training, evaluation

template <class T>
struct DemoSample {
  Tensor<T> hist;
  std::vector<std::vector<Tensor<T>>> slots;
  double target = 0;
};

/// Expert rollouts (successful by construction) over nominal and shifted
/// disturbances, logged as (proprio, tactile, target action) tuples.
template <class T>
std::vector<DemoSample<T>> collect_demonstrations(const SimConfig& sim,
                                                  const AdaptConfig& cfg,
                                                  const ParamSet<T>& enc_ps,
                                                  const EncoderParams<T>& enc,
                                                  const FeaturizeConfig& feat, uint64_t seed) {
  std::vector<DemoSample<T>> demos;
  Rng rng = Rng(seed).fork("demos");
  for (int ep = 0; ep < cfg.demo_episodes; ++ep) {
    const bool shifted = rng.uniform() < cfg.demo_shifted_fraction;
    Disturbance d = sample_disturbance(sim, rng, shifted);
    TactileRig<T> rig(sim, d, enc_ps, enc, feat, splitmix64(seed ^ (0xd30 + ep)));
    ProprioHistory hist(sim.history);
    double x = 0, v = 0, u_prev = 0;
    for (int step = 0; step < sim.horizon; ++step) {
      const double t = step * sim.dt;
      hist.push(sim.ref_pos(t) - x, v, u_prev);
      const double u = expert_action(sim, d, t, x, v);
      const double a_cmd = (u - d.mu * v) / d.mass;
      rig.advance(t, t + sim.dt, v, a_cmd);
      if (t >= sim.warmup && hist.full() && rig.ready() && step % 2 == 0)
        demos.push_back({hist.as_row<T>(), rig.window(), u});
      v += sim.dt * (u - d.mu * v) / d.mass;
      x += sim.dt * v;
      u_prev = u;
    }
  }
  check(!demos.empty(), Errc::usage, "no demonstrations collected");
  return demos;
}

/// Minimize || base(hist, z_hat + residual(tactile)) - u_expert ||^2 over the
/// adapter parameters; the base policy stays frozen.
template <class T>
void train_adaptation(std::vector<DemoSample<T>>& demos, const BasePolicy<T>& base,
                      AdaptModule<T>& adapt, uint64_t seed) {
  check(!demos.empty(), Errc::usage, "train_adaptation: empty dataset");
  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0}, adapt.ps);
  const int steps_per_epoch =
      (static_cast<int>(demos.size()) + adapt.cfg.batch - 1) / adapt.cfg.batch;
  LrSchedule sched{adapt.cfg.lr, adapt.cfg.lr_warmup, adapt.cfg.epochs * steps_per_epoch, 0.01};
  Rng order_root(splitmix64(seed ^ 0xada9));
  int step = 0;
  for (int epoch = 0; epoch < adapt.cfg.epochs; ++epoch) {
    std::vector<int> order(demos.size());
    for (size_t i = 0; i < demos.size(); ++i) order[i] = static_cast<int>(i);
    Rng erng = order_root.fork("epoch", static_cast<uint64_t>(epoch));
    for (size_t i = 0; i + 1 < order.size(); ++i)
      std::swap(order[i], order[static_cast<size_t>(
                              static_cast<int>(i) +
                              erng.uniform_int(static_cast<int>(order.size() - i)))]);
    for (int b0 = 0; b0 < static_cast<int>(order.size()); b0 += adapt.cfg.batch) {
      const int b1 = std::min<int>(b0 + adapt.cfg.batch, static_cast<int>(order.size()));
      GradStore<T> grads(adapt.ps);
      for (int i = b0; i < b1; ++i) {
        const DemoSample<T>& s = demos[static_cast<size_t>(order[static_cast<size_t>(i)])];
        Graph<T> g;
        auto hv = g.constant(s.hist);
        auto z = base.estimate_embedding(g, hv, nullptr);  // frozen
        auto dz = adapt.residual(g, s.slots, &grads);
        auto u = base.action_from(g, hv, g.add(z, dz), nullptr);
        auto diff = g.sub(u, g.constant(Tensor<T>::scalar(static_cast<T>(s.target))));
        g.backward(g.mul(diff, diff), T(1) / (b1 - b0));
      }
      opt.step(adapt.ps, grads, sched.at(++step));
    }
  }
}

enum class PolicyVariant { base, adapted, expert };

inline const char* variant_name(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::base: return "base";
    case PolicyVariant::adapted: return "adapted";
    case PolicyVariant::expert: return "expert";
  }
  return "?";
}

struct RolloutMetrics {
  std::string variant;
  double mean_drift = 0;
  double mean_time_to_fail = 0;  // steps after warmup
  int episodes = 0;
};

/// Seeded episodes under the shifted disturbance range; drift is the mean
/// absolute tracking error after warmup, time-to-fail the steps until the
/// error first exceeds the threshold.
template <class T>
RolloutMetrics rollout_eval(PolicyVariant variant, const SimConfig& sim,
                            const BasePolicy<T>& base, const AdaptModule<T>* adapt,
                            const ParamSet<T>& enc_ps, const EncoderParams<T>& enc,
                            const FeaturizeConfig& feat, int episodes, uint64_t seed,
                            bool shifted = true) {
  RolloutMetrics out;
  out.variant = variant_name(variant);
  out.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng = Rng(seed).fork("eval", static_cast<uint64_t>(ep));
    Disturbance d = sample_disturbance(sim, rng, shifted);
    TactileRig<T> rig(sim, d, enc_ps, enc, feat, splitmix64(seed ^ (0xe7a1u + ep)));
    ProprioHistory hist(sim.history);
    double x = 0, v = 0, u_prev = 0;
    double drift_acc = 0;
    int drift_n = 0, fail_step = -1, controlled = 0;
    for (int step = 0; step < sim.horizon; ++step) {
      const double t = step * sim.dt;
      const double err = sim.ref_pos(t) - x;
      hist.push(err, v, u_prev);
      double u = 0;
      if (t < sim.warmup || !hist.full() ||
          (variant == PolicyVariant::adapted && !rig.ready())) {
        u = expert_action(sim, d, t, x, v);  // shared privileged warmup
      } else {
        ++controlled;
        if (variant == PolicyVariant::expert) {
          u = expert_action(sim, d, t, x, v);
        } else if (variant == PolicyVariant::base) {
          u = base.act(hist.as_row<T>());
        } else {
          u = adapted_action(base, *adapt, hist.as_row<T>(), rig.window(), t,
                             rig.data_end_ts());
        }
        drift_acc += std::abs(err);
        ++drift_n;
        if (fail_step < 0 && std::abs(err) > sim.fail_threshold) fail_step = controlled;
      }
      const double a_cmd = (u - d.mu * v) / d.mass;
      rig.advance(t, t + sim.dt, v, a_cmd);
      v += sim.dt * (u - d.mu * v) / d.mass;
      x += sim.dt * v;
      u_prev = u;
    }
    out.mean_drift += drift_n > 0 ? drift_acc / drift_n : 0.0;
    out.mean_time_to_fail += fail_step < 0 ? controlled : fail_step;
  }
  out.mean_drift /= episodes;
  out.mean_time_to_fail /= episodes;
  return out;
}

}  // namespace tfuse
