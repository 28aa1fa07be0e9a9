// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "tfuse/autodiff.hpp"

namespace tfuse {

/// Linear warmup then cosine decay. Convention: lr(0)=0, lr(warmup)=base,
/// cosine tail decays to floor_frac*base at total_steps.
struct LrSchedule {
  double base = 1e-3;
  int warmup_steps = 100;
  int total_steps = 1000;
  double floor_frac = 0.01;

  double at(int step) const {
    if (warmup_steps > 0 && step <= warmup_steps)
      return base * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double floor = base * floor_frac;
    if (step >= total_steps) return floor;
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return floor + (base - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;  // applied to matrix-shaped params only
};

/// Decoupled weight-decay Adam over one ParamSet.
template <class T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const ParamSet<T>& ps) : cfg_(cfg) {
    m_.reserve(static_cast<size_t>(ps.size()));
    v_.reserve(static_cast<size_t>(ps.size()));
    for (int i = 0; i < ps.size(); ++i) {
      m_.emplace_back(ps.value(i).shape());
      v_.emplace_back(ps.value(i).shape());
    }
  }

  void step(ParamSet<T>& ps, const GradStore<T>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (int s = 0; s < ps.size(); ++s) {
      Tensor<T> g = grads.at(s);
      Tensor<T> p = ps.value(s);
      Tensor<T> np(p.shape());
      T* mp = m_[static_cast<size_t>(s)].data();
      T* vp = v_[static_cast<size_t>(s)].data();
      T* out = np.data();
      const bool decay = p.ndim() >= 2 && cfg_.weight_decay > 0.0;
      for (int64_t i = 0; i < p.size(); ++i) {
        mp[i] = static_cast<T>(cfg_.beta1 * mp[i] + (1.0 - cfg_.beta1) * g[i]);
        vp[i] = static_cast<T>(cfg_.beta2 * vp[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
        const double mhat = mp[i] / bc1;
        const double vhat = vp[i] / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (decay) upd += lr * cfg_.weight_decay * p[i];
        out[i] = static_cast<T>(p[i] - upd);
      }
      ps.set_value(s, std::move(np));
    }
  }

  int steps_taken() const { return t_; }
  void restore_step(int t) { t_ = t; }

  int state_size() const { return static_cast<int>(m_.size()); }
  const Tensor<T>& moment1(int s) const { return m_[static_cast<size_t>(s)]; }
  const Tensor<T>& moment2(int s) const { return v_[static_cast<size_t>(s)]; }
  void set_moments(int s, Tensor<T> m, Tensor<T> v) {
    m_[static_cast<size_t>(s)] = std::move(m);
    v_[static_cast<size_t>(s)] = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  int t_ = 0;
};

}  // namespace tfuse
