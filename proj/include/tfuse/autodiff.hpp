// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tfuse/tensor.hpp"

namespace tfuse {

/// Named set of learnable tensors. Slot order is the canonical order for
/// gradients and optimizer state.
template <class T>
class ParamSet {
 public:
  int add(std::string name, Tensor<T> v) {
    check(index_.find(name) == index_.end(), Errc::usage, "duplicate parameter: " + name);
    index_.emplace(name, static_cast<int>(values_.size()));
    names_.push_back(std::move(name));
    values_.push_back(std::move(v));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int slot) const { return names_[static_cast<size_t>(slot)]; }
  const Tensor<T>& value(int slot) const { return values_[static_cast<size_t>(slot)]; }
  void set_value(int slot, Tensor<T> v) {
    check(v.same_shape(values_[static_cast<size_t>(slot)]), Errc::shape,
          "set_value shape mismatch for " + names_[static_cast<size_t>(slot)]);
    values_[static_cast<size_t>(slot)] = std::move(v);
  }

  int find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? -1 : it->second;
  }

  int64_t total_values() const {
    int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, int> index_;
};

/// Per-slot gradient accumulator, shared across the tapes of one optimizer step.
template <class T>
class GradStore {
 public:
  explicit GradStore(const ParamSet<T>& ps) : shapes_(ps.size()) {
    for (int i = 0; i < ps.size(); ++i) shapes_[static_cast<size_t>(i)] = ps.value(i).shape();
    grads_.resize(shapes_.size());
  }

  void zero() {
    for (auto& g : grads_) g = Tensor<T>();
  }

  void add(int slot, const Tensor<T>& delta) {
    auto& g = grads_[static_cast<size_t>(slot)];
    if (g.empty()) {
      g = Tensor<T>(shapes_[static_cast<size_t>(slot)]);
    }
    T* p = g.data();
    const T* d = delta.data();
    for (int64_t i = 0; i < g.size(); ++i) p[i] += d[i];
  }

  bool has(int slot) const { return !grads_[static_cast<size_t>(slot)].empty(); }

  /// Zero tensor if the slot was never touched.
  Tensor<T> at(int slot) const {
    const auto& g = grads_[static_cast<size_t>(slot)];
    return g.empty() ? Tensor<T>(shapes_[static_cast<size_t>(slot)]) : g;
  }

  int size() const { return static_cast<int>(grads_.size()); }

 private:
  std::vector<std::vector<int>> shapes_;
  std::vector<Tensor<T>> grads_;
};

/// Reverse-mode tape. Node creation order is a topological order of the
/// dataflow graph; backward() walks it exactly once in reverse. Graphs are
/// single-use: build, run backward, discard.
template <class T>
class Graph {
 public:
  using Val = int;

  Val constant(Tensor<T> v) { return push(std::move(v), false); }

  /// Differentiable leaf. When sink is null the value participates as a
  /// constant (frozen parameters).
  Val param(const ParamSet<T>& ps, int slot, GradStore<T>* sink) {
    auto key = std::make_pair(static_cast<const void*>(&ps), slot);
    auto it = leaf_cache_.find(key);
    if (it != leaf_cache_.end()) return it->second;
    Val v = push(ps.value(slot), sink != nullptr);
    if (sink != nullptr) {
      nodes_[static_cast<size_t>(v)].sink = sink;
      nodes_[static_cast<size_t>(v)].slot = slot;
    }
    leaf_cache_.emplace(key, v);
    return v;
  }

  const Tensor<T>& value(Val v) const { return nodes_[static_cast<size_t>(v)].value; }

  T scalar(Val v) const {
    check(value(v).size() == 1, Errc::usage, "scalar() on non-scalar node");
    return value(v)[0];
  }

  size_t node_count() const { return nodes_.size(); }

  // ---- ops ----

  Val add(Val a, Val b) {
    Val out = push(tfuse::add(value(a), value(b)), needs(a) || needs(b));
    if (!needs(out)) return out;
    set_back(out, [this, a, b, out] {
      if (needs(a)) accum(a, grad(out));
      if (needs(b)) accum_reduced(b, grad(out));
    });
    return out;
  }

  Val sub(Val a, Val b) {
    Val out = push(tfuse::sub(value(a), value(b)), needs(a) || needs(b));
    if (!needs(out)) return out;
    set_back(out, [this, a, b, out] {
      if (needs(a)) accum(a, grad(out));
      if (needs(b)) accum_reduced(b, tfuse::scale(grad(out), T(-1)));
    });
    return out;
  }

  Val mul(Val a, Val b) {
    Val out = push(tfuse::mul(value(a), value(b)), needs(a) || needs(b));
    if (!needs(out)) return out;
    set_back(out, [this, a, b, out] {
      if (needs(a)) accum(a, tfuse::mul(grad(out), value(b)));
      if (needs(b)) accum_reduced(b, tfuse::mul(grad(out), value(a)));
    });
    return out;
  }

  Val scale(Val a, T c) {
    Val out = push(tfuse::scale(value(a), c), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, c, out] { accum(a, tfuse::scale(grad(out), c)); });
    return out;
  }

  Val matmul(Val a, Val b) {
    Val out = push(tfuse::matmul(value(a), value(b)), needs(a) || needs(b));
    if (!needs(out)) return out;
    set_back(out, [this, a, b, out] {
      if (needs(a)) accum(a, tfuse::matmul(grad(out), value(b), false, true));
      if (needs(b)) accum(b, tfuse::matmul(value(a), grad(out), true, false));
    });
    return out;
  }

  /// a * b^T without materializing the transpose.
  Val matmul_nt(Val a, Val b) {
    Val out = push(tfuse::matmul(value(a), value(b), false, true), needs(a) || needs(b));
    if (!needs(out)) return out;
    set_back(out, [this, a, b, out] {
      if (needs(a)) accum(a, tfuse::matmul(grad(out), value(b)));
      if (needs(b)) accum(b, tfuse::matmul(grad(out), value(a), true, false));
    });
    return out;
  }

  Val softmax(Val x, T temperature) {
    Tensor<T> y = softmax_rows(value(x), temperature);
    Val out = push(y, needs(x));
    if (!needs(out)) return out;
    set_back(out, [this, x, out, temperature] {
      const Tensor<T>& y2 = value(out);
      const Tensor<T>& g = grad(out);
      const int n = y2.cols();
      const int64_t m = y2.size() / n;
      Tensor<T> dx(y2.shape());
      T* d = dx.data();
      for (int64_t r = 0; r < m; ++r) {
        T dot = 0;
        for (int c = 0; c < n; ++c) dot += g[r * n + c] * y2[r * n + c];
        for (int c = 0; c < n; ++c)
          d[r * n + c] = y2[r * n + c] * (g[r * n + c] - dot) / temperature;
      }
      accum(x, dx);
    });
    return out;
  }

  Val log_softmax(Val x, T temperature) {
    Tensor<T> y = log_softmax_rows(value(x), temperature);
    Val out = push(y, needs(x));
    if (!needs(out)) return out;
    set_back(out, [this, x, out, temperature] {
      const Tensor<T>& y2 = value(out);
      const Tensor<T>& g = grad(out);
      const int n = y2.cols();
      const int64_t m = y2.size() / n;
      Tensor<T> dx(y2.shape());
      T* d = dx.data();
      for (int64_t r = 0; r < m; ++r) {
        T gs = 0;
        for (int c = 0; c < n; ++c) gs += g[r * n + c];
        for (int c = 0; c < n; ++c)
          d[r * n + c] = (g[r * n + c] - std::exp(y2[r * n + c]) * gs) / temperature;
      }
      accum(x, dx);
    });
    return out;
  }

  Val layer_norm(Val x, Val gain, Val bias, T eps = T(1e-5)) {
    const Tensor<T>& xv = value(x);
    const int n = xv.cols();
    const int64_t m = xv.size() / n;
    Tensor<T> xhat(xv.shape());
    Tensor<T> inv_sigma({static_cast<int>(m)});
    {
      T* xh = xhat.data();
      T* is = inv_sigma.data();
      const T* p = xv.data();
      for (int64_t r = 0; r < m; ++r) {
        T mu = 0;
        for (int c = 0; c < n; ++c) mu += p[r * n + c];
        mu /= static_cast<T>(n);
        T var = 0;
        for (int c = 0; c < n; ++c) var += (p[r * n + c] - mu) * (p[r * n + c] - mu);
        var /= static_cast<T>(n);
        is[r] = T(1) / std::sqrt(var + eps);
        for (int c = 0; c < n; ++c) xh[r * n + c] = (p[r * n + c] - mu) * is[r];
      }
    }
    Tensor<T> y = tfuse::add(tfuse::mul(xhat, value(gain)), value(bias));
    Val out = push(y, needs(x) || needs(gain) || needs(bias));
    if (!needs(out)) return out;
    set_back(out, [this, x, gain, bias, out, xhat, inv_sigma, n, m] {
      const Tensor<T>& g = grad(out);
      if (needs(bias)) {
        Tensor<T> db({1, n});
        T* d = db.data();
        for (int64_t r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) d[c] += g[r * n + c];
        accum_reduced_raw(bias, db);
      }
      if (needs(gain)) {
        Tensor<T> dg({1, n});
        T* d = dg.data();
        for (int64_t r = 0; r < m; ++r)
          for (int c = 0; c < n; ++c) d[c] += g[r * n + c] * xhat[r * n + c];
        accum_reduced_raw(gain, dg);
      }
      if (needs(x)) {
        const Tensor<T>& gn = value(gain);
        Tensor<T> dx(value(x).shape());
        T* d = dx.data();
        for (int64_t r = 0; r < m; ++r) {
          T s1 = 0, s2 = 0;
          for (int c = 0; c < n; ++c) {
            const T q = g[r * n + c] * gn[c];
            s1 += q;
            s2 += q * xhat[r * n + c];
          }
          s1 /= static_cast<T>(n);
          s2 /= static_cast<T>(n);
          for (int c = 0; c < n; ++c) {
            const T q = g[r * n + c] * gn[c];
            d[r * n + c] = inv_sigma[r] * (q - s1 - xhat[r * n + c] * s2);
          }
        }
        accum(x, dx);
      }
    });
    return out;
  }

  Val gelu(Val x) {
    Val out = push(tfuse::gelu(value(x)), needs(x));
    if (!needs(out)) return out;
    set_back(out, [this, x, out] {
      const Tensor<T>& xv = value(x);
      const Tensor<T>& g = grad(out);
      Tensor<T> dx(xv.shape());
      T* d = dx.data();
      constexpr T inv_sqrt2 = T(0.7071067811865475244);
      constexpr T inv_sqrt2pi = T(0.3989422804014326779);
      for (int64_t i = 0; i < xv.size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        d[i] = g[i] * (cdf + v * pdf);
      }
      accum(x, dx);
    });
    return out;
  }

  Val tanh_op(Val x) {
    Val out = push(tanh_elem(value(x)), needs(x));
    if (!needs(out)) return out;
    set_back(out, [this, x, out] {
      const Tensor<T>& y = value(out);
      const Tensor<T>& g = grad(out);
      Tensor<T> dx(y.shape());
      T* d = dx.data();
      for (int64_t i = 0; i < y.size(); ++i) d[i] = g[i] * (T(1) - y[i] * y[i]);
      accum(x, dx);
    });
    return out;
  }

  Val l2_normalize(Val x, T eps = T(1e-12)) {
    Val out = push(l2_normalize_rows(value(x), eps), needs(x));
    if (!needs(out)) return out;
    set_back(out, [this, x, out, eps] {
      const Tensor<T>& xv = value(x);
      const Tensor<T>& y = value(out);
      const Tensor<T>& g = grad(out);
      const int n = xv.cols();
      const int64_t m = xv.size() / n;
      Tensor<T> dx(xv.shape());
      T* d = dx.data();
      for (int64_t r = 0; r < m; ++r) {
        T ss = 0, dot = 0;
        for (int c = 0; c < n; ++c) {
          ss += xv[r * n + c] * xv[r * n + c];
          dot += g[r * n + c] * y[r * n + c];
        }
        const T inv = T(1) / std::sqrt(ss + eps);
        for (int c = 0; c < n; ++c)
          d[r * n + c] = (g[r * n + c] - y[r * n + c] * dot) * inv;
      }
      accum(x, dx);
    });
    return out;
  }

  Val slice_rows(Val a, int r0, int r1) {
    Val out = push(tfuse::slice_rows(value(a), r0, r1), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, r0, out] {
      const Tensor<T>& g = grad(out);
      Tensor<T> da(value(a).shape());
      std::copy(g.data(), g.data() + g.size(),
                da.data() + static_cast<int64_t>(r0) * value(a).cols());
      accum(a, da);
    });
    return out;
  }

  Val slice_cols(Val a, int c0, int c1) {
    Val out = push(tfuse::slice_cols(value(a), c0, c1), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, c0, c1, out] {
      const Tensor<T>& g = grad(out);
      const int n = value(a).cols(), m = value(a).rows(), w = c1 - c0;
      Tensor<T> da(value(a).shape());
      T* d = da.data();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < w; ++c) d[r * n + c0 + c] = g[r * w + c];
      accum(a, da);
    });
    return out;
  }

  Val concat_rows(std::span<const Val> parts) {
    std::vector<Tensor<T>> vs;
    bool ng = false;
    for (Val p : parts) {
      vs.push_back(value(p));
      ng = ng || needs(p);
    }
    Val out = push(tfuse::concat_rows(std::span<const Tensor<T>>(vs)), ng);
    if (!needs(out)) return out;
    std::vector<Val> ps(parts.begin(), parts.end());
    set_back(out, [this, ps, out] {
      const Tensor<T>& g = grad(out);
      int r = 0;
      for (Val p : ps) {
        const int pr = value(p).rows();
        if (needs(p)) accum(p, tfuse::slice_rows(g, r, r + pr));
        r += pr;
      }
    });
    return out;
  }

  Val concat_cols(std::span<const Val> parts) {
    std::vector<Tensor<T>> vs;
    bool ng = false;
    for (Val p : parts) {
      vs.push_back(value(p));
      ng = ng || needs(p);
    }
    Val out = push(tfuse::concat_cols(std::span<const Tensor<T>>(vs)), ng);
    if (!needs(out)) return out;
    std::vector<Val> ps(parts.begin(), parts.end());
    set_back(out, [this, ps, out] {
      const Tensor<T>& g = grad(out);
      int c = 0;
      for (Val p : ps) {
        const int pc = value(p).cols();
        if (needs(p)) accum(p, tfuse::slice_cols(g, c, c + pc));
        c += pc;
      }
    });
    return out;
  }

  Val select_rows(Val a, std::vector<int> idx) {
    Val out = push(tfuse::select_rows(value(a), std::span<const int>(idx)), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, idx, out] {
      const Tensor<T>& g = grad(out);
      const int n = value(a).cols();
      Tensor<T> da(value(a).shape());
      T* d = da.data();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int c = 0; c < n; ++c)
          d[static_cast<int64_t>(idx[i]) * n + c] += g[static_cast<int64_t>(i) * n + c];
      accum(a, da);
    });
    return out;
  }

  Val sum_all(Val a) {
    Val out = push(Tensor<T>::scalar(tfuse::sum_all(value(a))), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, out] {
      accum(a, Tensor<T>::full(value(a).shape(), grad(out)[0]));
    });
    return out;
  }

  Val mean_all(Val a) {
    Val out = push(Tensor<T>::scalar(tfuse::mean_all(value(a))), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, out] {
      accum(a, Tensor<T>::full(value(a).shape(),
                               grad(out)[0] / static_cast<T>(value(a).size())));
    });
    return out;
  }

  /// Column means -> [1 x d]; pooling over token rows.
  Val mean_rows(Val a) {
    Val out = push(col_mean(value(a)), needs(a));
    if (!needs(out)) return out;
    set_back(out, [this, a, out] {
      const Tensor<T>& g = grad(out);
      const int n = value(a).cols(), m = value(a).rows();
      Tensor<T> da(value(a).shape());
      T* d = da.data();
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) d[r * n + c] = g[c] / static_cast<T>(m);
      accum(a, da);
    });
    return out;
  }

  /// Elementwise mean of same-shape tensors; the cross-modal bottleneck merge.
  Val average(std::span<const Val> parts) {
    check(!parts.empty(), Errc::usage, "average: empty list");
    Tensor<T> acc = value(parts[0]);
    for (size_t i = 1; i < parts.size(); ++i) acc = tfuse::add(acc, value(parts[i]));
    acc = tfuse::scale(acc, T(1) / static_cast<T>(parts.size()));
    bool ng = false;
    for (Val p : parts) ng = ng || needs(p);
    Val out = push(std::move(acc), ng);
    if (!needs(out)) return out;
    std::vector<Val> ps(parts.begin(), parts.end());
    set_back(out, [this, ps, out] {
      Tensor<T> share = tfuse::scale(grad(out), T(1) / static_cast<T>(ps.size()));
      for (Val p : ps)
        if (needs(p)) accum(p, share);
    });
    return out;
  }

  // ---- backward ----

  void backward(Val loss, T seed = T(1)) {
    check(!ran_backward_, Errc::usage, "backward() already ran on this graph");
    check(value(loss).size() == 1, Errc::usage, "backward() requires a scalar loss");
    ran_backward_ = true;
    auto& ln = nodes_[static_cast<size_t>(loss)];
    if (!ln.needs_grad) return;  // loss unreachable from any parameter
    ln.grad = Tensor<T>::scalar(seed);
    for (int i = loss; i >= 0; --i) {
      Node& nd = nodes_[static_cast<size_t>(i)];
      if (!nd.needs_grad || nd.grad.empty()) continue;
      if (nd.back) nd.back();
      if (nd.sink != nullptr) nd.sink->add(nd.slot, nd.grad);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    GradStore<T>* sink = nullptr;
    int slot = -1;
    std::function<void()> back;
  };

  Val push(Tensor<T> v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), needs_grad, nullptr, -1, {}});
    return static_cast<Val>(nodes_.size()) - 1;
  }

  bool needs(Val v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }

  const Tensor<T>& grad(Val v) const { return nodes_[static_cast<size_t>(v)].grad; }

  void set_back(Val v, std::function<void()> fn) {
    nodes_[static_cast<size_t>(v)].back = std::move(fn);
  }

  void accum(Val v, const Tensor<T>& delta) {
    Node& nd = nodes_[static_cast<size_t>(v)];
    if (nd.grad.empty()) {
      nd.grad = Tensor<T>(nd.value.shape());
    }
    T* p = nd.grad.data();
    const T* d = delta.data();
    for (int64_t i = 0; i < nd.grad.size(); ++i) p[i] += d[i];
  }

  // Gradient of a broadcast operand: reduce delta down to the operand's shape.
  void accum_reduced(Val v, const Tensor<T>& delta) {
    const Tensor<T>& bv = value(v);
    if (bv.size() == delta.size()) {
      accum(v, delta);
      return;
    }
    if (bv.size() == 1) {
      accum(v, Tensor<T>::scalar(tfuse::sum_all(delta)));
      return;
    }
    const int n = static_cast<int>(bv.size());
    Tensor<T> red({1, n});
    T* d = red.data();
    for (int64_t r = 0; r < delta.size() / n; ++r)
      for (int c = 0; c < n; ++c) d[c] += delta[r * n + c];
    accum_reduced_raw(v, red);
  }

  void accum_reduced_raw(Val v, const Tensor<T>& red) {
    Node& nd = nodes_[static_cast<size_t>(v)];
    if (nd.grad.empty()) {
      nd.grad = Tensor<T>(nd.value.shape());
    }
    T* p = nd.grad.data();
    const T* d = red.data();
    for (int64_t i = 0; i < nd.grad.size(); ++i) p[i] += d[i];
  }

  struct PairHash {
    size_t operator()(const std::pair<const void*, int>& k) const {
      return std::hash<const void*>()(k.first) ^ (static_cast<size_t>(k.second) * 0x9e3779b9u);
    }
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::pair<const void*, int>, Val, PairHash> leaf_cache_;
  bool ran_backward_ = false;
};

}  // namespace tfuse
