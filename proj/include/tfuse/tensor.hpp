// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tfuse/common.hpp"

namespace tfuse {

/// Dense row-major tensor over f32 or f64. Storage is shared on copy and
/// treated as immutable once a tensor is handed to another owner; mutation is
/// only legal while the buffer is uniquely held (enforced in data()).
template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(checked_count(shape_), T(0))) {}

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data(), t.data() + t.size(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    check(static_cast<int64_t>(values.size()) == checked_count(t.shape_), Errc::shape,
          "tensor value count does not match shape");
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  bool empty() const { return !data_; }

  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  // Row/col view of the trailing two-axis layout: 1-D tensors count as one row.
  int rows() const { return ndim() <= 1 ? 1 : dim(0); }
  int cols() const { return ndim() == 0 ? 0 : dim(ndim() - 1); }

  const T* data() const { return data_->data(); }

  T* data() {
    check(data_ && data_.use_count() == 1, Errc::usage,
          "attempt to mutate a shared tensor buffer");
    return data_->data();
  }

  T operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
  }

 private:
  static int64_t checked_count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      check(d > 0, Errc::shape, "tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class T>
bool all_finite(const Tensor<T>& t) {
  const T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

namespace detail {
template <class T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const EigenMat<T>>;
template <class T>
using Map = Eigen::Map<EigenMat<T>>;

template <class T>
MapC<T> as_mat(const Tensor<T>& t) {
  return MapC<T>(t.data(), t.rows(), t.cols());
}
}  // namespace detail

/// a [m x k] * b [k x n] with optional transposes applied to the stored layout.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  const int am = trans_a ? a.cols() : a.rows();
  const int ak = trans_a ? a.rows() : a.cols();
  const int bk = trans_b ? b.cols() : b.rows();
  const int bn = trans_b ? b.rows() : b.cols();
  check(ak == bk, Errc::shape,
        "matmul inner dims disagree: " + a.shape_str() + (trans_a ? "^T" : "") + " * " +
            b.shape_str() + (trans_b ? "^T" : ""));
  Tensor<T> out({am, bn});
  detail::Map<T> o(out.data(), am, bn);
  auto ma = detail::as_mat(a);
  auto mb = detail::as_mat(b);
  if (!trans_a && !trans_b)
    o.noalias() = ma * mb;
  else if (!trans_a && trans_b)
    o.noalias() = ma * mb.transpose();
  else if (trans_a && !trans_b)
    o.noalias() = ma.transpose() * mb;
  else
    o.noalias() = ma.transpose() * mb.transpose();
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out({a.cols(), a.rows()});
  detail::Map<T>(out.data(), a.cols(), a.rows()).noalias() =
      detail::as_mat(a).transpose();
  return out;
}

namespace detail {
// b may equal a's shape, or be a single row broadcast over a's rows, or a scalar.
template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* what) {
  Tensor<T> out(a.shape());
  T* o = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  if (a.same_shape(b) || a.size() == b.size()) {
    for (int64_t i = 0; i < a.size(); ++i) o[i] = f(pa[i], pb[i]);
  } else if (b.size() == 1) {
    for (int64_t i = 0; i < a.size(); ++i) o[i] = f(pa[i], pb[0]);
  } else if (b.size() == a.cols() && a.size() % b.size() == 0) {
    const int n = a.cols();
    for (int64_t r = 0; r < a.size() / n; ++r)
      for (int c = 0; c < n; ++c) o[r * n + c] = f(pa[r * n + c], pb[c]);
  } else {
    fail(Errc::shape, std::string(what) + ": incompatible shapes " + a.shape_str() +
                          " vs " + b.shape_str());
  }
  return out;
}
}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x - y; }, "sub");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  T* o = out.data();
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i) o[i] = p[i] * c;
  return out;
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& a, F&& f) {
  Tensor<T> out(a.shape());
  T* o = out.data();
  const T* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i) o[i] = f(p[i]);
  return out;
}

template <class T>
T sum_all(const Tensor<T>& a) {
  const T* p = a.data();
  T s = 0;
  for (int64_t i = 0; i < a.size(); ++i) s += p[i];
  return s;
}

template <class T>
T mean_all(const Tensor<T>& a) {
  return sum_all(a) / static_cast<T>(a.size());
}

/// Column means -> [1 x cols].
template <class T>
Tensor<T> col_mean(const Tensor<T>& a) {
  const int n = a.cols(), m = a.rows();
  Tensor<T> out({1, n});
  T* o = out.data();
  const T* p = a.data();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) o[c] += p[r * n + c];
  for (int c = 0; c < n; ++c) o[c] /= static_cast<T>(m);
  return out;
}

/// Numerically-stable softmax over the trailing axis.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, T temperature) {
  check(temperature > T(0), Errc::config, "softmax temperature must be positive");
  const int n = x.cols();
  const int64_t m = x.size() / n;
  Tensor<T> out(x.shape());
  T* o = out.data();
  const T* p = x.data();
  for (int64_t r = 0; r < m; ++r) {
    const T* row = p + r * n;
    T* orow = o + r * n;
    T mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    T z = 0;
    for (int c = 0; c < n; ++c) {
      orow[c] = std::exp((row[c] - mx) / temperature);
      z += orow[c];
    }
    for (int c = 0; c < n; ++c) orow[c] /= z;
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x, T temperature) {
  check(temperature > T(0), Errc::config, "softmax temperature must be positive");
  const int n = x.cols();
  const int64_t m = x.size() / n;
  Tensor<T> out(x.shape());
  T* o = out.data();
  const T* p = x.data();
  for (int64_t r = 0; r < m; ++r) {
    const T* row = p + r * n;
    T* orow = o + r * n;
    T mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    T z = 0;
    for (int c = 0; c < n; ++c) z += std::exp((row[c] - mx) / temperature);
    const T logz = std::log(z);
    for (int c = 0; c < n; ++c) orow[c] = (row[c] - mx) / temperature - logz;
  }
  return out;
}

/// Per-row standardization followed by elementwise affine. gain/bias are [d].
/// Epsilon sits inside the sqrt so constant rows map to bias.
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  const int n = x.cols();
  const int64_t m = x.size() / n;
  check(gain.size() == n && bias.size() == n, Errc::shape, "layer_norm affine dims");
  Tensor<T> out(x.shape());
  T* o = out.data();
  const T* p = x.data();
  const T* g = gain.data();
  const T* b = bias.data();
  for (int64_t r = 0; r < m; ++r) {
    const T* row = p + r * n;
    T mu = 0;
    for (int c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var = 0;
    for (int c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int c = 0; c < n; ++c) o[r * n + c] = (row[c] - mu) * inv * g[c] + b[c];
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return map(x, [](T v) { return v * T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2)))); });
}

template <class T>
Tensor<T> tanh_elem(const Tensor<T>& x) {
  return map(x, [](T v) { return std::tanh(v); });
}

template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps = T(1e-12)) {
  const int n = x.cols();
  const int64_t m = x.size() / n;
  Tensor<T> out(x.shape());
  T* o = out.data();
  const T* p = x.data();
  for (int64_t r = 0; r < m; ++r) {
    T ss = 0;
    for (int c = 0; c < n; ++c) ss += p[r * n + c] * p[r * n + c];
    const T inv = T(1) / std::sqrt(ss + eps);
    for (int c = 0; c < n; ++c) o[r * n + c] = p[r * n + c] * inv;
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  check(!parts.empty(), Errc::usage, "concat_rows: empty list");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& t : parts) {
    check(t.cols() == n, Errc::shape, "concat_rows: column mismatch");
    m += t.rows();
  }
  Tensor<T> out({m, n});
  T* o = out.data();
  for (const auto& t : parts) {
    std::copy(t.data(), t.data() + t.size(), o);
    o += t.size();
  }
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  check(0 <= r0 && r0 < r1 && r1 <= a.rows(), Errc::shape, "slice_rows range");
  const int n = a.cols();
  Tensor<T> out({r1 - r0, n});
  std::copy(a.data() + static_cast<int64_t>(r0) * n, a.data() + static_cast<int64_t>(r1) * n,
            out.data());
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  check(0 <= c0 && c0 < c1 && c1 <= a.cols(), Errc::shape, "slice_cols range");
  const int n = a.cols(), m = a.rows(), w = c1 - c0;
  Tensor<T> out({m, w});
  T* o = out.data();
  const T* p = a.data();
  for (int r = 0; r < m; ++r)
    std::copy(p + r * n + c0, p + r * n + c1, o + r * w);
  return out;
}

template <class T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  check(!parts.empty(), Errc::usage, "concat_cols: empty list");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& t : parts) {
    check(t.rows() == m, Errc::shape, "concat_cols: row mismatch");
    n += t.cols();
  }
  Tensor<T> out({m, n});
  T* o = out.data();
  for (int r = 0; r < m; ++r) {
    int c = 0;
    for (const auto& t : parts) {
      std::copy(t.data() + r * t.cols(), t.data() + (r + 1) * t.cols(), o + r * n + c);
      c += t.cols();
    }
  }
  return out;
}

template <class T>
Tensor<T> select_rows(const Tensor<T>& a, std::span<const int> idx) {
  const int n = a.cols();
  Tensor<T> out({static_cast<int>(idx.size()), n});
  T* o = out.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < a.rows(), Errc::shape, "select_rows index out of range");
    std::copy(a.data() + static_cast<int64_t>(idx[i]) * n,
              a.data() + static_cast<int64_t>(idx[i] + 1) * n, o + i * n);
  }
  return out;
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.size() == b.size(), Errc::shape, "max_abs_diff size mismatch");
  T m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
Tensor<T> random_normal(std::vector<int> shape, Rng& rng, T sigma) {
  Tensor<T> t(std::move(shape));
  T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(rng.normal()) * sigma;
  return t;
}

template <class T>
Tensor<T> trunc_normal_init(std::vector<int> shape, Rng& rng, T sigma) {
  Tensor<T> t(std::move(shape));
  T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(rng.trunc_normal(sigma));
  return t;
}

template <class U, class T>
Tensor<U> cast(const Tensor<T>& a) {
  Tensor<U> out(a.shape());
  U* o = out.data();
  for (int64_t i = 0; i < a.size(); ++i) o[i] = static_cast<U>(a[i]);
  return out;
}

}  // namespace tfuse
