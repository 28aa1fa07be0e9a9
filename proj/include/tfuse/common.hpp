// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tfuse {

/// Error categories surfaced by the toolkit. The CLI maps them to exit codes.
enum class Errc {
  usage,      // bad arguments or call order
  config,     // invalid or inconsistent configuration
  shape,      // tensor dimension mismatch
  data,       // malformed or missing data on disk
  ordering,   // non-monotonic timestamps
  not_ready,  // a stream lacks history for the requested window
  numeric,    // NaN/Inf detected during training
  io,         // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void check(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
  return h;
}

/// Deterministic random stream. Gaussian draws use Box-Muller on top of
/// mt19937_64 so results are bit-identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0,n)
  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  // Normal clipped to +-2 sigma by rejection.
  double trunc_normal(double sigma) {
    double z = 0.0;
    do {
      z = normal();
    } while (std::abs(z) > 2.0);
    return z * sigma;
  }

  /// Independent substream for a named purpose; stable under call-site reordering.
  Rng fork(std::string_view tag) const {
    return Rng(splitmix64(seed_hashable() ^ fnv1a(tag)));
  }

  Rng fork(std::string_view tag, uint64_t index) const {
    return Rng(splitmix64(splitmix64(seed_hashable() ^ fnv1a(tag)) + index));
  }

 private:
  // fork() must not advance this stream; hash the engine state snapshot.
  uint64_t seed_hashable() const {
    std::mt19937_64 copy = gen_;
    return copy();
  }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace tfuse
