// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tfuse/streams.hpp"
#include "tfuse/tensor.hpp"

namespace tfuse {

/// Square crop; size -1 selects the centered maximal square.
struct CropRect {
  int x = -1, y = -1, size = -1;
};

struct FeaturizeConfig {
  int image_size = 224;
  int image_patch = 16;
  int image_stride = 5;
  CropRect crop;

  int audio_rate = 48000;
  // 0.5625 s: the window length that makes the 5 ms / 2.5 ms STFT come out
  // at exactly 224 frames.
  int audio_samples = 27000;
  int stft_win = 240;   // 5 ms Hamming window
  int stft_hop = 120;   // 2.5 ms hop
  // Frames are zero-padded well past the window so the 128 mel triangles,
  // which get narrower than one raw bin at the low end, sample a smoothly
  // interpolated spectrum.
  int n_fft = 1024;
  int n_mels = 128;
  double mel_fmin = 0.0;
  double mel_fmax = 24000.0;

  int imu_samples = 220;       // 0.55 s at 400 Hz
  int pressure_samples = 220;  // 1.1 s at 200 Hz
  int series_len = 224;        // temporal length after resampling
  int series_patch = 16;

  double eps = 1e-6;

  WindowSpec window_spec() const {
    return WindowSpec{image_stride, audio_samples, imu_samples, pressure_samples};
  }

  int stft_frames() const { return (audio_samples - stft_win) / stft_hop + 1; }
  int image_tokens() const { return (image_size / image_patch) * (image_size / image_patch); }
  int audio_tokens() const {
    return (stft_frames() / image_patch) * (2 * n_mels / image_patch);
  }
  int series_tokens() const { return series_len / series_patch; }

  int patch_dim(Modality m) const {
    switch (m) {
      case Modality::image: return image_patch * image_patch * 6;
      case Modality::audio: return image_patch * image_patch;
      case Modality::imu: return series_patch * 3;
      case Modality::pressure: return series_patch;
    }
    return 0;
  }

  int tokens(Modality m) const {
    switch (m) {
      case Modality::image: return image_tokens();
      case Modality::audio: return audio_tokens();
      case Modality::imu: return series_tokens();
      case Modality::pressure: return series_tokens();
    }
    return 0;
  }
};

/// Per-sequence channel statistics for IMU/pressure standardization. When a
/// window is featurized without stats, its own statistics are used.
struct SeqStats {
  std::array<double, 3> imu_mean{0, 0, 0};
  std::array<double, 3> imu_std{1, 1, 1};
  double pressure_mean = 0;
  double pressure_std = 1;
};

// ---------------------------------------------------------------------------
// image

/// Crop both frames, bilinear-resize to target, scale to [0,1], and
/// channel-concatenate: channels 0..2 anchor frame, 3..5 the strided frame.
template <class T>
Tensor<T> preprocess_image(const ImageFrame& now, const ImageFrame& prev,
                           const FeaturizeConfig& cfg) {
  check(now.width == prev.width && now.height == prev.height, Errc::shape,
        "image pair resolution mismatch");
  CropRect c = cfg.crop;
  if (c.size < 0) {
    c.size = std::min(now.width, now.height);
    c.x = (now.width - c.size) / 2;
    c.y = (now.height - c.size) / 2;
  }
  check(c.x >= 0 && c.y >= 0 && c.size > 0 && c.x + c.size <= now.width &&
            c.y + c.size <= now.height,
        Errc::config, "crop rectangle outside frame bounds");

  const int s = cfg.image_size;
  Tensor<T> out({s, s, 6});
  T* o = out.data();
  const double scale = static_cast<double>(c.size) / s;
  const std::array<const ImageFrame*, 2> frames{&now, &prev};
  for (int f = 0; f < 2; ++f) {
    const ImageFrame& fr = *frames[static_cast<size_t>(f)];
    for (int i = 0; i < s; ++i) {
      double v = (i + 0.5) * scale - 0.5;
      v = std::clamp(v, 0.0, static_cast<double>(c.size - 1));
      const int r0 = static_cast<int>(v);
      const int r1 = std::min(r0 + 1, c.size - 1);
      const double wr = v - r0;
      for (int j = 0; j < s; ++j) {
        double u = (j + 0.5) * scale - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(c.size - 1));
        const int c0 = static_cast<int>(u);
        const int c1 = std::min(c0 + 1, c.size - 1);
        const double wc = u - c0;
        for (int ch = 0; ch < 3; ++ch) {
          auto px = [&](int rr, int cc) {
            return static_cast<double>(
                fr.rgb[(static_cast<size_t>(c.y + rr) * fr.width + (c.x + cc)) * 3 +
                       static_cast<size_t>(ch)]);
          };
          const double val = (1 - wr) * ((1 - wc) * px(r0, c0) + wc * px(r0, c1)) +
                             wr * ((1 - wc) * px(r1, c0) + wc * px(r1, c1));
          o[(static_cast<int64_t>(i) * s + j) * 6 + f * 3 + ch] =
              static_cast<T>(val / 255.0);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// audio

/// In-place iterative radix-2 FFT; n must be a power of two.
template <class T>
void fft_radix2(std::vector<T>& re, std::vector<T>& im) {
  const size_t n = re.size();
  check(n == im.size() && n > 0 && (n & (n - 1)) == 0, Errc::usage,
        "fft length must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const T wr = static_cast<T>(std::cos(ang));
    const T wi = static_cast<T>(std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      T cr = 1, ci = 0;
      for (size_t k = 0; k < len / 2; ++k) {
        const T ur = re[i + k], ui = im[i + k];
        const T vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const T vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const T ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

template <class T>
std::vector<T> hamming_window(int n) {
  std::vector<T> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] =
        static_cast<T>(0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n - 1)));
  return w;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

namespace detail {
// Integral of the rising edge (f-f0)/(f1-f0) over [lo,hi] clipped to [f0,f1].
inline double tri_up(double lo, double hi, double f0, double f1) {
  lo = std::max(lo, f0);
  hi = std::min(hi, f1);
  if (hi <= lo) return 0.0;
  return ((hi - f0) * (hi - f0) - (lo - f0) * (lo - f0)) / (2.0 * (f1 - f0));
}
inline double tri_dn(double lo, double hi, double f1, double f2) {
  lo = std::max(lo, f1);
  hi = std::min(hi, f2);
  if (hi <= lo) return 0.0;
  return ((f2 - lo) * (f2 - lo) - (f2 - hi) * (f2 - hi)) / (2.0 * (f2 - f1));
}
}  // namespace detail

/// Triangular mel filterbank [n_mels x n_fft/2+1]. Triangles are integrated
/// over each FFT bin's width (so narrow low-frequency filters never come out
/// empty) and bandwidth-normalized.
template <class T>
Tensor<T> mel_filterbank(const FeaturizeConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const double df = static_cast<double>(cfg.audio_rate) / cfg.n_fft;
  const double m_lo = hz_to_mel(cfg.mel_fmin), m_hi = hz_to_mel(cfg.mel_fmax);
  Tensor<T> fb({cfg.n_mels, bins});
  T* o = fb.data();
  for (int i = 0; i < cfg.n_mels; ++i) {
    const double fl = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
    const double fc = mel_to_hz(m_lo + (m_hi - m_lo) * (i + 1) / (cfg.n_mels + 1));
    const double fr = mel_to_hz(m_lo + (m_hi - m_lo) * (i + 2) / (cfg.n_mels + 1));
    const double norm = 2.0 / (fr - fl);
    for (int k = 0; k < bins; ++k) {
      const double lo = k * df - df / 2, hi = k * df + df / 2;
      const double a = detail::tri_up(lo, hi, fl, fc) + detail::tri_dn(lo, hi, fc, fr);
      o[static_cast<int64_t>(i) * bins + k] = static_cast<T>(a / df * norm);
    }
  }
  return fb;
}

/// STFT power -> mel -> log(x+eps). Output [frames x n_mels], frame-major.
template <class T>
Tensor<T> log_mel_spectrogram(std::span<const float> samples, const FeaturizeConfig& cfg,
                              const Tensor<T>* prebuilt_fb = nullptr) {
  check(static_cast<int>(samples.size()) == cfg.audio_samples, Errc::shape,
        "log_mel: expected " + std::to_string(cfg.audio_samples) + " samples, got " +
            std::to_string(samples.size()));
  const int frames = cfg.stft_frames();
  const int bins = cfg.n_fft / 2 + 1;
  const Tensor<T> fb = prebuilt_fb ? *prebuilt_fb : mel_filterbank<T>(cfg);
  const std::vector<T> win = hamming_window<T>(cfg.stft_win);

  Tensor<T> power({frames, bins});
  T* pw = power.data();
  std::vector<T> re(static_cast<size_t>(cfg.n_fft)), im(static_cast<size_t>(cfg.n_fft));
  for (int t = 0; t < frames; ++t) {
    std::fill(re.begin(), re.end(), T(0));
    std::fill(im.begin(), im.end(), T(0));
    const int off = t * cfg.stft_hop;
    for (int i = 0; i < cfg.stft_win; ++i)
      re[static_cast<size_t>(i)] =
          static_cast<T>(samples[static_cast<size_t>(off + i)]) * win[static_cast<size_t>(i)];
    fft_radix2(re, im);
    for (int k = 0; k < bins; ++k)
      pw[static_cast<int64_t>(t) * bins + k] =
          re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
          im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
  }

  Tensor<T> mel = matmul(power, fb, false, true);  // [frames x n_mels]
  return map(mel, [&](T v) { return std::log(v + static_cast<T>(cfg.eps)); });
}

// ---------------------------------------------------------------------------
// time series

/// (x - mean) / std per channel; std clamped to eps.
template <class T>
Tensor<T> standardize(const Tensor<T>& x, std::span<const double> mean,
                      std::span<const double> stdev, double eps = 1e-6) {
  const int ch = x.cols();
  check(static_cast<int>(mean.size()) == ch && static_cast<int>(stdev.size()) == ch,
        Errc::shape, "standardize: channel stats mismatch");
  Tensor<T> out(x.shape());
  T* o = out.data();
  const T* p = x.data();
  for (int64_t r = 0; r < x.size() / ch; ++r)
    for (int c = 0; c < ch; ++c) {
      const double s = std::max(stdev[static_cast<size_t>(c)], eps);
      o[r * ch + c] = static_cast<T>((p[r * ch + c] - mean[static_cast<size_t>(c)]) / s);
    }
  return out;
}

template <class T>
void channel_stats(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& stdev) {
  const int ch = x.cols();
  const int64_t n = x.size() / ch;
  mean.assign(static_cast<size_t>(ch), 0.0);
  stdev.assign(static_cast<size_t>(ch), 0.0);
  for (int64_t r = 0; r < n; ++r)
    for (int c = 0; c < ch; ++c) mean[static_cast<size_t>(c)] += x[r * ch + c];
  for (int c = 0; c < ch; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(n);
  for (int64_t r = 0; r < n; ++r)
    for (int c = 0; c < ch; ++c) {
      const double d = x[r * ch + c] - mean[static_cast<size_t>(c)];
      stdev[static_cast<size_t>(c)] += d * d;
    }
  for (int c = 0; c < ch; ++c)
    stdev[static_cast<size_t>(c)] = std::sqrt(stdev[static_cast<size_t>(c)] / static_cast<double>(n));
}

/// Linear interpolation onto `target` uniform points over the same span;
/// endpoints are preserved exactly.
template <class T>
Tensor<T> resample_linear(const Tensor<T>& x, int target) {
  const int n = x.rows(), ch = x.cols();
  check(n >= 2, Errc::shape, "resample needs at least two samples");
  Tensor<T> out({target, ch});
  T* o = out.data();
  const T* p = x.data();
  for (int i = 0; i < target; ++i) {
    const double pos = static_cast<double>(i) * (n - 1) / (target - 1);
    const int i0 = std::min(static_cast<int>(pos), n - 2);
    const double w = pos - i0;
    for (int c = 0; c < ch; ++c)
      o[static_cast<int64_t>(i) * ch + c] =
          static_cast<T>((1.0 - w) * p[static_cast<int64_t>(i0) * ch + c] +
                         w * p[static_cast<int64_t>(i0 + 1) * ch + c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// patch extraction

/// Non-overlapping patch grid over an [H x W x C] map, row-major grid order,
/// each patch flattened row-major with channels last.
template <class T>
Tensor<T> patchify_2d(const Tensor<T>& img, int patch) {
  check(img.ndim() == 3, Errc::shape, "patchify_2d expects H x W x C");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  check(h % patch == 0 && w % patch == 0, Errc::shape, "map not divisible into patches");
  const int gh = h / patch, gw = w / patch;
  Tensor<T> out({gh * gw, patch * patch * c});
  T* o = out.data();
  const T* p = img.data();
  int64_t t = 0;
  for (int gi = 0; gi < gh; ++gi)
    for (int gj = 0; gj < gw; ++gj) {
      for (int pi = 0; pi < patch; ++pi)
        for (int pj = 0; pj < patch; ++pj)
          for (int ch = 0; ch < c; ++ch)
            o[t++] = p[((static_cast<int64_t>(gi) * patch + pi) * w +
                        (static_cast<int64_t>(gj) * patch + pj)) *
                           c +
                       ch];
    }
  return out;
}

/// 1-D temporal patches over [T x C]: `patch` consecutive steps, step-major.
template <class T>
Tensor<T> patchify_series(const Tensor<T>& x, int patch) {
  const int n = x.rows(), c = x.cols();
  check(n % patch == 0, Errc::shape, "series not divisible into patches");
  Tensor<T> out({n / patch, patch * c});
  std::copy(x.data(), x.data() + x.size(), out.data());  // same memory order
  return out;
}

/// Inverse of patchify_2d; round-trip is exact.
template <class T>
Tensor<T> unpatchify_2d(const Tensor<T>& tokens, int h, int w, int c, int patch) {
  Tensor<T> out({h, w, c});
  T* o = out.data();
  const T* p = tokens.data();
  const int gw = w / patch;
  int64_t t = 0;
  for (int gi = 0; gi < h / patch; ++gi)
    for (int gj = 0; gj < gw; ++gj)
      for (int pi = 0; pi < patch; ++pi)
        for (int pj = 0; pj < patch; ++pj)
          for (int ch = 0; ch < c; ++ch)
            o[((static_cast<int64_t>(gi) * patch + pi) * w +
               (static_cast<int64_t>(gj) * patch + pj)) *
                  c +
              ch] = p[t++];
  return out;
}

// ---------------------------------------------------------------------------
// full bundle

template <class T>
struct FeatureBundle {
  Tensor<T> image;     // [196 x 1536]
  Tensor<T> audio;     // [224 x 256]
  Tensor<T> imu;       // [14 x 48]
  Tensor<T> pressure;  // [14 x 16]

  const Tensor<T>& of(Modality m) const {
    switch (m) {
      case Modality::image: return image;
      case Modality::audio: return audio;
      case Modality::imu: return imu;
      case Modality::pressure: return pressure;
    }
    fail(Errc::usage, "bad modality");
  }
};

template <class T>
Tensor<T> featurize_audio(const SyncedSample& s, const FeaturizeConfig& cfg,
                          const Tensor<T>* fb = nullptr) {
  // Per-mic log-mel, standardized over the window's own map ("the sequence"
  // for an audio window), then concatenated along the mel axis: 224 x 256.
  std::array<Tensor<T>, 2> mels;
  const std::array<const std::vector<float>*, 2> mics{&s.audio_mic0, &s.audio_mic1};
  for (int m = 0; m < 2; ++m) {
    Tensor<T> lm = log_mel_spectrogram<T>(*mics[static_cast<size_t>(m)], cfg, fb);
    const double mu = mean_all(lm);
    double var = 0;
    for (int64_t i = 0; i < lm.size(); ++i) var += (lm[i] - mu) * (lm[i] - mu);
    var /= static_cast<double>(lm.size());
    const double sd = std::max(std::sqrt(var), cfg.eps);
    mels[static_cast<size_t>(m)] = map(lm, [&](T v) { return static_cast<T>((v - mu) / sd); });
  }
  std::array<Tensor<T>, 2> parts{mels[0], mels[1]};
  return concat_cols(std::span<const Tensor<T>>(parts));
}

template <class T>
FeatureBundle<T> featurize_sample(const SyncedSample& s, const FeaturizeConfig& cfg,
                                  const SeqStats* stats = nullptr,
                                  const Tensor<T>* fb = nullptr) {
  FeatureBundle<T> out;

  Tensor<T> img = preprocess_image<T>(s.image_now, s.image_prev, cfg);
  out.image = patchify_2d(img, cfg.image_patch);

  Tensor<T> audio_map = featurize_audio<T>(s, cfg, fb);
  Tensor<T> audio_3d = Tensor<T>::from({cfg.stft_frames(), 2 * cfg.n_mels, 1},
                                       std::vector<T>(audio_map.data(),
                                                      audio_map.data() + audio_map.size()));
  out.audio = patchify_2d(audio_3d, cfg.image_patch);

  check(static_cast<int>(s.imu.size()) == cfg.imu_samples * 3, Errc::shape,
        "imu window size mismatch");
  Tensor<T> imu = Tensor<T>::from({cfg.imu_samples, 3},
                                  std::vector<T>(s.imu.begin(), s.imu.end()));
  std::vector<double> m, sd;
  if (stats) {
    m.assign(stats->imu_mean.begin(), stats->imu_mean.end());
    sd.assign(stats->imu_std.begin(), stats->imu_std.end());
  } else {
    channel_stats(imu, m, sd);
  }
  imu = standardize(imu, m, sd, cfg.eps);
  out.imu = patchify_series(resample_linear(imu, cfg.series_len), cfg.series_patch);

  check(static_cast<int>(s.pressure.size()) == cfg.pressure_samples, Errc::shape,
        "pressure window size mismatch");
  Tensor<T> pr = Tensor<T>::from({cfg.pressure_samples, 1},
                                 std::vector<T>(s.pressure.begin(), s.pressure.end()));
  if (stats) {
    m.assign({stats->pressure_mean});
    sd.assign({stats->pressure_std});
  } else {
    channel_stats(pr, m, sd);
  }
  pr = standardize(pr, m, sd, cfg.eps);
  out.pressure = patchify_series(resample_linear(pr, cfg.series_len), cfg.series_patch);

  return out;
}

}  // namespace tfuse
