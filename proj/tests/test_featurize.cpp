// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "support/testutil.hpp"
#include "tfuse/featurize.hpp"

using namespace tfuse;

namespace {

ImageFrame solid_frame(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  ImageFrame f;
  f.width = w;
  f.height = h;
  f.rgb.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < f.rgb.size(); i += 3) {
    f.rgb[i] = r;
    f.rgb[i + 1] = g;
    f.rgb[i + 2] = b;
  }
  return f;
}

}  // namespace

TEST_CASE("constant frames give a constant image tensor") {
  FeaturizeConfig cfg;
  ImageFrame a = solid_frame(300, 260, 120, 120, 120);
  ImageFrame b = solid_frame(300, 260, 40, 40, 40);
  Tensord t = preprocess_image<double>(a, b, cfg);
  REQUIRE(t.shape() == std::vector<int>{224, 224, 6});
  for (int64_t i = 0; i < t.size(); i += 6) {
    REQUIRE(t[i] == Catch::Approx(120.0 / 255).margin(1e-12));
    REQUIRE(t[i + 3] == Catch::Approx(40.0 / 255).margin(1e-12));
  }
}

TEST_CASE("bilinear resize at exact half scale equals 2x2 block averages") {
  Rng rng(21);
  ImageFrame a;
  a.width = 448;
  a.height = 448;
  a.rgb.resize(448 * 448 * 3);
  for (auto& v : a.rgb) v = static_cast<uint8_t>(rng.uniform_int(256));
  FeaturizeConfig cfg;  // default crop = centered 448 square = whole frame
  Tensord t = preprocess_image<double>(a, a, cfg);
  for (int probe = 0; probe < 500; ++probe) {
    const int i = rng.uniform_int(224), j = rng.uniform_int(224), c = rng.uniform_int(3);
    double avg = 0;
    for (int di = 0; di < 2; ++di)
      for (int dj = 0; dj < 2; ++dj)
        avg += a.rgb[((2 * i + di) * 448 + (2 * j + dj)) * 3 + c];
    avg /= 4 * 255.0;
    REQUIRE(t[(static_cast<int64_t>(i) * 224 + j) * 6 + c] == Catch::Approx(avg).margin(1e-12));
  }
}

TEST_CASE("crop outside frame bounds is a parameter error") {
  FeaturizeConfig cfg;
  cfg.crop = CropRect{100, 100, 400};
  ImageFrame a = solid_frame(300, 300, 1, 2, 3);
  REQUIRE_THROWS_AS(preprocess_image<double>(a, a, cfg), Error);
}

TEST_CASE("patch arithmetic: 196 image patches of dim 1536") {
  FeaturizeConfig cfg;
  REQUIRE(cfg.image_tokens() == 196);
  REQUIRE(cfg.patch_dim(Modality::image) == 1536);
  REQUIRE(cfg.audio_tokens() == 224);
  REQUIRE(cfg.patch_dim(Modality::audio) == 256);
  REQUIRE(cfg.series_tokens() == 14);
  REQUIRE(cfg.patch_dim(Modality::imu) == 48);
  REQUIRE(cfg.patch_dim(Modality::pressure) == 16);
}

TEST_CASE("stft frame count arithmetic") {
  FeaturizeConfig cfg;
  REQUIRE((cfg.audio_samples - cfg.stft_win) / cfg.stft_hop + 1 == 224);
  REQUIRE(cfg.stft_frames() == 224);
}

TEST_CASE("silence maps every cell to log(eps)") {
  FeaturizeConfig cfg;
  std::vector<float> silence(static_cast<size_t>(cfg.audio_samples), 0.0f);
  Tensord lm = log_mel_spectrogram<double>(silence, cfg);
  REQUIRE(lm.shape() == std::vector<int>{224, 128});
  for (int64_t i = 0; i < lm.size(); ++i)
    REQUIRE(lm[i] == Catch::Approx(std::log(1e-6)).margin(1e-12));
}

TEST_CASE("wrong audio length is a shape error") {
  FeaturizeConfig cfg;
  std::vector<float> bad(100, 0.0f);
  REQUIRE_THROWS_AS(log_mel_spectrogram<double>(bad, cfg), Error);
}

TEST_CASE("pure 1 kHz tone peaks at the mel bin nearest 1 kHz in every frame") {
  FeaturizeConfig cfg;
  std::vector<float> tone(static_cast<size_t>(cfg.audio_samples));
  for (size_t i = 0; i < tone.size(); ++i)
    tone[i] = static_cast<float>(std::sin(2.0 * M_PI * 1000.0 * i / cfg.audio_rate));
  Tensord lm = log_mel_spectrogram<double>(tone, cfg);

  // oracle: mel center frequency table, independent arithmetic
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double hi = mel(24000.0);
  int nearest = 0;
  double best = 1e18;
  for (int i = 0; i < 128; ++i) {
    const double fc = imel(hi * (i + 1) / 129.0);
    if (std::abs(fc - 1000.0) < best) {
      best = std::abs(fc - 1000.0);
      nearest = i;
    }
  }
  for (int t = 0; t < 224; ++t) {
    int arg = 0;
    for (int m = 1; m < 128; ++m)
      if (lm[t * 128 + m] > lm[t * 128 + arg]) arg = m;
    REQUIRE(arg == nearest);
  }
}

TEST_CASE("mel filterbank invariants") {
  FeaturizeConfig cfg;
  Tensord fb = mel_filterbank<double>(cfg);
  const int bins = cfg.n_fft / 2 + 1;
  int prev_peak = -1;
  for (int i = 0; i < cfg.n_mels; ++i) {
    double row_sum = 0;
    int peak = 0;
    for (int k = 0; k < bins; ++k) {
      const double v = fb[i * bins + k];
      REQUIRE(v >= 0.0);
      row_sum += v;
      if (v > fb[i * bins + peak]) peak = k;
    }
    REQUIRE(row_sum > 0.0);
    REQUIRE(peak >= prev_peak);
    prev_peak = peak;
  }
}

namespace {

// Independent filterbank oracle: the triangle integrated over each bin's
// interval with the trapezoid rule on kink-split linear segments (exact),
// bandwidth-normalized like the production bank.
std::vector<double> oracle_filterbank(int n_mels, int n_fft, double sr, double fmax) {
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto imel = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int bins = n_fft / 2 + 1;
  const double hi = mel(fmax);
  const double df = sr / n_fft;
  std::vector<double> fbank(static_cast<size_t>(n_mels) * bins, 0.0);
  for (int i = 0; i < n_mels; ++i) {
    const double fl = imel(hi * i / (n_mels + 1.0));
    const double fc = imel(hi * (i + 1) / (n_mels + 1.0));
    const double fr = imel(hi * (i + 2) / (n_mels + 1.0));
    auto tri = [&](double f) {
      if (f <= fl || f >= fr) return 0.0;
      return f <= fc ? (f - fl) / (fc - fl) : (fr - f) / (fr - fc);
    };
    for (int k = 0; k < bins; ++k) {
      const double lo = k * df - df / 2, hi_b = k * df + df / 2;
      // breakpoints where the integrand changes slope
      std::vector<double> pts{lo, hi_b};
      for (double p : {fl, fc, fr})
        if (p > lo && p < hi_b) pts.push_back(p);
      std::sort(pts.begin(), pts.end());
      double acc = 0;
      for (size_t q = 0; q + 1 < pts.size(); ++q)
        acc += (tri(pts[q]) + tri(pts[q + 1])) / 2.0 * (pts[q + 1] - pts[q]);
      fbank[static_cast<size_t>(i) * bins + k] = acc / df * 2.0 / (fr - fl);
    }
  }
  return fbank;
}

}  // namespace

TEST_CASE("log-mel matches a naive direct-DFT + triangle-filter oracle") {
  FeaturizeConfig cfg;
  Rng rng(33);
  std::vector<float> x(static_cast<size_t>(cfg.audio_samples));
  for (auto& v : x) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  Tensord got = log_mel_spectrogram<double>(x, cfg);

  const int bins = cfg.n_fft / 2 + 1;
  std::vector<double> win(240);
  for (int i = 0; i < 240; ++i) win[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / 239.0);
  std::vector<double> fbank = oracle_filterbank(128, cfg.n_fft, 48000.0, 24000.0);

  for (int t : {0, 57, 223}) {
    std::vector<double> frame(static_cast<size_t>(cfg.n_fft), 0.0);
    for (int i = 0; i < 240; ++i)
      frame[static_cast<size_t>(i)] = x[static_cast<size_t>(t) * 120 + i] * win[i];
    std::vector<double> power(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k) {
      double re = 0, im = 0;
      for (int n = 0; n < cfg.n_fft; ++n) {
        const double ang = -2.0 * M_PI * k * n / cfg.n_fft;
        re += frame[static_cast<size_t>(n)] * std::cos(ang);
        im += frame[static_cast<size_t>(n)] * std::sin(ang);
      }
      power[static_cast<size_t>(k)] = re * re + im * im;
    }
    for (int m = 0; m < 128; ++m) {
      double e = 0;
      for (int k = 0; k < bins; ++k)
        e += power[static_cast<size_t>(k)] * fbank[static_cast<size_t>(m) * bins + k];
      REQUIRE(std::abs(std::log(e + 1e-6) - got[t * 128 + m]) < 1e-6);
    }
  }
}

TEST_CASE("standardize: constants, identity, recomputed stats, idempotence") {
  Tensord c = Tensord::full({16, 2}, 7.5);
  std::vector<double> m, s;
  channel_stats(c, m, s);
  Tensord z = standardize(c, m, s);
  for (int64_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == 0.0);

  Rng rng(3);
  Tensord x = test::random_uniform<double>({64, 3}, rng);
  channel_stats(x, m, s);
  Tensord y = standardize(x, m, s);
  std::vector<double> m2, s2;
  channel_stats(y, m2, s2);
  for (double v : m2) REQUIRE(std::abs(v) < 1e-6);
  for (double v : s2) REQUIRE(v == Catch::Approx(1.0).margin(1e-6));

  // standardizing an already-standard signal with its stated stats is identity
  std::vector<double> zero{0, 0, 0}, one{1, 1, 1};
  Tensord y2 = standardize(y, zero, one);
  REQUIRE(max_abs_diff(y, y2) == 0.0);
  // idempotent given fixed sequence statistics
  Tensord y3 = standardize(standardize(x, m, s), zero, one);
  REQUIRE(max_abs_diff(y, y3) == 0.0);
}

TEST_CASE("resample: constant, ramp, endpoints") {
  Tensord c = Tensord::full({220, 2}, 3.0);
  Tensord rc = resample_linear(c, 224);
  REQUIRE(rc.shape() == std::vector<int>{224, 2});
  for (int64_t i = 0; i < rc.size(); ++i) REQUIRE(rc[i] == 3.0);

  std::vector<double> ramp(220);
  for (int i = 0; i < 220; ++i) ramp[i] = i;
  Tensord r = resample_linear(Tensord::from({220, 1}, ramp), 224);
  for (int i = 0; i < 224; ++i) {
    const double ideal = 219.0 * i / 223.0;
    REQUIRE(std::abs(r[i] - ideal) < 1e-6);
  }
  REQUIRE(r[0] == 0.0);
  REQUIRE(r[223] == 219.0);
}

TEST_CASE("patchify round trip is lossless; audio patchify matches naive loops") {
  Rng rng(5);
  Tensord img = test::random_uniform<double>({224, 256, 1}, rng);
  Tensord tok = patchify_2d(img, 16);
  REQUIRE(tok.shape() == std::vector<int>{224, 256});
  Tensord back = unpatchify_2d(tok, 224, 256, 1, 16);
  REQUIRE(max_abs_diff(img, back) == 0.0);

  // naive double-loop patch extraction oracle
  for (int probe = 0; probe < 2000; ++probe) {
    const int t = rng.uniform_int(224), d = rng.uniform_int(256);
    const int gi = t / 16, gj = t % 16;
    const int pi = d / 16, pj = d % 16;
    REQUIRE(tok[t * 256 + d] == img[(gi * 16 + pi) * 256 + (gj * 16 + pj)]);
  }
}

TEST_CASE("featurized bundle shapes") {
  Rng rng(77);
  SyncedSample s;
  s.image_now = solid_frame(64, 64, 100, 90, 80);
  s.image_prev = solid_frame(64, 64, 60, 50, 40);
  s.audio_mic0.resize(27000);
  s.audio_mic1.resize(27000);
  for (int i = 0; i < 27000; ++i) {
    s.audio_mic0[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-1, 1));
    s.audio_mic1[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-1, 1));
  }
  s.imu.resize(220 * 3);
  for (auto& v : s.imu) v = static_cast<float>(rng.uniform(-2, 2));
  s.pressure.resize(220);
  for (auto& v : s.pressure) v = static_cast<float>(rng.uniform(0, 3));

  FeaturizeConfig cfg;
  FeatureBundle<float> b = featurize_sample<float>(s, cfg);
  REQUIRE(b.image.shape() == std::vector<int>{196, 1536});
  REQUIRE(b.audio.shape() == std::vector<int>{224, 256});
  REQUIRE(b.imu.shape() == std::vector<int>{14, 48});
  REQUIRE(b.pressure.shape() == std::vector<int>{14, 16});
  REQUIRE(all_finite(b.image));
  REQUIRE(all_finite(b.audio));
  REQUIRE(all_finite(b.imu));
  REQUIRE(all_finite(b.pressure));
}
