// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfuse/featurize.hpp"
#include "tfuse/streams.hpp"

namespace tfuse {

enum class TaskFamily { object_action_surface, material_quantity, force };

inline const char* task_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::object_action_surface: return "object_action_surface";
    case TaskFamily::material_quantity: return "material_quantity";
    case TaskFamily::force: return "force";
  }
  return "?";
}

inline TaskFamily task_from_name(const std::string& s) {
  if (s == "object_action_surface") return TaskFamily::object_action_surface;
  if (s == "material_quantity") return TaskFamily::material_quantity;
  if (s == "force") return TaskFamily::force;
  fail(Errc::usage, "unknown task: " + s);
}

inline int class_count(TaskFamily f) {
  switch (f) {
    case TaskFamily::object_action_surface: return 3 * 3 * 4;
    case TaskFamily::material_quantity: return 6 * 3;
    case TaskFamily::force: return 1;
  }
  return 0;
}

/// Ground-truth description of one synthetic contact event.
struct ContactScenario {
  TaskFamily family = TaskFamily::material_quantity;
  int object = 0;    // ball, block, brick
  int action = 0;    // tap, slide_lin, slide_circ
  int surface = 0;   // plastic, fabric, grass, foamwork
  int material = 0;  // lentils, rice, corn, pills, water, oil
  int level = 0;     // full, half, quarter
  double force_peak = 1.0;  // force units, (0, 3.5]

  int label() const {
    switch (family) {
      case TaskFamily::object_action_surface: return (object * 3 + action) * 4 + surface;
      case TaskFamily::material_quantity: return material * 3 + level;
      case TaskFamily::force: return 0;
    }
    return 0;
  }

  static ContactScenario from_label(TaskFamily f, int label) {
    ContactScenario s;
    s.family = f;
    if (f == TaskFamily::object_action_surface) {
      s.surface = label % 4;
      s.action = (label / 4) % 3;
      s.object = label / 12;
    } else if (f == TaskFamily::material_quantity) {
      s.level = label % 3;
      s.material = label / 3;
    }
    return s;
  }
};

/// Physical latent parameters; the label -> latent map is injective in
/// expectation and jitter keeps classes separated.
struct Latents {
  double friction = 0.5;
  double stiffness = 0.5;
  double grain_size = 0.3;
  double mass = 0.7;
  double viscosity = 0.0;

  std::array<double, 5> as_array() const {
    return {friction, stiffness, grain_size, mass, viscosity};
  }
};

struct GenConfig {
  uint64_t seed = 7;
  int events_per_class = 20;
  double duration = 1.45;  // whole 10 ms audio chunks
  int image_w = 64, image_h = 64;

  double noise_image = 6.0;     // u8 counts
  double noise_audio = 0.02;
  double noise_imu = 0.05;
  double noise_pressure = 0.01;
  double latent_jitter = 0.03;

  // documented affine map from force units to the pressure channel
  double pressure_offset = 0.10;
  double pressure_gain = 1.0;

  void validate() const {
    check(events_per_class >= 2, Errc::config, "synth: need at least 2 events per class");
    check(noise_image >= 0 && noise_audio >= 0 && noise_imu >= 0 && noise_pressure >= 0,
          Errc::config, "synth: noise scales must be non-negative");
    check(duration > 1.25, Errc::config, "synth: event too short for the pressure window");
  }
};

inline Latents latents_for(const ContactScenario& s, const GenConfig& cfg, Rng& rng) {
  Latents l;
  auto jit = [&] { return cfg.latent_jitter * rng.normal(); };
  if (s.family == TaskFamily::object_action_surface) {
    constexpr double kStiff[3] = {0.35, 0.70, 1.00};          // ball, block, brick
    constexpr double kFriction[4] = {0.25, 0.55, 0.80, 1.00}; // plastic, fabric, grass, foamwork
    constexpr double kRough[4] = {0.15, 0.45, 0.95, 0.70};
    l.stiffness = kStiff[s.object] + jit();
    l.friction = kFriction[s.surface] + jit();
    l.grain_size = kRough[s.surface] + jit();  // surface roughness drives audio color
    l.mass = 0.55 + 0.3 * kStiff[s.object] + jit();
    l.viscosity = 0.0;
  } else if (s.family == TaskFamily::material_quantity) {
    // lentils, rice, corn kernels, vitamin pills, water, oil
    constexpr double kGrain[6] = {0.42, 0.22, 0.65, 0.85, 0.08, 0.05};
    constexpr double kVisc[6] = {0.0, 0.0, 0.0, 0.0, 0.25, 0.85};
    constexpr double kDensity[6] = {1.05, 0.85, 1.15, 0.95, 1.00, 0.92};
    constexpr double kLevel[3] = {1.00, 0.60, 0.30};  // full, half, quarter
    l.grain_size = kGrain[s.material] + jit();
    l.viscosity = kVisc[s.material] + (s.material >= 4 ? jit() : 0.0);
    l.mass = kDensity[s.material] * kLevel[s.level] + jit();
    l.friction = 0.5 + jit();
    l.stiffness = 0.8 + jit();
  } else {
    l.stiffness = 0.7 + jit();
    l.friction = 0.4 + jit();
    l.mass = 0.6 + jit();
    l.grain_size = 0.3 + jit();
  }
  l.friction = std::clamp(l.friction, 0.02, 1.2);
  l.stiffness = std::clamp(l.stiffness, 0.05, 1.2);
  l.grain_size = std::clamp(l.grain_size, 0.01, 1.2);
  l.mass = std::clamp(l.mass, 0.05, 1.5);
  l.viscosity = std::clamp(l.viscosity, 0.0, 1.0);
  return l;
}

namespace synth_detail {

/// Two-pole resonator; colors white noise around a center frequency.
class Resonator {
 public:
  Resonator(double center_hz, double rate_hz, double r = 0.97) : r_(r) {
    theta_ = 2.0 * M_PI * std::clamp(center_hz, 10.0, rate_hz * 0.45) / rate_hz;
  }
  double operator()(double x) {
    const double y = x + 2.0 * r_ * std::cos(theta_) * y1_ - r_ * r_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y * (1.0 - r_);  // keep output scale roughly input-sized
  }

 private:
  double r_, theta_, y1_ = 0, y2_ = 0;
};

/// Raised-cosine bump on [t0, t0+w].
inline double bump(double t, double t0, double w) {
  if (t < t0 || t > t0 + w) return 0.0;
  return 0.5 * (1.0 - std::cos(2.0 * M_PI * (t - t0) / w));
}

/// Deterministic value-noise texture in [0,1).
inline double texture(int x, int y, uint64_t seed, double scale) {
  const double fx = x / scale, fy = y / scale;
  const int ix = static_cast<int>(std::floor(fx)), iy = static_cast<int>(std::floor(fy));
  auto h = [&](int a, int b) {
    uint64_t v = splitmix64(seed ^ (static_cast<uint64_t>(a) * 0x9E3779B1u) ^
                            (static_cast<uint64_t>(b) * 0x85EBCA77u));
    return static_cast<double>(v >> 11) * 0x1.0p-53;
  };
  const double wx = fx - ix, wy = fy - iy;
  const double a = h(ix, iy) * (1 - wx) + h(ix + 1, iy) * wx;
  const double b = h(ix, iy + 1) * (1 - wx) + h(ix + 1, iy + 1) * wx;
  return a * (1 - wy) + b * wy;
}

/// Contact-force envelope in [0,1], shared driver of all four modalities.
struct Envelope {
  const ContactScenario& s;
  const Latents& l;

  double operator()(double t, double duration) const {
    switch (s.family) {
      case TaskFamily::object_action_surface: {
        if (s.action == 0) {  // tap: two crisp bumps
          return bump(t, 0.30, 0.16) + 0.9 * bump(t, 0.85, 0.16);
        }
        // slides: rise to a plateau with action-specific modulation
        const double rise = std::clamp((t - 0.18) / 0.25, 0.0, 1.0);
        const double fall = std::clamp((duration - 0.08 - t) / 0.15, 0.0, 1.0);
        const double base = 0.75 * std::min(rise, fall);
        if (s.action == 1) return base * (1.0 + 0.12 * std::sin(2.0 * M_PI * 3.0 * t));
        return base * (1.0 + 0.30 * std::sin(2.0 * M_PI * 1.8 * t));
      }
      case TaskFamily::material_quantity: {
        // shaking: oscillating grip/slosh load
        const double rise = std::clamp((t - 0.10) / 0.20, 0.0, 1.0);
        return rise * (0.55 + 0.40 * std::sin(2.0 * M_PI * 4.0 * t));
      }
      case TaskFamily::force:
        return bump(t, duration / 2 - 0.35, 0.70);
    }
    return 0.0;
  }

  /// Lateral speed of the contact patch (drives friction noise and motion).
  double speed(double t) const {
    if (s.family == TaskFamily::object_action_surface) {
      if (s.action == 1) return 1.0;
      if (s.action == 2) return 0.9 + 0.4 * std::sin(2.0 * M_PI * 1.8 * t);
      return 0.0;
    }
    if (s.family == TaskFamily::material_quantity)
      return std::abs(std::cos(2.0 * M_PI * 4.0 * t));
    return 0.0;
  }
};

}  // namespace synth_detail

/// Force units encoded in the pressure channel for one envelope value.
inline double envelope_force(const ContactScenario& s, const Latents& l, double e) {
  if (s.family == TaskFamily::force) return s.force_peak * e;
  return 1.6 * l.mass * e;
}

/// Physically-motivated coupled four-modality render of one contact event.
/// Same (scenario, seed) always yields bit-identical streams.
inline RawEvent generate_event(const ContactScenario& s, const Latents& l,
                               const GenConfig& cfg, uint64_t event_seed) {
  RawEvent out;
  Rng root(event_seed);
  synth_detail::Envelope env{s, l};
  const double D = cfg.duration;

  // --- pressure, 200 Hz
  {
    Rng rng = root.fork("pressure");
    const int n = static_cast<int>(D * kPressureRateHz);
    for (int i = 0; i < n; ++i) {
      const double t = i / kPressureRateHz;
      const double F = envelope_force(s, l, env(t, D));
      const double v = cfg.pressure_offset + cfg.pressure_gain * F +
                       cfg.noise_pressure * rng.normal();
      out.pressure_ts.push_back(t);
      out.pressure.push_back(PressureSample{static_cast<float>(v)});
    }
  }

  // --- audio, 48 kHz stereo in 10 ms chunks
  {
    Rng rng = root.fork("audio");
    const int chunks = static_cast<int>(D * 100.0);
    // color set by surface roughness / grain size
    const double f_impact = 500.0 + 2800.0 * l.grain_size;
    const double f_slide = 700.0 + 2200.0 * l.friction;
    synth_detail::Resonator res_i(f_impact, kAudioRateHz);
    synth_detail::Resonator res_s(f_slide, kAudioRateHz);
    synth_detail::Resonator res_l(180.0 + 240.0 * l.viscosity, kAudioRateHz, 0.995);

    // impact times: envelope onsets plus grain collisions during shaking
    std::vector<double> impacts;
    double prev = 0;
    for (int i = 1; i < static_cast<int>(D * 1000); ++i) {
      const double t = i / 1000.0;
      const double e = env(t, D);
      if (prev < 0.15 && e >= 0.15) impacts.push_back(t);
      prev = e;
    }
    if (s.family == TaskFamily::material_quantity && l.viscosity < 0.2) {
      // grain impacts cluster around shake reversals; smaller grains -> more, weaker
      const int per_rev = 2 + static_cast<int>(14.0 * (1.0 - l.grain_size) * l.mass);
      for (double tr = 0.125; tr < D; tr += 0.125)
        for (int k = 0; k < per_rev; ++k) impacts.push_back(tr + 0.04 * rng.uniform());
    }
    std::sort(impacts.begin(), impacts.end());

    const double slosh_amp = 0.5 * l.viscosity * l.mass;
    const double impact_amp = (s.family == TaskFamily::material_quantity)
                                  ? 0.9 * l.mass * (0.35 + 0.65 * l.grain_size)
                                  : 1.2 * l.mass;
    size_t next_imp = 0;
    std::vector<double> ring;  // active impact excitations (time constants)
    for (int c = 0; c < chunks; ++c) {
      AudioChunk chunk;
      chunk.mic[0].resize(kAudioChunkFrames);
      chunk.mic[1].resize(kAudioChunkFrames);
      const double t0 = c / 100.0;
      for (int k = 0; k < kAudioChunkFrames; ++k) {
        const double t = t0 + k / kAudioRateHz;
        while (next_imp < impacts.size() && impacts[next_imp] <= t) {
          ring.push_back(t);
          ++next_imp;
        }
        double excite = 0;
        for (size_t r = ring.size(); r-- > 0;) {
          const double age = t - ring[r];
          if (age > 0.035) {
            ring.erase(ring.begin() + static_cast<long>(r));
            continue;
          }
          excite += std::exp(-age / 0.008);
        }
        const double e = env(t, D);
        double v = impact_amp * excite * res_i(rng.normal());
        v += 0.5 * l.friction * e * env.speed(t) * res_s(rng.normal());
        if (slosh_amp > 0) v += slosh_amp * e * res_l(rng.normal());
        v += cfg.noise_audio * rng.normal();
        const double v2 = v * 1.08 + cfg.noise_audio * rng.normal() * 0.5;
        chunk.mic[0][static_cast<size_t>(k)] = static_cast<float>(v);
        chunk.mic[1][static_cast<size_t>(k)] = static_cast<float>(v2);
      }
      out.audio_ts.push_back(t0);
      out.audio.push_back(std::move(chunk));
    }
  }

  // --- imu, 400 Hz
  {
    Rng rng = root.fork("imu");
    const int n = static_cast<int>(D * kImuRateHz);
    synth_detail::Resonator vib(60.0 + 180.0 * l.stiffness, kImuRateHz, 0.9);
    double prev_e = 0;
    for (int i = 0; i < n; ++i) {
      const double t = i / kImuRateHz;
      const double e = env(t, D);
      const double de = (e - prev_e) * kImuRateHz;
      prev_e = e;
      double ax = 0, ay = 0;
      if (s.family == TaskFamily::object_action_surface) {
        if (s.action == 1) ax = 0.8 * std::sin(2.0 * M_PI * 3.0 * t);
        if (s.action == 2) {
          ax = 0.7 * std::sin(2.0 * M_PI * 1.8 * t);
          ay = 0.7 * std::cos(2.0 * M_PI * 1.8 * t);
        }
      } else if (s.family == TaskFamily::material_quantity) {
        ax = 1.6 * std::sin(2.0 * M_PI * 4.0 * t);
        // load reaction: heavier content lags and overshoots
        ax += 0.9 * l.mass * std::sin(2.0 * M_PI * 8.0 * t + 0.7);
        ay = 0.35 * l.mass * (1.0 - l.viscosity) * std::sin(2.0 * M_PI * 12.0 * t);
      }
      const double shake = vib(0.35 * l.mass * std::abs(de) * rng.normal());
      ax += shake + cfg.noise_imu * rng.normal();
      ay += 0.6 * shake + cfg.noise_imu * rng.normal();
      const double az = 9.81 + 0.5 * l.mass * e + 0.8 * shake + cfg.noise_imu * rng.normal();
      out.imu_ts.push_back(t);
      out.imu.push_back(ImuSample{static_cast<float>(ax), static_cast<float>(ay),
                                  static_cast<float>(az)});
    }
  }

  // --- image, 30 fps
  {
    Rng rng = root.fork("image");
    const uint64_t tex_seed =
        splitmix64(cfg.seed ^ (static_cast<uint64_t>(s.family) << 40) ^
                   (s.family == TaskFamily::object_action_surface
                        ? static_cast<uint64_t>(s.surface)
                        : static_cast<uint64_t>(s.material)));
    const double tex_scale = 3.0 + 10.0 * l.grain_size;
    const double tex_contrast = 25.0 + 50.0 * l.grain_size;
    const int w = cfg.image_w, h = cfg.image_h;
    const int n = static_cast<int>(std::ceil(D * kImageRateHz));
    for (int f = 0; f < n; ++f) {
      const double t = f / kImageRateHz;
      if (t >= D) break;
      const double e = env(t, D);
      // patch center follows the action's motion
      double cx = w / 2.0, cy = h / 2.0;
      if (s.family == TaskFamily::object_action_surface) {
        if (s.action == 1) cx = w * (0.30 + 0.40 * t / D);
        if (s.action == 2) {
          cx = w * (0.5 + 0.18 * std::sin(2.0 * M_PI * 1.8 * t));
          cy = h * (0.5 + 0.18 * std::cos(2.0 * M_PI * 1.8 * t));
        }
      } else if (s.family == TaskFamily::material_quantity) {
        cx = w * (0.5 + 0.10 * std::sin(2.0 * M_PI * 4.0 * t));
      }
      const double radius =
          (0.06 + 0.16 * std::sqrt(std::max(0.0, e) / std::max(0.2, l.stiffness))) * w;
      const double glow = 120.0 * e;

      ImageFrame frame;
      frame.width = w;
      frame.height = h;
      frame.rgb.resize(static_cast<size_t>(w) * h * 3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double tex = synth_detail::texture(x, y, tex_seed, tex_scale);
          const double base = 75.0 + tex_contrast * tex;
          const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
          const double patch = glow * std::exp(-0.5 * d2);
          for (int ch = 0; ch < 3; ++ch) {
            const double tint = (ch == 0 ? 1.05 : ch == 1 ? 1.0 : 0.92);
            double v = base * tint + patch * (ch == 2 ? 1.25 : 1.0) +
                       cfg.noise_image * rng.normal();
            frame.rgb[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(ch)] =
                static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
          }
        }
      out.image_ts.push_back(t);
      out.frames.push_back(std::move(frame));
    }
  }

  return out;
}

/// Sequence-level channel statistics for the featurizer.
inline SeqStats event_stats(const RawEvent& e) {
  SeqStats st;
  std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
  for (const ImuSample& v : e.imu) {
    const double a[3] = {v.ax, v.ay, v.az};
    for (int c = 0; c < 3; ++c) {
      sum[static_cast<size_t>(c)] += a[c];
      sq[static_cast<size_t>(c)] += a[c] * a[c];
    }
  }
  const double n = std::max<size_t>(1, e.imu.size());
  for (int c = 0; c < 3; ++c) {
    st.imu_mean[static_cast<size_t>(c)] = sum[static_cast<size_t>(c)] / n;
    st.imu_std[static_cast<size_t>(c)] = std::sqrt(std::max(
        0.0, sq[static_cast<size_t>(c)] / n - st.imu_mean[static_cast<size_t>(c)] *
                                                   st.imu_mean[static_cast<size_t>(c)]));
  }
  double ps = 0, pq = 0;
  for (const PressureSample& v : e.pressure) {
    ps += v.value;
    pq += static_cast<double>(v.value) * v.value;
  }
  const double m = std::max<size_t>(1, e.pressure.size());
  st.pressure_mean = ps / m;
  st.pressure_std = std::sqrt(std::max(0.0, pq / m - st.pressure_mean * st.pressure_mean));
  return st;
}

/// End-anchored reference timestamps with enough history for every window.
inline std::vector<double> reference_times(const GenConfig& cfg, int samples_per_event) {
  std::vector<double> refs;
  const double lo = 1.17, hi = cfg.duration - 0.03;
  for (int i = 0; i < samples_per_event; ++i) {
    const double a = samples_per_event == 1
                         ? hi
                         : lo + (hi - lo) * i / (samples_per_event - 1);
    refs.push_back(a);
  }
  return refs;
}

// ---------------------------------------------------------------------------
// datasets

struct EventRecord {
  ContactScenario scenario;
  Latents latents;
  uint64_t seed = 0;
  bool test_split = false;
  std::string dir;  // empty for in-memory datasets
};

struct DatasetManifest {
  TaskFamily family = TaskFamily::material_quantity;
  GenConfig cfg;
  std::vector<EventRecord> events;

  int train_count() const {
    int n = 0;
    for (const auto& e : events) n += e.test_split ? 0 : 1;
    return n;
  }
};

/// Balanced dataset: events_per_class per label, 75/25 train/test by event.
inline DatasetManifest plan_dataset(const GenConfig& cfg, TaskFamily family) {
  cfg.validate();
  DatasetManifest m;
  m.family = family;
  m.cfg = cfg;
  Rng root(cfg.seed);
  const int classes = class_count(family);
  for (int cls = 0; cls < classes; ++cls) {
    for (int i = 0; i < cfg.events_per_class; ++i) {
      EventRecord rec;
      rec.scenario = ContactScenario::from_label(family, cls);
      rec.seed = splitmix64(cfg.seed ^ (static_cast<uint64_t>(cls) << 24) ^
                            static_cast<uint64_t>(i));
      Rng jrng(rec.seed);
      if (family == TaskFamily::force)
        rec.scenario.force_peak = 0.2 + 3.3 * jrng.uniform();
      rec.latents = latents_for(rec.scenario, cfg, jrng);
      rec.test_split = (i % 4 == 3);  // 20 per class -> 15 train / 5 test
      m.events.push_back(std::move(rec));
    }
  }
  return m;
}

inline RawEvent load_event(const DatasetManifest& m, size_t idx) {
  const EventRecord& rec = m.events[idx];
  if (!rec.dir.empty()) return read_event_logs(rec.dir);
  return generate_event(rec.scenario, rec.latents, m.cfg, rec.seed);
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::json j;
  j["task"] = task_name(m.family);
  j["seed"] = m.cfg.seed;
  j["events_per_class"] = m.cfg.events_per_class;
  j["duration"] = m.cfg.duration;
  j["image"] = {{"width", m.cfg.image_w}, {"height", m.cfg.image_h}};
  j["pressure_map"] = {{"offset", m.cfg.pressure_offset}, {"gain", m.cfg.pressure_gain}};
  nlohmann::json evs = nlohmann::json::array();
  for (const auto& e : m.events) {
    nlohmann::json je;
    je["label"] = e.scenario.label();
    je["force_peak"] = e.scenario.force_peak;
    je["seed"] = e.seed;
    je["split"] = e.test_split ? "test" : "train";
    je["dir"] = e.dir;
    je["latents"] = e.latents.as_array();
    evs.push_back(std::move(je));
  }
  j["events"] = std::move(evs);
  std::ofstream f(path);
  check(f.good(), Errc::io, "cannot write manifest " + path);
  f << j.dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), Errc::data, "cannot open manifest " + path);
  nlohmann::json j;
  f >> j;
  DatasetManifest m;
  m.family = task_from_name(j.at("task"));
  m.cfg.seed = j.at("seed");
  m.cfg.events_per_class = j.at("events_per_class");
  m.cfg.duration = j.at("duration");
  m.cfg.image_w = j.at("image").at("width");
  m.cfg.image_h = j.at("image").at("height");
  m.cfg.pressure_offset = j.at("pressure_map").at("offset");
  m.cfg.pressure_gain = j.at("pressure_map").at("gain");
  for (const auto& je : j.at("events")) {
    EventRecord rec;
    const int label = je.at("label");
    rec.scenario = ContactScenario::from_label(m.family, label);
    rec.scenario.force_peak = je.at("force_peak");
    rec.seed = je.at("seed");
    rec.test_split = je.at("split") == "test";
    rec.dir = je.at("dir");
    const auto la = je.at("latents").get<std::array<double, 5>>();
    rec.latents = Latents{la[0], la[1], la[2], la[3], la[4]};
    m.events.push_back(std::move(rec));
  }
  return m;
}

/// Materialize every event to the CSV/blob log format under out_dir and
/// write manifest.json.
inline DatasetManifest generate_dataset(const GenConfig& cfg, TaskFamily family,
                                        const std::string& out_dir) {
  DatasetManifest m = plan_dataset(cfg, family);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, Errc::io, "cannot create dataset directory " + out_dir);
  for (size_t i = 0; i < m.events.size(); ++i) {
    RawEvent e = generate_event(m.events[i].scenario, m.events[i].latents, cfg,
                                m.events[i].seed);
    char name[64];
    std::snprintf(name, sizeof(name), "event_%05zu", i);
    m.events[i].dir = out_dir + "/" + name;
    write_event_logs(m.events[i].dir, e);
  }
  save_manifest(m, out_dir + "/manifest.json");
  return m;
}

}  // namespace tfuse
