// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfuse/common.hpp"

namespace tfuse {

enum class Modality { image, audio, imu, pressure };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::audio: return "audio";
    case Modality::imu: return "imu";
    case Modality::pressure: return "pressure";
  }
  return "?";
}

inline constexpr double kImageRateHz = 30.0;
inline constexpr double kAudioRateHz = 48000.0;
inline constexpr double kImuRateHz = 400.0;
inline constexpr double kPressureRateHz = 200.0;
inline constexpr double kBufferSeconds = 5.0;

/// Audio is buffered in fixed 10 ms chunks so ring bookkeeping stays O(1)
/// per chunk; capacity stays 5 s of samples either way.
inline constexpr int kAudioChunkFrames = 480;

struct ImageFrame {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // interleaved, height*width*3
};

struct AudioChunk {
  std::array<std::vector<float>, 2> mic;  // kAudioChunkFrames each
};

struct ImuSample {
  float ax = 0, ay = 0, az = 0;
};

struct PressureSample {
  float value = 0;
};

/// Fixed-capacity timestamped ring. Timestamps must be strictly increasing;
/// pushing past capacity evicts the oldest entry.
template <class Payload>
class RingStream {
 public:
  RingStream(Modality modality, double rate_hz, int capacity)
      : modality_(modality), rate_hz_(rate_hz), capacity_(capacity) {
    check(capacity > 0, Errc::config, "ring capacity must be positive");
    entries_.resize(static_cast<size_t>(capacity));
  }

  Modality modality() const { return modality_; }
  double rate_hz() const { return rate_hz_; }
  int capacity() const { return capacity_; }
  int size() const { return size_; }
  bool empty() const { return size_ == 0; }

  void push(double ts, Payload p) {
    if (size_ > 0 && ts <= ts_back()) {
      fail(Errc::ordering, std::string(modality_name(modality_)) +
                               ": non-monotonic timestamp push");
    }
    const int slot = (head_ + size_) % capacity_;
    entries_[static_cast<size_t>(slot)] = Entry{ts, std::move(p)};
    if (size_ < capacity_) {
      ++size_;
    } else {
      head_ = (head_ + 1) % capacity_;
    }
  }

  double ts(int i) const { return entry(i).ts; }
  const Payload& at(int i) const { return entry(i).payload; }
  double ts_back() const { return entry(size_ - 1).ts; }

  /// Index of the buffered timestamp nearest to ref_ts; ties go to the
  /// earlier sample. Binary search over the increasing timestamps.
  int nearest(double ref_ts) const {
    check(size_ > 0, Errc::not_ready,
          std::string(modality_name(modality_)) + ": empty buffer");
    int lo = 0, hi = size_ - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (ts(mid) < ref_ts)
        lo = mid + 1;
      else
        hi = mid;
    }
    // lo = first index with ts >= ref_ts; compare against predecessor.
    if (lo > 0) {
      const double d_prev = ref_ts - ts(lo - 1);
      const double d_cur = std::abs(ts(lo) - ref_ts);
      if (d_prev <= d_cur) return lo - 1;
    }
    return lo;
  }

 private:
  struct Entry {
    double ts = 0;
    Payload payload{};
  };

  const Entry& entry(int i) const {
    check(i >= 0 && i < size_, Errc::usage, "ring index out of range");
    return entries_[static_cast<size_t>((head_ + i) % capacity_)];
  }

  Modality modality_;
  double rate_hz_;
  int capacity_;
  int head_ = 0;
  int size_ = 0;
  std::vector<Entry> entries_;
};

/// The four per-sensor streams with paper-rate ring capacities.
struct SensorStreams {
  RingStream<ImageFrame> image{Modality::image, kImageRateHz,
                               static_cast<int>(kBufferSeconds * kImageRateHz)};
  RingStream<AudioChunk> audio{Modality::audio, kAudioRateHz,
                               static_cast<int>(kBufferSeconds * kAudioRateHz) /
                                   kAudioChunkFrames};
  RingStream<ImuSample> imu{Modality::imu, kImuRateHz,
                            static_cast<int>(kBufferSeconds * kImuRateHz)};
  RingStream<PressureSample> pressure{Modality::pressure, kPressureRateHz,
                                      static_cast<int>(kBufferSeconds * kPressureRateHz)};
};

/// Raw window sizes consumed by the featurizer. Windows are anchored at
/// their end: the most recent data up to the anchor timestamp.
struct WindowSpec {
  int image_stride = 5;     // anchor frame plus the frame `stride` indices earlier
  int audio_samples = 27000;  // per microphone
  int imu_samples = 220;
  int pressure_samples = 220;
};

struct SyncedSample {
  double reference_ts = 0;
  double image_anchor_ts = 0, audio_anchor_ts = 0, imu_anchor_ts = 0, pressure_anchor_ts = 0;
  ImageFrame image_now, image_prev;
  std::vector<float> audio_mic0, audio_mic1;  // audio_samples each
  std::vector<float> imu;                     // imu_samples * 3, row-major
  std::vector<float> pressure;                // pressure_samples
};

inline std::pair<ImageFrame, ImageFrame> extract_image_window(
    const RingStream<ImageFrame>& s, double anchor_ts, int stride) {
  const int idx = s.nearest(anchor_ts);
  check(idx >= stride, Errc::not_ready, "image: not enough frames for temporal stride");
  return {s.at(idx), s.at(idx - stride)};
}

/// Last `count` samples ending at the nearest-anchor entry, channel-major rows.
template <class Payload, class Emit>
void extract_series_window(const RingStream<Payload>& s, double anchor_ts, int count,
                           Emit&& emit) {
  const int idx = s.nearest(anchor_ts);
  check(idx + 1 >= count, Errc::not_ready,
        std::string(modality_name(s.modality())) + ": window longer than buffered history");
  for (int i = idx + 1 - count; i <= idx; ++i) emit(s.at(i));
}

/// Gather `samples` audio frames per mic ending at the end of the anchor chunk.
inline void extract_audio_window(const RingStream<AudioChunk>& s, double anchor_ts,
                                 int samples, std::vector<float>& mic0,
                                 std::vector<float>& mic1) {
  const int idx = s.nearest(anchor_ts);
  const int chunks_needed = (samples + kAudioChunkFrames - 1) / kAudioChunkFrames;
  check(idx + 1 >= chunks_needed, Errc::not_ready,
        "audio: window longer than buffered history");
  mic0.clear();
  mic1.clear();
  mic0.reserve(static_cast<size_t>(samples));
  mic1.reserve(static_cast<size_t>(samples));
  // Walk back to the first needed chunk, skipping the leading remainder.
  const int total = chunks_needed * kAudioChunkFrames;
  int skip = total - samples;
  for (int i = idx + 1 - chunks_needed; i <= idx; ++i) {
    const AudioChunk& c = s.at(i);
    const int take_from = (i == idx + 1 - chunks_needed) ? skip : 0;
    for (int k = take_from; k < kAudioChunkFrames; ++k) {
      mic0.push_back(c.mic[0][static_cast<size_t>(k)]);
      mic1.push_back(c.mic[1][static_cast<size_t>(k)]);
    }
  }
}

/// Closest-in-time bundle across the four streams. The caller typically uses
/// the latest image timestamp as reference_ts.
inline SyncedSample sync_at(const SensorStreams& s, double reference_ts,
                            const WindowSpec& w = {}) {
  SyncedSample out;
  out.reference_ts = reference_ts;

  const int img_idx = s.image.nearest(reference_ts);
  out.image_anchor_ts = s.image.ts(img_idx);
  auto [now, prev] = extract_image_window(s.image, reference_ts, w.image_stride);
  out.image_now = now;
  out.image_prev = prev;

  const int audio_idx = s.audio.nearest(reference_ts);
  out.audio_anchor_ts = s.audio.ts(audio_idx);
  extract_audio_window(s.audio, reference_ts, w.audio_samples, out.audio_mic0, out.audio_mic1);

  const int imu_idx = s.imu.nearest(reference_ts);
  out.imu_anchor_ts = s.imu.ts(imu_idx);
  out.imu.clear();
  out.imu.reserve(static_cast<size_t>(w.imu_samples) * 3);
  extract_series_window(s.imu, reference_ts, w.imu_samples, [&](const ImuSample& v) {
    out.imu.push_back(v.ax);
    out.imu.push_back(v.ay);
    out.imu.push_back(v.az);
  });

  const int pr_idx = s.pressure.nearest(reference_ts);
  out.pressure_anchor_ts = s.pressure.ts(pr_idx);
  out.pressure.clear();
  out.pressure.reserve(static_cast<size_t>(w.pressure_samples));
  extract_series_window(s.pressure, reference_ts, w.pressure_samples,
                        [&](const PressureSample& v) { out.pressure.push_back(v.value); });
  return out;
}

inline bool can_sync_at(const SensorStreams& s, double reference_ts,
                        const WindowSpec& w = {}) {
  try {
    (void)sync_at(s, reference_ts, w);
    return true;
  } catch (const Error& e) {
    if (e.code() == Errc::not_ready) return false;
    throw;
  }
}

// ---------------------------------------------------------------------------
// Session logs: one CSV per modality per sensor, image frames in a raw
// planar u8 blob addressed by frame index. Float formatting uses shortest
// exact round-trip precision so replay is bit-identical.

inline std::string fmt_f64(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_f32(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// One sensor's raw streams held in memory; the unit of log I/O and replay.
struct RawEvent {
  std::vector<double> image_ts;
  std::vector<ImageFrame> frames;
  std::vector<double> audio_ts;  // chunk start timestamps
  std::vector<AudioChunk> audio;
  std::vector<double> imu_ts;
  std::vector<ImuSample> imu;
  std::vector<double> pressure_ts;
  std::vector<PressureSample> pressure;

  double last_image_ts() const {
    check(!image_ts.empty(), Errc::data, "event has no image frames");
    return image_ts.back();
  }
};

/// Replay an in-memory event through the live ring-buffer path.
inline void feed(SensorStreams& s, const RawEvent& e) {
  for (size_t i = 0; i < e.image_ts.size(); ++i) s.image.push(e.image_ts[i], e.frames[i]);
  for (size_t i = 0; i < e.audio_ts.size(); ++i) s.audio.push(e.audio_ts[i], e.audio[i]);
  for (size_t i = 0; i < e.imu_ts.size(); ++i) s.imu.push(e.imu_ts[i], e.imu[i]);
  for (size_t i = 0; i < e.pressure_ts.size(); ++i)
    s.pressure.push(e.pressure_ts[i], e.pressure[i]);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_f64(const std::string& s) { return std::strtod(s.c_str(), nullptr); }
inline float parse_f32(const std::string& s) { return std::strtof(s.c_str(), nullptr); }

}  // namespace detail

inline void write_event_logs(const std::string& dir, const RawEvent& e) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  check(!ec, Errc::io, "cannot create log directory " + dir);

  {
    std::ofstream f(dir + "/image.csv");
    check(f.good(), Errc::io, "cannot write " + dir + "/image.csv");
    f << "image," << fmt_f64(kImageRateHz) << ",3\n";
    for (size_t i = 0; i < e.image_ts.size(); ++i)
      f << fmt_f64(e.image_ts[i]) << ',' << i << '\n';
    std::ofstream blob(dir + "/image.blob", std::ios::binary);
    for (const ImageFrame& fr : e.frames) {
      // planar: all R, then all G, then all B
      const size_t px = static_cast<size_t>(fr.width) * static_cast<size_t>(fr.height);
      std::vector<uint8_t> plane(px);
      for (int c = 0; c < 3; ++c) {
        for (size_t p = 0; p < px; ++p) plane[p] = fr.rgb[p * 3 + static_cast<size_t>(c)];
        blob.write(reinterpret_cast<const char*>(plane.data()),
                   static_cast<std::streamsize>(px));
      }
    }
  }
  {
    std::ofstream f(dir + "/audio.csv");
    f << "audio," << fmt_f64(kAudioRateHz) << ",2\n";
    for (size_t i = 0; i < e.audio_ts.size(); ++i)
      for (int k = 0; k < kAudioChunkFrames; ++k)
        f << fmt_f64(e.audio_ts[i] + k / kAudioRateHz) << ','
          << fmt_f32(e.audio[i].mic[0][static_cast<size_t>(k)]) << ','
          << fmt_f32(e.audio[i].mic[1][static_cast<size_t>(k)]) << '\n';
  }
  {
    std::ofstream f(dir + "/imu.csv");
    f << "imu," << fmt_f64(kImuRateHz) << ",3\n";
    for (size_t i = 0; i < e.imu_ts.size(); ++i)
      f << fmt_f64(e.imu_ts[i]) << ',' << fmt_f32(e.imu[i].ax) << ',' << fmt_f32(e.imu[i].ay)
        << ',' << fmt_f32(e.imu[i].az) << '\n';
  }
  {
    std::ofstream f(dir + "/pressure.csv");
    f << "pressure," << fmt_f64(kPressureRateHz) << ",1\n";
    for (size_t i = 0; i < e.pressure_ts.size(); ++i)
      f << fmt_f64(e.pressure_ts[i]) << ',' << fmt_f32(e.pressure[i].value) << '\n';
  }
  {
    nlohmann::json meta;
    meta["image"] = {{"width", e.frames.empty() ? 0 : e.frames[0].width},
                     {"height", e.frames.empty() ? 0 : e.frames[0].height},
                     {"count", e.frames.size()}};
    std::ofstream f(dir + "/meta.json");
    f << meta.dump(2) << '\n';
  }
}

inline RawEvent read_event_logs(const std::string& dir) {
  namespace fs = std::filesystem;
  RawEvent e;

  nlohmann::json meta;
  {
    std::ifstream f(dir + "/meta.json");
    check(f.good(), Errc::data, "missing " + dir + "/meta.json");
    f >> meta;
  }
  const int iw = meta.at("image").at("width");
  const int ih = meta.at("image").at("height");

  auto open_csv = [&](const char* name, const char* expect_mod) {
    auto f = std::make_unique<std::ifstream>(dir + "/" + name);
    check(f->good(), Errc::data, std::string("missing log file ") + dir + "/" + name);
    std::string header;
    std::getline(*f, header);
    check(header.rfind(expect_mod, 0) == 0, Errc::data,
          std::string("bad header in ") + name + ": " + header);
    return f;
  };

  {
    auto f = open_csv("image.csv", "image");
    std::ifstream blob(dir + "/image.blob", std::ios::binary);
    check(blob.good(), Errc::data, "missing " + dir + "/image.blob");
    std::string line;
    const size_t px = static_cast<size_t>(iw) * static_cast<size_t>(ih);
    while (std::getline(*f, line)) {
      if (line.empty()) continue;
      auto cols = detail::split_csv(line);
      e.image_ts.push_back(detail::parse_f64(cols[0]));
      const uint64_t idx = std::stoull(cols[1]);
      ImageFrame fr;
      fr.width = iw;
      fr.height = ih;
      fr.rgb.resize(px * 3);
      std::vector<uint8_t> plane(px);
      blob.seekg(static_cast<std::streamoff>(idx * px * 3));
      for (int c = 0; c < 3; ++c) {
        blob.read(reinterpret_cast<char*>(plane.data()), static_cast<std::streamsize>(px));
        check(blob.good(), Errc::data, "truncated image blob in " + dir);
        for (size_t p = 0; p < px; ++p) fr.rgb[p * 3 + static_cast<size_t>(c)] = plane[p];
      }
      e.frames.push_back(std::move(fr));
    }
  }
  {
    auto f = open_csv("audio.csv", "audio");
    std::string line;
    AudioChunk chunk;
    chunk.mic[0].reserve(kAudioChunkFrames);
    chunk.mic[1].reserve(kAudioChunkFrames);
    double chunk_ts = 0;
    while (std::getline(*f, line)) {
      if (line.empty()) continue;
      auto cols = detail::split_csv(line);
      if (chunk.mic[0].empty()) chunk_ts = detail::parse_f64(cols[0]);
      chunk.mic[0].push_back(detail::parse_f32(cols[1]));
      chunk.mic[1].push_back(detail::parse_f32(cols[2]));
      if (static_cast<int>(chunk.mic[0].size()) == kAudioChunkFrames) {
        e.audio_ts.push_back(chunk_ts);
        e.audio.push_back(std::move(chunk));
        chunk = AudioChunk{};
        chunk.mic[0].reserve(kAudioChunkFrames);
        chunk.mic[1].reserve(kAudioChunkFrames);
      }
    }
    check(chunk.mic[0].empty(), Errc::data,
          "audio log length is not a whole number of chunks in " + dir);
  }
  {
    auto f = open_csv("imu.csv", "imu");
    std::string line;
    while (std::getline(*f, line)) {
      if (line.empty()) continue;
      auto cols = detail::split_csv(line);
      e.imu_ts.push_back(detail::parse_f64(cols[0]));
      e.imu.push_back(ImuSample{detail::parse_f32(cols[1]), detail::parse_f32(cols[2]),
                                detail::parse_f32(cols[3])});
    }
  }
  {
    auto f = open_csv("pressure.csv", "pressure");
    std::string line;
    while (std::getline(*f, line)) {
      if (line.empty()) continue;
      auto cols = detail::split_csv(line);
      e.pressure_ts.push_back(detail::parse_f64(cols[0]));
      e.pressure.push_back(PressureSample{detail::parse_f32(cols[1])});
    }
  }
  return e;
}

}  // namespace tfuse
