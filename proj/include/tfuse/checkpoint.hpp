// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfuse/autodiff.hpp"
#include "tfuse/tensor.hpp"

namespace tfuse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[6] = {'T', 'F', 'U', 'S', 'E', '1'};

template <class T>
constexpr const char* dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

/// Ordered name -> tensor container; the unit of checkpoint I/O.
template <class T>
struct TensorBundle {
  std::vector<std::pair<std::string, Tensor<T>>> entries;
  nlohmann::json meta;

  void put(std::string name, Tensor<T> t) { entries.emplace_back(std::move(name), std::move(t)); }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

/// Binary layout: magic, u64 header length, JSON header, raw little-endian
/// payload. Header offsets are relative to the payload start.
template <class T>
void save_checkpoint(const TensorBundle<T>& bundle, const std::string& path) {
  nlohmann::json header;
  header["meta"] = bundle.meta.is_null() ? nlohmann::json::object() : bundle.meta;
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : bundle.entries) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = dtype_tag<T>();
    e["offset"] = offset;
    tensors.push_back(std::move(e));
    offset += static_cast<uint64_t>(t.size()) * sizeof(T);
  }
  header["tensors"] = std::move(tensors);
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), Errc::io, "cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : bundle.entries)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(T))));
  check(f.good(), Errc::io, "write failed: " + path);
}

template <class T>
TensorBundle<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), Errc::io, "cannot open checkpoint: " + path);
  char magic[6];
  f.read(magic, sizeof(magic));
  check(f.good() && std::equal(magic, magic + 6, kCheckpointMagic), Errc::data,
        "bad checkpoint magic in " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(f.good() && hlen > 0 && hlen < (1ull << 31), Errc::data, "bad checkpoint header length");
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  check(!header.is_discarded(), Errc::data, "unparseable checkpoint header");

  TensorBundle<T> bundle;
  bundle.meta = header.value("meta", nlohmann::json::object());
  const std::streampos payload_start = f.tellg();
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name");
    const std::string dtype = e.at("dtype");
    check(dtype == dtype_tag<T>(), Errc::data,
          "checkpoint dtype " + dtype + " does not match requested " + dtype_tag<T>());
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    Tensor<T> t(shape);
    f.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<uint64_t>()));
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(T))));
    check(f.good(), Errc::data, "truncated checkpoint payload for " + name);
    bundle.put(name, std::move(t));
  }
  return bundle;
}

/// Strict restore: every parameter must be present with a matching shape.
template <class T>
void load_into(const TensorBundle<T>& bundle, ParamSet<T>& ps, const std::string& prefix = "") {
  for (int s = 0; s < ps.size(); ++s) {
    const Tensor<T>* t = bundle.find(prefix + ps.name(s));
    check(t != nullptr, Errc::data, "checkpoint missing parameter " + prefix + ps.name(s));
    ps.set_value(s, *t);
  }
}

}  // namespace tfuse
