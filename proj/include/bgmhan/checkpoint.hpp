#pragma once

// Checkpoint archive:
//   "BGMHANCK"  8 bytes
//   u64 LE      manifest length in bytes
//   manifest    JSON {format, config, dtype, tensors:[{name, shape, offset}], vocab:{path, hash}, extra}
//   data        little-endian tensor buffers; offsets are relative to the data start

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "bgmhan/error.hpp"
#include "bgmhan/model.hpp"

namespace bgmhan {

inline constexpr char kCheckpointMagic[8] = {'B', 'G', 'M', 'H', 'A', 'N', 'C', 'K'};
inline constexpr int kCheckpointFormat = 1;

struct CheckpointInfo {
  ModelConfig config;
  std::string dtype;
  std::string vocab_path;
  std::string vocab_hash;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const Model<T>& model, const CheckpointInfo& info) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["config"] = to_json(model.config());
  manifest["dtype"] = detail::dtype_name<T>();
  manifest["vocab"] = {{"path", info.vocab_path}, {"hash", info.vocab_hash}};
  manifest["extra"] = info.extra;
  std::string data;
  auto tensors = nlohmann::json::array();
  for (const auto& [pi, t] : model.parameters()) {
    tensors.push_back({{"name", pi.name}, {"shape", t.shape()}, {"offset", data.size()}});
    for (const T x : t.values()) detail::put_le<Bits>(data, std::bit_cast<Bits>(x));
  }
  manifest["tensors"] = std::move(tensors);
  const std::string m = manifest.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint64_t>(out, m.size());
  out += m;
  out += data;
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const CheckpointInfo& info) {
  const auto bytes = serialize_checkpoint(model, info);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to checkpoint " + path);
}

struct RawCheckpoint {
  nlohmann::json manifest;
  std::string data;
};

inline RawCheckpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto len = detail::get_le<std::uint64_t>(reinterpret_cast<const unsigned char*>(bytes.data() + 8));
  if (len > bytes.size() - 16) throw std::runtime_error("checkpoint: truncated manifest");
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (raw.manifest.value("format", 0) != kCheckpointFormat) throw std::runtime_error("checkpoint: unsupported format");
  raw.data = bytes.substr(16 + len);
  return raw;
}

inline CheckpointInfo checkpoint_info(const RawCheckpoint& raw) {
  CheckpointInfo info;
  info.config = model_config_from_json(raw.manifest.at("config"));
  info.dtype = raw.manifest.at("dtype").get<std::string>();
  info.vocab_path = raw.manifest.at("vocab").value("path", "");
  info.vocab_hash = raw.manifest.at("vocab").value("hash", "");
  info.extra = raw.manifest.value("extra", nlohmann::json::object());
  return info;
}

// Copies stored tensors into `model`. Every model parameter must be present
// with the same shape.
template <class T>
void load_weights(Model<T>& model, const RawCheckpoint& raw) {
  const auto dtype = raw.manifest.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") throw std::runtime_error("checkpoint: unknown dtype " + dtype);
  const std::size_t width = dtype == "f32" ? 4 : 8;
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : raw.manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  const auto* base = reinterpret_cast<const unsigned char*>(raw.data.data());
  for (auto& [pi, tensor] : model.parameters()) {
    const auto it = by_name.find(pi.name);
    if (it == by_name.end()) throw DimensionError("checkpoint: missing tensor " + pi.name);
    const auto shape = it->second->at("shape").template get<Shape>();
    if (shape != tensor.shape()) {
      throw DimensionError("checkpoint: tensor " + pi.name + " has shape " + shape_str(shape) + ", model expects " +
                           shape_str(tensor.shape()));
    }
    const auto offset = it->second->at("offset").template get<std::size_t>();
    if (offset + tensor.numel() * width > raw.data.size()) throw std::runtime_error("checkpoint: truncated data");
    auto dst = tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const unsigned char* p = base + offset + i * width;
      if (width == 4) {
        dst[i] = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p)));
      } else {
        dst[i] = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(p)));
      }
    }
  }
}

template <class T>
Model<T> load_checkpoint(const std::string& path, CheckpointInfo* info_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const auto raw = parse_checkpoint(ss.str());
  auto info = checkpoint_info(raw);
  Model<T> model(info.config, 0);
  load_weights(model, raw);
  if (info_out) *info_out = std::move(info);
  return model;
}

}  // namespace bgmhan
