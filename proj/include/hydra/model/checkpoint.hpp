#pragma once

// Checkpoint container, little-endian throughout:
//
//   "HYDRA1"                       6-byte magic
//   u32 version                    currently 1
//   u32 n, n bytes                 UTF-8 JSON: {"model": <HydraConfig>, "meta": {...}}
//   u32 count                      number of tensors
//   count x {
//     u16 n, n bytes               parameter name (see HydraParams::for_each)
//     u8  element size             4 = IEEE-754 binary32, 8 = binary64
//     u8  rank
//     rank x u64                   extents
//     product(extents) elements
//   }
//   u64 checksum                   FNV-1a over every preceding byte
//
// Writes go to "<path>.tmp" and are renamed into place.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/model/config_json.hpp"
#include "hydra/model/params.hpp"
#include "hydra/numkit/binary_io.hpp"

namespace hydra {

class CheckpointError : public io::FormatError {
 public:
  using io::FormatError::FormatError;
};

struct CheckpointHeader {
  HydraConfig config;
  nlohmann::json meta = nlohmann::json::object();
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const HydraParams<T>& p, const HydraConfig& cfg,
                                            const nlohmann::json& meta = nlohmann::json::object()) {
  io::ByteWriter w;
  w.put_bytes("HYDRA1", 6);
  w.put(std::uint32_t{1});
  w.put_string32(nlohmann::json{{"model", to_json(cfg)}, {"meta", meta}}.dump());
  std::uint32_t count = 0;
  p.for_each([&](const std::string&, const Tensor<T>&) { ++count; });
  w.put(count);
  p.for_each([&](const std::string& name, const Tensor<T>& t) {
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint8_t>(sizeof(T)));
    w.put(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.put(static_cast<std::uint64_t>(e));
    for (T v : t.values()) w.put(v);
  });
  w.put(io::fnv1a(w.bytes(), w.bytes().size()));
  return std::move(w.bytes());
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const HydraParams<T>& p, const HydraConfig& cfg,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  io::write_file_atomic(path, encode_checkpoint(p, cfg, meta));
}

namespace detail {

inline CheckpointHeader read_header(io::ByteReader& r) {
  if (r.get_string(6) != "HYDRA1") throw CheckpointError("bad magic, not a HYDRA1 checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.get_string32());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config block is not valid JSON: ") + e.what());
  }
  CheckpointHeader h;
  try {
    h.config = config_from_json(j.at("model"));
    h.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config block: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("config block: ") + e.what());
  }
  if (j.contains("meta")) h.meta = j.at("meta");
  return h;
}

/// Re-throws low-level format errors as CheckpointError.
template <class F>
auto as_checkpoint_error(F&& f) {
  try {
    return f();
  } catch (const CheckpointError&) {
    throw;
  } catch (const io::FormatError& e) {
    throw CheckpointError(e.what());
  }
}

inline std::size_t verified_payload_end(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 6) throw CheckpointError("file too short");
  const std::size_t end = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 8; i-- > 0;) stored = (stored << 8) | bytes[end + i];
  if (stored != io::fnv1a(bytes, end)) throw CheckpointError("checksum mismatch");
  return end;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  return detail::as_checkpoint_error([&] {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, detail::verified_payload_end(bytes));
    return detail::read_header(r);
  });
}

namespace detail {

template <class T>
HydraParams<T> decode_params(const std::vector<std::uint8_t>& bytes, CheckpointHeader* header_out) {
  io::ByteReader r(bytes, detail::verified_payload_end(bytes));
  CheckpointHeader h = detail::read_header(r);
  HydraParams<T> p = HydraParams<T>::zeros(h.config);
  std::map<std::string, Tensor<T>*> slots;
  p.for_each([&](const std::string& name, Tensor<T>& t) { slots[name] = &t; });
  const auto count = r.get<std::uint32_t>();
  if (count != slots.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string(r.get<std::uint16_t>());
    const auto elem = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    Tensor<T>& dst = *it->second;
    if (dst.shape() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", config implies " +
                            shape_str(dst.shape()));
    }
    for (auto& v : dst.values()) {
      if (elem == 8) v = static_cast<T>(r.get<double>());
      else if (elem == 4) v = static_cast<T>(r.get<float>());
      else throw CheckpointError("unsupported element size " + std::to_string(elem));
    }
    slots.erase(it);
  }
  if (header_out) *header_out = std::move(h);
  return p;
}

}  // namespace detail

/// Loads any stored element width into parameters of type T.
template <class T>
HydraParams<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointHeader* header_out = nullptr) {
  return detail::as_checkpoint_error([&] { return detail::decode_params<T>(bytes, header_out); });
}

template <class T>
HydraParams<T> load_checkpoint(const std::filesystem::path& path, CheckpointHeader* header_out = nullptr) {
  return decode_checkpoint<T>(detail::as_checkpoint_error([&] { return io::read_file(path); }), header_out);
}

}  // namespace hydra
