#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "poseadapt/tensor.hpp"

namespace poseadapt {

// On-disk model format: 8-byte magic, u64 header length, JSON header, then the
// concatenated float64 payload. Keys serialize in sorted order (std::map), so
// identical contents produce byte-identical files.
struct Checkpoint {
  std::map<std::string, Tensor> arrays;
  nlohmann::json meta;
};

namespace detail {

constexpr char kCkptMagic[8] = {'P', 'A', 'D', 'C', 'K', 'P', '0', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  char buf[8];
  is.read(buf, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = 1;
  header["meta"] = ckpt.meta.is_null() ? nlohmann::json::object() : ckpt.meta;
  nlohmann::json arrays = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.arrays) {
    arrays[name] = {{"offset", offset}, {"shape", t.shape()}};
    offset += t.size();
  }
  header["arrays"] = arrays;
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(detail::kCkptMagic, 8);
  detail::write_u64(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  const std::uint64_t hlen = detail::read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("version").get<int>() != 1) {
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  }

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  // Arrays were written in sorted key order, matching the header map order.
  for (const auto& [name, desc] : header.at("arrays").items()) {
    Shape shape = desc.at("shape").get<Shape>();
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    ckpt.arrays.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace poseadapt
