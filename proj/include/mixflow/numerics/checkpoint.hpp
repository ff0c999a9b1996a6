#pragma once

// Checkpoint container, format version 1. All integers little-endian.
//
//   offset 0   8 bytes   magic "MIXFLOW\0"
//   offset 8   u32       format version
//   offset 12  u64       manifest length L in bytes
//   offset 20  L bytes   manifest, UTF-8 JSON. Its "arrays" member lists
//                        {"name", "rows", "cols"} in payload order.
//   then       payload   each array as rows*cols IEEE-754 float32 values,
//                        little-endian, row-major, no padding between arrays.
//
// Everything else in the manifest (architecture dims, optimizer counters,
// config) is opaque to the container.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/error.hpp"
#include "mixflow/numerics/tensor.hpp"

namespace mixflow {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'X', 'F', 'L', 'O', 'W', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat<float>>> arrays;

  const Mat<float>* find(const std::string& name) const {
    for (const auto& [n, m] : arrays)
      if (n == name) return &m;
    return nullptr;
  }
  const Mat<float>& at(const std::string& name) const {
    if (const auto* m = find(name)) return *m;
    throw IoError("checkpoint has no array '" + name + "'");
  }
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest = ck.manifest;
  manifest["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : ck.arrays) {
    manifest["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string text = manifest.dump();
  std::string out;
  out.append(kCheckpointMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += text;
  for (const auto& [_, m] : ck.arrays) {
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  std::memcpy(&len, bytes.data() + 12, sizeof len);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  if (20 + len > bytes.size()) throw IoError("truncated checkpoint manifest");
  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(bytes.substr(20, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  std::size_t off = 20 + len;
  for (const auto& a : ck.manifest.at("arrays")) {
    const Index rows = a.at("rows").get<Index>();
    const Index cols = a.at("cols").get<Index>();
    const std::size_t nbytes = static_cast<std::size_t>(rows * cols) * sizeof(float);
    if (off + nbytes > bytes.size()) throw IoError("truncated checkpoint payload");
    Mat<float> m(rows, cols);
    std::memcpy(m.data(), bytes.data() + off, nbytes);
    off += nbytes;
    ck.arrays.emplace_back(a.at("name").get<std::string>(), std::move(m));
  }
  if (off != bytes.size()) throw IoError("trailing bytes after checkpoint payload");
  ck.manifest.erase("arrays");
  return ck;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_bytes(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

/// 64-bit FNV-1a, used as a content id for checkpoints and configs.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mixflow
