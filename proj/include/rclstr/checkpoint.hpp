#pragma once

// Checkpoint container ("RCL1"): magic, u16 version, then repeated records
// of (u16 name length, name bytes, u8 rank, u32 extents, float32
// little-endian payload). Metadata (iteration, config digest) rides in
// reserved records using the same encoding.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::checkpoint {

inline constexpr char kMagic[4] = {'R', 'C', 'L', '1'};
inline constexpr uint16_t kVersion = 1;

struct ArrayRecord {
  std::string name;
  ndiff::Shape shape;
  std::vector<float> data;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(is), ErrorKind::IoError, "truncated checkpoint while reading " + what);
  return v;
}

}  // namespace detail

inline void write_records(const std::string& path, const std::vector<ArrayRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(os), ErrorKind::IoError, "cannot open " + path + " for writing");
  os.write(kMagic, 4);
  detail::put<uint16_t>(os, kVersion);
  for (const ArrayRecord& r : records) {
    check(r.name.size() < 65536, ErrorKind::DomainError, "record name too long");
    check(r.shape.size() < 256, ErrorKind::DomainError, "record rank too large");
    check(ndiff::shape_numel(r.shape) == static_cast<int64_t>(r.data.size()), ErrorKind::ShapeMismatch,
          "record '" + r.name + "' shape does not match payload");
    detail::put<uint16_t>(os, static_cast<uint16_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put<uint8_t>(os, static_cast<uint8_t>(r.shape.size()));
    for (int64_t e : r.shape) detail::put<uint32_t>(os, static_cast<uint32_t>(e));
    os.write(reinterpret_cast<const char*>(r.data.data()),
             static_cast<std::streamsize>(r.data.size() * sizeof(float)));
  }
  check(static_cast<bool>(os), ErrorKind::IoError, "short write to " + path);
}

inline std::vector<ArrayRecord> read_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0, ErrorKind::IoError,
        path + " is not a checkpoint (bad magic)");
  const uint16_t version = detail::get<uint16_t>(is, "version");
  check(version == kVersion, ErrorKind::VersionMismatch,
        "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kVersion));

  std::vector<ArrayRecord> records;
  while (true) {
    uint16_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    check(static_cast<bool>(is), ErrorKind::IoError, "truncated checkpoint record header");
    ArrayRecord r;
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    check(static_cast<bool>(is), ErrorKind::IoError, "truncated record name");
    const uint8_t rank = detail::get<uint8_t>(is, "rank of " + r.name);
    int64_t numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      const auto e = detail::get<uint32_t>(is, "extents of " + r.name);
      r.shape.push_back(static_cast<int64_t>(e));
      numel *= e;
    }
    r.data.resize(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    check(static_cast<bool>(is), ErrorKind::IoError, "truncated payload of " + r.name);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::map<std::string, ArrayRecord> index_records(std::vector<ArrayRecord> records) {
  std::map<std::string, ArrayRecord> out;
  for (auto& r : records) {
    const std::string name = r.name;
    check(out.emplace(name, std::move(r)).second, ErrorKind::CheckpointError,
          "duplicate record '" + name + "'");
  }
  return out;
}

// digest <-> four exact 16-bit float-encoded chunks, low to high
inline ArrayRecord digest_record(uint64_t digest) {
  ArrayRecord r;
  r.name = "meta/config_digest";
  r.shape = {4};
  for (int i = 0; i < 4; ++i) r.data.push_back(static_cast<float>((digest >> (16 * i)) & 0xffffu));
  return r;
}

inline uint64_t digest_from_record(const ArrayRecord& r) {
  check(r.data.size() == 4, ErrorKind::CheckpointError, "malformed digest record");
  uint64_t d = 0;
  for (int i = 0; i < 4; ++i) d |= static_cast<uint64_t>(static_cast<uint32_t>(r.data[static_cast<size_t>(i)])) << (16 * i);
  return d;
}

inline ArrayRecord scalar_record(const std::string& name, float value) {
  return ArrayRecord{name, {1}, {value}};
}

}  // namespace rclstr::checkpoint
