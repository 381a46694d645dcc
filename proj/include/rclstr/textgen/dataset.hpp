#pragma once

// Strip container ("RCLD"): little-endian header (magic, version, H, W,
// count) followed by one record per strip: word, generation seed, span
// table, raw row-major float32 pixels.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/textgen/textgen.hpp"

namespace rclstr::textgen {

inline constexpr char kDatasetMagic[4] = {'R', 'C', 'L', 'D'};
inline constexpr uint16_t kDatasetVersion = 1;

struct DatasetHeader {
  uint16_t version = kDatasetVersion;
  uint16_t height = 0;
  uint16_t width = 0;
  uint32_t count = 0;
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  // little-endian host assumed (x86 / aarch64 little-endian builds)
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(static_cast<bool>(is), ErrorKind::IoError, "unexpected end of dataset file");
  return v;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const std::vector<TextStrip>& strips) {
  check(!strips.empty(), ErrorKind::DomainError, "refusing to write an empty dataset");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(os), ErrorKind::IoError, "cannot open " + path + " for writing");
  os.write(kDatasetMagic, 4);
  detail::put<uint16_t>(os, kDatasetVersion);
  detail::put<uint16_t>(os, static_cast<uint16_t>(strips[0].height));
  detail::put<uint16_t>(os, static_cast<uint16_t>(strips[0].width));
  detail::put<uint32_t>(os, static_cast<uint32_t>(strips.size()));
  for (const TextStrip& s : strips) {
    check(s.height == strips[0].height && s.width == strips[0].width, ErrorKind::ShapeMismatch,
          "all strips in a dataset must share geometry");
    detail::put<uint16_t>(os, static_cast<uint16_t>(s.text.size()));
    os.write(s.text.data(), static_cast<std::streamsize>(s.text.size()));
    detail::put<uint64_t>(os, s.seed);
    for (const GlyphSpan& sp : s.spans) {
      detail::put<uint16_t>(os, static_cast<uint16_t>(sp.x_start));
      detail::put<uint16_t>(os, static_cast<uint16_t>(sp.x_end));
    }
    os.write(reinterpret_cast<const char*>(s.pixels.data()),
             static_cast<std::streamsize>(s.pixels.size() * sizeof(float)));
  }
  check(static_cast<bool>(os), ErrorKind::IoError, "short write to " + path);
}

inline DatasetHeader read_dataset_header(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  check(static_cast<bool>(is) && std::memcmp(magic, kDatasetMagic, 4) == 0, ErrorKind::IoError,
        "not a strip dataset (bad magic)");
  DatasetHeader h;
  h.version = detail::get<uint16_t>(is);
  check(h.version == kDatasetVersion, ErrorKind::VersionMismatch,
        "dataset version " + std::to_string(h.version) + ", expected " + std::to_string(kDatasetVersion));
  h.height = detail::get<uint16_t>(is);
  h.width = detail::get<uint16_t>(is);
  h.count = detail::get<uint32_t>(is);
  return h;
}

inline DatasetHeader read_dataset_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path);
  return read_dataset_header(is);
}

inline std::vector<TextStrip> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), ErrorKind::IoError, "cannot open " + path);
  DatasetHeader h = read_dataset_header(is);
  std::vector<TextStrip> strips;
  strips.reserve(h.count);
  for (uint32_t i = 0; i < h.count; ++i) {
    TextStrip s;
    s.height = h.height;
    s.width = h.width;
    const uint16_t len = detail::get<uint16_t>(is);
    s.text.resize(len);
    is.read(s.text.data(), len);
    check(static_cast<bool>(is), ErrorKind::IoError, "truncated record " + std::to_string(i));
    s.seed = detail::get<uint64_t>(is);
    s.spans.resize(len);
    for (GlyphSpan& sp : s.spans) {
      sp.x_start = detail::get<uint16_t>(is);
      sp.x_end = detail::get<uint16_t>(is);
    }
    s.pixels.resize(static_cast<size_t>(h.height) * h.width);
    is.read(reinterpret_cast<char*>(s.pixels.data()),
            static_cast<std::streamsize>(s.pixels.size() * sizeof(float)));
    check(static_cast<bool>(is), ErrorKind::IoError, "truncated pixels in record " + std::to_string(i));
    strips.push_back(std::move(s));
  }
  return strips;
}

}  // namespace rclstr::textgen
