#pragma once

// 5x7 dot-matrix glyphs for A-Z. Column-major: one byte per column, bit k
// (LSB first) is row k.

#include <array>
#include <cstdint>

#include "rclstr/core/errors.hpp"

namespace rclstr::textgen {

inline constexpr int kGlyphRows = 7;
inline constexpr int kGlyphCols = 5;

namespace detail {

inline constexpr std::array<std::array<uint8_t, 5>, 26> kFont5x7 = {{
    {0x7E, 0x11, 0x11, 0x11, 0x7E},  // A
    {0x7F, 0x49, 0x49, 0x49, 0x36},  // B
    {0x3E, 0x41, 0x41, 0x41, 0x22},  // C
    {0x7F, 0x41, 0x41, 0x22, 0x1C},  // D
    {0x7F, 0x49, 0x49, 0x49, 0x41},  // E
    {0x7F, 0x09, 0x09, 0x09, 0x01},  // F
    {0x3E, 0x41, 0x49, 0x49, 0x7A},  // G
    {0x7F, 0x08, 0x08, 0x08, 0x7F},  // H
    {0x00, 0x41, 0x7F, 0x41, 0x00},  // I
    {0x20, 0x40, 0x41, 0x3F, 0x01},  // J
    {0x7F, 0x08, 0x14, 0x22, 0x41},  // K
    {0x7F, 0x40, 0x40, 0x40, 0x40},  // L
    {0x7F, 0x02, 0x0C, 0x02, 0x7F},  // M
    {0x7F, 0x04, 0x08, 0x10, 0x7F},  // N
    {0x3E, 0x41, 0x41, 0x41, 0x3E},  // O
    {0x7F, 0x09, 0x09, 0x09, 0x06},  // P
    {0x3E, 0x41, 0x51, 0x21, 0x5E},  // Q
    {0x7F, 0x09, 0x19, 0x29, 0x46},  // R
    {0x46, 0x49, 0x49, 0x49, 0x31},  // S
    {0x01, 0x01, 0x7F, 0x01, 0x01},  // T
    {0x3F, 0x40, 0x40, 0x40, 0x3F},  // U
    {0x1F, 0x20, 0x40, 0x20, 0x1F},  // V
    {0x3F, 0x40, 0x38, 0x40, 0x3F},  // W
    {0x63, 0x14, 0x08, 0x14, 0x63},  // X
    {0x07, 0x08, 0x70, 0x08, 0x07},  // Y
    {0x61, 0x51, 0x49, 0x45, 0x43},  // Z
}};

}  // namespace detail

/// True when row r, column c of the glyph for `ch` is ink.
inline bool glyph_bit(char ch, int r, int c) {
  check(ch >= 'A' && ch <= 'Z', ErrorKind::ConfigError,
        std::string("no glyph for symbol '") + ch + "'");
  return (detail::kFont5x7[static_cast<size_t>(ch - 'A')][static_cast<size_t>(c)] >> r) & 1;
}

}  // namespace rclstr::textgen
