#pragma once

// Deterministic synthetic text strips: seeded word sampling, glyph
// rendering with recorded spans, per-frame labels, and the greedy readout
// that inverts them.

#include <cstdint>
#include <string>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/textgen/font.hpp"

namespace rclstr::textgen {

/// Frame label for pixels not covered by any glyph span.
inline constexpr char kBlank = '_';

struct GlyphSpan {
  int x_start = 0;
  int x_end = 0;  // half-open
};

/// Rendered grayscale strip with ground-truth glyph geometry. Labels derived
/// from the spans are consumed only by the probe, never by pre-training.
struct TextStrip {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // H*W row-major, values in [0,1]
  std::string text;
  std::vector<GlyphSpan> spans;  // one per character, ordered, disjoint
  uint64_t seed = 0;
};

struct RenderConfig {
  int height = 16;
  int width = 64;
  int glyph_advance = 8;
  float background_level = 0.1f;
  float ink_level = 0.9f;
  float texture_amplitude = 0.05f;  // subtractive, keeps background <= background_level

  int max_chars() const { return glyph_advance > 0 ? width / glyph_advance : 0; }
};

/// Uniform i.i.d. word over `alphabet` with length drawn from
/// [len_lo, len_hi]. Deterministic given the seed.
inline std::string sample_word(const std::string& alphabet, int len_lo, int len_hi,
                               int max_chars, uint64_t seed) {
  check(!alphabet.empty(), ErrorKind::ConfigError, "empty alphabet");
  check(len_lo >= 1 && len_lo <= len_hi, ErrorKind::ConfigError, "bad word length range");
  check(len_hi <= max_chars, ErrorKind::ConfigError,
        "word length " + std::to_string(len_hi) + " exceeds strip capacity " + std::to_string(max_chars));
  Rng rng(seed);
  int len = len_lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(len_hi - len_lo + 1)));
  std::string word(static_cast<size_t>(len), '?');
  for (char& c : word) c = alphabet[rng.uniform_int(alphabet.size())];
  return word;
}

// Glyph boxes are 4 px wide on an `advance` grid with a whole-word
// horizontal shift, so consecutive spans are always separated by a
// >= 4 px gap. With the default W/T = 4 px frames this guarantees every
// span covers a frame center and every inter-glyph gap yields a blank
// frame, which is what makes the label collapse invertible.
inline constexpr int kGlyphBoxWidth = 4;

/// Renders `word` into a strip. Pure function of (word, config, seed).
inline TextStrip render(const std::string& word, const RenderConfig& cfg, uint64_t seed) {
  check(!word.empty(), ErrorKind::EmptyWord, "cannot render an empty word");
  const int n = static_cast<int>(word.size());
  check((n - 1) * cfg.glyph_advance + kGlyphBoxWidth <= cfg.width, ErrorKind::DoesNotFit,
        "word of " + std::to_string(n) + " glyphs does not fit width " + std::to_string(cfg.width));
  check(cfg.height >= kGlyphRows + 2, ErrorKind::ConfigError, "strip height too small for glyphs");

  TextStrip strip;
  strip.height = cfg.height;
  strip.width = cfg.width;
  strip.text = word;
  strip.seed = seed;
  strip.pixels.assign(static_cast<size_t>(cfg.height * cfg.width), cfg.background_level);

  Rng rng(seed);

  // seeded background texture, strictly below the background level
  for (float& p : strip.pixels) p -= cfg.texture_amplitude * static_cast<float>(rng.uniform());

  const int max_shift = std::min(2, cfg.width - ((n - 1) * cfg.glyph_advance + kGlyphBoxWidth));
  const int shift = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_shift + 1)));

  for (int i = 0; i < n; ++i) {
    const int x0 = i * cfg.glyph_advance + shift;
    // per-glyph scale/position jitter (vertical; horizontal box is fixed to
    // keep spans and gaps frame-aligned)
    const int gh = kGlyphRows + static_cast<int>(rng.uniform_int(3)) - 1;  // 6..8
    const int max_y = cfg.height - gh;
    const int y0 = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(std::max(1, max_y - 1))));

    for (int ty = 0; ty < gh; ++ty) {
      const int sr = ty * kGlyphRows / gh;
      for (int tx = 0; tx < kGlyphBoxWidth; ++tx) {
        const int sc = tx * kGlyphCols / kGlyphBoxWidth;
        if (glyph_bit(word[static_cast<size_t>(i)], sr, sc))
          strip.pixels[static_cast<size_t>((y0 + ty) * cfg.width + x0 + tx)] = cfg.ink_level;
      }
    }
    strip.spans.push_back({x0, x0 + kGlyphBoxWidth});
  }
  return strip;
}

/// Label of each of T equal-width frames: the symbol whose span contains the
/// frame center, else blank.
inline std::string frame_labels(const TextStrip& strip, int t) {
  check(t >= 1, ErrorKind::DomainError, "frame count must be >= 1");
  std::string labels(static_cast<size_t>(t), kBlank);
  for (int f = 0; f < t; ++f) {
    const double center = (f + 0.5) * strip.width / t;
    for (size_t i = 0; i < strip.spans.size(); ++i) {
      if (center >= strip.spans[i].x_start && center < strip.spans[i].x_end) {
        labels[static_cast<size_t>(f)] = strip.text[i];
        break;
      }
    }
  }
  return labels;
}

/// Greedy readout: first merge consecutive duplicates, then drop blanks.
inline std::string collapse(const std::string& frames) {
  std::string dedup;
  for (char c : frames)
    if (dedup.empty() || dedup.back() != c) dedup.push_back(c);
  std::string word;
  for (char c : dedup)
    if (c != kBlank) word.push_back(c);
  return word;
}

}  // namespace rclstr::textgen
