#pragma once

// Stochastic augmentation pipeline: a random subset of {linear contrast,
// gaussian blur, horizontal crop-and-resize, additive gaussian noise},
// applied in seeded random order. Pure function of (pixels, config, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/textgen/textgen.hpp"

namespace rclstr::textgen {

struct AugmentConfig {
  double contrast_lo = 0.5, contrast_hi = 1.0;     // factor around a 0.5 pivot
  double blur_sigma_lo = 0.5, blur_sigma_hi = 1.5;  // gaussian std, pixels
  double crop_frac_lo = 0.0, crop_frac_hi = 0.15;   // per side, of width
  double noise_std = 0.05;
  double p_contrast = 0.5, p_blur = 0.5, p_crop = 0.5, p_noise = 0.5;

  void validate() const {
    check(contrast_lo >= 0.05 && contrast_hi <= 4.0 && contrast_lo <= contrast_hi,
          ErrorKind::ConfigError, "contrast range out of bounds [0.05, 4]");
    check(blur_sigma_lo >= 0.0 && blur_sigma_hi <= 5.0 && blur_sigma_lo <= blur_sigma_hi,
          ErrorKind::ConfigError, "blur sigma range out of bounds [0, 5]");
    check(crop_frac_lo >= 0.0 && crop_frac_hi <= 0.45 && crop_frac_lo <= crop_frac_hi,
          ErrorKind::ConfigError, "crop fraction range out of bounds [0, 0.45]");
    check(noise_std >= 0.0 && noise_std <= 1.0, ErrorKind::ConfigError, "noise std out of [0, 1]");
    for (double p : {p_contrast, p_blur, p_crop, p_noise})
      check(p >= 0.0 && p <= 1.0, ErrorKind::ConfigError, "op probability out of [0, 1]");
  }
};

namespace detail {

inline void apply_contrast(std::vector<float>& px, double factor) {
  for (float& v : px) v = static_cast<float>(0.5 + factor * (v - 0.5));
}

inline void apply_blur(std::vector<float>& px, int h, int w, double sigma) {
  if (sigma < 1e-6) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    total += v;
  }
  for (float& k : kernel) k = static_cast<float>(k / total);

  std::vector<float> tmp(px.size());
  // horizontal pass, clamp-to-edge
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i) {
        int sx = std::clamp(x + i, 0, w - 1);
        acc += px[static_cast<size_t>(y * w + sx)] * kernel[static_cast<size_t>(i + radius)];
      }
      tmp[static_cast<size_t>(y * w + x)] = acc;
    }
  // vertical pass
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i) {
        int sy = std::clamp(y + i, 0, h - 1);
        acc += tmp[static_cast<size_t>(sy * w + x)] * kernel[static_cast<size_t>(i + radius)];
      }
      px[static_cast<size_t>(y * w + x)] = acc;
    }
}

inline void apply_hcrop_resize(std::vector<float>& px, int h, int w, int left, int right) {
  const int cw = w - left - right;
  if (cw == w) return;
  std::vector<float> out(px.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // linear resample of the cropped region back to full width
      double src = (x + 0.5) * cw / w - 0.5 + left;
      int x0 = static_cast<int>(std::floor(src));
      double frac = src - x0;
      int xa = std::clamp(x0, left, left + cw - 1);
      int xb = std::clamp(x0 + 1, left, left + cw - 1);
      out[static_cast<size_t>(y * w + x)] =
          static_cast<float>((1.0 - frac) * px[static_cast<size_t>(y * w + xa)] +
                             frac * px[static_cast<size_t>(y * w + xb)]);
    }
  px = std::move(out);
}

inline void apply_noise(std::vector<float>& px, double std_dev, Rng& rng) {
  if (std_dev <= 0.0) return;
  for (float& v : px) v = static_cast<float>(v + std_dev * rng.normal());
}

}  // namespace detail

/// Applies 1..k enabled ops in seeded random order; when every op is
/// disabled the input is returned unchanged. Output is clamped to [0,1] and
/// keeps the H x W shape.
inline std::vector<float> augment(const TextStrip& strip, const AugmentConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::vector<float> px = strip.pixels;
  Rng rng(seed);

  enum Op { kContrast = 0, kBlur, kCrop, kNoise };
  const double probs[4] = {cfg.p_contrast, cfg.p_blur, cfg.p_crop, cfg.p_noise};

  std::vector<int> chosen;
  for (int op = 0; op < 4; ++op)
    if (rng.bernoulli(probs[op])) chosen.push_back(op);
  if (chosen.empty()) {
    std::vector<int> eligible;
    for (int op = 0; op < 4; ++op)
      if (probs[op] > 0.0) eligible.push_back(op);
    if (eligible.empty()) return px;  // all ops disabled: identity
    chosen.push_back(eligible[rng.uniform_int(eligible.size())]);
  }
  rng.shuffle(chosen);

  for (int op : chosen) {
    switch (op) {
      case kContrast:
        detail::apply_contrast(px, rng.uniform(cfg.contrast_lo, cfg.contrast_hi));
        break;
      case kBlur:
        detail::apply_blur(px, strip.height, strip.width, rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
        break;
      case kCrop: {
        const int left = static_cast<int>(std::lround(rng.uniform(cfg.crop_frac_lo, cfg.crop_frac_hi) * strip.width));
        const int right = static_cast<int>(std::lround(rng.uniform(cfg.crop_frac_lo, cfg.crop_frac_hi) * strip.width));
        detail::apply_hcrop_resize(px, strip.height, strip.width, left, right);
        break;
      }
      case kNoise:
        detail::apply_noise(px, cfg.noise_std, rng);
        break;
    }
  }
  for (float& v : px) v = std::clamp(v, 0.f, 1.f);
  return px;
}

}  // namespace rclstr::textgen
