#pragma once

// Relational regularization machinery: horizontal division of strips into
// patches, group-wise patch shuffling into new images, and the inverse
// permutation applied to frame features.

#include <cstdint>
#include <string>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::permute {

enum class DivisionStrategy { direct, drop_boundary, vertical_projection };

inline DivisionStrategy division_strategy_from_string(const std::string& s) {
  if (s == "direct") return DivisionStrategy::direct;
  if (s == "drop_boundary") return DivisionStrategy::drop_boundary;
  if (s == "vertical_projection") return DivisionStrategy::vertical_projection;
  raise(ErrorKind::ConfigError, "unknown division_strategy '" + s + "'");
}

inline const char* to_string(DivisionStrategy s) {
  switch (s) {
    case DivisionStrategy::direct: return "direct";
    case DivisionStrategy::drop_boundary: return "drop_boundary";
    case DivisionStrategy::vertical_projection: return "vertical_projection";
  }
  return "?";
}

/// Dense batch of grayscale images.
struct PixelBatch {
  int64_t count = 0, height = 0, width = 0;
  std::vector<float> data;  // [count][height][width]

  float* image(int64_t i) { return data.data() + i * height * width; }
  const float* image(int64_t i) const { return data.data() + i * height * width; }
};

/// Images cut into n horizontal patches of equal width.
struct DividedBatch {
  int64_t count = 0, height = 0, patch_width = 0;
  int n = 1;
  DivisionStrategy strategy = DivisionStrategy::direct;
  std::vector<float> patches;            // [count][n][height][patch_width]
  std::vector<std::vector<int>> cuts;    // per image: n-1 cut columns actually used

  float* patch(int64_t image, int p) {
    return patches.data() + (image * n + p) * height * patch_width;
  }
  const float* patch(int64_t image, int p) const {
    return patches.data() + (image * n + p) * height * patch_width;
  }
};

/// Group-shuffle bookkeeping. Within each group of m images (n*m patches),
/// output slot s holds input patch pi[g][s]; slot s belongs to output image
/// s / n, patch position s % n.
struct PermutationRecord {
  int n = 1, m = 1;
  std::vector<std::vector<int>> pi;  // one bijection on [0, n*m) per group

  int64_t groups() const { return static_cast<int64_t>(pi.size()); }
  int64_t covered_images() const { return groups() * m; }
};

/// Cuts every image into n horizontal patches.
///   direct / drop_boundary: equal cuts at multiples of width/n.
///   vertical_projection: per boundary, the minimum-ink column within
///   +- width/(4n) of the equal cut; patches are then right-cropped or
///   right-padded (edge column replicated) back to width/n.
inline DividedBatch divide(const PixelBatch& batch, int n, DivisionStrategy strategy) {
  check(n >= 1, ErrorKind::ShapeError, "patch count must be >= 1");
  check(batch.width % n == 0, ErrorKind::ShapeError,
        "width " + std::to_string(batch.width) + " not divisible by n=" + std::to_string(n));
  DividedBatch out;
  out.count = batch.count;
  out.height = batch.height;
  out.patch_width = batch.width / n;
  out.n = n;
  out.strategy = strategy;
  out.patches.resize(static_cast<size_t>(batch.count) * n * batch.height * out.patch_width);
  out.cuts.assign(static_cast<size_t>(batch.count), {});

  const int64_t w = batch.width, h = batch.height, pw = out.patch_width;
  for (int64_t i = 0; i < batch.count; ++i) {
    const float* img = batch.image(i);
    std::vector<int64_t> cut(static_cast<size_t>(n) + 1);
    cut[0] = 0;
    cut[static_cast<size_t>(n)] = w;
    for (int b = 1; b < n; ++b) {
      int64_t pos = b * pw;
      if (strategy == DivisionStrategy::vertical_projection) {
        // least-ink column in a window around the equal cut
        const int64_t half = w / (4 * n);
        const int64_t lo = std::max<int64_t>(1, pos - half);
        const int64_t hi = std::min<int64_t>(w - 1, pos + half);
        double best = 1e300;
        int64_t best_x = pos;
        for (int64_t x = lo; x <= hi; ++x) {
          double ink = 0;
          for (int64_t y = 0; y < h; ++y) ink += img[y * w + x];
          if (ink < best) {
            best = ink;
            best_x = x;
          }
        }
        pos = best_x;
      }
      cut[static_cast<size_t>(b)] = pos;
      out.cuts[static_cast<size_t>(i)].push_back(static_cast<int>(pos));
    }
    // monotone cuts even if projection windows overlap
    for (int b = 1; b <= n; ++b)
      check(cut[static_cast<size_t>(b)] > cut[static_cast<size_t>(b - 1)], ErrorKind::ShapeError,
            "degenerate cut positions");

    for (int p = 0; p < n; ++p) {
      float* dst = out.patch(i, p);
      const int64_t src0 = cut[static_cast<size_t>(p)];
      const int64_t src_w = cut[static_cast<size_t>(p) + 1] - src0;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < pw; ++x) {
          const int64_t sx = src0 + std::min(x, src_w - 1);  // replicate edge when padding
          dst[y * pw + x] = img[y * w + sx];
        }
    }
  }
  return out;
}

/// Draws one uniform permutation per group of m images and reassembles the
/// shuffled patches into new images.
inline PixelBatch shuffle_groups(const DividedBatch& divided, int m, uint64_t seed,
                                 PermutationRecord* record) {
  check(m >= 1, ErrorKind::GroupError, "group size must be >= 1");
  check(divided.count % m == 0, ErrorKind::GroupError,
        "batch of " + std::to_string(divided.count) + " images not divisible by m=" + std::to_string(m));
  const int n = divided.n;
  const int64_t groups = divided.count / m;
  const int64_t slots = static_cast<int64_t>(n) * m;

  PermutationRecord rec;
  rec.n = n;
  rec.m = m;
  rec.pi.resize(static_cast<size_t>(groups));
  Rng rng(seed);
  for (int64_t g = 0; g < groups; ++g) {
    std::vector<int> pi(static_cast<size_t>(slots));
    for (int64_t s = 0; s < slots; ++s) pi[static_cast<size_t>(s)] = static_cast<int>(s);
    rng.shuffle(pi);
    rec.pi[static_cast<size_t>(g)] = std::move(pi);
  }

  PixelBatch out;
  out.count = divided.count;
  out.height = divided.height;
  out.width = divided.patch_width * n;
  out.data.resize(static_cast<size_t>(out.count) * out.height * out.width);
  const int64_t h = out.height, pw = divided.patch_width, w = out.width;
  for (int64_t g = 0; g < groups; ++g) {
    const auto& pi = rec.pi[static_cast<size_t>(g)];
    for (int64_t s = 0; s < slots; ++s) {
      const int src = pi[static_cast<size_t>(s)];
      const float* srcp = divided.patch(g * m + src / n, src % n);
      float* dst = out.image(g * m + s / n) + (s % n) * pw;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < pw; ++x) dst[y * w + x] = srcp[y * pw + x];
    }
  }
  if (record) *record = std::move(rec);
  return out;
}

/// Inverts the patch shuffle on frame features. features[i] is the F x T
/// sequence encoded from permuted image i; the result holds, at every
/// original block position, the features computed over the patch that
/// originally occupied it. Block mapping is index arithmetic: T/n frames
/// per patch.
template <typename S>
std::vector<ndiff::Tensor<S>> unshuffle_features(const std::vector<ndiff::Tensor<S>>& features,
                                                 const PermutationRecord& rec) {
  check(static_cast<int64_t>(features.size()) == rec.covered_images(), ErrorKind::ShapeError,
        "feature count does not match permutation record");
  if (features.empty()) return {};
  const int64_t t = features[0].extent(1);
  check(t % rec.n == 0, ErrorKind::ShapeError,
        "frame count " + std::to_string(t) + " not divisible by n=" + std::to_string(rec.n));
  const int64_t bw = t / rec.n;  // frames per block
  const int64_t slots = static_cast<int64_t>(rec.n) * rec.m;

  std::vector<ndiff::Tensor<S>> out(features.size());
  for (int64_t g = 0; g < rec.groups(); ++g) {
    const auto& pi = rec.pi[static_cast<size_t>(g)];
    // blocks[j] collects the n blocks of output image j in order
    std::vector<std::vector<ndiff::Tensor<S>>> blocks(static_cast<size_t>(rec.m),
                                                      std::vector<ndiff::Tensor<S>>(static_cast<size_t>(rec.n)));
    for (int64_t s = 0; s < slots; ++s) {
      const int orig = pi[static_cast<size_t>(s)];
      auto block = ndiff::slice_cols(features[static_cast<size_t>(g * rec.m + s / rec.n)],
                                     (s % rec.n) * bw, (s % rec.n + 1) * bw);
      blocks[static_cast<size_t>(orig / rec.n)][static_cast<size_t>(orig % rec.n)] = std::move(block);
    }
    for (int j = 0; j < rec.m; ++j)
      out[static_cast<size_t>(g * rec.m + j)] = ndiff::concat(blocks[static_cast<size_t>(j)], 1);
  }
  return out;
}

/// Frame mask for the regularization loss: all true except, under
/// drop_boundary, the frame on each side of every cut.
inline std::vector<uint8_t> boundary_frame_mask(int64_t t, int n, DivisionStrategy strategy) {
  check(n >= 1 && t % n == 0, ErrorKind::ShapeError, "frames not divisible by patch count");
  std::vector<uint8_t> mask(static_cast<size_t>(t), 1);
  if (strategy == DivisionStrategy::drop_boundary) {
    const int64_t bw = t / n;
    for (int k = 1; k < n; ++k) {
      mask[static_cast<size_t>(k * bw - 1)] = 0;
      mask[static_cast<size_t>(k * bw)] = 0;
    }
  }
  return mask;
}

}  // namespace rclstr::permute
