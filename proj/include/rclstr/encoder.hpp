#pragma once

// Column encoder producing F x T sequence features, a framewise-affine plus
// width-3 sequence-convolution projector, and one predictor per hierarchy
// level, in online and momentum copies.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rclstr/bank.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/ndiff/conv.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::encoder {

using bank::Level;

struct ModelGeometry {
  int64_t height = 16;
  int64_t width = 64;
  int64_t feat_dim = 32;   // F
  int64_t frames = 16;     // T
  int64_t embed_dim = 16;  // D, contrastive feature dimension
  int64_t subword_bins = 4;
};

namespace detail {

// Layer plan: three convolutions with height-only kernels and two 2x2
// pools collapse H x W to 1 x T. Kernel heights are derived from H so that
// no padding is ever needed; T must equal W/4.
struct LayerPlan {
  int64_t kh1 = 3, kh2 = 2, kh3 = 3;
  int64_t c1 = 8, c2 = 16;
};

inline LayerPlan plan_layers(const ModelGeometry& g) {
  check(g.height % 2 == 0 && g.height >= 8, ErrorKind::ConfigError,
        "encoder needs an even height >= 8, got " + std::to_string(g.height));
  check(g.width % 4 == 0, ErrorKind::ConfigError, "encoder needs width divisible by 4");
  check(g.frames == g.width / 4, ErrorKind::ConfigError,
        "frames must equal width/4 for the conv stack (got T=" + std::to_string(g.frames) +
            ", W=" + std::to_string(g.width) + ")");
  LayerPlan p;
  const int64_t a = (g.height - p.kh1 + 1) / 2;  // height after conv1 + pool
  p.kh2 = (a % 2 == 0) ? 3 : 2;                  // keep the next pool input even
  const int64_t b = (a - p.kh2 + 1) / 2;
  check(b >= 1, ErrorKind::ConfigError, "height too small for the conv stack");
  p.kh3 = b;
  p.c1 = std::max<int64_t>(4, g.feat_dim / 4);
  p.c2 = std::max<int64_t>(8, g.feat_dim / 2);
  return p;
}

}  // namespace detail

template <typename S>
struct EncoderParams {
  ModelGeometry geom;
  detail::LayerPlan plan;

  ndiff::Tensor<S> conv1_w, conv1_b;
  ndiff::Tensor<S> conv2_w, conv2_b;
  ndiff::Tensor<S> conv3_w, conv3_b;
  ndiff::Tensor<S> proj_w, proj_b;  // framewise affine F -> F
  ndiff::Tensor<S> seq_w, seq_b;    // width-3 sequence conv F -> F
  std::array<ndiff::Tensor<S>, 3> pred_w;  // per level, F -> D
  std::array<ndiff::Tensor<S>, 3> pred_b;

  /// Stable name -> tensor listing; ordering defines checkpoint layout.
  std::vector<std::pair<std::string, ndiff::Tensor<S>*>> named_params() {
    return {
        {"conv1.w", &conv1_w}, {"conv1.b", &conv1_b},
        {"conv2.w", &conv2_w}, {"conv2.b", &conv2_b},
        {"conv3.w", &conv3_w}, {"conv3.b", &conv3_b},
        {"proj.w", &proj_w},   {"proj.b", &proj_b},
        {"seq.w", &seq_w},     {"seq.b", &seq_b},
        {"pred.frame.w", &pred_w[0]},   {"pred.frame.b", &pred_b[0]},
        {"pred.subword.w", &pred_w[1]}, {"pred.subword.b", &pred_b[1]},
        {"pred.word.w", &pred_w[2]},    {"pred.word.b", &pred_b[2]},
    };
  }

  /// Deep copy with gradients disabled (momentum branch, snapshots).
  EncoderParams clone_detached() const {
    EncoderParams out;
    out.geom = geom;
    out.plan = plan;
    out.conv1_w = conv1_w.clone_detached();
    out.conv1_b = conv1_b.clone_detached();
    out.conv2_w = conv2_w.clone_detached();
    out.conv2_b = conv2_b.clone_detached();
    out.conv3_w = conv3_w.clone_detached();
    out.conv3_b = conv3_b.clone_detached();
    out.proj_w = proj_w.clone_detached();
    out.proj_b = proj_b.clone_detached();
    out.seq_w = seq_w.clone_detached();
    out.seq_b = seq_b.clone_detached();
    for (int i = 0; i < 3; ++i) {
      out.pred_w[static_cast<size_t>(i)] = pred_w[static_cast<size_t>(i)].clone_detached();
      out.pred_b[static_cast<size_t>(i)] = pred_b[static_cast<size_t>(i)].clone_detached();
    }
    return out;
  }
};

namespace detail {

template <typename S>
ndiff::Tensor<S> init_weight(ndiff::Shape shape, int64_t fan_in, Rng& rng, bool trainable) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));  // kaiming-uniform scale
  std::vector<S> v(static_cast<size_t>(ndiff::shape_numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return trainable ? ndiff::Tensor<S>::param(std::move(shape), std::move(v))
                   : ndiff::Tensor<S>::from(std::move(shape), std::move(v));
}

template <typename S>
ndiff::Tensor<S> init_bias(int64_t n, bool trainable) {
  std::vector<S> v(static_cast<size_t>(n), S(0));
  return trainable ? ndiff::Tensor<S>::param({n}, std::move(v)) : ndiff::Tensor<S>::from({n}, std::move(v));
}

}  // namespace detail

/// Seeded parameter initialization: kaiming-uniform weights, zero biases.
template <typename S>
EncoderParams<S> init_params(const ModelGeometry& geom, uint64_t seed, bool trainable = true) {
  EncoderParams<S> p;
  p.geom = geom;
  p.plan = detail::plan_layers(geom);
  Rng rng(seed);
  const auto& pl = p.plan;
  const int64_t f = geom.feat_dim, d = geom.embed_dim;

  p.conv1_w = detail::init_weight<S>({pl.c1, 1, pl.kh1, 1}, pl.kh1, rng, trainable);
  p.conv1_b = detail::init_bias<S>(pl.c1, trainable);
  p.conv2_w = detail::init_weight<S>({pl.c2, pl.c1, pl.kh2, 1}, pl.c1 * pl.kh2, rng, trainable);
  p.conv2_b = detail::init_bias<S>(pl.c2, trainable);
  p.conv3_w = detail::init_weight<S>({f, pl.c2, pl.kh3, 1}, pl.c2 * pl.kh3, rng, trainable);
  p.conv3_b = detail::init_bias<S>(f, trainable);
  p.proj_w = detail::init_weight<S>({f, f}, f, rng, trainable);
  p.proj_b = detail::init_bias<S>(f, trainable);
  p.seq_w = detail::init_weight<S>({f, f, 3}, f * 3, rng, trainable);
  p.seq_b = detail::init_bias<S>(f, trainable);
  for (size_t l = 0; l < 3; ++l) {
    p.pred_w[l] = detail::init_weight<S>({f, d}, f, rng, trainable);
    p.pred_b[l] = detail::init_bias<S>(d, trainable);
  }
  return p;
}

/// Encodes one H x W image into F x T sequence features: the conv stack
/// collapses height to 1 and width to T, then the projector mixes per frame
/// and along the sequence axis.
template <typename S>
ndiff::Tensor<S> encode(const EncoderParams<S>& p, const ndiff::Tensor<S>& pixels) {
  check(pixels.rank() == 2 && pixels.extent(0) == p.geom.height && pixels.extent(1) == p.geom.width,
        ErrorKind::ShapeError,
        "pixels " + ndiff::shape_str(pixels.shape()) + " do not match configured geometry");
  using namespace ndiff;
  auto x = reshape(pixels, {1, p.geom.height, p.geom.width});
  x = relu(conv2d(x, p.conv1_w, p.conv1_b, 1, 1));
  x = maxpool2d(x, 2, 2);
  x = relu(conv2d(x, p.conv2_w, p.conv2_b, 1, 1));
  x = maxpool2d(x, 2, 2);
  x = relu(conv2d(x, p.conv3_w, p.conv3_b, 1, 1));  // F x 1 x T
  auto seq = reshape(x, {p.geom.feat_dim, p.geom.frames});

  // framewise affine: work in T x F so the bias broadcasts per frame
  auto tf = transpose(seq);
  auto mixed = relu(add(matmul(tf, p.proj_w), p.proj_b));
  // width-3 sequence conv (explicit padding keeps T)
  return conv1d_seq(transpose(mixed), p.seq_w, p.seq_b, 1);
}

/// Maps F x T sequence features to the unit-norm atoms of one level:
/// frame = per-frame identity (T atoms), subword = adaptive pooling into
/// bins, word = mean over frames (1 atom). Result is atoms x D.
template <typename S>
ndiff::Tensor<S> predict_level(const EncoderParams<S>& p, const ndiff::Tensor<S>& seq, Level level) {
  using namespace ndiff;
  const size_t li = static_cast<size_t>(level);
  Tensor<S> pooled;
  switch (level) {
    case Level::frame:
      pooled = seq;
      break;
    case Level::subword:
      pooled = avgpool_seq(seq, p.geom.subword_bins);
      break;
    case Level::word:
      pooled = reshape(mean(seq, 1), {p.geom.feat_dim, int64_t{1}});
      break;
  }
  auto atoms = add(matmul(transpose(pooled), p.pred_w[li]), p.pred_b[li]);
  return l2_normalize(atoms, 1);
}

/// Online/momentum pair. The momentum copy never receives gradients and is
/// moved toward the online copy by the momentum rule only.
template <typename S>
struct ModelPair {
  EncoderParams<S> online;
  EncoderParams<S> momentum;
  S m = S(0.999);
};

template <typename S>
ModelPair<S> init_pair(const ModelGeometry& geom, uint64_t seed, S m) {
  ModelPair<S> pair;
  pair.online = init_params<S>(geom, seed, /*trainable=*/true);
  pair.momentum = pair.online.clone_detached();
  pair.m = m;
  return pair;
}

/// momentum := m * momentum + (1 - m) * online, elementwise.
template <typename S>
void momentum_update(ModelPair<S>& pair, S m) {
  check(m >= S(0) && m <= S(1), ErrorKind::DomainError, "momentum coefficient must be in [0, 1]");
  auto on = pair.online.named_params();
  auto mo = pair.momentum.named_params();
  for (size_t i = 0; i < on.size(); ++i) {
    const auto& src = on[i].second->values();
    auto& dst = mo[i].second->mutable_values();
    for (size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (S(1) - m) * src[j];
  }
}

template <typename S>
void momentum_update(ModelPair<S>& pair) {
  momentum_update(pair, pair.m);
}

}  // namespace rclstr::encoder
