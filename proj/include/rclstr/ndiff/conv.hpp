#pragma once

// Convolution / pooling ops for the column encoder. Cross-correlation
// semantics, no implicit padding: spatial extents must divide out exactly
// (conv1d_seq takes an explicit pad argument). Stride-1 paths are written
// as row-contiguous saxpy/dot loops.

#include <algorithm>
#include <vector>

#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::ndiff {

/// x: C x H x W, w: OC x C x KH x KW, optional bias OC, stride (sh, sw).
/// Output OC x OH x OW with OH = (H-KH)/sh + 1 (exact division required).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 int64_t sh, int64_t sw) {
  check(x.rank() == 3 && w.rank() == 4, ErrorKind::ShapeMismatch,
        "conv2d expects C x H x W input and OC x C x KH x KW kernels");
  const int64_t c = x.extent(0), h = x.extent(1), wd = x.extent(2);
  const int64_t oc = w.extent(0), kc = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  check(kc == c, ErrorKind::ShapeMismatch, "conv2d channel mismatch");
  check(sh >= 1 && sw >= 1, ErrorKind::ShapeMismatch, "conv2d stride must be >= 1");
  check(h >= kh && wd >= kw && (h - kh) % sh == 0 && (wd - kw) % sw == 0, ErrorKind::ShapeMismatch,
        "conv2d geometry " + shape_str(x.shape()) + " with kernel " + shape_str(w.shape()) +
            " does not divide out (no implicit padding)");
  if (bias.defined()) {
    check(bias.rank() == 1 && bias.extent(0) == oc, ErrorKind::ShapeMismatch, "conv2d bias shape");
  }
  const int64_t oh = (h - kh) / sh + 1;
  const int64_t ow = (wd - kw) / sw + 1;

  const S* xv = x.values().data();
  const S* wv = w.values().data();
  std::vector<S> out(static_cast<size_t>(oc * oh * ow), S(0));
  S* ov = out.data();
  if (bias.defined()) {
    for (int64_t o = 0; o < oc; ++o)
      std::fill(ov + o * oh * ow, ov + (o + 1) * oh * ow, bias.values()[static_cast<size_t>(o)]);
  }
  if (sh == 1 && sw == 1) {
    for (int64_t o = 0; o < oc; ++o)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t u = 0; u < kh; ++u)
          for (int64_t v = 0; v < kw; ++v) {
            const S wval = wv[((o * c + ch) * kh + u) * kw + v];
            for (int64_t i = 0; i < oh; ++i) {
              const S* xrow = xv + (ch * h + i + u) * wd + v;
              S* orow = ov + (o * oh + i) * ow;
              for (int64_t j = 0; j < ow; ++j) orow[j] += wval * xrow[j];
            }
          }
  } else {
    for (int64_t o = 0; o < oc; ++o)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          S acc = ov[(o * oh + i) * ow + j];
          for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t u = 0; u < kh; ++u) {
              const S* xrow = xv + (ch * h + i * sh + u) * wd + j * sw;
              const S* wrow = wv + ((o * c + ch) * kh + u) * kw;
              for (int64_t v = 0; v < kw; ++v) acc += xrow[v] * wrow[v];
            }
          ov[(o * oh + i) * ow + j] = acc;
        }
  }
  Tensor<S> res = Tensor<S>::from({oc, oh, ow}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    auto nw = detail::tape_node(w, tape);
    auto nb = bias.defined() ? detail::tape_node(bias, tape) : nullptr;
    if (nx || nw || nb) {
      auto node = tape->add_op_node(oc * oh * ow);
      auto g = node->grad;
      auto xd = x.data_handle();
      auto wvd = w.data_handle();
      node->backprop = [g, nx, nw, nb, xd, wvd, c, h, wd, oc, kh, kw, oh, ow, sh, sw]() {
        const S* go = g->data();
        if (nb) {
          S* gb = nb->grad->data();
          for (int64_t o = 0; o < oc; ++o) {
            S acc = S(0);
            const S* grow = go + o * oh * ow;
            for (int64_t i = 0; i < oh * ow; ++i) acc += grow[i];
            gb[o] += acc;
          }
        }
        if (sh == 1 && sw == 1) {
          for (int64_t o = 0; o < oc; ++o)
            for (int64_t ch = 0; ch < c; ++ch)
              for (int64_t u = 0; u < kh; ++u)
                for (int64_t v = 0; v < kw; ++v) {
                  const int64_t widx = ((o * c + ch) * kh + u) * kw + v;
                  const S wval = (*wvd)[static_cast<size_t>(widx)];
                  S wacc = S(0);
                  for (int64_t i = 0; i < oh; ++i) {
                    const S* grow = go + (o * oh + i) * ow;
                    const int64_t xbase = (ch * h + i + u) * wd + v;
                    if (nx) {
                      S* gxrow = nx->grad->data() + xbase;
                      for (int64_t j = 0; j < ow; ++j) gxrow[j] += wval * grow[j];
                    }
                    if (nw) {
                      const S* xrow = xd->data() + xbase;
                      for (int64_t j = 0; j < ow; ++j) wacc += grow[j] * xrow[j];
                    }
                  }
                  if (nw) nw->grad->data()[widx] += wacc;
                }
        } else {
          for (int64_t o = 0; o < oc; ++o)
            for (int64_t i = 0; i < oh; ++i)
              for (int64_t j = 0; j < ow; ++j) {
                const S gv = go[(o * oh + i) * ow + j];
                for (int64_t ch = 0; ch < c; ++ch)
                  for (int64_t u = 0; u < kh; ++u) {
                    const int64_t xbase = (ch * h + i * sh + u) * wd + j * sw;
                    const int64_t wbase = ((o * c + ch) * kh + u) * kw;
                    if (nx) {
                      S* gx = nx->grad->data();
                      const S* wrow = wvd->data() + wbase;
                      for (int64_t v = 0; v < kw; ++v) gx[xbase + v] += gv * wrow[v];
                    }
                    if (nw) {
                      S* gw = nw->grad->data();
                      const S* xrow = xd->data() + xbase;
                      for (int64_t v = 0; v < kw; ++v) gw[wbase + v] += gv * xrow[v];
                    }
                  }
              }
        }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int64_t sh, int64_t sw) {
  return conv2d(x, w, Tensor<S>(), sh, sw);
}

/// Max pooling with window (ph, pw) and stride equal to the window.
/// Ties resolve to the first cell in scan order.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, int64_t ph, int64_t pw) {
  check(x.rank() == 3, ErrorKind::ShapeMismatch, "maxpool2d expects C x H x W");
  const int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  check(ph >= 1 && pw >= 1 && h % ph == 0 && w % pw == 0, ErrorKind::ShapeMismatch,
        "maxpool2d window " + std::to_string(ph) + "x" + std::to_string(pw) + " does not tile " +
            shape_str(x.shape()));
  const int64_t oh = h / ph, ow = w / pw;
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(c * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = (ch * h + i * ph) * w + j * pw;
        S bv = xv[best];
        for (int64_t u = 0; u < ph; ++u)
          for (int64_t v = 0; v < pw; ++v) {
            const int64_t idx = (ch * h + i * ph + u) * w + j * pw + v;
            if (xv[idx] > bv) {
              bv = xv[idx];
              best = idx;
            }
          }
        const int64_t oidx = (ch * oh + i) * ow + j;
        out[oidx] = bv;
        (*argmax)[oidx] = best;
      }
  Tensor<S> res = Tensor<S>::from({c, oh, ow}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(c * oh * ow);
      auto g = node->grad;
      node->backprop = [g, nx, argmax]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// 1-D convolution along the frame axis of an F x T array.
/// x: IC x T, w: OC x IC x KW, optional bias OC, explicit zero padding.
template <typename S>
Tensor<S> conv1d_seq(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int64_t pad) {
  check(x.rank() == 2 && w.rank() == 3, ErrorKind::ShapeMismatch,
        "conv1d_seq expects IC x T input and OC x IC x KW kernels");
  const int64_t ic = x.extent(0), t = x.extent(1);
  const int64_t oc = w.extent(0), kc = w.extent(1), kw = w.extent(2);
  check(kc == ic, ErrorKind::ShapeMismatch, "conv1d_seq channel mismatch");
  check(pad >= 0, ErrorKind::ShapeMismatch, "conv1d_seq pad must be >= 0");
  const int64_t ot = t + 2 * pad - kw + 1;
  check(ot >= 1, ErrorKind::ShapeMismatch, "conv1d_seq kernel wider than padded sequence");
  if (bias.defined())
    check(bias.rank() == 1 && bias.extent(0) == oc, ErrorKind::ShapeMismatch, "conv1d_seq bias shape");

  const S* xv = x.values().data();
  const S* wv = w.values().data();
  std::vector<S> out(static_cast<size_t>(oc * ot), S(0));
  S* ov = out.data();
  if (bias.defined())
    for (int64_t o = 0; o < oc; ++o)
      std::fill(ov + o * ot, ov + (o + 1) * ot, bias.values()[static_cast<size_t>(o)]);
  for (int64_t o = 0; o < oc; ++o)
    for (int64_t ch = 0; ch < ic; ++ch)
      for (int64_t v = 0; v < kw; ++v) {
        const S wval = wv[(o * ic + ch) * kw + v];
        const int64_t j0 = std::max<int64_t>(0, pad - v);
        const int64_t j1 = std::min<int64_t>(ot, t + pad - v);
        const S* xrow = xv + ch * t + (j0 + v - pad);
        S* orow = ov + o * ot + j0;
        for (int64_t j = 0; j < j1 - j0; ++j) orow[j] += wval * xrow[j];
      }
  Tensor<S> res = Tensor<S>::from({oc, ot}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    auto nw = detail::tape_node(w, tape);
    auto nb = bias.defined() ? detail::tape_node(bias, tape) : nullptr;
    if (nx || nw || nb) {
      auto node = tape->add_op_node(oc * ot);
      auto g = node->grad;
      auto xd = x.data_handle();
      auto wd = w.data_handle();
      node->backprop = [g, nx, nw, nb, xd, wd, ic, t, oc, kw, ot, pad]() {
        const S* go = g->data();
        if (nb) {
          S* gb = nb->grad->data();
          for (int64_t o = 0; o < oc; ++o) {
            S acc = S(0);
            for (int64_t j = 0; j < ot; ++j) acc += go[o * ot + j];
            gb[o] += acc;
          }
        }
        for (int64_t o = 0; o < oc; ++o)
          for (int64_t ch = 0; ch < ic; ++ch)
            for (int64_t v = 0; v < kw; ++v) {
              const int64_t widx = (o * ic + ch) * kw + v;
              const S wval = (*wd)[static_cast<size_t>(widx)];
              const int64_t j0 = std::max<int64_t>(0, pad - v);
              const int64_t j1 = std::min<int64_t>(ot, t + pad - v);
              const S* grow = go + o * ot + j0;
              const int64_t xoff = ch * t + (j0 + v - pad);
              S wacc = S(0);
              if (nx) {
                S* gxrow = nx->grad->data() + xoff;
                for (int64_t j = 0; j < j1 - j0; ++j) gxrow[j] += wval * grow[j];
              }
              if (nw) {
                const S* xrow = xd->data() + xoff;
                for (int64_t j = 0; j < j1 - j0; ++j) wacc += grow[j] * xrow[j];
                nw->grad->data()[widx] += wacc;
              }
            }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

template <typename S>
Tensor<S> conv1d_seq(const Tensor<S>& x, const Tensor<S>& w, int64_t pad) {
  return conv1d_seq(x, w, Tensor<S>(), pad);
}

}  // namespace rclstr::ndiff
