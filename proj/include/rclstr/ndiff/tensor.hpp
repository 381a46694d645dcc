#pragma once

// Reverse-mode differentiable array engine. Flat row-major storage, an
// explicit per-forward-pass tape, first-order gradients only. Templated on
// the scalar so the training path runs in float and gradient checks in
// double.

#include <cmath>
#include <cstdint>
#include <atomic>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rclstr/core/errors.hpp"

namespace rclstr::ndiff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename S>
class Tape;

namespace detail {

template <typename S>
struct Node {
  // Gradient w.r.t. this node's output; for leaves this aliases the
  // tensor's persistent grad buffer so accumulation lands there directly.
  std::shared_ptr<std::vector<S>> grad;
  std::function<void()> backprop;  // null for leaves
};

}  // namespace detail

/// Multi-dimensional numeric array. Value-semantic handle: copies share the
/// underlying storage. Arrays without tape links are immutable by
/// convention after creation; parameter arrays are mutated only between
/// tapes (optimizer updates).
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<S> values) {
    check(shape_numel(shape) == static_cast<int64_t>(values.size()), ErrorKind::ShapeMismatch,
          "value count " + std::to_string(values.size()) + " does not fill shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  static Tensor zeros(Shape shape) {
    int64_t n = shape_numel(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<S>>(static_cast<size_t>(n), S(0));
    return t;
  }

  static Tensor full(Shape shape, S value) {
    int64_t n = shape_numel(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<S>>(static_cast<size_t>(n), value);
    return t;
  }

  static Tensor scalar(S value) { return from({1}, {value}); }

  /// Leaf that participates in differentiation; owns a persistent,
  /// zero-initialized gradient accumulator.
  static Tensor param(Shape shape, std::vector<S> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.requires_grad_ = true;
    t.grad_ = std::make_shared<std::vector<S>>(t.data_->size(), S(0));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_ ? data_->size() : 0); }
  int64_t extent(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }

  const std::vector<S>& values() const { return *data_; }
  /// In-place mutation; callers must not mutate while a tape references
  /// this array's values.
  std::vector<S>& mutable_values() { return *data_; }

  bool requires_grad() const { return requires_grad_; }

  const std::vector<S>& grad() const {
    check(static_cast<bool>(grad_), ErrorKind::DomainError, "tensor has no gradient buffer");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  S item() const {
    check(numel() == 1, ErrorKind::NotScalar, "item() on array of " + std::to_string(numel()) + " elements");
    return (*data_)[0];
  }

  /// Deep copy of the values as a fresh constant (no grad, no tape link).
  Tensor clone_detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<S>>(*data_);
    return t;
  }

  // -- tape plumbing (used by the ops below) --

  std::shared_ptr<std::vector<S>> data_handle() const { return data_; }
  std::shared_ptr<std::vector<S>> grad_handle() const { return grad_; }

  void attach_node(std::shared_ptr<detail::Node<S>> node, uint64_t tape_id) const {
    node_ = std::move(node);
    node_tape_id_ = tape_id;
  }

  std::shared_ptr<detail::Node<S>> node_for(uint64_t tape_id) const {
    return node_tape_id_ == tape_id ? node_ : nullptr;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
  bool requires_grad_ = false;

  // Per-tape node cache. Mutable: attaching to a tape does not change the
  // mathematical value.
  mutable std::shared_ptr<detail::Node<S>> node_;
  mutable uint64_t node_tape_id_ = 0;
};

/// Computation record for one forward pass. Constructing a Tape makes it
/// current for this thread; ops record onto the current tape when any input
/// requires gradients. backward() consumes the tape.
template <typename S>
class Tape {
 public:
  Tape() : id_(make_id()), prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  uint64_t id() const { return id_; }
  bool consumed() const { return consumed_; }
  size_t size() const { return nodes_.size(); }

  std::shared_ptr<detail::Node<S>> add_op_node(int64_t out_numel) {
    auto n = std::make_shared<detail::Node<S>>();
    n->grad = std::make_shared<std::vector<S>>(static_cast<size_t>(out_numel), S(0));
    nodes_.push_back(n);
    return n;
  }

  void add_leaf(std::shared_ptr<detail::Node<S>> n) { nodes_.push_back(std::move(n)); }

  /// Seeds d(loss)/d(loss) = 1 and propagates through the record in reverse
  /// creation order. Gradients accumulate into every reachable leaf buffer.
  /// The tape is cleared afterwards.
  void backward(const Tensor<S>& loss) {
    check(!consumed_, ErrorKind::DomainError, "tape already consumed by backward()");
    check(loss.numel() == 1, ErrorKind::NotScalar,
          "backward() requires a scalar loss, got " + shape_str(loss.shape()));
    auto ln = loss.node_for(id_);
    check(static_cast<bool>(ln), ErrorKind::NotScalar, "loss is not attached to this tape");
    (*ln->grad)[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop();
    }
    nodes_.clear();
    consumed_ = true;
  }

 private:
  static uint64_t make_id() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
  }

  static thread_local Tape* current_;

  uint64_t id_;
  Tape* prev_;
  bool consumed_ = false;
  std::vector<std::shared_ptr<detail::Node<S>>> nodes_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

namespace detail {

// Registers `t` as a leaf on `tape` (or returns its existing node). Returns
// null for constants.
template <typename S>
std::shared_ptr<Node<S>> tape_node(const Tensor<S>& t, Tape<S>* tape) {
  if (!tape || tape->consumed()) return nullptr;
  if (auto n = t.node_for(tape->id())) return n;
  if (!t.requires_grad()) return nullptr;
  auto n = std::make_shared<Node<S>>();
  n->grad = t.grad_handle();
  tape->add_leaf(n);
  t.attach_node(n, tape->id());
  return n;
}

template <typename S>
void attach_result(Tensor<S>& out, Tape<S>* tape, std::shared_ptr<Node<S>> node) {
  out.attach_node(std::move(node), tape->id());
}

// Trailing-dimension broadcast: shapes equal, either side a single element,
// or the smaller shape a suffix of the larger. Element i of the large side
// pairs with element (i % small_numel) of the small side.
template <typename S>
struct Broadcast2 {
  Shape out_shape;
  int64_t n = 0;        // numel of output (= larger side)
  int64_t na = 0, nb = 0;
  bool valid = false;
};

inline bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  size_t off = large.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (small[i] != large[off + i]) return false;
  return true;
}

template <typename S>
Broadcast2<S> resolve_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  Broadcast2<S> r;
  r.na = a.numel();
  r.nb = b.numel();
  if (a.shape() == b.shape()) {
    r.out_shape = a.shape();
    r.n = r.na;
    r.valid = true;
  } else if (r.nb == 1 || is_suffix(b.shape(), a.shape())) {
    r.out_shape = a.shape();
    r.n = r.na;
    r.valid = true;
  } else if (r.na == 1 || is_suffix(a.shape(), b.shape())) {
    r.out_shape = b.shape();
    r.n = r.nb;
    r.valid = true;
  }
  return r;
}

// (outer, len, inner) decomposition for slice-wise ops along `axis`.
struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int64_t axis) {
  AxisSplit s;
  s.len = shape[static_cast<size_t>(axis)];
  for (int64_t i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_axis(const Shape& shape, int64_t axis) {
  check(axis >= 0 && axis < static_cast<int64_t>(shape.size()), ErrorKind::ShapeMismatch,
        "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

enum class BinaryKind { add, sub, mul };

template <typename S>
Tensor<S> binary_op(BinaryKind kind, const Tensor<S>& a, const Tensor<S>& b) {
  auto bc = detail::resolve_broadcast(a, b);
  check(bc.valid, ErrorKind::ShapeMismatch,
        "broadcast of " + shape_str(a.shape()) + " with " + shape_str(b.shape()) +
            " (trailing-dimension broadcast only)");
  const S* av = a.values().data();
  const S* bv = b.values().data();
  const int64_t n = bc.n, na = bc.na, nb = bc.nb;
  std::vector<S> out(static_cast<size_t>(n));
  S* ov = out.data();
  // the equal-shape fast path matters: the loss kernels live here
  if (na == n && nb == n) {
    switch (kind) {
      case BinaryKind::add:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
        break;
      case BinaryKind::sub:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
        break;
      case BinaryKind::mul:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
        break;
    }
  } else {
    switch (kind) {
      case BinaryKind::add:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i % na] + bv[i % nb];
        break;
      case BinaryKind::sub:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i % na] - bv[i % nb];
        break;
      case BinaryKind::mul:
        for (int64_t i = 0; i < n; ++i) ov[i] = av[i % na] * bv[i % nb];
        break;
    }
  }
  Tensor<S> res = Tensor<S>::from(bc.out_shape, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto na_node = detail::tape_node(a, tape);
    auto nb_node = detail::tape_node(b, tape);
    if (na_node || nb_node) {
      auto node = tape->add_op_node(n);
      auto g = node->grad;
      auto ad = a.data_handle();
      auto bd = b.data_handle();
      node->backprop = [kind, g, na_node, nb_node, ad, bd, n, na, nb]() {
        const S* go = g->data();
        if (na_node) {
          S* ga = na_node->grad->data();
          switch (kind) {
            case BinaryKind::add:
            case BinaryKind::sub:
              if (na == n)
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
              else
                for (int64_t i = 0; i < n; ++i) ga[i % na] += go[i];
              break;
            case BinaryKind::mul: {
              const S* bp = bd->data();
              if (na == n && nb == n)
                for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * bp[i];
              else
                for (int64_t i = 0; i < n; ++i) ga[i % na] += go[i] * bp[i % nb];
              break;
            }
          }
        }
        if (nb_node) {
          S* gb = nb_node->grad->data();
          switch (kind) {
            case BinaryKind::add:
              if (nb == n)
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
              else
                for (int64_t i = 0; i < n; ++i) gb[i % nb] += go[i];
              break;
            case BinaryKind::sub:
              if (nb == n)
                for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
              else
                for (int64_t i = 0; i < n; ++i) gb[i % nb] -= go[i];
              break;
            case BinaryKind::mul: {
              const S* ap = ad->data();
              if (na == n && nb == n)
                for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * ap[i];
              else
                for (int64_t i = 0; i < n; ++i) gb[i % nb] += go[i] * ap[i % na];
              break;
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
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return binary_op(BinaryKind::add, a, b); }
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return binary_op(BinaryKind::sub, a, b); }
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return binary_op(BinaryKind::mul, a, b); }

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

namespace detail {

// Shared scaffolding for unary pointwise ops with derivative expressible
// from input and output values.
template <typename S, typename Fwd, typename Bwd>
Tensor<S> pointwise(const Tensor<S>& x, Fwd fwd, Bwd dfdx) {
  const auto& xv = x.values();
  const int64_t n = x.numel();
  std::vector<S> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  Tensor<S> res = Tensor<S>::from(x.shape(), std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(n);
      auto g = node->grad;
      auto xd = x.data_handle();
      auto yd = res.data_handle();
      node->backprop = [g, nx, xd, yd, n, dfdx]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * dfdx((*xd)[i], (*yd)[i]);
      };
      attach_result(res, tape, node);
    }
  }
  return res;
}

}  // namespace detail

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::pointwise(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& x) { return scale(x, c); }

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  for (S v : x.values())
    check(v > S(0), ErrorKind::DomainError, "log of non-positive value " + std::to_string(static_cast<double>(v)));
  return detail::pointwise(
      x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

/// Generic differentiable pointwise map with a caller-supplied derivative.
/// The extension point for custom ops (and for deliberately corrupted
/// backward rules in gradient-check self-tests).
template <typename S, typename Fwd, typename Bwd>
Tensor<S> map_unary(const Tensor<S>& x, Fwd fwd, Bwd dfdx) {
  return detail::pointwise(x, fwd, [dfdx](S v, S) { return dfdx(v); });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.rank() == 2 && b.rank() == 2, ErrorKind::ShapeMismatch,
        "matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  check(k == k2, ErrorKind::ShapeMismatch,
        "matmul inner extents disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const S* av = a.values().data();
  const S* bv = b.values().data();
  std::vector<S> out(static_cast<size_t>(m * n), S(0));
  S* ov = out.data();
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = av + i * k;
    S* orow = ov + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const S aik = arow[kk];
      const S* brow = bv + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  Tensor<S> res = Tensor<S>::from({m, n}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto na = detail::tape_node(a, tape);
    auto nb = detail::tape_node(b, tape);
    if (na || nb) {
      auto node = tape->add_op_node(m * n);
      auto g = node->grad;
      auto ad = a.data_handle();
      auto bd = b.data_handle();
      node->backprop = [g, na, nb, ad, bd, m, k, n]() {
        const S* go = g->data();
        if (na) {
          // grad_a = g . b^T, via a transposed copy so the inner loop is a
          // contiguous saxpy
          S* ga = na->grad->data();
          const S* bv2 = bd->data();
          std::vector<S> bt(static_cast<size_t>(n * k));
          for (int64_t kk = 0; kk < k; ++kk)
            for (int64_t j = 0; j < n; ++j) bt[j * k + kk] = bv2[kk * n + j];
          for (int64_t i = 0; i < m; ++i) {
            const S* grow = go + i * n;
            S* garow = ga + i * k;
            for (int64_t j = 0; j < n; ++j) {
              const S gij = grow[j];
              const S* btrow = bt.data() + j * k;
              for (int64_t kk = 0; kk < k; ++kk) garow[kk] += gij * btrow[kk];
            }
          }
        }
        if (nb) {
          // grad_b = a^T . g
          S* gb = nb->grad->data();
          const S* av2 = ad->data();
          for (int64_t i = 0; i < m; ++i) {
            const S* grow = go + i * n;
            const S* arow = av2 + i * k;
            for (int64_t kk = 0; kk < k; ++kk) {
              const S aik = arow[kk];
              S* gbrow = gb + kk * n;
              for (int64_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
            }
          }
        }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// softmax / log_softmax (temperature-scaled, max-subtracted)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int64_t axis, S temperature) {
  check(temperature > S(0), ErrorKind::DomainError, "softmax temperature must be positive");
  detail::check_axis(x.shape(), axis);
  auto sp = detail::split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<S> out(xv.size());
  const S inv_t = S(1) / temperature;
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      S mx = xv[base];
      for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      S denom = S(0);
      for (int64_t l = 0; l < sp.len; ++l) {
        S e = std::exp((xv[base + l * sp.inner] - mx) * inv_t);
        out[base + l * sp.inner] = e;
        denom += e;
      }
      const S inv_d = S(1) / denom;
      for (int64_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] *= inv_d;
    }
  }
  Tensor<S> res = Tensor<S>::from(x.shape(), std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(x.numel());
      auto g = node->grad;
      auto yd = res.data_handle();
      node->backprop = [g, nx, yd, sp, inv_t]() {
        const std::vector<S>& go = *g;
        const std::vector<S>& y = *yd;
        std::vector<S>& gx = *nx->grad;
        for (int64_t o = 0; o < sp.outer; ++o) {
          for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.len * sp.inner + in;
            S dot = S(0);
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t idx = base + l * sp.inner;
              dot += go[idx] * y[idx];
            }
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t idx = base + l * sp.inner;
              gx[idx] += inv_t * y[idx] * (go[idx] - dot);
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
Tensor<S> log_softmax(const Tensor<S>& x, int64_t axis, S temperature) {
  check(temperature > S(0), ErrorKind::DomainError, "log_softmax temperature must be positive");
  detail::check_axis(x.shape(), axis);
  auto sp = detail::split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<S> out(xv.size());
  const S inv_t = S(1) / temperature;
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      S mx = xv[base];
      for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      S denom = S(0);
      for (int64_t l = 0; l < sp.len; ++l) denom += std::exp((xv[base + l * sp.inner] - mx) * inv_t);
      const S lse = std::log(denom);
      for (int64_t l = 0; l < sp.len; ++l) {
        const int64_t idx = base + l * sp.inner;
        out[idx] = (xv[idx] - mx) * inv_t - lse;
      }
    }
  }
  Tensor<S> res = Tensor<S>::from(x.shape(), std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(x.numel());
      auto g = node->grad;
      auto yd = res.data_handle();
      node->backprop = [g, nx, yd, sp, inv_t]() {
        const std::vector<S>& go = *g;
        const std::vector<S>& y = *yd;  // log-probabilities
        std::vector<S>& gx = *nx->grad;
        for (int64_t o = 0; o < sp.outer; ++o) {
          for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.len * sp.inner + in;
            S gsum = S(0);
            for (int64_t l = 0; l < sp.len; ++l) gsum += go[base + l * sp.inner];
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t idx = base + l * sp.inner;
              gx[idx] += inv_t * (go[idx] - std::exp(y[idx]) * gsum);
            }
          }
        }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// softmax and log_softmax of the same logits in a single pass (the
/// exponentials are computed once). Each output is independently
/// differentiable; gradients accumulate into the shared input.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> softmax_pair(const Tensor<S>& x, int64_t axis, S temperature) {
  check(temperature > S(0), ErrorKind::DomainError, "softmax temperature must be positive");
  detail::check_axis(x.shape(), axis);
  auto sp = detail::split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<S> prob(xv.size());
  std::vector<S> logp(xv.size());
  const S inv_t = S(1) / temperature;
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      S mx = xv[base];
      for (int64_t l = 1; l < sp.len; ++l) mx = std::max(mx, xv[base + l * sp.inner]);
      S denom = S(0);
      for (int64_t l = 0; l < sp.len; ++l) {
        const int64_t idx = base + l * sp.inner;
        const S e = std::exp((xv[idx] - mx) * inv_t);
        prob[idx] = e;
        denom += e;
      }
      const S lse = std::log(denom);
      const S inv_d = S(1) / denom;
      for (int64_t l = 0; l < sp.len; ++l) {
        const int64_t idx = base + l * sp.inner;
        logp[idx] = (xv[idx] - mx) * inv_t - lse;
        prob[idx] *= inv_d;
      }
    }
  }
  Tensor<S> prob_t = Tensor<S>::from(x.shape(), std::move(prob));
  Tensor<S> logp_t = Tensor<S>::from(x.shape(), std::move(logp));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      {
        auto node = tape->add_op_node(x.numel());
        auto g = node->grad;
        auto yd = prob_t.data_handle();
        node->backprop = [g, nx, yd, sp, inv_t]() {
          const std::vector<S>& go = *g;
          const std::vector<S>& y = *yd;
          std::vector<S>& gx = *nx->grad;
          for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
              const int64_t base = o * sp.len * sp.inner + in;
              S dot = S(0);
              for (int64_t l = 0; l < sp.len; ++l) {
                const int64_t idx = base + l * sp.inner;
                dot += go[idx] * y[idx];
              }
              for (int64_t l = 0; l < sp.len; ++l) {
                const int64_t idx = base + l * sp.inner;
                gx[idx] += inv_t * y[idx] * (go[idx] - dot);
              }
            }
          }
        };
        detail::attach_result(prob_t, tape, node);
      }
      {
        auto node = tape->add_op_node(x.numel());
        auto g = node->grad;
        auto pd = prob_t.data_handle();
        node->backprop = [g, nx, pd, sp, inv_t]() {
          const std::vector<S>& go = *g;
          const std::vector<S>& y = *pd;  // probabilities
          std::vector<S>& gx = *nx->grad;
          for (int64_t o = 0; o < sp.outer; ++o) {
            for (int64_t in = 0; in < sp.inner; ++in) {
              const int64_t base = o * sp.len * sp.inner + in;
              S gsum = S(0);
              for (int64_t l = 0; l < sp.len; ++l) gsum += go[base + l * sp.inner];
              for (int64_t l = 0; l < sp.len; ++l) {
                const int64_t idx = base + l * sp.inner;
                gx[idx] += inv_t * (go[idx] - y[idx] * gsum);
              }
            }
          }
        };
        detail::attach_result(logp_t, tape, node);
      }
    }
  }
  return {prob_t, logp_t};
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceKind { sum, mean };

template <typename S>
Tensor<S> reduce(ReduceKind kind, const Tensor<S>& x, int64_t axis) {
  detail::check_axis(x.shape(), axis);
  auto sp = detail::split_axis(x.shape(), axis);
  const auto& xv = x.values();
  Shape out_shape;
  for (int64_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.extent(i));
  if (out_shape.empty()) out_shape = {1};
  const S w = kind == ReduceKind::mean ? S(1) / static_cast<S>(sp.len) : S(1);
  std::vector<S> out(static_cast<size_t>(sp.outer * sp.inner), S(0));
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t l = 0; l < sp.len; ++l)
      for (int64_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += xv[(o * sp.len + l) * sp.inner + in];
  if (kind == ReduceKind::mean)
    for (S& v : out) v *= w;
  Tensor<S> res = Tensor<S>::from(out_shape, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(res.numel());
      auto g = node->grad;
      node->backprop = [g, nx, sp, w]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t l = 0; l < sp.len; ++l)
            for (int64_t in = 0; in < sp.inner; ++in)
              gx[(o * sp.len + l) * sp.inner + in] += go[o * sp.inner + in] * w;
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int64_t axis) { return reduce(ReduceKind::sum, x, axis); }
template <typename S>
Tensor<S> mean(const Tensor<S>& x, int64_t axis) { return reduce(ReduceKind::mean, x, axis); }

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape);

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  return sum(reshape(x, {x.numel()}), 0);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return mean(reshape(x, {x.numel()}), 0);
}

// ---------------------------------------------------------------------------
// Sequence pooling / normalization
// ---------------------------------------------------------------------------

/// Adaptive average pooling along the frame axis of an F x T array:
/// bin b averages frames [floor(b*T/bins), floor((b+1)*T/bins)).
template <typename S>
Tensor<S> avgpool_seq(const Tensor<S>& x, int64_t bins) {
  check(x.rank() == 2, ErrorKind::ShapeMismatch, "avgpool_seq expects F x T, got " + shape_str(x.shape()));
  const int64_t f = x.extent(0), t = x.extent(1);
  check(bins >= 1 && bins <= t, ErrorKind::DomainError,
        "bins " + std::to_string(bins) + " out of range [1, " + std::to_string(t) + "]");
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(f * bins), S(0));
  std::vector<int64_t> lo(static_cast<size_t>(bins)), hi(static_cast<size_t>(bins));
  for (int64_t b = 0; b < bins; ++b) {
    lo[b] = b * t / bins;
    hi[b] = (b + 1) * t / bins;
  }
  for (int64_t r = 0; r < f; ++r)
    for (int64_t b = 0; b < bins; ++b) {
      S acc = S(0);
      for (int64_t c = lo[b]; c < hi[b]; ++c) acc += xv[r * t + c];
      out[r * bins + b] = acc / static_cast<S>(hi[b] - lo[b]);
    }
  Tensor<S> res = Tensor<S>::from({f, bins}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(f * bins);
      auto g = node->grad;
      node->backprop = [g, nx, f, t, bins, lo, hi]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t r = 0; r < f; ++r)
          for (int64_t b = 0; b < bins; ++b) {
            const S share = go[r * bins + b] / static_cast<S>(hi[b] - lo[b]);
            for (int64_t c = lo[b]; c < hi[b]; ++c) gx[r * t + c] += share;
          }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// Scales each slice along `axis` to unit Euclidean norm.
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, int64_t axis) {
  detail::check_axis(x.shape(), axis);
  auto sp = detail::split_axis(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<S> out(xv.size());
  std::vector<S> norms(static_cast<size_t>(sp.outer * sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.len * sp.inner + in;
      S ss = S(0);
      for (int64_t l = 0; l < sp.len; ++l) {
        S v = xv[base + l * sp.inner];
        ss += v * v;
      }
      S norm = std::sqrt(ss);
      check(norm > S(1e-12), ErrorKind::DegenerateInput, "l2_normalize on a near-zero slice");
      norms[o * sp.inner + in] = norm;
      const S inv = S(1) / norm;
      for (int64_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] = xv[base + l * sp.inner] * inv;
    }
  }
  Tensor<S> res = Tensor<S>::from(x.shape(), std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(x.numel());
      auto g = node->grad;
      auto yd = res.data_handle();
      node->backprop = [g, nx, yd, sp, norms]() {
        const std::vector<S>& go = *g;
        const std::vector<S>& y = *yd;
        std::vector<S>& gx = *nx->grad;
        for (int64_t o = 0; o < sp.outer; ++o) {
          for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.len * sp.inner + in;
            S dot = S(0);
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t idx = base + l * sp.inner;
              dot += go[idx] * y[idx];
            }
            const S inv = S(1) / norms[o * sp.inner + in];
            for (int64_t l = 0; l < sp.len; ++l) {
              const int64_t idx = base + l * sp.inner;
              gx[idx] += (go[idx] - y[idx] * dot) * inv;
            }
          }
        }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  check(shape_numel(new_shape) == x.numel(), ErrorKind::ShapeMismatch,
        "reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
  Tensor<S> res = Tensor<S>::from(new_shape, x.values());
  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(x.numel());
      auto g = node->grad;
      const int64_t n = x.numel();
      node->backprop = [g, nx, n]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  check(x.rank() == 2, ErrorKind::ShapeMismatch, "transpose expects rank 2, got " + shape_str(x.shape()));
  const int64_t m = x.extent(0), n = x.extent(1);
  const auto& xv = x.values();
  std::vector<S> out(xv.size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  Tensor<S> res = Tensor<S>::from({n, m}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(x.numel());
      auto g = node->grad;
      node->backprop = [g, nx, m, n]() {
        const std::vector<S>& go = *g;  // n x m
        std::vector<S>& gx = *nx->grad;
        for (int64_t j = 0; j < n; ++j)
          for (int64_t i = 0; i < m; ++i) gx[i * n + j] += go[j * m + i];
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// Concatenates rank-2 arrays along `axis` (0 = rows, 1 = cols).
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int64_t axis) {
  check(!parts.empty(), ErrorKind::ShapeMismatch, "concat of zero arrays");
  check(axis == 0 || axis == 1, ErrorKind::ShapeMismatch, "concat axis must be 0 or 1");
  const int64_t other = axis == 0 ? 1 : 0;
  const int64_t common = parts[0].rank() == 2 ? parts[0].extent(other) : -1;
  check(parts[0].rank() == 2, ErrorKind::ShapeMismatch, "concat expects rank-2 arrays");
  int64_t total = 0;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.extent(other) == common, ErrorKind::ShapeMismatch,
          "concat operand " + shape_str(p.shape()) + " incompatible");
    total += p.extent(axis);
  }
  Shape out_shape = axis == 0 ? Shape{total, common} : Shape{common, total};
  std::vector<S> out(static_cast<size_t>(shape_numel(out_shape)));
  if (axis == 0) {
    int64_t row0 = 0;
    for (const auto& p : parts) {
      std::copy(p.values().begin(), p.values().end(), out.begin() + row0 * common);
      row0 += p.extent(0);
    }
  } else {
    int64_t col0 = 0;
    for (const auto& p : parts) {
      const int64_t pc = p.extent(1);
      const auto& pv = p.values();
      for (int64_t r = 0; r < common; ++r)
        std::copy(pv.begin() + r * pc, pv.begin() + (r + 1) * pc, out.begin() + r * total + col0);
      col0 += pc;
    }
  }
  Tensor<S> res = Tensor<S>::from(out_shape, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    std::vector<std::shared_ptr<detail::Node<S>>> pnodes(parts.size());
    bool any = false;
    for (size_t i = 0; i < parts.size(); ++i) {
      pnodes[i] = detail::tape_node(parts[i], tape);
      any = any || static_cast<bool>(pnodes[i]);
    }
    if (any) {
      auto node = tape->add_op_node(res.numel());
      auto g = node->grad;
      std::vector<int64_t> sizes(parts.size());
      for (size_t i = 0; i < parts.size(); ++i) sizes[i] = parts[i].extent(axis);
      node->backprop = [g, pnodes, sizes, axis, common, total]() {
        const std::vector<S>& go = *g;
        int64_t off = 0;
        for (size_t i = 0; i < pnodes.size(); ++i) {
          if (pnodes[i]) {
            std::vector<S>& gp = *pnodes[i]->grad;
            if (axis == 0) {
              const int64_t base = off * common;
              for (int64_t j = 0; j < sizes[i] * common; ++j) gp[j] += go[base + j];
            } else {
              for (int64_t r = 0; r < common; ++r)
                for (int64_t c = 0; c < sizes[i]; ++c) gp[r * sizes[i] + c] += go[r * total + off + c];
            }
          }
          off += sizes[i];
        }
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// Columns [c0, c1) of a rank-2 array.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int64_t c0, int64_t c1) {
  check(x.rank() == 2, ErrorKind::ShapeMismatch, "slice_cols expects rank 2");
  const int64_t m = x.extent(0), n = x.extent(1);
  check(c0 >= 0 && c0 < c1 && c1 <= n, ErrorKind::ShapeMismatch,
        "column range [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " + std::to_string(n));
  const int64_t w = c1 - c0;
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(m * w));
  for (int64_t r = 0; r < m; ++r)
    std::copy(xv.begin() + r * n + c0, xv.begin() + r * n + c1, out.begin() + r * w);
  Tensor<S> res = Tensor<S>::from({m, w}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(m * w);
      auto g = node->grad;
      node->backprop = [g, nx, m, n, c0, w]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t r = 0; r < m; ++r)
          for (int64_t c = 0; c < w; ++c) gx[r * n + c0 + c] += go[r * w + c];
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

/// Gathers rows of a rank-2 array by index (duplicates allowed).
template <typename S>
Tensor<S> take_rows(const Tensor<S>& x, std::vector<int64_t> indices) {
  check(x.rank() == 2, ErrorKind::ShapeMismatch, "take_rows expects rank 2");
  const int64_t m = x.extent(0), n = x.extent(1);
  for (int64_t idx : indices)
    check(idx >= 0 && idx < m, ErrorKind::ShapeMismatch, "row index " + std::to_string(idx) + " out of range");
  const int64_t r = static_cast<int64_t>(indices.size());
  const auto& xv = x.values();
  std::vector<S> out(static_cast<size_t>(r * n));
  for (int64_t i = 0; i < r; ++i)
    std::copy(xv.begin() + indices[i] * n, xv.begin() + (indices[i] + 1) * n, out.begin() + i * n);
  Tensor<S> res = Tensor<S>::from({r, n}, std::move(out));

  auto* tape = Tape<S>::current();
  if (tape && !tape->consumed()) {
    auto nx = detail::tape_node(x, tape);
    if (nx) {
      auto node = tape->add_op_node(r * n);
      auto g = node->grad;
      node->backprop = [g, nx, indices, r, n]() {
        const std::vector<S>& go = *g;
        std::vector<S>& gx = *nx->grad;
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < n; ++j) gx[indices[i] * n + j] += go[i * n + j];
      };
      detail::attach_result(res, tape, node);
    }
  }
  return res;
}

}  // namespace rclstr::ndiff
