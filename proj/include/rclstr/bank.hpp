#pragma once

// Fixed-capacity FIFO ring buffer of unit-norm negative features, one per
// hierarchy level. Initialized full with random unit vectors so the
// negative count is constant from the first iteration.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::bank {

enum class Level { frame = 0, subword = 1, word = 2 };

inline const char* level_name(Level l) {
  switch (l) {
    case Level::frame: return "frame";
    case Level::subword: return "subword";
    case Level::word: return "word";
  }
  return "?";
}

class NegativeBank {
 public:
  /// Bank of k unit-norm rows of dimension d, deterministically seeded.
  NegativeBank(int64_t k, int64_t d, uint64_t seed, Level tag)
      : k_(k), d_(d), tag_(tag), rows_(static_cast<size_t>(k * d)) {
    check(k >= 1 && d >= 1, ErrorKind::ConfigError, "bank needs k >= 1 and d >= 1");
    Rng rng(seed);
    for (int64_t r = 0; r < k; ++r) rng.fill_unit_vector(rows_.data() + r * d, static_cast<size_t>(d));
    fill_ = k;
  }

  int64_t capacity() const { return k_; }
  int64_t dim() const { return d_; }
  int64_t cursor() const { return cursor_; }
  int64_t fill() const { return fill_; }
  Level tag() const { return tag_; }

  /// Overwrites the `count` oldest slots with the given unit-norm rows.
  void enqueue(const float* keys, int64_t count) {
    check(count <= k_, ErrorKind::BatchTooLarge,
          "enqueue of " + std::to_string(count) + " keys into bank of " + std::to_string(k_));
    for (int64_t r = 0; r < count; ++r) {
      double ss = 0;
      for (int64_t c = 0; c < d_; ++c) ss += static_cast<double>(keys[r * d_ + c]) * keys[r * d_ + c];
      check(std::abs(ss - 1.0) < 1e-4, ErrorKind::DomainError, "bank keys must be unit-norm");
    }
    for (int64_t r = 0; r < count; ++r) {
      float* dst = rows_.data() + cursor_ * d_;
      const float* src = keys + r * d_;
      for (int64_t c = 0; c < d_; ++c) dst[c] = src[c];
      cursor_ = (cursor_ + 1) % k_;
    }
    write_ops_ += 1;
    last_write_seq_ = next_seq();
  }

  void enqueue(const ndiff::Tensor<float>& keys) {
    check(keys.rank() == 2 && keys.extent(1) == d_, ErrorKind::ShapeMismatch,
          "bank keys must be B' x " + std::to_string(d_));
    enqueue(keys.values().data(), keys.extent(0));
  }

  /// Stable K x D snapshot for one loss evaluation. The copy carries no tape
  /// links, so gradients are never requested with respect to bank contents.
  ndiff::Tensor<float> negatives() const {
    read_ops_ += 1;
    last_read_seq_ = next_seq();
    return ndiff::Tensor<float>::from({k_, d_}, rows_);
  }

  template <typename S>
  ndiff::Tensor<S> negatives_as() const {
    read_ops_ += 1;
    last_read_seq_ = next_seq();
    std::vector<S> v(rows_.begin(), rows_.end());
    return ndiff::Tensor<S>::from({k_, d_}, std::move(v));
  }

  // checkpoint plumbing
  const std::vector<float>& storage() const { return rows_; }
  void restore(std::vector<float> rows, int64_t cursor, int64_t fill) {
    check(static_cast<int64_t>(rows.size()) == k_ * d_, ErrorKind::CheckpointError,
          "bank restore size mismatch");
    check(cursor >= 0 && cursor < k_ && fill >= 0 && fill <= k_, ErrorKind::CheckpointError,
          "bank restore cursor/fill out of range");
    rows_ = std::move(rows);
    cursor_ = cursor;
    fill_ = fill;
  }

  // instrumentation: lets the training loop assert that every read of an
  // iteration precedes its enqueue
  int64_t read_ops() const { return read_ops_; }
  int64_t write_ops() const { return write_ops_; }
  uint64_t last_read_seq() const { return last_read_seq_; }
  uint64_t last_write_seq() const { return last_write_seq_; }
  int64_t touches() const { return read_ops_ + write_ops_; }

 private:
  static uint64_t next_seq() {
    static std::atomic<uint64_t> seq{0};
    return ++seq;
  }

  int64_t k_, d_;
  Level tag_;
  std::vector<float> rows_;
  int64_t cursor_ = 0;
  int64_t fill_ = 0;

  mutable int64_t read_ops_ = 0;
  int64_t write_ops_ = 0;
  mutable uint64_t last_read_seq_ = 0;
  uint64_t last_write_seq_ = 0;
};

}  // namespace rclstr::bank
