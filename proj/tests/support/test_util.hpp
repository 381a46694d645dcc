#pragma once

// Shared helpers for building random loss inputs in both the tensor and
// oracle representations.

#include <cstdint>
#include <vector>

#include "rclstr/core/rng.hpp"
#include "rclstr/ndiff/tensor.hpp"
#include "support/oracles.hpp"

namespace rclstr::testutil {

inline oracle::Mat unit_rows_mat(int64_t rows, int64_t cols, uint64_t seed) {
  oracle::Mat m;
  m.rows = rows;
  m.cols = cols;
  m.v.resize(static_cast<size_t>(rows * cols));
  Rng rng(seed);
  for (int64_t r = 0; r < rows; ++r) rng.fill_unit_vector(m.v.data() + r * cols, static_cast<size_t>(cols));
  return m;
}

template <typename S>
ndiff::Tensor<S> to_tensor(const oracle::Mat& m, bool requires_grad = false) {
  std::vector<S> v(m.v.begin(), m.v.end());
  return requires_grad ? ndiff::Tensor<S>::param({m.rows, m.cols}, std::move(v))
                       : ndiff::Tensor<S>::from({m.rows, m.cols}, std::move(v));
}

inline ndiff::Tensor<double> basis_vector(int64_t dim, int64_t index) {
  std::vector<double> v(static_cast<size_t>(dim), 0.0);
  v[static_cast<size_t>(index)] = 1.0;
  return ndiff::Tensor<double>::from({1, dim}, std::move(v));
}

inline oracle::Mat basis_mat(int64_t dim, std::vector<int64_t> indices) {
  oracle::Mat m;
  m.rows = static_cast<int64_t>(indices.size());
  m.cols = dim;
  m.v.assign(static_cast<size_t>(m.rows * dim), 0.0);
  for (int64_t r = 0; r < m.rows; ++r) m.at(r, indices[static_cast<size_t>(r)]) = 1.0;
  return m;
}

}  // namespace rclstr::testutil
