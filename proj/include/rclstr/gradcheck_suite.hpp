#pragma once

// Registry of central-difference checks covering every differentiable op
// and every composite loss, run in 64-bit. Backs the gradcheck CLI
// subcommand and the first acceptance criterion.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rclstr/core/rng.hpp"
#include "rclstr/losses.hpp"
#include "rclstr/ndiff/conv.hpp"
#include "rclstr/ndiff/grad_check.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::gradcheck {

using ndiff::Tensor;

struct CheckRow {
  std::string name;
  int runs = 0;
  double max_rel_err = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> rand_param(ndiff::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(ndiff::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::param(std::move(shape), std::move(v));
}

inline Tensor<double> rand_const(ndiff::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(ndiff::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

inline Tensor<double> rand_unit_rows(int64_t rows, int64_t cols, Rng& rng, bool param) {
  std::vector<double> v(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) rng.fill_unit_vector(v.data() + r * cols, static_cast<size_t>(cols));
  return param ? Tensor<double>::param({rows, cols}, std::move(v))
               : Tensor<double>::from({rows, cols}, std::move(v));
}

}  // namespace detail

inline constexpr double kTolerance = 1e-4;
inline constexpr double kStep = 1e-5;
inline constexpr int kRunsPerOp = 3;

/// Runs every registered check with `runs` random shapes each.
inline std::vector<CheckRow> run_all(uint64_t seed, int runs = kRunsPerOp) {
  std::vector<CheckRow> rows;

  auto add_check = [&rows, seed, runs](const std::string& name,
                                       std::function<double(Rng&)> one_run) {
    CheckRow row;
    row.name = name;
    row.runs = runs;
    for (int r = 0; r < runs; ++r) {
      Rng rng(mix_seed(seed, std::hash<std::string>{}(name), static_cast<uint64_t>(r)));
      row.max_rel_err = std::max(row.max_rel_err, one_run(rng));
    }
    row.pass = row.max_rel_err < kTolerance;
    rows.push_back(row);
    return row.pass;
  };

  auto dims = [](Rng& rng) {
    return std::pair<int64_t, int64_t>{2 + static_cast<int64_t>(rng.uniform_int(3)),
                                       2 + static_cast<int64_t>(rng.uniform_int(3))};
  };

  using ndiff::grad_check_inputs;

  add_check("add", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto b = detail::rand_param({n}, rng);  // trailing broadcast
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::add(a, b))); };
    return grad_check_inputs<double>(f, {&a, &b}, kStep);
  });

  add_check("sub", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto b = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::sub(a, b))); };
    return grad_check_inputs<double>(f, {&a, &b}, kStep);
  });

  add_check("mul", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto b = detail::rand_param({n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(a, b)); };
    return grad_check_inputs<double>(f, {&a, &b}, kStep);
  });

  add_check("scale", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::scale(ndiff::mul(a, a), 0.37)); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("relu", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    // inputs bounded away from the kink
    auto a = detail::rand_param({m, n}, rng, 0.2, 1.2);
    Rng flip(rng.next_u64());
    for (auto& v : a.mutable_values())
      if (flip.bernoulli(0.5)) v = -v;
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::relu(a))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("exp", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::exp(a)); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("log", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng, 0.3, 2.0);
    auto f = [&]() { return ndiff::sum_all(ndiff::log(a)); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("matmul", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    const int64_t k = 2 + static_cast<int64_t>(rng.uniform_int(3));
    auto a = detail::rand_param({m, k}, rng);
    auto b = detail::rand_param({k, n}, rng);
    auto f = [&]() {
      auto y = ndiff::matmul(a, b);
      return ndiff::sum_all(ndiff::mul(y, y));
    };
    return grad_check_inputs<double>(f, {&a, &b}, kStep);
  });

  add_check("softmax", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::softmax(a, 1, 0.3))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("log_softmax", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::log_softmax(a, 1, 0.5))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("reduce_sum", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({m}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::sum(a, 1))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("reduce_mean", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::mean(a, 0))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("avgpool_seq", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    const int64_t t = 2 * n;
    auto a = detail::rand_param({m, t}, rng);
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::avgpool_seq(a, n))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("l2_normalize", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng, 0.3, 1.5);
    auto w = detail::rand_const({m, n}, rng);
    auto f = [&]() { return ndiff::sum_all(ndiff::mul(w, ndiff::l2_normalize(a, 1))); };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("transpose_reshape", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto w = detail::rand_const({n * m}, rng);
    auto f = [&]() {
      return ndiff::sum_all(ndiff::mul(w, ndiff::reshape(ndiff::transpose(a), {n * m})));
    };
    return grad_check_inputs<double>(f, {&a}, kStep);
  });

  add_check("concat_slice_take", [&](Rng& rng) {
    auto [m, n] = dims(rng);
    auto a = detail::rand_param({m, n}, rng);
    auto b = detail::rand_param({m, 2}, rng);
    auto f = [&]() {
      auto cat = ndiff::concat<double>({a, b}, 1);
      auto sl = ndiff::slice_cols(cat, 1, n + 1);
      auto tk = ndiff::take_rows(sl, {0, m - 1, 0});
      return ndiff::sum_all(ndiff::mul(tk, tk));
    };
    return grad_check_inputs<double>(f, {&a, &b}, kStep);
  });

  add_check("conv2d", [&](Rng& rng) {
    auto x = detail::rand_param({1, 6, 6}, rng);
    auto w = detail::rand_param({2, 1, 3, 3}, rng);
    auto bias = detail::rand_param({2}, rng);
    auto f = [&]() {
      auto y = ndiff::conv2d(x, w, bias, 1, 1);
      return ndiff::sum_all(ndiff::mul(y, y));
    };
    return grad_check_inputs<double>(f, {&x, &w, &bias}, kStep);
  });

  add_check("maxpool2d", [&](Rng& rng) {
    // distinct values so the argmax is stable under the probe step
    auto x = detail::rand_param({2, 4, 4}, rng);
    {
      std::vector<double> grid(32);
      for (size_t i = 0; i < grid.size(); ++i) grid[i] = 0.01 * static_cast<double>(i);
      Rng sh(rng.next_u64());
      sh.shuffle(grid);
      x.mutable_values() = grid;
    }
    auto f = [&]() {
      auto y = ndiff::maxpool2d(x, 2, 2);
      return ndiff::sum_all(ndiff::mul(y, y));
    };
    return grad_check_inputs<double>(f, {&x}, kStep);
  });

  add_check("conv1d_seq", [&](Rng& rng) {
    auto x = detail::rand_param({3, 8}, rng);
    auto w = detail::rand_param({3, 3, 3}, rng);
    auto bias = detail::rand_param({3}, rng);
    auto f = [&]() {
      auto y = ndiff::conv1d_seq(x, w, bias, 1);
      return ndiff::sum_all(ndiff::mul(y, y));
    };
    return grad_check_inputs<double>(f, {&x, &w, &bias}, kStep);
  });

  // composite losses
  const int64_t a_atoms = 3, kneg = 5, d = 4;
  losses::LossConfig<double> lcfg;
  lcfg.tau_info = 0.2;
  lcfg.tau_kl = 0.3;
  lcfg.alpha = 0.8;

  add_check("loss_info_nce", [&](Rng& rng) {
    auto q = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto p = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    auto f = [&]() { return losses::info_nce<double>(q, p, b, 0.2); };
    return grad_check_inputs<double>(f, {&q, &p}, kStep);
  });

  add_check("loss_symmetric_kl", [&](Rng& rng) {
    auto q = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto p = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    auto f = [&]() { return losses::symmetric_kl<double>(q, p, b, 0.3); };
    return grad_check_inputs<double>(f, {&q, &p}, kStep);
  });

  add_check("loss_relational", [&](Rng& rng) {
    auto q = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto p = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    auto f = [&]() { return losses::relational<double>(q, p, b, lcfg); };
    return grad_check_inputs<double>(f, {&q, &p}, kStep);
  });

  add_check("loss_regularized", [&](Rng& rng) {
    auto q = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto p = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto qr = detail::rand_unit_rows(a_atoms, d, rng, true);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    std::vector<uint8_t> mask = {1, 0, 1};
    auto f = [&]() { return losses::regularized<double>(q, p, qr, mask, b, lcfg); };
    return grad_check_inputs<double>(f, {&q, &qr}, kStep);
  });

  add_check("loss_hierarchical", [&](Rng& rng) {
    std::vector<losses::LevelAtoms<double>> atoms(3);
    std::vector<Tensor<double>> banks;
    std::vector<Tensor<double>*> inputs;
    for (int l = 0; l < 3; ++l) {
      atoms[static_cast<size_t>(l)].q = detail::rand_unit_rows(2, d, rng, true);
      atoms[static_cast<size_t>(l)].p = detail::rand_unit_rows(2, d, rng, false);
      banks.push_back(detail::rand_unit_rows(kneg, d, rng, false));
      inputs.push_back(&atoms[static_cast<size_t>(l)].q);
    }
    std::vector<std::pair<const losses::LevelAtoms<double>*, const Tensor<double>*>> levels;
    for (int l = 0; l < 3; ++l) levels.emplace_back(&atoms[static_cast<size_t>(l)], &banks[static_cast<size_t>(l)]);
    auto f = [&]() { return losses::hierarchical<double>(levels, lcfg, false); };
    return grad_check_inputs<double>(f, inputs, kStep);
  });

  add_check("loss_cross_f2s", [&](Rng& rng) {
    const int64_t images = 1, frames = 4, bins = 2;
    auto fq = detail::rand_unit_rows(images * frames, d, rng, true);
    auto sp = detail::rand_unit_rows(images * bins, d, rng, false);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    auto pairing = losses::frame_to_subword_index(images, frames, bins);
    auto f = [&]() { return losses::cross_hierarchy<double>(fq, sp, pairing, b, lcfg); };
    return grad_check_inputs<double>(f, {&fq}, kStep);
  });

  add_check("loss_cross_s2w", [&](Rng& rng) {
    const int64_t images = 2, bins = 2;
    auto sq = detail::rand_unit_rows(images * bins, d, rng, true);
    auto wp = detail::rand_unit_rows(images, d, rng, false);
    auto b = detail::rand_unit_rows(kneg, d, rng, false);
    auto pairing = losses::subword_to_word_index(images, bins);
    losses::LossConfig<double> rel = lcfg;
    rel.cross_kind = losses::CrossLossKind::relational;
    auto f = [&]() { return losses::cross_hierarchy<double>(sq, wp, pairing, b, rel); };
    return grad_check_inputs<double>(f, {&sq}, kStep);
  });

  add_check("loss_total", [&](Rng& rng) {
    const int64_t images = 1, frames = 4, bins = 2;
    losses::TotalLossInputs<double> in;
    in.images = images;
    in.frames = frames;
    in.subword_bins = bins;
    const int64_t atoms_per[3] = {images * frames, images * bins, images};
    std::vector<Tensor<double>*> inputs;
    for (int l = 0; l < 3; ++l) {
      losses::LevelAtoms<double> atoms;
      atoms.q = detail::rand_unit_rows(atoms_per[l], d, rng, true);
      atoms.p = detail::rand_unit_rows(atoms_per[l], d, rng, false);
      atoms.q_reg = detail::rand_unit_rows(atoms_per[l], d, rng, true);
      atoms.reg_mask.assign(static_cast<size_t>(atoms_per[l]), 1);
      in.levels[static_cast<bank::Level>(l)] = std::move(atoms);
      in.banks[static_cast<bank::Level>(l)] = detail::rand_unit_rows(kneg, d, rng, false);
      inputs.push_back(&in.levels[static_cast<bank::Level>(l)].q);
      inputs.push_back(&in.levels[static_cast<bank::Level>(l)].q_reg);
    }
    auto f = [&]() {
      return losses::total_loss<double>(in, lcfg, losses::ModuleToggles{true, true, true},
                                        {bank::Level::frame, bank::Level::subword, bank::Level::word})
          .total;
    };
    return grad_check_inputs<double>(f, inputs, kStep);
  });

  return rows;
}

}  // namespace rclstr::gradcheck
