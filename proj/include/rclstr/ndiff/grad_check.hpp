#pragma once

// Central-difference gradient checking. Runs in whatever scalar type the
// caller instantiates; use double for meaningful tolerances.

#include <cmath>
#include <vector>

#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::ndiff {

/// Compares the analytic gradient of `f` (a scalar-valued function of `x`)
/// against central differences with step `h`. Returns the max over
/// coordinates of |analytic - numeric| / max(1, |numeric|).
///
/// `x` must be a param tensor; its values are perturbed in place and
/// restored. `f` is re-evaluated without a tape for the difference quotients.
template <typename S, typename F>
S grad_check(F f, Tensor<S>& x, S h) {
  check(x.requires_grad(), ErrorKind::DomainError, "grad_check input must require gradients");
  x.zero_grad();
  {
    Tape<S> tape;
    Tensor<S> y = f(x);
    check(y.numel() == 1, ErrorKind::NotScalar, "grad_check function must return a scalar");
    tape.backward(y);
  }
  std::vector<S> analytic = x.grad();

  S max_err = S(0);
  auto& xv = x.mutable_values();
  for (size_t i = 0; i < xv.size(); ++i) {
    const S saved = xv[i];
    xv[i] = saved + h;
    const S up = f(x).item();
    xv[i] = saved - h;
    const S dn = f(x).item();
    xv[i] = saved;
    const S numeric = (up - dn) / (S(2) * h);
    const S err = std::abs(analytic[i] - numeric) / std::max(S(1), std::abs(numeric));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

/// Multi-input variant: checks each listed input in turn, returns the worst
/// error. Inputs not in the list are treated as constants of `f`.
template <typename S, typename F>
S grad_check_inputs(F f, std::vector<Tensor<S>*> inputs, S h) {
  S worst = S(0);
  for (Tensor<S>* in : inputs) {
    check(in->requires_grad(), ErrorKind::DomainError, "grad_check input must require gradients");
    for (Tensor<S>* other : inputs) other->zero_grad();
    {
      Tape<S> tape;
      Tensor<S> y = f();
      check(y.numel() == 1, ErrorKind::NotScalar, "grad_check function must return a scalar");
      tape.backward(y);
    }
    std::vector<S> analytic = in->grad();
    auto& xv = in->mutable_values();
    for (size_t i = 0; i < xv.size(); ++i) {
      const S saved = xv[i];
      xv[i] = saved + h;
      const S up = f().item();
      xv[i] = saved - h;
      const S dn = f().item();
      xv[i] = saved;
      const S numeric = (up - dn) / (S(2) * h);
      const S err = std::abs(analytic[i] - numeric) / std::max(S(1), std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace rclstr::ndiff
