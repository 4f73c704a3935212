#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "picodiff/nn.hpp"
#include "picodiff/rng.hpp"
#include "picodiff/tensor.hpp"

namespace picodiff::testutil {

// Central-difference gradient check with Richardson extrapolation.
//
// The forward runs in single precision, so a finite difference carries an
// irreducible noise of roughly eps32*|L|/h. Per probe the relative error uses
// denom = max(|fd|, |analytic|, floor) with floor sized so that probes whose
// gradient sits below the FD noise floor are held to that absolute limit
// instead (the atol part of the usual atol/rtol gradcheck contract). A wrong
// backward (sign or factor error) on any probe with meaningful gradient still
// fails by orders of magnitude.
struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
};

inline GradCheckResult fd_check(const std::function<Tensor()>& loss_fn, Tensor param,
                                const std::vector<size_t>& probes, double h = 2e-2,
                                double target_tol = 1e-3) {
  GradCheckResult res;
  param.zero_grad();
  Tensor loss = loss_fn();
  const double lref = std::fabs(loss.item());
  loss.backward();
  std::vector<float> analytic(param.grad_values().begin(), param.grad_values().end());
  if (analytic.empty()) analytic.assign(param.numel(), 0.f);

  auto eval = [&]() {
    NoGrad ng;
    return static_cast<double>(loss_fn().item());
  };
  auto central = [&](float& w, double step) {
    const float saved = w;
    w = static_cast<float>(saved + step);
    const double lp = eval();
    w = static_cast<float>(saved - step);
    const double lm = eval();
    w = saved;
    return (lp - lm) / (2.0 * step);
  };

  const double eps32 = 1.19e-7;
  const double noise = 2.0 * eps32 * std::max(lref, 1e-3) / (h / 2);

  for (size_t idx : probes) {
    float& w = param.data()[idx];
    const double d1 = central(w, h);
    const double d2 = central(w, h / 2);
    const double fd = (4.0 * d2 - d1) / 3.0;
    const double an = analytic[idx];
    const double abs_err = std::fabs(fd - an);
    const double fd_err_est = std::max(noise, std::fabs(d1 - d2) / 3.0);
    const double floor = fd_err_est / target_tol;
    const double rel = abs_err / std::max({std::fabs(fd), std::fabs(an), floor});
    res.max_rel_err = std::max(res.max_rel_err, rel);
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
    ++res.checked;
  }
  return res;
}

// n probe indices spread over [0, numel).
inline std::vector<size_t> probe_indices(size_t numel, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<size_t> out;
  for (int i = 0; i < n; ++i)
    out.push_back(static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(numel) - 1)));
  return out;
}

}  // namespace picodiff::testutil
