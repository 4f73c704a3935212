#pragma once

#include <cmath>
#include <vector>

#include "picodiff/ops.hpp"

namespace picodiff {

// Forward-diffusion rate tables, kept in double so the defining identities
// (alpha = 1 - beta, alpha_bar as running product) hold to full precision.
// alpha_bar[t] is the cumulative product of alpha up to and including t; it
// is strictly decreasing and stays in (0,1].
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  // alpha_bar at index -1 is the clean endpoint.
  double abar(int t) const {
    if (t < 0) return 1.0;
    return alpha_bar[static_cast<size_t>(t)];
  }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw PreconditionError("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw PreconditionError("build_schedule: betas must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    prod *= 1.0 - b;
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return s;
}

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T) throw PreconditionError("add_noise: t out of range");
  if (z0.shape() != eps.shape()) throw PreconditionError("add_noise: shape mismatch");
  const double ab = s.abar(t);
  return add(scale(z0, static_cast<float>(std::sqrt(ab))),
             scale(eps, static_cast<float>(std::sqrt(1.0 - ab))));
}

// x0 = (z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
inline Tensor predict_x0(const Tensor& z_t, const Tensor& eps_pred, int t, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T) throw PreconditionError("predict_x0: t out of range");
  if (z_t.shape() != eps_pred.shape()) throw PreconditionError("predict_x0: shape mismatch");
  const double ab = s.abar(t);
  if (!(ab > 0.0)) throw PreconditionError("predict_x0: alpha_bar must be positive");
  const float inv = static_cast<float>(1.0 / std::sqrt(ab));
  return scale(sub(z_t, scale(eps_pred, static_cast<float>(std::sqrt(1.0 - ab)))), inv);
}

// Deterministic DDIM update (eta = 0). t_prev = -1 is the clean endpoint and
// returns the x0 estimate itself.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                        const NoiseSchedule& s) {
  if (t_prev >= t) throw PreconditionError("ddim_step: t_prev must be < t");
  Tensor x0 = predict_x0(z_t, eps_pred, t, s);
  const double ab_prev = s.abar(t_prev);
  if (t_prev < 0) return x0;
  return add(scale(x0, static_cast<float>(std::sqrt(ab_prev))),
             scale(eps_pred, static_cast<float>(std::sqrt(1.0 - ab_prev))));
}

// Evenly spaced inference ladder over [0, T): n rungs, ascending, last = T-1.
inline std::vector<int> inference_ladder(int n_steps, int T) {
  if (n_steps < 1 || n_steps > T) throw PreconditionError("inference_ladder: bad step count");
  std::vector<int> rungs(static_cast<size_t>(n_steps));
  for (int j = 0; j < n_steps; ++j)
    rungs[static_cast<size_t>(j)] = static_cast<int>((static_cast<int64_t>(j) + 1) * T / n_steps) - 1;
  return rungs;
}

}  // namespace picodiff
