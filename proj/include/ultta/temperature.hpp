/* Copyright 2026 The ul-tta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ultta/config.hpp"
#include "ultta/errors.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"

namespace ultta {

// Sum over the batch of H(softmax(tau * scale * cos_i + log pi)), nats.
// `cosines` is B x C. Per row, with l' = l - max l and Z = sum exp l',
// H = log Z - sum exp(l') l' / Z.
inline double entropy_objective(double tau, const Matrix& cosines, std::span<const double> log_pi,
                                double logit_scale = 1.0) {
  if (cosines.rows() == 0) throw StateError("entropy objective over an empty batch");
  const std::size_t C = cosines.cols();
  const double k = tau * logit_scale;
  const auto lp = as_eigen(log_pi).array();
  Eigen::ArrayXd l(C);
  Eigen::ArrayXd e(C);
  double total = 0.0;
  for (std::size_t i = 0; i < cosines.rows(); ++i) {
    l = k * as_eigen(cosines.row(i)).array() + lp;
    l -= l.maxCoeff();
    e = l.exp();
    const double* ep = e.data();
    const double* lp2 = l.data();
    const double z = lane_sum(C, [=](std::size_t j) { return ep[j]; });
    total += std::log(z) - lane_sum(C, [=](std::size_t j) { return ep[j] * lp2[j]; }) / z;
  }
  return total;
}

struct TauSearch {
  double lo = 0.5;
  double hi = 3.0;
  double tol = 1e-4;
  std::size_t coarse_points = 9;
};

// Minimizes the entropy objective over [lo, hi]. A coarse grid locates the
// basin (the objective is not unimodal in general once a prior is present),
// golden-section refines inside the neighbouring grid cells, and the result
// is never worse than either endpoint. A flat objective returns the midpoint.
inline double minimize_tau(const Matrix& cosines, std::span<const double> log_pi, double logit_scale,
                           const TauSearch& search) {
  auto f = [&](double tau) { return entropy_objective(tau, cosines, log_pi, logit_scale); };
  const std::size_t G = std::max<std::size_t>(search.coarse_points, 3);
  const double step = (search.hi - search.lo) / static_cast<double>(G - 1);
  std::vector<double> grid(G);
  std::size_t best = 0;
  double fmin = 0.0;
  double fmax = 0.0;
  for (std::size_t k = 0; k < G; ++k) {
    grid[k] = f(search.lo + step * static_cast<double>(k));
    if (k == 0 || grid[k] < grid[best]) best = k;
    fmin = k == 0 ? grid[k] : std::min(fmin, grid[k]);
    fmax = k == 0 ? grid[k] : std::max(fmax, grid[k]);
  }
  if (fmax - fmin <= 1e-12 * std::max(1.0, std::abs(fmax))) return 0.5 * (search.lo + search.hi);

  double a = search.lo + step * static_cast<double>(best == 0 ? 0 : best - 1);
  double b = search.lo + step * static_cast<double>(std::min(best + 1, G - 1));
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  while (b - a > search.tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = f(x2);
    }
  }
  double tau = 0.5 * (a + b);
  double ft = f(tau);
  // Candidates that golden-section cannot reach: interval ends and endpoints.
  for (double cand : {a, b, search.lo, search.hi}) {
    const double fc = f(cand);
    if (fc < ft) {
      ft = fc;
      tau = cand;
    }
  }
  return tau;
}

inline double minimize_tau(const Matrix& cosines, std::span<const double> log_pi, double logit_scale,
                           const TempConfig& cfg) {
  return minimize_tau(cosines, log_pi, logit_scale, TauSearch{cfg.tau_min, cfg.tau_max, cfg.search_tol});
}

inline double ema_clamp(double tau_pred, double tau_hat, const TempConfig& cfg) {
  return std::clamp(cfg.beta * tau_pred + (1.0 - cfg.beta) * tau_hat, cfg.tau_min, cfg.tau_max);
}

// tau_cal follows tau_pred only in mirror_pred mode, with the slower weight
// (1 + beta) / 2.
inline double update_tau_cal(const HeadState& state, const TempConfig& cfg) {
  if (cfg.cal_mode == CalMode::fixed) return state.tau_cal;
  const double beta_cal = 0.5 * (1.0 + cfg.beta);
  return std::clamp(beta_cal * state.tau_cal + (1.0 - beta_cal) * state.tau_pred, cfg.tau_min, cfg.tau_max);
}

}  // namespace ultta
