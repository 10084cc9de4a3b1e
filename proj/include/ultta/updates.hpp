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

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ultta/config.hpp"
#include "ultta/errors.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"

namespace ultta {

// E-step: mean of the per-view softmaxes under the current state. Views are
// validated like score() inputs. With one view this is exactly probs_pred.
inline Vec responsibilities(const HeadState& state, std::span<const Vec> views) {
  if (views.empty()) throw DataError("responsibilities need at least one view");
  Vec r = score(state, views.front()).probs_pred;
  if (views.size() == 1) return r;
  for (std::size_t k = 1; k < views.size(); ++k) {
    const ScoredSample s = score(state, views[k]);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] += s.probs_pred[c];
  }
  for (double& v : r) v /= static_cast<double>(views.size());
  return r;
}

// Accepted samples of the current update block plus the run-long Dirichlet
// soft counts. The block part is cleared after every update; soft counts are
// kept for the whole run.
struct BatchBuffer {
  std::vector<Vec> embeddings;  // canonical view of each accepted sample
  std::vector<Vec> resp;
  Vec soft_counts;              // s_c = sum of r_ic over all accepted samples

  explicit BatchBuffer(std::size_t num_classes = 0) : soft_counts(num_classes, 0.0) {}

  std::size_t size() const noexcept { return embeddings.size(); }
  void clear_block() {
    embeddings.clear();
    resp.clear();
  }

  friend bool operator==(const BatchBuffer&, const BatchBuffer&) = default;
};

// Responsibilities at or below this are skipped when accumulating. N_c never
// drops below alpha, so the dropped mass sits far under its rounding.
inline constexpr double kNegligibleResponsibility = 1e-18;

// U_c += r_c z, N_c += r_c. With decay < 1 the accumulators first relax toward
// their anchored initial values (alpha mu_c, alpha) and the soft counts
// shrink by the same factor.
inline void accumulate(HeadState& state, BatchBuffer& buf, const Anchors& anchors,
                       const UpdateConfig& cfg, std::span<const double> r,
                       std::span<const double> z) {
  const std::size_t C = state.num_classes();
  const std::size_t d = state.dim();
  if (cfg.decay < 1.0) {
    const double keep = cfg.decay;
    const double pull = (1.0 - cfg.decay) * cfg.alpha;
    for (std::size_t c = 0; c < C; ++c) {
      auto u = state.U.row(c);
      const auto mu = anchors.mu.row(c);
      for (std::size_t j = 0; j < d; ++j) u[j] = keep * u[j] + pull * mu[j];
      state.N[c] = keep * state.N[c] + pull;
      buf.soft_counts[c] *= keep;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (r[c] <= kNegligibleResponsibility) continue;
    auto u = state.U.row(c);
    for (std::size_t j = 0; j < d; ++j) u[j] += r[c] * z[j];
    state.N[c] += r[c];
    buf.soft_counts[c] += r[c];
  }
  buf.embeddings.emplace_back(z.begin(), z.end());
  buf.resp.emplace_back(r.begin(), r.end());
  ++state.accepted_count;
}

// Applies a whole block of accepted samples to (U, N, s) at once. Equivalent
// to calling accumulate() on each buffered sample in order, including the
// per-sample anchored decay:
//   X_m = decay^m X_0 + (1 - decay^m) A + sum_i decay^(m-1-i) e_i.
// Peaked responsibilities are folded row by row; dense blocks go through one
// rank-m GEMM. Does not touch accepted_count or the block itself.
inline void fold_block(HeadState& state, BatchBuffer& buf, const Anchors& anchors, const UpdateConfig& cfg) {
  const std::size_t m = buf.size();
  if (m == 0) return;
  const std::size_t C = state.num_classes();
  const std::size_t d = state.dim();
  auto U = as_eigen(state.U);
  if (cfg.decay < 1.0) {
    const double keep = std::pow(cfg.decay, static_cast<double>(m));
    const double pull = (1.0 - keep) * cfg.alpha;
    U = keep * U + pull * as_eigen(anchors.mu);
    for (std::size_t c = 0; c < C; ++c) {
      state.N[c] = keep * state.N[c] + pull;
      buf.soft_counts[c] *= keep;
    }
  }
  Matrix R(m, C);
  std::size_t nnz = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = cfg.decay < 1.0 ? std::pow(cfg.decay, static_cast<double>(m - 1 - i)) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double r = buf.resp[i][c];
      R(i, c) = r <= kNegligibleResponsibility ? 0.0 : w * r;
      nnz += R(i, c) != 0.0 ? 1 : 0;
      state.N[c] += R(i, c);
      buf.soft_counts[c] += R(i, c);
    }
  }
  if (4 * nnz > m * C) {
    Matrix Z(m, d);
    for (std::size_t i = 0; i < m; ++i) std::copy(buf.embeddings[i].begin(), buf.embeddings[i].end(), Z.row(i).begin());
    U.noalias() += as_eigen(R).transpose() * as_eigen(Z);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const auto z = as_eigen(std::span<const double>(buf.embeddings[i])).transpose();
    for (std::size_t c = 0; c < C; ++c)
      if (R(i, c) != 0.0) U.row(c).noalias() += R(i, c) * z;
  }
}

// B x C matrix of <z_i, t_c> for the buffered block against the current prototypes.
inline Matrix block_cosines(const HeadState& state, const BatchBuffer& buf) {
  const std::size_t m = buf.size();
  Matrix Z(m, state.dim());
  for (std::size_t i = 0; i < m; ++i) std::copy(buf.embeddings[i].begin(), buf.embeddings[i].end(), Z.row(i).begin());
  Matrix cos(m, state.num_classes());
  as_eigen(cos).noalias() = as_eigen(Z) * as_eigen(state.prototypes).transpose();
  return cos;
}

// Moves unit vector `v` along the great circle toward `mu` until its chordal
// distance from `mu` is exactly rho (rho < 2). The straight-line variant
// mu + rho (v - mu) / |v - mu| followed by renormalization overshoots the
// ball, so the cap point is built from the angle directly.
inline void clip_to_cap(std::span<double> v, std::span<const double> mu, double rho) {
  const double cos_t = 1.0 - 0.5 * rho * rho;
  if (cos_t <= -1.0) return;
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  const double along = dot(v, mu);
  Vec w(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) w[j] = v[j] - along * mu[j];
  if (normalize_inplace(w) < 1e-12) {
    // v = -mu: every direction is a geodesic; fall back to the anchor.
    std::copy(mu.begin(), mu.end(), v.begin());
    return;
  }
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = cos_t * mu[j] + sin_t * w[j];
  normalize_inplace(v);
}

struct PrototypeStep {
  double max_step = 0.0;         // max_c |t_c(after) - t_c(before)|
  double max_anchor_dist = 0.0;  // max_c |t_c - mu_c| after the update
  std::size_t degenerate = 0;    // classes whose MAP direction was undefined
};

// MAP direction U_c / (N_c + eps), normalized; then interpolate with eta,
// renormalize, optionally clip into the chordal ball of radius rho around
// mu_c, renormalize.
inline PrototypeStep prototype_update(HeadState& state, const UpdateConfig& cfg,
                                      const Anchors& anchors, bool clip = true) {
  const std::size_t C = state.num_classes();
  const std::size_t d = state.dim();
  PrototypeStep out;
  Vec target(d);
  Vec next(d);
  for (std::size_t c = 0; c < C; ++c) {
    auto t = state.prototypes.row(c);
    const auto u = state.U.row(c);
    const auto mu = anchors.mu.row(c);
    const double denom = state.N[c] + cfg.eps;
    as_eigen(std::span<double>(target)) = as_eigen(u) / denom;
    if (normalize_inplace(target) < 1e-12) {
      ++out.degenerate;
      out.max_anchor_dist = std::max(out.max_anchor_dist, distance(t, mu));
      continue;
    }
    as_eigen(std::span<double>(next)) =
        (1.0 - cfg.eta) * as_eigen(std::span<const double>(t)) + cfg.eta * as_eigen(std::span<const double>(target));
    if (normalize_inplace(next) < 1e-12) {
      // t and target antipodal with eta = 1/2; nothing sensible to do.
      ++out.degenerate;
      out.max_anchor_dist = std::max(out.max_anchor_dist, distance(t, mu));
      continue;
    }
    if (clip && distance(next, mu) > cfg.rho) clip_to_cap(next, mu, cfg.rho);
    out.max_step = std::max(out.max_step, distance(next, t));
    std::copy(next.begin(), next.end(), t.begin());
    out.max_anchor_dist = std::max(out.max_anchor_dist, distance(t, mu));
  }
  return out;
}

// KL(p || q) in nats. Both must be strictly positive.
inline double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DataError("kl: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(q[i] > 0.0)) throw DataError("kl: entries must be strictly positive");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(s, 0.0);
}

struct GuardResult {
  Vec pi;
  double lambda = 1.0;  // weight kept on the unguarded prior
};

// Mixes pi back toward pi0 until KL(pi || pi0) <= kappa, keeping as much of
// pi as possible. f(lambda) = KL(lambda pi + (1 - lambda) pi0 || pi0) is
// convex with f(0) = 0, hence nondecreasing on [0, 1]; bisection on lambda.
inline GuardResult kl_guard(std::span<const double> pi, std::span<const double> pi0, double kappa,
                            double tol = 1e-8) {
  GuardResult out{Vec(pi.begin(), pi.end()), 1.0};
  if (kl(pi, pi0) <= kappa) return out;
  auto mix = [&](double lambda) {
    Vec m(pi.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = lambda * pi[i] + (1.0 - lambda) * pi0[i];
    return m;
  };
  double lo = 0.0;  // feasible
  double hi = 1.0;  // infeasible
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (kl(mix(mid), pi0) <= kappa)
      lo = mid;
    else
      hi = mid;
  }
  out.lambda = lo;
  out.pi = mix(lo);
  return out;
}

// Dirichlet posterior mean (gamma pi0_c + s_c) / (gamma + sum_j s_j), then
// the KL guard when `guard` is set.
inline double prior_update(HeadState& state, std::span<const double> soft_counts,
                           const UpdateConfig& cfg, bool guard = true) {
  const std::size_t C = state.num_classes();
  const double gamma = cfg.gamma_for(C);
  double total = 0.0;
  for (double s : soft_counts) total += s;
  Vec pi(C);
  for (std::size_t c = 0; c < C; ++c) pi[c] = (gamma * state.prior0[c] + soft_counts[c]) / (gamma + total);
  // Renormalize away rounding so the simplex invariant holds to ~1e-15.
  double z = 0.0;
  for (double v : pi) z += v;
  for (double& v : pi) v /= z;
  if (guard) {
    state.prior = kl_guard(pi, state.prior0, cfg.kappa).pi;
  } else {
    state.prior = std::move(pi);
  }
  return kl(state.prior, state.prior0);
}

}  // namespace ultta
