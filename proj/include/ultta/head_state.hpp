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
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ultta/config.hpp"
#include "ultta/errors.hpp"
#include "ultta/linalg.hpp"

namespace ultta {

inline constexpr double kUnitTolerance = 1e-6;
inline constexpr double kInputNormTolerance = 1e-4;

// Text anchors: one unit-norm row per class.
struct Anchors {
  Matrix mu;
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return mu.rows(); }
  std::size_t dim() const noexcept { return mu.cols(); }

  void validate() const {
    if (mu.rows() < 2 || mu.cols() < 2) throw ConfigError("anchors need C >= 2 and d >= 2");
    if (!class_names.empty() && class_names.size() != mu.rows())
      throw ConfigError("class_names size does not match anchor rows");
    for (std::size_t c = 0; c < mu.rows(); ++c) {
      const auto row = mu.row(c);
      if (!all_finite(row)) throw ConfigError("anchor row " + std::to_string(c) + " is not finite");
      const double n = norm2(row);
      if (std::abs(n - 1.0) > kUnitTolerance)
        throw ConfigError("anchor row " + std::to_string(c) + " has norm " + std::to_string(n) +
                          ", expected 1");
    }
  }

  // Builds anchors from arbitrary rows by normalizing each one. Useful when
  // ingesting f32 data whose norms are only approximately 1.
  static Anchors from_rows(Matrix rows) {
    for (std::size_t c = 0; c < rows.rows(); ++c) {
      if (normalize_inplace(rows.row(c)) < 1e-12)
        throw DataError("anchor row " + std::to_string(c) + " is zero");
    }
    return Anchors{std::move(rows), {}};
  }
};

// The adaptable head: prototypes, priors, temperatures and the EM accumulators.
struct HeadState {
  Matrix prototypes;  // t, C x d, unit rows
  Vec prior;          // pi
  Vec prior0;         // pi^(0)
  double tau_pred = 1.0;
  double tau_cal = 1.0;
  double logit_scale = 1.0;
  Matrix U;  // alpha * mu_c + sum_i r_ic z_i
  Vec N;     // alpha + sum_i r_ic
  std::uint64_t accepted_count = 0;
  std::uint64_t update_count = 0;

  std::size_t num_classes() const noexcept { return prototypes.rows(); }
  std::size_t dim() const noexcept { return prototypes.cols(); }

  friend bool operator==(const HeadState&, const HeadState&) = default;
};

struct ScoredSample {
  Vec logits;
  Vec probs_pred;
  double entropy = 0.0;  // nats
  double margin = 0.0;   // top-1 minus top-2 logit
  std::size_t pred_class = 0;
};

inline HeadState init_state(const Anchors& anchors, const EngineConfig& config) {
  anchors.validate();
  config.validate();
  const std::size_t C = anchors.num_classes();
  HeadState s;
  s.prototypes = anchors.mu;
  if (config.prior0.empty()) {
    s.prior0.assign(C, 1.0 / static_cast<double>(C));
  } else {
    if (config.prior0.size() != C)
      throw ConfigError("prior0 has " + std::to_string(config.prior0.size()) +
                        " entries but anchors have " + std::to_string(C) + " classes");
    double total = 0.0;
    for (double v : config.prior0) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("prior0 must be strictly positive");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("prior0 must sum to 1");
    s.prior0 = config.prior0;
  }
  s.prior = s.prior0;
  s.tau_pred = config.temp.tau_pred_init;
  s.tau_cal = config.temp.tau_cal_init;
  s.logit_scale = config.logit_scale;
  const double alpha = config.update.alpha;
  s.U = anchors.mu;
  for (double& v : s.U.data()) v *= alpha;
  s.N.assign(C, alpha);
  return s;
}

// Validates an input embedding and returns a unit-norm copy. Norms within
// 1e-4 of 1 are renormalized; anything else is rejected.
inline Vec checked_unit(std::span<const double> z, std::size_t expected_dim) {
  if (z.size() != expected_dim)
    throw DataError("embedding has dimension " + std::to_string(z.size()) + ", expected " +
                    std::to_string(expected_dim));
  if (!all_finite(z)) throw DataError("embedding contains non-finite values");
  const double n = norm2(z);
  if (n == 0.0) throw DataError("embedding is the zero vector");
  if (std::abs(n - 1.0) > kInputNormTolerance)
    throw DataError("embedding norm " + std::to_string(n) + " is not within 1e-4 of 1");
  Vec out(z.begin(), z.end());
  for (double& v : out) v /= n;
  return out;
}

// <z, t_c> for every class. `z` must already be unit norm.
inline Vec cosines(const HeadState& state, std::span<const double> z) {
  Vec cos(state.num_classes());
  as_eigen(std::span<double>(cos)).noalias() = as_eigen(state.prototypes) * as_eigen(z);
  return cos;
}

// tau * scale * cos_c + log pi_c
inline Vec logits_at(std::span<const double> cos, std::span<const double> log_prior, double tau,
                     double logit_scale) {
  Vec l(cos.size());
  const double k = tau * logit_scale;
  for (std::size_t c = 0; c < l.size(); ++c) l[c] = k * cos[c] + log_prior[c];
  return l;
}

inline Vec log_of(std::span<const double> p) {
  Vec out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(p[i]);
  return out;
}

// Argmax with lowest-index tie-break, plus the gap to the runner-up.
inline std::pair<std::size_t, double> argmax_margin(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (c != best) second = std::max(second, logits[c]);
  return {best, logits[best] - second};
}

inline ScoredSample score_unit(const HeadState& state, std::span<const double> unit_z) {
  ScoredSample s;
  s.logits = logits_at(cosines(state, unit_z), log_of(state.prior), state.tau_pred, state.logit_scale);
  s.probs_pred = softmax(s.logits);
  s.entropy = entropy(s.probs_pred);
  const auto [best, margin] = argmax_margin(s.logits);
  s.pred_class = best;
  s.margin = margin;
  return s;
}

inline ScoredSample score(const HeadState& state, std::span<const double> z) {
  const Vec unit = checked_unit(z, state.dim());
  return score_unit(state, unit);
}

inline Vec calibrated_probs(const HeadState& state, std::span<const double> z) {
  const Vec unit = checked_unit(z, state.dim());
  return softmax(logits_at(cosines(state, unit), log_of(state.prior), state.tau_cal, state.logit_scale));
}

// Throws StateError naming the first violated invariant. `anchors` and the
// clip radius are optional; pass rho <= 0 to skip the anchor-ball check.
inline void check_invariants(const HeadState& s, const TempConfig* temp = nullptr,
                             const Anchors* anchors = nullptr, double rho = 0.0) {
  for (std::size_t c = 0; c < s.num_classes(); ++c) {
    if (std::abs(norm2(s.prototypes.row(c)) - 1.0) > kUnitTolerance)
      throw StateError("prototype " + std::to_string(c) + " left the unit sphere");
    if (anchors && rho > 0.0 && distance(s.prototypes.row(c), anchors->mu.row(c)) > rho + 1e-6)
      throw StateError("prototype " + std::to_string(c) + " left the anchor ball");
  }
  for (const Vec* p : {&s.prior, &s.prior0}) {
    double total = 0.0;
    for (double v : *p) {
      if (!(v > 0.0)) throw StateError("prior has a non-positive entry");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw StateError("prior does not sum to 1");
  }
  if (temp) {
    for (double t : {s.tau_pred, s.tau_cal})
      if (t < temp->tau_min || t > temp->tau_max) throw StateError("temperature out of bounds");
  }
}

}  // namespace ultta
