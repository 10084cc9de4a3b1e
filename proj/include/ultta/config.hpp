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
#include <optional>
#include <string>

#include "ultta/errors.hpp"
#include "ultta/linalg.hpp"

namespace ultta {

struct GateConfig {
  std::size_t window_len = 512;
  double quantile = 0.5;  // fraction of the window treated as confident
  std::size_t warmup = 100;

  void validate() const {
    if (window_len < 8) throw ConfigError("window_len must be >= 8");
    if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("quantile must lie in (0, 1)");
  }
};

struct UpdateConfig {
  double alpha = 1.0;            // prototype prior precision
  std::optional<double> gamma;   // Dirichlet mass; unset means C
  double eta = 0.1;              // prototype step size
  double rho = 0.5;              // chordal clip radius around the anchor
  double kappa = 0.1;            // KL cap on the prior, nats
  double eps = 1e-8;
  std::size_t batch_B = 64;
  double decay = 1.0;            // anchored forgetting factor; 1 disables

  double gamma_for(std::size_t num_classes) const {
    return gamma.value_or(static_cast<double>(num_classes));
  }

  void validate() const {
    if (!(alpha > 0.0 && std::isfinite(alpha))) throw ConfigError("alpha must be positive");
    if (gamma && !(*gamma > 0.0 && std::isfinite(*gamma))) throw ConfigError("gamma must be positive");
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0, 1]");
    if (!(rho > 0.0)) throw ConfigError("rho must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (batch_B == 0) throw ConfigError("batch_B must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
  }
};

enum class CalMode { fixed, mirror_pred };

inline std::string to_string(CalMode m) { return m == CalMode::fixed ? "fixed" : "mirror_pred"; }

inline CalMode cal_mode_from_string(const std::string& s) {
  if (s == "fixed") return CalMode::fixed;
  if (s == "mirror_pred") return CalMode::mirror_pred;
  throw ConfigError("cal_mode must be 'fixed' or 'mirror_pred', got '" + s + "'");
}

struct TempConfig {
  double tau_min = 0.5;
  double tau_max = 3.0;
  double beta = 0.9;
  double search_tol = 1e-4;
  CalMode cal_mode = CalMode::fixed;
  double tau_pred_init = 1.0;
  double tau_cal_init = 1.0;

  void validate() const {
    if (!(tau_min > 0.0 && tau_min < tau_max)) throw ConfigError("need 0 < tau_min < tau_max");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
    if (!(search_tol > 0.0)) throw ConfigError("search_tol must be positive");
    for (double t : {tau_pred_init, tau_cal_init})
      if (!(t >= tau_min && t <= tau_max))
        throw ConfigError("initial temperatures must lie in [tau_min, tau_max]");
  }
};

// Ablation switches. Each is independent of the others.
struct Ablations {
  bool gate_off = false;
  bool freeze_prototypes = false;
  bool freeze_prior = false;
  bool single_tau = false;  // one temperature for both roles, held at tau_pred_init
  bool shared_tau = false;  // one temperature for both roles, adapted like tau_pred
  bool guards_off = false;        // no clipping, no KL guard, no EMA, no tau bounds
};

struct EngineConfig {
  GateConfig gate;
  UpdateConfig update;
  TempConfig temp;
  Ablations ablations;
  // Fixed multiplier on every cosine: logits are
  // tau * logit_scale * <z, t_c> + log pi_c. 100 is CLIP's learned logit
  // scale, so tau = 1 reproduces its zero-shot head.
  double logit_scale = 100.0;
  // Optional reference prior; empty means uniform.
  Vec prior0;
  // Report ECE/NLL/Brier on tau_pred probabilities instead of tau_cal.
  bool metrics_use_pred = false;

  void validate() const {
    gate.validate();
    update.validate();
    temp.validate();
    if (!(logit_scale > 0.0 && std::isfinite(logit_scale)))
      throw ConfigError("logit_scale must be positive");
  }
};

}  // namespace ultta
