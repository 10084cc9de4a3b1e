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

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "ultta/config.hpp"
#include "ultta/errors.hpp"
#include "ultta/synth.hpp"

// Flat key-value config documents (JSON objects). Keys are the field names
// of EngineConfig / SynthConfig exactly; unknown keys are rejected.

namespace ultta {

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("field '" + key + "' has the wrong type");
  }
}

inline std::uint64_t get_count(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
    throw ConfigError("field '" + key + "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

}  // namespace detail

inline const std::set<std::string>& engine_keys() {
  static const std::set<std::string> keys{
      "window_len", "quantile",      "warmup",        "alpha",          "gamma",          "eta",
      "rho",        "kappa",         "eps",           "batch_B",        "decay",          "tau_min",
      "tau_max",    "beta",          "search_tol",    "cal_mode",       "tau_pred_init",  "tau_cal_init",
      "logit_scale", "prior0",       "metrics_use_pred", "gate_off",    "freeze_prototypes", "freeze_prior",
      "single_tau", "shared_tau", "guards_off", "persist_path",   "trace"};
  return keys;
}

inline const std::set<std::string>& synth_keys() {
  static const std::set<std::string> keys{"C",          "d",           "N",          "K",
                                          "seed",       "shift_severity", "noise_sigma", "view_sigma",
                                          "true_prior_concentration", "switch_at"};
  return keys;
}

// Engine-side options that are not part of the numeric config.
struct RunOptions {
  std::string persist_path;
  bool trace = false;
};

// Applies every engine key present in `j`; keys in `ignore` are skipped,
// anything else unknown is an error.
inline void apply_engine_json(EngineConfig& cfg, RunOptions& opts, const nlohmann::json& j,
                              const std::set<std::string>& ignore = {}) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  using detail::get_count;
  using detail::get_field;
  for (const auto& [key, value] : j.items()) {
    if (ignore.count(key)) continue;
    if (!engine_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (key == "window_len") cfg.gate.window_len = get_count(j, key);
    else if (key == "quantile") cfg.gate.quantile = get_field<double>(j, key);
    else if (key == "warmup") cfg.gate.warmup = get_count(j, key);
    else if (key == "alpha") cfg.update.alpha = get_field<double>(j, key);
    else if (key == "gamma") cfg.update.gamma = value.is_null() ? std::nullopt : std::optional<double>(get_field<double>(j, key));
    else if (key == "eta") cfg.update.eta = get_field<double>(j, key);
    else if (key == "rho") cfg.update.rho = get_field<double>(j, key);
    else if (key == "kappa") cfg.update.kappa = get_field<double>(j, key);
    else if (key == "eps") cfg.update.eps = get_field<double>(j, key);
    else if (key == "batch_B") cfg.update.batch_B = get_count(j, key);
    else if (key == "decay") cfg.update.decay = get_field<double>(j, key);
    else if (key == "tau_min") cfg.temp.tau_min = get_field<double>(j, key);
    else if (key == "tau_max") cfg.temp.tau_max = get_field<double>(j, key);
    else if (key == "beta") cfg.temp.beta = get_field<double>(j, key);
    else if (key == "search_tol") cfg.temp.search_tol = get_field<double>(j, key);
    else if (key == "cal_mode") cfg.temp.cal_mode = cal_mode_from_string(get_field<std::string>(j, key));
    else if (key == "tau_pred_init") cfg.temp.tau_pred_init = get_field<double>(j, key);
    else if (key == "tau_cal_init") cfg.temp.tau_cal_init = get_field<double>(j, key);
    else if (key == "logit_scale") cfg.logit_scale = get_field<double>(j, key);
    else if (key == "prior0") cfg.prior0 = get_field<Vec>(j, key);
    else if (key == "metrics_use_pred") cfg.metrics_use_pred = get_field<bool>(j, key);
    else if (key == "gate_off") cfg.ablations.gate_off = get_field<bool>(j, key);
    else if (key == "freeze_prototypes") cfg.ablations.freeze_prototypes = get_field<bool>(j, key);
    else if (key == "freeze_prior") cfg.ablations.freeze_prior = get_field<bool>(j, key);
    else if (key == "single_tau") cfg.ablations.single_tau = get_field<bool>(j, key);
    else if (key == "shared_tau") cfg.ablations.shared_tau = get_field<bool>(j, key);
    else if (key == "guards_off") cfg.ablations.guards_off = get_field<bool>(j, key);
    else if (key == "persist_path") opts.persist_path = get_field<std::string>(j, key);
    else if (key == "trace") opts.trace = get_field<bool>(j, key);
  }
}

inline void apply_synth_json(SynthConfig& cfg, const nlohmann::json& j, const std::set<std::string>& ignore = {}) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  using detail::get_count;
  using detail::get_field;
  for (const auto& [key, value] : j.items()) {
    if (ignore.count(key)) continue;
    if (!synth_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (key == "C") cfg.C = static_cast<std::uint32_t>(get_count(j, key));
    else if (key == "d") cfg.d = static_cast<std::uint32_t>(get_count(j, key));
    else if (key == "N") cfg.N = get_count(j, key);
    else if (key == "K") cfg.K = static_cast<std::uint32_t>(get_count(j, key));
    else if (key == "seed") cfg.seed = get_count(j, key);
    else if (key == "shift_severity") cfg.shift_severity = get_field<double>(j, key);
    else if (key == "noise_sigma") cfg.noise_sigma = get_field<double>(j, key);
    else if (key == "view_sigma") cfg.view_sigma = get_field<double>(j, key);
    else if (key == "true_prior_concentration") {
      // null or "inf" mean uniform.
      if (value.is_null() || (value.is_string() && value.get<std::string>() == "inf"))
        cfg.true_prior_concentration = std::numeric_limits<double>::infinity();
      else
        cfg.true_prior_concentration = get_field<double>(j, key);
    } else if (key == "switch_at") {
      cfg.switch_at = value.is_null() ? std::nullopt : std::optional<std::uint64_t>(get_count(j, key));
    }
  }
}

// Effective engine config as a flat document using the same keys.
inline nlohmann::ordered_json engine_config_json(const EngineConfig& cfg, const RunOptions& opts = {}) {
  nlohmann::ordered_json j;
  j["window_len"] = cfg.gate.window_len;
  j["quantile"] = cfg.gate.quantile;
  j["warmup"] = cfg.gate.warmup;
  j["alpha"] = cfg.update.alpha;
  j["gamma"] = cfg.update.gamma ? nlohmann::ordered_json(*cfg.update.gamma) : nlohmann::ordered_json(nullptr);
  j["eta"] = cfg.update.eta;
  j["rho"] = cfg.update.rho;
  j["kappa"] = cfg.update.kappa;
  j["eps"] = cfg.update.eps;
  j["batch_B"] = cfg.update.batch_B;
  j["decay"] = cfg.update.decay;
  j["tau_min"] = cfg.temp.tau_min;
  j["tau_max"] = cfg.temp.tau_max;
  j["beta"] = cfg.temp.beta;
  j["search_tol"] = cfg.temp.search_tol;
  j["cal_mode"] = to_string(cfg.temp.cal_mode);
  j["tau_pred_init"] = cfg.temp.tau_pred_init;
  j["tau_cal_init"] = cfg.temp.tau_cal_init;
  j["logit_scale"] = cfg.logit_scale;
  j["prior0"] = cfg.prior0;
  j["metrics_use_pred"] = cfg.metrics_use_pred;
  j["gate_off"] = cfg.ablations.gate_off;
  j["freeze_prototypes"] = cfg.ablations.freeze_prototypes;
  j["freeze_prior"] = cfg.ablations.freeze_prior;
  j["single_tau"] = cfg.ablations.single_tau;
  j["shared_tau"] = cfg.ablations.shared_tau;
  j["guards_off"] = cfg.ablations.guards_off;
  j["persist_path"] = opts.persist_path;
  j["trace"] = opts.trace;
  return j;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace ultta
