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
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ultta/errors.hpp"

namespace ultta {

inline constexpr std::size_t kEceBins = 15;

struct CalibrationBin {
  std::uint64_t count = 0;
  double confidence_sum = 0.0;
  std::uint64_t correct = 0;
};

struct DriftIndicators {
  double max_prior_kl = 0.0;
  double max_proto_step = 0.0;
  double max_proto_anchor_dist = 0.0;
};

inline std::size_t ece_bin(double confidence) noexcept {
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(kEceBins) * confidence));
  return std::min(b, kEceBins - 1);
}

struct MetricsReport {
  std::uint64_t n_samples = 0;  // everything streamed, labeled or not
  std::uint64_t n_eval = 0;
  std::uint64_t n_correct = 0;
  double top1 = 0.0;
  double ece = 0.0;
  double nll_mean = 0.0;
  double brier_mean = 0.0;
  double acc_first = 0.0;  // first 10% of labeled samples
  double acc_last = 0.0;   // last 10%
  double acc_drop = 0.0;   // acc_first - acc_last
  DriftIndicators drift;
  std::array<CalibrationBin, kEceBins> bins{};
  // Filled by the engine.
  std::string setting = "full";
  std::uint64_t n_accepted = 0;
  std::uint64_t n_updates = 0;
  double tau_pred = 1.0;
  double tau_cal = 1.0;
};

// Prequential accumulator for Top-1, 15-bin ECE, NLL, Brier and the drift
// maxima. Correctness is also kept as a bit series (one bit per labeled
// sample) for the head/tail accuracy drop and windowed accuracy.
class MetricsAccumulator {
 public:
  void record_prediction(std::span<const double> probs, std::size_t pred_class, std::size_t true_label) {
    if (true_label >= probs.size())
      throw DataError("label " + std::to_string(true_label) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
    const bool correct = pred_class == true_label;
    double confidence = 0.0;
    for (double p : probs) confidence = std::max(confidence, p);
    auto& bin = bins_[ece_bin(confidence)];
    ++bin.count;
    bin.confidence_sum += confidence;
    bin.correct += correct ? 1 : 0;
    ++n_eval_;
    n_correct_ += correct ? 1 : 0;
    nll_sum_ += -std::log(std::max(probs[true_label], 1e-300));
    double brier = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
      const double diff = probs[c] - (c == true_label ? 1.0 : 0.0);
      brier += diff * diff;
    }
    brier_sum_ += brier;
    series_.push_back(correct);
  }

  void record_drift(double prior_kl, double proto_step, double proto_anchor_dist) noexcept {
    drift_.max_prior_kl = std::max(drift_.max_prior_kl, prior_kl);
    drift_.max_proto_step = std::max(drift_.max_proto_step, proto_step);
    drift_.max_proto_anchor_dist = std::max(drift_.max_proto_anchor_dist, proto_anchor_dist);
  }

  void count_sample() noexcept { ++n_samples_; }

  double ece() const {
    if (n_eval_ == 0) throw StateError("ECE needs at least one labeled sample");
    double s = 0.0;
    for (const auto& b : bins_) {
      if (b.count == 0) continue;
      s += std::abs(static_cast<double>(b.correct) - b.confidence_sum);
    }
    return s / static_cast<double>(n_eval_);
  }

  // Accuracy of consecutive non-overlapping windows of `width` labeled
  // samples; a trailing partial window is dropped.
  std::vector<double> window_accuracies(std::size_t width) const {
    std::vector<double> out;
    if (width == 0) return out;
    for (std::size_t start = 0; start + width <= series_.size(); start += width) {
      std::size_t hits = 0;
      for (std::size_t i = start; i < start + width; ++i) hits += series_[i] ? 1 : 0;
      out.push_back(static_cast<double>(hits) / static_cast<double>(width));
    }
    return out;
  }

  // Report without the n_eval > 0 precondition; metric fields stay zero when
  // nothing was labeled.
  MetricsReport summarize() const {
    MetricsReport r;
    r.n_samples = n_samples_;
    r.n_eval = n_eval_;
    r.n_correct = n_correct_;
    r.drift = drift_;
    r.bins = bins_;
    if (n_eval_ == 0) return r;
    const auto n = static_cast<double>(n_eval_);
    r.top1 = static_cast<double>(n_correct_) / n;
    r.ece = ece();
    r.nll_mean = nll_sum_ / n;
    r.brier_mean = brier_sum_ / n;
    const std::size_t w = std::max<std::size_t>(1, series_.size() / 10);
    std::size_t head = 0;
    std::size_t tail = 0;
    for (std::size_t i = 0; i < w; ++i) {
      head += series_[i] ? 1 : 0;
      tail += series_[series_.size() - w + i] ? 1 : 0;
    }
    r.acc_first = static_cast<double>(head) / static_cast<double>(w);
    r.acc_last = static_cast<double>(tail) / static_cast<double>(w);
    r.acc_drop = r.acc_first - r.acc_last;
    return r;
  }

  MetricsReport finalize() const {
    if (n_eval_ == 0) throw StateError("no labeled samples were evaluated");
    return summarize();
  }

  std::uint64_t n_eval() const noexcept { return n_eval_; }
  double nll_sum() const noexcept { return nll_sum_; }
  double brier_sum() const noexcept { return brier_sum_; }
  const DriftIndicators& drift() const noexcept { return drift_; }
  const std::array<CalibrationBin, kEceBins>& bins() const noexcept { return bins_; }

 private:
  std::uint64_t n_samples_ = 0;
  std::uint64_t n_eval_ = 0;
  std::uint64_t n_correct_ = 0;
  std::array<CalibrationBin, kEceBins> bins_{};
  double nll_sum_ = 0.0;
  double brier_sum_ = 0.0;
  DriftIndicators drift_;
  std::vector<bool> series_;
};

// JSON field names are part of the report format; keep them stable.
inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "ultta-report";
  j["version"] = 1;
  j["setting"] = r.setting;
  j["n_samples"] = r.n_samples;
  j["n_eval"] = r.n_eval;
  j["n_correct"] = r.n_correct;
  j["n_accepted"] = r.n_accepted;
  j["n_updates"] = r.n_updates;
  j["top1"] = r.top1;
  j["ece"] = r.ece;
  j["nll_mean"] = r.nll_mean;
  j["brier_mean"] = r.brier_mean;
  j["acc_first"] = r.acc_first;
  j["acc_last"] = r.acc_last;
  j["acc_drop"] = r.acc_drop;
  j["max_prior_kl"] = r.drift.max_prior_kl;
  j["max_proto_step"] = r.drift.max_proto_step;
  j["max_proto_anchor_dist"] = r.drift.max_proto_anchor_dist;
  j["tau_pred"] = r.tau_pred;
  j["tau_cal"] = r.tau_cal;
  auto& bins = j["reliability"];
  bins = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < kEceBins; ++b) {
    const auto& bin = r.bins[b];
    nlohmann::ordered_json row;
    row["lo"] = static_cast<double>(b) / kEceBins;
    row["hi"] = static_cast<double>(b + 1) / kEceBins;
    row["count"] = bin.count;
    row["confidence_sum"] = bin.confidence_sum;
    row["correct"] = bin.correct;
    bins.push_back(row);
  }
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "ultta-report") throw FormatError("not an ultta report");
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported report version");
    MetricsReport r;
    r.setting = j.at("setting").get<std::string>();
    r.n_samples = j.at("n_samples").get<std::uint64_t>();
    r.n_eval = j.at("n_eval").get<std::uint64_t>();
    r.n_correct = j.at("n_correct").get<std::uint64_t>();
    r.n_accepted = j.at("n_accepted").get<std::uint64_t>();
    r.n_updates = j.at("n_updates").get<std::uint64_t>();
    r.top1 = j.at("top1").get<double>();
    r.ece = j.at("ece").get<double>();
    r.nll_mean = j.at("nll_mean").get<double>();
    r.brier_mean = j.at("brier_mean").get<double>();
    r.acc_first = j.at("acc_first").get<double>();
    r.acc_last = j.at("acc_last").get<double>();
    r.acc_drop = j.at("acc_drop").get<double>();
    r.drift.max_prior_kl = j.at("max_prior_kl").get<double>();
    r.drift.max_proto_step = j.at("max_proto_step").get<double>();
    r.drift.max_proto_anchor_dist = j.at("max_proto_anchor_dist").get<double>();
    r.tau_pred = j.at("tau_pred").get<double>();
    r.tau_cal = j.at("tau_cal").get<double>();
    const auto& bins = j.at("reliability");
    if (!bins.is_array() || bins.size() != kEceBins) throw FormatError("reliability must have 15 bins");
    for (std::size_t b = 0; b < kEceBins; ++b) {
      r.bins[b].count = bins[b].at("count").get<std::uint64_t>();
      r.bins[b].confidence_sum = bins[b].at("confidence_sum").get<double>();
      r.bins[b].correct = bins[b].at("correct").get<std::uint64_t>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

}  // namespace ultta
