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
#include <cstdint>
#include <span>
#include <vector>

#include "ultta/errors.hpp"
#include "ultta/head_state.hpp"

namespace ultta {

// Linear interpolation between closest order statistics (the common "type 7"
// definition): position h = (n - 1) q. Reorders `values`.
inline double quantile_inplace(std::vector<double>& values, double q) {
  if (values.empty()) throw StateError("quantile of an empty set");
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return a;
  // After nth_element the next order statistic is the minimum of the upper part.
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + frac * (b - a);
}

struct GateThresholds {
  double entropy = 0.0;  // accept entropy <= this
  double margin = 0.0;   // accept margin >= this
};

// Sliding window over (entropy, margin) of every streamed sample.
class GateWindow {
 public:
  explicit GateWindow(std::size_t capacity = 512) : capacity_(capacity) {
    entropies_.reserve(capacity);
    margins_.reserve(capacity);
    sorted_h_.reserve(capacity);
    sorted_m_.reserve(capacity);
  }

  void observe(double entropy, double margin) {
    if (!std::isfinite(entropy) || !std::isfinite(margin))
      throw DataError("gate statistics must be finite");
    if (entropies_.size() < capacity_) {
      entropies_.push_back(entropy);
      margins_.push_back(margin);
    } else {
      erase_sorted(sorted_h_, entropies_[head_]);
      erase_sorted(sorted_m_, margins_[head_]);
      entropies_[head_] = entropy;
      margins_[head_] = margin;
      head_ = (head_ + 1) % capacity_;
    }
    insert_sorted(sorted_h_, entropy);
    insert_sorted(sorted_m_, margin);
    ++seen_;
  }

  GateThresholds thresholds(double q) const {
    if (entropies_.empty()) throw StateError("gate window is empty");
    return {sorted_quantile(sorted_h_, q), sorted_quantile(sorted_m_, 1.0 - q)};
  }

  std::size_t size() const noexcept { return entropies_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t samples_seen() const noexcept { return seen_; }

  // Oldest-to-newest view, used for persistence.
  std::vector<std::pair<double, double>> ordered() const {
    std::vector<std::pair<double, double>> out;
    out.reserve(entropies_.size());
    for (std::size_t i = 0; i < entropies_.size(); ++i) {
      const std::size_t j = (head_ + i) % entropies_.size();
      out.emplace_back(entropies_[j], margins_[j]);
    }
    return out;
  }

  static GateWindow restore(std::size_t capacity, std::span<const std::pair<double, double>> entries,
                            std::uint64_t seen) {
    GateWindow w(capacity);
    for (const auto& [h, m] : entries) w.observe(h, m);
    w.seen_ = seen;
    return w;
  }

 private:
  std::size_t capacity_;
  std::vector<double> entropies_;
  std::vector<double> margins_;
  std::size_t head_ = 0;  // index of the oldest entry once full
  std::uint64_t seen_ = 0;
  // Window contents kept in order as well, so a threshold query is O(1).
  std::vector<double> sorted_h_;
  std::vector<double> sorted_m_;

  static void insert_sorted(std::vector<double>& v, double x) {
    v.insert(std::upper_bound(v.begin(), v.end(), x), x);
  }
  static void erase_sorted(std::vector<double>& v, double x) { v.erase(std::lower_bound(v.begin(), v.end(), x)); }
  // Same type 7 rule as quantile_inplace, on already sorted values.
  static double sorted_quantile(const std::vector<double>& v, double q) {
    const double h = static_cast<double>(v.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0 || lo + 1 >= v.size()) return v[lo];
    return v[lo] + frac * (v[lo + 1] - v[lo]);
  }
};

inline bool accept(const ScoredSample& scored, const GateThresholds& th, std::uint64_t samples_seen,
                   std::uint64_t warmup) noexcept {
  return samples_seen > warmup && scored.entropy <= th.entropy && scored.margin >= th.margin;
}

}  // namespace ultta
