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
#include <vector>

#include <Eigen/Core>

#include "ultta/errors.hpp"

namespace ultta {

using Vec = std::vector<double>;

// Dense row-major matrix. Rows are the unit of access everywhere in this
// library (one row per class or per sample), so only row views are exposed.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMatrixXd> as_eigen(Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const RowMatrixXd> as_eigen(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
inline Eigen::Map<Eigen::VectorXd> as_eigen(std::span<double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

// Sums term(i) over [0, n) in four interleaved lanes combined in a fixed
// order. The compiler vectorizes it, and unlike Eigen's reductions on mapped
// memory the summation order never depends on buffer alignment, so results
// are reproducible bit for bit.
template <typename Term>
inline double lane_sum(std::size_t n, Term&& term) noexcept {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t full = n - n % 4;
  for (std::size_t i = 0; i < full; i += 4) {
    acc[0] += term(i);
    acc[1] += term(i + 1);
    acc[2] += term(i + 2);
    acc[3] += term(i + 3);
  }
  double tail = 0.0;
  for (std::size_t i = full; i < n; ++i) tail += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  const double* x = a.data();
  const double* y = b.data();
  return lane_sum(a.size(), [=](std::size_t i) { return x[i] * y[i]; });
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) noexcept {
  const double* x = a.data();
  const double* y = b.data();
  return std::sqrt(lane_sum(a.size(), [=](std::size_t i) {
    const double diff = x[i] - y[i];
    return diff * diff;
  }));
}

inline bool all_finite(std::span<const double> a) noexcept {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

// Scales `a` to unit length in place. Returns the original norm; leaves `a`
// untouched when the norm is below `min_norm`.
inline double normalize_inplace(std::span<double> a, double min_norm = 1e-12) noexcept {
  const double n = norm2(a);
  if (n < min_norm) return n;
  as_eigen(a) /= n;
  return n;
}

// Numerically stable softmax (max subtraction).
inline Vec softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  // Evaluated into owned (aligned) storage: on a mapped destination Eigen
  // peels a run-time number of leading elements through scalar exp, whose
  // last bit can differ from the packet version.
  const auto l = as_eigen(logits).array();
  const Eigen::ArrayXd e = (l - l.maxCoeff()).exp();
  const double* ep = e.data();
  const double z = lane_sum(logits.size(), [=](std::size_t i) { return ep[i]; });
  Vec p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = ep[i] / z;
  return p;
}

// Shannon entropy in nats; 0·log 0 = 0.
inline double entropy(std::span<const double> p) noexcept {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace ultta
