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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ultta/errors.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"
#include "ultta/rng.hpp"
#include "ultta/stream_io.hpp"

namespace ultta {

struct SynthConfig {
  std::uint32_t C = 20;
  std::uint32_t d = 64;
  std::uint64_t N = 20000;
  std::uint32_t K = 1;
  std::uint64_t seed = 7;
  double shift_severity = 0.3;  // anchor-to-truth displacement s in [0, 1]
  double noise_sigma = 0.35;    // per-coordinate feature noise
  double view_sigma = 0.05;     // per-coordinate augmentation noise for views k > 0
  // Symmetric Dirichlet parameter for the true prior; infinity means uniform.
  double true_prior_concentration = std::numeric_limits<double>::infinity();
  // Index at which a second, independent shift (prototypes and prior) takes over.
  std::optional<std::uint64_t> switch_at;

  void validate() const {
    if (C < 2) throw ConfigError("C must be >= 2");
    if (d < 2) throw ConfigError("d must be >= 2");
    if (K < 1) throw ConfigError("K must be >= 1");
    if (!(shift_severity >= 0.0 && shift_severity <= 1.0))
      throw ConfigError("shift_severity must lie in [0, 1]");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
    if (!(view_sigma >= 0.0) || !std::isfinite(view_sigma)) throw ConfigError("view_sigma must be >= 0");
    if (!(true_prior_concentration > 0.0)) throw ConfigError("true_prior_concentration must be positive");
    if (switch_at && *switch_at >= N) throw ConfigError("switch_at must be < N");
  }
};

// Ground truth for one shift segment.
struct ShiftSegment {
  Matrix prototypes;  // t*
  Vec prior;          // pi*
};

namespace detail {

inline Vec random_unit(Xoshiro256& rng, std::size_t d) {
  for (;;) {
    Vec v(d);
    for (double& x : v) x = rng.normal();
    if (normalize_inplace(v) >= 1e-12) return v;
  }
}

}  // namespace detail

// Deterministic synthetic shifted stream. Sampling order from one xoshiro
// stream: anchors, then per segment (displacement directions, prior), then
// per record (label, base noise, view noise).
class SyntheticStream {
 public:
  explicit SyntheticStream(const SynthConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    Matrix mu(cfg_.C, cfg_.d);
    for (std::size_t c = 0; c < cfg_.C; ++c) {
      const Vec u = detail::random_unit(rng_, cfg_.d);
      std::copy(u.begin(), u.end(), mu.row(c).begin());
    }
    anchors_ = Anchors{std::move(mu), {}};
    segments_.push_back(make_segment());
    if (cfg_.switch_at) segments_.push_back(make_segment());
  }

  const SynthConfig& config() const noexcept { return cfg_; }
  const Anchors& anchors() const noexcept { return anchors_; }
  const std::vector<ShiftSegment>& segments() const noexcept { return segments_; }
  const ShiftSegment& segment_at(std::uint64_t index) const noexcept {
    return (cfg_.switch_at && index >= *cfg_.switch_at) ? segments_[1] : segments_[0];
  }
  std::uint64_t produced() const noexcept { return index_; }

  std::optional<SampleRecord> next() {
    if (index_ >= cfg_.N) return std::nullopt;
    const ShiftSegment& seg = segment_at(index_);
    SampleRecord rec;
    const std::size_t y = rng_.categorical(seg.prior);
    rec.label = static_cast<std::uint32_t>(y);
    Vec base(seg.prototypes.row(y).begin(), seg.prototypes.row(y).end());
    for (double& x : base) x += cfg_.noise_sigma * rng_.normal();
    if (normalize_inplace(base) < 1e-12) base.assign(seg.prototypes.row(y).begin(), seg.prototypes.row(y).end());
    rec.views.push_back(base);
    for (std::uint32_t k = 1; k < cfg_.K; ++k) {
      Vec v = base;
      for (double& x : v) x += cfg_.view_sigma * rng_.normal();
      if (normalize_inplace(v) < 1e-12) v = base;
      rec.views.push_back(std::move(v));
    }
    ++index_;
    return rec;
  }

 private:
  ShiftSegment make_segment() {
    ShiftSegment seg;
    seg.prototypes = Matrix(cfg_.C, cfg_.d);
    const double s = cfg_.shift_severity;
    for (std::size_t c = 0; c < cfg_.C; ++c) {
      const Vec u = detail::random_unit(rng_, cfg_.d);
      auto t = seg.prototypes.row(c);
      const auto mu = anchors_.mu.row(c);
      if (s == 0.0) {
        std::copy(mu.begin(), mu.end(), t.begin());
        continue;
      }
      for (std::size_t j = 0; j < cfg_.d; ++j) t[j] = (1.0 - s) * mu[j] + s * u[j];
      if (normalize_inplace(t) < 1e-12) std::copy(u.begin(), u.end(), t.begin());
    }
    seg.prior.assign(cfg_.C, 1.0 / cfg_.C);
    if (std::isfinite(cfg_.true_prior_concentration)) {
      double total = 0.0;
      for (double& p : seg.prior) {
        p = std::max(rng_.gamma(cfg_.true_prior_concentration), 1e-300);
        total += p;
      }
      for (double& p : seg.prior) p /= total;
    }
    return seg;
  }

  SynthConfig cfg_;
  Xoshiro256 rng_;
  Anchors anchors_;
  std::vector<ShiftSegment> segments_;
  std::uint64_t index_ = 0;
};

// Accuracy of the ground-truth head (t*, pi*, tau = 1) over a labeled stream,
// using the segment that generated each record.
template <typename NextFn>
double oracle_accuracy(const std::vector<ShiftSegment>& segments, std::optional<std::uint64_t> switch_at,
                       double logit_scale, NextFn&& next) {
  std::uint64_t n = 0;
  std::uint64_t hits = 0;
  std::uint64_t index = 0;
  while (auto rec = next()) {
    const ShiftSegment& seg = (switch_at && index >= *switch_at) ? segments[1] : segments[0];
    ++index;
    if (!rec->label) continue;
    const Vec& z = rec->views.front();
    std::size_t best = 0;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < seg.prior.size(); ++c) {
      const double l = logit_scale * dot(seg.prototypes.row(c), z) + std::log(seg.prior[c]);
      if (l > best_logit) {
        best_logit = l;
        best = c;
      }
    }
    ++n;
    hits += best == *rec->label ? 1 : 0;
  }
  if (n == 0) throw StateError("oracle accuracy needs a labeled stream");
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Ground-truth sidecar ("ULG1"), same little-endian f32 conventions as ULS1:
//   magic "ULG1" | version u32 | C u32 | d u32 | segments u32 |
//   switch_at u64 (0xFFFF..FF = none) | seed u64 | N u64 | K u32 |
//   rng_version u32 | shift f32 | noise_sigma f32 | view_sigma f32 |
//   concentration f32 (inf = uniform) | per segment: t* C*d f32, pi* C f32
inline constexpr std::array<char, 4> kTruthMagic{'U', 'L', 'G', '1'};
inline constexpr std::uint32_t kTruthVersion = 1;

inline void write_truth(const std::string& path, const SyntheticStream& gen) {
  const SynthConfig& cfg = gen.config();
  std::string buf;
  buf.append(kTruthMagic.data(), kTruthMagic.size());
  le::put_u32(buf, kTruthVersion);
  le::put_u32(buf, cfg.C);
  le::put_u32(buf, cfg.d);
  le::put_u32(buf, static_cast<std::uint32_t>(gen.segments().size()));
  le::put_u64(buf, cfg.switch_at.value_or(~std::uint64_t{0}));
  le::put_u64(buf, cfg.seed);
  le::put_u64(buf, cfg.N);
  le::put_u32(buf, cfg.K);
  le::put_u32(buf, kRngVersion);
  le::put_f32(buf, static_cast<float>(cfg.shift_severity));
  le::put_f32(buf, static_cast<float>(cfg.noise_sigma));
  le::put_f32(buf, static_cast<float>(cfg.view_sigma));
  le::put_f32(buf, static_cast<float>(cfg.true_prior_concentration));
  for (const auto& seg : gen.segments()) {
    for (double v : seg.prototypes.data()) le::put_f32(buf, static_cast<float>(v));
    for (double v : seg.prior) le::put_f32(buf, static_cast<float>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

struct GroundTruth {
  SynthConfig config;
  std::vector<ShiftSegment> segments;
};

inline GroundTruth read_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  le::Reader rd(in);
  constexpr std::size_t kFixed = 4 + 4 * 4 + 8 * 3 + 4 * 2 + 4 * 4;
  if (!rd.read(kFixed)) throw FormatError(path + ": truncated truth header");
  const unsigned char* p = rd.data();
  if (std::memcmp(p, kTruthMagic.data(), 4) != 0) throw FormatError(path + ": bad magic");
  if (le::get_u32(p + 4) != kTruthVersion) throw FormatError(path + ": unsupported truth version");
  GroundTruth gt;
  gt.config.C = le::get_u32(p + 8);
  gt.config.d = le::get_u32(p + 12);
  const std::uint32_t nseg = le::get_u32(p + 16);
  const std::uint64_t sw = le::get_u64(p + 20);
  if (sw != ~std::uint64_t{0}) gt.config.switch_at = sw;
  gt.config.seed = le::get_u64(p + 28);
  gt.config.N = le::get_u64(p + 36);
  gt.config.K = le::get_u32(p + 44);
  gt.config.shift_severity = le::get_f32(p + 52);
  gt.config.noise_sigma = le::get_f32(p + 56);
  gt.config.view_sigma = le::get_f32(p + 60);
  gt.config.true_prior_concentration = le::get_f32(p + 64);
  if (nseg < 1 || nseg > 2) throw FormatError(path + ": segment count must be 1 or 2");
  const std::size_t C = gt.config.C;
  const std::size_t d = gt.config.d;
  for (std::uint32_t s = 0; s < nseg; ++s) {
    if (!rd.read(4 * (C * d + C))) throw FormatError(path + ": truncated segment " + std::to_string(s));
    ShiftSegment seg{Matrix(C, d), Vec(C)};
    for (std::size_t i = 0; i < C * d; ++i) seg.prototypes.data()[i] = le::get_f32(rd.data() + 4 * i);
    for (std::size_t c = 0; c < C; ++c) seg.prior[c] = le::get_f32(rd.data() + 4 * (C * d + c));
    gt.segments.push_back(std::move(seg));
  }
  return gt;
}

}  // namespace ultta
