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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ultta/config.hpp"
#include "ultta/errors.hpp"
#include "ultta/gate.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"
#include "ultta/metrics.hpp"
#include "ultta/stream_io.hpp"
#include "ultta/temperature.hpp"
#include "ultta/updates.hpp"

namespace ultta {

// Temperature search range when guards are off: no bounds, no EMA.
inline constexpr double kUnguardedTauFloor = 1e-3;
inline constexpr double kUnguardedTauCeil = 100.0;

struct UpdateEvent {
  std::uint64_t update_index = 0;
  std::uint64_t sample_index = 0;
  double prior_kl = 0.0;
  double max_step = 0.0;
  double max_anchor_dist = 0.0;
  double tau_hat = 0.0;
  double tau_pred = 0.0;
  double tau_cal = 0.0;
  std::size_t degenerate = 0;
};

struct StepOutcome {
  std::size_t pred_class = 0;
  double confidence = 0.0;
  bool accepted = false;
  bool updated = false;
};

// Bytes held by the engine's mutable state, split by role.
struct StateFootprint {
  std::size_t prototypes = 0;  // the C x d head every classifier holds
  std::size_t accumulators = 0;
  std::size_t priors = 0;
  std::size_t block = 0;
  std::size_t window = 0;

  std::size_t adaptation_overhead() const noexcept { return accumulators + priors + block + window; }
  std::size_t total() const noexcept { return prototypes + adaptation_overhead(); }
};

struct RunResult {
  MetricsReport report;
  HeadState state;
  std::vector<UpdateEvent> updates;
  StateFootprint peak_footprint;
};

inline std::string setting_name(const Ablations& a) {
  std::string name;
  auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!name.empty()) name += "+";
    name += n;
  };
  add(a.gate_off, "gate_off");
  add(a.freeze_prototypes, "freeze_prototypes");
  add(a.freeze_prior, "freeze_prior");
  add(a.single_tau, "single_tau");
  add(a.shared_tau, "shared_tau");
  add(a.guards_off, "guards_off");
  return name.empty() ? "full" : name;
}

// Streaming adaptation loop. Per sample: score view 0, record metrics
// (predict-then-update), feed the gate window, and when accepted buffer the
// sample with its responsibilities. Every batch_B accepted samples the block
// is folded into (U, N, s) and prototypes, prior and tau_pred are updated.
class Engine {
 public:
  Engine(Anchors anchors, EngineConfig cfg)
      : anchors_(std::move(anchors)),
        cfg_(std::move(cfg)),
        state_(init_state(anchors_, cfg_)),
        window_(cfg_.gate.window_len),
        buf_(anchors_.num_classes()) {
    const Ablations& a = cfg_.ablations;
    if (a.single_tau || a.shared_tau) state_.tau_cal = state_.tau_pred;
    frozen_ = a.freeze_prototypes && a.freeze_prior && a.single_tau;
    log_prior_ = log_of(state_.prior);
    peak_ = footprint();
  }

  const Anchors& anchors() const noexcept { return anchors_; }
  const EngineConfig& config() const noexcept { return cfg_; }
  const HeadState& state() const noexcept { return state_; }
  const GateWindow& window() const noexcept { return window_; }
  const BatchBuffer& buffer() const noexcept { return buf_; }
  const MetricsAccumulator& metrics() const noexcept { return metrics_; }
  std::uint64_t samples_processed() const noexcept { return index_; }

  void set_trace(std::ostream* out) noexcept { trace_ = out; }
  void set_record_updates(bool on) noexcept { record_updates_ = on; }
  void set_check_invariants(bool on) noexcept { check_invariants_ = on; }

  StepOutcome step(const SampleRecord& rec) {
    if (rec.views.empty()) throw DataError("record has no views");
    if (rec.label && *rec.label >= state_.num_classes())
      throw DataError("label " + std::to_string(*rec.label) + " out of range");
    const Ablations& ab = cfg_.ablations;
    const Vec z = checked_unit(rec.views.front(), state_.dim());
    const Vec cos = cosines(state_, z);

    ScoredSample scored;
    scored.logits = logits_at(cos, log_prior_, state_.tau_pred, state_.logit_scale);
    scored.probs_pred = softmax(scored.logits);
    std::tie(scored.pred_class, scored.margin) = argmax_margin(scored.logits);
    scored.entropy = entropy(scored.probs_pred);

    const bool emit_pred = cfg_.metrics_use_pred || ab.single_tau || ab.shared_tau;
    const Vec probs_emit =
        emit_pred ? scored.probs_pred : softmax(logits_at(cos, log_prior_, state_.tau_cal, state_.logit_scale));

    StepOutcome out;
    out.pred_class = scored.pred_class;
    out.confidence = *std::max_element(probs_emit.begin(), probs_emit.end());
    metrics_.count_sample();
    if (rec.label) metrics_.record_prediction(probs_emit, scored.pred_class, *rec.label);

    if (!frozen_) {
      window_.observe(scored.entropy, scored.margin);
      if (ab.gate_off) {
        out.accepted = window_.samples_seen() > cfg_.gate.warmup;
      } else {
        out.accepted = accept(scored, window_.thresholds(cfg_.gate.quantile), window_.samples_seen(),
                              cfg_.gate.warmup);
      }
      if (out.accepted) {
        Vec r;
        if (rec.views.size() == 1) {
          r = scored.probs_pred;  // same state, same view: identical to responsibilities()
        } else {
          r = responsibilities(state_, rec.views);
        }
        buf_.embeddings.push_back(z);
        buf_.resp.push_back(std::move(r));
        ++state_.accepted_count;
        if (buf_.size() >= cfg_.update.batch_B) {
          update_block();
          out.updated = true;
        }
      }
    }

    if (trace_) write_trace(rec, out);
    ++index_;
    return out;
  }

  // Folds whatever is buffered and runs the M-step now (used at end of stream
  // only when explicitly requested; run_stream does not flush partial blocks).
  void flush() {
    if (buf_.size() > 0) update_block();
  }

  RunResult result() const {
    RunResult r;
    r.report = metrics_.summarize();
    r.report.setting = setting_name(cfg_.ablations);
    r.report.n_accepted = state_.accepted_count;
    r.report.n_updates = state_.update_count;
    r.report.tau_pred = state_.tau_pred;
    r.report.tau_cal = state_.tau_cal;
    r.state = state_;
    r.updates = updates_;
    r.peak_footprint = peak_;
    return r;
  }

  StateFootprint footprint() const noexcept {
    StateFootprint f;
    const std::size_t C = state_.num_classes();
    const std::size_t d = state_.dim();
    f.prototypes = sizeof(double) * C * d;
    f.accumulators = sizeof(double) * (C * d + C + C);  // U, N, soft counts
    f.priors = sizeof(double) * 3 * C;                  // pi, pi0, log pi
    for (const Vec& v : buf_.embeddings) f.block += sizeof(double) * v.capacity();
    for (const Vec& v : buf_.resp) f.block += sizeof(double) * v.capacity();
    f.window = sizeof(double) * 4 * window_.capacity();  // ring plus sorted copy, two statistics
    return f;
  }

  // Versioned binary snapshot ("ULST"): head state, accumulators, soft counts,
  // pending block, gate window and counters. Doubles are stored as f64 so a
  // resumed run continues bit-exactly.
  void save(const std::string& path) const;
  static Engine load(Anchors anchors, EngineConfig cfg, const std::string& path);

 private:
  void update_block() {
    const Ablations& ab = cfg_.ablations;
    const bool guards = !ab.guards_off;
    fold_block(state_, buf_, anchors_, cfg_.update);

    PrototypeStep step;
    if (!ab.freeze_prototypes) {
      step = prototype_update(state_, cfg_.update, anchors_, guards);
    } else {
      for (std::size_t c = 0; c < state_.num_classes(); ++c)
        step.max_anchor_dist = std::max(step.max_anchor_dist, distance(state_.prototypes.row(c), anchors_.mu.row(c)));
    }
    if (!ab.freeze_prior) {
      prior_update(state_, buf_.soft_counts, cfg_.update, guards);
      log_prior_ = log_of(state_.prior);
    }
    double tau_hat = state_.tau_pred;
    if (!ab.single_tau) {
      const Matrix cos = block_cosines(state_, buf_);
      if (guards) {
        tau_hat = minimize_tau(cos, log_prior_, state_.logit_scale, cfg_.temp);
        state_.tau_pred = ema_clamp(state_.tau_pred, tau_hat, cfg_.temp);
      } else {
        tau_hat = minimize_tau(cos, log_prior_, state_.logit_scale,
                               TauSearch{kUnguardedTauFloor, kUnguardedTauCeil, cfg_.temp.search_tol});
        state_.tau_pred = std::max(tau_hat, kUnguardedTauFloor);
      }
      if (ab.shared_tau) {
        state_.tau_cal = state_.tau_pred;
      } else {
        state_.tau_cal = update_tau_cal(state_, cfg_.temp);
      }
    }
    const double prior_kl = kl(state_.prior, state_.prior0);
    metrics_.record_drift(prior_kl, step.max_step, step.max_anchor_dist);
    ++state_.update_count;
    if (record_updates_) {
      updates_.push_back(UpdateEvent{state_.update_count, index_, prior_kl, step.max_step, step.max_anchor_dist,
                                     tau_hat, state_.tau_pred, state_.tau_cal, step.degenerate});
    }
    if (check_invariants_) verify(prior_kl);
    const StateFootprint now = footprint();
    if (now.total() > peak_.total()) peak_ = now;
    buf_.clear_block();
  }

  void verify(double prior_kl) const {
    const bool guards = !cfg_.ablations.guards_off;
    check_invariants(state_, guards ? &cfg_.temp : nullptr, guards ? &anchors_ : nullptr, cfg_.update.rho);
    if (guards && !cfg_.ablations.freeze_prior && prior_kl > cfg_.update.kappa + 1e-6)
      throw StateError("prior KL " + std::to_string(prior_kl) + " exceeds the cap");
  }

  void write_trace(const SampleRecord& rec, const StepOutcome& out) {
    nlohmann::ordered_json j;
    j["index"] = index_;
    j["pred"] = out.pred_class;
    if (rec.label) j["label"] = *rec.label;
    j["confidence"] = out.confidence;
    j["accepted"] = out.accepted;
    j["kl"] = kl(state_.prior, state_.prior0);
    j["tau_pred"] = state_.tau_pred;
    *trace_ << j.dump() << '\n';
  }

  Anchors anchors_;
  EngineConfig cfg_;
  HeadState state_;
  GateWindow window_;
  BatchBuffer buf_;
  MetricsAccumulator metrics_;
  Vec log_prior_;
  bool frozen_ = false;
  std::uint64_t index_ = 0;
  std::ostream* trace_ = nullptr;
  bool record_updates_ = false;
  bool check_invariants_ = true;
  std::vector<UpdateEvent> updates_;
  StateFootprint peak_;
};

inline constexpr std::array<char, 4> kStateMagic{'U', 'L', 'S', 'T'};
inline constexpr std::uint32_t kStateVersion = 1;

inline void Engine::save(const std::string& path) const {
  const std::size_t C = state_.num_classes();
  const std::size_t d = state_.dim();
  std::string b;
  b.append(kStateMagic.data(), kStateMagic.size());
  le::put_u32(b, kStateVersion);
  le::put_u32(b, static_cast<std::uint32_t>(C));
  le::put_u32(b, static_cast<std::uint32_t>(d));
  le::put_f64(b, state_.logit_scale);
  le::put_f64(b, state_.tau_pred);
  le::put_f64(b, state_.tau_cal);
  le::put_u64(b, state_.accepted_count);
  le::put_u64(b, state_.update_count);
  le::put_u64(b, index_);
  auto put_all = [&](std::span<const double> v) {
    for (double x : v) le::put_f64(b, x);
  };
  put_all(state_.prototypes.data());
  put_all(state_.prior);
  put_all(state_.prior0);
  put_all(state_.U.data());
  put_all(state_.N);
  put_all(buf_.soft_counts);
  le::put_u64(b, buf_.size());
  for (std::size_t i = 0; i < buf_.size(); ++i) {
    put_all(buf_.embeddings[i]);
    put_all(buf_.resp[i]);
  }
  const auto entries = window_.ordered();
  le::put_u64(b, window_.capacity());
  le::put_u64(b, window_.samples_seen());
  le::put_u64(b, entries.size());
  for (const auto& [h, m] : entries) {
    le::put_f64(b, h);
    le::put_f64(b, m);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline Engine Engine::load(Anchors anchors, EngineConfig cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  le::Reader rd(in);
  auto need = [&](std::size_t n, const char* what) {
    if (!rd.read(n)) throw FormatError(path + ": truncated " + what);
    return rd.data();
  };
  const unsigned char* p = need(16, "header");
  if (std::memcmp(p, kStateMagic.data(), 4) != 0) throw FormatError(path + ": bad magic");
  const std::uint32_t version = le::get_u32(p + 4);
  if (version != kStateVersion) throw FormatError(path + ": unsupported state version " + std::to_string(version));
  const std::size_t C = le::get_u32(p + 8);
  const std::size_t d = le::get_u32(p + 12);
  if (C != anchors.num_classes() || d != anchors.dim())
    throw ConfigError("saved state is " + std::to_string(C) + "x" + std::to_string(d) + " but anchors are " +
                      std::to_string(anchors.num_classes()) + "x" + std::to_string(anchors.dim()));
  p = need(48, "scalars");
  cfg.logit_scale = le::get_f64(p);
  Engine e(std::move(anchors), std::move(cfg));
  HeadState& s = e.state_;
  s.logit_scale = le::get_f64(p);
  s.tau_pred = le::get_f64(p + 8);
  s.tau_cal = le::get_f64(p + 16);
  s.accepted_count = le::get_u64(p + 24);
  s.update_count = le::get_u64(p + 32);
  e.index_ = le::get_u64(p + 40);
  auto get_all = [&](std::span<double> v, const char* what) {
    const unsigned char* q = need(8 * v.size(), what);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = le::get_f64(q + 8 * i);
  };
  get_all(s.prototypes.data(), "prototypes");
  get_all(s.prior, "prior");
  get_all(s.prior0, "reference prior");
  get_all(s.U.data(), "U");
  get_all(s.N, "N");
  get_all(e.buf_.soft_counts, "soft counts");
  const std::uint64_t pending = le::get_u64(need(8, "block size"));
  for (std::uint64_t i = 0; i < pending; ++i) {
    Vec z(d);
    Vec r(C);
    get_all(z, "block embedding");
    get_all(r, "block responsibilities");
    e.buf_.embeddings.push_back(std::move(z));
    e.buf_.resp.push_back(std::move(r));
  }
  p = need(24, "gate window header");
  const std::uint64_t capacity = le::get_u64(p);
  const std::uint64_t seen = le::get_u64(p + 8);
  const std::uint64_t count = le::get_u64(p + 16);
  if (capacity != e.cfg_.gate.window_len)
    throw ConfigError("saved gate window has capacity " + std::to_string(capacity) + ", config says " +
                      std::to_string(e.cfg_.gate.window_len));
  if (count > capacity) throw FormatError(path + ": gate window overflows its capacity");
  std::vector<std::pair<double, double>> entries(count);
  for (auto& [h, m] : entries) {
    const unsigned char* q = need(16, "gate window");
    h = le::get_f64(q);
    m = le::get_f64(q + 8);
  }
  e.window_ = GateWindow::restore(capacity, entries, seen);
  if (!rd.at_eof()) throw FormatError(path + ": trailing data");
  e.log_prior_ = log_of(s.prior);
  check_invariants(s);
  return e;
}

// Runs the engine over a source callable returning std::optional<SampleRecord>.
template <typename Source>
RunResult run_stream(const Anchors& anchors, Source&& next, const EngineConfig& cfg, std::ostream* trace = nullptr,
                     bool record_updates = false) {
  Engine engine(anchors, cfg);
  engine.set_trace(trace);
  engine.set_record_updates(record_updates);
  while (auto rec = next()) engine.step(*rec);
  return engine.result();
}

// Frozen zero-shot head: t = mu, pi = pi0, tau = 1 for both roles.
inline EngineConfig zero_shot_config(EngineConfig cfg) {
  cfg.ablations = Ablations{};
  cfg.ablations.freeze_prototypes = true;
  cfg.ablations.freeze_prior = true;
  cfg.ablations.single_tau = true;
  cfg.temp.tau_pred_init = 1.0;
  cfg.temp.tau_cal_init = 1.0;
  cfg.temp.tau_min = std::min(cfg.temp.tau_min, 1.0);
  cfg.temp.tau_max = std::max(cfg.temp.tau_max, 1.0 + 1e-9);
  return cfg;
}

template <typename Source>
RunResult run_zero_shot(const Anchors& anchors, Source&& next, const EngineConfig& cfg = {},
                        std::ostream* trace = nullptr) {
  return run_stream(anchors, std::forward<Source>(next), zero_shot_config(cfg), trace);
}

// Source adapter over an in-memory record vector.
class VectorSource {
 public:
  explicit VectorSource(const std::vector<SampleRecord>& records) : records_(records) {}
  std::optional<SampleRecord> operator()() {
    if (pos_ >= records_.size()) return std::nullopt;
    return records_[pos_++];
  }

 private:
  const std::vector<SampleRecord>& records_;
  std::size_t pos_ = 0;
};

}  // namespace ultta
