// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Oracles here are written independently of the library
// (long double sums, dense grids) and only call into it for the quantity
// under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "testing.hpp"
#include "ultta/ultta.hpp"

namespace {

using namespace ultta;
using ultta::testing::random_anchors;
using ultta::testing::random_simplex;
using ultta::testing::random_unit;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Shared synthetic fixtures.

SynthConfig shifted(std::uint64_t seed, std::uint64_t N = 20000) {
  SynthConfig s;
  s.C = 20;
  s.d = 64;
  s.N = N;
  s.seed = seed;
  s.shift_severity = 0.3;
  s.noise_sigma = 0.35;
  s.true_prior_concentration = 3.0;
  return s;
}

struct Fixture {
  SynthConfig cfg;
  Anchors anchors;
  std::vector<ShiftSegment> truth;
  std::vector<SampleRecord> records;
};

Fixture make_fixture(const SynthConfig& cfg) {
  SyntheticStream gen(cfg);
  Fixture f{cfg, gen.anchors(), gen.segments(), ultta::testing::collect(gen)};
  return f;
}

RunResult run(const Fixture& f, const EngineConfig& cfg, std::ostream* trace = nullptr) {
  return run_stream(f.anchors, VectorSource(f.records), cfg, trace, true);
}

RunResult run_zs(const Fixture& f, std::ostream* trace = nullptr) {
  return run_zero_shot(f.anchors, VectorSource(f.records), EngineConfig{}, trace);
}

EngineConfig with(Ablations a) {
  EngineConfig c;
  c.ablations = a;
  return c;
}

std::vector<std::pair<std::string, Ablations>> ablation_grid() {
  std::vector<std::pair<std::string, Ablations>> g;
  g.push_back({"full", {}});
  Ablations a;
  a.gate_off = true;
  g.push_back({"gate_off", a});
  a = {};
  a.freeze_prototypes = true;
  g.push_back({"freeze_prototypes", a});
  a = {};
  a.freeze_prior = true;
  g.push_back({"freeze_prior", a});
  a = {};
  a.single_tau = true;
  g.push_back({"single_tau", a});
  a = {};
  a.guards_off = true;
  g.push_back({"guards_off", a});
  return g;
}

long double ref_kl(const Vec& p, const Vec& q) { return ultta::testing::ref_kl(p, q); }

double mean_cos(const Matrix& a, const Matrix& b) {
  long double s = 0;
  for (std::size_t c = 0; c < a.rows(); ++c) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      dot += static_cast<long double>(a(c, j)) * b(c, j);
      na += static_cast<long double>(a(c, j)) * a(c, j);
      nb += static_cast<long double>(b(c, j)) * b(c, j);
    }
    s += dot / std::sqrt(na * nb);
  }
  return static_cast<double>(s / a.rows());
}

// Every final state and every recorded update, pooled for the global sweep.
struct InvariantLog {
  std::size_t runs = 0;
  std::size_t updates = 0;
  double worst_simplex = 0.0;
  double worst_unit = 0.0;
  double worst_anchor_excess = -std::numeric_limits<double>::infinity();
  std::size_t tau_out_of_range = 0;
  std::size_t kl_over_cap = 0;

  void add(const RunResult& r, const EngineConfig& cfg, const Anchors& anchors) {
    ++runs;
    updates += r.updates.size();
    const HeadState& s = r.state;
    long double sum = 0;
    bool positive = true;
    for (double p : s.prior) {
      sum += p;
      positive = positive && p > 0.0;
    }
    worst_simplex = std::max(worst_simplex, positive ? static_cast<double>(std::abs(sum - 1.0L)) : 1.0);
    for (std::size_t c = 0; c < s.num_classes(); ++c) {
      long double n = 0;
      for (double v : s.prototypes.row(c)) n += static_cast<long double>(v) * v;
      worst_unit = std::max(worst_unit, static_cast<double>(std::abs(std::sqrt(n) - 1.0L)));
    }
    if (cfg.ablations.guards_off) return;
    for (std::size_t c = 0; c < s.num_classes(); ++c)
      worst_anchor_excess =
          std::max(worst_anchor_excess, distance(s.prototypes.row(c), anchors.mu.row(c)) - cfg.update.rho);
    for (const UpdateEvent& u : r.updates) {
      if (!(u.tau_pred >= cfg.temp.tau_min && u.tau_pred <= cfg.temp.tau_max)) ++tau_out_of_range;
      if (u.max_anchor_dist > cfg.update.rho + 1e-6)
        worst_anchor_excess = std::max(worst_anchor_excess, u.max_anchor_dist - cfg.update.rho);
      if (u.prior_kl > cfg.update.kappa + 1e-6) ++kl_over_cap;
    }
    if (!(s.tau_pred >= cfg.temp.tau_min && s.tau_pred <= cfg.temp.tau_max)) ++tau_out_of_range;
  }
};

InvariantLog g_inv;

void log_run(const RunResult& r, const EngineConfig& cfg, const Anchors& anchors) { g_inv.add(r, cfg, anchors); }

// 1. Streaming accumulators vs long double batch sums; Dirichlet vs formula.
Outcome criterion1() {
  std::mt19937_64 rng(101);
  const std::size_t C = 12, d = 48, n = 1000;
  const Anchors anchors = random_anchors(rng, C, d);
  EngineConfig ec;
  ec.update.alpha = 1.5;
  HeadState streamed = init_state(anchors, ec);
  HeadState per_sample = streamed;
  BatchBuffer block(C);
  BatchBuffer single(C);
  std::vector<Vec> zs, rs;
  for (std::size_t i = 0; i < n; ++i) {
    zs.push_back(random_unit(rng, d));
    rs.push_back(random_simplex(rng, C, 1e-4));
  }
  for (std::size_t i = 0; i < n; ++i) {
    block.embeddings.push_back(zs[i]);
    block.resp.push_back(rs[i]);
    if (block.size() == ec.update.batch_B || i + 1 == n) {
      fold_block(streamed, block, anchors, ec.update);
      block.clear_block();
    }
    accumulate(per_sample, single, anchors, ec.update, rs[i], zs[i]);
  }
  // Batch oracle.
  std::vector<long double> U(C * d), N(C), s(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    N[c] = ec.update.alpha;
    for (std::size_t j = 0; j < d; ++j) U[c * d + j] = ec.update.alpha * anchors.mu(c, j);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      N[c] += rs[i][c];
      s[c] += rs[i][c];
      for (std::size_t j = 0; j < d; ++j) U[c * d + j] += static_cast<long double>(rs[i][c]) * zs[i][j];
    }
  auto rel_err = [&](const HeadState& st, const BatchBuffer& b) {
    long double num = 0, den = 0;
    for (std::size_t k = 0; k < C * d; ++k) {
      num += (st.U.data()[k] - U[k]) * (st.U.data()[k] - U[k]);
      den += U[k] * U[k];
    }
    double e = static_cast<double>(std::sqrt(num / den));
    for (std::size_t c = 0; c < C; ++c) {
      e = std::max(e, static_cast<double>(std::abs(st.N[c] - N[c]) / N[c]));
      e = std::max(e, static_cast<double>(std::abs(b.soft_counts[c] - s[c]) / s[c]));
    }
    return e;
  };
  const double e_block = rel_err(streamed, block);
  const double e_single = rel_err(per_sample, single);

  // Dirichlet posterior against the hand formula on random inputs.
  double e_dir = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + trial % 30;
    const Anchors a = random_anchors(rng, K, 4);
    EngineConfig e2;
    e2.prior0 = random_simplex(rng, K, 1e-3);
    std::uniform_real_distribution<double> g(0.1, 50.0);
    e2.update.gamma = g(rng);
    HeadState st = init_state(a, e2);
    Vec counts(K);
    std::uniform_real_distribution<double> cnt(0.0, 500.0);
    for (double& v : counts) v = cnt(rng);
    prior_update(st, counts, e2.update, false);
    long double total = 0;
    for (double v : counts) total += v;
    for (std::size_t c = 0; c < K; ++c) {
      const long double want = (*e2.update.gamma * static_cast<long double>(e2.prior0[c]) + counts[c]) /
                               (*e2.update.gamma + total);
      e_dir = std::max(e_dir, static_cast<double>(std::abs(st.prior[c] - want)));
    }
  }
  Outcome o;
  o.pass = e_block <= 1e-5 && e_single <= 1e-5 && e_dir <= 1e-9;
  o.detail = fmt("block rel err %.2e, per-sample rel err %.2e, dirichlet abs err %.2e", e_block, e_single, e_dir);
  return o;
}

// 2. KL guard lands on the cap and lambda matches a 10^6-point grid.
Outcome criterion2() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> cdist(2, 4);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  std::normal_distribution<double> g(0.0, 1.5);
  constexpr std::size_t kGrid = 1000000;
  double worst_kl = 0.0;
  double worst_lambda = 0.0;
  int triples = 0;
  while (triples < 200) {
    const std::size_t C = cdist(rng);
    Vec pi(C), pi0(C);
    double zp = 0, zq = 0;
    for (std::size_t c = 0; c < C; ++c) {
      zp += (pi[c] = std::exp(g(rng)));
      zq += (pi0[c] = std::exp(g(rng)));
    }
    for (double& v : pi) v /= zp;
    for (double& v : pi0) v /= zq;
    const double full = static_cast<double>(ref_kl(pi, pi0));
    if (full < 1e-3) continue;
    const double kappa = frac(rng) * full;
    ++triples;
    const GuardResult r = kl_guard(pi, pi0, kappa);
    const double got = static_cast<double>(ref_kl(r.pi, pi0));
    double miss = 0.0;
    if (got > kappa) miss = got - kappa;
    if (got < kappa - 1e-6) miss = kappa - got;
    worst_kl = std::max(worst_kl, miss);
    // Largest grid lambda whose mixture stays within the cap.
    std::size_t best = 0;
    Vec m(C);
    for (std::size_t k = 0; k <= kGrid; ++k) {
      const double lambda = static_cast<double>(k) / kGrid;
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double mc = lambda * pi[c] + (1.0 - lambda) * pi0[c];
        s += mc * std::log(mc / pi0[c]);
      }
      if (s <= kappa) best = k;
    }
    worst_lambda = std::max(worst_lambda, std::abs(r.lambda - static_cast<double>(best) / kGrid));
  }
  Outcome o;
  o.pass = worst_kl == 0.0 && worst_lambda <= 1e-5;
  o.detail = fmt("200 triples, worst KL outside [k-1e-6, k] %.2e, worst |lambda - grid| %.2e", worst_kl, worst_lambda);
  return o;
}

// 3. Temperature search against a 10^4-point grid. Half of the batches are
// random; the other half are small skewed-prior batches kept only when the
// objective has an interior minimum, which is where the search can go wrong.
Outcome criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> bdist(8, 64), cdist(3, 20), small_b(2, 6);
  std::uniform_real_distribution<double> wide(-0.2, 0.6), narrow(0.0, 0.3);
  std::normal_distribution<double> g(0.0, 1.5);
  const double scales[] = {1.0, 2.0, 5.0, 10.0, 100.0};
  constexpr std::size_t kGrid = 10000;
  const TempConfig tc;

  struct Batch {
    Matrix cos;
    Vec log_pi;
    double scale;
  };
  // Oracle objective, written out with plain loops.
  auto L = [](const Batch& b, double tau) {
    double total = 0.0;
    std::vector<double> l(b.cos.cols());
    for (std::size_t i = 0; i < b.cos.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < l.size(); ++c) mx = std::max(mx, l[c] = tau * b.scale * b.cos(i, c) + b.log_pi[c]);
      double z = 0.0;
      for (double& v : l) z += (v = std::exp(v - mx));
      for (double v : l)
        if (v > 0.0) total -= (v / z) * std::log(v / z);
    }
    return total;
  };
  auto grid_argmin = [&](const Batch& b, std::size_t n) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = L(b, tc.tau_min + (tc.tau_max - tc.tau_min) * static_cast<double>(k) / (n - 1));
      if (k == 0 || v < best) {
        best = v;
        arg = k;
      }
    }
    return std::make_pair(arg, tc.tau_min + (tc.tau_max - tc.tau_min) * static_cast<double>(arg) / (n - 1));
  };
  auto skewed_log_prior = [&](std::size_t C) {
    Vec p(C);
    double z = 0.0;
    for (double& v : p) z += (v = std::exp(g(rng)));
    Vec lp(C);
    for (std::size_t c = 0; c < C; ++c) lp[c] = std::log(p[c] / z);
    return lp;
  };

  double worst_tau = 0.0;
  double worst_endpoint = -std::numeric_limits<double>::infinity();
  int interior = 0, nonuniform = 0;
  for (int n = 0; n < 100; ++n) {
    Batch b;
    if (n < 50) {
      const std::size_t B = bdist(rng), C = cdist(rng);
      b.cos = Matrix(B, C);
      for (double& v : b.cos.data()) v = wide(rng);
      b.scale = scales[n % 5];
      b.log_pi = n % 2 ? skewed_log_prior(C) : Vec(C, -std::log(static_cast<double>(C)));
    } else {
      for (int attempt = 0; attempt < 5000; ++attempt) {
        b.cos = Matrix(small_b(rng), 3);
        for (double& v : b.cos.data()) v = narrow(rng);
        b.scale = 5.0;
        b.log_pi = skewed_log_prior(3);
        const std::size_t k = grid_argmin(b, 200).first;
        if (k > 0 && k < 199) break;
      }
    }
    nonuniform += b.log_pi[0] != b.log_pi.back() ? 1 : 0;
    const auto [arg, tau_grid] = grid_argmin(b, kGrid);
    if (arg != 0 && arg != kGrid - 1) ++interior;
    const double tau_hat = minimize_tau(b.cos, b.log_pi, b.scale, tc);
    worst_tau = std::max(worst_tau, std::abs(tau_hat - tau_grid));
    const double ends = std::min(L(b, tc.tau_min), L(b, tc.tau_max));
    worst_endpoint = std::max(worst_endpoint, L(b, tau_hat) - ends);
  }
  Outcome o;
  o.pass = worst_tau <= 1e-3 && worst_endpoint <= 1e-9 && interior >= 25;
  o.detail = fmt("100 batches (%d non-uniform prior, %d interior minima), worst |tau - grid| %.2e, "
                 "worst L(tau) - endpoint min %.2e",
                 nonuniform, interior, worst_tau, worst_endpoint);
  return o;
}

// 4. Hand fixtures, then the engine's streaming ECE vs an offline pass over its trace.
Outcome criterion4(const Fixture& f) {
  Outcome o;
  MetricsAccumulator fx;
  const Vec high{0.9, 0.05, 0.03, 0.02};
  const Vec low{0.3, 0.25, 0.25, 0.2};
  for (int i = 0; i < 10; ++i) fx.record_prediction(high, 0, i < 6 ? 0 : 1);
  for (int i = 0; i < 10; ++i) fx.record_prediction(low, 0, i < 5 ? 0 : 2);
  const double ece_fixture = fx.ece();
  MetricsAccumulator uni;
  uni.record_prediction(Vec(4, 0.25), 1, 2);
  const double nll = uni.nll_sum(), brier = uni.brier_sum();
  const bool hand = std::abs(ece_fixture - 0.25) <= 1e-15 && std::abs(nll - std::log(4.0)) <= 1e-15 &&
                    std::abs(brier - 0.75) <= 1e-15;

  std::ostringstream trace;
  const RunResult r = run(f, EngineConfig{}, &trace);
  std::istringstream in(trace.str());
  std::string line;
  std::vector<double> conf_sum(15, 0.0);
  std::vector<std::uint64_t> count(15, 0), correct(15, 0);
  std::uint64_t n = 0, hits = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("label")) continue;
    const double conf = j.at("confidence").get<double>();
    const bool ok = j.at("pred").get<std::uint64_t>() == j.at("label").get<std::uint64_t>();
    std::size_t b = static_cast<std::size_t>(std::floor(15.0 * conf));
    if (b > 14) b = 14;
    ++count[b];
    conf_sum[b] += conf;
    correct[b] += ok ? 1 : 0;
    ++n;
    hits += ok ? 1 : 0;
  }
  double ece = 0.0;
  for (std::size_t b = 0; b < 15; ++b)
    if (count[b] > 0) ece += std::abs(static_cast<double>(correct[b]) - conf_sum[b]);
  ece /= static_cast<double>(n);
  bool bins_equal = true;
  for (std::size_t b = 0; b < 15; ++b)
    bins_equal = bins_equal && r.report.bins[b].count == count[b] && r.report.bins[b].correct == correct[b] &&
                 r.report.bins[b].confidence_sum == conf_sum[b];
  const bool streaming = bins_equal && ece == r.report.ece && n == r.report.n_eval && hits == r.report.n_correct;
  o.pass = hand && streaming;
  o.detail = fmt("fixture ECE %.17g, uniform NLL %.17g Brier %.17g; streaming ECE %.17g vs offline %.17g (%s)",
                 ece_fixture, nll, brier, r.report.ece, ece, streaming ? "bit-identical" : "DIFFERENT");
  return o;
}

struct SeedRuns {
  RunResult full, zero, gate_off;
  double cos_adapted = 0, cos_anchor = 0;
  double kl_final = 0, kl_init = 0;
};

// 5-7 share the five seed streams.
std::vector<SeedRuns> seed_runs(const std::vector<Fixture>& fx) {
  std::vector<SeedRuns> out;
  for (const Fixture& f : fx) {
    SeedRuns s;
    const EngineConfig full;
    s.full = run(f, full);
    log_run(s.full, full, f.anchors);
    s.zero = run_zs(f);
    log_run(s.zero, zero_shot_config(full), f.anchors);
    Ablations a;
    a.gate_off = true;
    s.gate_off = run(f, with(a));
    log_run(s.gate_off, with(a), f.anchors);
    s.cos_adapted = mean_cos(s.full.state.prototypes, f.truth[0].prototypes);
    s.cos_anchor = mean_cos(f.anchors.mu, f.truth[0].prototypes);
    s.kl_final = static_cast<double>(ref_kl(s.full.state.prior, f.truth[0].prior));
    s.kl_init = static_cast<double>(ref_kl(s.full.state.prior0, f.truth[0].prior));
    out.push_back(std::move(s));
  }
  return out;
}

Outcome criterion5(const std::vector<SeedRuns>& runs) {
  Outcome o;
  std::string d;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const SeedRuns& s = runs[i];
    const double gain = s.full.report.top1 - s.zero.report.top1;
    const bool ok = gain >= 0.02 && s.cos_adapted > s.cos_anchor;
    o.pass = o.pass && ok;
    d += fmt("%sseed %zu: top1 %.4f vs %.4f (%+.2f pts), cos %.4f vs %.4f", i ? "; " : "", i + 1,
             s.full.report.top1, s.zero.report.top1, 100 * gain, s.cos_adapted, s.cos_anchor);
  }
  o.detail = d;
  return o;
}

Outcome criterion6(const std::vector<SeedRuns>& runs) {
  Outcome o;
  std::string d;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const SeedRuns& s = runs[i];
    o.pass = o.pass && s.kl_final < s.kl_init;
    d += fmt("%sseed %zu: %.4f < %.4f", i ? "; " : "", i + 1, s.kl_final, s.kl_init);
  }
  o.detail = "KL(pi_final||pi*) vs KL(pi0||pi*): " + d;
  return o;
}

Outcome criterion7(const std::vector<SeedRuns>& runs) {
  int better_than_zs = 0, gate_worse = 0;
  std::string d;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const SeedRuns& s = runs[i];
    better_than_zs += s.full.report.ece <= s.zero.report.ece ? 1 : 0;
    gate_worse += s.gate_off.report.ece >= s.full.report.ece ? 1 : 0;
    d += fmt("%sseed %zu: full %.4f zero-shot %.4f gate_off %.4f", i ? "; " : "", i + 1, s.full.report.ece,
             s.zero.report.ece, s.gate_off.report.ece);
  }
  Outcome o;
  o.pass = better_than_zs >= 4 && gate_worse >= 4;
  o.detail = fmt("full <= zero-shot on %d/5, gate_off >= full on %d/5 (ECE ", better_than_zs, gate_worse) + d + ")";
  return o;
}

// 8. Six-setting grid on the seed-7 member of the criterion 5 stream family.
Outcome criterion8() {
  const Fixture f = make_fixture(shifted(7));
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const auto& [name, ab] : ablation_grid()) {
    const EngineConfig cfg = with(ab);
    const RunResult r = run(f, cfg);
    log_run(r, cfg, f.anchors);
    rows.push_back({name, r.report});
  }
  const auto& full = rows.front().second;
  const auto& guards = rows.back().second;
  bool ece_min = true, kl_max = true;
  std::string d;
  for (const auto& [name, rep] : rows) {
    ece_min = ece_min && full.ece <= rep.ece;
    kl_max = kl_max && guards.drift.max_prior_kl >= rep.drift.max_prior_kl;
    d += fmt("%s%s ece %.4f maxKL %.4f", d.empty() ? "" : "; ", name.c_str(), rep.ece, rep.drift.max_prior_kl);
  }
  Outcome o;
  o.pass = ece_min && kl_max;
  o.detail = fmt("full ECE minimal: %s, guards_off max KL maximal: %s (", ece_min ? "yes" : "no",
                 kl_max ? "yes" : "no") +
             d + ")";
  return o;
}

// 9. 200K samples with a domain switch at 100K.
Outcome criterion9() {
  SynthConfig sc = shifted(9, 200000);
  sc.switch_at = 100000;
  SyntheticStream gen(sc);
  const Anchors anchors = gen.anchors();
  std::vector<SampleRecord> recs = ultta::testing::collect(gen);

  const EngineConfig guarded;
  Engine e(anchors, guarded);
  e.set_record_updates(true);
  for (const auto& r : recs) e.step(r);
  const RunResult g = e.result();
  log_run(g, guarded, anchors);
  constexpr std::size_t kWidth = 10000;
  const auto windows = e.metrics().window_accuracies(kWidth);
  // Windows starting at least 20K samples after the switch count as settled.
  const std::size_t first_settled = (100000 + 20000) / kWidth;
  double best = 0.0;
  for (std::size_t w = first_settled; w < windows.size(); ++w) best = std::max(best, windows[w]);
  const double tail = windows.back();
  const DriftIndicators& gd = g.report.drift;
  const bool finite = std::isfinite(gd.max_proto_step) && std::isfinite(gd.max_prior_kl);
  const bool guarded_ok = finite && gd.max_prior_kl <= guarded.update.kappa &&
                          gd.max_proto_step <= 2 * guarded.update.rho && tail >= best - 0.02;

  Ablations a;
  a.guards_off = true;
  const EngineConfig off = with(a);
  const RunResult u = run_stream(anchors, VectorSource(recs), off, nullptr, true);
  log_run(u, off, anchors);
  const DriftIndicators& ud = u.report.drift;
  const bool exceeded = !std::isfinite(ud.max_prior_kl) || ud.max_prior_kl > off.update.kappa ||
                        !std::isfinite(ud.max_proto_step) || ud.max_proto_step > 2 * off.update.rho ||
                        ud.max_proto_anchor_dist > off.update.rho;
  Outcome o;
  o.pass = guarded_ok && exceeded;
  o.detail = fmt("guarded: max KL %.4f (cap %.2f), max step %.4f (bound %.2f), tail acc %.4f vs best settled %.4f; "
                 "guards_off: max KL %.4f, max step %.4f, max anchor dist %.4f",
                 gd.max_prior_kl, guarded.update.kappa, gd.max_proto_step, 2 * guarded.update.rho, tail, best,
                 ud.max_prior_kl, ud.max_proto_step, ud.max_proto_anchor_dist);
  return o;
}

// 10. Wall time of adaptive vs zero-shot at C=345, d=512 over 50K samples;
// adaptation memory beyond the C x d head vs the anchor matrix.
Outcome criterion10() {
  SynthConfig sc = shifted(10, 50000);
  sc.C = 345;
  sc.d = 512;
  const Fixture f = make_fixture(sc);
  auto timed = [&](const EngineConfig& cfg) {
    const auto t0 = Clock::now();
    RunResult r = run_stream(f.anchors, VectorSource(f.records), cfg);
    return std::make_pair(seconds_since(t0), std::move(r));
  };
  const EngineConfig full;
  const EngineConfig zs = zero_shot_config(full);
  // Interleaved repeats; the fastest of each filters scheduler noise.
  double t_full = std::numeric_limits<double>::infinity(), t_zs = t_full;
  RunResult adaptive;
  for (int rep = 0; rep < 3; ++rep) {
    auto [tz, rz] = timed(zs);
    t_zs = std::min(t_zs, tz);
    auto [tf, rf] = timed(full);
    t_full = std::min(t_full, tf);
    if (rep == 0) {
      log_run(rf, full, f.anchors);
      adaptive = std::move(rf);
    }
  }
  const double anchor_bytes = static_cast<double>(sizeof(double) * sc.C * sc.d);
  const double overhead = static_cast<double>(adaptive.peak_footprint.adaptation_overhead());
  const double ratio_t = t_full / t_zs;
  const double ratio_m = overhead / anchor_bytes;
  Outcome o;
  o.pass = ratio_t <= 1.25 && ratio_m <= 2.0;
  o.detail = fmt("adaptive %.3fs vs zero-shot %.3fs (x%.3f, %llu updates); adaptation state %.0f B = %.3f x anchors",
                 t_full, t_zs, ratio_t, static_cast<unsigned long long>(adaptive.report.n_updates), overhead,
                 ratio_m);
  return o;
}

// 11. Pooled invariants over every run above plus byte-identical repeats.
Outcome criterion11(const Fixture& f) {
  auto once = [&] {
    std::ostringstream trace;
    const RunResult r = run(f, EngineConfig{}, &trace);
    return to_json(r.report).dump() + "\n" + trace.str();
  };
  const bool same_run = once() == once();
  SyntheticStream a(f.cfg), b(f.cfg);
  bool same_stream = true;
  while (true) {
    auto ra = a.next();
    auto rb = b.next();
    if (!ra || !rb) {
      same_stream = same_stream && !ra && !rb;
      break;
    }
    same_stream = same_stream && ra->label == rb->label && ra->views == rb->views;
  }
  const bool inv = g_inv.worst_simplex <= 1e-9 && g_inv.worst_unit <= 1e-6 && g_inv.tau_out_of_range == 0 &&
                   g_inv.worst_anchor_excess <= 1e-6 && g_inv.kl_over_cap == 0;
  Outcome o;
  o.pass = inv && same_run && same_stream;
  o.detail = fmt("%zu runs / %zu updates: simplex err %.1e, unit err %.1e, tau out of range %zu, anchor excess "
                 "%.1e, KL over cap %zu; repeated run identical: %s, generator identical: %s",
                 g_inv.runs, g_inv.updates, g_inv.worst_simplex, g_inv.worst_unit, g_inv.tau_out_of_range,
                 g_inv.worst_anchor_excess, g_inv.kl_over_cap, same_run ? "yes" : "no", same_stream ? "yes" : "no");
  return o;
}

}  // namespace

// Optional arguments select criteria by number; the default runs all of them.
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  int failures = 0, ran = 0;
  // `spent` is time already used for the criterion outside `fn`.
  auto report = [&](int id, double limit_s, const std::function<Outcome()>& fn, double spent = 0.0) {
    if (!selected(id)) return;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = seconds_since(t0) + spent;
    if (limit_s > 0 && secs >= limit_s) {
      o.pass = false;
      o.detail += fmt(" [runtime %.2fs over the %.0fs limit]", secs, limit_s);
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", id, secs, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, 1.0, criterion1);
  report(2, 10.0, criterion2);
  report(3, 30.0, criterion3);

  // The five seed streams and their runs feed criteria 4 to 7 and 11; their
  // cost counts against criterion 5's budget.
  std::vector<Fixture> seeds;
  std::vector<SeedRuns> runs;
  double shared = 0.0;
  if (selected(4) || selected(5) || selected(6) || selected(7) || selected(11)) {
    const auto t0 = Clock::now();
    for (std::uint64_t s = 1; s <= 5; ++s) seeds.push_back(make_fixture(shifted(s)));
    if (selected(5) || selected(6) || selected(7)) runs = seed_runs(seeds);
    shared = seconds_since(t0);
  }
  report(4, 0.0, [&] { return criterion4(seeds[0]); });
  report(5, 60.0, [&] { return criterion5(runs); }, shared);
  report(6, 0.0, [&] { return criterion6(runs); });
  report(7, 0.0, [&] { return criterion7(runs); });
  report(8, 0.0, criterion8);
  report(9, 300.0, criterion9);
  report(10, 0.0, criterion10);
  report(11, 0.0, [&] { return criterion11(seeds[0]); });
  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
