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

// ultta: command-line front end.
//
//   ultta synth   generate a synthetic shifted stream (+ ground-truth sidecar)
//   ultta run     adapt over a stream and write a metrics report
//   ultta ablate  run the ablation grid on one stream
//   ultta report  merge reports into a comparison table
//   ultta inspect print the header of a stream, sidecar or state file
//
// Exit codes: 0 success, 1 usage/config, 2 data/format/io, 3 internal.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ultta/ultta.hpp"

namespace {

using ultta::ConfigError;
using ultta::EngineConfig;
using ultta::RunOptions;
using ultta::SynthConfig;
using json = nlohmann::json;

// Flags are collected as raw strings keyed by config field name and then
// applied through the same path as config files, so precedence is simply
// defaults < file < flags.
struct FlagBag {
  std::map<std::string, std::string> raw;

  void add(CLI::App* app, const std::string& key, const std::string& names, const std::string& help) {
    app->add_option(names, raw[key], help);
  }
  void add_switch(CLI::App* app, const std::string& key, const std::string& names, const std::string& help) {
    app->add_flag_callback(names, [this, key] { raw[key] = "true"; }, help);
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [key, value] : raw) {
      if (value.empty()) continue;
      try {
        j[key] = json::parse(value);
      } catch (const json::exception&) {
        j[key] = value;  // bare strings such as cal_mode values
      }
    }
    return j;
  }
};

void add_engine_flags(CLI::App* app, FlagBag& bag) {
  bag.add(app, "window_len", "--window_len", "gate window length W");
  bag.add(app, "quantile", "--quantile,-q", "confident fraction q in (0,1)");
  bag.add(app, "warmup", "--warmup", "samples before the gate may accept");
  bag.add(app, "alpha", "--alpha", "prototype prior precision");
  bag.add(app, "gamma", "--gamma", "Dirichlet mass (default C)");
  bag.add(app, "eta", "--eta", "prototype step size");
  bag.add(app, "rho", "--rho", "chordal clip radius");
  bag.add(app, "kappa", "--kappa", "prior KL cap (nats)");
  bag.add(app, "eps", "--eps", "MAP denominator guard");
  bag.add(app, "batch_B", "--batch_B,-B", "accepted samples per update");
  bag.add(app, "decay", "--decay", "anchored forgetting factor in (0,1]");
  bag.add(app, "tau_min", "--tau_min", "lower temperature bound");
  bag.add(app, "tau_max", "--tau_max", "upper temperature bound");
  bag.add(app, "beta", "--beta", "temperature EMA weight");
  bag.add(app, "search_tol", "--search_tol", "temperature search tolerance");
  bag.add(app, "cal_mode", "--cal_mode", "fixed | mirror_pred");
  bag.add(app, "tau_pred_init", "--tau_pred_init", "initial prediction temperature");
  bag.add(app, "tau_cal_init", "--tau_cal_init", "initial calibration temperature");
  bag.add(app, "logit_scale", "--logit_scale", "fixed cosine multiplier (CLIP: 100)");
  bag.add_switch(app, "metrics_use_pred", "--metrics_use_pred", "score calibration on tau_pred probabilities");
}

void load_engine_config(const std::string& config_path, const FlagBag& bag, EngineConfig& cfg,
                        RunOptions& opts, const std::set<std::string>& ignore = {}) {
  if (!config_path.empty()) ultta::apply_engine_json(cfg, opts, ultta::load_json_file(config_path), ignore);
  ultta::apply_engine_json(cfg, opts, bag.to_json());
  cfg.validate();
}

void apply_ablation_list(const std::string& list, ultta::Ablations& a) {
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "gate_off") a.gate_off = true;
    else if (item == "freeze_prototypes") a.freeze_prototypes = true;
    else if (item == "freeze_prior") a.freeze_prior = true;
    else if (item == "single_tau") a.single_tau = true;
    else if (item == "shared_tau") a.shared_tau = true;
    else if (item == "guards_off") a.guards_off = true;
    else if (item == "full") {
    } else throw ConfigError("unknown ablation '" + item + "'");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ultta::IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ultta::IoError("write failure on '" + path + "'");
}

// Runs one configuration over a ULS1 file, tagging data errors with the
// record index that caused them.
ultta::RunResult run_file(const std::string& path, const EngineConfig& cfg, std::ostream* trace,
                          const std::string& load_state = {}, const std::string& save_state = {}) {
  ultta::StreamReader reader(path);
  std::unique_ptr<ultta::Engine> engine;
  if (load_state.empty()) {
    engine = std::make_unique<ultta::Engine>(reader.anchors(), cfg);
  } else {
    engine = std::make_unique<ultta::Engine>(ultta::Engine::load(reader.anchors(), cfg, load_state));
  }
  engine->set_trace(trace);
  while (auto rec = reader.next()) {
    try {
      engine->step(*rec);
    } catch (const ultta::DataError& e) {
      throw ultta::DataError(path + ": record " + std::to_string(reader.records_read() - 1) + ": " + e.what());
    }
  }
  if (!save_state.empty()) engine->save(save_state);
  return engine->result();
}

std::string format_table(const std::vector<ultta::MetricsReport>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %8s %8s %8s %8s %10s %10s %8s\n", "setting", "top1", "ece", "nll",
                "brier", "max_kl", "max_step", "acc_drop");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %8.4f %8.4f %8.4f %8.4f %10.5f %10.5f %8.4f\n", r.setting.c_str(),
                  r.top1, r.ece, r.nll_mean, r.brier_mean, r.drift.max_prior_kl, r.drift.max_proto_step, r.acc_drop);
    os << line;
  }
  return os.str();
}

int cmd_synth(const std::string& config_path, const FlagBag& bag, const std::string& out,
              std::string truth) {
  SynthConfig cfg;
  if (!config_path.empty()) ultta::apply_synth_json(cfg, ultta::load_json_file(config_path), ultta::engine_keys());
  ultta::apply_synth_json(cfg, bag.to_json());
  cfg.validate();
  if (truth.empty()) truth = out + ".truth";
  ultta::SyntheticStream gen(cfg);
  ultta::StreamWriter writer(out, gen.anchors(), cfg.K, cfg.N, true);
  while (auto rec = gen.next()) writer.write(*rec);
  writer.close();
  ultta::write_truth(truth, gen);
  const auto& prior = gen.segments().front().prior;
  std::printf("wrote %s (C=%u d=%u K=%u N=%llu shift=%.3f noise=%.3f) truth=%s\n", out.c_str(), cfg.C, cfg.d, cfg.K,
              static_cast<unsigned long long>(cfg.N), cfg.shift_severity, cfg.noise_sigma, truth.c_str());
  std::printf("true prior entropy %.4f nats (uniform %.4f)\n", ultta::entropy(prior), std::log(static_cast<double>(cfg.C)));
  return 0;
}

int cmd_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ultta::IoError("cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  in.close();
  const std::string m(magic, 4);
  if (m == "ULS1") {
    ultta::StreamReader r(path);
    const auto& h = r.header();
    std::printf("ULS1 stream v%u: C=%u d=%u K=%u N=%llu labels=%s\n", h.version, h.num_classes, h.dim, h.views,
                static_cast<unsigned long long>(h.count), h.has_labels() ? "yes" : "no");
    std::uint64_t labeled = 0;
    while (auto rec = r.next()) labeled += rec->label ? 1 : 0;
    std::printf("records validated: %llu (labeled %llu)\n", static_cast<unsigned long long>(r.records_read()),
                static_cast<unsigned long long>(labeled));
  } else if (m == "ULG1") {
    const auto gt = ultta::read_truth(path);
    std::printf("ULG1 ground truth: C=%u d=%u N=%llu K=%u seed=%llu shift=%.3f segments=%zu\n", gt.config.C,
                gt.config.d, static_cast<unsigned long long>(gt.config.N), gt.config.K,
                static_cast<unsigned long long>(gt.config.seed), gt.config.shift_severity, gt.segments.size());
  } else if (m == "ULST") {
    std::ifstream s(path, std::ios::binary);
    ultta::le::Reader rd(s);
    if (!rd.read(16 + 48)) throw ultta::FormatError(path + ": truncated state header");
    const unsigned char* p = rd.data();
    std::printf("ULST state v%u: C=%u d=%u logit_scale=%g tau_pred=%.5f tau_cal=%.5f accepted=%llu updates=%llu\n",
                ultta::le::get_u32(p + 4), ultta::le::get_u32(p + 8), ultta::le::get_u32(p + 12),
                ultta::le::get_f64(p + 16), ultta::le::get_f64(p + 24), ultta::le::get_f64(p + 32),
                static_cast<unsigned long long>(ultta::le::get_u64(p + 40)),
                static_cast<unsigned long long>(ultta::le::get_u64(p + 48)));
  } else {
    throw ultta::FormatError(path + ": unrecognized magic");
  }
  return 0;
}

std::vector<ultta::MetricsReport> load_reports(const std::string& path) {
  const json j = ultta::load_json_file(path);
  std::vector<ultta::MetricsReport> out;
  try {
    if (j.is_array()) {
      for (const auto& item : j) out.push_back(ultta::report_from_json(item));
    } else {
      out.push_back(ultta::report_from_json(j));
    }
  } catch (const ultta::FormatError& e) {
    throw ultta::FormatError(path + ": " + e.what());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Logit-level streaming test-time adaptation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic shifted stream");
  FlagBag synth_flags;
  std::string synth_config;
  std::string synth_out;
  std::string synth_truth;
  synth->add_option("--config", synth_config, "flat JSON config");
  synth->add_option("-o,--output", synth_out, "output ULS1 path")->required();
  synth->add_option("--truth", synth_truth, "ground-truth sidecar path (default <output>.truth)");
  synth_flags.add(synth, "C", "--C", "classes");
  synth_flags.add(synth, "d", "--d", "embedding dimension");
  synth_flags.add(synth, "N", "--N", "samples");
  synth_flags.add(synth, "K", "--K", "views per sample");
  synth_flags.add(synth, "seed", "--seed", "64-bit seed");
  synth_flags.add(synth, "shift_severity", "--shift,--shift_severity", "anchor displacement in [0,1]");
  synth_flags.add(synth, "noise_sigma", "--noise,--noise_sigma", "feature noise scale");
  synth_flags.add(synth, "view_sigma", "--view_sigma", "augmentation noise scale");
  synth_flags.add(synth, "true_prior_concentration", "--concentration,--true_prior_concentration",
                  "Dirichlet parameter of the true prior (inf = uniform)");
  synth_flags.add(synth, "switch_at", "--switch_at", "index of the domain switch");

  // run
  auto* run = app.add_subcommand("run", "adapt over a stream and write a report");
  FlagBag run_flags;
  std::string run_stream_path, run_config, run_out, run_trace, run_ablate, run_baseline, load_state, save_state;
  run->add_option("stream", run_stream_path, "ULS1 stream")->required();
  run->add_option("--config", run_config, "flat JSON config");
  run->add_option("-o,--output", run_out, "report path (default: stdout)");
  run->add_option("--trace", run_trace, "per-sample trace (JSON lines)");
  run->add_option("--ablate", run_ablate, "comma-separated ablations");
  run->add_option("--baseline", run_baseline, "zero-shot: frozen head only")->check(CLI::IsMember({"zero-shot"}));
  run->add_option("--load-state", load_state, "resume from a saved state");
  run->add_option("--save-state", save_state, "persist the final state");
  bool print_config = false;
  run->add_flag("--print-config", print_config, "print the effective config and exit");
  add_engine_flags(run, run_flags);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the ablation grid on one stream");
  FlagBag ablate_flags;
  std::string ablate_stream, ablate_config, ablate_out;
  ablate->add_option("stream", ablate_stream, "ULS1 stream")->required();
  ablate->add_option("--config", ablate_config, "flat JSON config");
  ablate->add_option("-o,--output", ablate_out, "write all reports as a JSON array");
  add_engine_flags(ablate, ablate_flags);

  // report
  auto* report = app.add_subcommand("report", "merge reports into a comparison table");
  std::vector<std::string> report_files;
  bool reliability = false;
  std::string report_out;
  report->add_option("reports", report_files, "report JSON files")->required();
  report->add_flag("--reliability", reliability, "print reliability-diagram columns");
  report->add_option("-o,--output", report_out, "also write the output here");
  bool report_json = false;
  report->add_flag("--json", report_json, "emit the merged reports as a JSON array");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "print a file header and validate it");
  std::string inspect_path;
  inspect->add_option("file", inspect_path, "ULS1, ULG1 or ULST file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(synth_config, synth_flags, synth_out, synth_truth);

    if (*run) {
      EngineConfig cfg;
      RunOptions opts;
      load_engine_config(run_config, run_flags, cfg, opts, ultta::synth_keys());
      apply_ablation_list(run_ablate, cfg.ablations);
      if (!run_baseline.empty()) cfg = ultta::zero_shot_config(cfg);
      if (print_config) {
        std::cout << ultta::engine_config_json(cfg, opts).dump(2) << "\n";
        return 0;
      }
      if (save_state.empty()) save_state = opts.persist_path;
      std::string trace_path = run_trace;
      if (trace_path.empty() && opts.trace) {
        if (run_out.empty()) throw ConfigError("trace = true needs --trace PATH or --output");
        trace_path = run_out + ".trace.jsonl";
      }
      std::unique_ptr<std::ofstream> trace;
      if (!trace_path.empty()) {
        trace = std::make_unique<std::ofstream>(trace_path, std::ios::trunc);
        if (!*trace) throw ultta::IoError("cannot open '" + trace_path + "' for writing");
      }
      auto result = run_file(run_stream_path, cfg, trace.get(), load_state, save_state);
      if (!run_baseline.empty()) result.report.setting = "zero_shot";
      const std::string text = ultta::to_json(result.report).dump(2) + "\n";
      if (run_out.empty()) {
        std::cout << text;
      } else {
        write_text(run_out, text);
        std::cout << format_table({result.report});
      }
      return 0;
    }

    if (*ablate) {
      EngineConfig base;
      RunOptions opts;
      load_engine_config(ablate_config, ablate_flags, base, opts, ultta::synth_keys());
      base.ablations = {};
      std::vector<ultta::Ablations> grid(6);
      grid[1].gate_off = true;
      grid[2].freeze_prototypes = true;
      grid[3].freeze_prior = true;
      grid[4].single_tau = true;
      grid[5].guards_off = true;
      std::vector<ultta::MetricsReport> rows;
      nlohmann::ordered_json all = nlohmann::ordered_json::array();
      for (const auto& a : grid) {
        EngineConfig cfg = base;
        cfg.ablations = a;
        rows.push_back(run_file(ablate_stream, cfg, nullptr).report);
        all.push_back(ultta::to_json(rows.back()));
      }
      std::cout << format_table(rows);
      if (!ablate_out.empty()) write_text(ablate_out, all.dump(2) + "\n");
      return 0;
    }

    if (*report) {
      std::vector<ultta::MetricsReport> rows;
      for (const auto& f : report_files)
        for (auto& r : load_reports(f)) rows.push_back(std::move(r));
      if (report_json) {
        nlohmann::ordered_json all = nlohmann::ordered_json::array();
        for (const auto& r : rows) all.push_back(ultta::to_json(r));
        const std::string text = all.dump(2) + "\n";
        std::cout << text;
        if (!report_out.empty()) write_text(report_out, text);
        return 0;
      }
      std::string text = format_table(rows);
      if (reliability) {
        std::ostringstream os;
        char line[160];
        for (const auto& r : rows) {
          os << "\nreliability: " << r.setting << "\n";
          std::snprintf(line, sizeof line, "%6s %6s %8s %10s %10s\n", "lo", "hi", "count", "confidence", "accuracy");
          os << line;
          std::uint64_t total = 0;
          for (std::size_t b = 0; b < ultta::kEceBins; ++b) {
            const auto& bin = r.bins[b];
            total += bin.count;
            const double n = static_cast<double>(bin.count);
            std::snprintf(line, sizeof line, "%6.3f %6.3f %8llu %10.5f %10.5f\n", static_cast<double>(b) / 15.0,
                          static_cast<double>(b + 1) / 15.0, static_cast<unsigned long long>(bin.count),
                          bin.count ? bin.confidence_sum / n : 0.0, bin.count ? static_cast<double>(bin.correct) / n : 0.0);
            os << line;
          }
          os << "total " << total << " n_eval " << r.n_eval << "\n";
        }
        text += os.str();
      }
      std::cout << text;
      if (!report_out.empty()) write_text(report_out, text);
      return 0;
    }

    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const ultta::Error& e) {
    std::cerr << "ultta: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "ultta: internal error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
