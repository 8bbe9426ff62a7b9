#pragma once

// slt-lab command-line front end: run, llc, detect, report, list.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slt_lab/error.hpp"
#include "slt_lab/experiments.hpp"
#include "slt_lab/llc.hpp"
#include "slt_lab/registry.hpp"
#include "slt_lab/report.hpp"
#include "slt_lab/transitions.hpp"

namespace slt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;

inline fs::path resolve_registry_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SLT_LAB_REGISTRY"); env && *env) return env;
  return "slt-registry";
}

namespace detail {

struct CliOptions {
  std::string registry_root;
  std::optional<std::uint64_t> seed;
  bool json_output = false;
};

inline void report_error(const CliOptions& o, std::ostream& err, const std::string& code, const std::string& message) {
  if (o.json_output) {
    err << json{{"error", code}, {"message", message}}.dump() << "\n";
  } else {
    err << "error: " << message << "\n";
  }
}

inline int cmd_run(const CliOptions& o, const std::string& config_path, const std::optional<std::string>& scale,
                   const std::optional<std::string>& detector, const std::optional<std::size_t>& workers,
                   std::ostream& out, std::ostream& err) {
  json doc;
  try {
    doc = json::parse(read_file(config_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, config_path + ": " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  std::optional<Scale> scale_override;
  if (scale) scale_override = scale_from_string(*scale);
  ExperimentConfig cfg = config_from_json(doc, scale_override);
  if (detector) cfg.detectors = {detector_from_string(*detector)};
  if (workers) cfg.workers = *workers;
  if (o.seed) cfg.seeds = {*o.seed};
  cfg.validate();

  const Registry registry(resolve_registry_root(o.registry_root));
  const ExperimentResult result = run_experiment(cfg, registry, o.json_output ? nullptr : &err);
  const std::size_t failed = result.failures();
  if (o.json_output) {
    json j = {{"experiment_id", std::string(to_string(cfg.experiment_id))},
              {"summary", result.summary_path.string()},
              {"tasks", result.outcomes.size()},
              {"failed", failed},
              {"run_ids", json::array()}};
    for (const auto& oc : result.outcomes) j["run_ids"].push_back(oc.run_id);
    out << j.dump() << "\n";
  } else {
    for (const auto& oc : result.outcomes) out << oc.run_id << (oc.ok ? "" : "  FAILED") << "\n";
    out << "summary: " << result.summary_path.string() << "\n";
  }
  return failed == 0 ? kExitOk : kExitPartial;
}

struct LlcOverrides {
  std::optional<double> epsilon, gamma, beta;
  std::optional<std::size_t> steps, chains;
};

inline int cmd_llc(const CliOptions& o, const std::string& run_id, std::size_t step, const LlcOverrides& ov,
                   std::ostream& out) {
  const Registry registry(resolve_registry_root(o.registry_root));
  const fs::path dir = registry.find_run(run_id);
  const LoadedRun run = Registry::load_run_dir(dir);
  const ExperimentConfig cfg = config_from_json(run.config.at("experiment"));
  const TaskOutcome meta = load_outcome(dir);
  const ModelSpec spec = cfg.spec_for(meta.task.point);

  const fs::path ckpt = Registry::checkpoint_path(dir, step);
  if (!fs::exists(ckpt)) {
    throw Error(ErrorCode::MissingCheckpoint, "run " + run_id + " has no checkpoint at step " + std::to_string(step));
  }
  const ParamVector params = load_checkpoint_file(ckpt, spec);
  const GeneratedData data = task_dataset(cfg, meta.task);

  SgldConfig sgld = cfg.sgld;
  if (ov.epsilon) sgld.epsilon = *ov.epsilon;
  if (ov.gamma) sgld.gamma = *ov.gamma;
  if (ov.beta) sgld.beta = *ov.beta;
  if (ov.steps) sgld.steps = *ov.steps;
  if (ov.chains) sgld.chains = *ov.chains;
  const std::uint64_t seed = o.seed.value_or(meta.task.seed);

  const ModelObjective objective(spec, data.train, sgld.batch_size, meta.task.seed);
  const LLCEstimate est = estimate_llc_at(objective, params.values, sgld, RngStream(seed, 0x11C0 + step));
  const LlcRow row = llc_row(step, est);
  RunHandle handle{run.record, dir};
  registry.append_llc(handle, {row});

  if (o.json_output) {
    out << json{{"run_id", run_id},
                {"step", step},
                {"lambda_hat", est.lambda_hat},
                {"std_dev", est.std_dev},
                {"per_chain", est.per_chain},
                {"anchor_loss", est.anchor_loss},
                {"free_energy", row.free_energy},
                {"n", est.n},
                {"beta", est.beta_used},
                {"negative_flag", est.negative_flag}}
               .dump()
        << "\n";
  } else {
    out << "lambda_hat = " << format_double(est.lambda_hat) << " +/- " << format_double(est.std_dev) << "\n";
    out << "anchor_loss = " << format_double(est.anchor_loss) << "  free_energy = " << format_double(row.free_energy)
        << "\n";
  }
  return kExitOk;
}

inline int cmd_detect(const CliOptions& o, const std::string& run_id, const std::string& detector, std::ostream& out) {
  const Registry registry(resolve_registry_root(o.registry_root));
  const LoadedRun run = registry.load_run(run_id);
  const ExperimentConfig cfg = config_from_json(run.config.at("experiment"));
  DetectorConfig dc = cfg.detector;
  dc.kind = detector_from_string(detector);
  if (run.trace.records.empty() && run.trace.loss_curve.empty()) throw Error(ErrorCode::NoData, "run has no metrics");

  json j = {{"run_id", run_id}, {"detector", detector}};
  if (run.trace.has_validation()) {
    const auto grok = detect_grokking(run.trace, dc);
    j["grokking"] = grok ? json{{"i", grok->i}, {"j", grok->j}, {"r", grok->r()}} : json(nullptr);
  }
  const TransitionDetection det = detect_loss_transitions(run.trace, dc);
  j["flat_curve"] = det.flat_curve;
  j["transitions"] = json::array();
  for (const auto& s : det.segments) j["transitions"].push_back({{"start", s.start}, {"end", s.end}, {"drop", s.drop}});

  if (o.json_output) {
    out << j.dump() << "\n";
  } else {
    if (j.contains("grokking")) {
      if (j["grokking"].is_null()) out << "grokking: none\n";
      else out << "grokking: i=" << j["grokking"]["i"] << " j=" << j["grokking"]["j"] << " r=" << j["grokking"]["r"] << "\n";
    }
    out << det.segments.size() << " transition(s) (" << detector << ")" << (det.flat_curve ? ", flat curve" : "") << "\n";
    for (const auto& s : det.segments) out << "  " << s.start << " -> " << s.end << "  drop " << format_double(s.drop) << "\n";
  }
  return kExitOk;
}

inline int cmd_report(const CliOptions& o, const std::string& experiment, const std::string& out_dir, std::ostream& out) {
  const Registry registry(resolve_registry_root(o.registry_root));
  const ReportOutput rep = write_report(registry, experiment_id_from_string(experiment), out_dir);
  if (o.json_output) {
    json files = json::array();
    for (const auto& f : rep.files) files.push_back(f.string());
    out << json{{"directory", rep.directory.string()}, {"files", files}}.dump() << "\n";
  } else {
    for (const auto& f : rep.files) out << f.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_list(const CliOptions& o, const std::string& experiment, std::ostream& out) {
  const Registry registry(resolve_registry_root(o.registry_root));
  if (!experiment.empty()) (void)experiment_id_from_string(experiment);
  const auto ids = registry.list_runs(experiment);
  if (o.json_output) {
    out << json(ids).dump() << "\n";
  } else {
    for (const auto& id : ids) out << id << "\n";
  }
  return kExitOk;
}

}  // namespace detail

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Local learning coefficient experiments", "slt-lab"};
  app.require_subcommand(1);
  detail::CliOptions opts;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--registry-root", opts.registry_root, "Registry root (default: $SLT_LAB_REGISTRY or ./slt-registry)");
    sub->add_option("--seed", seed, "Seed override");
    sub->add_flag("--json", opts.json_output, "Machine-readable output");
  };

  auto* run = app.add_subcommand("run", "Run an experiment recipe from a config file");
  std::string config_path;
  std::string scale, detector_run;
  std::size_t workers = 0;
  run->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  run->add_option("--scale", scale, "paper|desk")->check(CLI::IsMember({"paper", "desk"}));
  run->add_option("--detector", detector_run, "smoothing|raw")->check(CLI::IsMember({"smoothing", "raw"}));
  run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  common(run);

  auto* llc = app.add_subcommand("llc", "Estimate the LLC at a stored checkpoint");
  std::string run_id;
  std::size_t step = 0;
  detail::LlcOverrides ov;
  double epsilon = 0, gamma = 0, beta = 0;
  std::size_t steps = 0, chains = 0;
  llc->add_option("--run", run_id, "Run id")->required();
  llc->add_option("--step", step, "Checkpoint step")->required();
  auto* eps_opt = llc->add_option("--epsilon", epsilon, "SGLD step size");
  auto* gamma_opt = llc->add_option("--gamma", gamma, "Localization strength");
  auto* beta_opt = llc->add_option("--beta", beta, "Inverse temperature");
  auto* steps_opt = llc->add_option("--steps", steps, "SGLD steps per chain");
  auto* chains_opt = llc->add_option("--chains", chains, "Chains");
  common(llc);

  auto* detect = app.add_subcommand("detect", "Run transition and grokking detection on a stored run");
  std::string detect_run, detector = "smoothing";
  detect->add_option("--run", detect_run, "Run id")->required();
  detect->add_option("--detector", detector, "smoothing|raw")->check(CLI::IsMember({"smoothing", "raw"}));
  common(detect);

  auto* report = app.add_subcommand("report", "Write CSV tables and SVG figures for an experiment");
  std::string report_exp, out_dir;
  report->add_option("--experiment", report_exp, "Experiment id")->required();
  report->add_option("--out", out_dir, "Output directory (default: <registry>/reports/<experiment>)");
  common(report);

  auto* list = app.add_subcommand("list", "List run ids");
  std::string list_exp;
  list->add_option("--experiment", list_exp, "Experiment id");
  common(list);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  for (auto* sub : {run, llc, detect, report, list}) {
    if (sub->parsed() && sub->count("--seed")) opts.seed = seed;
  }
  if (eps_opt->count()) ov.epsilon = epsilon;
  if (gamma_opt->count()) ov.gamma = gamma;
  if (beta_opt->count()) ov.beta = beta;
  if (steps_opt->count()) ov.steps = steps;
  if (chains_opt->count()) ov.chains = chains;

  try {
    if (run->parsed()) {
      return detail::cmd_run(opts, config_path, scale.empty() ? std::nullopt : std::optional(scale),
                             detector_run.empty() ? std::nullopt : std::optional(detector_run),
                             workers ? std::optional(workers) : std::nullopt, out, err);
    }
    if (llc->parsed()) return detail::cmd_llc(opts, run_id, step, ov, out);
    if (detect->parsed()) return detail::cmd_detect(opts, detect_run, detector, out);
    if (report->parsed()) return detail::cmd_report(opts, report_exp, out_dir, out);
    return detail::cmd_list(opts, list_exp, out);
  } catch (const Error& e) {
    detail::report_error(opts, err, std::string(to_string(e.code())), e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    detail::report_error(opts, err, "Internal", e.what());
    return kExitConfig;
  }
}

}  // namespace slt
