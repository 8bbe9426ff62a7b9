#pragma once

// The five experiment recipes (grokking, TMS transitions, polynomial,
// low-rank and autoencoder scaling) over a resumable, worker-pooled sweep.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "slt_lab/core_math.hpp"
#include "slt_lab/error.hpp"
#include "slt_lab/llc.hpp"
#include "slt_lab/models.hpp"
#include "slt_lab/registry.hpp"
#include "slt_lab/training.hpp"
#include "slt_lab/transitions.hpp"

namespace slt {

enum class Scale { Paper, Desk };

inline std::string_view to_string(Scale s) { return s == Scale::Paper ? "paper" : "desk"; }

inline Scale scale_from_string(std::string_view s) {
  if (s == "paper" || s == "Paper") return Scale::Paper;
  if (s == "desk" || s == "Desk") return Scale::Desk;
  throw Error(ErrorCode::InvalidConfig, "scale: expected 'paper' or 'desk', got '" + std::string(s) + "'");
}

inline std::string_view to_string(Spacing s) {
  switch (s) {
    case Spacing::Linear: return "linear";
    case Spacing::Logarithmic: return "log";
    case Spacing::Mixed: return "mixed";
  }
  return "linear";
}

inline Spacing spacing_from_string(std::string_view s) {
  if (s == "linear") return Spacing::Linear;
  if (s == "log") return Spacing::Logarithmic;
  if (s == "mixed") return Spacing::Mixed;
  throw Error(ErrorCode::InvalidConfig, "checkpoints.spacing: expected linear, log or mixed");
}

// ---------------------------------------------------------------------------
// Grids

namespace detail {

inline std::vector<std::size_t> strictly_increasing(const std::vector<double>& raw) {
  std::vector<std::size_t> out;
  for (double v : raw) {
    auto k = static_cast<std::size_t>(std::llround(v));
    if (!out.empty() && k <= out.back()) k = out.back() + 1;
    out.push_back(k);
  }
  return out;
}

}  // namespace detail

/// `count` integers log-spaced over [lo, hi]: round(lo·(hi/lo)^(k/(count−1))),
/// bumped upward where rounding would repeat a value.
inline std::vector<std::size_t> log_spaced_grid(std::size_t count, std::size_t lo, std::size_t hi) {
  if (count == 0 || lo == 0 || hi < lo) throw Error(ErrorCode::InvalidConfig, "log grid needs count >= 1 and 1 <= lo <= hi");
  if (count == 1) return {lo};
  std::vector<double> raw;
  const double ratio = std::log(static_cast<double>(hi) / static_cast<double>(lo));
  for (std::size_t k = 0; k < count; ++k) {
    raw.push_back(static_cast<double>(lo) * std::exp(ratio * static_cast<double>(k) / static_cast<double>(count - 1)));
  }
  return detail::strictly_increasing(raw);
}

/// `count` integers linearly spaced over [lo, hi] with the same bumping rule.
inline std::vector<std::size_t> linear_grid(std::size_t count, std::size_t lo, std::size_t hi) {
  if (count == 0 || hi < lo) throw Error(ErrorCode::InvalidConfig, "linear grid needs count >= 1 and lo <= hi");
  if (count == 1) return {lo};
  std::vector<double> raw;
  for (std::size_t k = 0; k < count; ++k) {
    raw.push_back(static_cast<double>(lo) +
                  static_cast<double>(hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1));
  }
  return detail::strictly_increasing(raw);
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  ExperimentId experiment_id = ExperimentId::Q2E2;
  Scale scale = Scale::Desk;
  std::vector<std::uint64_t> seeds{1};
  std::size_t runs_per_point = 3;     // Q2*: repeats per grid point
  std::size_t runs = 1;               // Q1*: trained models
  std::vector<std::size_t> grid;      // degrees (Q2E1) or ranks (Q2E2, Q2E3)
  std::vector<double> intervals;      // Q2E1 half-widths
  std::size_t workers = 1;

  std::size_t p = 13;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;           // MLP width; TMS bottleneck width
  std::size_t d = 100;
  std::size_t n_features = 6;
  double sparsity = 0.95;
  std::size_t n_samples = 500;
  double train_fraction = 0.4;

  OptimizerConfig optimizer;
  SgldConfig sgld;
  Spacing checkpoint_spacing = Spacing::Linear;
  std::size_t checkpoint_count = 100;
  DetectorConfig detector;
  std::vector<DetectorKind> detectors{DetectorKind::Smoothing};
  ConvergenceConfig convergence;
  double converged_loss_factor = 1e-2;  // final loss above this × baseline loss = not converged
  bool stop_after_grok = true;
  std::size_t histogram_bins = 20;
  std::optional<std::size_t> inject_failure_task;  // testing hook: this task index fails

  bool is_scaling() const {
    return experiment_id == ExperimentId::Q2E1 || experiment_id == ExperimentId::Q2E2 ||
           experiment_id == ExperimentId::Q2E3;
  }

  ModelSpec spec_for(std::size_t point) const {
    switch (experiment_id) {
      case ExperimentId::Q1E1: return ModelSpec(ModularAdditionSpec{p, embed_dim, hidden});
      case ExperimentId::Q1E2: return ModelSpec(TmsSpec{n_features, hidden, sparsity, {}});
      case ExperimentId::Q2E1: return ModelSpec(PolynomialSpec{point});
      case ExperimentId::Q2E2: return ModelSpec(LowRankSpec{d, point});
      case ExperimentId::Q2E3: return ModelSpec(AutoencoderSpec{d, hidden, point});
    }
    throw Error(ErrorCode::UnknownExperiment, "experiment_id");
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (seeds.empty()) fail("seeds: must be non-empty");
    if (workers == 0) fail("workers: must be >= 1");
    if (runs_per_point == 0) fail("runs_per_point: must be >= 1");
    if (!is_scaling() && runs == 0) fail("runs: must be >= 1");
    if (is_scaling()) {
      if (grid.empty()) fail("grid: must be non-empty");
      for (auto v : grid) {
        if (v == 0) fail("grid: values must be >= 1");
        if (experiment_id != ExperimentId::Q2E1 && v > d) fail("grid: rank exceeds d");
      }
      if (std::set<std::size_t>(grid.begin(), grid.end()).size() != grid.size()) fail("grid: duplicate values");
    }
    if (experiment_id == ExperimentId::Q2E1) {
      if (intervals.empty()) fail("intervals: must be non-empty");
      for (double h : intervals) {
        if (!(h > 0.0)) fail("intervals: half-widths must be > 0");
      }
    }
    if (!(converged_loss_factor > 0.0)) fail("converged_loss_factor: must be > 0");
    if (detectors.empty()) fail("detectors: must be non-empty");
    if (histogram_bins == 0) fail("histogram_bins: must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction: must lie in (0, 1)");
    if (n_samples == 0) fail("n_samples: must be >= 1");
    try {
      optimizer.validate();
    } catch (const Error& e) {
      fail(std::string("optimizer: ") + e.what());
    }
    try {
      sgld.validate();
    } catch (const Error& e) {
      fail(std::string("sgld: ") + e.what());
    }
    try {
      detector.validate();
    } catch (const Error& e) {
      fail(std::string("detector: ") + e.what());
    }
    if (!is_scaling() && checkpoint_count > optimizer.max_steps) fail("checkpoints.count: exceeds optimizer.max_steps");
    try {
      (void)spec_for(is_scaling() ? grid.front() : 1);
    } catch (const Error& e) {
      fail(std::string("model: ") + e.what());
    }
  }
};

/// Recipe defaults per experiment and scale.
inline ExperimentConfig default_config(ExperimentId id, Scale scale) {
  const bool paper = scale == Scale::Paper;
  ExperimentConfig cfg;
  cfg.experiment_id = id;
  cfg.scale = scale;
  cfg.sgld = default_sgld_config(id);
  cfg.runs_per_point = paper ? 10 : 3;
  switch (id) {
    case ExperimentId::Q1E1:
      cfg.p = paper ? 53 : 13;
      cfg.runs = paper ? 500 : 50;
      cfg.embed_dim = 64;
      cfg.hidden = 128;
      cfg.train_fraction = 0.4;
      cfg.optimizer.learning_rate = paper ? 1e-3 : 3e-3;
      cfg.optimizer.weight_decay = paper ? 1e-2 : 1.0;
      cfg.optimizer.max_steps = paper ? 60000 : 40000;
      cfg.checkpoint_spacing = Spacing::Linear;
      cfg.checkpoint_count = 100;
      break;
    case ExperimentId::Q1E2:
      cfg.runs = paper ? 60 : 20;
      cfg.n_features = 6;
      cfg.hidden = 2;
      cfg.sparsity = 0.95;
      cfg.n_samples = 2048;
      cfg.optimizer.learning_rate = 1e-2;
      cfg.optimizer.batch_size = 1024;
      cfg.optimizer.max_steps = 4500;
      cfg.checkpoint_spacing = Spacing::Mixed;
      cfg.checkpoint_count = 100;
      cfg.detectors = {DetectorKind::Smoothing, DetectorKind::Raw};
      break;
    case ExperimentId::Q2E1:
      cfg.grid = paper ? log_spaced_grid(20, 1, 1000) : log_spaced_grid(8, 1, 200);
      cfg.intervals = {1.0, 0.75, 0.5};
      cfg.n_samples = 500;
      cfg.optimizer.learning_rate = 1e-3;
      cfg.optimizer.max_steps = 20000;
      break;
    case ExperimentId::Q2E2:
      cfg.d = 100;
      cfg.grid = paper ? linear_grid(20, 1, 100) : linear_grid(10, 1, 100);
      cfg.n_samples = 500;
      cfg.optimizer.learning_rate = 1e-2;
      cfg.optimizer.max_steps = 20000;
      if (!paper) {
        cfg.sgld.epsilon = 1e-4;
        cfg.sgld.steps = 6000;
      }
      break;
    case ExperimentId::Q2E3:
      cfg.d = 100;
      cfg.hidden = 128;
      cfg.grid = paper ? linear_grid(20, 1, 100) : linear_grid(8, 5, 100);
      cfg.n_samples = 500;
      cfg.optimizer.learning_rate = 1e-3;
      cfg.optimizer.max_steps = 5000;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& prefix) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorCode::InvalidConfig, prefix + key + ": unknown field");
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& prefix = "") {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  const std::string name = prefix + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw Error(ErrorCode::InvalidConfig, name + ": expected a boolean");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!it->is_number_unsigned()) throw Error(ErrorCode::InvalidConfig, name + ": expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw Error(ErrorCode::InvalidConfig, name + ": expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw Error(ErrorCode::InvalidConfig, name + ": expected a string");
  }
  out = it->get<T>();
}

template <typename T>
void read_list(const json& j, const char* key, std::vector<T>& out) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  if (!it->is_array()) throw Error(ErrorCode::InvalidConfig, std::string(key) + ": expected an array");
  std::vector<T> values;
  for (const auto& v : *it) {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw Error(ErrorCode::InvalidConfig, std::string(key) + ": expected non-negative integers");
    } else {
      if (!v.is_number()) throw Error(ErrorCode::InvalidConfig, std::string(key) + ": expected numbers");
    }
    values.push_back(v.get<T>());
  }
  out = std::move(values);
}

inline const json& object_field(const json& j, const char* key) {
  static const json empty = json::object();
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return empty;
  if (!it->is_object()) throw Error(ErrorCode::InvalidConfig, std::string(key) + ": expected an object");
  return *it;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["format_version"] = kFormatVersion;
  j["experiment_id"] = std::string(to_string(c.experiment_id));
  j["scale"] = std::string(to_string(c.scale));
  j["seeds"] = c.seeds;
  j["runs_per_point"] = c.runs_per_point;
  j["runs"] = c.runs;
  j["grid"] = c.grid;
  j["intervals"] = c.intervals;
  j["workers"] = c.workers;
  j["model"] = {{"p", c.p},           {"embed_dim", c.embed_dim}, {"hidden", c.hidden},
                {"d", c.d},           {"n_features", c.n_features}, {"sparsity", c.sparsity}};
  j["data"] = {{"n_samples", c.n_samples}, {"train_fraction", c.train_fraction}};
  j["optimizer"] = {{"kind", c.optimizer.kind == OptimizerKind::AdamW ? "adamw" : "sgd"},
                    {"learning_rate", c.optimizer.learning_rate},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon},
                    {"batch_size", c.optimizer.batch_size},
                    {"max_steps", c.optimizer.max_steps}};
  j["sgld"] = {{"epsilon", c.sgld.epsilon},
               {"gamma", c.sgld.gamma},
               {"steps", c.sgld.steps},
               {"chains", c.sgld.chains},
               {"burn_in_fraction", c.sgld.burn_in_fraction},
               {"batch_size", c.sgld.batch_size},
               {"beta", c.sgld.beta ? json(*c.sgld.beta) : json(nullptr)}};
  j["checkpoints"] = {{"spacing", std::string(to_string(c.checkpoint_spacing))}, {"count", c.checkpoint_count}};
  j["detector"] = {{"smoothing_window", c.detector.smoothing_window},
                   {"drop_fraction", c.detector.drop_fraction},
                   {"train_acc_threshold", c.detector.train_acc_threshold},
                   {"val_acc_threshold", c.detector.val_acc_threshold},
                   {"val_low_threshold", c.detector.val_low_threshold}};
  json kinds = json::array();
  for (auto k : c.detectors) kinds.push_back(std::string(to_string(k)));
  j["detectors"] = kinds;
  j["convergence"] = {{"window", c.convergence.window},
                      {"relative_tolerance", c.convergence.relative_tolerance},
                      {"absolute_tolerance", c.convergence.absolute_tolerance}};
  j["converged_loss_factor"] = c.converged_loss_factor;
  j["stop_after_grok"] = c.stop_after_grok;
  j["histogram_bins"] = c.histogram_bins;
  j["inject_failure_task"] = c.inject_failure_task ? json(*c.inject_failure_task) : json(nullptr);
  return j;
}

/// Parses a config document. Missing fields take the recipe defaults for
/// (experiment_id, scale); errors name the offending field.
inline ExperimentConfig config_from_json(const json& j, std::optional<Scale> scale_override = std::nullopt) {
  using detail::read_field;
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config: expected a JSON object");
  detail::reject_unknown(j,
                         {"format_version", "experiment_id", "scale", "seeds", "runs_per_point", "runs", "grid",
                          "intervals", "workers", "model", "data", "optimizer", "sgld", "checkpoints", "detector",
                          "detectors", "convergence", "converged_loss_factor", "stop_after_grok", "histogram_bins",
                          "inject_failure_task"},
                         "");
  if (!j.contains("experiment_id")) throw Error(ErrorCode::InvalidConfig, "experiment_id: missing");
  if (!j["experiment_id"].is_string()) throw Error(ErrorCode::InvalidConfig, "experiment_id: expected a string");
  ExperimentId id;
  try {
    id = experiment_id_from_string(j["experiment_id"].get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("experiment_id: ") + e.what());
  }
  std::string scale_name = "desk";
  read_field(j, "scale", scale_name);
  const Scale scale = scale_override ? *scale_override : scale_from_string(scale_name);
  if (j.contains("format_version") && j["format_version"] != kFormatVersion) {
    throw Error(ErrorCode::InvalidConfig, "format_version: unsupported version");
  }

  ExperimentConfig c = default_config(id, scale);
  detail::read_list(j, "seeds", c.seeds);
  read_field(j, "runs_per_point", c.runs_per_point);
  read_field(j, "runs", c.runs);
  detail::read_list(j, "grid", c.grid);
  detail::read_list(j, "intervals", c.intervals);
  read_field(j, "workers", c.workers);

  const json& model = detail::object_field(j, "model");
  detail::reject_unknown(model, {"p", "embed_dim", "hidden", "d", "n_features", "sparsity"}, "model.");
  read_field(model, "p", c.p, "model.");
  read_field(model, "embed_dim", c.embed_dim, "model.");
  read_field(model, "hidden", c.hidden, "model.");
  read_field(model, "d", c.d, "model.");
  read_field(model, "n_features", c.n_features, "model.");
  read_field(model, "sparsity", c.sparsity, "model.");

  const json& data = detail::object_field(j, "data");
  detail::reject_unknown(data, {"n_samples", "train_fraction"}, "data.");
  read_field(data, "n_samples", c.n_samples, "data.");
  read_field(data, "train_fraction", c.train_fraction, "data.");

  const json& opt = detail::object_field(j, "optimizer");
  detail::reject_unknown(opt, {"kind", "learning_rate", "weight_decay", "beta1", "beta2", "epsilon", "batch_size", "max_steps"},
                         "optimizer.");
  std::string kind = c.optimizer.kind == OptimizerKind::AdamW ? "adamw" : "sgd";
  read_field(opt, "kind", kind, "optimizer.");
  if (kind != "adamw" && kind != "sgd") throw Error(ErrorCode::InvalidConfig, "optimizer.kind: expected adamw or sgd");
  c.optimizer.kind = kind == "adamw" ? OptimizerKind::AdamW : OptimizerKind::SGD;
  read_field(opt, "learning_rate", c.optimizer.learning_rate, "optimizer.");
  read_field(opt, "weight_decay", c.optimizer.weight_decay, "optimizer.");
  read_field(opt, "beta1", c.optimizer.beta1, "optimizer.");
  read_field(opt, "beta2", c.optimizer.beta2, "optimizer.");
  read_field(opt, "epsilon", c.optimizer.epsilon, "optimizer.");
  read_field(opt, "batch_size", c.optimizer.batch_size, "optimizer.");
  read_field(opt, "max_steps", c.optimizer.max_steps, "optimizer.");

  const json& sgld = detail::object_field(j, "sgld");
  detail::reject_unknown(sgld, {"epsilon", "gamma", "steps", "chains", "burn_in_fraction", "batch_size", "beta"}, "sgld.");
  read_field(sgld, "epsilon", c.sgld.epsilon, "sgld.");
  read_field(sgld, "gamma", c.sgld.gamma, "sgld.");
  read_field(sgld, "steps", c.sgld.steps, "sgld.");
  read_field(sgld, "chains", c.sgld.chains, "sgld.");
  read_field(sgld, "burn_in_fraction", c.sgld.burn_in_fraction, "sgld.");
  read_field(sgld, "batch_size", c.sgld.batch_size, "sgld.");
  if (sgld.contains("beta")) {
    if (sgld["beta"].is_null()) {
      c.sgld.beta.reset();
    } else {
      double beta = 0.0;
      read_field(sgld, "beta", beta, "sgld.");
      c.sgld.beta = beta;
    }
  }

  const json& ck = detail::object_field(j, "checkpoints");
  detail::reject_unknown(ck, {"spacing", "count"}, "checkpoints.");
  std::string spacing(to_string(c.checkpoint_spacing));
  read_field(ck, "spacing", spacing, "checkpoints.");
  c.checkpoint_spacing = spacing_from_string(spacing);
  read_field(ck, "count", c.checkpoint_count, "checkpoints.");

  const json& det = detail::object_field(j, "detector");
  detail::reject_unknown(det, {"smoothing_window", "drop_fraction", "train_acc_threshold", "val_acc_threshold", "val_low_threshold"},
                         "detector.");
  read_field(det, "smoothing_window", c.detector.smoothing_window, "detector.");
  read_field(det, "drop_fraction", c.detector.drop_fraction, "detector.");
  read_field(det, "train_acc_threshold", c.detector.train_acc_threshold, "detector.");
  read_field(det, "val_acc_threshold", c.detector.val_acc_threshold, "detector.");
  read_field(det, "val_low_threshold", c.detector.val_low_threshold, "detector.");

  if (j.contains("detectors") && !j["detectors"].is_null()) {
    if (!j["detectors"].is_array()) throw Error(ErrorCode::InvalidConfig, "detectors: expected an array");
    c.detectors.clear();
    for (const auto& v : j["detectors"]) {
      if (!v.is_string()) throw Error(ErrorCode::InvalidConfig, "detectors: expected strings");
      try {
        c.detectors.push_back(detector_from_string(v.get<std::string>()));
      } catch (const Error& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("detectors: ") + e.what());
      }
    }
  }

  const json& conv = detail::object_field(j, "convergence");
  detail::reject_unknown(conv, {"window", "relative_tolerance", "absolute_tolerance"}, "convergence.");
  read_field(conv, "window", c.convergence.window, "convergence.");
  read_field(conv, "relative_tolerance", c.convergence.relative_tolerance, "convergence.");
  read_field(conv, "absolute_tolerance", c.convergence.absolute_tolerance, "convergence.");

  read_field(j, "converged_loss_factor", c.converged_loss_factor);
  read_field(j, "stop_after_grok", c.stop_after_grok);
  read_field(j, "histogram_bins", c.histogram_bins);
  if (j.contains("inject_failure_task") && !j["inject_failure_task"].is_null()) {
    std::size_t k = 0;
    read_field(j, "inject_failure_task", k);
    c.inject_failure_task = k;
  }
  c.validate();
  return c;
}

/// The fields that change what a single task computes. Sweep extent,
/// seeds, worker count and test hooks are excluded.
inline json recipe_json(const ExperimentConfig& c) {
  json j = to_json(c);
  for (const char* k : {"seeds", "runs_per_point", "runs", "grid", "intervals", "workers", "scale",
                        "inject_failure_task", "histogram_bins"}) {
    j.erase(k);
  }
  return j;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Tasks

struct Task {
  std::size_t index = 0;   // position in the sweep
  std::size_t repeat = 0;  // repeat number (Q2*) or run number (Q1*)
  std::uint64_t seed = 0;
  std::size_t point = 0;   // degree/rank; run number for Q1*
  std::optional<double> interval;
  std::string key;
};

inline std::uint64_t task_seed(const ExperimentConfig& c, std::size_t k) {
  return k < c.seeds.size() ? c.seeds[k] : c.seeds.front() + k;
}

inline std::vector<Task> make_tasks(const ExperimentConfig& c) {
  const std::string prefix = std::string(to_string(c.experiment_id)) + "|" + hex64(config_hash(recipe_json(c))) + "|";
  std::vector<Task> tasks;
  auto push = [&](std::size_t point, std::optional<double> interval, std::size_t repeat, const std::string& label) {
    Task t;
    t.index = tasks.size();
    t.repeat = repeat;
    t.seed = task_seed(c, repeat);
    t.point = point;
    t.interval = interval;
    t.key = prefix + label + "|seed=" + std::to_string(t.seed);
    tasks.push_back(std::move(t));
  };
  if (!c.is_scaling()) {
    for (std::size_t k = 0; k < c.runs; ++k) push(k, std::nullopt, k, "run");
    return tasks;
  }
  const std::vector<double> intervals = c.experiment_id == ExperimentId::Q2E1 ? c.intervals : std::vector<double>{0.0};
  for (double h : intervals) {
    for (auto v : c.grid) {
      for (std::size_t k = 0; k < c.runs_per_point; ++k) {
        if (c.experiment_id == ExperimentId::Q2E1) {
          push(v, h, k, "interval=" + format_double(h) + ",degree=" + std::to_string(v));
        } else {
          push(v, std::nullopt, k, "rank=" + std::to_string(v));
        }
      }
    }
  }
  return tasks;
}

struct TaskOutcome {
  Task task;
  bool ok = false;
  bool resumed = false;
  std::string run_id;
  std::string error;
  json result;
};

/// Serializes registry writes from all workers.
class RunWriter {
 public:
  RunWriter(const Registry& registry, std::mutex& mu, RunHandle handle)
      : registry_(&registry), mu_(&mu), handle_(std::move(handle)) {}

  const RunHandle& handle() const noexcept { return handle_; }

  void metrics(const std::vector<MetricRecord>& rows) { locked([&] { registry_->append_metrics(handle_, rows); }); }
  void llc(const std::vector<LlcRow>& rows) { locked([&] { registry_->append_llc(handle_, rows); }); }
  void events(const std::vector<json>& evs) { locked([&] { registry_->append_events(handle_, evs); }); }
  void loss_curve(const std::vector<double>& losses) { locked([&] { registry_->append_loss_curve(handle_, losses); }); }
  void checkpoint(std::size_t step, const ModelSpec& spec, const ParamVector& params) {
    locked([&] { registry_->save_checkpoint(handle_, step, spec, params); });
  }

 private:
  template <typename F>
  void locked(F&& f) {
    std::lock_guard lock(*mu_);
    f();
  }

  const Registry* registry_;
  std::mutex* mu_;
  RunHandle handle_;
};

inline json fit_to_json(const FitResult& f) {
  return {{"coefficients", f.coefficients},
          {"r_squared", f.r_squared ? json(*f.r_squared) : json(nullptr)},
          {"residual_sum", f.residual_sum}};
}

inline FitResult fit_from_json(const json& j) {
  FitResult f;
  f.coefficients = j.at("coefficients").get<std::vector<double>>();
  if (!j.at("r_squared").is_null()) f.r_squared = j.at("r_squared").get<double>();
  f.residual_sum = j.at("residual_sum").get<double>();
  return f;
}

inline LlcRow llc_row(std::size_t step, const LLCEstimate& est) {
  return {step, est.lambda_hat, est.std_dev, est.anchor_loss, free_energy(est.n, est.anchor_loss, est.lambda_hat).value};
}

// ---------------------------------------------------------------------------
// Per-task recipes

namespace detail {

inline RngStream task_rng(const Task& t) { return RngStream(t.seed, config_hash(json(t.key))); }

}  // namespace detail

/// The task's dataset, regenerated identically from (config, task).
inline GeneratedData task_dataset(const ExperimentConfig& c, const Task& t) {
  TaskParams tp;
  tp.n_samples = c.n_samples;
  tp.train_fraction = c.train_fraction;
  if (t.interval) tp.interval_half_width = *t.interval;
  return generate_dataset(c.spec_for(t.point), tp, detail::task_rng(t).child(1));
}

namespace detail {

/// Loss of the best constant predictor under the model's loss convention.
inline double baseline_loss(const ModelSpec& spec, const Dataset& data) {
  ParamVector zero = zero_params(spec);
  const Matrix& y = data.targets;
  double total = 0.0;
  for (std::size_t c = 0; c < y.cols(); ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) m += y(i, c);
    m /= static_cast<double>(y.rows());
    double v = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) v += (y(i, c) - m) * (y(i, c) - m);
    total += v / static_cast<double>(y.rows());
  }
  // The zero-parameter loss fixes the constant factor of the convention (mean vs sum over outputs, 1/2 or not).
  double raw = 0.0;
  for (double v : y.data()) raw += v * v;
  raw /= static_cast<double>(y.rows());
  const double zero_loss = forward_loss(spec, zero.values, data);
  return raw > 0.0 ? total * zero_loss / raw : total;
}

inline json run_scaling_task(const ExperimentConfig& c, const Task& t, RunWriter& out) {
  const ModelSpec spec = c.spec_for(t.point);
  RngStream rng = task_rng(t);
  const GeneratedData data = task_dataset(c, t);
  const ConvergedResult trained = train_until_converged(spec, data.train, c.optimizer, rng.child(2), c.convergence);
  const double baseline = baseline_loss(spec, data.train);
  const bool converged = trained.final_loss <= c.converged_loss_factor * baseline;

  out.metrics({MetricRecord{trained.steps, trained.final_loss, std::nullopt, std::nullopt, std::nullopt}});
  out.checkpoint(trained.steps, spec, trained.params);

  const ModelObjective objective(spec, data.train, c.sgld.batch_size, t.seed);
  const LLCEstimate est = estimate_llc_at(objective, trained.params.values, c.sgld, rng.child(3));
  const LlcRow row = llc_row(trained.steps, est);
  out.llc({row});

  return {{"point", t.point},
          {"interval", t.interval ? json(*t.interval) : json(nullptr)},
          {"seed", t.seed},
          {"repeat", t.repeat},
          {"n", est.n},
          {"lambda_hat", est.lambda_hat},
          {"std_dev", est.std_dev},
          {"per_chain", est.per_chain},
          {"negative_flag", est.negative_flag},
          {"anchor_loss", est.anchor_loss},
          {"free_energy", row.free_energy},
          {"final_loss", trained.final_loss},
          {"baseline_loss", baseline},
          {"train_steps", trained.steps},
          {"stop_rule_met", trained.converged},
          {"converged", converged}};
}

inline json run_grokking_task(const ExperimentConfig& c, const Task& t, RunWriter& out) {
  const ModelSpec spec = c.spec_for(t.point);
  RngStream rng = task_rng(t);
  const GeneratedData data = task_dataset(c, t);
  const CheckpointSchedule schedule{c.checkpoint_spacing, c.checkpoint_count, c.optimizer.max_steps};

  TrainOptions options;
  bool memorized = false;
  if (c.stop_after_grok) {
    options.stop_when = [&](const MetricRecord& r) {
      if (!memorized) {
        memorized = *r.train_acc >= c.detector.train_acc_threshold && *r.val_acc < c.detector.val_low_threshold;
        return false;
      }
      return *r.val_acc >= c.detector.val_acc_threshold;
    };
  }
  const TrainingTrace trace = train(spec, data, c.optimizer, schedule, rng.child(2), options);
  out.metrics(trace.records);
  if (trace.diverged) throw Error(ErrorCode::Diverged, "training diverged at step " + std::to_string(trace.diverged_at));

  json result = {{"point", t.point}, {"seed", t.seed}, {"repeat", t.repeat}, {"grokked", false},
                 {"n", data.train.n()}, {"n_train", data.train.n()}, {"steps_trained", trace.records.empty() ? 0 : trace.records.back().step}};
  if (!trace.records.empty()) {
    result["final_train_acc"] = *trace.records.back().train_acc;
    result["final_val_acc"] = *trace.records.back().val_acc;
    out.checkpoint(trace.checkpoints.back().step, spec, trace.checkpoints.back().params);
  }
  const auto grok = detect_grokking(trace, c.detector);
  if (!grok) return result;

  const ModelObjective objective(spec, data.train, c.sgld.batch_size, t.seed);
  const ParamVector& pre = trace.checkpoint_at(grok->i)->params;
  const ParamVector& post = trace.checkpoint_at(grok->j)->params;
  LLCEstimate pre_llc = estimate_llc_at(objective, pre.values, c.sgld, rng.child(3));
  LLCEstimate post_llc = estimate_llc_at(objective, post.values, c.sgld, rng.child(4));
  out.checkpoint(grok->i, spec, pre);
  out.checkpoint(grok->j, spec, post);
  const LlcRow row_i = llc_row(grok->i, pre_llc);
  const LlcRow row_j = llc_row(grok->j, post_llc);
  out.llc({row_i, row_j});

  const GrokEvent ev = make_grok_event(*grok, std::move(pre_llc), std::move(post_llc));
  const json event = {{"type", "grok"},
                      {"i", ev.i},
                      {"j", ev.j},
                      {"r", ev.r},
                      {"pre_lambda", ev.pre_llc.lambda_hat},
                      {"post_lambda", ev.post_llc.lambda_hat},
                      {"delta_lambda", ev.delta_lambda},
                      {"F_i", row_i.free_energy},
                      {"F_j", row_j.free_energy},
                      {"delta_F", row_i.free_energy - row_j.free_energy}};
  out.events({event});
  result["grokked"] = true;
  result["event"] = event;
  return result;
}

inline json run_tms_task(const ExperimentConfig& c, const Task& t, RunWriter& out) {
  const ModelSpec spec = c.spec_for(t.point);
  RngStream rng = task_rng(t);
  const GeneratedData data = task_dataset(c, t);
  const CheckpointSchedule schedule{c.checkpoint_spacing, c.checkpoint_count, c.optimizer.max_steps};
  TrainOptions options;
  options.record_loss_curve = true;
  const TrainingTrace trace = train(spec, data, c.optimizer, schedule, rng.child(2), options);
  out.metrics(trace.records);
  out.loss_curve(trace.loss_curve);
  if (trace.diverged) throw Error(ErrorCode::Diverged, "training diverged at step " + std::to_string(trace.diverged_at));

  const ModelObjective objective(spec, data.train, c.sgld.batch_size, t.seed);
  std::vector<CheckpointFreeEnergy> energies;
  std::vector<LlcRow> rows;
  for (std::size_t k = 0; k < trace.checkpoints.size(); ++k) {
    const auto& ck = trace.checkpoints[k];
    const LLCEstimate est = estimate_llc_at(objective, ck.params.values, c.sgld, rng.child(100 + k));
    rows.push_back(llc_row(ck.step, est));
    energies.push_back({ck.step, free_energy(est.n, est.anchor_loss, est.lambda_hat)});
    out.checkpoint(ck.step, spec, ck.params);
  }
  out.llc(rows);

  json per_detector = json::array();
  std::vector<json> all_events;
  for (DetectorKind kind : c.detectors) {
    DetectorConfig dc = c.detector;
    dc.kind = kind;
    const TransitionDetection det = detect_loss_transitions(trace, dc);
    json entry = {{"detector", std::string(to_string(kind))},
                  {"transitions", det.segments.size()},
                  {"flat_curve", det.flat_curve},
                  {"excluded", det.segments.size() < 2},
                  {"events", json::array()}};
    if (det.segments.size() >= 2) {
      for (const auto& ev : pair_consecutive(det.segments, energies)) {
        json e = {{"type", "transition"},
                  {"detector", std::string(to_string(kind))},
                  {"i", ev.i},
                  {"j", ev.j},
                  {"r", ev.r},
                  {"F_i", ev.F_i.value},
                  {"F_j", ev.F_j.value},
                  {"delta_F", ev.delta_F}};
        entry["events"].push_back(e);
        all_events.push_back(e);
      }
    }
    per_detector.push_back(entry);
  }
  if (!all_events.empty()) out.events(all_events);
  return {{"point", t.point}, {"seed", t.seed}, {"repeat", t.repeat}, {"n", data.train.n()}, {"detectors", per_detector}};
}

}  // namespace detail

inline json run_task(const ExperimentConfig& c, const Task& t, RunWriter& out) {
  switch (c.experiment_id) {
    case ExperimentId::Q1E1: return detail::run_grokking_task(c, t, out);
    case ExperimentId::Q1E2: return detail::run_tms_task(c, t, out);
    default: return detail::run_scaling_task(c, t, out);
  }
}

// ---------------------------------------------------------------------------
// Aggregation

struct ScalingPoint {
  double difficulty = 0.0;
  std::optional<double> interval;
  double lambda_mean = 0.0;
  double lambda_std = 0.0;
  std::size_t repeats = 0;
  std::size_t flagged = 0;  // repeats excluded as non-converged
};

namespace detail {

inline std::tuple<double, std::size_t, std::uint64_t> outcome_order(const TaskOutcome& o) {
  return {o.task.interval.value_or(0.0), o.task.point, o.task.seed};
}

inline json histogram_json(const std::vector<double>& values, std::size_t bins) {
  if (values.empty()) return nullptr;
  const Histogram h = histogram(values, bins);
  return {{"edges", h.edges}, {"counts", h.counts}};
}

}  // namespace detail

/// Scaling points in (interval, difficulty) order. Points whose repeats were
/// all flagged come back with repeats = 0.
inline std::vector<ScalingPoint> scaling_points(std::vector<TaskOutcome> outcomes) {
  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& a, const auto& b) { return detail::outcome_order(a) < detail::outcome_order(b); });
  std::vector<ScalingPoint> points;
  std::vector<std::vector<double>> values;
  for (const auto& o : outcomes) {
    if (!o.ok) continue;
    const auto difficulty = static_cast<double>(o.task.point);
    if (points.empty() || points.back().difficulty != difficulty || points.back().interval != o.task.interval) {
      points.push_back({difficulty, o.task.interval, 0.0, 0.0, 0, 0});
      values.emplace_back();
    }
    if (o.result.value("converged", false)) {
      values.back().push_back(o.result.at("lambda_hat").get<double>());
    } else {
      points.back().flagged++;
    }
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    points[k].repeats = values[k].size();
    if (values[k].empty()) continue;
    points[k].lambda_mean = mean(values[k]);
    points[k].lambda_std = values[k].size() > 1 ? sample_stddev(values[k]) : 0.0;
  }
  return points;
}

/// λ vs difficulty: quadratic [1, r, r²] for low-rank, linear [1, r] for the autoencoder.
inline FitResult scaling_fit(ExperimentId id, const std::vector<ScalingPoint>& points) {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    if (p.repeats == 0) continue;
    xs.push_back(p.difficulty);
    ys.push_back(p.lambda_mean);
  }
  const std::size_t degree = id == ExperimentId::Q2E2 ? 2 : 1;
  if (xs.size() < degree + 1) throw Error(ErrorCode::NoData, "too few scaling points to fit");
  return ols_fit(polynomial_design(xs, degree), ys);
}

inline json scaling_point_json(const ScalingPoint& p) {
  return {{"difficulty", p.difficulty},
          {"interval", p.interval ? json(*p.interval) : json(nullptr)},
          {"lambda_mean", p.lambda_mean},
          {"lambda_std", p.lambda_std},
          {"repeats", p.repeats},
          {"flagged_repeats", p.flagged}};
}

/// Experiment-level summary from task outcomes (in-process or reloaded).
inline json aggregate(const ExperimentConfig& c, std::vector<TaskOutcome> outcomes) {
  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& a, const auto& b) { return detail::outcome_order(a) < detail::outcome_order(b); });
  json s;
  s["format_version"] = kFormatVersion;
  s["experiment_id"] = std::string(to_string(c.experiment_id));
  s["recipe_hash"] = hex64(config_hash(recipe_json(c)));
  s["config"] = to_json(c);
  std::size_t failed = 0;
  json failures = json::array();
  json run_ids = json::array();
  for (const auto& o : outcomes) {
    if (!o.run_id.empty()) run_ids.push_back(o.run_id);
    if (!o.ok) {
      ++failed;
      failures.push_back({{"task_key", o.task.key}, {"run_id", o.run_id}, {"error", o.error}});
    }
  }
  s["tasks_total"] = outcomes.size();
  s["tasks_failed"] = failed;
  s["failures"] = failures;
  s["run_ids"] = run_ids;

  if (c.is_scaling()) {
    const auto points = scaling_points(outcomes);
    json pts = json::array();
    json flagged = json::array();
    for (const auto& p : points) {
      json pj = scaling_point_json(p);
      if (c.experiment_id == ExperimentId::Q2E1) {
        pj["theory"] = p.difficulty / 2.0;
      } else if (c.experiment_id == ExperimentId::Q2E2) {
        pj["theory"] = 0.5 * p.difficulty * (2.0 * static_cast<double>(c.d) - p.difficulty);
      }
      (p.repeats > 0 ? pts : flagged).push_back(pj);
    }
    s["points"] = pts;
    s["flagged_points"] = flagged;
    if (c.experiment_id != ExperimentId::Q2E1) {
      try {
        s["fit"] = fit_to_json(scaling_fit(c.experiment_id, points));
      } catch (const Error& e) {
        s["fit"] = nullptr;
        s["fit_error"] = std::string(to_string(e.code()));
      }
    }
    return s;
  }

  if (c.experiment_id == ExperimentId::Q1E1) {
    std::size_t completed = 0, grokked = 0;
    json events = json::array();
    std::vector<RateObservation> obs;
    std::vector<double> dl, logr;
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      ++completed;
      if (!o.result.value("grokked", false)) continue;
      ++grokked;
      json ev = o.result.at("event");
      ev["run_id"] = o.run_id;
      ev["seed"] = o.task.seed;
      events.push_back(ev);
      const double r = ev.at("r").get<double>();
      obs.push_back({ev.at("delta_F").get<double>(), r});
      dl.push_back(ev.at("delta_lambda").get<double>());
      logr.push_back(std::log(r));
    }
    s["runs_completed"] = completed;
    s["runs_grokked"] = grokked;
    s["grok_fraction"] = completed ? static_cast<double>(grokked) / static_cast<double>(completed) : 0.0;
    s["events"] = events;
    try {
      s["fit"] = fit_to_json(arrhenius_fit(obs));
    } catch (const Error& e) {
      s["fit"] = nullptr;
      s["fit_error"] = std::string(to_string(e.code()));
    }
    s["histograms"] = {{"delta_lambda", detail::histogram_json(dl, c.histogram_bins)},
                       {"log_r", detail::histogram_json(logr, c.histogram_bins)}};
    return s;
  }

  // Q1E2
  json detectors = json::array();
  for (DetectorKind kind : c.detectors) {
    const std::string name(to_string(kind));
    std::size_t used = 0, excluded = 0;
    json events = json::array();
    std::vector<RateObservation> obs;
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      for (const auto& d : o.result.at("detectors")) {
        if (d.at("detector") != name) continue;
        if (d.at("excluded").get<bool>()) {
          ++excluded;
          continue;
        }
        ++used;
        for (json ev : d.at("events")) {
          ev["run_id"] = o.run_id;
          ev["seed"] = o.task.seed;
          obs.push_back({ev.at("delta_F").get<double>(), ev.at("r").get<double>()});
          events.push_back(ev);
        }
      }
    }
    json entry = {{"detector", name}, {"runs_used", used}, {"runs_excluded", excluded}, {"events", events}};
    try {
      entry["fit"] = fit_to_json(arrhenius_fit(obs));
    } catch (const Error& e) {
      entry["fit"] = nullptr;
      entry["fit_error"] = std::string(to_string(e.code()));
    }
    detectors.push_back(entry);
  }
  s["detectors"] = detectors;
  return s;
}

// ---------------------------------------------------------------------------
// Loading completed tasks

/// Rebuilds a task outcome from a run directory. The per-repeat λ̂ of
/// scaling runs is taken from the stored LLC row.
inline TaskOutcome load_outcome(const fs::path& run_dir) {
  const LoadedRun run = Registry::load_run_dir(run_dir);
  TaskOutcome o;
  o.run_id = run.record.run_id;
  const json& t = run.config.at("task");
  o.task.index = t.at("index").get<std::size_t>();
  o.task.repeat = t.at("repeat").get<std::size_t>();
  o.task.seed = t.at("seed").get<std::uint64_t>();
  o.task.point = t.at("point").get<std::size_t>();
  if (!t.at("interval").is_null()) o.task.interval = t.at("interval").get<double>();
  o.task.key = run.config.at("task_key").get<std::string>();
  o.ok = run.record.status == RunStatus::Done;
  if (run.summary) {
    o.result = run.summary->value("result", json());
    o.error = run.summary->value("error", std::string());
  }
  if (o.ok && o.result.contains("lambda_hat") && !run.llc.empty()) o.result["lambda_hat"] = run.llc.back().lambda_hat;
  return o;
}

/// One outcome per task key among the runs sharing `recipe_hash`: the
/// latest completed run, else the latest attempt.
inline std::vector<TaskOutcome> load_outcomes(const Registry& registry, ExperimentId id, const std::string& recipe_hash) {
  std::map<std::string, TaskOutcome> by_key;
  for (const auto& run_id : registry.list_runs(to_string(id))) {
    const fs::path dir = registry.experiment_dir(to_string(id)) / run_id;
    const json doc = read_json(dir / "config.json");
    if (doc.at("config").value("recipe_hash", std::string()) != recipe_hash) continue;
    TaskOutcome o = load_outcome(dir);
    auto it = by_key.find(o.task.key);
    if (it == by_key.end()) {
      by_key.emplace(o.task.key, std::move(o));
    } else if (o.ok || !it->second.ok) {
      it->second = std::move(o);
    }
  }
  std::vector<TaskOutcome> out;
  for (auto& [key, o] : by_key) out.push_back(std::move(o));
  return out;
}

// ---------------------------------------------------------------------------
// Sweep driver

struct ExperimentResult {
  std::vector<TaskOutcome> outcomes;
  json summary;
  fs::path summary_path;

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return !o.ok; }));
  }
};

/// Runs every task not already completed in the registry, on cfg.workers
/// threads, then writes runs/<experiment_id>/summary.json. Task failures are
/// recorded and the sweep continues.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const Registry& registry, std::ostream* log = nullptr) {
  c.validate();
  const std::string exp(to_string(c.experiment_id));
  const std::string recipe = hex64(config_hash(recipe_json(c)));
  const std::vector<Task> tasks = make_tasks(c);

  std::map<std::string, fs::path> done;
  for (const auto& run_id : registry.list_runs(exp)) {
    const fs::path dir = registry.experiment_dir(exp) / run_id;
    const json doc = read_json(dir / "config.json");
    if (doc.at("run").value("status", std::string()) == "Done" && fs::exists(dir / "summary.json")) {
      done.emplace(doc.value("task_key", std::string()), dir);
    }
  }

  ExperimentResult result;
  result.outcomes.resize(tasks.size());
  std::mutex registry_mu;
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};

  auto work = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      const Task& t = tasks[k];
      TaskOutcome& o = result.outcomes[k];
      if (auto it = done.find(t.key); it != done.end()) {
        std::lock_guard lock(registry_mu);
        o = load_outcome(it->second);
        o.task = t;
        o.resumed = true;
      } else {
        o.task = t;
        json task_cfg = {{"experiment", to_json(c)},
                         {"recipe_hash", recipe},
                         {"task_key", t.key},
                         {"task",
                          {{"index", t.index},
                           {"repeat", t.repeat},
                           {"seed", t.seed},
                           {"point", t.point},
                           {"interval", t.interval ? json(*t.interval) : json(nullptr)}}}};
        RunHandle handle;
        {
          std::lock_guard lock(registry_mu);
          handle = registry.create_run(exp, task_cfg);
        }
        o.run_id = handle.record.run_id;
        RunWriter writer(registry, registry_mu, handle);
        try {
          if (c.inject_failure_task && *c.inject_failure_task == t.index) {
            throw Error(ErrorCode::Diverged, "injected failure");
          }
          o.result = run_task(c, t, writer);
          o.ok = true;
        } catch (const std::exception& e) {
          o.ok = false;
          o.error = e.what();
        }
        std::lock_guard lock(registry_mu);
        json summary = {{"task_key", t.key}, {"status", o.ok ? "Done" : "Failed"}};
        if (o.ok) summary["result"] = o.result;
        else summary["error"] = o.error;
        registry.write_summary(handle, summary);
        registry.set_status(handle, o.ok ? RunStatus::Done : RunStatus::Failed);
      }
      const std::size_t n_done = ++finished;
      if (log) {
        std::lock_guard lock(log_mu);
        *log << "[" << n_done << "/" << tasks.size() << "] " << t.key << (o.resumed ? " resumed" : "")
             << (o.ok ? " ok" : " FAILED: " + o.error) << "\n";
        log->flush();
      }
    }
  };

  const std::size_t n_workers = std::min<std::size_t>(c.workers, std::max<std::size_t>(tasks.size(), 1));
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  result.summary = aggregate(c, result.outcomes);
  result.summary_path = registry.experiment_dir(exp) / "summary.json";
  write_file_atomic(result.summary_path, result.summary.dump(2));
  return result;
}

}  // namespace slt
