#pragma once

// Optimizers, checkpoint schedules, and the training loops used by every
// experiment recipe.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "slt_lab/core_math.hpp"
#include "slt_lab/error.hpp"
#include "slt_lab/models.hpp"

namespace slt {

enum class OptimizerKind { SGD, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 0;  // 0 = full batch
  std::size_t max_steps = 1000;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "betas must lie in [0, 1)");
    }
    if (max_steps < 1) throw Error(ErrorCode::InvalidConfig, "max_steps must be >= 1");
    if (weight_decay < 0.0) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
  }
};

/// Stateful optimizer over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) { cfg_.validate(); }

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.kind == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= lr * (grad[i] + cfg_.weight_decay * params[i]);
      }
      return;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) + cfg_.weight_decay * params[i]);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint schedules

enum class Spacing { Linear, Logarithmic, Mixed };

struct CheckpointSchedule {
  Spacing spacing = Spacing::Linear;
  std::size_t count = 100;
  std::size_t total_steps = 1000;
};

namespace detail {

inline std::set<std::size_t> linear_steps(std::size_t count, std::size_t total) {
  std::set<std::size_t> out;
  for (std::size_t k = 1; k <= count; ++k) {
    out.insert(static_cast<std::size_t>(
        std::llround(static_cast<double>(k) * static_cast<double>(total) / static_cast<double>(count))));
  }
  return out;
}

inline std::set<std::size_t> log_steps(std::size_t count, std::size_t total) {
  std::set<std::size_t> out;
  if (count == 1) return {total};
  const double log_total = std::log(static_cast<double>(total));
  for (std::size_t k = 0; k < count; ++k) {
    const double e = log_total * static_cast<double>(k) / static_cast<double>(count - 1);
    out.insert(static_cast<std::size_t>(std::llround(std::exp(e))));
  }
  out.erase(0);
  out.insert(total);
  return out;
}

}  // namespace detail

/// Strictly increasing steps in [1, total_steps], ending at total_steps.
/// Mixed splits the count between linear (floor half) and logarithmic spacing.
inline std::vector<std::size_t> checkpoint_steps(const CheckpointSchedule& schedule) {
  if (schedule.total_steps == 0 || schedule.count == 0) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint count and total_steps must be >= 1");
  }
  if (schedule.count > schedule.total_steps) {
    throw Error(ErrorCode::CountExceedsSteps, "more checkpoints than training steps");
  }
  std::set<std::size_t> steps;
  switch (schedule.spacing) {
    case Spacing::Linear: steps = detail::linear_steps(schedule.count, schedule.total_steps); break;
    case Spacing::Logarithmic: steps = detail::log_steps(schedule.count, schedule.total_steps); break;
    case Spacing::Mixed: {
      const std::size_t n_lin = std::max<std::size_t>(1, schedule.count / 2);
      const std::size_t n_log = std::max<std::size_t>(1, schedule.count - n_lin);
      steps = detail::linear_steps(n_lin, schedule.total_steps);
      steps.merge(detail::log_steps(n_log, schedule.total_steps));
      break;
    }
  }
  steps.erase(0);
  return {steps.begin(), steps.end()};
}

// ---------------------------------------------------------------------------
// Traces

struct MetricRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> train_acc;
  std::optional<double> val_acc;

  bool operator==(const MetricRecord&) const = default;
};

struct Checkpoint {
  std::size_t step = 0;
  ParamVector params;
};

struct TrainingTrace {
  std::vector<MetricRecord> records;
  std::vector<Checkpoint> checkpoints;
  /// Optional per-step minibatch loss; entry k is the loss seen at step k+1.
  std::vector<double> loss_curve;
  bool diverged = false;
  std::size_t diverged_at = 0;

  bool has_validation() const {
    return !records.empty() && std::all_of(records.begin(), records.end(),
                                           [](const MetricRecord& r) { return r.val_acc.has_value(); });
  }

  const Checkpoint* checkpoint_at(std::size_t step) const {
    for (const auto& c : checkpoints) {
      if (c.step == step) return &c;
    }
    return nullptr;
  }
};

struct TrainOptions {
  bool record_loss_curve = false;
  bool keep_checkpoints = true;
  std::function<void(const MetricRecord&)> on_metrics;  // append-only sink
  std::function<bool(const MetricRecord&)> stop_when;   // checked after each record
};

inline MetricRecord evaluate_metrics(const ModelSpec& spec, std::span<const double> params, const GeneratedData& data,
                                     std::size_t step) {
  MetricRecord rec;
  rec.step = step;
  rec.train_loss = forward_loss(spec, params, data.train);
  if (spec.is_classification()) {
    rec.train_acc = accuracy(spec, params, data.train);
    if (data.validation) {
      rec.val_loss = forward_loss(spec, params, *data.validation);
      rec.val_acc = accuracy(spec, params, *data.validation);
    }
  } else if (data.validation) {
    rec.val_loss = forward_loss(spec, params, *data.validation);
  }
  return rec;
}

namespace detail {

/// Draws a minibatch of distinct rows; returns nullopt for full batch.
inline std::optional<Dataset> draw_batch(const Dataset& data, std::size_t batch_size, RngStream& rng,
                                         std::vector<std::size_t>& scratch) {
  if (batch_size == 0 || batch_size >= data.n()) return std::nullopt;
  scratch.resize(data.n());
  std::iota(scratch.begin(), scratch.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::swap(scratch[i], scratch[i + rng.uniform_index(data.n() - i)]);
  }
  return data.subset(std::span<const std::size_t>(scratch.data(), batch_size));
}

}  // namespace detail

/// Trains from `init` for opt.max_steps steps. Divergence is flagged in the
/// returned trace rather than thrown.
inline TrainingTrace train(const ModelSpec& spec, const GeneratedData& data, ParamVector init,
                           const OptimizerConfig& opt, const CheckpointSchedule& schedule, RngStream rng,
                           const TrainOptions& options = {}) {
  opt.validate();
  if (schedule.total_steps != opt.max_steps) {
    throw Error(ErrorCode::InvalidConfig, "schedule total_steps must equal optimizer max_steps");
  }
  const auto steps = checkpoint_steps(schedule);
  TrainingTrace trace;
  ParamVector params = std::move(init);
  Optimizer optimizer(opt, params.size());
  std::vector<double> g(params.size());
  std::vector<std::size_t> scratch;
  std::size_t next = 0;

  for (std::size_t step = 1; step <= opt.max_steps; ++step) {
    const auto batch = detail::draw_batch(data.train, opt.batch_size, rng, scratch);
    double loss;
    try {
      loss = loss_and_grad(spec, params.values, batch ? *batch : data.train, g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss) || !all_finite(g)) {
      trace.diverged = true;
      trace.diverged_at = step;
      return trace;
    }
    if (options.record_loss_curve) trace.loss_curve.push_back(loss);
    optimizer.step(params.values, g);

    if (next < steps.size() && steps[next] == step) {
      ++next;
      MetricRecord rec;
      try {
        rec = evaluate_metrics(spec, params.values, data, step);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        trace.diverged = true;
        trace.diverged_at = step;
        return trace;
      }
      trace.records.push_back(rec);
      if (options.on_metrics) options.on_metrics(rec);
      if (options.keep_checkpoints) trace.checkpoints.push_back({step, params});
      if (options.stop_when && options.stop_when(rec)) break;
    }
  }
  return trace;
}

inline TrainingTrace train(const ModelSpec& spec, const GeneratedData& data, const OptimizerConfig& opt,
                           const CheckpointSchedule& schedule, RngStream rng, const TrainOptions& options = {}) {
  ParamVector init = init_params(spec, rng.child(0x1417));
  return train(spec, data, std::move(init), opt, schedule, rng.child(0xBA7C), options);
}

// ---------------------------------------------------------------------------
// Convergence-driven training

struct ConvergenceConfig {
  std::size_t window = 200;
  double relative_tolerance = 1e-5;
  double absolute_tolerance = 1e-20;  // loss at or below this counts as converged
};

struct ConvergedResult {
  ParamVector params;  // best-loss parameters seen
  double final_loss = 0.0;
  std::size_t steps = 0;
  bool converged = false;  // false when max_steps was hit first
  std::vector<double> loss_history;
};

/// Trains until the best full-data loss improves by less than the relative
/// tolerance over the window, or until max_steps. Throws Diverged.
inline ConvergedResult train_until_converged(const ModelSpec& spec, const Dataset& data, ParamVector init,
                                             const OptimizerConfig& opt, RngStream rng,
                                             const ConvergenceConfig& conv = {}) {
  opt.validate();
  ParamVector params = std::move(init);
  Optimizer optimizer(opt, params.size());
  std::vector<double> g(params.size());
  std::vector<std::size_t> scratch;
  const bool full_batch = opt.batch_size == 0 || opt.batch_size >= data.n();

  ConvergedResult result;
  result.params = params;
  result.final_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_history;  // best loss after each evaluation

  auto consider = [&](double loss, const ParamVector& at) {
    if (!std::isfinite(loss)) throw Error(ErrorCode::Diverged, "training loss became non-finite");
    result.loss_history.push_back(loss);
    if (loss < result.final_loss) {
      result.final_loss = loss;
      result.params = at;
    }
    best_history.push_back(result.final_loss);
  };
  auto converged_now = [&]() {
    if (result.final_loss <= conv.absolute_tolerance) return true;
    const std::size_t stride = full_batch ? 1 : 10;
    const std::size_t lag = std::max<std::size_t>(1, conv.window / stride);
    if (best_history.size() <= lag) return false;
    const double before = best_history[best_history.size() - 1 - lag];
    return (before - result.final_loss) <= conv.relative_tolerance * std::abs(before);
  };

  for (std::size_t step = 1; step <= opt.max_steps; ++step) {
    const auto batch = detail::draw_batch(data, opt.batch_size, rng, scratch);
    double loss;
    try {
      loss = loss_and_grad(spec, params.values, batch ? *batch : data, g);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite) throw Error(ErrorCode::Diverged, "training loss overflow");
      throw;
    }
    if (full_batch) {
      consider(loss, params);
    } else if ((step - 1) % 10 == 0) {
      consider(forward_loss(spec, params.values, data), params);
    }
    result.steps = step;
    if (converged_now()) {
      result.converged = true;
      return result;
    }
    if (!all_finite(g)) throw Error(ErrorCode::Diverged, "gradient became non-finite");
    optimizer.step(params.values, g);
  }
  double last;
  try {
    last = forward_loss(spec, params.values, data);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFinite) throw Error(ErrorCode::Diverged, "training loss overflow");
    throw;
  }
  consider(last, params);
  result.converged = converged_now();
  return result;
}

inline ConvergedResult train_until_converged(const ModelSpec& spec, const Dataset& data, const OptimizerConfig& opt,
                                             RngStream rng, const ConvergenceConfig& conv = {}) {
  ParamVector init = init_params(spec, rng.child(0x1417));
  return train_until_converged(spec, data, std::move(init), opt, rng.child(0xBA7C), conv);
}

}  // namespace slt
