#pragma once

// Grokking detection on accuracy curves, loss-drop transition detection,
// consecutive free-energy pairing, and the Arrhenius rate regression
// log r = a + b·ΔF.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "slt_lab/core_math.hpp"
#include "slt_lab/error.hpp"
#include "slt_lab/llc.hpp"
#include "slt_lab/training.hpp"

namespace slt {

enum class DetectorKind { Smoothing, Raw };

inline std::string_view to_string(DetectorKind k) { return k == DetectorKind::Smoothing ? "smoothing" : "raw"; }

inline DetectorKind detector_from_string(std::string_view s) {
  if (s == "smoothing") return DetectorKind::Smoothing;
  if (s == "raw") return DetectorKind::Raw;
  throw Error(ErrorCode::InvalidConfig, "detector must be 'smoothing' or 'raw'");
}

struct DetectorConfig {
  std::size_t smoothing_window = 10;
  double drop_fraction = 0.10;
  double train_acc_threshold = 0.99;
  double val_acc_threshold = 0.99;
  double val_low_threshold = 0.50;
  DetectorKind kind = DetectorKind::Smoothing;

  void validate() const {
    if (smoothing_window == 0) throw Error(ErrorCode::InvalidConfig, "smoothing_window must be >= 1");
    if (!(drop_fraction > 0.0 && drop_fraction < 1.0)) throw Error(ErrorCode::InvalidConfig, "drop_fraction in (0,1)");
    for (double t : {train_acc_threshold, val_acc_threshold, val_low_threshold}) {
      if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::InvalidConfig, "accuracy thresholds must lie in (0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Grokking

struct GrokSteps {
  std::size_t i = 0;  // memorized
  std::size_t j = 0;  // generalized
  std::size_t r() const { return j - i; }
};

struct GrokEvent {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t r = 0;
  LLCEstimate pre_llc;
  LLCEstimate post_llc;
  double delta_lambda = 0.0;  // post - pre; either sign
};

/// i: first checkpoint with train acc at/above threshold while val acc is
/// below the "memorized" threshold; j: first later checkpoint with val acc at
/// or above its threshold. Steps come from the checkpoint grid.
inline std::optional<GrokSteps> detect_grokking(const TrainingTrace& trace, const DetectorConfig& cfg = {}) {
  cfg.validate();
  if (!trace.has_validation()) {
    throw Error(ErrorCode::MissingValidationMetrics, "grokking detection needs train/val accuracy at every record");
  }
  std::optional<std::size_t> memorized;
  for (std::size_t k = 0; k < trace.records.size(); ++k) {
    const auto& rec = trace.records[k];
    if (!memorized) {
      if (*rec.train_acc >= cfg.train_acc_threshold && *rec.val_acc < cfg.val_low_threshold) memorized = k;
      continue;
    }
    if (*rec.val_acc >= cfg.val_acc_threshold) {
      return GrokSteps{trace.records[*memorized].step, rec.step};
    }
  }
  return std::nullopt;
}

inline GrokEvent make_grok_event(const GrokSteps& steps, LLCEstimate pre, LLCEstimate post) {
  GrokEvent ev;
  ev.i = steps.i;
  ev.j = steps.j;
  ev.r = steps.r();
  ev.delta_lambda = post.lambda_hat - pre.lambda_hat;
  ev.pre_llc = std::move(pre);
  ev.post_llc = std::move(post);
  return ev;
}

// ---------------------------------------------------------------------------
// Loss-drop transitions

struct TransitionSegment {
  std::size_t start = 0;  // step
  std::size_t end = 0;    // step
  double drop = 0.0;      // loss decrease across the segment
  bool operator==(const TransitionSegment&) const = default;
};

struct TransitionDetection {
  std::vector<TransitionSegment> segments;
  bool flat_curve = false;
  DetectorKind kind = DetectorKind::Smoothing;
};

/// Detects transitions on a loss series sampled at `steps`.
/// Smoothing variant: trailing moving average (each smoothed value is placed
/// at the last step of its window); Raw variant: the series as-is. A
/// transition is a maximal run of strictly decreasing values whose total drop
/// is at least drop_fraction of (first − last).
inline TransitionDetection detect_loss_transitions(std::span<const std::size_t> steps, std::span<const double> losses,
                                                   const DetectorConfig& cfg = {}) {
  cfg.validate();
  if (steps.size() != losses.size()) throw Error(ErrorCode::DimensionMismatch, "steps and losses differ in length");
  TransitionDetection out;
  out.kind = cfg.kind;
  const std::size_t window = cfg.kind == DetectorKind::Smoothing ? cfg.smoothing_window : 1;
  if (losses.size() < window) throw Error(ErrorCode::WindowTooLarge, "fewer loss records than the smoothing window");
  const std::vector<double> s = moving_average(losses, window);
  auto step_of = [&](std::size_t t) { return steps[t + window - 1]; };

  const double total_drop = s.front() - s.back();
  if (!(total_drop > 0.0)) {
    out.flat_curve = true;
    return out;
  }
  const double threshold = cfg.drop_fraction * total_drop;
  std::size_t t = 0;
  while (t + 1 < s.size()) {
    if (!(s[t + 1] < s[t])) {
      ++t;
      continue;
    }
    std::size_t end = t + 1;
    while (end + 1 < s.size() && s[end + 1] < s[end]) ++end;
    const double drop = s[t] - s[end];
    if (drop >= threshold) out.segments.push_back({step_of(t), step_of(end), drop});
    t = end;
  }
  return out;
}

/// Uses the per-step loss curve when present, else the checkpoint train losses.
inline TransitionDetection detect_loss_transitions(const TrainingTrace& trace, const DetectorConfig& cfg = {}) {
  std::vector<std::size_t> steps;
  std::vector<double> losses;
  if (!trace.loss_curve.empty()) {
    losses = trace.loss_curve;
    steps.resize(losses.size());
    std::iota(steps.begin(), steps.end(), std::size_t{1});
  } else {
    for (const auto& r : trace.records) {
      steps.push_back(r.step);
      losses.push_back(r.train_loss);
    }
  }
  return detect_loss_transitions(steps, losses, cfg);
}

// ---------------------------------------------------------------------------
// Free-energy pairing

struct TransitionEvent {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t r = 0;
  FreeEnergy F_i;
  FreeEnergy F_j;
  double delta_F = 0.0;  // F_i - F_j
};

struct CheckpointFreeEnergy {
  std::size_t step = 0;
  FreeEnergy F;
};

/// Nearest checkpoint to `step`; ties go to the earlier checkpoint.
inline const CheckpointFreeEnergy& nearest_checkpoint(std::span<const CheckpointFreeEnergy> checkpoints,
                                                      std::size_t step) {
  if (checkpoints.empty()) throw Error(ErrorCode::NoData, "no checkpoint free energies");
  const CheckpointFreeEnergy* best = &checkpoints.front();
  auto dist = [step](std::size_t s) { return s > step ? s - step : step - s; };
  for (const auto& c : checkpoints) {
    const auto d = dist(c.step);
    const auto bd = dist(best->step);
    if (d < bd || (d == bd && c.step < best->step)) best = &c;
  }
  return *best;
}

/// Event k pairs the end of transition k (as i) with the end of transition k+1 (as j).
inline std::vector<TransitionEvent> pair_consecutive(std::span<const TransitionSegment> transitions,
                                                     std::span<const CheckpointFreeEnergy> checkpoints) {
  if (transitions.size() < 2) throw Error(ErrorCode::FewerThanTwoTransitions, "need at least two transitions");
  std::vector<TransitionEvent> events;
  for (std::size_t k = 0; k + 1 < transitions.size(); ++k) {
    TransitionEvent ev;
    ev.i = transitions[k].end;
    ev.j = transitions[k + 1].end;
    if (ev.j <= ev.i) throw Error(ErrorCode::InvalidConfig, "transitions must be ordered and disjoint");
    ev.r = ev.j - ev.i;
    ev.F_i = nearest_checkpoint(checkpoints, ev.i).F;
    ev.F_j = nearest_checkpoint(checkpoints, ev.j).F;
    ev.delta_F = ev.F_i.value - ev.F_j.value;
    events.push_back(ev);
  }
  return events;
}

// ---------------------------------------------------------------------------
// Arrhenius regression

struct RateObservation {
  double delta_F = 0.0;
  double r = 0.0;
};

/// OLS of ln r on ΔF. coefficients = (intercept, slope); the slope estimates β_eff.
inline FitResult arrhenius_fit(std::span<const RateObservation> events) {
  if (events.size() < 3) throw Error(ErrorCode::TooFewEvents, "Arrhenius fit needs at least 3 events");
  Matrix design(events.size(), 2);
  std::vector<double> log_r(events.size());
  for (std::size_t k = 0; k < events.size(); ++k) {
    if (!(events[k].r >= 1.0)) throw Error(ErrorCode::InvalidConfig, "transition times must be >= 1");
    design(k, 0) = 1.0;
    design(k, 1) = events[k].delta_F;
    log_r[k] = std::log(events[k].r);
  }
  return ols_fit(design, log_r);
}

inline std::vector<RateObservation> rate_observations(std::span<const TransitionEvent> events) {
  std::vector<RateObservation> out;
  for (const auto& e : events) out.push_back({e.delta_F, static_cast<double>(e.r)});
  return out;
}

// ---------------------------------------------------------------------------
// Histograms

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

/// Equal-width histogram over [min, max]; no assumption about sign.
inline Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw Error(ErrorCode::NoData, "histogram of no values");
  if (bins == 0) throw Error(ErrorCode::InvalidConfig, "bins must be >= 1");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

}  // namespace slt
