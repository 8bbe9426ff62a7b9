#pragma once

// Localized SGLD sampling around a trained parameter, local learning
// coefficient estimation, and the free-energy approximation built on it.
//
// The sampler targets the tempered, localized posterior
//
//   p(w) ∝ exp(-n β L_n(w) - γ/2 |w - w*|²)
//
// with update
//
//   w ← w + ε/2 · (-n β ∇L̂(w) + γ (w* - w)) + N(0, ε I)
//
// and the estimator is λ̂ = n β (E[L_n(w)] - L_n(w*)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slt_lab/core_math.hpp"
#include "slt_lab/error.hpp"
#include "slt_lab/models.hpp"

namespace slt {

enum class ExperimentId { Q1E1, Q1E2, Q2E1, Q2E2, Q2E3 };

inline std::string_view to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::Q1E1: return "Q1E1";
    case ExperimentId::Q1E2: return "Q1E2";
    case ExperimentId::Q2E1: return "Q2E1";
    case ExperimentId::Q2E2: return "Q2E2";
    case ExperimentId::Q2E3: return "Q2E3";
  }
  return "Unknown";
}

inline ExperimentId experiment_id_from_string(std::string_view s) {
  for (auto id : {ExperimentId::Q1E1, ExperimentId::Q1E2, ExperimentId::Q2E1, ExperimentId::Q2E2, ExperimentId::Q2E3}) {
    if (to_string(id) == s) return id;
  }
  throw Error(ErrorCode::UnknownExperiment, "unknown experiment_id '" + std::string(s) + "'");
}

struct SgldConfig {
  double epsilon = 1e-3;
  double gamma = 1.0;
  std::size_t steps = 2000;
  std::size_t chains = 4;
  double burn_in_fraction = 0.5;
  std::size_t batch_size = 0;       // 0 = automatic: full batch when n <= 512, else 256
  std::optional<double> beta;       // empty = 1 / ln n
  bool inject_noise = true;         // testing hook; false gives deterministic drift only

  void validate() const {
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "SGLD epsilon must be > 0");
    if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "SGLD gamma must be >= 0");
    if (steps < 10) throw Error(ErrorCode::InvalidConfig, "SGLD steps must be >= 10");
    if (chains < 1) throw Error(ErrorCode::InvalidConfig, "SGLD chains must be >= 1");
    if (!(burn_in_fraction > 0.0 && burn_in_fraction < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "burn_in_fraction must lie in (0, 1)");
    }
    if (beta && !(*beta > 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be > 0");
  }

  double beta_for(std::size_t n) const { return beta ? *beta : 1.0 / std::log(static_cast<double>(n)); }
};

/// Sampler defaults per experiment (ε, γ, steps); chains and burn-in are ours.
inline SgldConfig default_sgld_config(ExperimentId id) {
  SgldConfig cfg;
  switch (id) {
    case ExperimentId::Q1E1: cfg.epsilon = 3e-3; cfg.gamma = 5.0; cfg.steps = 500; break;
    case ExperimentId::Q1E2: cfg.epsilon = 5e-4; cfg.gamma = 1.0; cfg.steps = 400; break;
    case ExperimentId::Q2E1: cfg.epsilon = 1e-3; cfg.gamma = 1.0; cfg.steps = 2000; break;
    case ExperimentId::Q2E2: cfg.epsilon = 1e-3; cfg.gamma = 1.0; cfg.steps = 2000; break;
    case ExperimentId::Q2E3: cfg.epsilon = 1e-5; cfg.gamma = 1.0; cfg.steps = 2000; break;
  }
  cfg.chains = 4;
  cfg.burn_in_fraction = 0.5;
  return cfg;
}

inline SgldConfig default_sgld_config(std::string_view id) { return default_sgld_config(experiment_id_from_string(id)); }

struct ChainTrace {
  std::vector<double> losses;
  std::size_t accepted_steps = 0;
  bool diverged = false;
};

struct LLCEstimate {
  double lambda_hat = 0.0;
  std::vector<double> per_chain;
  double std_dev = 0.0;
  double anchor_loss = 0.0;
  std::size_t n = 0;
  double beta_used = 0.0;
  bool negative_flag = false;
};

struct FreeEnergy {
  double value = 0.0;
  std::size_t n = 0;
  double loss_term = 0.0;
  double complexity_term = 0.0;
};

// ---------------------------------------------------------------------------
// Objectives

/// Loss/gradient oracle over a model and its dataset with the sampler's
/// batching policy: full batch for n <= 512, otherwise a fresh minibatch per
/// step, with losses recorded on a fixed evaluation batch of min(n, 2048).
class ModelObjective {
 public:
  ModelObjective(const ModelSpec& spec, const Dataset& data, std::size_t batch_size = 0,
                 std::uint64_t eval_seed = 0x5EED)
      : spec_(&spec), data_(&data) {
    batch_size_ = batch_size != 0 ? batch_size : (data.n() <= 512 ? data.n() : 256);
    if (batch_size_ >= data.n()) batch_size_ = data.n();
    if (!full_batch()) {
      const std::size_t m = std::min<std::size_t>(data.n(), 2048);
      if (m < data.n()) {
        std::vector<std::size_t> rows(data.n());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        RngStream rng(eval_seed, 0xE7A1);
        rng.shuffle(rows);
        rows.resize(m);
        std::sort(rows.begin(), rows.end());
        eval_ = data.subset(rows);
      }
    }
  }

  std::size_t n() const { return data_->n(); }
  std::size_t dim() const { return make_layout(*spec_)->total(); }
  bool full_batch() const { return batch_size_ == data_->n(); }

  /// Loss and gradient on the step's batch; for full batch the loss is the evaluation loss.
  double loss_grad(std::span<const double> w, std::span<double> g, RngStream& rng) const {
    if (full_batch()) return loss_and_grad(*spec_, w, *data_, g);
    std::vector<std::size_t> rows(data_->n());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_size_; ++i) std::swap(rows[i], rows[i + rng.uniform_index(data_->n() - i)]);
    const Dataset batch = data_->subset(std::span<const std::size_t>(rows.data(), batch_size_));
    return loss_and_grad(*spec_, w, batch, g);
  }

  double eval_loss(std::span<const double> w) const {
    return forward_loss(*spec_, w, eval_ ? *eval_ : *data_);
  }

 private:
  const ModelSpec* spec_;
  const Dataset* data_;
  std::size_t batch_size_ = 0;
  std::optional<Dataset> eval_;
};

/// Regular-model reference: the Gaussian location model
/// L_n(w) = 1/(2n) Σ |w - x_i|², whose learning coefficient is exactly d/2.
class GaussianLocationObjective {
 public:
  GaussianLocationObjective(std::size_t d, std::size_t n, RngStream rng) : n_(n), mean_(d, 0.0) {
    double sq = 0.0;
    std::vector<double> x(d);
    std::vector<double> sum(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = rng.normal();
        sum[k] += x[k];
        sq += x[k] * x[k];
      }
    }
    double mean_sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      mean_[k] = sum[k] / static_cast<double>(n);
      mean_sq += mean_[k] * mean_[k];
    }
    // mean of |x_i - x̄|² / 2
    offset_ = 0.5 * (sq / static_cast<double>(n) - mean_sq);
  }

  std::size_t n() const { return n_; }
  std::size_t dim() const { return mean_.size(); }
  bool full_batch() const { return true; }
  const std::vector<double>& minimizer() const { return mean_; }

  double loss_grad(std::span<const double> w, std::span<double> g, RngStream&) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double diff = w[k] - mean_[k];
      acc += diff * diff;
      if (!g.empty()) g[k] = diff;
    }
    return offset_ + 0.5 * acc;
  }

  double eval_loss(std::span<const double> w) const {
    RngStream unused;
    return loss_grad(w, {}, unused);
  }

 private:
  std::size_t n_;
  std::vector<double> mean_;
  double offset_ = 0.0;
};

// ---------------------------------------------------------------------------
// Sampling

/// Runs one localized SGLD chain started at the anchor. Records the
/// evaluation loss at each visited point, the anchor first. Divergence
/// (non-finite loss or loss above 1e6 × max(anchor loss, 1)) is flagged.
template <typename Objective>
ChainTrace sgld_chain(const Objective& objective, std::span<const double> anchor, const SgldConfig& cfg,
                      RngStream rng) {
  cfg.validate();
  if (!all_finite(anchor)) throw Error(ErrorCode::NonFinite, "SGLD anchor contains NaN/Inf");
  const std::size_t dim = anchor.size();
  const double n = static_cast<double>(objective.n());
  const double beta = cfg.beta_for(objective.n());
  const double half_eps = 0.5 * cfg.epsilon;
  const double noise_sd = std::sqrt(cfg.epsilon);
  // Past εγ/2 = 1 the Euler localization step is unstable; there the
  // localization part is integrated exactly (an OU step toward the anchor).
  const bool stiff = half_eps * cfg.gamma > 1.0;
  const double decay = std::exp(-half_eps * cfg.gamma);
  const double ou_sd = stiff ? std::sqrt(-std::expm1(-cfg.epsilon * cfg.gamma) / cfg.gamma) : noise_sd;

  std::vector<double> w(anchor.begin(), anchor.end());
  std::vector<double> g(dim);
  ChainTrace trace;
  trace.losses.reserve(cfg.steps);

  double anchor_loss;
  try {
    anchor_loss = objective.eval_loss(anchor);
  } catch (const Error&) {
    trace.diverged = true;
    return trace;
  }
  const double limit = 1e6 * std::max(std::abs(anchor_loss), 1.0);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double batch_loss;
    double recorded;
    try {
      batch_loss = objective.loss_grad(w, g, rng);
      recorded = objective.full_batch() ? batch_loss : objective.eval_loss(w);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      trace.diverged = true;
      return trace;
    }
    if (!std::isfinite(recorded) || recorded > limit || !all_finite(g)) {
      trace.diverged = true;
      return trace;
    }
    trace.losses.push_back(recorded);
    if (stiff) {
      for (std::size_t k = 0; k < dim; ++k) {
        double next = anchor[k] + decay * (w[k] - anchor[k]) - half_eps * beta * n * g[k];
        if (cfg.inject_noise) next += ou_sd * rng.normal();
        w[k] = next;
      }
    } else {
      for (std::size_t k = 0; k < dim; ++k) {
        double delta = half_eps * (-beta * n * g[k] + cfg.gamma * (anchor[k] - w[k]));
        if (cfg.inject_noise) delta += noise_sd * rng.normal();
        w[k] += delta;
      }
    }
    trace.accepted_steps = step + 1;
  }
  return trace;
}

/// λ̂ from chain traces: per chain n·β·(post-burn-in mean loss − anchor loss),
/// averaged over non-diverged chains. Negative values are kept and flagged.
inline LLCEstimate estimate_llc(std::span<const ChainTrace> traces, double anchor_loss, std::size_t n, double beta,
                                double burn_in_fraction) {
  LLCEstimate est;
  est.anchor_loss = anchor_loss;
  est.n = n;
  est.beta_used = beta;
  for (const auto& t : traces) {
    if (t.diverged || t.losses.empty()) continue;
    const auto skip = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(t.losses.size())));
    const std::span<const double> kept(t.losses.data() + skip, t.losses.size() - skip);
    if (kept.empty()) continue;
    double excess = 0.0;
    for (double l : kept) excess += l - anchor_loss;
    excess /= static_cast<double>(kept.size());
    est.per_chain.push_back(static_cast<double>(n) * beta * excess);
  }
  if (est.per_chain.empty()) throw Error(ErrorCode::AllChainsDiverged, "no usable SGLD chain");
  est.lambda_hat = mean(est.per_chain);
  est.std_dev = sample_stddev(est.per_chain);
  est.negative_flag = est.lambda_hat < 0.0;
  return est;
}

/// Runs cfg.chains chains around `anchor` (chain c uses rng.child(c)) and
/// reduces them. `workers` > 1 runs chains concurrently; results do not
/// depend on it.
template <typename Objective>
LLCEstimate estimate_llc_at(const Objective& objective, std::span<const double> anchor, const SgldConfig& cfg,
                            const RngStream& rng, std::size_t workers = 1,
                            std::vector<ChainTrace>* traces_out = nullptr) {
  cfg.validate();
  std::vector<ChainTrace> traces(cfg.chains);
  if (workers <= 1) {
    for (std::size_t c = 0; c < cfg.chains; ++c) traces[c] = sgld_chain(objective, anchor, cfg, rng.child(c));
  } else {
    std::vector<std::future<ChainTrace>> futures;
    for (std::size_t c = 0; c < cfg.chains; ++c) {
      futures.push_back(std::async(std::launch::async, [&, c] { return sgld_chain(objective, anchor, cfg, rng.child(c)); }));
    }
    for (std::size_t c = 0; c < cfg.chains; ++c) traces[c] = futures[c].get();
  }
  const double anchor_loss = objective.eval_loss(anchor);
  auto est = estimate_llc(traces, anchor_loss, objective.n(), cfg.beta_for(objective.n()), cfg.burn_in_fraction);
  if (traces_out) *traces_out = std::move(traces);
  return est;
}

/// F ≈ n·L_n(w*) + λ̂·ln n, natural log.
inline FreeEnergy free_energy(std::size_t n, double anchor_loss, double lambda_hat) {
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "free energy needs n >= 2");
  FreeEnergy f;
  f.n = n;
  f.loss_term = static_cast<double>(n) * anchor_loss;
  f.complexity_term = lambda_hat * std::log(static_cast<double>(n));
  f.value = f.loss_term + f.complexity_term;
  return f;
}

}  // namespace slt
