#pragma once

// Dense linear algebra, seeded randomness, least squares, smoothing and
// finite-difference gradient checks shared by every other header.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slt_lab/error.hpp"

namespace slt {

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenMatrix>;
using ConstEigenMap = Eigen::Map<const EigenMatrix>;

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorCode::DimensionMismatch, "matrix data length does not equal rows*cols");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  EigenMap eigen() { return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)}; }
  ConstEigenMap eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Random numbers

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// xoshiro256** stream keyed by (seed, stream_id). The same key yields the
/// same sequence on every platform with IEEE doubles.
class RngStream {
 public:
  RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0) : seed_(seed), stream_id_(stream_id) {
    std::uint64_t sm = seed ^ (stream_id * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL);
    // Mix stream_id in twice so nearby ids decorrelate.
    std::uint64_t mix = stream_id;
    sm ^= detail::splitmix64(mix);
    for (auto& s : state_) s = detail::splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Independent stream for parallel work; never share one stream.
  RngStream child(std::uint64_t sub_id) const {
    std::uint64_t sm = stream_id_ ^ (sub_id + 0x632BE59BD9B4E019ULL);
    return RngStream(seed_, detail::splitmix64(sm));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection, unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::swap(xs[i - 1], xs[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Least squares

struct FitResult {
  std::vector<double> coefficients;  // constant term first when the design has one
  std::optional<double> r_squared;   // empty when the targets have zero variance
  double residual_sum = 0.0;
};

/// Least-squares fit of `targets` on the columns of `features` using a
/// column-pivoted Householder QR.
inline FitResult ols_fit(const Matrix& features, std::span<const double> targets) {
  const std::size_t n = features.rows();
  const std::size_t k = features.cols();
  if (targets.size() != n) throw Error(ErrorCode::DimensionMismatch, "targets length != design rows");
  if (k == 0 || n < k) throw Error(ErrorCode::RankDeficient, "need at least as many points as features");
  if (!all_finite(features.data()) || !all_finite(targets)) {
    throw Error(ErrorCode::NonFinite, "design matrix or targets contain NaN/Inf");
  }

  const Eigen::MatrixXd design = features.eigen();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(n));

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  const auto& r = qr.matrixR();
  const double r00 = std::abs(r(0, 0));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(k); ++i) {
    if (r00 == 0.0 || std::abs(r(i, i)) <= 1e-10 * r00) {
      throw Error(ErrorCode::RankDeficient, "design columns are linearly dependent");
    }
  }
  const Eigen::VectorXd beta = qr.solve(y);

  FitResult fit;
  fit.coefficients.assign(beta.data(), beta.data() + beta.size());
  const Eigen::VectorXd residual = y - design * beta;
  fit.residual_sum = residual.squaredNorm();
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot > 0.0) fit.r_squared = 1.0 - fit.residual_sum / ss_tot;
  return fit;
}

/// Design matrix with columns [1, x, x^2, ..., x^degree].
inline Matrix polynomial_design(std::span<const double> xs, std::size_t degree) {
  Matrix design(xs.size(), degree + 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double p = 1.0;
    for (std::size_t j = 0; j <= degree; ++j) {
      design(i, j) = p;
      p *= xs[i];
    }
  }
  return design;
}

/// Evaluates a polynomial with constant-first coefficients.
inline double polyval(std::span<const double> coefficients, double x) {
  double acc = 0.0;
  for (std::size_t i = coefficients.size(); i-- > 0;) acc = acc * x + coefficients[i];
  return acc;
}

// ---------------------------------------------------------------------------
// Smoothing

/// Trailing-window mean: output[t] = mean(series[t .. t+window)).
inline std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "moving_average of an empty series");
  if (window == 0) throw Error(ErrorCode::InvalidConfig, "window must be >= 1");
  if (window > series.size()) throw Error(ErrorCode::WindowTooLarge, "window exceeds series length");
  std::vector<double> out(series.size() - window + 1);
  for (std::size_t t = 0; t < out.size(); ++t) {
    double sum = 0.0;
    for (std::size_t j = 0; j < window; ++j) sum += series[t + j];
    out[t] = sum / static_cast<double>(window);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
template <typename LossFn, typename GradFn>
double gradient_check(LossFn&& loss_fn, GradFn&& grad_fn, std::span<const double> point, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidConfig, "finite-difference step must be positive");
  std::vector<double> w(point.begin(), point.end());
  const std::vector<double> analytic = grad_fn(std::span<const double>(w));
  if (analytic.size() != w.size()) throw Error(ErrorCode::DimensionMismatch, "gradient length mismatch");
  if (!all_finite(analytic)) throw Error(ErrorCode::NonFinite, "analytic gradient is not finite");

  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double original = w[i];
    w[i] = original + step;
    const double plus = loss_fn(std::span<const double>(w));
    w[i] = original - step;
    const double minus = loss_fn(std::span<const double>(w));
    w[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw Error(ErrorCode::NonFinite, "loss not finite at perturbed point");
    }
    const double central = (plus - minus) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Small statistics helpers

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace slt
