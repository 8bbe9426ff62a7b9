#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. Deliberately naive: extended precision, brute-force
// scans, direct set construction.

#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "slt_lab/core_math.hpp"

namespace oracle {

/// Least squares via (XᵀX)⁻¹Xᵀy in long double with Gauss-Jordan elimination.
inline std::vector<long double> normal_equations(const std::vector<std::vector<double>>& x, std::span<const double> y) {
  const std::size_t k = x.front().size();
  std::vector<std::vector<long double>> a(k, std::vector<long double>(k + 1, 0.0L));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r][c] += static_cast<long double>(x[i][r]) * x[i][c];
      a[r][k] += static_cast<long double>(x[i][r]) * y[i];
    }
  }
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    }
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const long double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= k; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<long double> beta(k);
  for (std::size_t r = 0; r < k; ++r) beta[r] = a[r][k] / a[r][r];
  return beta;
}

/// Per-window mean by prefix sums in long double.
inline std::vector<double> moving_average(std::span<const double> xs, std::size_t w) {
  std::vector<long double> prefix(xs.size() + 1, 0.0L);
  for (std::size_t i = 0; i < xs.size(); ++i) prefix[i + 1] = prefix[i] + xs[i];
  std::vector<double> out;
  for (std::size_t t = 0; t + w <= xs.size(); ++t) out.push_back(static_cast<double>((prefix[t + w] - prefix[t]) / w));
  return out;
}

/// Every interval [a, b] (a < b) of the smoothed series that is strictly
/// decreasing throughout, cannot be extended on either side, and drops by at
/// least `fraction` of (first − last). Returned as index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> scan_transitions(const std::vector<double>& s, double fraction) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const double total = s.front() - s.back();
  if (!(total > 0.0)) return out;
  for (std::size_t a = 0; a < s.size(); ++a) {
    for (std::size_t b = a + 1; b < s.size(); ++b) {
      bool decreasing = true;
      for (std::size_t t = a; t < b; ++t) decreasing = decreasing && s[t + 1] < s[t];
      if (!decreasing) break;
      const bool left_max = a == 0 || !(s[a] < s[a - 1]);
      const bool right_max = b + 1 == s.size() || !(s[b + 1] < s[b]);
      if (left_max && right_max && s[a] - s[b] >= fraction * total) out.emplace_back(a, b);
    }
  }
  return out;
}

/// Checkpoint grid built directly as sets.
inline std::set<std::size_t> linear_set(std::size_t count, std::size_t total) {
  std::set<std::size_t> s;
  for (std::size_t k = 1; k <= count; ++k) s.insert(static_cast<std::size_t>(std::llround(double(k) * double(total) / double(count))));
  return s;
}

inline std::set<std::size_t> log_set(std::size_t count, std::size_t total) {
  std::set<std::size_t> s;
  for (std::size_t k = 0; k < count; ++k) {
    const double v = std::pow(double(total), double(k) / double(count - 1));
    const auto r = static_cast<std::size_t>(std::llround(v));
    if (r >= 1) s.insert(r);
  }
  s.insert(total);
  return s;
}

/// Integer grid from explicit spacing, bumping repeats upward.
inline std::vector<std::size_t> grid(const std::vector<double>& values) {
  std::vector<std::size_t> out;
  for (double v : values) {
    std::size_t k = static_cast<std::size_t>(v + 0.5);
    while (!out.empty() && k <= out.back()) ++k;
    out.push_back(k);
  }
  return out;
}

/// Piecewise-constant loss curve of `length` samples with k planted drops,
/// each between 15% and 40% of the total; drops sit at least `gap` samples
/// apart. Optional multiplicative jitter on the flat parts.
struct PlantedCurve {
  std::vector<double> losses;
  std::vector<std::size_t> drop_at;  // index of the first sample after each drop
};

inline PlantedCurve planted_curve(std::size_t k, std::size_t length, std::size_t gap, double jitter,
                                  slt::RngStream& rng) {
  std::vector<double> sizes(k);
  double sum = 0;
  for (auto& d : sizes) {
    d = rng.uniform(0.15, 0.40);
    sum += d;
  }
  const double height = rng.uniform(0.5, 5.0);
  for (auto& d : sizes) d *= height / sum;

  PlantedCurve c;
  std::set<std::size_t> at;
  while (at.size() < k) {
    const std::size_t pos = gap + rng.uniform_index(length - 2 * gap);
    bool ok = true;
    for (auto q : at) ok = ok && (pos > q ? pos - q : q - pos) >= gap;
    if (ok) at.insert(pos);
  }
  c.drop_at.assign(at.begin(), at.end());
  double level = 0.1 + height;
  std::size_t next = 0;
  for (std::size_t t = 0; t < length; ++t) {
    if (next < k && t == c.drop_at[next]) level -= sizes[next++];
    c.losses.push_back(level * (1.0 + jitter * rng.normal()));
  }
  return c;
}

}  // namespace oracle
