#pragma once

// The five-model zoo. Every family exposes dataset generation,
// initialization, batch-mean loss and its exact analytic gradient over a
// flat parameter vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "slt_lab/core_math.hpp"
#include "slt_lab/error.hpp"

namespace slt {

enum class Family { ModularAddition, TMS, PolynomialRegressor, LowRankLinear, BottleneckAutoencoder };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::ModularAddition: return "ModularAddition";
    case Family::TMS: return "TMS";
    case Family::PolynomialRegressor: return "PolynomialRegressor";
    case Family::LowRankLinear: return "LowRankLinear";
    case Family::BottleneckAutoencoder: return "BottleneckAutoencoder";
  }
  return "Unknown";
}

inline Family family_from_string(std::string_view s) {
  for (Family f : {Family::ModularAddition, Family::TMS, Family::PolynomialRegressor, Family::LowRankLinear,
                   Family::BottleneckAutoencoder}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown model family '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Architecture constants

struct ModularAdditionSpec {
  std::size_t p = 53;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
};

struct TmsSpec {
  std::size_t n_features = 6;
  std::size_t hidden = 2;
  double sparsity = 0.95;           // probability a feature is zero
  std::vector<double> importance;   // empty means all ones
};

struct PolynomialSpec {
  std::size_t degree = 1;
};

struct LowRankSpec {
  std::size_t d = 100;
  std::size_t r = 10;
};

struct AutoencoderSpec {
  std::size_t d = 100;
  std::size_t hidden = 128;
  std::size_t r = 5;
};

class ModelSpec {
 public:
  using Variant = std::variant<ModularAdditionSpec, TmsSpec, PolynomialSpec, LowRankSpec, AutoencoderSpec>;

  ModelSpec(Variant v) : v_(std::move(v)) { validate(); }  // NOLINT(google-explicit-constructor)

  Family family() const { return static_cast<Family>(v_.index()); }
  const Variant& variant() const noexcept { return v_; }

  template <typename T>
  const T& as() const {
    return std::get<T>(v_);
  }

  std::size_t input_dim() const {
    return std::visit(
        [](const auto& s) -> std::size_t {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ModularAdditionSpec>) return 2;
          else if constexpr (std::is_same_v<T, TmsSpec>) return s.n_features;
          else if constexpr (std::is_same_v<T, PolynomialSpec>) return 1;
          else return s.d;
        },
        v_);
  }

  std::size_t output_dim() const {
    return std::visit(
        [](const auto& s) -> std::size_t {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ModularAdditionSpec>) return s.p;
          else if constexpr (std::is_same_v<T, TmsSpec>) return s.n_features;
          else if constexpr (std::is_same_v<T, PolynomialSpec>) return 1;
          else return s.d;
        },
        v_);
  }

  bool is_classification() const { return family() == Family::ModularAddition; }

  double importance(std::size_t i) const {
    const auto& s = as<TmsSpec>();
    return s.importance.empty() ? 1.0 : s.importance[i];
  }

 private:
  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, ModularAdditionSpec>) {
            if (s.p < 2 || s.embed_dim == 0 || s.hidden == 0) fail("modular addition constants must be positive (p >= 2)");
          } else if constexpr (std::is_same_v<T, TmsSpec>) {
            if (s.n_features == 0 || s.hidden == 0) fail("TMS dimensions must be positive");
            if (!(s.sparsity >= 0.0 && s.sparsity < 1.0)) fail("TMS sparsity must lie in [0, 1)");
            if (!s.importance.empty() && s.importance.size() != s.n_features) fail("TMS importance length mismatch");
          } else if constexpr (std::is_same_v<T, PolynomialSpec>) {
            // degree 0 is a valid constant regressor
          } else if constexpr (std::is_same_v<T, LowRankSpec>) {
            if (s.d == 0 || s.r == 0) fail("low-rank d and r must be >= 1");
            if (s.r > s.d) fail("low-rank r must not exceed d");
          } else {
            if (s.d == 0 || s.r == 0 || s.hidden == 0) fail("autoencoder d, hidden and r must be >= 1");
            if (s.r > s.d) fail("autoencoder r must not exceed d");
          }
        },
        v_);
  }

  Variant v_;
};

// ---------------------------------------------------------------------------
// Parameter layout

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  bool operator==(const Segment&) const = default;
};

class ParamLayout {
 public:
  void add(std::string name, std::vector<std::size_t> shape) {
    Segment seg{std::move(name), total_, std::move(shape)};
    total_ += seg.size();
    segments_.push_back(std::move(seg));
  }

  std::size_t total() const noexcept { return total_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  const Segment& segment(std::string_view name) const {
    for (const auto& s : segments_) {
      if (s.name == name) return s;
    }
    throw Error(ErrorCode::LayoutMismatch, "no segment named '" + std::string(name) + "'");
  }

  /// FNV-1a over segment names and shapes, rendered as 16 hex digits.
  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t byte) {
      h ^= byte;
      h *= 0x100000001b3ULL;
    };
    for (const auto& s : segments_) {
      for (unsigned char c : s.name) mix(c);
      mix(0xFF);
      for (auto dim : s.shape) {
        for (int b = 0; b < 8; ++b) mix((dim >> (8 * b)) & 0xFF);
      }
      mix(0xFE);
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
      h >>= 4;
    }
    return out;
  }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Flat parameter state plus the per-family segment map.
struct ParamVector {
  std::vector<double> values;
  std::shared_ptr<const ParamLayout> layout;

  std::size_t size() const noexcept { return values.size(); }

  std::span<double> segment(std::string_view name) {
    const auto& s = layout->segment(name);
    return {values.data() + s.offset, s.size()};
  }
  std::span<const double> segment(std::string_view name) const {
    const auto& s = layout->segment(name);
    return {values.data() + s.offset, s.size()};
  }
};

inline std::shared_ptr<const ParamLayout> make_layout(const ModelSpec& spec) {
  auto layout = std::make_shared<ParamLayout>();
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ModularAdditionSpec>) {
          layout->add("embedding", {s.p, s.embed_dim});
          layout->add("hidden.weight", {s.hidden, 2 * s.embed_dim});
          layout->add("hidden.bias", {s.hidden});
          layout->add("readout.weight", {s.p, s.hidden});
          layout->add("readout.bias", {s.p});
        } else if constexpr (std::is_same_v<T, TmsSpec>) {
          layout->add("W", {s.hidden, s.n_features});
          layout->add("b", {s.n_features});
        } else if constexpr (std::is_same_v<T, PolynomialSpec>) {
          layout->add("coefficients", {s.degree + 1});
        } else if constexpr (std::is_same_v<T, LowRankSpec>) {
          layout->add("W1", {s.r, s.d});
          layout->add("W2", {s.d, s.r});
        } else {
          layout->add("encoder.0.weight", {s.hidden, s.d});
          layout->add("encoder.0.bias", {s.hidden});
          layout->add("encoder.1.weight", {s.r, s.hidden});
          layout->add("encoder.1.bias", {s.r});
          layout->add("decoder.0.weight", {s.hidden, s.r});
          layout->add("decoder.0.bias", {s.hidden});
          layout->add("decoder.1.weight", {s.d, s.hidden});
          layout->add("decoder.1.bias", {s.d});
        }
      },
      spec.variant());
  return layout;
}

inline ParamVector zero_params(const ModelSpec& spec) {
  auto layout = make_layout(spec);
  return ParamVector{std::vector<double>(layout->total(), 0.0), layout};
}

// ---------------------------------------------------------------------------
// Data

/// Regression targets live in `targets`; classification targets in `labels`.
struct Dataset {
  Matrix inputs;
  Matrix targets;
  std::vector<std::uint32_t> labels;

  std::size_t n() const noexcept { return inputs.rows(); }
  bool is_classification() const noexcept { return !labels.empty(); }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.inputs = Matrix(rows.size(), inputs.cols());
    if (!is_classification()) out.targets = Matrix(rows.size(), targets.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(inputs.row(rows[i]).begin(), inputs.cols(), out.inputs.row(i).begin());
      if (is_classification()) {
        out.labels.push_back(labels[rows[i]]);
      } else {
        std::copy_n(targets.row(rows[i]).begin(), targets.cols(), out.targets.row(i).begin());
      }
    }
    return out;
  }
};

/// Family-specific generation settings. Fields irrelevant to a family are ignored.
struct TaskParams {
  std::size_t n_samples = 500;
  double train_fraction = 0.4;        // ModularAddition
  double interval_half_width = 1.0;   // PolynomialRegressor: X = [-h, h]
  std::vector<double> coefficients;   // PolynomialRegressor: fixed teacher when non-empty
};

struct GeneratedData {
  Dataset train;
  std::optional<Dataset> validation;
  /// Teacher parameters in the model's own layout when the data is
  /// realizable by the family (polynomial, low-rank); otherwise empty.
  std::vector<double> teacher;
  /// Mixing matrix A (d x r) for the autoencoder family.
  Matrix mixing;
};

inline GeneratedData generate_dataset(const ModelSpec& spec, const TaskParams& task, RngStream rng) {
  GeneratedData out;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ModularAdditionSpec>) {
          if (!(task.train_fraction > 0.0 && task.train_fraction < 1.0)) {
            throw Error(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)");
          }
          const std::size_t total = s.p * s.p;
          Dataset all;
          all.inputs = Matrix(total, 2);
          all.labels.resize(total);
          for (std::size_t a = 0; a < s.p; ++a) {
            for (std::size_t b = 0; b < s.p; ++b) {
              const std::size_t i = a * s.p + b;
              all.inputs(i, 0) = static_cast<double>(a);
              all.inputs(i, 1) = static_cast<double>(b);
              all.labels[i] = static_cast<std::uint32_t>((a + b) % s.p);
            }
          }
          std::vector<std::size_t> order(total);
          std::iota(order.begin(), order.end(), std::size_t{0});
          rng.shuffle(order);
          const auto n_train = static_cast<std::size_t>(std::floor(task.train_fraction * static_cast<double>(total)));
          if (n_train == 0 || n_train == total) throw Error(ErrorCode::InvalidConfig, "train split is empty or total");
          std::vector<std::size_t> train_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
          std::vector<std::size_t> val_rows(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
          std::sort(train_rows.begin(), train_rows.end());
          std::sort(val_rows.begin(), val_rows.end());
          out.train = all.subset(train_rows);
          out.validation = all.subset(val_rows);
        } else if constexpr (std::is_same_v<T, TmsSpec>) {
          if (task.n_samples == 0) throw Error(ErrorCode::InvalidConfig, "n_samples must be >= 1");
          Matrix x(task.n_samples, s.n_features);
          for (auto& v : x.data()) {
            const bool active = rng.uniform() >= s.sparsity;
            const double value = rng.uniform();
            v = active ? value : 0.0;
          }
          out.train.inputs = x;
          out.train.targets = std::move(x);
        } else if constexpr (std::is_same_v<T, PolynomialSpec>) {
          if (task.n_samples == 0) throw Error(ErrorCode::InvalidConfig, "n_samples must be >= 1");
          if (!(task.interval_half_width > 0.0)) throw Error(ErrorCode::InvalidConfig, "interval half-width must be > 0");
          std::vector<double> coef = task.coefficients;
          if (coef.empty()) {
            coef.resize(s.degree + 1);
            for (auto& c : coef) c = rng.uniform(-1.0, 1.0);
          } else if (coef.size() != s.degree + 1) {
            throw Error(ErrorCode::InvalidConfig, "teacher coefficient count must equal degree + 1");
          }
          const double h = task.interval_half_width;
          out.train.inputs = Matrix(task.n_samples, 1);
          out.train.targets = Matrix(task.n_samples, 1);
          for (std::size_t i = 0; i < task.n_samples; ++i) {
            const double x = rng.uniform(-h, h);
            out.train.inputs(i, 0) = x;
            out.train.targets(i, 0) = polyval(coef, x);
          }
          out.teacher = std::move(coef);
        } else if constexpr (std::is_same_v<T, LowRankSpec>) {
          if (task.n_samples == 0) throw Error(ErrorCode::InvalidConfig, "n_samples must be >= 1");
          const double scale = 1.0 / std::sqrt(static_cast<double>(s.d));
          std::vector<double> teacher(2 * s.r * s.d);
          for (auto& v : teacher) v = rng.normal(0.0, scale);
          ConstEigenMap a(teacher.data(), static_cast<Eigen::Index>(s.r), static_cast<Eigen::Index>(s.d));
          ConstEigenMap b(teacher.data() + s.r * s.d, static_cast<Eigen::Index>(s.d), static_cast<Eigen::Index>(s.r));
          Matrix x(task.n_samples, s.d);
          for (auto& v : x.data()) v = rng.normal();
          Matrix y(task.n_samples, s.d);
          y.eigen().noalias() = (x.eigen() * a.transpose()) * b.transpose();
          out.train.inputs = std::move(x);
          out.train.targets = std::move(y);
          out.teacher = std::move(teacher);
        } else {
          if (task.n_samples == 0) throw Error(ErrorCode::InvalidConfig, "n_samples must be >= 1");
          const double scale = 1.0 / std::sqrt(static_cast<double>(s.r));
          Matrix mixing(s.d, s.r);
          for (auto& v : mixing.data()) v = rng.normal(0.0, scale);
          Matrix z(task.n_samples, s.r);
          for (auto& v : z.data()) v = rng.normal();
          Matrix x(task.n_samples, s.d);
          x.eigen().noalias() = z.eigen() * mixing.eigen().transpose();
          out.train.inputs = x;
          out.train.targets = std::move(x);
          out.mixing = std::move(mixing);
        }
      },
      spec.variant());
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

inline ParamVector init_params(const ModelSpec& spec, RngStream rng) {
  ParamVector params = zero_params(spec);
  auto gaussian = [&](std::string_view name, double fan_in) {
    const double sd = 1.0 / std::sqrt(fan_in);
    for (auto& v : params.segment(name)) v = rng.normal(0.0, sd);
  };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ModularAdditionSpec>) {
          gaussian("embedding", 1.0);  // one-hot input: fan_in 1
          gaussian("hidden.weight", static_cast<double>(2 * s.embed_dim));
          gaussian("readout.weight", static_cast<double>(s.hidden));
        } else if constexpr (std::is_same_v<T, TmsSpec>) {
          gaussian("W", static_cast<double>(s.n_features));
        } else if constexpr (std::is_same_v<T, PolynomialSpec>) {
          for (auto& v : params.segment("coefficients")) v = rng.uniform(-0.1, 0.1);
        } else if constexpr (std::is_same_v<T, LowRankSpec>) {
          // balanced factors: both N(0, 1/d)
          gaussian("W1", static_cast<double>(s.d));
          gaussian("W2", static_cast<double>(s.d));
        } else {
          gaussian("encoder.0.weight", static_cast<double>(s.d));
          gaussian("encoder.1.weight", static_cast<double>(s.hidden));
          gaussian("decoder.0.weight", static_cast<double>(s.r));
          gaussian("decoder.1.weight", static_cast<double>(s.hidden));
        }
      },
      spec.variant());
  return params;
}

// ---------------------------------------------------------------------------
// Loss and gradient

namespace detail {

inline Eigen::Map<const EigenMatrix> cmat(std::span<const double> p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {p.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline Eigen::Map<EigenMatrix> mmat(std::span<double> p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return {p.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline Eigen::Map<const Eigen::RowVectorXd> cvec(std::span<const double> p, std::size_t offset, std::size_t n) {
  return {p.data() + offset, static_cast<Eigen::Index>(n)};
}
inline Eigen::Map<Eigen::RowVectorXd> mvec(std::span<double> p, std::size_t offset, std::size_t n) {
  return {p.data() + offset, static_cast<Eigen::Index>(n)};
}

inline void check_regression_batch(const ModelSpec& spec, const Dataset& batch) {
  if (batch.is_classification() || batch.inputs.cols() != spec.input_dim() ||
      batch.targets.cols() != spec.output_dim() || batch.targets.rows() != batch.inputs.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "batch shape does not match the model spec");
  }
}

/// One dense layer y = x W^T + b, optional ReLU; weight (out x in) followed by bias (out).
struct DenseLayer {
  std::size_t in;
  std::size_t out;
  std::size_t offset;
  bool relu;
};

/// Forward/backward through a stack of dense layers. `grad` may be empty.
/// Returns the gradient with respect to the stack input when requested.
class DenseStack {
 public:
  explicit DenseStack(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {}

  const EigenMatrix& forward(std::span<const double> params, const EigenMatrix& input) {
    pre_.resize(layers_.size());
    act_.resize(layers_.size() + 1);
    act_[0] = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      auto w = cmat(params, L.offset, L.out, L.in);
      auto b = cvec(params, L.offset + L.out * L.in, L.out);
      pre_[l].noalias() = act_[l] * w.transpose();
      pre_[l].rowwise() += b;
      act_[l + 1] = L.relu ? EigenMatrix(pre_[l].cwiseMax(0.0)) : pre_[l];
    }
    return act_.back();
  }

  /// `d_out` is dLoss/dOutput. Accumulates into `grad`; returns dLoss/dInput.
  EigenMatrix backward(std::span<const double> params, EigenMatrix d_out, std::span<double> grad) {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      if (L.relu) d_out = d_out.cwiseProduct((pre_[l].array() > 0.0).cast<double>().matrix());
      auto gw = mmat(grad, L.offset, L.out, L.in);
      auto gb = mvec(grad, L.offset + L.out * L.in, L.out);
      gw.noalias() += d_out.transpose() * act_[l];
      gb += d_out.colwise().sum();
      auto w = cmat(params, L.offset, L.out, L.in);
      EigenMatrix d_in = d_out * w;
      d_out = std::move(d_in);
    }
    return d_out;
  }

 private:
  std::vector<DenseLayer> layers_;
  std::vector<EigenMatrix> pre_;
  std::vector<EigenMatrix> act_;
};

inline double modular_loss_grad(const ModularAdditionSpec& s, std::span<const double> params, const Dataset& batch,
                                std::span<double> grad) {
  if (!batch.is_classification() || batch.inputs.cols() != 2) {
    throw Error(ErrorCode::DimensionMismatch, "modular addition expects (a, b) inputs with class labels");
  }
  const std::size_t n = batch.n();
  const std::size_t e = s.embed_dim;
  const std::size_t off_hidden = s.p * e;
  const std::size_t off_readout = off_hidden + s.hidden * 2 * e + s.hidden;
  auto embedding = cmat(params, 0, s.p, e);

  EigenMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(2 * e));
  std::vector<std::size_t> tok_a(n), tok_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    tok_a[i] = static_cast<std::size_t>(batch.inputs(i, 0));
    tok_b[i] = static_cast<std::size_t>(batch.inputs(i, 1));
    if (tok_a[i] >= s.p || tok_b[i] >= s.p || batch.labels[i] >= s.p) {
      throw Error(ErrorCode::DimensionMismatch, "token or label outside Z_p");
    }
    const auto row = static_cast<Eigen::Index>(i);
    x.row(row).head(static_cast<Eigen::Index>(e)) = embedding.row(static_cast<Eigen::Index>(tok_a[i]));
    x.row(row).tail(static_cast<Eigen::Index>(e)) = embedding.row(static_cast<Eigen::Index>(tok_b[i]));
  }

  DenseStack stack({{2 * e, s.hidden, off_hidden, true}, {s.hidden, s.p, off_readout, false}});
  const EigenMatrix& logits = stack.forward(params, x);

  long double loss = 0.0L;
  EigenMatrix d_logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.p));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    Eigen::Index arg = 0;
    const double mx = row.maxCoeff(&arg);
    const Eigen::RowVectorXd ex = (row.array() - mx).exp().matrix();
    const double z = ex.sum();
    // summing the tail apart from the leading 1 keeps log z accurate
    double rest = 0.0;
    for (Eigen::Index k = 0; k < ex.size(); ++k) {
      if (k != arg) rest += ex(k);
    }
    loss += static_cast<long double>(std::log1p(rest)) +
            static_cast<long double>(mx - row(static_cast<Eigen::Index>(batch.labels[i])));
    if (!grad.empty()) {
      d_logits.row(static_cast<Eigen::Index>(i)) = ex / z;
      d_logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(batch.labels[i])) -= 1.0;
    }
  }
  const double mean_loss = static_cast<double>(loss / static_cast<long double>(n));
  if (grad.empty()) return mean_loss;

  d_logits /= static_cast<double>(n);
  const EigenMatrix dx = stack.backward(params, std::move(d_logits), grad);
  auto g_embed = mmat(grad, 0, s.p, e);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    g_embed.row(static_cast<Eigen::Index>(tok_a[i])) += dx.row(row).head(static_cast<Eigen::Index>(e));
    g_embed.row(static_cast<Eigen::Index>(tok_b[i])) += dx.row(row).tail(static_cast<Eigen::Index>(e));
  }
  return mean_loss;
}

inline double tms_loss_grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch,
                            std::span<double> grad) {
  const auto& s = spec.as<TmsSpec>();
  check_regression_batch(spec, batch);
  const auto n = static_cast<double>(batch.n());
  auto w = cmat(params, 0, s.hidden, s.n_features);
  auto b = cvec(params, s.hidden * s.n_features, s.n_features);
  const auto x = batch.inputs.eigen();
  Eigen::RowVectorXd importance(static_cast<Eigen::Index>(s.n_features));
  for (std::size_t i = 0; i < s.n_features; ++i) importance(static_cast<Eigen::Index>(i)) = spec.importance(i);

  const EigenMatrix h = x * w.transpose();
  EigenMatrix z = h * w;
  z.rowwise() += b;
  const EigenMatrix err = z.cwiseMax(0.0) - batch.targets.eigen();
  const double loss = (err.array().square().rowwise() * importance.array()).sum() / n;
  if (grad.empty()) return loss;

  EigenMatrix dz = (err.array().rowwise() * importance.array()).matrix() * (2.0 / n);
  dz = dz.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
  auto gw = mmat(grad, 0, s.hidden, s.n_features);
  auto gb = mvec(grad, s.hidden * s.n_features, s.n_features);
  gb += dz.colwise().sum();
  const EigenMatrix dh = dz * w.transpose();
  gw.noalias() += h.transpose() * dz;
  gw.noalias() += dh.transpose() * x;
  return loss;
}

inline double polynomial_loss_grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch,
                                   std::span<double> grad) {
  check_regression_batch(spec, batch);
  const std::size_t n = batch.n();
  const std::size_t k = params.size();
  EigenMatrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const double x = batch.inputs(i, 0);
    double p = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p;
      p *= x;
    }
  }
  const Eigen::Map<const Eigen::VectorXd> a(params.data(), static_cast<Eigen::Index>(k));
  const Eigen::Map<const Eigen::VectorXd> y(batch.targets.data().data(), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd err = v * a - y;
  const double loss = err.squaredNorm() / static_cast<double>(n);
  if (!grad.empty()) {
    Eigen::Map<Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(k));
    g.noalias() += (2.0 / static_cast<double>(n)) * (v.transpose() * err);
  }
  return loss;
}

inline double lowrank_loss_grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch,
                                std::span<double> grad) {
  const auto& s = spec.as<LowRankSpec>();
  check_regression_batch(spec, batch);
  const auto n = static_cast<double>(batch.n());
  auto w1 = cmat(params, 0, s.r, s.d);
  auto w2 = cmat(params, s.r * s.d, s.d, s.r);
  const auto x = batch.inputs.eigen();
  const EigenMatrix h = x * w1.transpose();
  EigenMatrix err = h * w2.transpose();
  err -= batch.targets.eigen();
  const double loss = err.squaredNorm() / n;
  if (grad.empty()) return loss;

  err *= 2.0 / n;
  auto g1 = mmat(grad, 0, s.r, s.d);
  auto g2 = mmat(grad, s.r * s.d, s.d, s.r);
  g2.noalias() += err.transpose() * h;
  const EigenMatrix dh = err * w2;
  g1.noalias() += dh.transpose() * x;
  return loss;
}

inline double autoencoder_loss_grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch,
                                    std::span<double> grad) {
  const auto& s = spec.as<AutoencoderSpec>();
  check_regression_batch(spec, batch);
  const auto n = static_cast<double>(batch.n());
  std::size_t off = 0;
  std::vector<DenseLayer> layers;
  auto push = [&](std::size_t in, std::size_t out, bool relu) {
    layers.push_back({in, out, off, relu});
    off += in * out + out;
  };
  push(s.d, s.hidden, true);
  push(s.hidden, s.r, false);
  push(s.r, s.hidden, true);
  push(s.hidden, s.d, false);
  DenseStack stack(std::move(layers));
  const EigenMatrix input = batch.inputs.eigen();
  EigenMatrix err = stack.forward(params, input);
  err -= batch.targets.eigen();
  const double loss = err.squaredNorm() / n;
  if (!grad.empty()) {
    err *= 2.0 / n;
    stack.backward(params, std::move(err), grad);
  }
  return loss;
}

}  // namespace detail

/// Batch-mean loss; when `grad` is non-empty it is overwritten with the
/// exact gradient. Throws NonFinite if the loss overflows.
inline double loss_and_grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch,
                            std::span<double> grad) {
  const std::size_t expected = make_layout(spec)->total();
  if (params.size() != expected) throw Error(ErrorCode::DimensionMismatch, "parameter count does not match spec");
  if (!grad.empty() && grad.size() != expected) throw Error(ErrorCode::DimensionMismatch, "gradient buffer size");
  if (batch.n() == 0) throw Error(ErrorCode::DimensionMismatch, "empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  switch (spec.family()) {
    case Family::ModularAddition: loss = detail::modular_loss_grad(spec.as<ModularAdditionSpec>(), params, batch, grad); break;
    case Family::TMS: loss = detail::tms_loss_grad(spec, params, batch, grad); break;
    case Family::PolynomialRegressor: loss = detail::polynomial_loss_grad(spec, params, batch, grad); break;
    case Family::LowRankLinear: loss = detail::lowrank_loss_grad(spec, params, batch, grad); break;
    case Family::BottleneckAutoencoder: loss = detail::autoencoder_loss_grad(spec, params, batch, grad); break;
  }
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "loss overflow");
  return loss;
}

inline double forward_loss(const ModelSpec& spec, std::span<const double> params, const Dataset& batch) {
  return loss_and_grad(spec, params, batch, {});
}

inline std::vector<double> grad(const ModelSpec& spec, std::span<const double> params, const Dataset& batch) {
  std::vector<double> g(params.size());
  loss_and_grad(spec, params, batch, g);
  return g;
}

/// Per-example logits for the classification family, n x p.
inline EigenMatrix modular_logits(const ModularAdditionSpec& s, std::span<const double> params, const Dataset& data) {
  const std::size_t e = s.embed_dim;
  auto embedding = detail::cmat(params, 0, s.p, e);
  EigenMatrix x(static_cast<Eigen::Index>(data.n()), static_cast<Eigen::Index>(2 * e));
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    x.row(row).head(static_cast<Eigen::Index>(e)) = embedding.row(static_cast<Eigen::Index>(data.inputs(i, 0)));
    x.row(row).tail(static_cast<Eigen::Index>(e)) = embedding.row(static_cast<Eigen::Index>(data.inputs(i, 1)));
  }
  const std::size_t off_hidden = s.p * e;
  const std::size_t off_readout = off_hidden + s.hidden * 2 * e + s.hidden;
  detail::DenseStack stack({{2 * e, s.hidden, off_hidden, true}, {s.hidden, s.p, off_readout, false}});
  return stack.forward(params, x);
}

/// Fraction of argmax-correct predictions from a logit matrix; ties go to the
/// lowest class index.
inline double accuracy_from_logits(const EigenMatrix& logits, std::span<const std::uint32_t> labels) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (static_cast<std::uint32_t>(best) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double accuracy(const ModelSpec& spec, std::span<const double> params, const Dataset& data) {
  if (!spec.is_classification() || !data.is_classification()) {
    throw Error(ErrorCode::NotClassification, "accuracy is defined for the modular addition family only");
  }
  return accuracy_from_logits(modular_logits(spec.as<ModularAdditionSpec>(), params, data), data.labels);
}

}  // namespace slt
