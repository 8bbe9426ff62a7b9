#pragma once

// CSV tables and hand-emitted SVG figures built from registry contents.
// Every number drawn as text in a figure also appears in the figure's
// sibling CSV, formatted identically.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slt_lab/error.hpp"
#include "slt_lab/experiments.hpp"
#include "slt_lab/registry.hpp"

namespace slt {

/// Display format shared by SVG text and figure CSVs.
inline std::string fmt_num(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Series {
  enum class Style { Points, Line, Bars };
  std::string name;
  Style style = Style::Points;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> yerr;   // Points only; empty = no error bars
  std::vector<double> width;  // Bars only: bar width in data units
  std::string colour = "#1f77b4";
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<Series> series;
  std::vector<std::pair<std::string, double>> annotations;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Ticks at 1, 2 or 5 × 10^k covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
    ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return ticks;
}

inline std::vector<double> log_ticks(double lo, double hi) {
  std::vector<double> ticks;
  for (int k = static_cast<int>(std::floor(std::log10(lo))); k <= static_cast<int>(std::ceil(std::log10(hi))); ++k) {
    ticks.push_back(std::pow(10.0, k));
  }
  return ticks;
}

struct Axes {
  double x_lo, x_hi, y_lo, y_hi;
  std::vector<double> x_ticks, y_ticks;
};

inline Axes compute_axes(const Figure& f) {
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : f.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double err = s.yerr.empty() ? 0.0 : s.yerr[i];
      const double right = s.style == Series::Style::Bars ? s.x[i] + s.width[i] : s.x[i];
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, right);
      y_lo = std::min(y_lo, s.y[i] - err);
      y_hi = std::max(y_hi, s.y[i] + err);
      if (s.style == Series::Style::Bars) y_lo = std::min(y_lo, 0.0);
    }
  }
  if (!std::isfinite(x_lo)) throw Error(ErrorCode::NoData, "figure has no data");
  Axes a;
  if (f.log_x) {
    a.x_ticks = log_ticks(std::max(x_lo, 1e-300), x_hi);
  } else {
    a.x_ticks = nice_ticks(x_lo, x_hi);
  }
  a.y_ticks = nice_ticks(y_lo, y_hi);
  a.x_lo = std::min(x_lo, a.x_ticks.front());
  a.x_hi = std::max(x_hi, a.x_ticks.back());
  a.y_lo = std::min(y_lo, a.y_ticks.front());
  a.y_hi = std::max(y_hi, a.y_ticks.back());
  if (a.x_hi == a.x_lo) a.x_hi = a.x_lo + 1.0;
  if (a.y_hi == a.y_lo) a.y_hi = a.y_lo + 1.0;
  return a;
}

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

inline constexpr double kSvgWidth = 640, kSvgHeight = 420;
inline constexpr double kLeft = 80, kRight = 160, kTop = 40, kBottom = 56;

inline std::string render_svg(const Figure& f) {
  using detail::px;
  const detail::Axes a = detail::compute_axes(f);
  const double plot_w = kSvgWidth - kLeft - kRight;
  const double plot_h = kSvgHeight - kTop - kBottom;
  auto sx = [&](double x) {
    if (f.log_x) {
      return kLeft + plot_w * (std::log10(x) - std::log10(a.x_lo)) / (std::log10(a.x_hi) - std::log10(a.x_lo));
    }
    return kLeft + plot_w * (x - a.x_lo) / (a.x_hi - a.x_lo);
  };
  auto sy = [&](double y) { return kTop + plot_h * (1.0 - (y - a.y_lo) / (a.y_hi - a.y_lo)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgWidth << "\" height=\"" << kSvgHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << kSvgWidth << "\" height=\"" << kSvgHeight << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << px(kLeft) << "\" y=\"22\" font-size=\"14\">" << detail::xml_escape(f.title) << "</text>\n";

  // axes and ticks
  o << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(kTop + plot_h) << "\" x2=\"" << px(kLeft + plot_w) << "\" y2=\""
    << px(kTop + plot_h) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(kLeft) << "\" y2=\"" << px(kTop + plot_h)
    << "\" stroke=\"black\"/>\n";
  for (double t : a.x_ticks) {
    const double x = sx(t);
    o << "<line x1=\"" << px(x) << "\" y1=\"" << px(kTop + plot_h) << "\" x2=\"" << px(x) << "\" y2=\"" << px(kTop + plot_h + 5)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << px(x) << "\" y=\"" << px(kTop + plot_h + 18) << "\" text-anchor=\"middle\">" << fmt_num(t)
      << "</text>\n";
  }
  for (double t : a.y_ticks) {
    const double y = sy(t);
    o << "<line x1=\"" << px(kLeft - 5) << "\" y1=\"" << px(y) << "\" x2=\"" << px(kLeft) << "\" y2=\"" << px(y)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << px(kLeft - 8) << "\" y=\"" << px(y + 4) << "\" text-anchor=\"end\">" << fmt_num(t) << "</text>\n";
  }
  o << "<text x=\"" << px(kLeft + plot_w / 2) << "\" y=\"" << px(kSvgHeight - 14) << "\" text-anchor=\"middle\">"
    << detail::xml_escape(f.x_label) << "</text>\n";
  o << "<text x=\"18\" y=\"" << px(kTop + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << px(kTop + plot_h / 2) << ")\">" << detail::xml_escape(f.y_label) << "</text>\n";

  for (const auto& s : f.series) {
    switch (s.style) {
      case Series::Style::Points:
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!s.yerr.empty() && s.yerr[i] > 0.0) {
            o << "<line x1=\"" << px(sx(s.x[i])) << "\" y1=\"" << px(sy(s.y[i] - s.yerr[i])) << "\" x2=\"" << px(sx(s.x[i]))
              << "\" y2=\"" << px(sy(s.y[i] + s.yerr[i])) << "\" stroke=\"" << s.colour << "\"/>\n";
          }
          o << "<circle cx=\"" << px(sx(s.x[i])) << "\" cy=\"" << px(sy(s.y[i])) << "\" r=\"3\" fill=\"" << s.colour
            << "\"/>\n";
        }
        break;
      case Series::Style::Line: {
        o << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << px(sx(s.x[i])) << "," << px(sy(s.y[i]));
        o << "\"/>\n";
        break;
      }
      case Series::Style::Bars:
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          const double x0 = sx(s.x[i]);
          const double x1 = sx(s.x[i] + s.width[i]);
          const double y0 = sy(std::max(s.y[i], 0.0));
          const double y1 = sy(std::min(s.y[i], 0.0));
          o << "<rect x=\"" << px(x0) << "\" y=\"" << px(y0) << "\" width=\"" << px(x1 - x0) << "\" height=\"" << px(y1 - y0)
            << "\" fill=\"" << s.colour << "\" stroke=\"white\"/>\n";
        }
        break;
    }
  }

  // legend and annotations in the right margin
  double ly = kTop + 6;
  for (const auto& s : f.series) {
    o << "<rect x=\"" << px(kSvgWidth - kRight + 12) << "\" y=\"" << px(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
      << s.colour << "\"/>\n";
    o << "<text x=\"" << px(kSvgWidth - kRight + 28) << "\" y=\"" << px(ly + 1) << "\">" << detail::xml_escape(s.name)
      << "</text>\n";
    ly += 16;
  }
  ly += 8;
  for (const auto& [name, value] : f.annotations) {
    o << "<text x=\"" << px(kSvgWidth - kRight + 12) << "\" y=\"" << px(ly) << "\">" << detail::xml_escape(name) << " = "
      << fmt_num(value) << "</text>\n";
    ly += 16;
  }
  o << "</svg>\n";
  return o.str();
}

/// Sibling table of a figure: every plotted value, tick and annotation.
inline std::string figure_csv(const Figure& f) {
  const detail::Axes a = detail::compute_axes(f);
  std::ostringstream o;
  o << "kind,series,x,y,extra\n";
  for (const auto& s : f.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      switch (s.style) {
        case Series::Style::Points:
          o << "point," << s.name << "," << fmt_num(s.x[i]) << "," << fmt_num(s.y[i]) << ","
            << (s.yerr.empty() ? "" : fmt_num(s.yerr[i])) << "\n";
          break;
        case Series::Style::Line:
          o << "line," << s.name << "," << fmt_num(s.x[i]) << "," << fmt_num(s.y[i]) << ",\n";
          break;
        case Series::Style::Bars:
          o << "bar," << s.name << "," << fmt_num(s.x[i]) << "," << fmt_num(s.y[i]) << "," << fmt_num(s.x[i] + s.width[i])
            << "\n";
          break;
      }
    }
  }
  for (double t : a.x_ticks) o << "tick,x," << fmt_num(t) << ",,\n";
  for (double t : a.y_ticks) o << "tick,y,," << fmt_num(t) << ",\n";
  for (const auto& [name, value] : f.annotations) o << "annotation," << name << ",," << fmt_num(value) << ",\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Experiment reports

struct ReportOutput {
  fs::path directory;
  std::vector<fs::path> files;
  json summary;
};

namespace detail {

inline const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

inline Series sampled_curve(const std::string& name, const std::vector<double>& coef, double lo, double hi, bool log_x,
                            const std::string& colour) {
  Series s{name, Series::Style::Line, {}, {}, {}, {}, colour};
  constexpr int kSamples = 41;
  for (int k = 0; k < kSamples; ++k) {
    const double t = static_cast<double>(k) / (kSamples - 1);
    const double x = log_x ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))) : lo + t * (hi - lo);
    s.x.push_back(x);
    s.y.push_back(polyval(coef, x));
  }
  return s;
}

inline Series histogram_series(const json& h, const std::string& name) {
  Series s{name, Series::Style::Bars, {}, {}, {}, {}, kColours[0]};
  const auto edges = h.at("edges").get<std::vector<double>>();
  const auto counts = h.at("counts").get<std::vector<std::size_t>>();
  for (std::size_t b = 0; b < counts.size(); ++b) {
    s.x.push_back(edges[b]);
    s.width.push_back(edges[b + 1] - edges[b]);
    s.y.push_back(static_cast<double>(counts[b]));
  }
  return s;
}

class ReportWriter {
 public:
  explicit ReportWriter(fs::path dir) : dir_(std::move(dir)) {}

  void file(const std::string& name, const std::string& contents) {
    write_file_atomic(dir_ / name, contents);
    files_.push_back(dir_ / name);
  }

  void figure(const std::string& stem, const Figure& f) {
    const std::string svg = render_svg(f);
    const std::string csv = figure_csv(f);
    file(stem + ".svg", svg);
    file(stem + ".csv", csv);
  }

  std::vector<fs::path> take() { return std::move(files_); }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

inline std::string fit_csv(const json& fit, const std::vector<std::string>& terms) {
  std::string out = "term,value\n";
  if (fit.is_null()) return out;
  const auto coef = fit.at("coefficients").get<std::vector<double>>();
  for (std::size_t k = 0; k < coef.size() && k < terms.size(); ++k) out += terms[k] + "," + format_double(coef[k]) + "\n";
  if (!fit.at("r_squared").is_null()) out += "r_squared," + format_double(fit.at("r_squared").get<double>()) + "\n";
  out += "residual_sum," + format_double(fit.at("residual_sum").get<double>()) + "\n";
  return out;
}

inline Figure arrhenius_figure(const json& events, const json& fit, const std::string& title) {
  Figure f;
  f.title = title;
  f.x_label = "ΔF";
  f.y_label = "ln r";
  Series pts{"events", Series::Style::Points, {}, {}, {}, {}, kColours[0]};
  for (const auto& e : events) {
    pts.x.push_back(e.at("delta_F").get<double>());
    pts.y.push_back(std::log(e.at("r").get<double>()));
  }
  f.series.push_back(pts);
  if (!fit.is_null() && !pts.x.empty()) {
    const auto coef = fit.at("coefficients").get<std::vector<double>>();
    auto [lo, hi] = std::minmax_element(pts.x.begin(), pts.x.end());
    f.series.push_back(sampled_curve("OLS fit", coef, *lo, *hi, false, kColours[1]));
    f.annotations.emplace_back("slope", coef[1]);
    f.annotations.emplace_back("intercept", coef[0]);
    if (!fit.at("r_squared").is_null()) f.annotations.emplace_back("R²", fit.at("r_squared").get<double>());
  }
  return f;
}

}  // namespace detail

/// Rebuilds the experiment summary from the registry (runs sharing the
/// recipe of the most recent run) and writes tables and figures to `out_dir`.
inline ReportOutput write_report(const Registry& registry, ExperimentId id, fs::path out_dir = {}) {
  const std::string exp(to_string(id));
  const auto run_ids = registry.list_runs(exp);
  if (run_ids.empty()) throw Error(ErrorCode::NoData, "no runs recorded for " + exp);
  const json latest = read_json(registry.experiment_dir(exp) / run_ids.back() / "config.json").at("config");
  const ExperimentConfig cfg = config_from_json(latest.at("experiment"));
  const auto outcomes = load_outcomes(registry, id, latest.at("recipe_hash").get<std::string>());
  if (std::none_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.ok; })) {
    throw Error(ErrorCode::NoData, "no completed runs for " + exp);
  }
  ReportOutput out;
  out.summary = aggregate(cfg, outcomes);
  out.directory = out_dir.empty() ? registry.root() / "reports" / exp : out_dir;
  detail::ReportWriter w(out.directory);
  using detail::kColours;

  if (cfg.is_scaling()) {
    const bool poly = id == ExperimentId::Q2E1;
    const std::string what = poly ? "degree" : "rank";

    std::string points_csv = "interval,difficulty,lambda_mean,lambda_std,repeats,flagged_repeats\n";
    for (const auto* group : {&out.summary["points"], &out.summary["flagged_points"]}) {
      for (const auto& p : *group) {
        points_csv += (p["interval"].is_null() ? std::string() : format_double(p["interval"].get<double>())) + "," +
                      format_double(p["difficulty"].get<double>()) + "," + format_double(p["lambda_mean"].get<double>()) +
                      "," + format_double(p["lambda_std"].get<double>()) + "," + std::to_string(p["repeats"].get<std::size_t>()) +
                      "," + std::to_string(p["flagged_repeats"].get<std::size_t>()) + "\n";
      }
    }
    w.file("scaling_points.csv", points_csv);

    std::string repeats_csv = "run_id,interval,difficulty,seed,lambda_hat,std_dev,final_loss,converged\n";
    auto sorted = outcomes;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return std::tuple(a.task.interval.value_or(0.0), a.task.point, a.task.seed, a.run_id) <
             std::tuple(b.task.interval.value_or(0.0), b.task.point, b.task.seed, b.run_id);
    });
    for (const auto& o : sorted) {
      if (!o.ok) continue;
      repeats_csv += o.run_id + "," + (o.task.interval ? format_double(*o.task.interval) : std::string()) + "," +
                     std::to_string(o.task.point) + "," + std::to_string(o.task.seed) + "," +
                     format_double(o.result["lambda_hat"].get<double>()) + "," +
                     format_double(o.result["std_dev"].get<double>()) + "," +
                     format_double(o.result["final_loss"].get<double>()) + "," +
                     (o.result["converged"].get<bool>() ? "true" : "false") + "\n";
    }
    w.file("repeats.csv", repeats_csv);

    Figure f;
    f.title = "Estimated LLC versus " + what;
    f.x_label = what;
    f.y_label = "λ̂";
    f.log_x = poly;
    std::vector<double> intervals;
    for (const auto& p : out.summary["points"]) {
      const double h = p["interval"].is_null() ? 0.0 : p["interval"].get<double>();
      if (std::find(intervals.begin(), intervals.end(), h) == intervals.end()) intervals.push_back(h);
    }
    std::sort(intervals.rbegin(), intervals.rend());
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t k = 0; k < intervals.size(); ++k) {
      Series s{poly ? "X=[-" + fmt_num(intervals[k]) + "," + fmt_num(intervals[k]) + "]" : "λ̂ mean ± sd",
               Series::Style::Points, {}, {}, {}, {}, kColours[k % 5]};
      for (const auto& p : out.summary["points"]) {
        const double h = p["interval"].is_null() ? 0.0 : p["interval"].get<double>();
        if (h != intervals[k]) continue;
        s.x.push_back(p["difficulty"].get<double>());
        s.y.push_back(p["lambda_mean"].get<double>());
        s.yerr.push_back(p["lambda_std"].get<double>());
        lo = std::min(lo, s.x.back());
        hi = std::max(hi, s.x.back());
      }
      f.series.push_back(s);
    }
    if (std::isfinite(lo)) {
      if (poly) {
        f.series.push_back(detail::sampled_curve("theory d/2", {0.0, 0.5}, lo, hi, true, "#7f7f7f"));
      } else {
        const json& fit = out.summary["fit"];
        if (!fit.is_null()) {
          const auto coef = fit["coefficients"].get<std::vector<double>>();
          f.series.push_back(detail::sampled_curve("OLS fit", coef, lo, hi, false, kColours[1]));
          for (std::size_t k = 0; k < coef.size(); ++k) f.annotations.emplace_back("c" + std::to_string(k), coef[k]);
          if (!fit["r_squared"].is_null()) f.annotations.emplace_back("R²", fit["r_squared"].get<double>());
        }
        if (id == ExperimentId::Q2E2) {
          const double d = static_cast<double>(cfg.d);
          f.series.push_back(detail::sampled_curve("theory r(2d-r)/2", {0.0, d, -0.5}, lo, hi, false, "#7f7f7f"));
        }
      }
    }
    w.figure("lambda_vs_" + what, f);
    if (!poly) {
      w.file("fit.csv", detail::fit_csv(out.summary["fit"], id == ExperimentId::Q2E2
                                                                 ? std::vector<std::string>{"intercept", "r", "r^2"}
                                                                 : std::vector<std::string>{"intercept", "r"}));
    }
  } else if (id == ExperimentId::Q1E1) {
    const json& events = out.summary["events"];
    std::string ev_csv = "run_id,seed,i,j,r,log_r,pre_lambda,post_lambda,delta_lambda,F_i,F_j,delta_F\n";
    for (const auto& e : events) {
      ev_csv += e["run_id"].get<std::string>() + "," + std::to_string(e["seed"].get<std::uint64_t>()) + "," +
                std::to_string(e["i"].get<std::size_t>()) + "," + std::to_string(e["j"].get<std::size_t>()) + "," +
                std::to_string(e["r"].get<std::size_t>()) + "," + format_double(std::log(e["r"].get<double>())) + "," +
                format_double(e["pre_lambda"].get<double>()) + "," + format_double(e["post_lambda"].get<double>()) + "," +
                format_double(e["delta_lambda"].get<double>()) + "," + format_double(e["F_i"].get<double>()) + "," +
                format_double(e["F_j"].get<double>()) + "," + format_double(e["delta_F"].get<double>()) + "\n";
    }
    w.file("grok_events.csv", ev_csv);
    w.file("grok_summary.csv", "runs_completed,runs_grokked,grok_fraction\n" +
                                   std::to_string(out.summary["runs_completed"].get<std::size_t>()) + "," +
                                   std::to_string(out.summary["runs_grokked"].get<std::size_t>()) + "," +
                                   format_double(out.summary["grok_fraction"].get<double>()) + "\n");
    w.file("arrhenius_fit.csv", detail::fit_csv(out.summary["fit"], {"intercept", "slope"}));
    if (!events.empty()) {
      w.figure("arrhenius", detail::arrhenius_figure(events, out.summary["fit"], "Transition time versus free-energy change"));
      const json& hist = out.summary["histograms"];
      Figure dl{"Distribution of Δλ", "Δλ (post − pre)", "runs", false, {detail::histogram_series(hist["delta_lambda"], "Δλ")}, {}};
      Figure lr{"Distribution of ln r", "ln r", "runs", false, {detail::histogram_series(hist["log_r"], "ln r")}, {}};
      w.figure("delta_lambda_hist", dl);
      w.figure("log_r_hist", lr);
    }
  } else {
    std::string det_csv = "detector,runs_used,runs_excluded,events,intercept,slope,r_squared\n";
    for (const auto& d : out.summary["detectors"]) {
      const std::string name = d["detector"].get<std::string>();
      const json& fit = d["fit"];
      det_csv += name + "," + std::to_string(d["runs_used"].get<std::size_t>()) + "," +
                 std::to_string(d["runs_excluded"].get<std::size_t>()) + "," + std::to_string(d["events"].size());
      if (fit.is_null()) {
        det_csv += ",,,\n";
      } else {
        const auto coef = fit["coefficients"].get<std::vector<double>>();
        det_csv += "," + format_double(coef[0]) + "," + format_double(coef[1]) + "," +
                   (fit["r_squared"].is_null() ? std::string() : format_double(fit["r_squared"].get<double>())) + "\n";
      }
      std::string ev_csv = "run_id,seed,i,j,r,log_r,F_i,F_j,delta_F\n";
      for (const auto& e : d["events"]) {
        ev_csv += e["run_id"].get<std::string>() + "," + std::to_string(e["seed"].get<std::uint64_t>()) + "," +
                  std::to_string(e["i"].get<std::size_t>()) + "," + std::to_string(e["j"].get<std::size_t>()) + "," +
                  std::to_string(e["r"].get<std::size_t>()) + "," + format_double(std::log(e["r"].get<double>())) + "," +
                  format_double(e["F_i"].get<double>()) + "," + format_double(e["F_j"].get<double>()) + "," +
                  format_double(e["delta_F"].get<double>()) + "\n";
      }
      w.file("transition_events_" + name + ".csv", ev_csv);
      if (!d["events"].empty()) {
        w.figure("arrhenius_" + name, detail::arrhenius_figure(d["events"], fit, "Transition time versus ΔF (" + name + " detector)"));
      }
    }
    w.file("detector_summary.csv", det_csv);
  }
  w.file("summary.json", out.summary.dump(2) + "\n");
  out.files = w.take();
  return out;
}

}  // namespace slt
