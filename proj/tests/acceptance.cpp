// Acceptance checks. One criterion per invocation:
//   acceptance --criterion N --workdir DIR
// Prints "criterion N: PASS|FAIL  <details>" and exits non-zero on FAIL.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "slt_lab/experiments.hpp"
#include "slt_lab/report.hpp"

using namespace slt;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

Dataset random_regression(const ModelSpec& spec, std::size_t n, RngStream& rng) {
  Dataset d;
  d.inputs = Matrix(n, spec.input_dim());
  d.targets = Matrix(n, spec.output_dim());
  for (auto& v : d.inputs.data()) v = rng.normal();
  for (auto& v : d.targets.data()) v = rng.normal();
  return d;
}

ExperimentResult run_logged(const ExperimentConfig& c, const fs::path& workdir) {
  return run_experiment(c, Registry(workdir), &std::cerr);
}

ExperimentConfig desk_q2e2() { return default_config(ExperimentId::Q2E2, Scale::Desk); }

// 1: analytic gradients against central differences, five families, 20 draws each.
Verdict gradients(const fs::path&) {
  constexpr double kStep = 1e-5;
  RngStream rng(101);
  std::map<std::string, double> worst;
  for (int draw = 0; draw < 20; ++draw) {
    auto r = rng.child(static_cast<std::uint64_t>(draw));
    auto check = [&](const ModelSpec& spec, const ParamVector& w, const Dataset& batch) {
      const double e = gradient_check([&](std::span<const double> p) { return forward_loss(spec, p, batch); },
                                      [&](std::span<const double> p) { return grad(spec, p, batch); }, w.values, kStep);
      auto& slot = worst[std::string(to_string(spec.family()))];
      slot = std::max(slot, e);
    };
    {
      const ModelSpec spec(PolynomialSpec{1 + r.uniform_index(5)});
      auto w = init_params(spec, r.child(1));
      for (auto& v : w.values) v = r.normal();
      auto br = r.child(2);
      check(spec, w, random_regression(spec, 16, br));
    }
    {
      const ModelSpec spec(LowRankSpec{8, 1 + r.uniform_index(8)});
      auto br = r.child(3);
      check(spec, init_params(spec, r.child(4)), random_regression(spec, 16, br));
    }
    {
      const ModelSpec spec(AutoencoderSpec{8, 6, 1 + r.uniform_index(4)});
      auto w = init_params(spec, r.child(5));
      for (auto& v : w.values) v += 0.1 * r.normal();
      auto br = r.child(6);
      check(spec, w, random_regression(spec, 16, br));
    }
    {
      const ModelSpec spec(TmsSpec{6, 2, 0.5, {}});
      auto w = init_params(spec, r.child(7));
      for (auto& v : w.segment("b")) v = r.uniform(0.1, 0.5);
      const auto data = generate_dataset(spec, TaskParams{32, 0.5, 1.0, {}}, r.child(8));
      check(spec, w, data.train);
    }
    {
      const ModelSpec spec(ModularAdditionSpec{7, 4, 8});
      auto w = init_params(spec, r.child(9));
      for (auto& v : w.values) v += 0.1 * r.normal();
      const auto data = generate_dataset(spec, TaskParams{0, 0.4, 1.0, {}}, r.child(10));
      check(spec, w, data.train);
    }
  }
  bool ok = worst.size() == 5;
  std::string detail;
  for (const auto& [family, e] : worst) {
    ok = ok && e < 1e-6;
    detail += family + "=" + num(e) + " ";
  }
  return {ok, "max relative error " + detail};
}

// 2: regular-model calibration.
Verdict calibration(const fs::path&) {
  bool ok = true;
  std::string detail;
  for (std::size_t d : {2u, 10u, 50u}) {
    const GaussianLocationObjective obj(d, 10000, RngStream(d));
    SgldConfig c;
    c.epsilon = 1e-4;
    c.gamma = 1.0;
    c.steps = 2000;
    c.chains = 4;
    const auto est = estimate_llc_at(obj, obj.minimizer(), c, RngStream(100 + d));
    const double target = 0.5 * double(d);
    ok = ok && std::abs(est.lambda_hat - target) <= 0.25 * target;
    detail += "d=" + std::to_string(d) + " lambda=" + num(est.lambda_hat) + " ";
  }
  return {ok, detail};
}

// 3: quadratic scaling of the low-rank LLC.
Verdict lowrank(const fs::path& workdir) {
  const auto res = run_logged(desk_q2e2(), workdir);
  const json& fit = res.summary["fit"];
  if (fit.is_null()) return {false, "no fit (failed tasks: " + std::to_string(res.failures()) + ")"};
  const auto c = fit["coefficients"].get<std::vector<double>>();
  const double r2 = fit["r_squared"].is_null() ? 0.0 : fit["r_squared"].get<double>();
  const bool ok = c[2] < 0 && c[1] > 0 && r2 >= 0.95 && c[2] >= -0.7 && c[2] <= -0.3 && c[1] >= 60 && c[1] <= 140;
  return {ok, "r^2 coef " + num(c[2]) + ", r coef " + num(c[1]) + ", intercept " + num(c[0]) + ", R2 " + num(r2) +
                  ", points " + std::to_string(res.summary["points"].size())};
}

// 4: polynomial LLC on two instance intervals.
Verdict polynomial(const fs::path& workdir) {
  auto cfg = default_config(ExperimentId::Q2E1, Scale::Desk);
  cfg.intervals = {1.0, 0.5};
  const auto res = run_logged(cfg, workdir);
  std::map<std::pair<double, std::size_t>, double> mean;
  for (const auto* group : {&res.summary["points"], &res.summary["flagged_points"]}) {
    for (const auto& p : *group) {
      mean[{p["interval"].get<double>(), p["difficulty"].get<std::size_t>()}] = p["lambda_mean"].get<double>();
    }
  }
  bool a = true, b = true;
  std::string detail;
  for (std::size_t d : cfg.grid) {
    const auto wide = mean.find({1.0, d}), narrow = mean.find({0.5, d});
    if (wide == mean.end() || narrow == mean.end()) {
      if (d >= 10) a = false;
      if (d >= 50) b = false;
      detail += "d=" + std::to_string(d) + " missing; ";
      continue;
    }
    if (d >= 10 && (wide->second >= 0.5 * double(d) || narrow->second >= 0.5 * double(d))) a = false;
    if (d >= 50 && narrow->second > wide->second) b = false;
    detail += "d=" + std::to_string(d) + " [" + num(wide->second) + ", " + num(narrow->second) + "]; ";
  }
  return {a && b, std::string("(a) ") + (a ? "ok" : "violated") + " (b) " + (b ? "ok" : "violated") + "; " + detail};
}

// 5: linear scaling of the autoencoder LLC.
Verdict autoencoder(const fs::path& workdir) {
  const auto res = run_logged(default_config(ExperimentId::Q2E3, Scale::Desk), workdir);
  const json& fit = res.summary["fit"];
  if (fit.is_null()) return {false, "no fit"};
  const auto c = fit["coefficients"].get<std::vector<double>>();
  const double r2 = fit["r_squared"].is_null() ? 0.0 : fit["r_squared"].get<double>();
  return {r2 >= 0.95, "slope " + num(c[1]) + ", intercept " + num(c[0]) + ", R2 " + num(r2)};
}

// 6: grokking frequency and Arrhenius slope.
Verdict grokking(const fs::path& workdir) {
  const auto res = run_logged(default_config(ExperimentId::Q1E1, Scale::Desk), workdir);
  const auto completed = res.summary["runs_completed"].get<std::size_t>();
  const auto grokked = res.summary["runs_grokked"].get<std::size_t>();
  const double frac = completed ? double(grokked) / double(completed) : 0.0;
  const json& fit = res.summary["fit"];
  const bool slope_ok = !fit.is_null() && fit["coefficients"][1].get<double>() < 0;
  std::string detail = std::to_string(grokked) + "/" + std::to_string(completed) + " runs grokked";
  detail += fit.is_null() ? ", no Arrhenius fit (too few events)" : ", slope " + num(fit["coefficients"][1].get<double>());
  return {completed >= 50 && frac >= 0.10 && slope_ok, detail};
}

// 7: TMS with both detectors; only completion is required.
Verdict tms(const fs::path& workdir) {
  const auto res = run_logged(default_config(ExperimentId::Q1E2, Scale::Desk), workdir);
  std::map<std::string, std::string> slopes;
  bool ok = res.failures() == 0;
  for (const auto& d : res.summary["detectors"]) {
    const std::string name = d["detector"].get<std::string>();
    if (d["fit"].is_null()) {
      ok = false;
      slopes[name] = "no fit (" + std::to_string(d["events"].size()) + " events)";
    } else {
      slopes[name] = num(d["fit"]["coefficients"][1].get<double>()) + " over " + std::to_string(d["events"].size()) + " events";
    }
  }
  ok = ok && slopes.count("smoothing") && slopes.count("raw");
  std::string detail;
  for (const auto& [k, v] : slopes) detail += k + " slope " + v + "; ";
  return {ok, detail};
}

// 8: planted transitions.
Verdict planted(const fs::path&) {
  RngStream rng(808);
  std::size_t exact = 0, flagged = 0, agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.uniform_index(5);
    const auto curve = oracle::planted_curve(k, 400, 30, 1e-3, rng);
    std::vector<std::size_t> steps(curve.losses.size());
    for (std::size_t s = 0; s < steps.size(); ++s) steps[s] = 10 * (s + 1);
    DetectorConfig cfg;
    const auto det = detect_loss_transitions(steps, curve.losses, cfg);
    if (det.segments.size() == k) ++exact;
    if (det.segments.empty()) continue;
    ++flagged;
    const auto ref = oracle::scan_transitions(oracle::moving_average(curve.losses, cfg.smoothing_window), cfg.drop_fraction);
    bool same = ref.size() == det.segments.size();
    for (std::size_t s = 0; same && s < ref.size(); ++s) {
      same = det.segments[s].start == steps[ref[s].first + cfg.smoothing_window - 1] &&
             det.segments[s].end == steps[ref[s].second + cfg.smoothing_window - 1];
    }
    if (same) ++agree;
  }
  return {exact >= 95 && agree == flagged,
          std::to_string(exact) + "/100 exact, oracle agreement " + std::to_string(agree) + "/" + std::to_string(flagged)};
}

// 9: F = n L + lambda ln n on every stored row.
Verdict free_energy_rows(const fs::path& workdir) {
  const Registry registry(workdir);
  if (registry.list_runs("Q2E2").empty()) run_logged(desk_q2e2(), workdir);
  std::size_t rows = 0, bad = 0, skipped = 0;
  for (const auto& id : registry.list_runs()) {
    const LoadedRun run = registry.load_run(id);
    if (run.llc.empty()) continue;
    if (!run.summary || !run.summary->contains("result") || !(*run.summary)["result"].contains("n")) {
      ++skipped;
      continue;
    }
    const auto n = (*run.summary)["result"]["n"].get<std::size_t>();
    for (const auto& row : run.llc) {
      ++rows;
      const double f = double(n) * row.anchor_loss + row.lambda_hat * std::log(double(n));
      if (std::bit_cast<std::uint64_t>(f) != std::bit_cast<std::uint64_t>(row.free_energy)) ++bad;
    }
  }
  return {rows > 0 && bad == 0 && skipped == 0, std::to_string(rows) + " rows checked, " + std::to_string(bad) +
                                                    " mismatches, " + std::to_string(skipped) + " runs without n"};
}

// 10: checkpoint round trips and fit reproduction from the registry.
Verdict persistence(const fs::path& workdir) {
  RngStream rng(1010);
  const fs::path scratch = workdir / "roundtrip";
  std::size_t mismatched = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = 1 + rng.uniform_index(40);
    const ModelSpec spec(LowRankSpec{d, 1 + rng.uniform_index(d)});
    ParamVector p = zero_params(spec);
    for (auto& v : p.values) v = rng.normal() * std::exp(rng.uniform(-50.0, 50.0));
    const fs::path path = scratch / ("c" + std::to_string(k % 10) + ".bin");
    save_checkpoint_file(path, std::size_t(k), spec, p);
    const auto back = load_checkpoint_file(path, spec);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(back.values[i]) != std::bit_cast<std::uint64_t>(p.values[i])) {
        ++mismatched;
        break;
      }
    }
  }
  fs::remove_all(scratch);

  const auto res = run_logged(desk_q2e2(), workdir);
  const Registry registry(workdir);
  const auto reloaded = aggregate(desk_q2e2(), load_outcomes(registry, ExperimentId::Q2E2, res.summary["recipe_hash"]));
  const auto report = write_report(registry, ExperimentId::Q2E2, workdir / "report_q2e2");
  const json stored = read_json(res.summary_path)["fit"];
  const bool same = !stored.is_null() && reloaded["fit"] == stored && report.summary["fit"] == stored &&
                    fit_to_json(fit_from_json(stored)) == stored;
  return {mismatched == 0 && same, std::to_string(mismatched) + "/1000 checkpoint mismatches, fit reproduced: " +
                                       (same ? "yes" : "no")};
}

// 11: ReLU rescaling and low-rank gauge invariance.
Verdict invariance(const fs::path&) {
  RngStream rng(1111);
  double relu_worst = 0, gauge_worst = 0;
  for (int k = 0; k < 50; ++k) {
    auto r = rng.child(static_cast<std::uint64_t>(k));
    {
      const std::size_t d = 2 + r.uniform_index(10), h = 2 + r.uniform_index(10), b = 1 + r.uniform_index(d);
      const ModelSpec spec(AutoencoderSpec{d, h, b});
      const auto w = init_params(spec, r.child(1));
      auto br = r.child(2);
      const auto batch = random_regression(spec, 20, br);
      const double base = forward_loss(spec, w.values, batch);
      auto s = w;
      const std::size_t unit = r.uniform_index(h);
      const double alpha = std::exp(r.uniform(-2.0, 2.0));
      auto in_w = s.segment("encoder.0.weight");
      for (std::size_t j = 0; j < d; ++j) in_w[unit * d + j] *= alpha;
      s.segment("encoder.0.bias")[unit] *= alpha;
      auto out_w = s.segment("encoder.1.weight");
      for (std::size_t o = 0; o < b; ++o) out_w[o * h + unit] /= alpha;
      relu_worst = std::max(relu_worst, std::abs(forward_loss(spec, s.values, batch) - base));
    }
    {
      const std::size_t d = 2 + r.uniform_index(12), rank = 1 + r.uniform_index(d);
      const ModelSpec spec(LowRankSpec{d, rank});
      const auto w = init_params(spec, r.child(3));
      auto br = r.child(4);
      const auto batch = random_regression(spec, 30, br);
      const double base = forward_loss(spec, w.values, batch);
      const auto ri = static_cast<Eigen::Index>(rank);
      EigenMatrix g(ri, ri);
      for (Eigen::Index i = 0; i < ri * ri; ++i) g(i / ri, i % ri) = r.normal();
      g += 2.0 * EigenMatrix::Identity(ri, ri);
      auto s = w;
      auto w1 = detail::mmat(s.segment("W1"), 0, rank, d);
      auto w2 = detail::mmat(s.segment("W2"), 0, d, rank);
      const EigenMatrix n1 = g.inverse() * w1;
      const EigenMatrix n2 = w2 * g;
      w1 = n1;
      w2 = n2;
      gauge_worst = std::max(gauge_worst, std::abs(forward_loss(spec, s.values, batch) - base));
    }
  }
  return {relu_worst < 1e-10 && gauge_worst < 1e-8,
          "rescaling max deviation " + num(relu_worst) + ", gauge max deviation " + num(gauge_worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int criterion = 0;
  std::string workdir = "acceptance_registry";
  app.add_option("--criterion", criterion, "Criterion number (1-11)")->required()->check(CLI::Range(1, 11));
  app.add_option("--workdir", workdir, "Registry used by experiment-backed criteria");
  CLI11_PARSE(app, argc, argv);

  const std::function<Verdict(const fs::path&)> checks[] = {gradients, calibration,      lowrank,     polynomial,
                                                            autoencoder, grokking,      tms,         planted,
                                                            free_energy_rows, persistence, invariance};
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = checks[criterion - 1](workdir);
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "criterion " << criterion << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "  (" << num(secs)
            << " s)" << std::endl;
  return v.pass ? 0 : 1;
}
