// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is nonzero if any line fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "mvs/characteristics.hpp"
#include "mvs/experiment.hpp"

using namespace mvs;
namespace fs = std::filesystem;

namespace {

const std::size_t kWorkers = std::max(1u, std::thread::hardware_concurrency());

Json load_json(const std::string& name) {
  std::ifstream in(fs::path(MVS_CONFIG_DIR) / (name + ".json"));
  return Json::parse(in);
}

struct Timed {
  Json summary;
  double seconds;
};

Timed run(const std::string& command, const Json& document) {
  const auto start = std::chrono::steady_clock::now();
  const RunResult r = run_experiment(command, parse_config(document), RunOptions{{}, std::nullopt, kWorkers, false});
  return {r.summary, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
}

double value(const Json& summary, const std::string& check) {
  if (!summary["checks"].contains(check)) throw Error("summary lacks check " + check);
  const Json& v = summary["checks"][check]["value"];
  return v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>();
}

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail, double seconds) {
  std::printf("[%s] C%-2d %-34s %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

void guarded(int id, const std::string& title, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("error: ") + e.what(), 0.0);
  }
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

}  // namespace

int main() {
  guarded(1, "heat baseline", [] {
    const Timed r = run("solve", load_json("heat_baseline"));
    const double err = value(r.summary, "solve.l1_error_vs_closed_form");
    report(1, "heat baseline", err <= 1e-4 && r.seconds <= 10.0, fmt("L1 error %.2e <= 1e-4, runtime <= 10 s", err),
           r.seconds);
  });

  guarded(2, "mass and positivity (V = 0 configs)", [] {
    double worst_mass = 0.0;
    double worst_min = 0.0;
    int count = 0;
    double seconds = 0.0;
    for (const auto& entry : fs::directory_iterator(MVS_CONFIG_DIR)) {
      Json doc = load_json(entry.path().stem().string());
      const ExperimentConfig c = parse_config(doc);
      if (!c.coefficients.potential.is_zero()) continue;
      // Only the mass and positivity checks matter here; drop the costly extras.
      const bool noisy = c.noise != NoiseKind::kNone;
      Json run_block = Json::object();
      for (const char* key : {"tol", "seed", "n_paths"}) {
        if (doc["run"].contains(key)) run_block[key] = doc["run"][key];
      }
      doc["run"] = run_block;
      const Timed r = run(noisy ? "spde" : "solve", doc);
      const std::string prefix = noisy ? "spde." : "solve.";
      worst_mass = std::max(worst_mass, value(r.summary, prefix + "mass_drift"));
      worst_min = std::min(worst_min, value(r.summary, prefix + "min_value"));
      seconds += r.seconds;
      ++count;
    }
    report(2, "mass and positivity (V = 0 configs)", count > 0 && worst_mass <= 1e-6 && worst_min >= -1e-12,
           fmt("%.0f configs, mass drift %.2e <= 1e-6, min %.2e >= -1e-12", count, worst_mass, worst_min), seconds);
  });

  guarded(3, "Picard contraction", [] {
    Json doc = load_json("mean_reversion");
    doc["run"].erase("stability_pairs");
    const Timed r = run("solve", doc);
    const bool monotone = value(r.summary, "solve.contraction_monotone_after_3") > 0.5;
    const double iters = value(r.summary, "solve.iterations_to_tol");
    report(3, "Picard contraction", monotone && iters <= 30 && doc["run"]["tol"].get<double>() <= 1e-8,
           std::string("monotone after 3: ") + (monotone ? "yes" : "no") + fmt(", %.0f iterates to 1e-8 (<= 30)", iters),
           r.seconds);
  });

  guarded(4, "stability envelope", [] {
    const Json doc = load_json("mean_reversion");
    const Timed r = run("solve", doc);
    const double K = value(r.summary, "solve.stability_K");
    const std::size_t pairs = doc["run"]["stability_pairs"].get<std::size_t>();
    report(4, "stability envelope", pairs == 10 && K <= 2.0 && r.seconds <= 120.0,
           fmt("%.0f pairs, fitted K %.4f <= 2, runtime <= 120 s", static_cast<double>(pairs), K), r.seconds);
  });

  guarded(5, "first-order sensitivity", [] {
    const Timed r = run("sensitivity", load_json("mean_reversion"));
    const double err = value(r.summary, "sensitivity.fd_error");
    const double ratio = value(r.summary, "sensitivity.fd_order_ratio");
    report(5, "first-order sensitivity", err <= 5e-2 && ratio <= 0.15,
           fmt("FD error %.2e <= 5e-2, order ratio %.4f <= 0.15", err, ratio), r.seconds);
  });

  guarded(6, "second-order sensitivity", [] {
    const Timed r = run("sensitivity", load_json("mean_reversion"));
    const double sym = value(r.summary, "sensitivity.eta_symmetry");
    const double taylor = value(r.summary, "sensitivity.taylor_ratio");
    // Coefficients independent of the measure: constant drift and decay.
    Json lin = load_json("constant_drift_decay");
    lin["run"]["probes"] = {0.0, 1.0};
    lin["run"]["pairs"] = {{0, 1}};
    const Timed l = run("sensitivity", lin);
    const double zero = value(l.summary, "sensitivity.eta_zero_for_linear");
    report(6, "second-order sensitivity", sym <= 1e-6 && taylor <= 0.2 && zero <= 1e-10,
           fmt("symmetry %.2e <= 1e-6, Taylor ratio %.4f <= 0.2, linear eta %.1e <= 1e-10", sym, taylor, zero),
           r.seconds + l.seconds);
  });

  guarded(7, "flow identities", [] {
    const auto start = std::chrono::steady_clock::now();
    double group = 0.0;
    double jac = 0.0;
    const double h = 1e-4;
    for (const ComField& field : {ComField::constant(1.0), ComField::linear(1.0), ComField::periodic(0.0, 1.0)}) {
      const FlowMap flow(field);
      for (double x = -2.5; x <= 2.5; x += 0.5) {
        for (double t : {-1.0, -0.3, 0.4, 1.2}) {
          for (double s : {-0.7, 0.5}) {
            group = std::max(group, std::abs(flow.solve(t + s, x).Z - flow.solve(t, flow.solve(s, x).Z).Z));
          }
          group = std::max(group, std::abs(flow.gain(t, x) * flow.gain(-t, flow.solve(t, x).Z) - 1.0));
          const FlowState st = flow.solve(t, x);
          jac = std::max(jac, std::abs(st.Zx - (flow.solve(t, x + h).Z - flow.solve(t, x - h).Z) / (2.0 * h)));
        }
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report(7, "flow identities", group <= 1e-8 && jac <= 1e-6,
           fmt("group/gain %.2e <= 1e-8, Jacobian vs FD %.2e <= 1e-6", group, jac), seconds);
  });

  guarded(8, "SPDE translated heat closed form", [] {
    const Json doc = load_json("spde_constant_noise");
    const Timed r = run("spde", doc);
    const double err = value(r.summary, "spde.l1_error_vs_closed_form");
    report(8, "SPDE translated heat closed form", err <= 1e-3 && doc["run"]["n_paths"] == 20,
           fmt("max L1 error over 20 seeds %.2e <= 1e-3", err), r.seconds);
  });

  guarded(9, "conditional Gaussian", [] {
    const Json doc = load_json("spde_conditional_gaussian");
    const Timed r = run("spde", doc);
    const double err = value(r.summary, "spde.l1_error_vs_closed_form");
    report(9, "conditional Gaussian", err <= 1e-2 && doc["run"]["n_paths"] == 20,
           fmt("max L1 error over 20 seeds %.2e <= 1e-2", err), r.seconds);
  });

  guarded(10, "Ito/Stratonovich cross-check", [] {
    const Json doc = load_json("spde_linear_ito");
    const Timed r = run("spde", doc);
    const double d = value(r.summary, "spde.ito_distance");
    const double ratio = value(r.summary, "spde.ito_refinement_ratio");
    report(10, "Ito/Stratonovich cross-check", d <= 2e-2 && ratio >= 1.4 && doc["run"]["n_paths"] == 20,
           fmt("mean distance %.2e <= 2e-2, halving ratio %.2f >= 1.4", d, ratio), r.seconds);
  });

  guarded(11, "propagation of chaos", [] {
    const Timed r = run("particles", load_json("chaos"));
    const bool decreasing = value(r.summary, "particles.mean_gap_strictly_decreasing") > 0.5;
    const double slope = value(r.summary, "particles.loglog_slope");
    report(11, "propagation of chaos", decreasing && r.seconds <= 600.0,
           fmt("mean gap strictly decreasing over 4 N, 10 seeds (slope %.3f), runtime <= 600 s", slope), r.seconds);
  });

  guarded(12, "expectation stability", [] {
    const Timed r = run("spde", load_json("expectation_stability"));
    const double rel = value(r.summary, "spde.expectation_C_relative_change");
    report(12, "expectation stability", rel <= 0.1, fmt("relative change 100 -> 200 paths %.4f <= 0.1", rel),
           r.seconds);
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
