#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvs/mild_solver.hpp"
#include "mvs/sensitivity.hpp"
#include "oracles.hpp"

using namespace mvs;

namespace {

Coefficients coefficients(InteractionDrift b, PotentialTerm v = PotentialTerm::none(), double a = 1.0) {
  return Coefficients{DiffusionMatrix::constant(a), std::move(b), std::move(v)};
}

double l1_vs_gaussian(const SignedField& f, double mean, double var, double mass = 1.0) {
  double err = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    err += f.grid().weight(i) * std::abs(f[i] - mass * oracle::gaussian_pdf(f.grid().x(i), mean, var));
  }
  return err;
}

}  // namespace

TEST_CASE("pure heat flow: N(0,1) spreads to N(0,2)") {
  const Grid1D g(-10.0, 10.0, 2001);
  const auto path = solve_mild(gaussian_density(g, 0.0, 1.0), coefficients(InteractionDrift::none()),
                               TimeGrid(1.0, 200), 1e-8);
  CHECK(l1_vs_gaussian(path.final_state(), 0.0, 2.0) <= 1e-4);
  CHECK(path.iterations <= 2);
}

TEST_CASE("constant drift translates and constant potential decays") {
  const Grid1D g(-10.0, 10.0, 801);
  const auto path = solve_mild(gaussian_density(g, -1.0, 0.8), coefficients(InteractionDrift::constant(0.7),
                                                                            PotentialTerm::constant(0.4), 0.5),
                               TimeGrid(1.0, 100), 1e-11);
  for (std::size_t k : {25, 50, 100}) {
    const double t = path.time.t(k);
    CHECK(l1_vs_gaussian(path.at(k), -1.0 + 0.7 * t, 0.64 + 0.5 * t, std::exp(-0.4 * t)) <= 1e-4);
  }
}

TEST_CASE("mean reversion relaxes to the Ornstein-Uhlenbeck law") {
  const Grid1D g(-8.0, 8.0, 801);
  const auto path = solve_mild(gaussian_density(g, 0.5, 1.0), coefficients(InteractionDrift::mean_reversion(0.5)),
                               TimeGrid(1.0, 100), 1e-8);
  for (std::size_t k : {10, 50, 100}) {
    const double t = path.time.t(k);
    CHECK(l1_vs_gaussian(path.at(k), 0.5, oracle::ou_variance(1.0, 0.5, 1.0, t)) <= 1e-4);
  }
}

TEST_CASE("mass conservation and positivity without a potential") {
  const Grid1D g(-8.0, 8.0, 641);
  const Coefficients c{DiffusionMatrix::variable([](double x) { return 1.0 + 0.3 * std::exp(-x * x / 2.0); }),
                       InteractionDrift::moment_quadratic(0.5, 0.8, 1.0), PotentialTerm::none()};
  const auto path = solve_mild(gaussian_density(g, 0.0, 0.8), c, TimeGrid(0.5, 50), 1e-9);
  for (const auto& s : path.states) {
    CHECK(std::abs(mass(s) - 1.0) <= 1e-6);
    for (double v : s.values()) CHECK(v >= -kNegativityTolerance);
  }
}

TEST_CASE("potential only removes mass") {
  const Grid1D g(-8.0, 8.0, 321);
  const auto path = solve_mild(gaussian_density(g, 0.0, 1.0),
                               coefficients(InteractionDrift::none(), PotentialTerm::moment_decay(0.1, 0.5, 1.0)),
                               TimeGrid(0.5, 50), 1e-10);
  for (std::size_t k = 1; k <= path.time.n_t(); ++k) CHECK(mass(path.at(k)) < mass(path.at(k - 1)));
}

TEST_CASE("Picard residuals contract on the mean-reversion benchmark") {
  const Grid1D g(-8.0, 8.0, 801);
  const MildSolver solver(coefficients(InteractionDrift::mean_reversion(0.5)),
                          HeatKernel(g, DiffusionMatrix::constant(1.0)), TimeGrid(1.0, 100));
  const auto path = solver.solve(gaussian_density(g, 0.5, 1.0), PicardOptions{1e-8, 200, 1e-8});
  CHECK(contraction_monotone(path.residual_history, 3));
  CHECK(path.iterations_to_tol <= 30);
  CHECK(path.residual <= 1e-8);
}

TEST_CASE("contraction_monotone detects an increase") {
  const std::vector<double> ok{1.0, 2.0, 0.5, 0.4, 0.3, 0.1};
  const std::vector<double> bad{1.0, 0.5, 0.4, 0.3, 0.35, 0.1};
  CHECK(contraction_monotone(ok, 2));
  CHECK_FALSE(contraction_monotone(bad, 3));
}

TEST_CASE("solution satisfies the weak form") {
  const Grid1D g(-8.0, 8.0, 801);
  const Coefficients c = coefficients(InteractionDrift::mean_reversion(0.5));
  const auto path = solve_mild(gaussian_density(g, 0.5, 1.0), c, TimeGrid(1.0, 100), 1e-10);
  CHECK(weak_residual(path, c, test_dictionary(g)) <= 1e-3);
}

TEST_CASE("mass reaching the domain edge is an error") {
  const Grid1D g(-3.0, 3.0, 121);
  CHECK_THROWS_AS(solve_mild(gaussian_density(g, 0.0, 1.0), coefficients(InteractionDrift::constant(3.0)),
                             TimeGrid(1.0, 20), 1e-8),
                  DomainTruncationError);
}

TEST_CASE("Picard iteration cap raises ConvergenceError with the residual history") {
  const Grid1D g(-8.0, 8.0, 321);
  const MildSolver solver(coefficients(InteractionDrift::mean_reversion(0.5)),
                          HeatKernel(g, DiffusionMatrix::constant(1.0)), TimeGrid(1.0, 50));
  try {
    solver.solve(gaussian_density(g, 0.5, 1.0), PicardOptions{1e-14, 3, 1e-8});
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residuals().size() == 3);
  }
}

TEST_CASE("stability envelope on perturbed mean-reversion data") {
  const Grid1D g(-8.0, 8.0, 401);
  const MildSolver solver(coefficients(InteractionDrift::mean_reversion(0.5)),
                          HeatKernel(g, DiffusionMatrix::constant(1.0)), TimeGrid(1.0, 50));
  std::vector<DensityField> Y1;
  std::vector<DensityField> Y2;
  for (int q = 0; q < 4; ++q) {
    Y1.push_back(gaussian_density(g, 0.5, 1.0));
    Y2.push_back(gaussian_density(g, 0.5 + 0.1 * (q + 1), 1.0 - 0.02 * q));
  }
  const StabilityEnvelope env = solution_stability(solver, Y1, Y2, 2);
  CHECK(env.pass);
  CHECK(env.K <= 2.0);
  CHECK(env.ratios.size() == 4);
  CHECK(env.times.size() == 50);
  // The ratio never exceeds the fitted envelope.
  for (const auto& row : env.ratios) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      CHECK(row[k] <= env.K * mittag_leffler_half(env.kappa * std::sqrt(env.times[k])) * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("envelope fit reproduces a synthetic Mittag-Leffler profile") {
  std::vector<double> times;
  std::vector<std::vector<double>> ratios(1);
  for (int k = 1; k <= 20; ++k) {
    times.push_back(0.05 * k);
    ratios[0].push_back(mittag_leffler_half(0.8 * std::sqrt(times.back())));
  }
  const StabilityEnvelope env = fit_stability_envelope(times, ratios, 2.0, 1);
  CHECK(env.kappa == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(env.C_bar == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(env.K == doctest::Approx(1.0).epsilon(1e-6));
}
