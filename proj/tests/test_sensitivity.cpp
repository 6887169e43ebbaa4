#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvs/sensitivity.hpp"
#include "oracles.hpp"

using namespace mvs;

namespace {

const Grid1D kGrid(-8.0, 8.0, 401);
const TimeGrid kTime(1.0, 50);

Coefficients mean_reversion() {
  return Coefficients{DiffusionMatrix::constant(1.0), InteractionDrift::mean_reversion(0.5), PotentialTerm::none()};
}

SignedField perturbed_final(const MildSolver& solver, const DensityField& Y, double x, double eps) {
  const DensityField Yp(SignedField(Y) + mollified_delta(kGrid, x) * eps);
  return solver.solve(Yp, PicardOptions{1e-13, 300, 1e-8}).final_state();
}

}  // namespace

TEST_CASE("without drift or potential xi is the heat flow of the mollified delta") {
  const Coefficients c{DiffusionMatrix::constant(1.0), InteractionDrift::none(), PotentialTerm::none()};
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const auto phi = solver.solve(gaussian_density(kGrid, 0.0, 0.7));
  const double probes[] = {-1.0, 0.7};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  const double w = mollification_width(kGrid);
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t k : {10, 50}) {
      double err = 0.0;
      const double var = w * w + kTime.t(k);
      for (std::size_t i = 0; i < kGrid.n(); ++i) {
        err += kGrid.weight(i) * std::abs(xi.at(p, k)[i] - oracle::gaussian_pdf(kGrid.x(i), probes[p], var));
      }
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("xi conserves the perturbation mass when V = 0") {
  const Coefficients c = mean_reversion();
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const auto phi = solver.solve(gaussian_density(kGrid, 0.5, 1.0), PicardOptions{1e-12, 200, 1e-8});
  const double probes[] = {0.0};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  for (std::size_t k = 0; k <= kTime.n_t(); ++k) CHECK(mass(xi.at(0, k)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite differences converge to xi at first order") {
  const Coefficients c = mean_reversion();
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const auto phi = solver.solve(Y, PicardOptions{1e-13, 300, 1e-8});
  const double probes[] = {0.3};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  double err[2];
  const double eps[] = {1e-2, 1e-3};
  for (int e = 0; e < 2; ++e) {
    const SignedField fd = (perturbed_final(solver, Y, 0.3, eps[e]) - phi.final_state()) * (1.0 / eps[e]);
    err[e] = l1_distance(fd, xi.at(0, kTime.n_t()));
  }
  CHECK(err[1] <= 5e-2);
  CHECK(err[1] / err[0] <= 0.15);
}

TEST_CASE("propagator adjoint identity and agreement with the mild linearization") {
  const Coefficients c = mean_reversion();
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const auto phi = solver.solve(gaussian_density(kGrid, 0.5, 1.0), PicardOptions{1e-12, 200, 1e-8});
  const LinearizedPropagator prop = build_propagator(phi, c);
  const DensityField rho = gaussian_density(kGrid, -0.4, 0.5);
  const SignedField f = SignedField::sample(kGrid, [](double x) { return std::cos(x) * std::exp(-x * x / 8.0); });
  const auto fwd = prop.forward(10, 40, rho.view());
  const auto bwd = prop.backward(10, 40, f.view());
  CHECK(pair(kGrid, f.view(), fwd) == doctest::Approx(pair(kGrid, bwd, rho.view())).epsilon(1e-12));

  const double probes[] = {0.0};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  const auto carried = prop.forward(0, kTime.n_t(), xi.at(0, 0).view());
  CHECK(l1_distance(SignedField(kGrid, carried), xi.at(0, kTime.n_t())) <= 1e-3);
  // Composition Phi^{0,50} = Phi^{0,20} Phi^{20,50} on the adjoint side.
  const auto two = prop.forward(20, 50, prop.forward(0, 20, rho.view()));
  const auto one = prop.forward(0, 50, rho.view());
  CHECK(l1_distance(SignedField(kGrid, two), SignedField(kGrid, one)) <= 1e-12);
}

TEST_CASE("second variation: symmetry, Taylor order, zero for linear equations") {
  const Coefficients c = mean_reversion();
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const auto phi = solver.solve(Y, PicardOptions{1e-13, 300, 1e-8});
  const double probes[] = {0.0, 1.0};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  const LinearizedPropagator prop = build_propagator(phi, c);
  const std::pair<std::size_t, std::size_t> pairs[] = {{0, 0}, {0, 1}, {1, 0}};
  const SecondVariation eta = solve_second_variation(phi, c, xi, prop, pairs);
  const std::size_t n = kTime.n_t();
  CHECK(sup_norm((eta.at(1, n) - eta.at(2, n)).view()) <= 1e-6);
  CHECK(sup_norm(eta.at(0, n).view()) > 1e-6);

  const double eps[] = {std::pow(10.0, -1.5), 1e-2};
  double rem[2];
  for (int e = 0; e < 2; ++e) {
    const SignedField r = perturbed_final(solver, Y, 0.0, eps[e]) - phi.final_state() - xi.at(0, n) * eps[e] -
                          eta.at(0, n) * (0.5 * eps[e] * eps[e]);
    rem[e] = l1_norm(r);
  }
  CHECK(rem[1] / rem[0] <= 0.2);

  const Coefficients lin{DiffusionMatrix::constant(1.0), InteractionDrift::constant(0.3), PotentialTerm::constant(0.2)};
  const MildSolver lsolver(lin, HeatKernel(kGrid, lin.diffusion), kTime);
  const auto lphi = lsolver.solve(gaussian_density(kGrid, -0.3, 0.7), PicardOptions{1e-12, 200, 1e-8});
  const SensitivityKernel lxi = solve_first_variation(lsolver, lphi, probes);
  const SecondVariation leta = solve_second_variation(lphi, lin, lxi, build_propagator(lphi, lin), pairs);
  for (std::size_t q = 0; q < 3; ++q) {
    for (std::size_t k = 0; k <= n; ++k) CHECK(sup_norm(leta.at(q, k).view()) <= 1e-10);
  }
}

TEST_CASE("second-order source is symmetric in its directions") {
  const Coefficients c{DiffusionMatrix::constant(1.0), InteractionDrift::moment_quadratic(0.5, 0.8, 1.0),
                       PotentialTerm::moment_decay(0.1, 0.3, 1.0)};
  const DensityField phi = gaussian_density(kGrid, 0.0, 1.0);
  const DensityField a = gaussian_density(kGrid, 0.5, 0.4);
  const DensityField b = gaussian_density(kGrid, -1.0, 0.7);
  const auto qab = second_order_source(kGrid, c, 0.0, phi.view(), a.view(), b.view());
  const auto qba = second_order_source(kGrid, c, 0.0, phi.view(), b.view(), a.view());
  for (std::size_t i = 0; i < kGrid.n(); ++i) CHECK(qab[i] == doctest::Approx(qba[i]).epsilon(1e-12));
  // Without a potential the source is a divergence and carries no mass.
  const Coefficients cb{DiffusionMatrix::constant(1.0), InteractionDrift::moment_quadratic(0.5, 0.8, 1.0),
                        PotentialTerm::none()};
  CHECK(integrate(kGrid, second_order_source(kGrid, cb, 0.0, phi.view(), a.view(), b.view())) ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("fitted constants come with their data") {
  const Coefficients c = mean_reversion();
  const MildSolver solver(c, HeatKernel(kGrid, c.diffusion), kTime);
  const auto phi = solver.solve(gaussian_density(kGrid, 0.5, 1.0), PicardOptions{1e-12, 200, 1e-8});
  const double probes[] = {0.0};
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes);
  std::vector<DensityField> samples(phi.states.begin(), phi.states.end());
  const auto bound = fit_first_variation_bound(xi, measure_bounds(c.drift, c.potential, samples));
  CHECK(bound.ok);
  CHECK(bound.times.size() == bound.norms.size());
  for (std::size_t k = 0; k < bound.times.size(); ++k) {
    CHECK(bound.norms[k] <= mittag_leffler_half(bound.C * (2.0 * bound.times[k] + 1.0) * bound.rate) * (1.0 + 1e-9));
  }
  const auto growth = fit_propagator_growth(build_propagator(phi, c));
  CHECK(growth.lags.size() == growth.norms.size());
  CHECK(std::isfinite(growth.C));
}

TEST_CASE("test dictionary has unit C2 surrogate norm") {
  const auto dict = test_dictionary(kGrid);
  CHECK(dict.size() == 20);
  const SignedField f = SignedField::sample(kGrid, [](double x) { return std::sin(x); });
  CHECK(c1_norm(kGrid, f.view()) == doctest::Approx(2.0).epsilon(1e-3));
}
