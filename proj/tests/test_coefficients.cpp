#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvs/coefficients.hpp"
#include "oracles.hpp"

using namespace mvs;

namespace {

const Grid1D kGrid(-8.0, 8.0, 321);

// Exact moment of the Gaussian bump exp(-y^2 / (2 w^2)) against N(m, s^2).
double bump_moment(double m, double s, double w) {
  const double v = s * s + w * w;
  return w / std::sqrt(v) * std::exp(-m * m / (2.0 * v));
}

}  // namespace

TEST_CASE("moments match closed forms") {
  const DensityField mu = gaussian_density(kGrid, 0.4, 0.9);
  const auto mr = InteractionDrift::mean_reversion(0.7);
  CHECK(mr.moments(mu)[0] == doctest::Approx(0.4).epsilon(1e-10));
  const auto mq = InteractionDrift::moment_quadratic(0.5, 0.8, 1.3);
  CHECK(mq.moments(mu)[0] == doctest::Approx(bump_moment(0.4, 0.9, 1.3)).epsilon(1e-10));
}

TEST_CASE("preset flags") {
  CHECK(InteractionDrift::none().is_zero());
  CHECK(InteractionDrift::constant(0.0).is_zero());
  CHECK_FALSE(InteractionDrift::constant(1.0).is_zero());
  CHECK(InteractionDrift::constant(1.0).is_measure_independent());
  CHECK_FALSE(InteractionDrift::mean_reversion(1.0).is_measure_independent());
  CHECK(PotentialTerm::moment_decay(0.1, 0.2, 1.0).has_second_variation());
  CHECK(PotentialTerm::none().is_zero());
}

TEST_CASE("potential sign is enforced") {
  CHECK_THROWS_AS(PotentialTerm::constant(-1.0), ConfigError);
  CHECK_THROWS_AS(PotentialTerm::moment_decay(-0.1, 0.2, 1.0), ConfigError);
  const DensityField mu = gaussian_density(kGrid, 0.0, 1.0);
  for (double v : PotentialTerm::moment_decay(0.1, 0.5, 1.0).evaluate(0.0, mu)) CHECK(v <= 0.0);
}

TEST_CASE("outer gradients and Hessians agree with finite differences") {
  const std::vector<MomentCoefficient> coefficients{
      InteractionDrift::mean_reversion(0.6), InteractionDrift::moment_quadratic(0.5, 0.8, 1.0),
      PotentialTerm::moment_decay(0.1, 0.4, 1.5)};
  const double h = 1e-5;
  for (const auto& c : coefficients) {
    for (double s0 : {-0.7, 0.2, 0.9}) {
      for (double x : {-1.0, 0.5}) {
        double s[1] = {s0};
        double g[1];
        double hs[1];
        c.grad_s(0.0, x, s, g);
        c.hess_s(0.0, x, s, hs);
        double sp[1] = {s0 + h};
        double sm[1] = {s0 - h};
        const double fd = (c.value(0.0, x, sp) - c.value(0.0, x, sm)) / (2.0 * h);
        CHECK(g[0] == doctest::Approx(fd).epsilon(1e-7));
        double gp[1];
        double gm[1];
        c.grad_s(0.0, x, sp, gp);
        c.grad_s(0.0, x, sm, gm);
        CHECK(hs[0] == doctest::Approx((gp[0] - gm[0]) / (2.0 * h)).epsilon(1e-7));
      }
    }
  }
}

TEST_CASE("variational derivative is the directional derivative in the measure") {
  const DensityField mu = gaussian_density(kGrid, 0.3, 1.0);
  const DensityField rho = gaussian_density(kGrid, -0.5, 0.6);
  const auto b = InteractionDrift::moment_quadratic(0.5, 0.8, 1.0);
  const auto applied = b.variation(0.0, mu).apply(rho.view());
  const double eps = 1e-6;
  const auto plus = b.evaluate(0.0, mu + rho * eps);
  const auto minus = b.evaluate(0.0, mu - rho * eps);
  for (std::size_t i = 0; i < kGrid.n(); i += 20) {
    CHECK(applied[i] == doctest::Approx((plus[i] - minus[i]) / (2.0 * eps)).epsilon(1e-6));
  }
  // Second variation is symmetric and equals the derivative of the first.
  const auto hess = b.second_variation(0.0, mu);
  const auto r1 = hess.contract(rho.view(), mu.view());
  const auto r2 = hess.contract(mu.view(), rho.view());
  for (std::size_t i = 0; i < kGrid.n(); i += 20) CHECK(r1[i] == doctest::Approx(r2[i]));
  const auto d_plus = b.variation(0.0, mu + rho * eps).apply(mu.view());
  const auto d_minus = b.variation(0.0, mu - rho * eps).apply(mu.view());
  for (std::size_t i = 0; i < kGrid.n(); i += 20) {
    CHECK(r1[i] == doctest::Approx((d_plus[i] - d_minus[i]) / (2.0 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("diffusion ellipticity and square root") {
  const auto a = DiffusionMatrix::variable([](double x) { return 1.0 + 0.5 * std::exp(-x * x); });
  CHECK(a.sigma(0.0) == doctest::Approx(std::sqrt(1.5)));
  const auto e = a.ellipticity(kGrid);
  CHECK(e.m == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(DiffusionMatrix::constant(2.0).constant_value() == 2.0);
  const auto bad = DiffusionMatrix::variable([](double x) { return x; });
  CHECK_THROWS_AS(bad.ellipticity(kGrid), ConfigError);
}

TEST_CASE("measured bounds for the mean-reversion drift") {
  const std::vector<DensityField> samples{gaussian_density(kGrid, 0.0, 1.0), gaussian_density(kGrid, 0.5, 0.8)};
  const auto b = measure_bounds(InteractionDrift::mean_reversion(0.5), PotentialTerm::none(), samples);
  CHECK(b.lambda == doctest::Approx(1.0).epsilon(1e-10));
  // b = -k (x - m): sup over the grid is k (8 + 0.5).
  CHECK(b.b_sup == doctest::Approx(0.5 * 8.5).epsilon(1e-6));
  CHECK(b.V_sup == 0.0);
  // d b / d mu(z) = k z, sup over the grid is 8 k.
  CHECK(b.R == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(b.R2 == 0.0);
}

TEST_CASE("drift validation rejects blow-up on the domain") {
  const std::vector<DensityField> samples{gaussian_density(kGrid, 0.0, 1.0)};
  CHECK_NOTHROW(InteractionDrift::mean_reversion(1.0).validate_on_domain(kGrid, samples));
  CHECK_THROWS(InteractionDrift::constant(1e9).validate_on_domain(kGrid, samples));
}
