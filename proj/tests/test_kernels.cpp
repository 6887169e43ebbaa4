#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvs/kernels.hpp"
#include "oracles.hpp"

using namespace mvs;

TEST_CASE("constant-mode heat kernel maps Gaussians to Gaussians") {
  const Grid1D g(-12.0, 12.0, 481);
  const HeatKernel k(g, DiffusionMatrix::constant(0.7));
  const DensityField y = gaussian_density(g, 0.5, 1.0);
  for (double t : {0.01, 0.3, 1.0, 2.0}) {
    const DensityField out = k.apply(t, y);
    double err = 0.0;
    for (std::size_t i = 0; i < g.n(); ++i) {
      err += g.weight(i) * std::abs(out[i] - oracle::gaussian_pdf(g.x(i), 0.5, 1.0 + 0.7 * t));
    }
    CHECK(err < 1e-10);
    CHECK(mass(out) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gradient action is the kernel applied to the derivative") {
  const Grid1D g(-12.0, 12.0, 481);
  const HeatKernel k(g, DiffusionMatrix::constant(1.0));
  const SignedField w = gaussian_density(g, 0.0, 1.0);
  const double t = 0.5;
  // G_t (w') with w = N(0, 1): derivative of N(0, 1 + t).
  const auto out = k.gradient_apply(t, w.view());
  for (std::size_t i = 0; i < g.n(); i += 11) {
    const double x = g.x(i);
    const double v = 1.0 + t;
    CHECK(out[i] == doctest::Approx(-x / v * oracle::gaussian_pdf(x, 0.0, v)).epsilon(1e-6).scale(1e-3));
  }
}

TEST_CASE("semigroup property in both modes") {
  const Grid1D g(-6.0, 6.0, 121);
  const auto a = DiffusionMatrix::variable([](double x) { return 1.0 + 0.4 * std::exp(-x * x); });
  for (const HeatKernel& k : {HeatKernel(g, DiffusionMatrix::constant(1.0)), HeatKernel(g, a)}) {
    const DensityField y = gaussian_density(g, -0.3, 0.7);
    const auto two_step = k.apply(0.2, k.apply(0.3, y.view()));
    const auto one_step = k.apply(0.5, y.view());
    double err = 0.0;
    for (std::size_t i = 0; i < g.n(); ++i) err = std::max(err, std::abs(two_step[i] - one_step[i]));
    CHECK(err < 1e-8);
  }
}

TEST_CASE("variable mode agrees with constant mode when a is constant") {
  const Grid1D g(-8.0, 8.0, 161);
  const HeatKernel c(g, DiffusionMatrix::constant(1.0));
  const HeatKernel v = HeatKernel::variable(g, DiffusionMatrix::constant(1.0));
  CHECK(v.mode() == HeatKernel::Mode::kVariable);
  const DensityField y = gaussian_density(g, 0.0, 1.0);
  CHECK(l1_distance(c.apply(0.5, y), v.apply(0.5, y)) < 5e-4);
}

TEST_CASE("variable-mode kernel is nonnegative and conserves mass") {
  const Grid1D g(-6.0, 6.0, 121);
  const auto a = DiffusionMatrix::variable([](double x) { return 0.6 + 0.5 * std::exp(-x * x); });
  const HeatKernel k(g, a);
  const Eigen::MatrixXd m = k.matrix(0.3);
  CHECK(m.minCoeff() >= -1e-14);
  const DensityField y = gaussian_density(g, 0.5, 0.5);
  CHECK(mass(k.apply(0.3, y)) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("point masses use the closed-form kernel") {
  const Grid1D g(-8.0, 8.0, 321);
  const HeatKernel k(g, DiffusionMatrix::constant(1.0));
  const PointMass pm[] = {{0.25, 2.0}};
  const auto out = k.apply_point_masses(0.5, pm);
  for (std::size_t i = 0; i < g.n(); i += 17) {
    CHECK(out[i] == doctest::Approx(2.0 * oracle::gaussian_pdf(g.x(i), 0.25, 0.5)).epsilon(1e-10));
  }
}

TEST_CASE("Aronson envelope holds with a constant near one for the heat kernel") {
  const Grid1D g(-6.0, 6.0, 121);
  const HeatKernel k(g, DiffusionMatrix::constant(1.0));
  const double times[] = {0.1, 0.5, 1.0};
  const AronsonFit fit = fit_aronson(k, times);
  CHECK(fit.ok);
  CHECK(fit.C >= 1.0 - 1e-6);
  CHECK(fit.C < 2.0);
}

TEST_CASE("midpoint quadrature of the square-root singularity converges") {
  const double e1 = midpoint_singular_quadrature_error(1.0, 100);
  const double e2 = midpoint_singular_quadrature_error(1.0, 400);
  CHECK(e1 < 0.1);
  // Error scales like steps^{-1/2}.
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));
}
