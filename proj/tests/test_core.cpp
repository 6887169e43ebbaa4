#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mvs/core.hpp"
#include "mvs/rng.hpp"
#include "oracles.hpp"

using namespace mvs;

TEST_CASE("grids reject degenerate input") {
  CHECK_THROWS_AS(Grid1D(0.0, 1.0, 1), InvalidInput);
  CHECK_THROWS_AS(Grid1D(1.0, 0.0, 10), InvalidInput);
  CHECK_THROWS_AS(TimeGrid(0.0, 10), InvalidInput);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), InvalidInput);
  const Grid1D g(-2.0, 2.0, 5);
  CHECK(g.h() == doctest::Approx(1.0));
  CHECK(g.weight(0) == doctest::Approx(0.5));
  CHECK(g.weight(2) == doctest::Approx(1.0));
  double total = 0.0;
  for (double w : g.weights()) total += w;
  CHECK(total == doctest::Approx(4.0));
}

TEST_CASE("trapezoid pairing integrates a Gaussian to machine precision") {
  const Grid1D g(-12.0, 12.0, 481);
  const DensityField f = gaussian_density(g, 0.3, 1.1, 2.5);
  CHECK(mass(f) == doctest::Approx(2.5).epsilon(1e-12));
  // (x, N(m, s^2)) = m.
  CHECK(pair([](double x) { return x; }, f) == doctest::Approx(2.5 * 0.3).epsilon(1e-12));
  for (std::size_t i = 0; i < g.n(); i += 37) {
    CHECK(f[i] == doctest::Approx(2.5 * oracle::gaussian_pdf(g.x(i), 0.3, 1.21)).epsilon(1e-13));
  }
}

TEST_CASE("norms and field arithmetic commute") {
  const Grid1D g(-5.0, 5.0, 101);
  const SignedField a = SignedField::sample(g, [](double x) { return std::sin(x); });
  const SignedField b = SignedField::sample(g, [](double x) { return std::cos(x); });
  CHECK(l1_distance(a, b) == doctest::Approx(l1_norm(a - b)));
  CHECK(mass(a + b) == doctest::Approx(mass(a) + mass(b)));
  CHECK(mass(a * 3.0) == doctest::Approx(3.0 * mass(a)));
  CHECK_THROWS_AS(l1_distance(a, SignedField::zeros(Grid1D(-5.0, 5.0, 102))), InvalidInput);
}

TEST_CASE("density fields clamp roundoff and reject real negativity") {
  const Grid1D g(0.0, 1.0, 3);
  const DensityField ok(g, {1.0, -5e-13, 1.0});
  CHECK(ok[1] == 0.0);
  CHECK_THROWS_AS(DensityField(g, {1.0, -1e-9, 1.0}), NumericalError);
  CHECK_THROWS_AS(SignedField(g, {1.0, NAN, 1.0}), NumericalError);
}

TEST_CASE("mollified delta has exact unit mass at every location") {
  const Grid1D g(-4.0, 4.0, 161);
  for (double x0 : {-1.234, 0.0, 0.05, 2.5}) {
    const DensityField d = mollified_delta(g, x0);
    CHECK(mass(d) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(pair([](double x) { return x; }, d) == doctest::Approx(x0).epsilon(1e-10));
  }
}

TEST_CASE("cubic interpolation reproduces cubics, linear reproduces lines") {
  const Grid1D g(-1.0, 2.0, 31);
  const auto cubic = SignedField::sample(g, [](double x) { return 1.0 - 2.0 * x + 0.5 * x * x * x; });
  const auto line = SignedField::sample(g, [](double x) { return 3.0 * x - 1.0; });
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int k = 0; k < 50; ++k) {
    const double x = u(rng);
    CHECK(interpolate(g, cubic.view(), x) == doctest::Approx(1.0 - 2.0 * x + 0.5 * x * x * x).epsilon(1e-12));
    CHECK(interpolate(g, line.view(), x, InterpOrder::kLinear) == doctest::Approx(3.0 * x - 1.0).epsilon(1e-12));
  }
  // Clamped extrapolation.
  CHECK(interpolate(g, line.view(), 10.0) == doctest::Approx(line[g.n() - 1]));
}

TEST_CASE("finite differences are second order") {
  auto err = [](std::size_t n) {
    const Grid1D g(0.0, 3.0, n);
    const auto f = SignedField::sample(g, [](double x) { return std::sin(x); });
    const auto d = derivative(g, f.view());
    const auto d2 = second_derivative(g, f.view());
    double e1 = 0.0;
    double e2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      e1 = std::max(e1, std::abs(d[i] - std::cos(g.x(i))));
      e2 = std::max(e2, std::abs(d2[i] + std::sin(g.x(i))));
    }
    return std::pair{e1, e2};
  };
  const auto [a1, a2] = err(101);
  const auto [b1, b2] = err(201);
  CHECK(a1 / b1 > 3.5);
  CHECK(a2 / b2 > 3.0);
}

TEST_CASE("Mittag-Leffler E_1/2 matches exp(z^2) erfc(-z)") {
  for (double z : {-3.0, -1.0, -0.2, 0.0, 0.3, 1.0, 2.5, 5.0, 10.0}) {
    CHECK(mittag_leffler_half(z) == doctest::Approx(oracle::mittag_leffler_half(z)).epsilon(1e-10));
  }
  CHECK(mittag_leffler_half(0.0) == 1.0);
  CHECK(std::isinf(mittag_leffler_half(40.0)));
}

TEST_CASE("Mittag-Leffler inverse round trip and monotonicity") {
  double prev = 0.0;
  for (double y : {1.0, 1.01, 2.0, 10.0, 1e3, 1e8}) {
    const double z = mittag_leffler_half_inverse(y);
    CHECK(z >= prev);
    prev = z;
    if (y > 1.0) CHECK(mittag_leffler_half(z) == doctest::Approx(y).epsilon(1e-9));
  }
  CHECK(mittag_leffler_half_inverse(0.5) == 0.0);
}

TEST_CASE("counter generator is order free and standard normal") {
  CHECK(counter_normal(3, 4, 5) == counter_normal(3, 4, 5));
  CHECK(counter_normal(3, 4, 5) != counter_normal(3, 4, 6));
  const int n = 200000;
  double m = 0.0;
  double v = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = counter_normal(11, 0, k);
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 5.0 / std::sqrt(n));
  CHECK(std::abs(v - 1.0) < 0.02);
  for (int k = 0; k < 1000; ++k) {
    const double u = counter_uniform(1, 2, k);
    CHECK((u > 0.0 && u < 1.0));
  }
}
