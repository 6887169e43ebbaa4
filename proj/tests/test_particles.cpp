#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "mvs/particles.hpp"
#include "oracles.hpp"

using namespace mvs;

namespace {

const Grid1D kGrid(-8.0, 8.0, 641);
const TimeGrid kTime(0.5, 50);

Coefficients mean_reversion() {
  return Coefficients{DiffusionMatrix::constant(1.0), InteractionDrift::mean_reversion(1.0), PotentialTerm::none()};
}

double mean_of(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }

}  // namespace

TEST_CASE("initial sampling reproduces the moments of Y") {
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const auto x = sample_initial(Y, 40000, 3);
  CHECK(x == sample_initial(Y, 40000, 3));
  const double m = mean_of(x);
  double v = 0.0;
  for (double xi : x) v += (xi - m) * (xi - m);
  v /= x.size();
  CHECK(m == doctest::Approx(0.5).epsilon(0.03));
  CHECK(v == doctest::Approx(1.0).epsilon(0.03));
  for (double xi : x) CHECK((xi >= kGrid.x_min() && xi <= kGrid.x_max()));
}

TEST_CASE("Silverman bandwidth formula") {
  const std::vector<double> x{-1.0, 0.0, 2.0, 3.0};
  // mean 1, unbiased variance 10/3.
  CHECK(silverman_bandwidth(x) == doctest::Approx(1.06 * std::sqrt(10.0 / 3.0) * std::pow(4.0, -0.2)));
  CHECK_THROWS_AS(silverman_bandwidth(std::vector<double>{1.0}), InvalidInput);
}

TEST_CASE("kernel density estimate has unit mass and converges to the sampled law") {
  const DensityField Y = gaussian_density(kGrid, 0.0, 1.0);
  const auto x = sample_initial(Y, 50000, 1);
  const DensityField rho = kernel_density(kGrid, x);
  CHECK(mass(rho) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(l1_distance(rho, Y) <= 0.05);
  // A single sample with a fixed bandwidth is a normalized Gaussian bump.
  const double one[] = {0.3};
  const DensityField bump = kernel_density(kGrid, one, 0.4);
  CHECK(mass(bump) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bump[static_cast<std::size_t>((0.3 + 8.0) / kGrid.h())] ==
        doctest::Approx(oracle::gaussian_pdf(0.3, 0.3, 0.16)).epsilon(1e-3));
}

TEST_CASE("ensembles are reproducible and independent of the worker count") {
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const BrownianPath W = BrownianPath::sample(1, kTime);
  const auto a = simulate(2000, Y, mean_reversion(), ComField::constant(0.7), W, 42, 1);
  const auto b = simulate(2000, Y, mean_reversion(), ComField::constant(0.7), W, 42, 3);
  CHECK(a.positions == b.positions);
  CHECK(a.positions.size() == kTime.n_t() + 1);
  for (double x : a.positions.back()) CHECK((x >= kGrid.x_min() && x <= kGrid.x_max()));
  CHECK(a.warnings.empty());
}

TEST_CASE("empirical mean follows the conditional mean under common noise") {
  // Mean reversion toward the empirical mean leaves it driven only by the
  // common noise and idiosyncratic averages: m_t = m_0 + 0.7 W_t + O(N^{-1/2}).
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const BrownianPath W = BrownianPath::sample(8, kTime);
  const auto e = simulate(20000, Y, mean_reversion(), ComField::constant(0.7), W, 5);
  for (std::size_t k : {0, 25, 50}) {
    CHECK(std::abs(mean_of(e.positions[k]) - (0.5 + 0.7 * W(k))) <= 0.05);
  }
}

TEST_CASE("reflections at a tight boundary are counted and reported") {
  const Grid1D small(-1.0, 1.0, 81);
  const DensityField Y = gaussian_density(small, 0.0, 0.3);
  const auto e = simulate(500, Y, mean_reversion(), ComField::constant(0.0), BrownianPath::sample(1, kTime), 1);
  CHECK(e.reflections > 0);
  CHECK_FALSE(e.warnings.empty());
  for (double x : e.positions.back()) CHECK((x >= -1.0 && x <= 1.0));
}

TEST_CASE("chaos gap needs the shared path and shrinks with N") {
  const Coefficients c = mean_reversion();
  const DensityField Y = gaussian_density(kGrid, 0.5, 1.0);
  const BrownianPath W = BrownianPath::sample(2, kTime);
  const SpdeSolver solver(kGrid, kTime, c, ComField::constant(0.7));
  const PathSolution s = solver.solve_path(Y, W);
  const std::size_t idx[] = {kTime.n_t()};
  const auto small = simulate(1000, Y, c, ComField::constant(0.7), W, 11);
  const auto large = simulate(30000, Y, c, ComField::constant(0.7), W, 11);
  CHECK(chaos_gap(s, large, idx)[0] < chaos_gap(s, small, idx)[0]);
  const auto other = simulate(1000, Y, c, ComField::constant(0.7), BrownianPath::sample(3, kTime), 11);
  CHECK_THROWS_AS(chaos_gap(s, other, idx), InvalidInput);
}

TEST_CASE("potential terms are rejected") {
  const Coefficients c{DiffusionMatrix::constant(1.0), InteractionDrift::none(), PotentialTerm::constant(0.1)};
  CHECK_THROWS_AS(simulate(100, gaussian_density(kGrid, 0.0, 1.0), c, ComField::constant(0.5),
                           BrownianPath::sample(1, kTime), 1),
                  ConfigError);
}

TEST_CASE("log-log slope of an exact power law") {
  const std::vector<double> N{1e3, 3e3, 1e4, 3e4};
  std::vector<double> gap;
  for (double n : N) gap.push_back(2.0 * std::pow(n, -0.4));
  CHECK(loglog_slope(N, gap) == doctest::Approx(-0.4).epsilon(1e-12));
}
