#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvs/characteristics.hpp"
#include "oracles.hpp"

using namespace mvs;

namespace {

const std::vector<ComField> kFields{ComField::constant(1.0), ComField::linear(1.0), ComField::periodic(0.0, 1.0),
                                    ComField::bounded_odd(0.8), ComField::periodic(1.0, 0.5)};

}  // namespace

TEST_CASE("closed-form flows") {
  const FlowMap c(ComField::constant(0.5));
  const FlowMap l(ComField::linear(0.7));
  for (double t : {-1.3, -0.2, 0.4, 2.0}) {
    for (double x : {-2.0, 0.0, 1.5}) {
      const FlowState sc = c.solve(t, x);
      CHECK(sc.Z == doctest::Approx(x - 0.5 * t).epsilon(1e-13));
      CHECK(sc.Zx == doctest::Approx(1.0).epsilon(1e-13));
      CHECK(sc.logG == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
      const FlowState sl = l.solve(t, x);
      CHECK(sl.Z == doctest::Approx(x * std::exp(-0.7 * t)).epsilon(1e-12));
      CHECK(sl.Zx == doctest::Approx(std::exp(-0.7 * t)).epsilon(1e-12));
      CHECK(sl.Zxx == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
      CHECK(l.gain(t, x) == doctest::Approx(std::exp(-0.7 * t)).epsilon(1e-12));
    }
  }
  // sigma = sin: Z(t, x) = 2 atan(e^{-t} tan(x / 2)).
  const FlowMap s(ComField::periodic(0.0, 1.0));
  for (double t : {-0.8, 0.5, 1.5}) {
    for (double x : {-2.0, 0.3, 1.0}) {
      CHECK(s.solve(t, x).Z == doctest::Approx(2.0 * std::atan(std::exp(-t) * std::tan(x / 2.0))).epsilon(1e-10));
    }
  }
}

TEST_CASE("group property and gain inversion") {
  for (const auto& field : kFields) {
    const FlowMap flow(field);
    for (double x : {-1.7, 0.2, 2.4}) {
      for (auto [t, s] : {std::pair{0.3, 0.9}, std::pair{-0.5, 1.1}, std::pair{1.0, -1.0}}) {
        const FlowState a = flow.solve(t + s, x);
        const FlowState b = flow.solve(t, flow.solve(s, x).Z);
        CHECK(std::abs(a.Z - b.Z) <= 1e-8);
      }
      // G(t, x) G(-t, Z(t, x)) = 1.
      for (double t : {0.4, 1.2}) {
        const double y = flow.solve(t, x).Z;
        CHECK(std::abs(flow.gain(t, x) * flow.gain(-t, y) - 1.0) <= 1e-8);
      }
    }
  }
}

TEST_CASE("Jacobians agree with finite differences") {
  const double h = 1e-4;
  for (const auto& field : kFields) {
    const FlowMap flow(field);
    for (double x : {-1.0, 0.6}) {
      for (double t : {-0.7, 0.8}) {
        const FlowState s = flow.solve(t, x);
        const double fd1 = (flow.solve(t, x + h).Z - flow.solve(t, x - h).Z) / (2.0 * h);
        const double fd2 = (flow.solve(t, x + h).Zx - flow.solve(t, x - h).Zx) / (2.0 * h);
        CHECK(std::abs(s.Zx - fd1) <= 1e-6);
        CHECK(std::abs(s.Zxx - fd2) <= 1e-6);
        // In one dimension the gain equals Z_x.
        CHECK(std::exp(s.logG) == doctest::Approx(s.Zx).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("flow table interpolates the direct flow") {
  const Grid1D g(-4.0, 4.0, 81);
  const FlowMap flow(ComField::periodic(0.3, 0.8));
  const FlowTable table(flow, g, 2.0);
  double err = 0.0;
  for (double w : {-1.93, -0.505, 0.0, 0.333, 1.999, 2.3}) {
    for (std::size_t i = 0; i < g.n(); i += 7) {
      const FlowState a = table.at(w, i);
      const FlowState b = flow.solve(w, g.x(i));
      err = std::max({err, std::abs(a.Z - b.Z), std::abs(a.Zx - b.Zx), std::abs(a.logG - b.logG)});
    }
  }
  CHECK(err <= 1e-8);
}

TEST_CASE("conjugation transports a Gaussian and preserves mass") {
  const Grid1D g(-12.0, 12.0, 961);
  const FlowMap flow(ComField::linear(0.5));
  const DensityField v = gaussian_density(g, 0.0, 1.0);
  const double w = 0.6;
  // forward: e^{-rw} v(x e^{-rw}) is N(0, e^{2 r w}).
  const SignedField f = conjugate(v, flow, w, Direction::kForward);
  for (std::size_t i = 0; i < g.n(); i += 31) {
    CHECK(std::abs(f[i] - oracle::gaussian_pdf(g.x(i), 0.0, std::exp(2.0 * 0.5 * w))) <= 1e-6);
  }
  CHECK(mass(f) == doctest::Approx(1.0).epsilon(1e-9));
  const SignedField back = conjugate(f, flow, w, Direction::kInverse);
  CHECK(l1_distance(back, v) <= 1e-6);
}

TEST_CASE("dressed coefficients for constant and linear noise") {
  const Grid1D g(-5.0, 5.0, 101);
  const auto drift = InteractionDrift::mean_reversion(1.0);
  const DensityField gstate = gaussian_density(g, 0.2, 0.8);
  {
    const FlowMap flow(ComField::constant(0.5));
    const DressedCoefficients d = dress(DiffusionMatrix::constant(1.0), drift, flow, g, 0.0, 0.8, gstate);
    // Undressed state is the translate by 0.5 * 0.8, so its mean is 0.6.
    CHECK(d.moments[0] == doctest::Approx(0.6).epsilon(1e-6));
    for (std::size_t i = 0; i < g.n(); i += 10) {
      CHECK(d.A[i] == doctest::Approx(1.0));
      CHECK(d.b[i] == doctest::Approx(-(g.x(i) + 0.4 - 0.6)).epsilon(1e-6).scale(1.0));
    }
  }
  {
    const double r = 0.5;
    const double w = 0.7;
    const FlowMap flow(ComField::linear(r));
    const DressedCoefficients d = dress(DiffusionMatrix::constant(1.0), InteractionDrift::none(), flow, g, 0.0, w, gstate);
    for (std::size_t i = 0; i < g.n(); i += 10) {
      CHECK(d.A[i] == doctest::Approx(std::exp(-2.0 * r * w)).epsilon(1e-10));
      CHECK(d.b[i] == doctest::Approx(-0.5 * r * r * g.x(i)).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("fields vanishing on the grid are flagged") {
  const Grid1D g(-5.0, 5.0, 101);
  CHECK(ComField::linear(1.0).has_zero_on(g));
  CHECK(ComField::bounded_odd(1.0).has_zero_on(g));
  CHECK_FALSE(ComField::constant(0.5).has_zero_on(g));
  CHECK_FALSE(ComField::periodic(1.0, 0.5).has_zero_on(g));
  CHECK_FALSE(ComField::constant(0.0).has_zero_on(g));
}

TEST_CASE("tabulated fields confine flows to their grid") {
  const Grid1D g(-2.0, 2.0, 41);
  std::vector<double> v(g.n(), 1.0);
  const FlowMap flow(ComField::tabulated(g, v));
  CHECK(flow.solve(0.5, 0.0).Z == doctest::Approx(-0.5).epsilon(1e-10));
  CHECK_THROWS_AS(flow.solve(3.0, 0.0), FlowExitError);
}

TEST_CASE("dressed ellipticity for periodic noise stays bounded") {
  const Grid1D g(-6.0, 6.0, 121);
  const FlowMap flow(ComField::periodic(1.0, 0.5));
  const double ws[] = {-2.0, -1.0, 0.0, 1.0, 2.0};
  const EllipticityFit fit = fit_dressed_ellipticity(DiffusionMatrix::constant(1.0), flow, g, ws);
  CHECK(fit.ws.size() == fit.bounds.size());
  for (std::size_t k = 0; k < fit.ws.size(); ++k) {
    CHECK(fit.bounds[k] <= fit.C * std::exp(fit.C * std::abs(fit.ws[k])) * (1.0 + 1e-9));
  }
  CHECK(std::isfinite(flow_derivative_sup(flow, g, ws)));
}
