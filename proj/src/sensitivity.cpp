#include "mvs/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvs/parallel.hpp"

namespace mvs {

namespace {

std::vector<std::vector<double>> path_values(const SolutionPath& phi) {
  std::vector<std::vector<double>> v;
  v.reserve(phi.states.size());
  for (const auto& s : phi.states) v.push_back(s.values());
  return v;
}

std::vector<double> average(std::span<const double> a, std::span<const double> b) {
  std::vector<double> m(a.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
  return m;
}

}  // namespace

BackgroundLinearization BackgroundLinearization::build(const Grid1D& grid,
                                                       const std::vector<std::vector<double>>& path,
                                                       const TimeGrid& time, const Coefficients& coefficients) {
  if (path.size() != time.n_t() + 1) throw InvalidInput("linearization: path length mismatch");
  BackgroundLinearization lin{time, MildSolver::midpoints(path), {}, {}, {}, {}, false, false};
  lin.has_b = !coefficients.drift.is_zero();
  lin.has_V = !coefficients.potential.is_zero();
  for (std::size_t j = 0; j < lin.phi_mid.size(); ++j) {
    const double t = time.t_mid(j);
    const auto& m = lin.phi_mid[j];
    if (lin.has_b) {
      lin.b_mid.push_back(coefficients.drift.evaluate(t, grid, m));
      lin.db.push_back(coefficients.drift.variation(t, grid, m));
    }
    if (lin.has_V) {
      lin.V_mid.push_back(coefficients.potential.evaluate(t, grid, m));
      lin.dV.push_back(coefficients.potential.variation(t, grid, m));
    }
  }
  return lin;
}

BackgroundLinearization BackgroundLinearization::build(const SolutionPath& phi,
                                                       const Coefficients& coefficients) {
  return build(phi.grid(), path_values(phi), phi.time, coefficients);
}

// ------------------------------------------------------------ first variation

std::vector<SignedField> solve_linearized(const MildSolver& solver, const BackgroundLinearization& lin,
                                          const SignedField& initial, double tol,
                                          std::size_t max_iterations, std::size_t* iterations) {
  const Grid1D& g = solver.grid();
  const TimeGrid& time = solver.time();
  require_same_grid(g, initial.grid(), "solve_linearized");
  if (!(lin.time == time)) throw InvalidInput("solve_linearized: time grid mismatch");
  const VolterraEngine& engine = solver.engine();
  const std::size_t n = g.n();
  std::vector<std::vector<double>> xi = engine.evaluate(initial.view(), {}, {});
  std::vector<double> history;
  std::size_t it = 0;
  if (lin.has_b || lin.has_V) {
    bool converged = false;
    for (it = 1; it <= max_iterations; ++it) {
      const auto mid = MildSolver::midpoints(xi);
      std::vector<std::vector<double>> vsrc;
      std::vector<std::vector<double>> bsrc;
      for (std::size_t j = 0; j < mid.size(); ++j) {
        const auto& phi = lin.phi_mid[j];
        if (lin.has_V) {
          std::vector<double> s = lin.dV[j].apply(mid[j]);
          for (std::size_t i = 0; i < n; ++i) s[i] = lin.V_mid[j][i] * mid[j][i] + s[i] * phi[i];
          vsrc.push_back(std::move(s));
        }
        if (lin.has_b) {
          std::vector<double> s = lin.db[j].apply(mid[j]);
          for (std::size_t i = 0; i < n; ++i) s[i] = lin.b_mid[j][i] * mid[j][i] + s[i] * phi[i];
          bsrc.push_back(std::move(s));
        }
      }
      auto next = engine.evaluate(initial.view(), vsrc, bsrc);
      double r = 0.0;
      for (std::size_t k = 0; k < next.size(); ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += g.weight(i) * std::abs(next[k][i] - xi[k][i]);
        r = std::max(r, d);
      }
      history.push_back(r);
      xi = std::move(next);
      if (!std::isfinite(r)) break;
      if (r < tol) {
        converged = true;
        break;
      }
    }
    if (!converged) throw ConvergenceError("solve_linearized: Picard iteration did not converge", history);
  }
  if (iterations != nullptr) *iterations = it;
  std::vector<SignedField> out;
  out.reserve(xi.size());
  for (std::size_t k = 0; k < xi.size(); ++k) out.emplace_back(g, std::move(xi[k]), time.t(k));
  return out;
}

SensitivityKernel solve_first_variation(const MildSolver& solver, const SolutionPath& phi,
                                        std::span<const double> probes, double tol, std::size_t workers) {
  const BackgroundLinearization lin = BackgroundLinearization::build(phi, solver.coefficients());
  SensitivityKernel out{phi.time, std::vector<double>(probes.begin(), probes.end()), {}, {},
                        mollification_width(solver.grid())};
  out.paths.resize(probes.size());
  out.iterations.resize(probes.size());
  parallel_for(probes.size(), workers, [&](std::size_t p) {
    const DensityField delta = mollified_delta(solver.grid(), probes[p]);
    out.paths[p] = solve_linearized(solver, lin, delta, tol, 200, &out.iterations[p]);
  });
  return out;
}

// ------------------------------------------------------------------ propagator

LinearizedPropagator::LinearizedPropagator(const Grid1D& grid, const DiffusionMatrix& diffusion,
                                           const BackgroundLinearization& lin)
    : grid_(grid), time_(lin.time) {
  const std::size_t n = grid.n();
  const std::vector<double> a = diffusion.sample(grid);
  const std::vector<double> zeros(n, 0.0);
  const std::vector<double> w = grid.weights();
  steps_.reserve(time_.n_t());
  for (std::size_t k = 0; k < time_.n_t(); ++k) {
    const auto& phi = lin.phi_mid[k];
    LowRankTridiagonal L{flux_generator(grid, a, lin.has_b ? lin.b_mid[k] : zeros,
                                        lin.has_V ? lin.V_mid[k] : zeros),
                         {},
                         {}};
    auto add_moment_terms = [&](const MeasureDerivative& d, bool transport) {
      for (std::size_t j = 0; j < d.moment_count(); ++j) {
        std::vector<double> u(n);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
          u[i] = phi[i] * d.outer_grad(i, j);
          v[i] = w[i] * d.kernel(i, j);
        }
        L.U.push_back(transport ? flux_divergence(grid, u) : u);
        L.V.push_back(std::move(v));
      }
    };
    if (lin.has_b) add_moment_terms(lin.db[k], true);
    if (lin.has_V) add_moment_terms(lin.dV[k], false);
    steps_.emplace_back(std::move(L), time_.dt(), 0.5);
  }
}

std::vector<double> LinearizedPropagator::forward(std::size_t from, std::size_t to,
                                                  std::span<const double> rho) const {
  if (from > to || to > steps_.size()) throw InvalidInput("propagator: need from <= to <= n_t");
  std::vector<double> x(rho.begin(), rho.end());
  for (std::size_t k = from; k < to; ++k) x = steps_[k].apply(x);
  return x;
}

// Phi f = W^{-1} P^T W f for P = S_{s-1} ... S_t.
std::vector<double> LinearizedPropagator::backward(std::size_t t, std::size_t s,
                                                   std::span<const double> f) const {
  if (t > s || s > steps_.size()) throw InvalidInput("propagator: need t <= s <= n_t");
  std::vector<double> y(f.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = grid_.weight(i) * f[i];
  for (std::size_t k = s; k-- > t;) y = steps_[k].apply_transpose(y);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= grid_.weight(i);
  return y;
}

LinearizedPropagator build_propagator(const SolutionPath& phi, const Coefficients& coefficients) {
  return LinearizedPropagator(phi.grid(), coefficients.diffusion,
                              BackgroundLinearization::build(phi, coefficients));
}

// ----------------------------------------------------------- second variation

std::vector<double> second_order_source(const Grid1D& grid, const Coefficients& coefficients, double t,
                                        std::span<const double> phi_mid, std::span<const double> xa,
                                        std::span<const double> xb) {
  const std::size_t n = grid.n();
  std::vector<double> q(n, 0.0);
  auto accumulate = [&](const MomentCoefficient& c, bool transport) {
    if (c.is_zero() || c.is_measure_independent()) return;
    const MeasureDerivative d = c.variation(t, grid, phi_mid);
    const MeasureHessian h = c.second_variation(t, grid, phi_mid);
    const std::vector<double> da = d.apply(xa);
    const std::vector<double> dbv = d.apply(xb);
    const std::vector<double> hab = h.contract(xa, xb);
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = da[i] * xb[i] + dbv[i] * xa[i] + hab[i] * phi_mid[i];
    if (transport) u = flux_divergence(grid, u);
    for (std::size_t i = 0; i < n; ++i) q[i] += u[i];
  };
  accumulate(coefficients.drift, true);
  accumulate(coefficients.potential, false);
  return q;
}

SecondVariation solve_second_variation(const SolutionPath& phi, const Coefficients& coefficients,
                                       const SensitivityKernel& xi, const LinearizedPropagator& propagator,
                                       std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                       std::size_t workers) {
  const Grid1D& g = phi.grid();
  const TimeGrid& time = phi.time;
  const std::size_t nt = time.n_t();
  if (!(xi.time == time) || !(propagator.time() == time)) {
    throw InvalidInput("solve_second_variation: time grid mismatch");
  }
  for (const auto* c : {static_cast<const MomentCoefficient*>(&coefficients.drift),
                        static_cast<const MomentCoefficient*>(&coefficients.potential)}) {
    if (!c->is_measure_independent() && !c->has_second_variation()) {
      throw ConfigError("coefficient '" + c->name() + "' has no second variational derivative");
    }
  }
  for (const auto& [a, b] : pairs) {
    if (a >= xi.paths.size() || b >= xi.paths.size()) throw InvalidInput("solve_second_variation: bad probe index");
  }
  const auto phi_mid = MildSolver::midpoints(path_values(phi));
  SecondVariation out{time, std::vector<std::pair<std::size_t, std::size_t>>(pairs.begin(), pairs.end()), {}};
  out.paths.resize(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t p) {
    const auto [a, b] = pairs[p];
    std::vector<double> eta(g.n(), 0.0);
    std::vector<SignedField> path;
    path.reserve(nt + 1);
    path.emplace_back(g, eta, 0.0);
    for (std::size_t k = 0; k < nt; ++k) {
      const std::vector<double> xa = average(xi.at(a, k).view(), xi.at(a, k + 1).view());
      const std::vector<double> xb = average(xi.at(b, k).view(), xi.at(b, k + 1).view());
      const std::vector<double> q = second_order_source(g, coefficients, time.t_mid(k), phi_mid[k], xa, xb);
      const ThetaStep& S = propagator.step(k);
      std::vector<double> next = S.apply(eta);
      const std::vector<double> forced = S.solve_implicit(q);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += time.dt() * forced[i];
      eta = std::move(next);
      path.emplace_back(g, eta, time.t(k + 1));
    }
    out.paths[p] = std::move(path);
  });
  return out;
}

// ---------------------------------------------------------------- bound fits

FirstVariationBound fit_first_variation_bound(const SensitivityKernel& xi, const CoefficientBounds& bounds,
                                              double C_max) {
  FirstVariationBound fit;
  fit.rate = 2.0 * bounds.lambda * bounds.R + bounds.V_sup + bounds.b_sup;
  const std::size_t nt = xi.time.n_t();
  for (std::size_t k = 0; k <= nt; ++k) {
    double m = 0.0;
    for (std::size_t p = 0; p < xi.paths.size(); ++p) m = std::max(m, l1_norm(xi.at(p, k)));
    fit.times.push_back(xi.time.t(k));
    fit.norms.push_back(m);
    if (m <= 1.0) continue;
    const double z = mittag_leffler_half_inverse(m);
    const double denom = (2.0 * xi.time.t(k) + 1.0) * fit.rate;
    fit.C = std::max(fit.C, denom > 0.0 ? z / denom : std::numeric_limits<double>::infinity());
  }
  fit.ok = fit.C <= C_max;
  return fit;
}

double c1_norm(const Grid1D& grid, std::span<const double> f) {
  return sup_norm(f) + sup_norm(derivative(grid, f));
}

std::vector<std::vector<double>> test_dictionary(const Grid1D& grid) {
  std::vector<std::vector<double>> dict;
  for (double s : {0.5, 1.0, 2.0, 4.0}) {
    for (int p = 0; p <= 4; ++p) {
      std::vector<double> f(grid.n());
      for (std::size_t i = 0; i < grid.n(); ++i) {
        const double x = grid.x(i);
        f[i] = std::pow(x, p) * std::exp(-0.5 * x * x / (s * s));
      }
      const double norm = sup_norm(f) + sup_norm(derivative(grid, f)) + sup_norm(second_derivative(grid, f));
      for (double& v : f) v /= norm;
      dict.push_back(std::move(f));
    }
  }
  return dict;
}

PropagatorGrowth fit_propagator_growth(const LinearizedPropagator& propagator) {
  const Grid1D& g = propagator.grid();
  const TimeGrid& time = propagator.time();
  const std::size_t nt = time.n_t();
  const auto dict = test_dictionary(g);
  PropagatorGrowth fit;
  std::vector<double> worst(nt, 0.0);
  for (const auto& f : dict) {
    const double f_norm = c1_norm(g, f);
    std::vector<double> y(g.n());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = g.weight(i) * f[i];
    for (std::size_t k = nt; k-- > 0;) {
      y = propagator.step(k).apply_transpose(y);
      std::vector<double> pf(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) pf[i] = y[i] / g.weight(i);
      worst[k] = std::max(worst[k], c1_norm(g, pf) / f_norm);
    }
  }
  for (std::size_t k = 0; k < nt; ++k) {
    fit.lags.push_back(time.T() - time.t(k));
    fit.norms.push_back(worst[k]);
  }
  double best = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 40; ++step) {
    const double c = 0.25 * step;
    double C = 0.0;
    for (std::size_t q = 0; q < fit.lags.size(); ++q) {
      const double tau = fit.lags[q];
      const double excess = std::log(fit.norms[q] / mittag_leffler_half(c * std::sqrt(tau)));
      C = std::max(C, excess / tau);
    }
    const double T = fit.lags.front();
    const double envelope = std::exp(C * T) * mittag_leffler_half(c * std::sqrt(T));
    if (envelope < best) {
      best = envelope;
      fit.C = C;
      fit.c = c;
    }
  }
  return fit;
}

}  // namespace mvs
