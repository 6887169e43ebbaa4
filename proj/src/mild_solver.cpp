#include "mvs/mild_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mvs/parallel.hpp"

namespace mvs {

namespace {

// acc += s * x * y on interleaved complex arrays. Written out by hand so the
// compiler does not route through the checked complex multiply.
void complex_mac(std::vector<std::complex<double>>& acc, const std::vector<std::complex<double>>& x,
                 const std::vector<std::complex<double>>& y, double s) {
  double* a = reinterpret_cast<double*>(acc.data());
  const double* p = reinterpret_cast<const double*>(x.data());
  const double* q = reinterpret_cast<const double*>(y.data());
  const std::size_t n = acc.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double pr = p[2 * i];
    const double pi = p[2 * i + 1];
    const double qr = q[2 * i];
    const double qi = q[2 * i + 1];
    a[2 * i] += s * (pr * qr - pi * qi);
    a[2 * i + 1] += s * (pr * qi + pi * qr);
  }
}

}  // namespace

double edge_mass(const SignedField& field) {
  const Grid1D& g = field.grid();
  const double width = (g.x_max() - g.x_min()) / 20.0;
  double m = 0.0;
  for (std::size_t i = 0; i < g.n(); ++i) {
    const double x = g.x(i);
    if (x < g.x_min() + width || x > g.x_max() - width) m += g.weight(i) * std::abs(field[i]);
  }
  return m;
}

// ------------------------------------------------------------ VolterraEngine

VolterraEngine::VolterraEngine(HeatKernel kernel, TimeGrid time)
    : kernel_(std::move(kernel)), time_(time) {
  const std::size_t nt = time_.n_t();
  heat_.reserve(nt);
  mid_.reserve(nt);
  flux_.reserve(nt);
  for (std::size_t k = 1; k <= nt; ++k) heat_.push_back(kernel_.multiplier(time_.t(k)));
  for (std::size_t l = 0; l < nt; ++l) {
    mid_.push_back(kernel_.multiplier(time_.t_mid(l)));
    flux_.push_back(kernel_.flux_multiplier(time_.t_mid(l)));
  }
}

std::vector<std::vector<double>> VolterraEngine::evaluate(
    std::span<const double> init, const std::vector<std::vector<double>>& vsrc,
    const std::vector<std::vector<double>>& bsrc) const {
  const std::size_t nt = time_.n_t();
  const double dt = time_.dt();
  if ((!vsrc.empty() && vsrc.size() != nt) || (!bsrc.empty() && bsrc.size() != nt)) {
    throw InvalidInput("VolterraEngine: source count must equal the step count");
  }
  const HeatKernel::Spectrum init_hat = kernel_.transform(init);
  std::vector<HeatKernel::Spectrum> v_hat;
  std::vector<HeatKernel::Spectrum> b_hat;
  for (const auto& s : vsrc) v_hat.push_back(kernel_.transform(s));
  for (const auto& s : bsrc) b_hat.push_back(kernel_.transform_flux(s));

  std::vector<std::vector<double>> out;
  out.reserve(nt + 1);
  out.emplace_back(init.begin(), init.end());
  HeatKernel::Spectrum acc(kernel_.spectrum_size());
  for (std::size_t k = 1; k <= nt; ++k) {
    std::fill(acc.begin(), acc.end(), std::complex<double>(0.0, 0.0));
    complex_mac(acc, heat_[k - 1], init_hat, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t l = k - 1 - j;
      if (!v_hat.empty()) complex_mac(acc, mid_[l], v_hat[j], dt);
      if (!b_hat.empty()) complex_mac(acc, flux_[l], b_hat[j], -dt);
    }
    out.push_back(kernel_.synthesize(acc));
  }
  return out;
}

// ----------------------------------------------------------------- MildSolver

MildSolver::MildSolver(Coefficients coefficients, HeatKernel kernel, TimeGrid time)
    : coefficients_(std::move(coefficients)), engine_(std::move(kernel), time) {}

std::vector<std::vector<double>> MildSolver::midpoints(const std::vector<std::vector<double>>& path) {
  std::vector<std::vector<double>> mid;
  mid.reserve(path.size() - 1);
  for (std::size_t j = 0; j + 1 < path.size(); ++j) {
    std::vector<double> m(path[j].size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (path[j][i] + path[j + 1][i]);
    mid.push_back(std::move(m));
  }
  return mid;
}

SolutionPath MildSolver::heat_flow(const DensityField& Y) const {
  require_same_grid(grid(), Y.grid(), "heat_flow");
  const auto out = engine_.evaluate(Y.view(), {}, {});
  SolutionPath path{time(), {}, 0, 0, 0.0, {}};
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::vector<double> v = out[k];
    project_nonnegative(v);
    path.states.emplace_back(grid(), std::move(v), time().t(k));
  }
  return path;
}

std::vector<std::vector<double>> MildSolver::map_values(
    std::span<const double> Y, const std::vector<std::vector<double>>& phi) const {
  if (phi.size() != time().n_t() + 1) throw InvalidInput("picard_map: path length mismatch");
  const Grid1D& g = grid();
  const auto mid = midpoints(phi);
  std::vector<std::vector<double>> vsrc;
  std::vector<std::vector<double>> bsrc;
  const bool with_v = !coefficients_.potential.is_zero();
  const bool with_b = !coefficients_.drift.is_zero();
  for (std::size_t j = 0; j < mid.size(); ++j) {
    const double t = time().t_mid(j);
    if (with_v) {
      std::vector<double> v = coefficients_.potential.evaluate(t, g, mid[j]);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mid[j][i];
      vsrc.push_back(std::move(v));
    }
    if (with_b) {
      std::vector<double> b = coefficients_.drift.evaluate(t, g, mid[j]);
      for (std::size_t i = 0; i < b.size(); ++i) b[i] *= mid[j][i];
      bsrc.push_back(std::move(b));
    }
  }
  auto out = engine_.evaluate(Y, vsrc, bsrc);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = 0; i < out[k].size(); ++i) {
      if (!std::isfinite(out[k][i])) {
        std::ostringstream msg;
        msg << "picard_map: non-finite value at time index " << k << ", node " << i;
        throw NumericalError(msg.str());
      }
    }
  }
  return out;
}

SolutionPath MildSolver::to_path(std::vector<std::vector<double>> values) const {
  SolutionPath path{time(), {}, 0, 0, 0.0, {}};
  path.states.reserve(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    try {
      project_nonnegative(values[k]);
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "time index " << k << ": " << e.what();
      throw NumericalError(msg.str());
    }
    path.states.emplace_back(grid(), std::move(values[k]), time().t(k));
  }
  return path;
}

std::vector<SignedField> MildSolver::picard_map(const DensityField& Y,
                                                const std::vector<SignedField>& phi) const {
  require_same_grid(grid(), Y.grid(), "picard_map");
  std::vector<std::vector<double>> values;
  for (const auto& s : phi) values.push_back(s.values());
  auto out = map_values(Y.view(), values);
  std::vector<SignedField> next;
  for (std::size_t k = 0; k < out.size(); ++k) next.emplace_back(grid(), std::move(out[k]), time().t(k));
  return next;
}

SolutionPath MildSolver::solve(const DensityField& Y, const PicardOptions& options) const {
  if (!(options.tol > 0.0)) throw InvalidInput("solve_mild: tol must be > 0");
  require_same_grid(grid(), Y.grid(), "solve_mild");
  const Grid1D& g = grid();
  std::vector<std::vector<double>> phi = engine_.evaluate(Y.view(), {}, {});
  std::vector<double> history;
  std::size_t reached = 0;
  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    std::vector<std::vector<double>> next = map_values(Y.view(), phi);
    double r = 0.0;
    double lowest = 0.0;
    for (std::size_t k = 0; k < next.size(); ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < g.n(); ++i) {
        d += g.weight(i) * std::abs(next[k][i] - phi[k][i]);
        lowest = std::min(lowest, next[k][i]);
      }
      r = std::max(r, d);
    }
    history.push_back(r);
    phi = std::move(next);
    if (!std::isfinite(r)) break;
    if (r < options.tol && reached == 0) reached = it;
    // Iterates are signed; the fixed point is not. Keep iterating past tol
    // until the iterate also meets the projection tolerance.
    if (reached != 0 && lowest >= -kNegativityTolerance) {
      SolutionPath out = to_path(std::move(phi));
      out.iterations = it;
      out.iterations_to_tol = reached;
      out.residual = r;
      out.residual_history = std::move(history);
      for (std::size_t k = 0; k < out.states.size(); ++k) {
        const double e = edge_mass(out.states[k]);
        if (e > options.edge_mass_limit) {
          std::ostringstream msg;
          msg << "solve_mild: mass " << e << " in the edge layer at time index " << k
              << " exceeds " << options.edge_mass_limit << "; enlarge the domain";
          throw DomainTruncationError(msg.str());
        }
      }
      return out;
    }
  }
  throw ConvergenceError("solve_mild: Picard iteration did not reach tolerance", history);
}

SolutionPath solve_mild(const DensityField& Y, const Coefficients& coefficients, const TimeGrid& time,
                        double tol) {
  MildSolver solver(coefficients, HeatKernel(Y.grid(), coefficients.diffusion), time);
  PicardOptions opt;
  opt.tol = tol;
  return solver.solve(Y, opt);
}

double weak_residual(const SolutionPath& phi, const Coefficients& coefficients,
                     const std::vector<std::vector<double>>& tests) {
  const Grid1D& g = phi.grid();
  const std::size_t nt = phi.time.n_t();
  if (nt < 2) throw InvalidInput("weak_residual: need at least two steps");
  const double dt = phi.time.dt();
  const std::vector<double> a = coefficients.diffusion.sample(g);
  double worst = 0.0;
  for (const auto& f : tests) {
    if (f.size() != g.n()) throw InvalidInput("weak_residual: test size mismatch");
    const std::vector<double> df = derivative(g, f);
    const std::vector<double> d2f = second_derivative(g, f);
    for (std::size_t k = 1; k < nt; ++k) {
      const DensityField& p = phi.states[k];
      const double t = phi.time.t(k);
      const double lhs = (pair(g, f, phi.states[k + 1].view()) - pair(g, f, phi.states[k - 1].view())) /
                         (2.0 * dt);
      const std::vector<double> b = coefficients.drift.evaluate(t, p);
      const std::vector<double> V = coefficients.potential.evaluate(t, p);
      std::vector<double> gen(g.n());
      for (std::size_t i = 0; i < g.n(); ++i) gen[i] = 0.5 * a[i] * d2f[i] + b[i] * df[i] + V[i] * f[i];
      worst = std::max(worst, std::abs(lhs - pair(g, gen, p.view())));
    }
  }
  return worst;
}

bool contraction_monotone(std::span<const double> residual_history, std::size_t after) {
  for (std::size_t i = after + 1; i < residual_history.size(); ++i) {
    if (residual_history[i] > residual_history[i - 1]) return false;
  }
  return true;
}

double stability_rate_base(const CoefficientBounds& bounds, double T, double norm_Y) {
  const double rt = std::sqrt(T);
  return (bounds.V_sup * rt + bounds.b_sup) + bounds.L_A * (rt + 1.0) * norm_Y;
}

StabilityEnvelope fit_stability_envelope(std::vector<double> times,
                                         std::vector<std::vector<double>> ratios, double base,
                                         std::size_t calibration_pairs, double K_max) {
  if (ratios.empty() || calibration_pairs == 0 || calibration_pairs > ratios.size()) {
    throw InvalidInput("fit_stability_envelope: bad calibration split");
  }
  if (!(base > 0.0)) throw InvalidInput("fit_stability_envelope: rate base must be > 0");
  StabilityEnvelope env;
  env.base = base;
  env.K_max = K_max;
  for (std::size_t p = 0; p < calibration_pairs; ++p) {
    for (std::size_t q = 0; q < times.size(); ++q) {
      if (times[q] <= 0.0) continue;
      const double z = mittag_leffler_half_inverse(ratios[p][q]);
      env.C_bar = std::max(env.C_bar, z / (base * std::sqrt(times[q])));
    }
  }
  env.kappa = env.C_bar * base;
  for (const auto& row : ratios) {
    for (std::size_t q = 0; q < times.size(); ++q) {
      env.K = std::max(env.K, row[q] / mittag_leffler_half(env.kappa * std::sqrt(times[q])));
    }
  }
  env.pass = env.K <= K_max;
  env.times = std::move(times);
  env.ratios = std::move(ratios);
  return env;
}

StabilityEnvelope solution_stability(const MildSolver& solver, std::span<const DensityField> Y1,
                                     std::span<const DensityField> Y2, std::size_t calibration_pairs,
                                     const PicardOptions& options, std::size_t workers) {
  if (Y1.size() != Y2.size() || Y1.empty()) throw InvalidInput("solution_stability: need matching pairs");
  const TimeGrid& time = solver.time();
  std::vector<DensityField> samples(Y1.begin(), Y1.end());
  samples.insert(samples.end(), Y2.begin(), Y2.end());
  double norm_Y = 0.0;
  for (const auto& y : samples) norm_Y = std::max(norm_Y, l1_norm(y));
  const CoefficientBounds bounds =
      measure_bounds(solver.coefficients().drift, solver.coefficients().potential, samples);
  const double base = stability_rate_base(bounds, time.T(), norm_Y);
  std::vector<std::vector<double>> ratios(Y1.size());
  parallel_for(Y1.size(), workers, [&](std::size_t q) {
    const double d0 = l1_distance(Y1[q], Y2[q]);
    if (d0 == 0.0) throw InvalidInput("solution_stability: identical initial data");
    const SolutionPath a = solver.solve(Y1[q], options);
    const SolutionPath b = solver.solve(Y2[q], options);
    for (std::size_t k = 1; k <= time.n_t(); ++k) ratios[q].push_back(l1_distance(a.at(k), b.at(k)) / d0);
  });
  std::vector<double> times;
  for (std::size_t k = 1; k <= time.n_t(); ++k) times.push_back(time.t(k));
  return fit_stability_envelope(std::move(times), std::move(ratios), base, calibration_pairs);
}

}  // namespace mvs
