#include "mvs/spde.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "mvs/error.hpp"
#include "mvs/fd_operators.hpp"
#include "mvs/parallel.hpp"
#include "mvs/rng.hpp"

namespace mvs {

namespace {

void require_no_potential(const Coefficients& c) {
  if (!c.potential.is_zero()) throw ConfigError("spde: potential terms are not supported with common noise");
}

// One theta-step of the flux-form generator with coefficients (A, b).
struct FluxStep {
  Tridiagonal L;
  TridiagonalSolver implicit;
  double dt;
  double theta;

  FluxStep(const Grid1D& grid, std::span<const double> A, std::span<const double> b, double dt_, double theta_)
      : L(flux_generator(grid, A, b, {})), dt(dt_), theta(theta_) {
    Tridiagonal M(L.size());
    for (std::size_t i = 0; i < L.size(); ++i) {
      M.lower[i] = -theta * dt * L.lower[i];
      M.diag[i] = 1.0 - theta * dt * L.diag[i];
      M.upper[i] = -theta * dt * L.upper[i];
    }
    implicit = TridiagonalSolver(M);
  }

  // (I + (1 - theta) dt L) x
  std::vector<double> explicit_part(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    if (theta < 1.0) {
      const auto Lx = L.apply(x);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += (1.0 - theta) * dt * Lx[i];
    }
    return y;
  }
  std::vector<double> apply(std::span<const double> x) const { return implicit.solve(explicit_part(x)); }
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::vector<double> average(std::span<const double> a, std::span<const double> b) {
  std::vector<double> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
  return m;
}

void check_path(const BrownianPath& path, const TimeGrid& time, std::size_t dims) {
  if (!(path.time == time)) throw InvalidInput("spde: path time grid does not match the solver");
  if (path.dims != dims) throw InvalidInput("spde: path has the wrong number of noise dimensions");
}

void finish_warnings(PathSolution& out) {
  const double edge = edge_mass(out.undressed.back());
  if (edge > 1e-6) {
    std::ostringstream msg;
    msg << "final state holds mass " << edge << " near the domain edges";
    out.warnings.push_back(msg.str());
  }
}

// Step g_k -> g_{k+1} with the measure argument either lagged or, in strict
// mode, iterated to the midpoint state. `dress_with(s)` returns (A, b) for
// the moment vector s.
template <class Moments, class Dress>
std::vector<double> advance(std::span<const double> g, double dt, const SpdeOptions& options,
                            Moments&& moments_of, Dress&& dress_with, std::size_t& inner) {
  std::vector<double> s = moments_of(g);
  auto [A, b] = dress_with(s);
  std::vector<double> next = FluxStep(moments_of.grid, A, b, dt, options.theta).apply(g);
  inner = 1;
  if (!options.strict || s.empty()) return next;
  std::vector<double> residuals;
  for (std::size_t it = 0; it < options.strict_max_iterations; ++it) {
    const std::vector<double> s_new = moments_of(average(g, next));
    const double change = max_abs_diff(s_new, s);
    residuals.push_back(change);
    s = s_new;
    auto [A2, b2] = dress_with(s);
    next = FluxStep(moments_of.grid, A2, b2, dt, options.theta).apply(g);
    inner = it + 2;
    if (change <= options.strict_tol) return next;
  }
  throw ConvergenceError("spde: strict measure iteration did not converge", residuals);
}

}  // namespace

BrownianPath BrownianPath::sample(std::uint64_t seed, const TimeGrid& time, std::size_t dims) {
  if (dims == 0) throw InvalidInput("BrownianPath::sample: dims must be >= 1");
  BrownianPath p;
  p.time = time;
  p.dims = dims;
  p.seed = seed;
  p.values.assign(dims, std::vector<double>(time.n_t() + 1, 0.0));
  const double sd = std::sqrt(time.dt());
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t k = 0; k < time.n_t(); ++k) {
      p.values[d][k + 1] = p.values[d][k] + sd * counter_normal(seed, d, k);
    }
  }
  return p;
}

BrownianPath BrownianPath::from_values(const TimeGrid& time, std::vector<std::vector<double>> values) {
  if (values.empty()) throw InvalidInput("BrownianPath::from_values: no dimensions");
  for (const auto& v : values) {
    if (v.size() != time.n_t() + 1) throw InvalidInput("BrownianPath::from_values: wrong length");
    if (v[0] != 0.0) throw InvalidInput("BrownianPath::from_values: W(0) must be 0");
    require_finite(v, "BrownianPath::from_values");
  }
  BrownianPath p;
  p.time = time;
  p.dims = values.size();
  p.values = std::move(values);
  return p;
}

double BrownianPath::max_abs() const {
  double m = 0.0;
  for (const auto& v : values) {
    for (double w : v) m = std::max(m, std::abs(w));
  }
  return m;
}

SpdeSolver::SpdeSolver(Grid1D grid, TimeGrid time, Coefficients coefficients, ComField sigma)
    : grid_(std::move(grid)), time_(std::move(time)), coefficients_(std::move(coefficients)),
      flow_(std::move(sigma)) {
  require_no_potential(coefficients_);
}

FlowTable SpdeSolver::table(double w_max) const { return FlowTable(flow_, grid_, w_max + 0.01); }

PathSolution SpdeSolver::solve_path(const DensityField& Y, const BrownianPath& path,
                                    const SpdeOptions& options) const {
  return solve_path(Y, path, table(path.max_abs()), options);
}

PathSolution SpdeSolver::solve_path(const DensityField& Y, const BrownianPath& path, const FlowTable& table,
                                    const SpdeOptions& options) const {
  require_same_grid(Y.grid(), grid_, "SpdeSolver::solve_path");
  require_same_grid(table.grid(), grid_, "SpdeSolver::solve_path");
  check_path(path, time_, 1);
  const auto& drift = coefficients_.drift;
  const ComField& sigma = flow_.field();

  PathSolution out;
  out.time = time_;
  out.path = path;
  out.strict = options.strict;
  if (sigma.has_zero_on(grid_)) {
    out.warnings.push_back("noise field '" + sigma.label() +
                           "' vanishes on the grid; flow derivatives are not bounded uniformly in w");
  }
  std::vector<double> g(Y.values());
  out.dressed.emplace_back(grid_, g, 0.0);
  out.undressed.emplace_back(grid_, g, 0.0);
  for (std::size_t k = 0; k < time_.n_t(); ++k) {
    const double t = time_.t(k);
    const double w = path(k);
    const std::vector<FlowState> backward = table.column(-w);
    struct {
      const Grid1D& grid;
      const InteractionDrift& drift;
      const std::vector<FlowState>& backward;
      std::vector<double> operator()(std::span<const double> state) const {
        return undressed_moments(drift, grid, state, backward);
      }
    } moments_of{grid_, drift, backward};
    auto dress_with = [&](std::span<const double> s) {
      DressedCoefficients d = dress(coefficients_.diffusion, drift, sigma, grid_, backward, t, w, s);
      return std::pair{std::move(d.A), std::move(d.b)};
    };
    std::size_t inner = 0;
    g = advance(g, time_.dt(), options, moments_of, dress_with, inner);
    out.max_inner_iterations = std::max(out.max_inner_iterations, inner);
    require_finite(g, "SpdeSolver::solve_path");
    const double t1 = time_.t(k + 1);
    out.dressed.emplace_back(grid_, g, t1);
    out.undressed.emplace_back(grid_, conjugate_values(grid_, g, table.column(path(k + 1)), options.order), t1);
  }
  finish_warnings(out);
  return out;
}

std::vector<PathSolution> SpdeSolver::solve_paths(const DensityField& Y, std::span<const BrownianPath> paths,
                                                  const SpdeOptions& options, std::size_t workers) const {
  double w_max = 0.0;
  for (const auto& p : paths) w_max = std::max(w_max, p.max_abs());
  const FlowTable shared = table(w_max);
  std::vector<PathSolution> out(paths.size());
  parallel_for(paths.size(), workers, [&](std::size_t p) { out[p] = solve_path(Y, paths[p], shared, options); });
  return out;
}

PathSolution SpdeSolver::solve_ito_direct(const DensityField& Y, const BrownianPath& path, double theta) const {
  require_same_grid(Y.grid(), grid_, "SpdeSolver::solve_ito_direct");
  check_path(path, time_, 1);
  using Sparse = Eigen::SparseMatrix<double>;
  using Triplet = Eigen::Triplet<double>;
  const std::size_t n = grid_.n();
  const auto N = static_cast<Eigen::Index>(n);
  const ComField& sigma = flow_.field();
  const auto& drift = coefficients_.drift;
  const double dt = time_.dt();

  // B v = -(sigma v)' in the conservative face-average form.
  std::vector<Triplet> bt;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const auto I = static_cast<Eigen::Index>(i);
    const double si = sigma(grid_.x(i));
    const double sj = sigma(grid_.x(i + 1));
    const double wi = grid_.weight(i);
    const double wj = grid_.weight(i + 1);
    bt.emplace_back(I, I, -0.5 * si / wi);
    bt.emplace_back(I, I + 1, -0.5 * sj / wi);
    bt.emplace_back(I + 1, I, 0.5 * si / wj);
    bt.emplace_back(I + 1, I + 1, 0.5 * sj / wj);
  }
  Sparse B(N, N);
  B.setFromTriplets(bt.begin(), bt.end());
  const Sparse B2 = B * B;
  Sparse I(N, N);
  I.setIdentity();

  std::vector<double> a = coefficients_.diffusion.sample(grid_);
  std::vector<double> correction(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = grid_.x(i);
    correction[i] = 0.5 * sigma(x) * sigma.d1(x);
  }

  PathSolution out;
  out.time = time_;
  out.path = path;
  std::vector<double> v(Y.values());
  out.undressed.emplace_back(grid_, v, 0.0);
  out.dressed.emplace_back(grid_, v, 0.0);
  Eigen::SparseLU<Sparse> lu;
  for (std::size_t k = 0; k < time_.n_t(); ++k) {
    std::vector<double> c = drift.evaluate(time_.t(k), grid_, v);
    for (std::size_t i = 0; i < n; ++i) c[i] -= correction[i];
    const Tridiagonal T = flux_generator(grid_, a, c, {});
    std::vector<Triplet> lt;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      lt.emplace_back(r, r, T.diag[i]);
      if (i > 0) lt.emplace_back(r, r - 1, T.lower[i]);
      if (i + 1 < n) lt.emplace_back(r, r + 1, T.upper[i]);
    }
    Sparse L(N, N);
    L.setFromTriplets(lt.begin(), lt.end());
    const double dW = path(k + 1) - path(k);
    const Sparse lhs = I - (theta * dt) * L - (0.5 * dW * dW) * B2;
    const Sparse rhs = I + ((1.0 - theta) * dt) * L + dW * B;
    lu.compute(lhs);
    if (lu.info() != Eigen::Success) throw NumericalError("solve_ito_direct: factorization failed");
    const Eigen::Map<const Eigen::VectorXd> vk(v.data(), N);
    const Eigen::VectorXd next = lu.solve(rhs * vk);
    v.assign(next.data(), next.data() + n);
    require_finite(v, "solve_ito_direct");
    out.undressed.emplace_back(grid_, v, time_.t(k + 1));
    out.dressed.emplace_back(grid_, v, time_.t(k + 1));
  }
  finish_warnings(out);
  return out;
}

PathSolution solve_path_multi(const DensityField& Y, const Grid1D& grid, const TimeGrid& time,
                              const Coefficients& coefficients, std::span<const double> sigma,
                              const BrownianPath& path, const SpdeOptions& options) {
  require_same_grid(Y.grid(), grid, "solve_path_multi");
  require_no_potential(coefficients);
  check_path(path, time, sigma.size());
  const auto& drift = coefficients.drift;
  const auto& kernels = drift.kernels();
  const std::size_t n = grid.n();
  PathSolution out;
  out.time = time;
  out.path = path;
  out.strict = options.strict;
  out.shifts.resize(time.n_t() + 1);
  for (std::size_t k = 0; k <= time.n_t(); ++k) {
    double s = 0.0;
    for (std::size_t d = 0; d < sigma.size(); ++d) s += sigma[d] * path.values[d][k];
    out.shifts[k] = s;
  }
  auto undress = [&](std::span<const double> g, double shift) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = interpolate(grid, g, grid.x(i) - shift, options.order);
    return v;
  };
  std::vector<double> g(Y.values());
  out.dressed.emplace_back(grid, g, 0.0);
  out.undressed.emplace_back(grid, g, 0.0);
  for (std::size_t k = 0; k < time.n_t(); ++k) {
    const double t = time.t(k);
    const double shift = out.shifts[k];
    struct {
      const Grid1D& grid;
      const std::vector<ScalarFn>& kernels;
      double shift;
      std::vector<double> operator()(std::span<const double> state) const {
        std::vector<double> s(kernels.size(), 0.0);
        for (std::size_t j = 0; j < kernels.size(); ++j) {
          for (std::size_t i = 0; i < grid.n(); ++i) s[j] += grid.weight(i) * kernels[j](grid.x(i) + shift) * state[i];
        }
        return s;
      }
    } moments_of{grid, kernels, shift};
    auto dress_with = [&](std::span<const double> s) {
      std::vector<double> A(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double y = grid.x(i) + shift;
        A[i] = coefficients.diffusion(y);
        b[i] = drift.value(t, y, s);
      }
      return std::pair{std::move(A), std::move(b)};
    };
    std::size_t inner = 0;
    g = advance(g, time.dt(), options, moments_of, dress_with, inner);
    out.max_inner_iterations = std::max(out.max_inner_iterations, inner);
    require_finite(g, "solve_path_multi");
    const double t1 = time.t(k + 1);
    out.dressed.emplace_back(grid, g, t1);
    out.undressed.emplace_back(grid, undress(g, out.shifts[k + 1]), t1);
  }
  finish_warnings(out);
  return out;
}

double ito_stratonovich_check(const SpdeSolver& solver, const DensityField& Y, const BrownianPath& path,
                              const SpdeOptions& options) {
  const PathSolution transform = solver.solve_path(Y, path, options);
  const PathSolution direct = solver.solve_ito_direct(Y, path, options.theta);
  return l1_distance(transform.final_state(), direct.final_state());
}

ExpectationStability expectation_stability(const SpdeSolver& solver, const DensityField& Y1,
                                           const DensityField& Y2, std::size_t n_paths, std::uint64_t seed,
                                           const SpdeOptions& options, std::size_t workers) {
  if (n_paths < 10) throw InvalidInput("expectation_stability: n_paths must be >= 10");
  const TimeGrid& time = solver.time();
  const double d0 = l1_distance(Y1, Y2);
  ExpectationStability out;
  out.n_paths = n_paths;
  for (std::size_t k = 1; k <= time.n_t(); ++k) out.times.push_back(time.t(k));
  out.ratios.assign(time.n_t(), 0.0);
  if (d0 == 0.0) return out;

  std::vector<BrownianPath> paths;
  for (std::size_t p = 0; p < n_paths; ++p) paths.push_back(BrownianPath::sample(seed + p, time));
  double w_max = 0.0;
  for (const auto& p : paths) w_max = std::max(w_max, p.max_abs());
  const FlowTable table = solver.table(w_max);
  std::vector<std::vector<double>> per_path(n_paths);
  parallel_for(n_paths, workers, [&](std::size_t p) {
    const PathSolution a = solver.solve_path(Y1, paths[p], table, options);
    const PathSolution b = solver.solve_path(Y2, paths[p], table, options);
    per_path[p].resize(time.n_t());
    for (std::size_t k = 1; k <= time.n_t(); ++k) per_path[p][k - 1] = l1_distance(a.dressed[k], b.dressed[k]) / d0;
  });
  for (std::size_t p = 0; p < n_paths; ++p) {
    for (std::size_t k = 0; k < time.n_t(); ++k) out.ratios[k] += per_path[p][k];
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < time.n_t(); ++k) {
    out.ratios[k] /= static_cast<double>(n_paths);
    num += out.times[k] * std::log(out.ratios[k]);
    den += out.times[k] * out.times[k];
  }
  out.C = num / den;
  return out;
}

StabilityEnvelope path_stability(const SpdeSolver& solver, std::span<const DensityField> Y1,
                                 std::span<const DensityField> Y2, std::span<const BrownianPath> paths,
                                 double base, const SpdeOptions& options, std::size_t workers) {
  if (Y1.size() != Y2.size() || Y1.empty()) throw InvalidInput("path_stability: need matching pairs");
  const TimeGrid& time = solver.time();
  double w_max = 0.0;
  for (const auto& p : paths) w_max = std::max(w_max, p.max_abs());
  const FlowTable table = solver.table(w_max);
  const std::size_t pairs = Y1.size();
  std::vector<std::vector<double>> ratios(pairs * paths.size());
  parallel_for(ratios.size(), workers, [&](std::size_t r) {
    const std::size_t q = r % pairs;
    const std::size_t p = r / pairs;
    const double d0 = l1_distance(Y1[q], Y2[q]);
    if (d0 == 0.0) throw InvalidInput("path_stability: identical initial data");
    const PathSolution a = solver.solve_path(Y1[q], paths[p], table, options);
    const PathSolution b = solver.solve_path(Y2[q], paths[p], table, options);
    for (std::size_t k = 1; k <= time.n_t(); ++k) ratios[r].push_back(l1_distance(a.undressed[k], b.undressed[k]) / d0);
  });
  std::vector<double> times;
  for (std::size_t k = 1; k <= time.n_t(); ++k) times.push_back(time.t(k));
  return fit_stability_envelope(std::move(times), std::move(ratios), base, pairs);
}

PathSensitivity sensitivity_on_path(const SpdeSolver& solver, const PathSolution& solution,
                                    std::span<const double> probes,
                                    std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                    const SpdeOptions& options, std::size_t workers) {
  if (solution.strict || options.strict) {
    throw InvalidInput("sensitivity_on_path: requires a path solved with the lagged measure argument");
  }
  const Grid1D& grid = solver.grid();
  const TimeGrid& time = solver.time();
  if (!(solution.time == time) || solution.dressed.size() != time.n_t() + 1) {
    throw InvalidInput("sensitivity_on_path: solution does not belong to this solver");
  }
  for (const auto& [a, b] : pairs) {
    if (a >= probes.size() || b >= probes.size()) throw InvalidInput("sensitivity_on_path: pair index out of range");
  }
  const auto& drift = solver.coefficients().drift;
  if (!pairs.empty() && !drift.is_measure_independent() && !drift.has_second_variation()) {
    throw ConfigError("sensitivity_on_path: drift '" + drift.name() + "' provides no second variation");
  }
  const ComField& sigma = solver.flow().field();
  const std::size_t n = grid.n();
  const std::size_t m = drift.moment_count();
  const double dt = time.dt();
  const double theta = options.theta;
  const FlowTable table = solver.table(solution.path.max_abs());

  // Per step: the step operator, dressed kernels and outer derivatives.
  struct StepData {
    std::unique_ptr<FluxStep> step;
    std::vector<double> kernels;  // [j * n + i]: g_j(Z(-w, x_i))
    std::vector<double> grad;     // [i * m + j]: d b~_i / d s_j
    std::vector<double> hess;     // [(i * m + j) * m + l]
  };
  std::vector<StepData> steps(time.n_t());
  std::vector<std::vector<FlowState>> forward(time.n_t() + 1);
  for (std::size_t k = 0; k <= time.n_t(); ++k) forward[k] = table.column(solution.path(k));
  parallel_for(time.n_t(), workers, [&](std::size_t k) {
    const double t = time.t(k);
    const double w = solution.path(k);
    const auto backward = table.column(-w);
    const auto& g = solution.dressed[k].values();
    const auto s = undressed_moments(drift, grid, g, backward);
    const auto d = dress(solver.coefficients().diffusion, drift, sigma, grid, backward, t, w, s);
    StepData& sd = steps[k];
    sd.step = std::make_unique<FluxStep>(grid, d.A, d.b, dt, theta);
    sd.kernels.resize(m * n);
    sd.grad.resize(n * m);
    if (!pairs.empty()) sd.hess.resize(n * m * m);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) sd.kernels[j * n + i] = drift.kernels()[j](backward[i].Z);
    }
    std::vector<double> gs(m), hs(m * m);
    for (std::size_t i = 0; i < n; ++i) {
      if (m == 0) break;
      const double inv = 1.0 / backward[i].Zx;
      drift.grad_s(t, backward[i].Z, s, gs);
      for (std::size_t j = 0; j < m; ++j) sd.grad[i * m + j] = gs[j] * inv;
      if (!pairs.empty()) {
        drift.hess_s(t, backward[i].Z, s, hs);
        for (std::size_t q = 0; q < m * m; ++q) sd.hess[i * m * m + q] = hs[q] * inv;
      }
    }
  });

  auto moments = [&](const StepData& sd, std::span<const double> x) {
    std::vector<double> s(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) s[j] += grid.weight(i) * sd.kernels[j * n + i] * x[i];
    }
    return s;
  };
  // rhs += dt * (-(db u)') with db_i = sum_j grad_ij ds_j.
  auto add_transport = [&](const StepData& sd, std::span<const double> ds, std::span<const double> u,
                           std::vector<double>& rhs) {
    if (m == 0) return;
    std::vector<double> flux(n);
    for (std::size_t i = 0; i < n; ++i) {
      double db = 0.0;
      for (std::size_t j = 0; j < m; ++j) db += sd.grad[i * m + j] * ds[j];
      flux[i] = db * u[i];
    }
    const auto div = flux_divergence(grid, flux);
    for (std::size_t i = 0; i < n; ++i) rhs[i] += dt * div[i];
  };
  auto blend = [&](std::span<const double> a, std::span<const double> b) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = theta * b[i] + (1.0 - theta) * a[i];
    return out;
  };

  PathSensitivity out;
  out.first.time = time;
  out.first.probes.assign(probes.begin(), probes.end());
  out.first.mollification_width = mollification_width(grid);
  out.first.iterations.assign(probes.size(), 0);
  std::vector<std::vector<std::vector<double>>> xi(probes.size());  // dressed
  out.first.paths.resize(probes.size());
  parallel_for(probes.size(), workers, [&](std::size_t p) {
    std::vector<double> x = mollified_delta(grid, probes[p]).values();
    xi[p].push_back(x);
    out.first.paths[p].emplace_back(grid, x, 0.0);
    for (std::size_t k = 0; k < time.n_t(); ++k) {
      const StepData& sd = steps[k];
      std::vector<double> rhs = sd.step->explicit_part(x);
      add_transport(sd, moments(sd, x), blend(solution.dressed[k].values(), solution.dressed[k + 1].values()), rhs);
      x = sd.step->implicit.solve(rhs);
      xi[p].push_back(x);
      out.first.paths[p].emplace_back(grid, conjugate_values(grid, x, forward[k + 1], options.order), time.t(k + 1));
    }
  });

  out.second.time = time;
  out.second.pairs.assign(pairs.begin(), pairs.end());
  out.second.paths.resize(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t q) {
    const auto [pa, pb] = pairs[q];
    std::vector<double> e(n, 0.0);
    out.second.paths[q].emplace_back(grid, e, 0.0);
    for (std::size_t k = 0; k < time.n_t(); ++k) {
      const StepData& sd = steps[k];
      std::vector<double> rhs = sd.step->explicit_part(e);
      const auto gbar = blend(solution.dressed[k].values(), solution.dressed[k + 1].values());
      if (m > 0) {
        const auto sa = moments(sd, xi[pa][k]);
        const auto sb = moments(sd, xi[pb][k]);
        add_transport(sd, moments(sd, e), gbar, rhs);
        add_transport(sd, sa, blend(xi[pb][k], xi[pb][k + 1]), rhs);
        add_transport(sd, sb, blend(xi[pa][k], xi[pa][k + 1]), rhs);
        std::vector<double> flux(n);
        for (std::size_t i = 0; i < n; ++i) {
          double d2 = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t l = 0; l < m; ++l) d2 += sd.hess[(i * m + j) * m + l] * sa[j] * sb[l];
          }
          flux[i] = d2 * gbar[i];
        }
        const auto div = flux_divergence(grid, flux);
        for (std::size_t i = 0; i < n; ++i) rhs[i] += dt * div[i];
      }
      e = sd.step->implicit.solve(rhs);
      out.second.paths[q].emplace_back(grid, conjugate_values(grid, e, forward[k + 1], options.order),
                                       time.t(k + 1));
    }
  });
  return out;
}

}  // namespace mvs
