#pragma once

// First and second variations of the solution map Y -> phi_t.
//
// xi_t(x; .) is computed as the exact derivative of the discrete mild map:
// the same midpoint sources and kernels, linearized around the background
// path. eta_t(x, z; .) is propagated by a Crank-Nicolson discretization of
// the linearized forward generator driven by the second-order source q.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"
#include "mvs/fd_operators.hpp"
#include "mvs/mild_solver.hpp"

namespace mvs {

/// Coefficients and their variations at every midpoint state of a path.
struct BackgroundLinearization {
  TimeGrid time{1.0, 1};
  std::vector<std::vector<double>> phi_mid;
  std::vector<std::vector<double>> b_mid;
  std::vector<std::vector<double>> V_mid;
  std::vector<MeasureDerivative> db;
  std::vector<MeasureDerivative> dV;
  bool has_b = false;
  bool has_V = false;

  static BackgroundLinearization build(const Grid1D& grid, const std::vector<std::vector<double>>& path,
                                       const TimeGrid& time, const Coefficients& coefficients);
  static BackgroundLinearization build(const SolutionPath& phi, const Coefficients& coefficients);
};

struct SensitivityKernel {
  TimeGrid time{1.0, 1};
  std::vector<double> probes;
  std::vector<std::vector<SignedField>> paths;  // [probe][time index]
  std::vector<std::size_t> iterations;
  double mollification_width = 0.0;

  const SignedField& at(std::size_t probe, std::size_t k) const { return paths.at(probe).at(k); }
};

struct SecondVariation {
  TimeGrid time{1.0, 1};
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // indices into the probe list
  std::vector<std::vector<SignedField>> paths;             // [pair][time index]

  const SignedField& at(std::size_t pair, std::size_t k) const { return paths.at(pair).at(k); }
};

/// Linear mild equation around `phi` started from `initial`:
///   xi_k = G_{t_k} xi_0 + dt sum_j [ G (V xi + dV[xi] phi)_mid - gradG (b xi + db[xi] phi)_mid ].
/// Picard iteration to `tol` in sup-in-time L1; throws ConvergenceError.
std::vector<SignedField> solve_linearized(const MildSolver& solver, const BackgroundLinearization& lin,
                                          const SignedField& initial, double tol = 1e-11,
                                          std::size_t max_iterations = 200,
                                          std::size_t* iterations = nullptr);

/// xi for mollified point masses at each probe, in parallel over probes.
SensitivityKernel solve_first_variation(const MildSolver& solver, const SolutionPath& phi,
                                        std::span<const double> probes, double tol = 1e-11,
                                        std::size_t workers = 1);

/// Backward propagator Phi^{t,s} on test functions and its forward adjoint
/// (Phi^{t,s})^* on signed densities, one Crank-Nicolson step per time step
/// of the background path. The adjoint is the transpose with respect to the
/// trapezoid pairing, so (Phi f, rho) = (f, Phi^* rho) holds exactly.
class LinearizedPropagator {
 public:
  LinearizedPropagator(const Grid1D& grid, const DiffusionMatrix& diffusion,
                       const BackgroundLinearization& lin);

  const TimeGrid& time() const { return time_; }
  const Grid1D& grid() const { return grid_; }
  std::size_t steps() const { return steps_.size(); }
  const ThetaStep& step(std::size_t k) const { return steps_.at(k); }

  /// (Phi^{from,to})^* rho for time indices from <= to.
  std::vector<double> forward(std::size_t from, std::size_t to, std::span<const double> rho) const;
  /// Phi^{t,s} f for time indices t <= s.
  std::vector<double> backward(std::size_t t, std::size_t s, std::span<const double> f) const;

 private:
  Grid1D grid_;
  TimeGrid time_;
  std::vector<ThetaStep> steps_;
};

LinearizedPropagator build_propagator(const SolutionPath& phi, const Coefficients& coefficients);

/// Second-order source at step k:
///   q = -d/dx[ db[xa] xb + db[xb] xa + d2b[xa, xb] phi ] + dV[xa] xb + dV[xb] xa + d2V[xa, xb] phi,
/// all evaluated at the midpoint background.
std::vector<double> second_order_source(const Grid1D& grid, const Coefficients& coefficients, double t,
                                        std::span<const double> phi_mid, std::span<const double> xa,
                                        std::span<const double> xb);

/// eta_{k+1} = S_k eta_k + dt (I - dt/2 L_k)^{-1} q_{k+1/2}, eta_0 = 0.
/// Throws ConfigError when a coefficient lacks second variations.
SecondVariation solve_second_variation(const SolutionPath& phi, const Coefficients& coefficients,
                                       const SensitivityKernel& xi, const LinearizedPropagator& propagator,
                                       std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                       std::size_t workers = 1);

/// Fit of ||xi_t||_{L1} <= E_{1/2}[C (2t + 1)(2 lambda R + V_sup + b_sup)].
struct FirstVariationBound {
  double rate = 0.0;  // (2 lambda R + V_sup + b_sup)
  double C = 0.0;
  bool ok = false;
  std::vector<double> times;
  std::vector<double> norms;  // max over probes
};
FirstVariationBound fit_first_variation_bound(const SensitivityKernel& xi, const CoefficientBounds& bounds,
                                              double C_max = 10.0);

/// Test-function dictionary standing in for the unit ball of C^2:
/// x^p exp(-x^2 / (2 s^2)) / norm, p = 0..4, s in {0.5, 1, 2, 4} (20 functions),
/// each scaled to unit C^2 surrogate norm.
std::vector<std::vector<double>> test_dictionary(const Grid1D& grid);

/// sup|f| + sup|f'|.
double c1_norm(const Grid1D& grid, std::span<const double> f);

/// Fit of sup_f ||Phi^{t,s} f||_{C^1} / ||f||_{C^1} <= e^{C (s - t)} E_{1/2}(c sqrt(s - t)),
/// choosing the (C, c) pair with the smallest envelope at the longest lag.
struct PropagatorGrowth {
  double C = 0.0;
  double c = 0.0;
  std::vector<double> lags;
  std::vector<double> norms;
};
/// Measured over Phi^{t,T} for every grid time t < T.
PropagatorGrowth fit_propagator_growth(const LinearizedPropagator& propagator);

}  // namespace mvs
