#pragma once

// Nonlinear mild equation
//
//   phi_t = G_t Y + int_0^t G_{t-s}[V_s(phi_s) phi_s] ds
//                 - int_0^t grad G_{t-s}[b_s(phi_s) phi_s] ds
//
// solved by Picard iteration on a time grid. Time integrals use midpoint
// nodes: the integrand on [t_j, t_{j+1}] is the source at
// phi_mid = (phi_j + phi_{j+1}) / 2 propagated over (k - j - 1/2) dt.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"
#include "mvs/kernels.hpp"

namespace mvs {

struct SolutionPath {
  TimeGrid time;
  std::vector<DensityField> states;  // n_t + 1 entries
  std::size_t iterations = 0;
  /// First iterate whose residual fell below tol.
  std::size_t iterations_to_tol = 0;
  double residual = 0.0;
  std::vector<double> residual_history;

  const DensityField& at(std::size_t k) const { return states.at(k); }
  const DensityField& final_state() const { return states.back(); }
  const Grid1D& grid() const { return states.front().grid(); }
};

struct PicardOptions {
  double tol = 1e-8;
  std::size_t max_iterations = 200;
  /// Fail when the mass in the outer edge layer exceeds this value.
  double edge_mass_limit = 1e-8;
};

/// Mass in the outer 1/20 of the domain on each side.
double edge_mass(const SignedField& field);

/// Volterra sums in the kernel's transformed space, with the symbols for
/// every offset t_k and (l + 1/2) dt computed once.
class VolterraEngine {
 public:
  VolterraEngine(HeatKernel kernel, TimeGrid time);

  const HeatKernel& kernel() const { return kernel_; }
  const TimeGrid& time() const { return time_; }

  /// out_k = G_{t_k} init + dt sum_{j<k} ( G_{(k-j-1/2)dt} vsrc_j
  ///                                     - gradG_{(k-j-1/2)dt} bsrc_j ),
  /// for k = 0..n_t (out_0 = init). An empty source list means zero source.
  std::vector<std::vector<double>> evaluate(std::span<const double> init,
                                            const std::vector<std::vector<double>>& vsrc,
                                            const std::vector<std::vector<double>>& bsrc) const;

 private:
  HeatKernel kernel_;
  TimeGrid time_;
  std::vector<HeatKernel::Spectrum> heat_;  // index k - 1, t = t_k
  std::vector<HeatKernel::Spectrum> mid_;   // index l, t = (l + 1/2) dt
  std::vector<HeatKernel::Spectrum> flux_;  // index l, t = (l + 1/2) dt
};

class MildSolver {
 public:
  MildSolver(Coefficients coefficients, HeatKernel kernel, TimeGrid time);

  const Coefficients& coefficients() const { return coefficients_; }
  const VolterraEngine& engine() const { return engine_; }
  const TimeGrid& time() const { return engine_.time(); }
  const Grid1D& grid() const { return engine_.kernel().grid(); }

  /// phi_t = G_t Y.
  SolutionPath heat_flow(const DensityField& Y) const;
  /// One application of the fixed-point map. Picard iterates are signed;
  /// only the fixed point is a density.
  std::vector<SignedField> picard_map(const DensityField& Y, const std::vector<SignedField>& phi) const;
  /// Iterates the map from the heat flow until the sup-in-time L1 distance
  /// between iterates drops below tol. Intermediate iterates are signed;
  /// iteration continues past tol until the iterate is nonnegative within
  /// kNegativityTolerance. Throws ConvergenceError at the iteration cap and
  /// DomainTruncationError when mass reaches the edges.
  SolutionPath solve(const DensityField& Y, const PicardOptions& options = {}) const;

  /// The map on raw (signed) values.
  std::vector<std::vector<double>> map_values(std::span<const double> Y,
                                              const std::vector<std::vector<double>>& phi) const;
  /// Projects every state and wraps it as a path; throws on negativity
  /// beyond kNegativityTolerance.
  SolutionPath to_path(std::vector<std::vector<double>> values) const;

  /// Midpoint states (phi_j + phi_{j+1}) / 2, j = 0..n_t-1.
  static std::vector<std::vector<double>> midpoints(const std::vector<std::vector<double>>& path);

 private:
  Coefficients coefficients_;
  VolterraEngine engine_;
};

/// Convenience wrapper constructing the kernel and solver.
SolutionPath solve_mild(const DensityField& Y, const Coefficients& coefficients, const TimeGrid& time,
                        double tol);

/// max over tests and interior time nodes of
///   | d/dt (f, phi_t) - ((1/2) a f'' + b f' + V f, phi_t) |
/// with central time differences and finite-difference f', f''.
double weak_residual(const SolutionPath& phi, const Coefficients& coefficients,
                     const std::vector<std::vector<double>>& tests);

/// True when residual_history is nonincreasing from index `after` on
/// (residual_history[0] compares iterate 1 with iterate 0).
bool contraction_monotone(std::span<const double> residual_history, std::size_t after = 3);

/// kappa / C_bar = (V_sup sqrt(T) + b_sup) + L_A (sqrt(T) + 1) ||Y||.
double stability_rate_base(const CoefficientBounds& bounds, double T, double norm_Y);

/// Envelope ratio(p, t) <= K E_{1/2}(kappa sqrt(t)), kappa = C_bar * base.
/// C_bar is the smallest value for which the first `calibration_pairs`
/// pairs satisfy the envelope with K = 1; K is then the smallest prefactor
/// covering every pair.
struct StabilityEnvelope {
  double base = 0.0;
  double C_bar = 0.0;
  double kappa = 0.0;
  double K = 0.0;
  double K_max = 2.0;
  bool pass = false;
  std::vector<double> times;
  std::vector<std::vector<double>> ratios;
};

StabilityEnvelope fit_stability_envelope(std::vector<double> times,
                                         std::vector<std::vector<double>> ratios, double base,
                                         std::size_t calibration_pairs, double K_max = 2.0);

/// Solves every pair (Y1[q], Y2[q]) and fits the envelope to the ratios
/// ||phi1_t - phi2_t|| / ||Y1 - Y2|| at t_1..t_{n_t}; kappa uses the
/// coefficient bounds measured over all initial data.
StabilityEnvelope solution_stability(const MildSolver& solver, std::span<const DensityField> Y1,
                                     std::span<const DensityField> Y2, std::size_t calibration_pairs,
                                     const PicardOptions& options = {}, std::size_t workers = 1);

}  // namespace mvs
