#pragma once

// Pathwise solution of the stochastic McKean-Vlasov equation with common
// noise sigma(x) o dW via stochastic characteristics.
//
// The dressed state g = e^{-W Omega'} v solves
//   g' = (1/2)(A~ g)'' - (b~ g)'
// with coefficients from `dress` at w = W(t_k), frozen over [t_k, t_{k+1}].
// Each step is one theta-step of the flux-form generator (diffusion and
// transport both implicit). The measure argument of b~ is the undressed
// state at t_k (one-step lag); strict mode instead iterates the step until
// the moments used equal those of the step midpoint state to 1e-8.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvs/characteristics.hpp"
#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"
#include "mvs/mild_solver.hpp"
#include "mvs/sensitivity.hpp"

namespace mvs {

struct BrownianPath {
  TimeGrid time{1.0, 1};
  std::size_t dims = 1;
  std::vector<std::vector<double>> values;  // [dim][time index], values[d][0] = 0
  std::uint64_t seed = 0;

  /// Increments sqrt(dt) N(0, 1) from the counter generator keyed by
  /// (seed, dim, step); bit-reproducible.
  static BrownianPath sample(std::uint64_t seed, const TimeGrid& time, std::size_t dims = 1);
  /// Path from explicit values (values[d][0] must be 0).
  static BrownianPath from_values(const TimeGrid& time, std::vector<std::vector<double>> values);

  double operator()(std::size_t k) const { return values.at(0).at(k); }
  double max_abs() const;
};

struct PathSolution {
  TimeGrid time{1.0, 1};
  std::vector<SignedField> dressed;    // g at every time node
  std::vector<SignedField> undressed;  // v at every time node
  BrownianPath path;
  std::vector<double> shifts;          // multi solver: s_k = sigma . W_k
  bool strict = false;
  std::size_t max_inner_iterations = 0;
  std::vector<std::string> warnings;

  const SignedField& final_state() const { return undressed.back(); }
};

struct SpdeOptions {
  double theta = 0.5;
  bool strict = false;
  double strict_tol = 1e-8;
  std::size_t strict_max_iterations = 100;
  InterpOrder order = InterpOrder::kCubic;
};

/// One-dimensional problem: diffusion a = sigma_ind^2, drift b (potential
/// must be zero) and a noise field.
class SpdeSolver {
 public:
  SpdeSolver(Grid1D grid, TimeGrid time, Coefficients coefficients, ComField sigma);

  const Grid1D& grid() const { return grid_; }
  const TimeGrid& time() const { return time_; }
  const Coefficients& coefficients() const { return coefficients_; }
  const FlowMap& flow() const { return flow_; }

  /// Flow table covering |w| <= w_max (plus one table step of slack).
  FlowTable table(double w_max) const;

  PathSolution solve_path(const DensityField& Y, const BrownianPath& path,
                          const SpdeOptions& options = {}) const;
  PathSolution solve_path(const DensityField& Y, const BrownianPath& path, const FlowTable& table,
                          const SpdeOptions& options = {}) const;
  /// Independent paths sharing one flow table, in parallel.
  std::vector<PathSolution> solve_paths(const DensityField& Y, std::span<const BrownianPath> paths,
                                        const SpdeOptions& options = {}, std::size_t workers = 1) const;

  /// Direct discretization of the Ito form
  ///   dv = [(1/2)((a + sigma^2) v)'' - (b v)'] dt - (sigma v)' dW
  /// by a drift-implicit Milstein step: with B v = -(sigma v)' and
  /// L the Stratonovich generator,
  ///   (I - theta dt L - dW^2 B^2 / 2) v_{k+1} = (I + (1 - theta) dt L + dW B) v_k.
  PathSolution solve_ito_direct(const DensityField& Y, const BrownianPath& path, double theta = 0.5) const;

 private:
  Grid1D grid_;
  TimeGrid time_;
  Coefficients coefficients_;
  FlowMap flow_;
};

/// Constant noise matrix sigma (1 x d''): dressing is the translation by
/// s_t = sigma . W_t,
///   A~(x) = a(x + s), b~(t, x, [g]) = b(t, x + s, [g(. - s)]), v_t(x) = g_t(x - s_t).
PathSolution solve_path_multi(const DensityField& Y, const Grid1D& grid, const TimeGrid& time,
                              const Coefficients& coefficients, std::span<const double> sigma,
                              const BrownianPath& path, const SpdeOptions& options = {});

/// Final-time L1 distance between the transform solution and the direct
/// Ito scheme on the same path.
double ito_stratonovich_check(const SpdeSolver& solver, const DensityField& Y, const BrownianPath& path,
                              const SpdeOptions& options = {});

/// Monte Carlo estimate of E||g1_t - g2_t|| / ||Y1 - Y2|| on `n_paths` paths
/// (seeds seed, seed + 1, ...) and the growth constant C of the
/// least-squares fit log ratio(t) = C t (through the origin).
struct ExpectationStability {
  double C = 0.0;
  std::size_t n_paths = 0;
  std::vector<double> times;
  std::vector<double> ratios;
};
ExpectationStability expectation_stability(const SpdeSolver& solver, const DensityField& Y1,
                                           const DensityField& Y2, std::size_t n_paths, std::uint64_t seed,
                                           const SpdeOptions& options = {}, std::size_t workers = 1);

/// Pathwise stability: ratios ||v1_t - v2_t|| / ||Y1 - Y2|| for every pair
/// and seed, fitted to K E_{1/2}(kappa sqrt t).
StabilityEnvelope path_stability(const SpdeSolver& solver, std::span<const DensityField> Y1,
                                 std::span<const DensityField> Y2, std::span<const BrownianPath> paths,
                                 double base, const SpdeOptions& options = {}, std::size_t workers = 1);

/// Exact first and second derivatives of the lagged step map with respect
/// to the initial state, along a fixed path, undressed at every node.
/// Requires a path solved without strict mode.
struct PathSensitivity {
  SensitivityKernel first;
  SecondVariation second;
};
PathSensitivity sensitivity_on_path(const SpdeSolver& solver, const PathSolution& solution,
                                    std::span<const double> probes,
                                    std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                    const SpdeOptions& options = {}, std::size_t workers = 1);

}  // namespace mvs
