#pragma once

// N-agent Euler-Maruyama simulation with idiosyncratic and common noise:
//   X_{k+1} = X_k + b(t_k, X_k, mu^N_k) dt + sigma_ind(X_k) dB^i + sigma(X_k) dW,
// mu^N_k the empirical measure, moments (g_j, mu^N) = N^{-1} sum_i g_j(X^i).
// Random numbers are counter-based: initial draw i uses (seed, 0, i) and the
// increment of particle i at step k uses (seed, i + 1, k), so trajectories
// do not depend on the worker count.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvs/characteristics.hpp"
#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"
#include "mvs/spde.hpp"

namespace mvs {

struct ParticleEnsemble {
  TimeGrid time{1.0, 1};
  Grid1D domain{-1.0, 1.0, 2};
  std::size_t N = 0;
  std::vector<std::vector<double>> positions;  // [time index][particle]
  BrownianPath common;
  std::uint64_t seed = 0;
  std::size_t reflections = 0;
  std::vector<std::string> warnings;
};

/// Inverse-CDF sampling of Y (CDF by trapezoid sums, inverted linearly).
std::vector<double> sample_initial(const DensityField& Y, std::size_t N, std::uint64_t seed);

/// Particles leaving [x_min, x_max] of Y's grid are reflected back and
/// counted; more than 0.1% reflections per particle-step adds a warning.
ParticleEnsemble simulate(std::size_t N, const DensityField& Y, const Coefficients& coefficients,
                          const ComField& sigma, const BrownianPath& common, std::uint64_t seed,
                          std::size_t workers = 1);

/// 1.06 * std * N^{-1/5}.
double silverman_bandwidth(std::span<const double> positions);

/// Gaussian kernel density estimate on `grid`; each kernel is normalized to
/// unit trapezoid mass on the grid. bandwidth <= 0 selects Silverman's rule.
DensityField kernel_density(const Grid1D& grid, std::span<const double> positions, double bandwidth = 0.0);
DensityField empirical_density(const ParticleEnsemble& ensemble, std::size_t k, double bandwidth = 0.0);

/// L1 distance between the KDE of the ensemble and the SPDE state v at the
/// requested time indices. The two must share the common path.
std::vector<double> chaos_gap(const PathSolution& spde, const ParticleEnsemble& ensemble,
                              std::span<const std::size_t> time_indices, double bandwidth = 0.0);

/// Least-squares slope of log(gap) against log(N).
double loglog_slope(std::span<const double> N, std::span<const double> gaps);

}  // namespace mvs
