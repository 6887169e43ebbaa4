#include "mvs/particles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mvs/error.hpp"
#include "mvs/parallel.hpp"
#include "mvs/rng.hpp"

namespace mvs {

namespace {

bool same_path(const BrownianPath& a, const BrownianPath& b) {
  return a.time == b.time && a.dims == b.dims && a.values == b.values;
}

}  // namespace

std::vector<double> sample_initial(const DensityField& Y, std::size_t N, std::uint64_t seed) {
  const Grid1D& grid = Y.grid();
  const std::size_t n = grid.n();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) cdf[i] = cdf[i - 1] + 0.5 * grid.h() * (Y[i - 1] + Y[i]);
  const double total = cdf.back();
  if (!(total > 0.0)) throw InvalidInput("sample_initial: initial density has no mass");
  std::vector<double> x(N);
  for (std::size_t p = 0; p < N; ++p) {
    const double u = counter_uniform(seed, 0, p) * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t j = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), 1, n - 1);
    const double span = cdf[j] - cdf[j - 1];
    const double frac = span > 0.0 ? (u - cdf[j - 1]) / span : 0.5;
    x[p] = grid.x(j - 1) + frac * grid.h();
  }
  return x;
}

ParticleEnsemble simulate(std::size_t N, const DensityField& Y, const Coefficients& coefficients,
                          const ComField& sigma, const BrownianPath& common, std::uint64_t seed,
                          std::size_t workers) {
  if (N < 2) throw InvalidInput("simulate: N must be >= 2");
  if (common.dims != 1) throw InvalidInput("simulate: common path must be one-dimensional");
  if (!coefficients.potential.is_zero()) throw ConfigError("simulate: potential terms are not supported");
  const Grid1D& grid = Y.grid();
  const TimeGrid& time = common.time;
  const double dt = time.dt();
  const double sdt = std::sqrt(dt);
  const auto& drift = coefficients.drift;
  const auto& kernels = drift.kernels();
  const double lo = grid.x_min();
  const double hi = grid.x_max();

  ParticleEnsemble out;
  out.time = time;
  out.domain = grid;
  out.N = N;
  out.common = common;
  out.seed = seed;
  out.positions.reserve(time.n_t() + 1);
  out.positions.push_back(sample_initial(Y, N, seed));

  const std::size_t chunks = std::max<std::size_t>(1, std::min(workers, N));
  std::vector<std::size_t> chunk_reflections(chunks, 0);
  std::vector<double> s(kernels.size());
  for (std::size_t k = 0; k < time.n_t(); ++k) {
    const std::vector<double>& x = out.positions.back();
    for (std::size_t j = 0; j < kernels.size(); ++j) {
      double acc = 0.0;
      for (double xi : x) acc += kernels[j](xi);
      s[j] = acc / static_cast<double>(N);
    }
    const double t = time.t(k);
    const double dW = common(k + 1) - common(k);
    std::vector<double> next(N);
    parallel_for(chunks, workers, [&](std::size_t c) {
      const std::size_t begin = c * N / chunks;
      const std::size_t end = (c + 1) * N / chunks;
      for (std::size_t i = begin; i < end; ++i) {
        const double xi = x[i];
        double y = xi + drift.value(t, xi, s) * dt + coefficients.diffusion.sigma(xi) * sdt * counter_normal(seed, i + 1, k) +
                   sigma(xi) * dW;
        if (!std::isfinite(y)) throw NumericalError("simulate: non-finite particle position");
        while (y < lo || y > hi) {
          y = y < lo ? 2.0 * lo - y : 2.0 * hi - y;
          ++chunk_reflections[c];
        }
        next[i] = y;
      }
    });
    out.positions.push_back(std::move(next));
  }
  for (std::size_t r : chunk_reflections) out.reflections += r;
  const double rate = static_cast<double>(out.reflections) / (static_cast<double>(N) * static_cast<double>(time.n_t()));
  if (rate > 1e-3) {
    std::ostringstream msg;
    msg << "reflections at " << 100.0 * rate << "% of particle-steps; the domain is too small";
    out.warnings.push_back(msg.str());
  }
  return out;
}

double silverman_bandwidth(std::span<const double> positions) {
  const auto n = static_cast<double>(positions.size());
  if (positions.size() < 2) throw InvalidInput("silverman_bandwidth: need at least two samples");
  double mean = 0.0;
  for (double x : positions) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : positions) var += (x - mean) * (x - mean);
  var /= n - 1.0;
  return 1.06 * std::sqrt(var) * std::pow(n, -0.2);
}

DensityField kernel_density(const Grid1D& grid, std::span<const double> positions, double bandwidth) {
  if (positions.empty()) throw InvalidInput("kernel_density: no samples");
  if (bandwidth <= 0.0) bandwidth = silverman_bandwidth(positions);
  if (!(bandwidth > 0.0)) throw InvalidInput("kernel_density: degenerate sample");
  const std::size_t n = grid.n();
  const double h = grid.h();
  const double cutoff = 8.0 * bandwidth;
  const double inv = 1.0 / static_cast<double>(positions.size());
  std::vector<double> rho(n, 0.0);
  std::vector<double> bump;
  for (double x : positions) {
    const double from = std::max(0.0, std::ceil((x - cutoff - grid.x_min()) / h));
    const double to = std::min(static_cast<double>(n - 1), std::floor((x + cutoff - grid.x_min()) / h));
    if (from > to) continue;
    const auto i0 = static_cast<std::size_t>(from);
    const auto i1 = static_cast<std::size_t>(to);
    bump.assign(i1 - i0 + 1, 0.0);
    double m = 0.0;
    for (std::size_t i = i0; i <= i1; ++i) {
      const double z = (grid.x(i) - x) / bandwidth;
      bump[i - i0] = std::exp(-0.5 * z * z);
      m += grid.weight(i) * bump[i - i0];
    }
    if (m <= 0.0) continue;
    for (std::size_t i = i0; i <= i1; ++i) rho[i] += inv * bump[i - i0] / m;
  }
  return DensityField(grid, std::move(rho));
}

DensityField empirical_density(const ParticleEnsemble& ensemble, std::size_t k, double bandwidth) {
  return kernel_density(ensemble.domain, ensemble.positions.at(k), bandwidth).with_time(ensemble.time.t(k));
}

std::vector<double> chaos_gap(const PathSolution& spde, const ParticleEnsemble& ensemble,
                              std::span<const std::size_t> time_indices, double bandwidth) {
  if (!same_path(spde.path, ensemble.common)) throw InvalidInput("chaos_gap: different common paths");
  require_same_grid(spde.undressed.front().grid(), ensemble.domain, "chaos_gap");
  std::vector<double> gaps;
  for (std::size_t k : time_indices) {
    gaps.push_back(l1_distance(empirical_density(ensemble, k, bandwidth), spde.undressed.at(k)));
  }
  return gaps;
}

double loglog_slope(std::span<const double> N, std::span<const double> gaps) {
  if (N.size() != gaps.size() || N.size() < 2) throw InvalidInput("loglog_slope: need matching samples");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < N.size(); ++i) {
    mx += std::log(N[i]);
    my += std::log(gaps[i]);
  }
  mx /= static_cast<double>(N.size());
  my /= static_cast<double>(N.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < N.size(); ++i) {
    const double dx = std::log(N[i]) - mx;
    sxy += dx * (std::log(gaps[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace mvs
