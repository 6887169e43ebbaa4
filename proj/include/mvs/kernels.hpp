#pragma once

// Green function of rho -> (1/2) (a rho)'' and its gradient action.
//
// Constant mode: discrete Gaussian convolution, evaluated by zero-padded FFT.
// The sampled kernel is renormalized so that h * sum_m K(m h) = 1, which
// keeps mass exact for under-resolved offsets t < h^2.
//
// Variable mode: the exact exponential of the conservative three-point
// generator L = (1/2) D2 diag(a) (zero values outside the grid). L is
// similar to the symmetric matrix (1/2) a^{1/2} D2 a^{1/2}; one symmetric
// eigendecomposition gives exp(tL) for every t. L is Metzler, so exp(tL) is
// entrywise nonnegative and the semigroup property is exact.
//
// Both modes expose the same spectral interface: a source is transformed
// once, multiplied by a time-dependent symbol and synthesized back. The mild
// solver accumulates its Volterra sums in the transformed space.
//
// green_gradient_apply(t, w)(x) = -int d/dy G_t(x, y) w(y) dy = G_t (d/dy w)(x).

#include <complex>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"

namespace mvs {

struct PointMass {
  double x;
  double mass;
};

class HeatKernel {
 public:
  using Spectrum = std::vector<std::complex<double>>;
  enum class Mode { kConstant, kVariable };

  /// Chooses the constant mode when `diffusion` is constant.
  HeatKernel(Grid1D grid, DiffusionMatrix diffusion);
  /// Forces variable mode (used to cross-check the two constructions).
  static HeatKernel variable(Grid1D grid, DiffusionMatrix diffusion);

  Mode mode() const;
  const Grid1D& grid() const;
  const DiffusionMatrix& diffusion() const;

  /// x_i -> sum_j G_t(x_i, x_j) w_j src_j.
  std::vector<double> apply(double t, std::span<const double> source) const;
  DensityField apply(double t, const DensityField& source) const;
  /// Closed-form action on point masses (constant mode); variable mode
  /// places each mass on its mollified delta first.
  std::vector<double> apply_point_masses(double t, std::span<const PointMass> masses) const;

  std::vector<double> gradient_apply(double t, std::span<const double> w) const;
  SignedField gradient_apply(double t, const SignedField& w) const;

  /// Kernel entry G_t(x_i, x_j) as a density in x.
  double entry(double t, std::size_t i, std::size_t j) const;
  /// Dense n x n matrix of entries G_t(x_i, x_j).
  Eigen::MatrixXd matrix(double t) const;

  // Spectral interface.
  std::size_t spectrum_size() const;
  Spectrum transform(std::span<const double> source) const;
  /// Transform of a flux source w, so that
  /// synthesize(flux_multiplier(t) * transform_flux(w)) = gradient_apply(t, w).
  Spectrum transform_flux(std::span<const double> w) const;
  Spectrum multiplier(double t) const;
  Spectrum flux_multiplier(double t) const;
  std::vector<double> synthesize(const Spectrum& coefficients) const;

  struct Impl;

 private:
  explicit HeatKernel(std::shared_ptr<const Impl> impl);
  std::shared_ptr<const Impl> impl_;
};

/// Fitted Aronson-type envelope G_t(x, y) <= C g_{sigma t}(x - y), with g a
/// Gaussian density of variance sigma t.
struct AronsonFit {
  double C;
  double sigma;
  bool ok;
};

/// Smallest C over a sigma sweep such that the envelope holds for every grid
/// pair with G_t > floor, at every t in `times`.
AronsonFit fit_aronson(const HeatKernel& kernel, std::span<const double> times,
                       double floor = 1e-12);

/// sum_j dt (t - s_j)^{-1/2} with midpoint nodes s_j = (j + 1/2) dt on [0, t],
/// compared against 2 sqrt(t); returns the relative error.
double midpoint_singular_quadrature_error(double t, std::size_t steps);

}  // namespace mvs
