#pragma once

// Equation coefficients A(x), b(t, x, mu), V(t, x, mu).
//
// The measure dependence is restricted to the moment (cylindrical) form
//
//     b(t, x, mu) = beta(t, x, (g_1, mu), ..., (g_m, mu)),
//
// for which the variational derivatives are exact:
//
//     d b / d mu(z)             = sum_j  d_j beta     * g_j(z)
//     d^2 b / d mu(z) d mu(u)   = sum_jk d_j d_k beta * g_j(z) g_k(u).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvs/core.hpp"

namespace mvs {

using ScalarFn = std::function<double(double)>;

/// Scalar diffusion coefficient a(x) = sigma_ind(x)^2 (d = 1).
class DiffusionMatrix {
 public:
  static DiffusionMatrix constant(double a);
  static DiffusionMatrix variable(ScalarFn a, std::string label = "variable");

  bool is_constant() const { return constant_; }
  double constant_value() const;
  double operator()(double x) const { return a_(x); }
  double sigma(double x) const;
  std::vector<double> sample(const Grid1D& grid) const;
  const std::string& label() const { return label_; }

  /// Ellipticity constant m (m^{-1} <= a(x) <= m on the grid) and the
  /// finite-difference C^2 surrogate norm M. Throws ConfigError when a is not
  /// strictly positive on the grid.
  struct Ellipticity {
    double m;
    double M;
  };
  Ellipticity ellipticity(const Grid1D& grid) const;

 private:
  DiffusionMatrix(ScalarFn a, bool constant, double value, std::string label);
  ScalarFn a_;
  bool constant_;
  double value_;
  std::string label_;
};

/// Outer function beta(t, x, s) with its first and second partial
/// derivatives in the moment vector s. `hess_s` may be left empty, in which
/// case second variations are unavailable.
struct OuterFunction {
  std::function<double(double t, double x, std::span<const double> s)> value;
  /// Writes d beta / d s_j into grad (size m).
  std::function<void(double t, double x, std::span<const double> s, std::span<double> grad)> grad_s;
  /// Writes d^2 beta / d s_j d s_k into hess (row-major m x m).
  std::function<void(double t, double x, std::span<const double> s, std::span<double> hess)> hess_s;
};

/// First variational derivative of a moment-form coefficient, sampled on a
/// grid: kernel(i, k) = d b(t, x_i, mu) / d mu(z_k). Stored in factored form.
class MeasureDerivative {
 public:
  MeasureDerivative(Grid1D grid, std::size_t m, std::vector<double> outer_grad,
                    std::vector<double> kernel_values);

  std::size_t moment_count() const { return m_; }
  const Grid1D& grid() const { return grid_; }
  double operator()(std::size_t i, std::size_t k) const;
  /// Per node i: sum_k kernel(i, k) rho(z_k) with trapezoid weights, i.e. the
  /// directional derivative of b(t, x_i, .) along rho.
  std::vector<double> apply(std::span<const double> rho) const;
  /// d_j beta at node i.
  double outer_grad(std::size_t i, std::size_t j) const { return grad_[i * m_ + j]; }
  /// g_j at node k.
  double kernel(std::size_t k, std::size_t j) const { return kernel_[k * m_ + j]; }
  std::vector<double> moments_of(std::span<const double> rho) const;

 private:
  Grid1D grid_;
  std::size_t m_;
  std::vector<double> grad_;
  std::vector<double> kernel_;
};

/// Second variational derivative: value(i, k, l) = d^2 b(t, x_i, mu) / d mu(z_k) d mu(z_l).
class MeasureHessian {
 public:
  MeasureHessian(Grid1D grid, std::size_t m, std::vector<double> outer_hess,
                 std::vector<double> kernel_values);

  std::size_t moment_count() const { return m_; }
  double operator()(std::size_t i, std::size_t k, std::size_t l) const;
  /// Per node i: the bilinear form applied to (rho1, rho2).
  std::vector<double> contract(std::span<const double> rho1, std::span<const double> rho2) const;
  double outer_hess(std::size_t i, std::size_t j, std::size_t l) const {
    return hess_[(i * m_ + j) * m_ + l];
  }

 private:
  Grid1D grid_;
  std::size_t m_;
  std::vector<double> hess_;
  std::vector<double> kernel_;
};

/// A coefficient beta(t, x, (g, mu)) in moment form.
class MomentCoefficient {
 public:
  MomentCoefficient(std::string name, std::vector<ScalarFn> kernels, OuterFunction outer);

  const std::string& name() const { return name_; }
  std::size_t moment_count() const { return kernels_.size(); }
  bool has_second_variation() const { return static_cast<bool>(outer_.hess_s); }
  /// True when beta is identically zero (the "none" preset).
  bool is_zero() const { return zero_; }
  /// True when there is no measure dependence (m = 0).
  bool is_measure_independent() const { return kernels_.empty(); }
  const std::vector<ScalarFn>& kernels() const { return kernels_; }

  std::vector<double> moments(const SignedField& mu) const;
  std::vector<double> moments(const Grid1D& grid, std::span<const double> mu) const;
  double value(double t, double x, std::span<const double> s) const;
  void grad_s(double t, double x, std::span<const double> s, std::span<double> out) const;
  void hess_s(double t, double x, std::span<const double> s, std::span<double> out) const;

  /// b(t, x_i, mu) at every node. Throws NumericalError on a non-finite value.
  std::vector<double> evaluate(double t, const SignedField& mu) const;
  std::vector<double> evaluate(double t, const Grid1D& grid, std::span<const double> mu) const;
  /// beta(t, x_i, s) at every node for a precomputed moment vector.
  std::vector<double> evaluate_with_moments(double t, const Grid1D& grid,
                                            std::span<const double> s) const;

  MeasureDerivative variation(double t, const SignedField& mu) const;
  MeasureDerivative variation(double t, const Grid1D& grid, std::span<const double> mu) const;
  /// Throws ConfigError when the outer function provides no Hessian.
  MeasureHessian second_variation(double t, const SignedField& mu) const;
  MeasureHessian second_variation(double t, const Grid1D& grid, std::span<const double> mu) const;

  std::vector<double> kernel_values(const Grid1D& grid) const;

 protected:
  void mark_zero() { zero_ = true; }

 private:
  std::string name_;
  std::vector<ScalarFn> kernels_;
  OuterFunction outer_;
  bool zero_ = false;
};

/// Drift b(t, x, mu).
class InteractionDrift : public MomentCoefficient {
 public:
  using MomentCoefficient::MomentCoefficient;

  static InteractionDrift none();
  static InteractionDrift constant(double c);
  /// b = -rate (x - (y, mu)).
  static InteractionDrift mean_reversion(double rate);
  /// b = -rate x + gain (g, mu)^2 with g(y) = exp(-y^2 / (2 width^2)).
  static InteractionDrift moment_quadratic(double rate, double gain, double width);
  /// b = -rate x + sum_j c_j (g_j, mu), kernels g_j given as samples on `grid`
  /// and linearly interpolated (zero outside the grid).
  static InteractionDrift custom_tabulated(const Grid1D& grid,
                                           std::vector<std::vector<double>> kernels,
                                           std::vector<double> weights, double rate);

  /// Rejects configurations whose drift is non-finite or exceeds `bound` on
  /// the truncated domain for any of the supplied measures.
  void validate_on_domain(const Grid1D& grid, std::span<const DensityField> samples,
                          double bound = 1e6) const;
};

/// Potential V(t, x, mu) <= 0. Every evaluation asserts the sign.
class PotentialTerm : public MomentCoefficient {
 public:
  using MomentCoefficient::MomentCoefficient;

  static PotentialTerm none();
  /// V = -rate.
  static PotentialTerm constant(double rate);
  /// V = -base - gain (g, mu)^2 with g(y) = exp(-y^2 / (2 width^2)).
  static PotentialTerm moment_decay(double base, double gain, double width);

  std::vector<double> evaluate(double t, const SignedField& mu) const;
  std::vector<double> evaluate(double t, const Grid1D& grid, std::span<const double> mu) const;
};

/// The full coefficient set of a nonlinear diffusion.
struct Coefficients {
  DiffusionMatrix diffusion;
  InteractionDrift drift;
  PotentialTerm potential;
};

/// Numerically measured coefficient bounds entering the stability envelopes.
struct CoefficientBounds {
  double lambda = 0.0;  ///< largest total variation among the sampled measures
  double V_sup = 0.0;
  double b_sup = 0.0;
  double L_A = 0.0;  ///< Lipschitz constant in mu (total-variation norm)
  double R = 0.0;    ///< sup |d b / d mu|, sup |d V / d mu|
  double R2 = 0.0;   ///< sup |second variational derivative|
  double R3 = 0.0;   ///< C^{1x1} norm of the second variational derivative
  double R4 = 0.0;   ///< C^1 norm in x of the first variational derivative
  double c1 = 0.0;   ///< C^1 norms of b, V and their first variations
};

CoefficientBounds measure_bounds(const InteractionDrift& drift, const PotentialTerm& potential,
                                 std::span<const DensityField> samples, double t = 0.0);

}  // namespace mvs
