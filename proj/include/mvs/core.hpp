#pragma once

// Grids, fields, trapezoid pairings and norms, and the Mittag-Leffler
// function E_{1/2} that appears in every stability envelope.
//
// The solvers run in one space dimension; fields are sampled on a uniform
// grid and every integral uses the trapezoid rule on that grid, so pairings
// and norms commute with field arithmetic.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mvs/error.hpp"

namespace mvs {

inline constexpr int kSpaceDim = 1;

/// Values in [-kNegativityTolerance, 0) are treated as discretization noise
/// and clamped to zero; anything more negative is a solver failure.
inline constexpr double kNegativityTolerance = 1e-12;

class Grid1D {
 public:
  Grid1D(double x_min, double x_max, std::size_t n);

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  std::size_t n() const { return n_; }
  double h() const { return h_; }
  double x(std::size_t i) const { return x_min_ + static_cast<double>(i) * h_; }
  std::vector<double> nodes() const;
  /// Trapezoid quadrature weights (h/2 at the two end nodes, h elsewhere).
  std::vector<double> weights() const;
  double weight(std::size_t i) const { return (i == 0 || i + 1 == n_) ? 0.5 * h_ : h_; }
  bool contains(double x) const { return x >= x_min_ && x <= x_max_; }

  bool operator==(const Grid1D& other) const;

 private:
  double x_min_;
  double x_max_;
  std::size_t n_;
  double h_;
};

class TimeGrid {
 public:
  TimeGrid(double horizon, std::size_t steps);

  double T() const { return T_; }
  std::size_t n_t() const { return n_t_; }
  double dt() const { return dt_; }
  double t(std::size_t k) const { return static_cast<double>(k) * dt_; }
  /// Midpoint of step k, i.e. (k + 1/2) dt.
  double t_mid(std::size_t k) const { return (static_cast<double>(k) + 0.5) * dt_; }
  bool operator==(const TimeGrid& other) const { return T_ == other.T_ && n_t_ == other.n_t_; }

 private:
  double T_;
  std::size_t n_t_;
  double dt_;
};

/// Sampled signed density on a grid; immutable.
class SignedField {
 public:
  SignedField(Grid1D grid, std::vector<double> values, double time = 0.0);
  static SignedField zeros(const Grid1D& grid, double time = 0.0);
  static SignedField sample(const Grid1D& grid, const std::function<double(double)>& f,
                            double time = 0.0);

  const Grid1D& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::span<const double> view() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }
  double time() const { return time_; }
  SignedField with_time(double t) const { return SignedField(grid_, values_, t); }

  SignedField operator+(const SignedField& other) const;
  SignedField operator-(const SignedField& other) const;
  SignedField operator*(double s) const;

 protected:
  struct Unchecked {};
  SignedField(Unchecked, Grid1D grid, std::vector<double> values, double time)
      : grid_(std::move(grid)), values_(std::move(values)), time_(time) {}

 private:
  Grid1D grid_;
  std::vector<double> values_;
  double time_;
};

/// Nonnegative mass density. Construction clamps values in
/// [-kNegativityTolerance, 0) to zero and rejects anything more negative.
class DensityField : public SignedField {
 public:
  DensityField(Grid1D grid, std::vector<double> values, double time = 0.0);
  explicit DensityField(const SignedField& field);
  DensityField with_time(double t) const { return DensityField(grid(), values(), t); }
};

/// Clamp values in [-tol, 0) to 0 in place. Throws NumericalError when a value
/// is below -tol. Returns the most negative value seen before clamping.
double project_nonnegative(std::span<double> values, double tol = kNegativityTolerance);

void require_same_grid(const Grid1D& a, const Grid1D& b, const char* what);
void require_finite(std::span<const double> values, const char* what);

/// Trapezoid integral of sampled values on the grid.
double integrate(const Grid1D& grid, std::span<const double> values);
/// Trapezoid integral of f * mu.
double pair(const Grid1D& grid, std::span<const double> f, std::span<const double> mu);
double pair(const SignedField& f, const SignedField& mu);
double pair(const std::function<double(double)>& f, const SignedField& mu);
double mass(const SignedField& field);
double l1_norm(const SignedField& field);
double l1_norm(const Grid1D& grid, std::span<const double> values);
double l1_distance(const SignedField& a, const SignedField& b);
double sup_norm(std::span<const double> values);

/// E_{1/2}(z) = sum_k z^k / Gamma(k/2 + 1). Returns +infinity once the value
/// exceeds the double range (saturating overflow signal).
double mittag_leffler_half(double z);
/// Smallest z >= 0 with E_{1/2}(z) >= y (y >= 1); 0 for y <= 1.
double mittag_leffler_half_inverse(double y);

enum class InterpOrder { kLinear = 1, kCubic = 3 };

/// Interpolate grid values at x. Outside [x_min, x_max] the edge value is
/// returned (clamped extrapolation).
double interpolate(const Grid1D& grid, std::span<const double> values, double x,
                   InterpOrder order = InterpOrder::kCubic);

/// Gaussian density with the given mean, standard deviation and total mass,
/// sampled from the closed form.
std::vector<double> gaussian_values(const Grid1D& grid, double mean, double stddev,
                                    double total_mass = 1.0);
DensityField gaussian_density(const Grid1D& grid, double mean, double stddev,
                              double total_mass = 1.0);

/// Width (standard deviation) of the mollified point mass used on this grid.
inline double mollification_width(const Grid1D& grid) { return 2.0 * grid.h(); }

/// Point mass at x0 represented by a Gaussian of width 2h, rescaled so that
/// its trapezoid mass is exactly `total_mass`.
DensityField mollified_delta(const Grid1D& grid, double x0, double total_mass = 1.0);

/// Central differences in the interior, one-sided second order at the ends.
std::vector<double> derivative(const Grid1D& grid, std::span<const double> values);
std::vector<double> second_derivative(const Grid1D& grid, std::span<const double> values);

}  // namespace mvs
