#include "mvs/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mvs {

Grid1D::Grid1D(double x_min, double x_max, std::size_t n) : x_min_(x_min), x_max_(x_max), n_(n) {
  if (n < 2) throw InvalidInput("Grid1D: need at least 2 nodes");
  if (!(x_min < x_max) || !std::isfinite(x_min) || !std::isfinite(x_max)) {
    throw InvalidInput("Grid1D: require finite x_min < x_max");
  }
  h_ = (x_max - x_min) / static_cast<double>(n - 1);
}

std::vector<double> Grid1D::nodes() const {
  std::vector<double> xs(n_);
  for (std::size_t i = 0; i < n_; ++i) xs[i] = x(i);
  return xs;
}

std::vector<double> Grid1D::weights() const {
  std::vector<double> w(n_, h_);
  w.front() = w.back() = 0.5 * h_;
  return w;
}

bool Grid1D::operator==(const Grid1D& other) const {
  return x_min_ == other.x_min_ && x_max_ == other.x_max_ && n_ == other.n_;
}

TimeGrid::TimeGrid(double horizon, std::size_t steps) : T_(horizon), n_t_(steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidInput("TimeGrid: T must be > 0");
  if (steps < 1) throw InvalidInput("TimeGrid: need at least one step");
  dt_ = horizon / static_cast<double>(steps);
}

void require_same_grid(const Grid1D& a, const Grid1D& b, const char* what) {
  if (!(a == b)) throw InvalidInput(std::string(what) + ": grid mismatch");
}

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << what << ": non-finite value at index " << i;
      throw NumericalError(msg.str());
    }
  }
}

SignedField::SignedField(Grid1D grid, std::vector<double> values, double time)
    : grid_(std::move(grid)), values_(std::move(values)), time_(time) {
  if (values_.size() != grid_.n()) throw InvalidInput("SignedField: size does not match grid");
  require_finite(values_, "SignedField");
}

SignedField SignedField::zeros(const Grid1D& grid, double time) {
  return SignedField(Unchecked{}, grid, std::vector<double>(grid.n(), 0.0), time);
}

SignedField SignedField::sample(const Grid1D& grid, const std::function<double(double)>& f,
                                double time) {
  std::vector<double> v(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) v[i] = f(grid.x(i));
  return SignedField(grid, std::move(v), time);
}

SignedField SignedField::operator+(const SignedField& other) const {
  require_same_grid(grid_, other.grid_, "SignedField::operator+");
  std::vector<double> v(values_);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += other.values_[i];
  return SignedField(Unchecked{}, grid_, std::move(v), time_);
}

SignedField SignedField::operator-(const SignedField& other) const {
  require_same_grid(grid_, other.grid_, "SignedField::operator-");
  std::vector<double> v(values_);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= other.values_[i];
  return SignedField(Unchecked{}, grid_, std::move(v), time_);
}

SignedField SignedField::operator*(double s) const {
  std::vector<double> v(values_);
  for (double& x : v) x *= s;
  return SignedField(grid_, std::move(v), time_);
}

double project_nonnegative(std::span<double> values, double tol) {
  double most_negative = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double& v = values[i];
    if (v < 0.0) {
      most_negative = std::min(most_negative, v);
      if (v < -tol) {
        std::ostringstream msg;
        msg << "density value " << v << " at index " << i << " below -" << tol;
        throw NumericalError(msg.str());
      }
      v = 0.0;
    }
  }
  return most_negative;
}

namespace {
std::vector<double> projected(std::vector<double> v) {
  project_nonnegative(v);
  return v;
}
}  // namespace

DensityField::DensityField(Grid1D grid, std::vector<double> values, double time)
    : SignedField(std::move(grid), projected(std::move(values)), time) {}

DensityField::DensityField(const SignedField& field)
    : DensityField(field.grid(), field.values(), field.time()) {}

double integrate(const Grid1D& grid, std::span<const double> values) {
  const std::size_t n = values.size();
  double s = 0.5 * (values[0] + values[n - 1]);
  for (std::size_t i = 1; i + 1 < n; ++i) s += values[i];
  return s * grid.h();
}

double pair(const Grid1D& grid, std::span<const double> f, std::span<const double> mu) {
  const std::size_t n = mu.size();
  double s = 0.5 * (f[0] * mu[0] + f[n - 1] * mu[n - 1]);
  for (std::size_t i = 1; i + 1 < n; ++i) s += f[i] * mu[i];
  return s * grid.h();
}

double pair(const SignedField& f, const SignedField& mu) {
  require_same_grid(f.grid(), mu.grid(), "pair");
  return pair(mu.grid(), f.view(), mu.view());
}

double pair(const std::function<double(double)>& f, const SignedField& mu) {
  const Grid1D& g = mu.grid();
  std::vector<double> fv(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) fv[i] = f(g.x(i));
  return pair(g, fv, mu.view());
}

double mass(const SignedField& field) { return integrate(field.grid(), field.view()); }

double l1_norm(const Grid1D& grid, std::span<const double> values) {
  const std::size_t n = values.size();
  double s = 0.5 * (std::abs(values[0]) + std::abs(values[n - 1]));
  for (std::size_t i = 1; i + 1 < n; ++i) s += std::abs(values[i]);
  return s * grid.h();
}

double l1_norm(const SignedField& field) { return l1_norm(field.grid(), field.view()); }

double l1_distance(const SignedField& a, const SignedField& b) {
  require_same_grid(a.grid(), b.grid(), "l1_distance");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  return l1_norm(a.grid(), d);
}

double sup_norm(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

namespace {

// e^{z^2} erfc(x) for large x > 0 without underflow.
double scaled_erfc(double x) {
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  const double inv2 = 1.0 / (x * x);
  return (1.0 - 0.5 * inv2 + 0.75 * inv2 * inv2) / (x * std::sqrt(std::numbers::pi));
}

}  // namespace

double mittag_leffler_half(double z) {
  if (std::isnan(z)) throw InvalidInput("mittag_leffler_half: NaN argument");
  if (z == 0.0) return 1.0;
  if (z < 0.0) return scaled_erfc(-z);  // the alternating series cancels badly
  const double log_z = std::log(z);
  double sum = 1.0;
  for (int k = 1; k < 1000000; ++k) {
    const double log_term = k * log_z - std::lgamma(0.5 * k + 1.0);
    if (log_term > std::log(std::numeric_limits<double>::max())) {
      return std::numeric_limits<double>::infinity();
    }
    const double term = std::exp(log_term);
    sum += term;
    if (!std::isfinite(sum)) return std::numeric_limits<double>::infinity();
    if (term < 1e-15 * sum) break;
  }
  return sum;
}

double mittag_leffler_half_inverse(double y) {
  if (std::isnan(y)) throw InvalidInput("mittag_leffler_half_inverse: NaN argument");
  if (y <= 1.0) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  while (mittag_leffler_half(hi) < y) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e3) return std::numeric_limits<double>::infinity();
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mittag_leffler_half(mid) < y) lo = mid;
    else hi = mid;
  }
  return hi;
}

double interpolate(const Grid1D& grid, std::span<const double> values, double x,
                   InterpOrder order) {
  const std::size_t n = grid.n();
  if (x <= grid.x_min()) return values[0];
  if (x >= grid.x_max()) return values[n - 1];
  const double s = (x - grid.x_min()) / grid.h();
  auto i = static_cast<std::ptrdiff_t>(std::floor(s));
  i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 2);
  if (order == InterpOrder::kLinear || n < 4) {
    const double u = s - static_cast<double>(i);
    return (1.0 - u) * values[i] + u * values[i + 1];
  }
  // Four-point Lagrange stencil i0..i0+3, shifted inward at the edges.
  const std::ptrdiff_t i0 = std::clamp<std::ptrdiff_t>(i - 1, 0, static_cast<std::ptrdiff_t>(n) - 4);
  const double u = s - static_cast<double>(i0);
  const double w0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
  const double w1 = u * (u - 2.0) * (u - 3.0) / 2.0;
  const double w2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
  const double w3 = u * (u - 1.0) * (u - 2.0) / 6.0;
  return w0 * values[i0] + w1 * values[i0 + 1] + w2 * values[i0 + 2] + w3 * values[i0 + 3];
}

std::vector<double> gaussian_values(const Grid1D& grid, double mean, double stddev,
                                    double total_mass) {
  if (!(stddev > 0.0)) throw InvalidInput("gaussian_values: stddev must be > 0");
  std::vector<double> v(grid.n());
  const double norm = total_mass / (stddev * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < grid.n(); ++i) {
    const double z = (grid.x(i) - mean) / stddev;
    v[i] = norm * std::exp(-0.5 * z * z);
  }
  return v;
}

DensityField gaussian_density(const Grid1D& grid, double mean, double stddev, double total_mass) {
  return DensityField(grid, gaussian_values(grid, mean, stddev, total_mass));
}

DensityField mollified_delta(const Grid1D& grid, double x0, double total_mass) {
  std::vector<double> v = gaussian_values(grid, x0, mollification_width(grid), 1.0);
  const double m = integrate(grid, v);
  if (!(m > 0.0)) throw InvalidInput("mollified_delta: point outside the grid");
  for (double& x : v) x *= total_mass / m;
  return DensityField(grid, std::move(v));
}

std::vector<double> derivative(const Grid1D& grid, std::span<const double> values) {
  const std::size_t n = values.size();
  const double h = grid.h();
  std::vector<double> d(n);
  if (n < 3) {
    d[0] = d[1] = (values[1] - values[0]) / h;
    return d;
  }
  d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
  d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
  return d;
}

std::vector<double> second_derivative(const Grid1D& grid, std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 4) throw InvalidInput("second_derivative: need at least 4 nodes");
  const double h2 = grid.h() * grid.h();
  std::vector<double> d(n);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2;
  d[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2;
  d[n - 1] = (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
  return d;
}

}  // namespace mvs
