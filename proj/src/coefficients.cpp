#include "mvs/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace mvs {

// ---------------------------------------------------------------- diffusion

DiffusionMatrix::DiffusionMatrix(ScalarFn a, bool constant, double value, std::string label)
    : a_(std::move(a)), constant_(constant), value_(value), label_(std::move(label)) {}

DiffusionMatrix DiffusionMatrix::constant(double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("DiffusionMatrix: constant must be > 0");
  return DiffusionMatrix([a](double) { return a; }, true, a, "constant");
}

DiffusionMatrix DiffusionMatrix::variable(ScalarFn a, std::string label) {
  if (!a) throw ConfigError("DiffusionMatrix: empty function");
  return DiffusionMatrix(std::move(a), false, 0.0, std::move(label));
}

double DiffusionMatrix::constant_value() const {
  if (!constant_) throw InvalidInput("DiffusionMatrix: not in constant mode");
  return value_;
}

double DiffusionMatrix::sigma(double x) const { return std::sqrt(a_(x)); }

std::vector<double> DiffusionMatrix::sample(const Grid1D& grid) const {
  std::vector<double> v(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) v[i] = a_(grid.x(i));
  return v;
}

DiffusionMatrix::Ellipticity DiffusionMatrix::ellipticity(const Grid1D& grid) const {
  const std::vector<double> a = sample(grid);
  double lo = a[0];
  double hi = a[0];
  for (double v : a) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("DiffusionMatrix: not uniformly elliptic");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const auto d1 = derivative(grid, a);
  const double M = sup_norm(a) + sup_norm(d1) + sup_norm(derivative(grid, d1));
  return {std::max(hi, 1.0 / lo), M};
}

// ------------------------------------------------------- measure derivatives

MeasureDerivative::MeasureDerivative(Grid1D grid, std::size_t m, std::vector<double> outer_grad,
                                     std::vector<double> kernel_values)
    : grid_(std::move(grid)), m_(m), grad_(std::move(outer_grad)), kernel_(std::move(kernel_values)) {}

double MeasureDerivative::operator()(std::size_t i, std::size_t k) const {
  double s = 0.0;
  for (std::size_t j = 0; j < m_; ++j) s += grad_[i * m_ + j] * kernel_[k * m_ + j];
  return s;
}

std::vector<double> MeasureDerivative::moments_of(std::span<const double> rho) const {
  std::vector<double> s(m_, 0.0);
  const std::size_t n = grid_.n();
  for (std::size_t k = 0; k < n; ++k) {
    const double w = grid_.weight(k) * rho[k];
    for (std::size_t j = 0; j < m_; ++j) s[j] += w * kernel_[k * m_ + j];
  }
  return s;
}

std::vector<double> MeasureDerivative::apply(std::span<const double> rho) const {
  const std::size_t n = grid_.n();
  std::vector<double> out(n, 0.0);
  if (m_ == 0) return out;
  const std::vector<double> s = moments_of(rho);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < m_; ++j) v += grad_[i * m_ + j] * s[j];
    out[i] = v;
  }
  return out;
}

MeasureHessian::MeasureHessian(Grid1D grid, std::size_t m, std::vector<double> outer_hess,
                               std::vector<double> kernel_values)
    : grid_(std::move(grid)), m_(m), hess_(std::move(outer_hess)), kernel_(std::move(kernel_values)) {}

double MeasureHessian::operator()(std::size_t i, std::size_t k, std::size_t l) const {
  double s = 0.0;
  for (std::size_t j = 0; j < m_; ++j) {
    for (std::size_t q = 0; q < m_; ++q) {
      s += hess_[(i * m_ + j) * m_ + q] * kernel_[k * m_ + j] * kernel_[l * m_ + q];
    }
  }
  return s;
}

std::vector<double> MeasureHessian::contract(std::span<const double> rho1,
                                             std::span<const double> rho2) const {
  const std::size_t n = grid_.n();
  std::vector<double> s1(m_, 0.0);
  std::vector<double> s2(m_, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = grid_.weight(k);
    for (std::size_t j = 0; j < m_; ++j) {
      s1[j] += w * rho1[k] * kernel_[k * m_ + j];
      s2[j] += w * rho2[k] * kernel_[k * m_ + j];
    }
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < m_; ++j) {
      for (std::size_t q = 0; q < m_; ++q) v += hess_[(i * m_ + j) * m_ + q] * s1[j] * s2[q];
    }
    out[i] = v;
  }
  return out;
}

// ------------------------------------------------------ moment coefficients

MomentCoefficient::MomentCoefficient(std::string name, std::vector<ScalarFn> kernels,
                                     OuterFunction outer)
    : name_(std::move(name)), kernels_(std::move(kernels)), outer_(std::move(outer)) {
  if (!outer_.value) throw ConfigError("coefficient '" + name_ + "': missing outer function");
  if (!kernels_.empty() && !outer_.grad_s) {
    throw ConfigError("coefficient '" + name_ + "': missing moment gradient");
  }
}

std::vector<double> MomentCoefficient::kernel_values(const Grid1D& grid) const {
  const std::size_t m = kernels_.size();
  std::vector<double> kv(grid.n() * m);
  for (std::size_t k = 0; k < grid.n(); ++k) {
    for (std::size_t j = 0; j < m; ++j) kv[k * m + j] = kernels_[j](grid.x(k));
  }
  return kv;
}

std::vector<double> MomentCoefficient::moments(const Grid1D& grid, std::span<const double> mu) const {
  std::vector<double> s(kernels_.size(), 0.0);
  for (std::size_t k = 0; k < grid.n(); ++k) {
    const double w = grid.weight(k) * mu[k];
    if (w == 0.0) continue;
    const double x = grid.x(k);
    for (std::size_t j = 0; j < kernels_.size(); ++j) s[j] += w * kernels_[j](x);
  }
  return s;
}

std::vector<double> MomentCoefficient::moments(const SignedField& mu) const {
  return moments(mu.grid(), mu.view());
}

double MomentCoefficient::value(double t, double x, std::span<const double> s) const {
  return outer_.value(t, x, s);
}

void MomentCoefficient::grad_s(double t, double x, std::span<const double> s,
                               std::span<double> out) const {
  if (kernels_.empty()) return;
  outer_.grad_s(t, x, s, out);
}

void MomentCoefficient::hess_s(double t, double x, std::span<const double> s,
                               std::span<double> out) const {
  if (kernels_.empty()) return;
  if (!outer_.hess_s) {
    throw ConfigError("coefficient '" + name_ + "': second variational derivative not available");
  }
  outer_.hess_s(t, x, s, out);
}

std::vector<double> MomentCoefficient::evaluate_with_moments(double t, const Grid1D& grid,
                                                             std::span<const double> s) const {
  std::vector<double> out(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) {
    out[i] = outer_.value(t, grid.x(i), s);
    if (!std::isfinite(out[i])) {
      std::ostringstream msg;
      msg << "coefficient '" << name_ << "': non-finite value at x = " << grid.x(i);
      throw NumericalError(msg.str());
    }
  }
  return out;
}

std::vector<double> MomentCoefficient::evaluate(double t, const Grid1D& grid,
                                                std::span<const double> mu) const {
  const std::vector<double> s = moments(grid, mu);
  return evaluate_with_moments(t, grid, s);
}

std::vector<double> MomentCoefficient::evaluate(double t, const SignedField& mu) const {
  return evaluate(t, mu.grid(), mu.view());
}

MeasureDerivative MomentCoefficient::variation(double t, const Grid1D& grid,
                                               std::span<const double> mu) const {
  const std::size_t m = kernels_.size();
  std::vector<double> grad(grid.n() * m, 0.0);
  if (m > 0) {
    const std::vector<double> s = moments(grid, mu);
    for (std::size_t i = 0; i < grid.n(); ++i) {
      outer_.grad_s(t, grid.x(i), s, std::span<double>(grad.data() + i * m, m));
    }
  }
  return MeasureDerivative(grid, m, std::move(grad), kernel_values(grid));
}

MeasureDerivative MomentCoefficient::variation(double t, const SignedField& mu) const {
  return variation(t, mu.grid(), mu.view());
}

MeasureHessian MomentCoefficient::second_variation(double t, const Grid1D& grid,
                                                   std::span<const double> mu) const {
  const std::size_t m = kernels_.size();
  std::vector<double> hess(grid.n() * m * m, 0.0);
  if (m > 0) {
    if (!outer_.hess_s) {
      throw ConfigError("coefficient '" + name_ + "': second variational derivative not available");
    }
    const std::vector<double> s = moments(grid, mu);
    for (std::size_t i = 0; i < grid.n(); ++i) {
      outer_.hess_s(t, grid.x(i), s, std::span<double>(hess.data() + i * m * m, m * m));
    }
  }
  return MeasureHessian(grid, m, std::move(hess), kernel_values(grid));
}

MeasureHessian MomentCoefficient::second_variation(double t, const SignedField& mu) const {
  return second_variation(t, mu.grid(), mu.view());
}

// ------------------------------------------------------------------ presets

namespace {

OuterFunction constant_outer(double c) {
  OuterFunction f;
  f.value = [c](double, double, std::span<const double>) { return c; };
  f.grad_s = [](double, double, std::span<const double>, std::span<double>) {};
  f.hess_s = [](double, double, std::span<const double>, std::span<double>) {};
  return f;
}

ScalarFn gaussian_bump(double width) {
  if (!(width > 0.0)) throw ConfigError("bump kernel width must be > 0");
  return [width](double y) { return std::exp(-0.5 * y * y / (width * width)); };
}

}  // namespace

InteractionDrift InteractionDrift::none() {
  InteractionDrift b("none", {}, constant_outer(0.0));
  b.mark_zero();
  return b;
}

InteractionDrift InteractionDrift::constant(double c) {
  InteractionDrift b("constant", {}, constant_outer(c));
  if (c == 0.0) b.mark_zero();
  return b;
}

InteractionDrift InteractionDrift::mean_reversion(double rate) {
  OuterFunction f;
  f.value = [rate](double, double x, std::span<const double> s) { return -rate * (x - s[0]); };
  f.grad_s = [rate](double, double, std::span<const double>, std::span<double> g) { g[0] = rate; };
  f.hess_s = [](double, double, std::span<const double>, std::span<double> h) { h[0] = 0.0; };
  return InteractionDrift("mean_reversion", {[](double y) { return y; }}, std::move(f));
}

InteractionDrift InteractionDrift::moment_quadratic(double rate, double gain, double width) {
  OuterFunction f;
  f.value = [rate, gain](double, double x, std::span<const double> s) {
    return -rate * x + gain * s[0] * s[0];
  };
  f.grad_s = [gain](double, double, std::span<const double> s, std::span<double> g) {
    g[0] = 2.0 * gain * s[0];
  };
  f.hess_s = [gain](double, double, std::span<const double>, std::span<double> h) {
    h[0] = 2.0 * gain;
  };
  return InteractionDrift("moment_quadratic", {gaussian_bump(width)}, std::move(f));
}

InteractionDrift InteractionDrift::custom_tabulated(const Grid1D& grid,
                                                    std::vector<std::vector<double>> kernels,
                                                    std::vector<double> weights, double rate) {
  if (kernels.size() != weights.size()) {
    throw ConfigError("custom_tabulated: kernel and weight counts differ");
  }
  std::vector<ScalarFn> fns;
  for (auto& k : kernels) {
    if (k.size() != grid.n()) throw ConfigError("custom_tabulated: kernel size does not match grid");
    require_finite(k, "custom_tabulated kernel");
    auto table = std::make_shared<const std::vector<double>>(std::move(k));
    fns.push_back([grid, table](double y) {
      if (!grid.contains(y)) return 0.0;
      return interpolate(grid, *table, y, InterpOrder::kLinear);
    });
  }
  OuterFunction f;
  f.value = [rate, weights](double, double x, std::span<const double> s) {
    double v = -rate * x;
    for (std::size_t j = 0; j < weights.size(); ++j) v += weights[j] * s[j];
    return v;
  };
  f.grad_s = [weights](double, double, std::span<const double>, std::span<double> g) {
    for (std::size_t j = 0; j < weights.size(); ++j) g[j] = weights[j];
  };
  f.hess_s = [](double, double, std::span<const double>, std::span<double> h) {
    std::fill(h.begin(), h.end(), 0.0);
  };
  return InteractionDrift("custom_tabulated", std::move(fns), std::move(f));
}

void InteractionDrift::validate_on_domain(const Grid1D& grid, std::span<const DensityField> samples,
                                          double bound) const {
  for (const auto& mu : samples) {
    std::vector<double> b;
    try {
      b = evaluate(0.0, grid, mu.view());
    } catch (const NumericalError& e) {
      throw ConfigError(std::string("drift rejected on the truncated domain: ") + e.what());
    }
    if (sup_norm(b) > bound) {
      std::ostringstream msg;
      msg << "drift '" << name() << "' exceeds the admissible bound " << bound
          << " on the truncated domain";
      throw ConfigError(msg.str());
    }
  }
}

PotentialTerm PotentialTerm::none() {
  PotentialTerm v("none", {}, constant_outer(0.0));
  v.mark_zero();
  return v;
}

PotentialTerm PotentialTerm::constant(double rate) {
  if (rate < 0.0) throw ConfigError("potential: V = -rate requires rate >= 0");
  PotentialTerm v("constant", {}, constant_outer(-rate));
  if (rate == 0.0) v.mark_zero();
  return v;
}

PotentialTerm PotentialTerm::moment_decay(double base, double gain, double width) {
  if (base < 0.0 || gain < 0.0) throw ConfigError("potential: moment_decay needs base, gain >= 0");
  OuterFunction f;
  f.value = [base, gain](double, double, std::span<const double> s) {
    return -base - gain * s[0] * s[0];
  };
  f.grad_s = [gain](double, double, std::span<const double> s, std::span<double> g) {
    g[0] = -2.0 * gain * s[0];
  };
  f.hess_s = [gain](double, double, std::span<const double>, std::span<double> h) {
    h[0] = -2.0 * gain;
  };
  return PotentialTerm("moment_decay", {gaussian_bump(width)}, std::move(f));
}

std::vector<double> PotentialTerm::evaluate(double t, const Grid1D& grid,
                                            std::span<const double> mu) const {
  std::vector<double> v = MomentCoefficient::evaluate(t, grid, mu);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) {
      std::ostringstream msg;
      msg << "potential '" << name() << "' is positive (" << v[i] << ") at x = " << grid.x(i);
      throw NumericalError(msg.str());
    }
  }
  return v;
}

std::vector<double> PotentialTerm::evaluate(double t, const SignedField& mu) const {
  return evaluate(t, mu.grid(), mu.view());
}

// ------------------------------------------------------------------- bounds

namespace {

struct VariationSups {
  double value = 0.0;      // sup_{x,z} |d/dmu(z)|
  double c1_in_x = 0.0;    // sup_z (sup_x |.| + sup_x |d_x .|)
  double c1_in_z = 0.0;    // sup_x (sup_z |.| + sup_z |d_z .|)
};

VariationSups variation_sups(const MeasureDerivative& d, const Grid1D& grid) {
  VariationSups out;
  const std::size_t n = grid.n();
  const std::size_t m = d.moment_count();
  if (m == 0) return out;
  std::vector<double> col(n);
  // Columns in x for each z.
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) col[i] = d(i, k);
    const double s = sup_norm(col);
    out.value = std::max(out.value, s);
    out.c1_in_x = std::max(out.c1_in_x, s + sup_norm(derivative(grid, col)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) col[k] = d(i, k);
    out.c1_in_z = std::max(out.c1_in_z, sup_norm(col) + sup_norm(derivative(grid, col)));
  }
  return out;
}

struct HessianSups {
  double value = 0.0;
  double c11 = 0.0;
};

// Separable upper bounds: sup |sum_jl H_jl a_j(w) b_l(u)| <= sum_jl |H_jl| sup|a_j| sup|b_l|.
HessianSups hessian_sups(const MomentCoefficient& c, double t, const Grid1D& grid,
                         std::span<const double> mu) {
  HessianSups out;
  const std::size_t m = c.moment_count();
  if (m == 0 || !c.has_second_variation()) return out;
  const MeasureHessian h = c.second_variation(t, grid, mu);
  const std::vector<double> kv = c.kernel_values(grid);
  std::vector<double> g_sup(m, 0.0);
  std::vector<double> dg_sup(m, 0.0);
  std::vector<double> col(grid.n());
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < grid.n(); ++k) col[k] = kv[k * m + j];
    g_sup[j] = sup_norm(col);
    dg_sup[j] = sup_norm(derivative(grid, col));
  }
  for (std::size_t i = 0; i < grid.n(); ++i) {
    double v = 0.0;
    double c11 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t l = 0; l < m; ++l) {
        const double a = std::abs(h.outer_hess(i, j, l));
        v += a * g_sup[j] * g_sup[l];
        c11 += a * (g_sup[j] + dg_sup[j]) * (g_sup[l] + dg_sup[l]);
      }
    }
    out.value = std::max(out.value, v);
    out.c11 = std::max(out.c11, c11);
  }
  return out;
}

}  // namespace

CoefficientBounds measure_bounds(const InteractionDrift& drift, const PotentialTerm& potential,
                                 std::span<const DensityField> samples, double t) {
  if (samples.empty()) throw InvalidInput("measure_bounds: empty sample family");
  const Grid1D& grid = samples.front().grid();
  CoefficientBounds out;
  std::vector<std::vector<double>> b_vals;
  std::vector<std::vector<double>> v_vals;
  for (const auto& mu : samples) {
    require_same_grid(grid, mu.grid(), "measure_bounds");
    out.lambda = std::max(out.lambda, l1_norm(mu));
    b_vals.push_back(drift.evaluate(t, mu));
    v_vals.push_back(potential.evaluate(t, mu));
    const double b_sup = sup_norm(b_vals.back());
    const double v_sup = sup_norm(v_vals.back());
    out.b_sup = std::max(out.b_sup, b_sup);
    out.V_sup = std::max(out.V_sup, v_sup);

    const VariationSups db = variation_sups(drift.variation(t, mu), grid);
    const VariationSups dv = variation_sups(potential.variation(t, mu), grid);
    out.R = std::max({out.R, db.value, dv.value});
    out.R4 = std::max({out.R4, db.c1_in_x, dv.c1_in_x});

    const HessianSups hb = hessian_sups(drift, t, grid, mu.view());
    const HessianSups hv = hessian_sups(potential, t, grid, mu.view());
    out.R2 = std::max({out.R2, hb.value, hv.value});
    out.R3 = std::max({out.R3, hb.c11, hv.c11});

    const double c1 = b_sup + sup_norm(derivative(grid, b_vals.back())) + v_sup +
                      sup_norm(derivative(grid, v_vals.back())) + db.c1_in_z + dv.c1_in_z;
    out.c1 = std::max(out.c1, c1);
  }
  for (std::size_t p = 0; p < samples.size(); ++p) {
    for (std::size_t q = p + 1; q < samples.size(); ++q) {
      const double dist = l1_distance(samples[p], samples[q]);
      if (dist <= 0.0) continue;
      double gap = 0.0;
      for (std::size_t i = 0; i < grid.n(); ++i) {
        gap = std::max({gap, std::abs(b_vals[p][i] - b_vals[q][i]),
                        std::abs(v_vals[p][i] - v_vals[q][i])});
      }
      out.L_A = std::max(out.L_A, gap / dist);
    }
  }
  return out;
}

}  // namespace mvs
