#include "mvs/characteristics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "mvs/error.hpp"
#include "mvs/fd_operators.hpp"

namespace mvs {

namespace {

// Analytic fields are unbounded; this only guards against overflow.
constexpr double kFarField = 1e8;

FlowState axpy(const FlowState& s, double c, const FlowState& k) {
  return {s.Z + c * k.Z, s.Zx + c * k.Zx, s.Zxx + c * k.Zxx, s.logG + c * k.logG};
}

double hermite(double y0, double d0, double y1, double d1, double u, double step) {
  const double u2 = u * u;
  const double u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * step * d0 + (-2 * u3 + 3 * u2) * y1 +
         (u3 - u2) * step * d1;
}

struct Spline {
  Grid1D grid;
  std::vector<double> y;
  std::vector<double> M;  // second derivatives, natural ends

  Spline(const Grid1D& g, std::vector<double> values) : grid(g), y(std::move(values)), M(g.n(), 0.0) {
    const std::size_t n = grid.n();
    if (n < 3) return;
    const double h = grid.h();
    Tridiagonal T(n);
    std::vector<double> rhs(n, 0.0);
    T.diag[0] = 1.0;
    T.diag[n - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      T.lower[i] = h / 6.0;
      T.diag[i] = 2.0 * h / 3.0;
      T.upper[i] = h / 6.0;
      rhs[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h;
    }
    M = TridiagonalSolver(T).solve(rhs);
  }

  // Returns (S, S', S'') at x, clamped into the grid.
  std::array<double, 3> eval(double x) const {
    const double h = grid.h();
    x = std::clamp(x, grid.x_min(), grid.x_max());
    std::size_t j = static_cast<std::size_t>(std::floor((x - grid.x_min()) / h));
    j = std::min(j, grid.n() - 2);
    const double l = x - grid.x(j);
    const double r = grid.x(j + 1) - x;
    const double cl = y[j] / h - M[j] * h / 6.0;
    const double cr = y[j + 1] / h - M[j + 1] * h / 6.0;
    return {M[j] * r * r * r / (6 * h) + M[j + 1] * l * l * l / (6 * h) + cl * r + cr * l,
            -M[j] * r * r / (2 * h) + M[j + 1] * l * l / (2 * h) - cl + cr, (M[j] * r + M[j + 1] * l) / h};
  }
};

}  // namespace

ComField::ComField(Fn f, Fn d1, Fn d2, std::string label, double lower, double upper)
    : f_(std::move(f)), d1_(std::move(d1)), d2_(std::move(d2)), label_(std::move(label)), lower_(lower),
      upper_(upper) {}

ComField ComField::constant(double c) {
  if (!std::isfinite(c)) throw InvalidInput("ComField::constant: value must be finite");
  ComField f([c](double) { return c; }, [](double) { return 0.0; }, [](double) { return 0.0; }, "constant",
             -kFarField, kFarField);
  f.constant_ = true;
  f.value_ = c;
  return f;
}

ComField ComField::linear(double rate) {
  return ComField([rate](double x) { return rate * x; }, [rate](double) { return rate; },
                  [](double) { return 0.0; }, "linear", -kFarField, kFarField);
}

ComField ComField::bounded_odd(double scale) {
  return ComField([scale](double x) { return scale * x / (1.0 + x * x); },
                  [scale](double x) {
                    const double q = 1.0 + x * x;
                    return scale * (1.0 - x * x) / (q * q);
                  },
                  [scale](double x) {
                    const double q = 1.0 + x * x;
                    return scale * (2.0 * x * x * x - 6.0 * x) / (q * q * q);
                  },
                  "bounded_odd", -kFarField, kFarField);
}

ComField ComField::periodic(double offset, double amplitude) {
  return ComField([=](double x) { return offset + amplitude * std::sin(x); },
                  [=](double x) { return amplitude * std::cos(x); },
                  [=](double x) { return -amplitude * std::sin(x); }, "periodic", -kFarField, kFarField);
}

ComField ComField::tabulated(const Grid1D& grid, std::vector<double> values) {
  if (values.size() != grid.n()) throw InvalidInput("ComField::tabulated: size mismatch");
  require_finite(values, "ComField::tabulated");
  auto s = std::make_shared<const Spline>(grid, std::move(values));
  return ComField([s](double x) { return s->eval(x)[0]; }, [s](double x) { return s->eval(x)[1]; },
                  [s](double x) { return s->eval(x)[2]; }, "tabulated", grid.x_min(), grid.x_max());
}

bool ComField::has_zero_on(const Grid1D& grid) const {
  if (constant_) return false;
  bool all_zero = true;
  bool zero = false;
  double prev = 0.0;
  for (std::size_t i = 0; i < grid.n(); ++i) {
    const double s = f_(grid.x(i));
    if (std::abs(s) < 1e-12) {
      zero = true;
    } else {
      all_zero = false;
      if (i > 0 && prev * s < 0.0) zero = true;
    }
    prev = s;
  }
  return zero && !all_zero;
}

FlowMap::FlowMap(ComField sigma, double max_step) : sigma_(std::move(sigma)), max_step_(max_step) {
  if (!(max_step > 0.0)) throw InvalidInput("FlowMap: max_step must be > 0");
}

FlowState FlowMap::rate(const FlowState& s) const {
  const double d1 = sigma_.d1(s.Z);
  const double d2 = sigma_.d2(s.Z);
  return {-sigma_(s.Z), -d1 * s.Zx, -d2 * s.Zx * s.Zx - d1 * s.Zxx, -d1};
}

FlowState FlowMap::advance(const FlowState& s0, double dt, double start) const {
  if (dt == 0.0) return s0;
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(std::abs(dt) / max_step_)));
  const double h = dt / static_cast<double>(steps);
  FlowState s = s0;
  for (std::size_t k = 0; k < steps; ++k) {
    const FlowState k1 = rate(s);
    const FlowState k2 = rate(axpy(s, 0.5 * h, k1));
    const FlowState k3 = rate(axpy(s, 0.5 * h, k2));
    const FlowState k4 = rate(axpy(s, h, k3));
    s.Z += h / 6.0 * (k1.Z + 2 * k2.Z + 2 * k3.Z + k4.Z);
    s.Zx += h / 6.0 * (k1.Zx + 2 * k2.Zx + 2 * k3.Zx + k4.Zx);
    s.Zxx += h / 6.0 * (k1.Zxx + 2 * k2.Zxx + 2 * k3.Zxx + k4.Zxx);
    s.logG += h / 6.0 * (k1.logG + 2 * k2.logG + 2 * k3.logG + k4.logG);
    if (!(s.Z >= sigma_.lower() && s.Z <= sigma_.upper()) || !std::isfinite(s.Zx) || !std::isfinite(s.Zxx)) {
      const double exit_time = static_cast<double>(k + 1) * h;
      std::ostringstream msg;
      msg << "characteristic from x = " << start << " left [" << sigma_.lower() << ", " << sigma_.upper()
          << "] at t = " << exit_time;
      throw FlowExitError(msg.str(), start, exit_time);
    }
  }
  return s;
}

FlowState FlowMap::solve(double t, double x) const {
  if (!std::isfinite(t) || !std::isfinite(x)) throw InvalidInput("FlowMap::solve: non-finite input");
  if (x < sigma_.lower() || x > sigma_.upper()) {
    throw FlowExitError("FlowMap::solve: start outside the field's domain", x, 0.0);
  }
  return advance({x, 1.0, 0.0, 0.0}, t, x);
}

double FlowMap::gain(double t, double x) const { return std::exp(solve(t, x).logG); }

FlowTable::FlowTable(const FlowMap& flow, const Grid1D& grid, double w_max, double dw)
    : flow_(flow), grid_(grid), w_max_(w_max), dw_(dw) {
  if (!(w_max >= 0.0) || !(dw > 0.0)) throw InvalidInput("FlowTable: need w_max >= 0 and dw > 0");
  half_ = static_cast<std::size_t>(std::ceil(w_max / dw));
  w_max_ = static_cast<double>(half_) * dw_;
  const std::size_t n = grid.n();
  const std::size_t rows = 2 * half_ + 1;
  states_.resize(rows * n);
  rates_.resize(rows * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = grid.x(i);
    states_[half_ * n + i] = {x, 1.0, 0.0, 0.0};
    for (std::size_t m = 1; m <= half_; ++m) {
      states_[(half_ + m) * n + i] = flow_.advance(states_[(half_ + m - 1) * n + i], dw_, x);
      states_[(half_ - m) * n + i] = flow_.advance(states_[(half_ - m + 1) * n + i], -dw_, x);
    }
  }
  for (std::size_t k = 0; k < states_.size(); ++k) rates_[k] = flow_.rate(states_[k]);
}

FlowState FlowTable::at(double w, std::size_t i) const {
  const std::size_t n = grid_.n();
  if (i >= n) throw InvalidInput("FlowTable::at: node index out of range");
  if (std::abs(w) > w_max_) {
    // Continue from the table edge.
    const std::size_t edge = w > 0 ? 2 * half_ : 0;
    const double w_edge = w > 0 ? w_max_ : -w_max_;
    return flow_.advance(states_[edge * n + i], w - w_edge, grid_.x(i));
  }
  const double pos = (w + w_max_) / dw_;
  std::size_t m = static_cast<std::size_t>(std::floor(pos));
  if (m >= 2 * half_) m = half_ == 0 ? 0 : 2 * half_ - 1;
  if (half_ == 0) return states_[i];
  const double u = pos - static_cast<double>(m);
  const FlowState& a = states_[m * n + i];
  const FlowState& b = states_[(m + 1) * n + i];
  const FlowState& da = rates_[m * n + i];
  const FlowState& db = rates_[(m + 1) * n + i];
  return {hermite(a.Z, da.Z, b.Z, db.Z, u, dw_), hermite(a.Zx, da.Zx, b.Zx, db.Zx, u, dw_),
          hermite(a.Zxx, da.Zxx, b.Zxx, db.Zxx, u, dw_), hermite(a.logG, da.logG, b.logG, db.logG, u, dw_)};
}

std::vector<FlowState> FlowTable::column(double w) const {
  std::vector<FlowState> out(grid_.n());
  for (std::size_t i = 0; i < grid_.n(); ++i) out[i] = at(w, i);
  return out;
}

std::vector<double> conjugate_values(const Grid1D& grid, std::span<const double> v,
                                     std::span<const FlowState> states, InterpOrder order) {
  if (v.size() != grid.n() || states.size() != grid.n()) throw InvalidInput("conjugate: size mismatch");
  std::vector<double> out(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) {
    out[i] = std::exp(states[i].logG) * interpolate(grid, v, states[i].Z, order);
  }
  return out;
}

SignedField conjugate(const SignedField& v, const FlowMap& flow, double w, Direction direction,
                      InterpOrder order) {
  const Grid1D& grid = v.grid();
  const double s = direction == Direction::kForward ? w : -w;
  std::vector<FlowState> states(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) states[i] = flow.solve(s, grid.x(i));
  return SignedField(grid, conjugate_values(grid, v.view(), states, order), v.time());
}

SignedField conjugate(const SignedField& v, const FlowTable& table, double w, Direction direction,
                      InterpOrder order) {
  require_same_grid(v.grid(), table.grid(), "conjugate");
  const auto states = table.column(direction == Direction::kForward ? w : -w);
  return SignedField(v.grid(), conjugate_values(v.grid(), v.view(), states, order), v.time());
}

std::vector<double> undressed_moments(const MomentCoefficient& coefficient, const Grid1D& grid,
                                      std::span<const double> g, std::span<const FlowState> backward) {
  const auto& kernels = coefficient.kernels();
  std::vector<double> s(kernels.size(), 0.0);
  for (std::size_t j = 0; j < kernels.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.n(); ++i) acc += grid.weight(i) * kernels[j](backward[i].Z) * g[i];
    s[j] = acc;
  }
  return s;
}

DressedCoefficients dress(const DiffusionMatrix& diffusion, const InteractionDrift& drift,
                          const ComField& sigma, const Grid1D& grid, std::span<const FlowState> backward,
                          double t, double w, std::span<const double> moments) {
  if (backward.size() != grid.n()) throw InvalidInput("dress: size mismatch");
  DressedCoefficients out;
  out.w = w;
  out.moments.assign(moments.begin(), moments.end());
  out.A.resize(grid.n());
  out.b.resize(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) {
    const FlowState& s = backward[i];
    const double y = s.Z;
    const double a = diffusion(y);
    const double beta = drift.value(t, y, moments) - 0.5 * sigma(y) * sigma.d1(y);
    const double zzz = -s.Zxx / (s.Zx * s.Zx * s.Zx);
    out.A[i] = a / (s.Zx * s.Zx);
    out.b[i] = beta / s.Zx + 0.5 * a * zzz;
  }
  require_finite(out.A, "dress: A");
  require_finite(out.b, "dress: b");
  return out;
}

DressedCoefficients dress(const DiffusionMatrix& diffusion, const InteractionDrift& drift, const FlowMap& flow,
                          const Grid1D& grid, double t, double w, const SignedField& g) {
  require_same_grid(grid, g.grid(), "dress");
  std::vector<FlowState> backward(grid.n());
  for (std::size_t i = 0; i < grid.n(); ++i) backward[i] = flow.solve(-w, grid.x(i));
  const auto moments = undressed_moments(drift, grid, g.view(), backward);
  return dress(diffusion, drift, flow.field(), grid, backward, t, w, moments);
}

EllipticityFit fit_dressed_ellipticity(const DiffusionMatrix& diffusion, const FlowMap& flow, const Grid1D& grid,
                                       std::span<const double> ws) {
  EllipticityFit fit;
  fit.ws.assign(ws.begin(), ws.end());
  const InteractionDrift none = InteractionDrift::none();
  for (double w : ws) {
    std::vector<FlowState> backward(grid.n());
    for (std::size_t i = 0; i < grid.n(); ++i) backward[i] = flow.solve(-w, grid.x(i));
    const auto d = dress(diffusion, none, flow.field(), grid, backward, 0.0, w, {});
    double bound = 0.0;
    for (double A : d.A) {
      if (!(A > 0.0)) throw NumericalError("fit_dressed_ellipticity: dressed diffusion not positive");
      bound = std::max({bound, A, 1.0 / A});
    }
    fit.bounds.push_back(bound);
  }
  // Smallest C with bound(w) <= C e^{C |w|}; the envelope is increasing in C.
  auto excess = [&](double C) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ws.size(); ++k) {
      worst = std::max(worst, fit.bounds[k] - C * std::exp(C * std::abs(ws[k])));
    }
    return worst;
  };
  double hi = 1.0;
  while (excess(hi) > 0.0 && hi < 1e6) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0.0 ? lo : hi) = mid;
  }
  fit.C = hi;
  return fit;
}

double flow_derivative_sup(const FlowMap& flow, const Grid1D& grid, std::span<const double> ws) {
  double sup = 0.0;
  for (double w : ws) {
    for (std::size_t i = 0; i < grid.n(); ++i) {
      const FlowState s = flow.solve(w, grid.x(i));
      sup = std::max(sup, std::abs(s.Zx) + std::abs(s.Zxx));
    }
  }
  return sup;
}

}  // namespace mvs
