#pragma once

// Characteristics of the common-noise field sigma (d = 1).
//
// Z(t, x) solves dZ/dt = -sigma(Z), Z(0, x) = x, for t of either sign.
// Along it
//   d/dt Z_x     = -sigma'(Z) Z_x
//   d/dt Z_xx    = -sigma''(Z) Z_x^2 - sigma'(Z) Z_xx
//   d/dt log G   = -sigma'(Z)            (G = exp int B(Z), B = -sigma')
// so G(t, x) = Z_x(t, x) in one dimension.
//
// e^{w Omega'} v (x) = G(w, x) v(Z(w, x)) transports v along sigma by "time"
// w while preserving mass.
//
// Dressing at noise value w, with y = Z(-w, x):
//   A~(x) = a(y) / Z_x(-w, x)^2
//   b~(x) = (b(y, [v]) - sigma sigma'(y) / 2) / Z_x(-w, x) + a(y) Z_zz(w, y) / 2,
//   Z_zz(w, y) = -Z_xx(-w, x) / Z_x(-w, x)^3,
// where v = e^{w Omega'} g is the undressed state.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"

namespace mvs {

/// Smooth scalar noise field with two derivatives.
class ComField {
 public:
  using Fn = std::function<double(double)>;

  static ComField constant(double c);
  /// sigma(x) = rate * x.
  static ComField linear(double rate);
  /// sigma(x) = scale * x / (1 + x^2).
  static ComField bounded_odd(double scale = 1.0);
  /// sigma(x) = offset + amplitude * sin(x).
  static ComField periodic(double offset, double amplitude);
  /// Natural cubic spline through samples on `grid`. Flows are confined to
  /// [x_min, x_max] and throw FlowExitError when they leave it.
  static ComField tabulated(const Grid1D& grid, std::vector<double> values);

  double operator()(double x) const { return f_(x); }
  double d1(double x) const { return d1_(x); }
  double d2(double x) const { return d2_(x); }
  const std::string& label() const { return label_; }
  bool is_constant() const { return constant_; }
  double constant_value() const { return value_; }
  /// Flows must stay inside [lower, upper].
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  /// True when sigma vanishes somewhere on the grid (sign change or |sigma|
  /// below 1e-12) and is not identically zero. Uniform-in-w derivative
  /// bounds of the flow fail for such fields.
  bool has_zero_on(const Grid1D& grid) const;

 private:
  ComField(Fn f, Fn d1, Fn d2, std::string label, double lower, double upper);
  Fn f_;
  Fn d1_;
  Fn d2_;
  std::string label_;
  double lower_;
  double upper_;
  bool constant_ = false;
  double value_ = 0.0;
};

struct FlowState {
  double Z;
  double Zx;
  double Zxx;
  double logG;
};

/// Integrates the characteristic system with classical RK4, step <= 1e-3.
class FlowMap {
 public:
  explicit FlowMap(ComField sigma, double max_step = 1e-3);

  const ComField& field() const { return sigma_; }
  FlowState solve(double t, double x) const;
  /// Advance a state by signed time dt (the system is autonomous).
  FlowState advance(const FlowState& s, double dt, double start) const;
  double gain(double t, double x) const;
  /// d/dt of the state, i.e. the right-hand side at s.
  FlowState rate(const FlowState& s) const;

 private:
  ComField sigma_;
  double max_step_;
};

/// Flow states at every node of a spatial grid for w on a uniform grid in
/// [-w_max, w_max]; values between w nodes by cubic Hermite interpolation
/// using the exact w-derivatives. Immutable after construction.
class FlowTable {
 public:
  FlowTable(const FlowMap& flow, const Grid1D& grid, double w_max, double dw = 0.01);

  const Grid1D& grid() const { return grid_; }
  double w_max() const { return w_max_; }
  const FlowMap& flow() const { return flow_; }
  FlowState at(double w, std::size_t i) const;
  std::vector<FlowState> column(double w) const;

 private:
  FlowMap flow_;
  Grid1D grid_;
  double w_max_;
  double dw_;
  std::size_t half_;                // nodes per side; index half_ is w = 0
  std::vector<FlowState> states_;   // [(m) * n + i], m = 0..2*half_
  std::vector<FlowState> rates_;
};

enum class Direction { kForward, kInverse };

/// forward: x -> G(w, x) v(Z(w, x)); inverse: x -> G(-w, x) v(Z(-w, x)).
/// Off-grid values by interpolation with clamped extrapolation.
SignedField conjugate(const SignedField& v, const FlowMap& flow, double w, Direction direction,
                      InterpOrder order = InterpOrder::kCubic);
SignedField conjugate(const SignedField& v, const FlowTable& table, double w, Direction direction,
                      InterpOrder order = InterpOrder::kCubic);
/// Same transform applied to raw values using a precomputed column of flow
/// states at +w (forward) or -w (inverse).
std::vector<double> conjugate_values(const Grid1D& grid, std::span<const double> v,
                                     std::span<const FlowState> states, InterpOrder order);

struct DressedCoefficients {
  double w = 0.0;
  std::vector<double> A;        // A~ at grid nodes
  std::vector<double> b;        // b~ at grid nodes
  std::vector<double> moments;  // moments of the undressed state used in b~
};

/// Moments (g_j, e^{w Omega'} g) = int g_j(Z(-w, u)) g(u) du, from the
/// backward states column(-w).
std::vector<double> undressed_moments(const MomentCoefficient& coefficient, const Grid1D& grid,
                                      std::span<const double> g, std::span<const FlowState> backward);

/// Dressed coefficients from the backward states column(-w) and the
/// moments of the undressed state.
DressedCoefficients dress(const DiffusionMatrix& diffusion, const InteractionDrift& drift,
                          const ComField& sigma, const Grid1D& grid, std::span<const FlowState> backward,
                          double t, double w, std::span<const double> moments);

/// Convenience overload solving the flow on demand.
DressedCoefficients dress(const DiffusionMatrix& diffusion, const InteractionDrift& drift, const FlowMap& flow,
                          const Grid1D& grid, double t, double w, const SignedField& g);

/// Fit of max(sup A~, sup 1/A~) <= C e^{C |w|} over the supplied w values.
struct EllipticityFit {
  double C = 0.0;
  std::vector<double> ws;
  std::vector<double> bounds;
};
EllipticityFit fit_dressed_ellipticity(const DiffusionMatrix& diffusion, const FlowMap& flow, const Grid1D& grid,
                                       std::span<const double> ws);

/// sup over w in ws and grid nodes of |Z_x(w, x)| + |Z_xx(w, x)|.
double flow_derivative_sup(const FlowMap& flow, const Grid1D& grid, std::span<const double> ws);

}  // namespace mvs
