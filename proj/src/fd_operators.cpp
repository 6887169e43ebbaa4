#include "mvs/fd_operators.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace mvs {

std::vector<double> Tridiagonal::apply(std::span<const double> x) const {
  const std::size_t n = size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = diag[i] * x[i];
    if (i > 0) s += lower[i] * x[i - 1];
    if (i + 1 < n) s += upper[i] * x[i + 1];
    y[i] = s;
  }
  return y;
}

Tridiagonal Tridiagonal::transposed() const {
  const std::size_t n = size();
  Tridiagonal t(n);
  t.diag = diag;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    t.upper[i] = lower[i + 1];
    t.lower[i + 1] = upper[i];
  }
  return t;
}

TridiagonalSolver::TridiagonalSolver(const Tridiagonal& m) {
  const std::size_t n = m.size();
  lower_ = m.lower;
  upper_.assign(n, 0.0);
  inv_pivot_.assign(n, 0.0);
  double prev_upper = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pivot = m.diag[i] - (i > 0 ? m.lower[i] * prev_upper : 0.0);
    if (pivot == 0.0 || !std::isfinite(pivot)) throw NumericalError("tridiagonal solve: zero pivot");
    inv_pivot_[i] = 1.0 / pivot;
    upper_[i] = i + 1 < n ? m.upper[i] * inv_pivot_[i] : 0.0;
    prev_upper = upper_[i];
  }
}

std::vector<double> TridiagonalSolver::solve(std::span<const double> rhs) const {
  const std::size_t n = inv_pivot_.size();
  std::vector<double> x(n);
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (rhs[i] - (i > 0 ? lower_[i] * prev : 0.0)) * inv_pivot_[i];
    prev = x[i];
  }
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= upper_[i] * x[i + 1];
  return x;
}

Tridiagonal flux_generator(const Grid1D& grid, std::span<const double> a, std::span<const double> c,
                           std::span<const double> v) {
  const std::size_t n = grid.n();
  const double h = grid.h();
  Tridiagonal L(n);
  // Face i+1/2 couples nodes i and i+1.
  for (std::size_t i = 0; i + 1 < n; ++i) {
    // Flux out of i into i+1: G = D - F, contribution +G/w_i to node i and -G/w_{i+1} to i+1.
    const double g_i = -a[i] / (2.0 * h) - 0.5 * c[i];          // coefficient of rho_i in G
    const double g_ip1 = a[i + 1] / (2.0 * h) - 0.5 * c[i + 1];  // coefficient of rho_{i+1} in G
    const double wi = grid.weight(i);
    const double wj = grid.weight(i + 1);
    L.diag[i] += g_i / wi;
    L.upper[i] += g_ip1 / wi;
    L.lower[i + 1] -= g_i / wj;
    L.diag[i + 1] -= g_ip1 / wj;
  }
  if (!v.empty()) {
    for (std::size_t i = 0; i < n; ++i) L.diag[i] += v[i];
  }
  return L;
}

std::vector<double> flux_divergence(const Grid1D& grid, std::span<const double> u) {
  const std::size_t n = grid.n();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double F = 0.5 * (u[i] + u[i + 1]);
    out[i] -= F / grid.weight(i);
    out[i + 1] += F / grid.weight(i + 1);
  }
  return out;
}

std::vector<double> LowRankTridiagonal::apply(std::span<const double> x) const {
  std::vector<double> y = T.apply(x);
  for (std::size_t r = 0; r < U.size(); ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += V[r][i] * x[i];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * U[r][i];
  }
  return y;
}

LowRankTridiagonal LowRankTridiagonal::transposed() const { return {T.transposed(), V, U}; }

ThetaStep::Woodbury ThetaStep::factor(const Tridiagonal& A, const std::vector<std::vector<double>>& U,
                                      const std::vector<std::vector<double>>& V, double scale) {
  Woodbury w;
  w.A = TridiagonalSolver(A);
  w.V = V;
  const std::size_t r = U.size();
  for (const auto& u : U) {
    std::vector<double> su(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) su[i] = scale * u[i];
    w.AinvU.push_back(w.A.solve(su));
  }
  if (r > 0) {
    Eigen::MatrixXd cap = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
    for (std::size_t p = 0; p < r; ++p) {
      for (std::size_t q = 0; q < r; ++q) {
        double s = 0.0;
        for (std::size_t i = 0; i < V[p].size(); ++i) s += V[p][i] * w.AinvU[q][i];
        cap(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) -= s;
      }
    }
    const Eigen::MatrixXd inv = cap.inverse();
    w.cap_inv.resize(r * r);
    for (std::size_t p = 0; p < r; ++p) {
      for (std::size_t q = 0; q < r; ++q) {
        w.cap_inv[p * r + q] = inv(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
      }
    }
  }
  return w;
}

// (A - U' V^T)^{-1} y = A^{-1} y + A^{-1} U' (I - V^T A^{-1} U')^{-1} V^T A^{-1} y.
std::vector<double> ThetaStep::Woodbury::solve(std::span<const double> y) const {
  std::vector<double> x = A.solve(y);
  const std::size_t r = AinvU.size();
  if (r == 0) return x;
  std::vector<double> vx(r, 0.0);
  for (std::size_t p = 0; p < r; ++p) {
    for (std::size_t i = 0; i < x.size(); ++i) vx[p] += V[p][i] * x[i];
  }
  for (std::size_t q = 0; q < r; ++q) {
    double c = 0.0;
    for (std::size_t p = 0; p < r; ++p) c += cap_inv[q * r + p] * vx[p];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += c * AinvU[q][i];
  }
  return x;
}

ThetaStep::ThetaStep(LowRankTridiagonal L, double dt, double theta)
    : L_(std::move(L)), Lt_(L_.transposed()), dt_(dt), theta_(theta) {
  if (!(dt > 0.0)) throw InvalidInput("ThetaStep: dt must be > 0");
  if (theta < 0.0 || theta > 1.0) throw InvalidInput("ThetaStep: theta must lie in [0, 1]");
  auto shifted = [&](const Tridiagonal& T) {
    Tridiagonal A(T.size());
    for (std::size_t i = 0; i < T.size(); ++i) {
      A.lower[i] = -theta_ * dt_ * T.lower[i];
      A.diag[i] = 1.0 - theta_ * dt_ * T.diag[i];
      A.upper[i] = -theta_ * dt_ * T.upper[i];
    }
    return A;
  };
  forward_ = factor(shifted(L_.T), L_.U, L_.V, theta_ * dt_);
  transpose_ = factor(shifted(Lt_.T), Lt_.U, Lt_.V, theta_ * dt_);
}

std::vector<double> ThetaStep::solve_implicit(std::span<const double> y) const { return forward_.solve(y); }

std::vector<double> ThetaStep::solve_implicit_transpose(std::span<const double> y) const {
  return transpose_.solve(y);
}

std::vector<double> ThetaStep::apply(std::span<const double> x) const {
  std::vector<double> rhs(x.begin(), x.end());
  if (theta_ < 1.0) {
    const std::vector<double> Lx = L_.apply(x);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += (1.0 - theta_) * dt_ * Lx[i];
  }
  return forward_.solve(rhs);
}

// S^T = (I + (1-theta) dt L)^T (I - theta dt L)^{-T}.
std::vector<double> ThetaStep::apply_transpose(std::span<const double> x) const {
  std::vector<double> y = transpose_.solve(x);
  if (theta_ < 1.0) {
    const std::vector<double> Lty = Lt_.apply(y);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += (1.0 - theta_) * dt_ * Lty[i];
  }
  return y;
}

}  // namespace mvs
