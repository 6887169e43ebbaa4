#pragma once

// Conservative finite-difference operators on a uniform grid.
//
// The generator rho -> (1/2)(a rho)'' - (c rho)' + v rho is discretized in
// flux form on control volumes of width w_i (h inside, h/2 at the two ends)
// with zero flux through the outer faces:
//
//   diffusion flux  D_{i+1/2} = (a_{i+1} rho_{i+1} - a_i rho_i) / (2h)
//   drift flux      F_{i+1/2} = (c_i rho_i + c_{i+1} rho_{i+1}) / 2
//   (L rho)_i       = (D_{i+1/2} - D_{i-1/2} - F_{i+1/2} + F_{i-1/2}) / w_i + v_i rho_i.
//
// With v = 0 the trapezoid mass sum_i w_i rho_i is conserved exactly.

#include <span>
#include <vector>

#include "mvs/core.hpp"

namespace mvs {

/// lower[i] = M(i, i-1), diag[i] = M(i, i), upper[i] = M(i, i+1);
/// lower[0] and upper[n-1] are unused.
struct Tridiagonal {
  std::vector<double> lower;
  std::vector<double> diag;
  std::vector<double> upper;

  explicit Tridiagonal(std::size_t n = 0) : lower(n, 0.0), diag(n, 0.0), upper(n, 0.0) {}
  std::size_t size() const { return diag.size(); }
  std::vector<double> apply(std::span<const double> x) const;
  Tridiagonal transposed() const;
};

/// LU factors of a tridiagonal matrix (no pivoting; used on diagonally
/// dominant shifted generators).
class TridiagonalSolver {
 public:
  TridiagonalSolver() = default;
  explicit TridiagonalSolver(const Tridiagonal& m);
  std::vector<double> solve(std::span<const double> rhs) const;

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<double> inv_pivot_;
};

/// Flux-form generator described above.
Tridiagonal flux_generator(const Grid1D& grid, std::span<const double> a, std::span<const double> c,
                           std::span<const double> v);

/// Discrete -(u)' in the same flux form (centered face averages, zero outer
/// flux). Its trapezoid integral is exactly zero.
std::vector<double> flux_divergence(const Grid1D& grid, std::span<const double> u);

/// L = T + sum_r U_r V_r^T.
struct LowRankTridiagonal {
  Tridiagonal T;
  std::vector<std::vector<double>> U;
  std::vector<std::vector<double>> V;

  std::vector<double> apply(std::span<const double> x) const;
  LowRankTridiagonal transposed() const;
};

/// x -> (I - theta dt L)^{-1} (I + (1 - theta) dt L) x, with the inverse
/// applied by a tridiagonal solve plus a Woodbury correction for the
/// low-rank part. Transposed actions are available for adjoints.
class ThetaStep {
 public:
  ThetaStep(LowRankTridiagonal L, double dt, double theta = 0.5);

  double dt() const { return dt_; }
  double theta() const { return theta_; }
  const LowRankTridiagonal& generator() const { return L_; }

  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> apply_transpose(std::span<const double> x) const;
  /// (I - theta dt L)^{-1} y.
  std::vector<double> solve_implicit(std::span<const double> y) const;
  std::vector<double> solve_implicit_transpose(std::span<const double> y) const;

 private:
  struct Woodbury {
    TridiagonalSolver A;
    std::vector<std::vector<double>> AinvU;  // A^{-1} (theta dt U_r)
    std::vector<std::vector<double>> V;
    std::vector<double> cap_inv;  // (I - V^T A^{-1} U')^{-1}, row-major r x r
    std::vector<double> solve(std::span<const double> y) const;
  };
  static Woodbury factor(const Tridiagonal& A, const std::vector<std::vector<double>>& U,
                         const std::vector<std::vector<double>>& V, double scale);

  LowRankTridiagonal L_;
  LowRankTridiagonal Lt_;
  double dt_;
  double theta_;
  Woodbury forward_;
  Woodbury transpose_;
};

}  // namespace mvs
