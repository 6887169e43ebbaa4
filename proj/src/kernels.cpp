#include "mvs/kernels.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include <Eigen/Eigenvalues>

namespace mvs {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t fft_size_at_least(std::size_t n) {
  std::size_t best = 0;
  for (std::size_t p2 = 1; p2 < 4 * n; p2 *= 2) {
    for (std::size_t p3 = p2; p3 < 4 * n; p3 *= 3) {
      for (std::size_t p5 = p3; p5 < 4 * n; p5 *= 5) {
        if (p5 >= n && (best == 0 || p5 < best)) best = p5;
      }
    }
  }
  return best;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::vector<double> re(n);
    std::vector<std::complex<double>> co(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), re.data(),
                                    reinterpret_cast<fftw_complex*>(co.data()),
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
    backward_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(co.data()),
                                     re.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (forward_ == nullptr || backward_ == nullptr) throw NumericalError("FFTW planning failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  std::size_t size() const { return n_; }
  std::size_t spectrum_size() const { return n_ / 2 + 1; }

  // `in` has length n.
  std::vector<std::complex<double>> forward(std::vector<double>& in) const {
    std::vector<std::complex<double>> out(spectrum_size());
    fftw_execute_dft_r2c(forward_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }

  // Unnormalized inverse; the c2r transform destroys its input.
  std::vector<double> backward(std::vector<std::complex<double>> in) const {
    std::vector<double> out(n_);
    fftw_execute_dft_c2r(backward_, reinterpret_cast<fftw_complex*>(in.data()), out.data());
    return out;
  }

 private:
  std::size_t n_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

}  // namespace

struct HeatKernel::Impl {
  Grid1D grid;
  DiffusionMatrix diffusion;
  Mode mode;

  // Constant mode.
  double a = 0.0;
  std::unique_ptr<RealFft> fft;

  // Variable mode: exp(tL) = diag(1/r) Q exp(t lambda) Q^T diag(r), r = sqrt(a).
  Eigen::MatrixXd Q;
  Eigen::VectorXd lambda;
  Eigen::VectorXd root_a;

  Impl(Grid1D g, DiffusionMatrix d, Mode m) : grid(std::move(g)), diffusion(std::move(d)), mode(m) {}

  // Normalized kernel samples K(m h) and K'(m h) in circular layout.
  std::vector<double> kernel_samples(double t, bool gradient) const {
    const std::size_t N = fft->size();
    const std::size_t n = grid.n();
    const double h = grid.h();
    const double var = a * t;
    std::vector<double> k(N, 0.0);
    double norm = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double r = static_cast<double>(m) * h;
      const double g = std::exp(-0.5 * r * r / var);
      norm += (m == 0 ? 1.0 : 2.0) * g;
      k[m] = g;
      if (m > 0) k[N - m] = g;
    }
    norm *= h;
    for (std::size_t m = 0; m < n; ++m) {
      k[m] /= norm;
      if (m > 0) k[N - m] /= norm;
    }
    if (gradient) {
      for (std::size_t m = 0; m < n; ++m) {
        const double r = static_cast<double>(m) * h;
        k[m] *= -r / var;
        if (m > 0) k[N - m] *= r / var;
      }
    }
    return k;
  }

  std::vector<double> centered_difference(std::span<const double> w) const {
    const std::size_t n = grid.n();
    const double inv = 1.0 / (2.0 * grid.h());
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double right = i + 1 < n ? w[i + 1] : 0.0;
      const double left = i > 0 ? w[i - 1] : 0.0;
      d[i] = (right - left) * inv;
    }
    return d;
  }
};

HeatKernel::HeatKernel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

HeatKernel::HeatKernel(Grid1D grid, DiffusionMatrix diffusion) {
  if (!diffusion.is_constant()) {
    *this = variable(std::move(grid), std::move(diffusion));
    return;
  }
  auto impl = std::make_shared<Impl>(grid, diffusion, Mode::kConstant);
  impl->a = diffusion.constant_value();
  impl->fft = std::make_unique<RealFft>(fft_size_at_least(2 * grid.n() - 1));
  impl_ = std::move(impl);
}

HeatKernel HeatKernel::variable(Grid1D grid, DiffusionMatrix diffusion) {
  auto impl = std::make_shared<Impl>(grid, diffusion, Mode::kVariable);
  diffusion.ellipticity(grid);
  const std::size_t n = grid.n();
  const double h2 = grid.h() * grid.h();
  const std::vector<double> a = diffusion.sample(grid);
  impl->root_a.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) impl->root_a[static_cast<Eigen::Index>(i)] = std::sqrt(a[i]);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double ri = impl->root_a[i];
    S(i, i) = -ri * ri / h2;
    if (i + 1 < static_cast<Eigen::Index>(n)) {
      const double off = 0.5 * ri * impl->root_a[i + 1] / h2;
      S(i, i + 1) = off;
      S(i + 1, i) = off;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  if (eig.info() != Eigen::Success) throw NumericalError("HeatKernel: eigendecomposition failed");
  impl->Q = eig.eigenvectors();
  impl->lambda = eig.eigenvalues();
  return HeatKernel(std::shared_ptr<const Impl>(std::move(impl)));
}

HeatKernel::Mode HeatKernel::mode() const { return impl_->mode; }
const Grid1D& HeatKernel::grid() const { return impl_->grid; }
const DiffusionMatrix& HeatKernel::diffusion() const { return impl_->diffusion; }

std::size_t HeatKernel::spectrum_size() const {
  return impl_->mode == Mode::kConstant ? impl_->fft->spectrum_size() : impl_->grid.n();
}

HeatKernel::Spectrum HeatKernel::transform(std::span<const double> source) const {
  const Impl& k = *impl_;
  const std::size_t n = k.grid.n();
  if (source.size() != n) throw InvalidInput("HeatKernel::transform: size mismatch");
  if (k.mode == Mode::kConstant) {
    std::vector<double> buf(k.fft->size(), 0.0);
    for (std::size_t j = 0; j < n; ++j) buf[j] = k.grid.weight(j) * source[j];
    return k.fft->forward(buf);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    v[static_cast<Eigen::Index>(j)] = k.root_a[static_cast<Eigen::Index>(j)] * source[j];
  }
  const Eigen::VectorXd c = k.Q.transpose() * v;
  return Spectrum(c.data(), c.data() + c.size());
}

HeatKernel::Spectrum HeatKernel::transform_flux(std::span<const double> w) const {
  if (impl_->mode == Mode::kConstant) return transform(w);
  return transform(impl_->centered_difference(w));
}

HeatKernel::Spectrum HeatKernel::multiplier(double t) const {
  if (!(t > 0.0)) throw InvalidInput("HeatKernel: t must be > 0");
  const Impl& k = *impl_;
  if (k.mode == Mode::kConstant) {
    std::vector<double> samples = k.kernel_samples(t, false);
    return k.fft->forward(samples);
  }
  Spectrum m(k.grid.n());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::exp(t * k.lambda[static_cast<Eigen::Index>(i)]);
  return m;
}

HeatKernel::Spectrum HeatKernel::flux_multiplier(double t) const {
  if (!(t > 0.0)) throw InvalidInput("HeatKernel: t must be > 0");
  const Impl& k = *impl_;
  if (k.mode == Mode::kConstant) {
    std::vector<double> samples = k.kernel_samples(t, true);
    return k.fft->forward(samples);
  }
  return multiplier(t);
}

std::vector<double> HeatKernel::synthesize(const Spectrum& coefficients) const {
  const Impl& k = *impl_;
  const std::size_t n = k.grid.n();
  if (coefficients.size() != spectrum_size()) throw InvalidInput("HeatKernel::synthesize: size mismatch");
  std::vector<double> out(n);
  if (k.mode == Mode::kConstant) {
    const std::vector<double> full = k.fft->backward(coefficients);
    const double scale = 1.0 / static_cast<double>(k.fft->size());
    for (std::size_t i = 0; i < n; ++i) out[i] = full[i] * scale;
    return out;
  }
  Eigen::VectorXd c(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) c[static_cast<Eigen::Index>(i)] = coefficients[i].real();
  const Eigen::VectorXd v = k.Q * c;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = v[static_cast<Eigen::Index>(i)] / k.root_a[static_cast<Eigen::Index>(i)];
  }
  return out;
}

std::vector<double> HeatKernel::apply(double t, std::span<const double> source) const {
  Spectrum s = transform(source);
  const Spectrum m = multiplier(t);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= m[i];
  return synthesize(s);
}

DensityField HeatKernel::apply(double t, const DensityField& source) const {
  require_same_grid(grid(), source.grid(), "green_apply");
  std::vector<double> v = apply(t, source.view());
  project_nonnegative(v, 1e-10);
  return DensityField(grid(), std::move(v), source.time() + t);
}

std::vector<double> HeatKernel::apply_point_masses(double t, std::span<const PointMass> masses) const {
  if (!(t > 0.0)) throw InvalidInput("HeatKernel: t must be > 0");
  const Impl& k = *impl_;
  const std::size_t n = k.grid.n();
  std::vector<double> out(n, 0.0);
  if (k.mode == Mode::kConstant) {
    const double var = k.a * t;
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi * var);
    for (const auto& pm : masses) {
      for (std::size_t i = 0; i < n; ++i) {
        const double r = k.grid.x(i) - pm.x;
        out[i] += pm.mass * c * std::exp(-0.5 * r * r / var);
      }
    }
    return out;
  }
  std::vector<double> src(n, 0.0);
  for (const auto& pm : masses) {
    const DensityField d = mollified_delta(k.grid, pm.x, pm.mass);
    for (std::size_t i = 0; i < n; ++i) src[i] += d[i];
  }
  return apply(t, src);
}

std::vector<double> HeatKernel::gradient_apply(double t, std::span<const double> w) const {
  Spectrum s = transform_flux(w);
  const Spectrum m = flux_multiplier(t);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] *= m[i];
  return synthesize(s);
}

SignedField HeatKernel::gradient_apply(double t, const SignedField& w) const {
  require_same_grid(grid(), w.grid(), "green_gradient_apply");
  return SignedField(grid(), gradient_apply(t, w.view()), w.time() + t);
}

double HeatKernel::entry(double t, std::size_t i, std::size_t j) const {
  if (!(t > 0.0)) throw InvalidInput("HeatKernel: t must be > 0");
  const Impl& k = *impl_;
  if (k.mode == Mode::kConstant) {
    const std::vector<double> samples = k.kernel_samples(t, false);
    const std::size_t N = k.fft->size();
    return i >= j ? samples[i - j] : samples[N - (j - i)];
  }
  double s = 0.0;
  const auto ii = static_cast<Eigen::Index>(i);
  const auto jj = static_cast<Eigen::Index>(j);
  for (Eigen::Index q = 0; q < k.lambda.size(); ++q) s += k.Q(ii, q) * std::exp(t * k.lambda[q]) * k.Q(jj, q);
  return s * k.root_a[jj] / k.root_a[ii] / k.grid.h();
}

Eigen::MatrixXd HeatKernel::matrix(double t) const {
  if (!(t > 0.0)) throw InvalidInput("HeatKernel: t must be > 0");
  const Impl& k = *impl_;
  const auto n = static_cast<Eigen::Index>(k.grid.n());
  Eigen::MatrixXd G(n, n);
  if (k.mode == Mode::kConstant) {
    const std::vector<double> samples = k.kernel_samples(t, false);
    const std::size_t N = k.fft->size();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        G(i, j) = i >= j ? samples[static_cast<std::size_t>(i - j)]
                         : samples[N - static_cast<std::size_t>(j - i)];
      }
    }
    return G;
  }
  const Eigen::VectorXd e = (t * k.lambda.array()).exp().matrix();
  G = k.Q * e.asDiagonal() * k.Q.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) G(i, j) *= k.root_a[j] / k.root_a[i] / k.grid.h();
  }
  return G;
}

AronsonFit fit_aronson(const HeatKernel& kernel, std::span<const double> times, double floor) {
  const Grid1D& grid = kernel.grid();
  std::vector<Eigen::MatrixXd> mats;
  for (double t : times) mats.push_back(kernel.matrix(t));
  AronsonFit best{std::numeric_limits<double>::infinity(), 0.0, false};
  for (int step = 0; step <= 180; ++step) {
    const double sigma = 1.0 + 0.05 * step;
    double C = 0.0;
    for (std::size_t q = 0; q < times.size(); ++q) {
      const double var = sigma * times[q];
      const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi * var);
      const Eigen::MatrixXd& G = mats[q];
      for (Eigen::Index i = 0; i < G.rows(); ++i) {
        for (Eigen::Index j = 0; j < G.cols(); ++j) {
          if (G(i, j) <= floor) continue;
          const double r = grid.x(static_cast<std::size_t>(i)) - grid.x(static_cast<std::size_t>(j));
          const double env = c * std::exp(-0.5 * r * r / var);
          C = std::max(C, env > 0.0 ? G(i, j) / env : std::numeric_limits<double>::infinity());
        }
      }
    }
    if (C < best.C) best = {C, sigma, false};
  }
  best.ok = best.C <= 10.0 && best.sigma <= 10.0;
  return best;
}

double midpoint_singular_quadrature_error(double t, std::size_t steps) {
  if (!(t > 0.0) || steps == 0) throw InvalidInput("midpoint quadrature: need t > 0 and steps >= 1");
  const double dt = t / static_cast<double>(steps);
  double s = 0.0;
  for (std::size_t j = 0; j < steps; ++j) s += dt / std::sqrt(t - (static_cast<double>(j) + 0.5) * dt);
  const double exact = 2.0 * std::sqrt(t);
  return std::abs(s - exact) / exact;
}

}  // namespace mvs
