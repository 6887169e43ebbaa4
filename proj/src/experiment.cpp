#include "mvs/experiment.hpp"

#include <fftw3.h>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mvs/error.hpp"
#include "mvs/kernels.hpp"
#include "mvs/mild_solver.hpp"
#include "mvs/parallel.hpp"
#include "mvs/particles.hpp"
#include "mvs/sensitivity.hpp"
#include "mvs/spde.hpp"

namespace mvs {

namespace {

// ---------------------------------------------------------------- schema

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
}

void allow_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
T required(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T optional(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return required<T>(j, key, where);
}

double positive(double v, const std::string& what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(what + " must be positive and finite");
  return v;
}

DiffusionMatrix parse_diffusion(const Json& j) {
  const std::string where = "coefficients.diffusion";
  require_object(j, where);
  const auto preset = required<std::string>(j, "preset", where);
  if (preset == "constant") {
    allow_keys(j, {"preset", "value"}, where);
    return DiffusionMatrix::constant(positive(required<double>(j, "value", where), where + ".value"));
  }
  if (preset == "bump") {
    allow_keys(j, {"preset", "base", "amplitude", "width"}, where);
    const double base = positive(required<double>(j, "base", where), where + ".base");
    const double amplitude = required<double>(j, "amplitude", where);
    const double width = positive(required<double>(j, "width", where), where + ".width");
    if (base + std::min(amplitude, 0.0) <= 0.0) throw ConfigError(where + ": diffusion must stay positive");
    return DiffusionMatrix::variable(
        [=](double x) { return base + amplitude * std::exp(-x * x / (2.0 * width * width)); }, "bump");
  }
  throw ConfigError(where + ": unsupported preset '" + preset + "'");
}

InteractionDrift parse_drift(const Json& j, const Grid1D& grid) {
  const std::string where = "coefficients.drift";
  require_object(j, where);
  const auto preset = required<std::string>(j, "preset", where);
  if (preset == "none") {
    allow_keys(j, {"preset"}, where);
    return InteractionDrift::none();
  }
  if (preset == "constant") {
    allow_keys(j, {"preset", "value"}, where);
    return InteractionDrift::constant(required<double>(j, "value", where));
  }
  if (preset == "mean_reversion") {
    allow_keys(j, {"preset", "rate"}, where);
    return InteractionDrift::mean_reversion(positive(required<double>(j, "rate", where), where + ".rate"));
  }
  if (preset == "moment_quadratic") {
    allow_keys(j, {"preset", "rate", "gain", "width"}, where);
    return InteractionDrift::moment_quadratic(required<double>(j, "rate", where), required<double>(j, "gain", where),
                                              positive(required<double>(j, "width", where), where + ".width"));
  }
  if (preset == "custom_tabulated") {
    // Kernels are sampled on the config grid.
    allow_keys(j, {"preset", "rate", "kernels", "weights"}, where);
    return InteractionDrift::custom_tabulated(grid, required<std::vector<std::vector<double>>>(j, "kernels", where),
                                              required<std::vector<double>>(j, "weights", where),
                                              optional<double>(j, "rate", 0.0, where));
  }
  throw ConfigError(where + ": unsupported preset '" + preset + "'");
}

PotentialTerm parse_potential(const Json& j) {
  const std::string where = "coefficients.potential";
  require_object(j, where);
  const auto preset = required<std::string>(j, "preset", where);
  if (preset == "none") {
    allow_keys(j, {"preset"}, where);
    return PotentialTerm::none();
  }
  if (preset == "constant") {
    allow_keys(j, {"preset", "rate"}, where);
    const double rate = required<double>(j, "rate", where);
    if (rate < 0.0) throw ConfigError(where + ".rate must be >= 0 (V <= 0)");
    return PotentialTerm::constant(rate);
  }
  if (preset == "moment_decay") {
    allow_keys(j, {"preset", "base", "gain", "width"}, where);
    const double base = required<double>(j, "base", where);
    const double gain = required<double>(j, "gain", where);
    if (base < 0.0 || gain < 0.0) throw ConfigError(where + ": base and gain must be >= 0 (V <= 0)");
    return PotentialTerm::moment_decay(base, gain, positive(required<double>(j, "width", where), where + ".width"));
  }
  throw ConfigError(where + ": unsupported preset '" + preset + "'");
}

ComField parse_field(const Json& j, const Grid1D& grid) {
  const std::string where = "noise";
  const auto preset = required<std::string>(j, "preset", where);
  if (preset == "constant") {
    allow_keys(j, {"type", "preset", "value"}, where);
    return ComField::constant(required<double>(j, "value", where));
  }
  if (preset == "linear") {
    allow_keys(j, {"type", "preset", "rate"}, where);
    return ComField::linear(required<double>(j, "rate", where));
  }
  if (preset == "bounded_odd") {
    allow_keys(j, {"type", "preset", "scale"}, where);
    return ComField::bounded_odd(required<double>(j, "scale", where));
  }
  if (preset == "periodic") {
    allow_keys(j, {"type", "preset", "offset", "amplitude"}, where);
    return ComField::periodic(required<double>(j, "offset", where), required<double>(j, "amplitude", where));
  }
  if (preset == "tabulated") {
    // Values are sampled on the config grid.
    allow_keys(j, {"type", "preset", "values"}, where);
    auto values = required<std::vector<double>>(j, "values", where);
    if (values.size() != grid.n()) throw ConfigError(where + ".values: size does not match grid.n");
    // Zero end values make the grid ends fixed points, so flows stay inside.
    if (values.front() != 0.0 || values.back() != 0.0) {
      throw ConfigError(where + ".values: must vanish at both grid ends");
    }
    try {
      return ComField::tabulated(grid, std::move(values));
    } catch (const InvalidInput& e) {
      throw ConfigError(where + ".values: " + e.what());
    }
  }
  throw ConfigError(where + ": unsupported preset '" + preset + "'");
}

const std::initializer_list<const char*> kRunKeys = {
    "tol",         "max_iterations",   "snapshots",        "probes",          "pairs",
    "eps",         "taylor_eps",       "seed",             "n_paths",         "N",
    "ensembles",   "gap_times",        "bandwidth",        "stability_pairs", "expectation_paths",
    "ito_check",   "check_contraction", "max_contraction_iterations", "closed_form_tol",
    "spde_closed_form_tol", "zero_noise_tol", "strict", "dump_paths", "dump_trajectories",
    "theta",       "weak_tol",         "chaos_slope_band", "interp_order"};

// ---------------------------------------------------------------- checks

struct Checks {
  Json records = Json::object();
  bool pass = true;

  void record(const std::string& name, double value, double tol, bool ok, const char* relation) {
    records[name] = Json{{"value", value}, {"relation", relation}, {"tol", tol}, {"pass", ok}};
    pass = pass && ok;
  }
  void at_most(const std::string& name, double value, double tol) {
    record(name, value, tol, std::isfinite(value) && value <= tol, "<=");
  }
  void at_least(const std::string& name, double value, double tol) {
    record(name, value, tol, std::isfinite(value) && value >= tol, ">=");
  }
  void holds(const std::string& name, bool ok) {
    records[name] = Json{{"value", ok}, {"pass", ok}};
    pass = pass && ok;
  }
};

struct Context {
  const ExperimentConfig& config;
  const RunOptions& options;
  Checks checks;
  Json results = Json::object();
  std::set<std::string> warnings;

  const Json& run() const { return config.run; }
  template <class T>
  T param(const char* key, T fallback) const {
    return optional<T>(config.run, key, fallback, "run");
  }
  std::uint64_t seed() const { return options.seed.value_or(param<std::uint64_t>("seed", 1)); }
  bool artifacts() const { return !options.out.empty(); }
  std::filesystem::path file(const std::string& name) const { return options.out / name; }
};

std::vector<std::size_t> snapshot_indices(const TimeGrid& time, std::size_t count) {
  count = std::max<std::size_t>(1, std::min(count, time.n_t()));
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s <= count; ++s) idx.push_back(s * time.n_t() / count);
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

std::vector<std::size_t> time_indices(const TimeGrid& time, const std::vector<double>& times) {
  std::vector<std::size_t> idx;
  for (double t : times) {
    if (!(t >= 0.0) || t > time.T() + 1e-12) throw ConfigError("run: requested time outside [0, T]");
    idx.push_back(static_cast<std::size_t>(std::llround(t / time.dt())));
  }
  return idx;
}

Json series(const std::vector<double>& v) { return Json(v); }

// A perturbation of Y used for stability pairs: variance and mean shifts
// of Gaussian data, or a translate of the gridded density otherwise.
DensityField perturbed_initial(const ExperimentConfig& c, std::size_t q) {
  const double dm = 0.05 * static_cast<double>(q + 1) * (q % 2 ? 1.0 : -1.0);
  const double scale = 1.0 - 0.02 * static_cast<double>(q);
  if (!c.gaussians.empty()) {
    std::vector<double> v(c.grid.n(), 0.0);
    for (const auto& g : c.gaussians) {
      const auto d = gaussian_values(c.grid, g.mean + dm, g.std * scale, g.weight);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += d[i];
    }
    return DensityField(c.grid, std::move(v));
  }
  std::vector<double> v(c.grid.n());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = interpolate(c.grid, c.initial.view(), c.grid.x(i) - dm);
  return DensityField(c.grid, std::move(v));
}

// Gaussian data with every component's standard deviation scaled.
DensityField widened_initial(const ExperimentConfig& c, double scale) {
  if (c.gaussians.empty()) throw ConfigError("run.expectation_paths needs Gaussian or mixture initial data");
  std::vector<double> v(c.grid.n(), 0.0);
  for (const auto& g : c.gaussians) {
    const auto d = gaussian_values(c.grid, g.mean, g.std * scale, g.weight);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += d[i];
  }
  return DensityField(c.grid, std::move(v));
}

Json envelope_json(const StabilityEnvelope& env) {
  return Json{{"K", env.K},         {"K_max", env.K_max}, {"C_bar", env.C_bar}, {"kappa", env.kappa},
              {"base", env.base},   {"times", env.times}, {"ratios", env.ratios}};
}

// ---------------------------------------------------------------- solve

SolutionPath run_solve(Context& ctx) {
  const auto& c = ctx.config;
  const MildSolver solver(c.coefficients, HeatKernel(c.grid, c.coefficients.diffusion), c.time);
  PicardOptions po;
  po.tol = ctx.param("tol", 1e-8);
  po.max_iterations = ctx.param<std::size_t>("max_iterations", 200);
  const SolutionPath path = solver.solve(c.initial, po);

  const double m0 = mass(c.initial);
  double mass_drift = 0.0;
  double min_value = 0.0;
  for (const auto& s : path.states) {
    mass_drift = std::max(mass_drift, std::abs(mass(s) - m0));
    for (double v : s.values()) min_value = std::min(min_value, v);
  }
  auto& r = ctx.results["solve"];
  r["iterations"] = path.iterations;
  r["iterations_to_tol"] = path.iterations_to_tol;
  r["residual"] = path.residual;
  r["residual_history"] = series(path.residual_history);
  r["mass_initial"] = m0;
  r["mass_final"] = mass(path.final_state());
  r["min_value"] = min_value;
  const double weak = weak_residual(path, c.coefficients, test_dictionary(c.grid));
  r["weak_residual"] = weak;
  if (ctx.run().contains("weak_tol")) ctx.checks.at_most("solve.weak_residual", weak, ctx.param("weak_tol", 0.0));

  if (c.coefficients.potential.is_zero()) ctx.checks.at_most("solve.mass_drift", mass_drift, 1e-6);
  ctx.checks.at_least("solve.min_value", min_value, -kNegativityTolerance);
  if (ctx.param("check_contraction", false)) {
    ctx.checks.holds("solve.contraction_monotone_after_3", contraction_monotone(path.residual_history, 3));
    ctx.checks.at_most("solve.iterations_to_tol", static_cast<double>(path.iterations_to_tol),
                       static_cast<double>(ctx.param<std::size_t>("max_contraction_iterations", 30)));
  }
  const std::size_t pairs = ctx.param<std::size_t>("stability_pairs", 0);
  if (pairs > 0 && c.noise == NoiseKind::kNone) {
    std::vector<DensityField> Y1(pairs, c.initial), Y2;
    for (std::size_t q = 0; q < pairs; ++q) Y2.push_back(perturbed_initial(c, q));
    const StabilityEnvelope env = solution_stability(solver, Y1, Y2, std::max<std::size_t>(1, pairs / 2), po,
                                                     ctx.options.workers);
    r["stability"] = envelope_json(env);
    ctx.checks.at_most("solve.stability_K", env.K, env.K_max);
  }
  if (const auto exact = closed_form(c)) {
    double err = 0.0;
    for (std::size_t k = 0; k <= c.time.n_t(); ++k) {
      err = std::max(err, l1_distance(path.at(k), (*exact)(c.time.t(k), 0.0)));
    }
    r["l1_error_vs_closed_form"] = err;
    ctx.checks.at_most("solve.l1_error_vs_closed_form", err, ctx.param("closed_form_tol", 1e-4));
  }
  if (ctx.artifacts()) {
    std::vector<const SignedField*> snaps;
    for (std::size_t k : snapshot_indices(c.time, ctx.param<std::size_t>("snapshots", 10))) snaps.push_back(&path.at(k));
    write_snapshots(ctx.file("solve_snapshots.csv"), snaps);
  }
  return path;
}

// ---------------------------------------------------------------- sensitivity

void run_sensitivity(Context& ctx) {
  const auto& c = ctx.config;
  const MildSolver solver(c.coefficients, HeatKernel(c.grid, c.coefficients.diffusion), c.time);
  PicardOptions po;
  po.tol = std::min(ctx.param("tol", 1e-8), 1e-12);
  po.max_iterations = ctx.param<std::size_t>("max_iterations", 200);
  const SolutionPath phi = solver.solve(c.initial, po);
  const auto probes = ctx.param<std::vector<double>>("probes", {0.0});
  if (probes.empty()) throw ConfigError("run.probes must not be empty");
  for (double x : probes) {
    if (!c.grid.contains(x)) throw ConfigError("run.probes: probe outside the grid");
  }
  const std::size_t nt = c.time.n_t();
  const SensitivityKernel xi = solve_first_variation(solver, phi, probes, 1e-11, ctx.options.workers);
  auto& r = ctx.results["sensitivity"];
  r["picard_tol"] = po.tol;
  r["probes"] = probes;
  r["xi_iterations"] = xi.iterations;
  r["mollification_width"] = xi.mollification_width;
  std::vector<double> xi_mass;
  for (std::size_t p = 0; p < probes.size(); ++p) xi_mass.push_back(mass(xi.at(p, nt)));
  r["xi_final_mass"] = xi_mass;

  auto perturbed_final = [&](double eps, const std::vector<std::size_t>& which) {
    std::vector<double> y(c.initial.values());
    for (std::size_t p : which) {
      const auto d = mollified_delta(c.grid, probes[p]);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += eps * d[i];
    }
    return solver.solve(DensityField(c.grid, std::move(y)), po).final_state();
  };

  // Finite-difference consistency on probe 0.
  const auto eps = ctx.param<std::vector<double>>("eps", {1e-2, 1e-3});
  std::vector<double> fd_errors;
  for (double e : eps) {
    const SignedField fd = (perturbed_final(e, {0}) - phi.final_state()) * (1.0 / e);
    fd_errors.push_back(l1_distance(fd, xi.at(0, nt)));
  }
  r["fd_eps"] = eps;
  r["fd_errors"] = fd_errors;
  if (!fd_errors.empty()) ctx.checks.at_most("sensitivity.fd_error", fd_errors.back(), 5e-2);
  if (fd_errors.size() >= 2) {
    ctx.checks.at_most("sensitivity.fd_order_ratio", fd_errors.back() / fd_errors[fd_errors.size() - 2], 0.15);
  }

  const LinearizedPropagator propagator = build_propagator(phi, c.coefficients);
  const auto carried = propagator.forward(0, nt, xi.at(0, 0).view());
  const double prop_err = l1_distance(SignedField(c.grid, carried), xi.at(0, nt));
  r["propagator_vs_mild"] = prop_err;
  ctx.checks.at_most("sensitivity.propagator_vs_mild", prop_err, 1e-4);

  // Second variation: configured pairs plus (0, 0) for the Taylor test and
  // the reversed pairs for the symmetry test.
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  for (const auto& pr : ctx.param<std::vector<std::vector<std::size_t>>>("pairs", {})) {
    if (pr.size() != 2 || pr[0] >= probes.size() || pr[1] >= probes.size()) {
      throw ConfigError("run.pairs: each pair must hold two probe indices");
    }
    pairs.emplace_back(pr[0], pr[1]);
    pairs.emplace_back(pr[1], pr[0]);
  }
  const SecondVariation eta = solve_second_variation(phi, c.coefficients, xi, propagator, pairs, ctx.options.workers);
  double symmetry = 0.0;
  for (std::size_t q = 1; q + 1 < pairs.size(); q += 2) {
    for (std::size_t k = 0; k <= nt; ++k) symmetry = std::max(symmetry, sup_norm((eta.at(q, k) - eta.at(q + 1, k)).view()));
  }
  r["eta_symmetry"] = symmetry;
  ctx.checks.at_most("sensitivity.eta_symmetry", symmetry, 1e-6);
  if (c.coefficients.drift.is_measure_independent() && c.coefficients.potential.is_measure_independent()) {
    double sup = 0.0;
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      for (std::size_t k = 0; k <= nt; ++k) sup = std::max(sup, sup_norm(eta.at(q, k).view()));
    }
    r["eta_sup"] = sup;
    ctx.checks.at_most("sensitivity.eta_zero_for_linear", sup, 1e-10);
  } else {
    const auto taylor_eps = ctx.param<std::vector<double>>("taylor_eps", {std::pow(10.0, -1.5), 1e-2});
    std::vector<double> remainders;
    for (double e : taylor_eps) {
      const SignedField rem = perturbed_final(e, {0}) - phi.final_state() - xi.at(0, nt) * e - eta.at(0, nt) * (0.5 * e * e);
      remainders.push_back(l1_norm(rem));
    }
    r["taylor_eps"] = taylor_eps;
    r["taylor_remainders"] = remainders;
    if (remainders.size() >= 2) {
      ctx.checks.at_most("sensitivity.taylor_ratio", remainders.back() / remainders[remainders.size() - 2], 0.2);
    }
  }

  std::vector<DensityField> samples(phi.states.begin(), phi.states.end());
  const CoefficientBounds bounds = measure_bounds(c.coefficients.drift, c.coefficients.potential, samples);
  const FirstVariationBound fvb = fit_first_variation_bound(xi, bounds);
  r["first_variation_bound"] = Json{{"C", fvb.C}, {"rate", fvb.rate}, {"ok", fvb.ok}, {"times", fvb.times},
                                    {"norms", fvb.norms}};
  const PropagatorGrowth growth = fit_propagator_growth(propagator);
  r["propagator_growth"] = Json{{"C", growth.C}, {"c", growth.c}, {"lags", growth.lags}, {"norms", growth.norms}};

  if (ctx.artifacts()) {
    std::vector<const SignedField*> snaps;
    for (std::size_t k : snapshot_indices(c.time, ctx.param<std::size_t>("snapshots", 10))) snaps.push_back(&xi.at(0, k));
    write_snapshots(ctx.file("xi_probe0.csv"), snaps);
  }
}

// ---------------------------------------------------------------- spde

std::vector<PathSolution> spde_solve_all(const ExperimentConfig& c, const std::vector<BrownianPath>& paths,
                                         const SpdeOptions& so, std::size_t workers, const TimeGrid& time) {
  if (c.noise == NoiseKind::kConstantMatrix) {
    std::vector<PathSolution> out(paths.size());
    parallel_for(paths.size(), workers, [&](std::size_t p) {
      out[p] = solve_path_multi(c.initial, c.grid, time, c.coefficients, c.noise_matrix, paths[p], so);
    });
    return out;
  }
  const ComField field = c.field.value_or(ComField::constant(0.0));
  const SpdeSolver solver(c.grid, time, c.coefficients, field);
  return solver.solve_paths(c.initial, paths, so, workers);
}

void write_path_dump(const std::filesystem::path& file, const PathSolution& s, const std::vector<std::size_t>& idx) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "t,x,v,W\n";
  char line[128];
  for (std::size_t k : idx) {
    const SignedField& v = s.undressed.at(k);
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g,%.10g\n", s.time.t(k), v.grid().x(i), v[i], s.path(k));
      out << line;
    }
  }
}

SpdeOptions spde_options(const Context& ctx) {
  SpdeOptions so;
  so.strict = ctx.options.strict || ctx.param("strict", false);
  so.theta = ctx.param("theta", 0.5);
  const auto order = ctx.param<std::string>("interp_order", "cubic");
  if (order == "linear") {
    so.order = InterpOrder::kLinear;
  } else if (order != "cubic") {
    throw ConfigError("run.interp_order must be 'linear' or 'cubic'");
  }
  return so;
}

void run_spde(Context& ctx) {
  const auto& c = ctx.config;
  const SpdeOptions so = spde_options(ctx);
  const std::size_t n_paths = ctx.param<std::size_t>("n_paths", 5);
  const std::uint64_t seed = ctx.seed();
  const std::size_t dims = c.noise == NoiseKind::kConstantMatrix ? c.noise_matrix.size() : 1;
  std::vector<BrownianPath> paths;
  std::vector<std::uint64_t> seeds;
  for (std::size_t p = 0; p < n_paths; ++p) {
    seeds.push_back(seed + p);
    paths.push_back(BrownianPath::sample(seed + p, c.time, dims));
  }
  const auto solutions = spde_solve_all(c, paths, so, ctx.options.workers, c.time);

  auto& r = ctx.results["spde"];
  r["seeds"] = seeds;
  r["strict"] = so.strict;
  const double m0 = mass(c.initial);
  const double norm0 = l1_norm(c.initial);
  double mass_drift = 0.0;
  double norm_excess = -norm0;
  double min_value = 0.0;
  std::size_t inner = 0;
  std::vector<double> final_mass;
  for (const auto& s : solutions) {
    for (std::size_t k = 0; k <= c.time.n_t(); ++k) {
      mass_drift = std::max({mass_drift, std::abs(mass(s.undressed[k]) - m0), std::abs(mass(s.dressed[k]) - m0)});
      norm_excess = std::max(norm_excess, l1_norm(s.undressed[k]) - norm0);
      for (double v : s.undressed[k].values()) min_value = std::min(min_value, v);
    }
    final_mass.push_back(mass(s.final_state()));
    inner = std::max(inner, s.max_inner_iterations);
    ctx.warnings.insert(s.warnings.begin(), s.warnings.end());
  }
  r["final_mass"] = final_mass;
  r["max_inner_iterations"] = inner;
  ctx.checks.at_most("spde.mass_drift", mass_drift, 1e-5);
  ctx.checks.at_most("spde.norm_excess", norm_excess, 1e-5);
  ctx.checks.at_least("spde.min_value", min_value, -kNegativityTolerance);

  // Conditional closed form under constant noise.
  const bool constant_noise = c.noise == NoiseKind::kConstantMatrix ||
                              (c.noise == NoiseKind::kState1d && c.field->is_constant());
  const auto exact = closed_form(c);
  if (exact && (constant_noise || c.noise == NoiseKind::kNone)) {
    double err = 0.0;
    for (const auto& s : solutions) {
      for (std::size_t k = 0; k <= c.time.n_t(); ++k) {
        double shift = 0.0;
        if (c.noise == NoiseKind::kConstantMatrix) {
          for (std::size_t d = 0; d < dims; ++d) shift += c.noise_matrix[d] * s.path.values[d][k];
        } else if (c.noise == NoiseKind::kState1d) {
          shift = c.field->constant_value() * s.path(k);
        }
        err = std::max(err, l1_distance(s.undressed[k], (*exact)(c.time.t(k), shift)));
      }
    }
    r["l1_error_vs_closed_form"] = err;
    ctx.checks.at_most("spde.l1_error_vs_closed_form", err, ctx.param("spde_closed_form_tol", 1e-2));
  }
  if (c.noise == NoiseKind::kNone) {
    const SolutionPath mild = solve_mild(c.initial, c.coefficients, c.time, 1e-10);
    double d = 0.0;
    for (std::size_t k = 0; k <= c.time.n_t(); ++k) d = std::max(d, l1_distance(solutions[0].undressed[k], mild.at(k)));
    r["zero_noise_vs_mild"] = d;
    ctx.checks.at_most("spde.zero_noise_vs_mild", d, ctx.param("zero_noise_tol", 1e-3));
  }

  if (ctx.param("ito_check", false)) {
    if (c.noise != NoiseKind::kState1d) throw ConfigError("run.ito_check needs noise.type = state_1d");
    // Fine paths at 2 n_t; coarse paths are their restriction to even nodes.
    const TimeGrid fine(c.time.T(), 2 * c.time.n_t());
    const SpdeSolver coarse_solver(c.grid, c.time, c.coefficients, *c.field);
    const SpdeSolver fine_solver(c.grid, fine, c.coefficients, *c.field);
    std::vector<double> coarse_d(n_paths), fine_d(n_paths);
    parallel_for(n_paths, ctx.options.workers, [&](std::size_t p) {
      const BrownianPath f = BrownianPath::sample(seed + p, fine);
      std::vector<double> w(c.time.n_t() + 1);
      for (std::size_t k = 0; k <= c.time.n_t(); ++k) w[k] = f(2 * k);
      const BrownianPath g = BrownianPath::from_values(c.time, {w});
      coarse_d[p] = ito_stratonovich_check(coarse_solver, c.initial, g, so);
      fine_d[p] = ito_stratonovich_check(fine_solver, c.initial, f, so);
    });
    const double mc = std::accumulate(coarse_d.begin(), coarse_d.end(), 0.0) / static_cast<double>(n_paths);
    const double mf = std::accumulate(fine_d.begin(), fine_d.end(), 0.0) / static_cast<double>(n_paths);
    r["ito_distance"] = Json{{"n_t", c.time.n_t()}, {"mean", mc}, {"per_path", coarse_d}};
    r["ito_distance_refined"] = Json{{"n_t", fine.n_t()}, {"mean", mf}, {"per_path", fine_d}};
    ctx.checks.at_most("spde.ito_distance", mc, 2e-2);
    ctx.checks.at_least("spde.ito_refinement_ratio", mc / mf, 1.4);
  }

  const std::size_t pairs = ctx.param<std::size_t>("stability_pairs", 0);
  if (pairs > 0 && c.noise == NoiseKind::kState1d) {
    const SpdeSolver solver(c.grid, c.time, c.coefficients, *c.field);
    std::vector<DensityField> Y1(pairs, c.initial), Y2;
    std::vector<DensityField> samples{c.initial};
    for (std::size_t q = 0; q < pairs; ++q) {
      Y2.push_back(perturbed_initial(c, q));
      samples.push_back(Y2.back());
    }
    const CoefficientBounds bounds = measure_bounds(c.coefficients.drift, c.coefficients.potential, samples);
    const double base = stability_rate_base(bounds, c.time.T(), l1_norm(c.initial));
    const StabilityEnvelope env = path_stability(solver, Y1, Y2, paths, base, so, ctx.options.workers);
    r["path_stability"] = envelope_json(env);
    ctx.checks.at_most("spde.path_stability_K", env.K, env.K_max);
  }

  const std::size_t exp_paths = ctx.param<std::size_t>("expectation_paths", 0);
  if (exp_paths > 0) {
    if (c.noise != NoiseKind::kState1d) throw ConfigError("run.expectation_paths needs state_1d noise");
    const SpdeSolver solver(c.grid, c.time, c.coefficients, *c.field);
    const DensityField Y2 = widened_initial(c, 1.2);
    const auto a = expectation_stability(solver, c.initial, Y2, exp_paths, seed, so, ctx.options.workers);
    const auto b = expectation_stability(solver, c.initial, Y2, 2 * exp_paths, seed, so, ctx.options.workers);
    const double rel = std::abs(a.C - b.C) / std::abs(b.C);
    r["expectation_stability"] = Json{{"C", a.C}, {"C_doubled", b.C}, {"n_paths", a.n_paths}, {"times", a.times},
                                      {"ratios", a.ratios}, {"ratios_doubled", b.ratios}};
    ctx.checks.at_most("spde.expectation_C_relative_change", rel, 0.1);
  }

  if (ctx.artifacts() && ctx.param("dump_paths", true)) {
    const auto idx = snapshot_indices(c.time, ctx.param<std::size_t>("snapshots", 10));
    for (std::size_t p = 0; p < solutions.size(); ++p) {
      write_path_dump(ctx.file("path_" + std::to_string(seeds[p]) + ".csv"), solutions[p], idx);
    }
  }
}

// ---------------------------------------------------------------- particles

void run_particles(Context& ctx) {
  const auto& c = ctx.config;
  ComField field = ComField::constant(0.0);
  if (c.noise == NoiseKind::kState1d) {
    field = *c.field;
  } else if (c.noise == NoiseKind::kConstantMatrix) {
    if (c.noise_matrix.size() != 1) throw ConfigError("particles: constant_matrix noise must have one column");
    field = ComField::constant(c.noise_matrix[0]);
  }
  const SpdeOptions so = spde_options(ctx);
  const SpdeSolver solver(c.grid, c.time, c.coefficients, field);
  const auto Ns = ctx.param<std::vector<std::size_t>>("N", {1000, 3000});
  const std::size_t ensembles = ctx.param<std::size_t>("ensembles", 3);
  const auto idx = time_indices(c.time, ctx.param<std::vector<double>>("gap_times", {c.time.T()}));
  const double bandwidth = ctx.param("bandwidth", 0.0);
  const std::uint64_t seed = ctx.seed();
  if (Ns.empty() || ensembles == 0) throw ConfigError("run.N and run.ensembles must be non-empty");

  // gaps[e][n][time]
  std::vector<std::vector<std::vector<double>>> gaps(ensembles);
  std::vector<std::size_t> reflections(ensembles * Ns.size(), 0);
  std::vector<std::vector<std::string>> warns(ensembles);
  for (std::size_t e = 0; e < ensembles; ++e) {
    const BrownianPath path = BrownianPath::sample(seed + e, c.time);
    const PathSolution spde = solver.solve_path(c.initial, path, so);
    for (std::size_t n = 0; n < Ns.size(); ++n) {
      const ParticleEnsemble ens = simulate(Ns[n], c.initial, c.coefficients, field, path,
                                            seed * 7919 + 1000003 * e + n, ctx.options.workers);
      gaps[e].push_back(chaos_gap(spde, ens, idx, bandwidth));
      reflections[e * Ns.size() + n] = ens.reflections;
      ctx.warnings.insert(ens.warnings.begin(), ens.warnings.end());
      if (ctx.artifacts() && ctx.param("dump_trajectories", false) && e == 0 && n == 0) {
        std::ofstream out(ctx.file("trajectories.csv"));
        out << "t,particle,x\n";
        char line[96];
        for (std::size_t k = 0; k <= c.time.n_t(); ++k) {
          for (std::size_t i = 0; i < ens.N; ++i) {
            std::snprintf(line, sizeof line, "%.10g,%zu,%.10g\n", c.time.t(k), i, ens.positions[k][i]);
            out << line;
          }
        }
      }
    }
  }
  // Mean gap at the last requested time, per N.
  std::vector<double> mean(Ns.size(), 0.0);
  for (std::size_t n = 0; n < Ns.size(); ++n) {
    for (std::size_t e = 0; e < ensembles; ++e) mean[n] += gaps[e][n].back();
    mean[n] /= static_cast<double>(ensembles);
  }
  auto& r = ctx.results["particles"];
  r["N"] = Ns;
  r["ensembles"] = ensembles;
  r["gap_time_indices"] = idx;
  r["gaps"] = gaps;
  r["mean_gap"] = mean;
  r["reflections"] = reflections;
  bool decreasing = true;
  for (std::size_t n = 1; n < Ns.size(); ++n) decreasing = decreasing && mean[n] < mean[n - 1];
  if (Ns.size() >= 2) ctx.checks.holds("particles.mean_gap_strictly_decreasing", decreasing);
  if (Ns.size() >= 3) {
    std::vector<double> nd(Ns.begin(), Ns.end());
    const double slope = loglog_slope(nd, mean);
    r["loglog_slope"] = slope;
    const auto band = ctx.param<std::vector<double>>("chaos_slope_band", {-0.6, -0.2});
    if (band.size() != 2) throw ConfigError("run.chaos_slope_band must hold two numbers");
    ctx.checks.record("particles.loglog_slope", slope, band[1], slope >= band[0] && slope <= band[1], "in band");
    ctx.checks.records["particles.loglog_slope"]["band"] = band;
  }
}

}  // namespace

// ---------------------------------------------------------------- public

ExperimentConfig parse_config(const Json& doc) {
  allow_keys(doc, {"name", "grid", "time", "coefficients", "initial", "noise", "run", "output"}, "config");
  ExperimentConfig c;
  c.raw = doc;
  c.name = optional<std::string>(doc, "name", "experiment", "config");
  c.output = optional<std::string>(doc, "output", "", "config");

  const Json& g = doc.contains("grid") ? doc.at("grid") : throw ConfigError("config: missing key 'grid'");
  allow_keys(g, {"x_min", "x_max", "n"}, "grid");
  try {
    c.grid = Grid1D(required<double>(g, "x_min", "grid"), required<double>(g, "x_max", "grid"),
                    required<std::size_t>(g, "n", "grid"));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }

  const Json& t = doc.contains("time") ? doc.at("time") : throw ConfigError("config: missing key 'time'");
  allow_keys(t, {"T", "n_t"}, "time");
  try {
    c.time = TimeGrid(required<double>(t, "T", "time"), required<std::size_t>(t, "n_t", "time"));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("time: ") + e.what());
  }

  const Json co = optional<Json>(doc, "coefficients", Json::object(), "config");
  allow_keys(co, {"diffusion", "drift", "potential"}, "coefficients");
  c.coefficients = Coefficients{
      parse_diffusion(optional<Json>(co, "diffusion", Json{{"preset", "constant"}, {"value", 1.0}}, "coefficients")),
      parse_drift(optional<Json>(co, "drift", Json{{"preset", "none"}}, "coefficients"), c.grid),
      parse_potential(optional<Json>(co, "potential", Json{{"preset", "none"}}, "coefficients"))};
  if (!c.coefficients.diffusion.is_constant() && c.grid.n() > 1201) {
    throw ConfigError("coefficients.diffusion: variable diffusion needs grid.n <= 1201 (dense kernel)");
  }

  const Json& in = doc.contains("initial") ? doc.at("initial") : throw ConfigError("config: missing key 'initial'");
  const auto preset = required<std::string>(in, "preset", "initial");
  if (preset == "gaussian") {
    allow_keys(in, {"preset", "mean", "std"}, "initial");
    c.gaussians.push_back({1.0, required<double>(in, "mean", "initial"),
                           positive(required<double>(in, "std", "initial"), "initial.std")});
  } else if (preset == "mixture") {
    allow_keys(in, {"preset", "components"}, "initial");
    const auto comps = required<Json>(in, "components", "initial");
    if (!comps.is_array() || comps.empty()) throw ConfigError("initial.components must be a non-empty array");
    for (const auto& comp : comps) {
      allow_keys(comp, {"weight", "mean", "std"}, "initial.components[]");
      c.gaussians.push_back({positive(required<double>(comp, "weight", "initial.components[]"), "weight"),
                             required<double>(comp, "mean", "initial.components[]"),
                             positive(required<double>(comp, "std", "initial.components[]"), "std")});
    }
  } else if (preset == "mollified_delta") {
    allow_keys(in, {"preset", "x"}, "initial");
    const double x = required<double>(in, "x", "initial");
    if (!c.grid.contains(x)) throw ConfigError("initial.x lies outside the grid");
    c.initial = mollified_delta(c.grid, x);
  } else {
    throw ConfigError("initial: unsupported preset '" + preset + "'");
  }
  if (!c.gaussians.empty()) {
    std::vector<double> v(c.grid.n(), 0.0);
    for (const auto& comp : c.gaussians) {
      const auto d = gaussian_values(c.grid, comp.mean, comp.std, comp.weight);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += d[i];
    }
    c.initial = DensityField(c.grid, std::move(v));
  }
  const DensityField samples[] = {c.initial};
  c.coefficients.drift.validate_on_domain(c.grid, samples);

  const Json noise = optional<Json>(doc, "noise", Json{{"type", "none"}}, "config");
  require_object(noise, "noise");
  const auto type = required<std::string>(noise, "type", "noise");
  if (type == "none") {
    allow_keys(noise, {"type"}, "noise");
  } else if (type == "state_1d") {
    c.noise = NoiseKind::kState1d;
    c.field = parse_field(noise, c.grid);
  } else if (type == "constant_matrix") {
    allow_keys(noise, {"type", "values"}, "noise");
    c.noise = NoiseKind::kConstantMatrix;
    c.noise_matrix = required<std::vector<double>>(noise, "values", "noise");
    if (c.noise_matrix.empty()) throw ConfigError("noise.values must not be empty");
  } else {
    throw ConfigError("noise: unsupported type '" + type + "'");
  }
  if (c.noise != NoiseKind::kNone && !c.coefficients.potential.is_zero()) {
    throw ConfigError("noise: potential terms are not supported with common noise");
  }

  c.run = optional<Json>(doc, "run", Json::object(), "config");
  allow_keys(c.run, kRunKeys, "run");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

std::optional<std::function<DensityField(double, double)>> closed_form(const ExperimentConfig& c) {
  if (c.gaussians.empty() || !c.coefficients.diffusion.is_constant()) return std::nullopt;
  const double a = c.coefficients.diffusion.constant_value();
  const auto& drift = c.coefficients.drift;
  const auto& potential = c.coefficients.potential;
  double decay = 0.0;
  if (!potential.is_zero()) {
    if (potential.name() != "constant") return std::nullopt;
    decay = -potential.value(0.0, 0.0, {});
  }
  const Grid1D grid = c.grid;
  const auto comps = c.gaussians;
  if (drift.is_zero() || drift.name() == "constant") {
    const double v = drift.is_zero() ? 0.0 : drift.value(0.0, 0.0, {});
    return [=](double t, double shift) {
      std::vector<double> out(grid.n(), 0.0);
      for (const auto& g : comps) {
        const auto d = gaussian_values(grid, g.mean + v * t + shift, std::sqrt(g.std * g.std + a * t),
                                       g.weight * std::exp(-decay * t));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
      }
      return DensityField(grid, std::move(out), t);
    };
  }
  if (drift.name() == "mean_reversion" && comps.size() == 1 && decay == 0.0) {
    // b = -k (x - m): the mean is preserved and the variance relaxes to a / (2k).
    const double k = -drift.value(0.0, 1.0, std::vector<double>{0.0});
    const auto g = comps[0];
    return [=](double t, double shift) {
      const double eq = a / (2.0 * k);
      const double var = eq + (g.std * g.std - eq) * std::exp(-2.0 * k * t);
      return gaussian_density(grid, g.mean + shift, std::sqrt(var), g.weight).with_time(t);
    };
  }
  return std::nullopt;
}

void write_snapshots(const std::filesystem::path& file, const std::vector<const SignedField*>& states) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "t,x,value\n";
  char line[96];
  for (const SignedField* s : states) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g\n", s->time(), s->grid().x(i), (*s)[i]);
      out << line;
    }
  }
}

Json versions() {
  return Json{{"mvs", "1.0.0"},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"fftw", std::string(fftw_version)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

RunResult run_experiment(const std::string& command, const ExperimentConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (!options.out.empty()) std::filesystem::create_directories(options.out);
  Context ctx{config, options, {}, Json::object(), {}};
  if (command == "solve") {
    run_solve(ctx);
  } else if (command == "sensitivity") {
    run_sensitivity(ctx);
  } else if (command == "spde") {
    run_spde(ctx);
  } else if (command == "particles") {
    run_particles(ctx);
  } else if (command == "validate") {
    if (config.noise == NoiseKind::kNone) {
      run_solve(ctx);
      if (config.run.contains("probes")) run_sensitivity(ctx);
    } else {
      run_spde(ctx);
    }
    if (config.run.contains("N")) run_particles(ctx);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  RunResult result;
  result.pass = ctx.checks.pass;
  Json& s = result.summary;
  s["command"] = command;
  s["name"] = config.name;
  s["status"] = "ok";
  s["pass"] = result.pass;
  s["seed"] = ctx.seed();
  s["checks"] = ctx.checks.records;
  s["results"] = ctx.results;
  s["warnings"] = Json(std::vector<std::string>(ctx.warnings.begin(), ctx.warnings.end()));
  s["config"] = config.raw;
  s["versions"] = versions();
  s["timing"] = Json{{"seconds", seconds}};
  return result;
}

}  // namespace mvs
