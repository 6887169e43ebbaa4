#pragma once

// Configuration-driven experiments behind the command-line tool.
//
// A config is a JSON object with the blocks grid, time, coefficients,
// initial, noise, run and (optionally) name and output. Unknown keys are
// rejected at every level. Every command returns a summary document with
// per-check {value, tol, pass} records; pass is the conjunction of all
// checks.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvs/characteristics.hpp"
#include "mvs/coefficients.hpp"
#include "mvs/core.hpp"

namespace mvs {

using Json = nlohmann::ordered_json;

enum class NoiseKind { kNone, kState1d, kConstantMatrix };

struct GaussianComponent {
  double weight;
  double mean;
  double std;
};

struct ExperimentConfig {
  std::string name;
  Grid1D grid{-1.0, 1.0, 2};
  TimeGrid time{1.0, 1};
  Coefficients coefficients{DiffusionMatrix::constant(1.0), InteractionDrift::none(), PotentialTerm::none()};
  DensityField initial{Grid1D{-1.0, 1.0, 2}, {0.0, 0.0}};
  /// Set when the initial condition is a Gaussian or a Gaussian mixture.
  std::vector<GaussianComponent> gaussians;
  NoiseKind noise = NoiseKind::kNone;
  std::optional<ComField> field;
  std::vector<double> noise_matrix;
  Json run = Json::object();
  std::string output;
  Json raw;
};

/// Throws ConfigError on any schema violation.
ExperimentConfig parse_config(const Json& document);
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path out;       // empty: no artifacts
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  bool strict = false;
};

struct RunResult {
  Json summary;
  bool pass = false;
};

/// Commands: solve, sensitivity, spde, particles, validate.
RunResult run_experiment(const std::string& command, const ExperimentConfig& config, const RunOptions& options);

/// Exact law at time t when one is known: Gaussian (mixture) data with
/// constant diffusion and drift none/constant/mean_reversion, potential
/// none/constant. `shift` translates the law (common-noise closed forms).
std::optional<std::function<DensityField(double t, double shift)>> closed_form(const ExperimentConfig& config);

/// Writes rows "t,x,value" for the given states.
void write_snapshots(const std::filesystem::path& file, const std::vector<const SignedField*>& states);

/// Library and dependency versions recorded in summaries.
Json versions();

}  // namespace mvs
