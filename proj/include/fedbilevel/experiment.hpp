#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedbilevel/types.hpp"

namespace fedbilevel {

/// Schema violation in an experiment config. field() is the dotted path of
/// the offending entry, e.g. "schedule.R".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A parsed config. The document is kept as canonical JSON text with every
/// default filled in, so that equal resolved parameters hash equally.
struct ExperimentConfig {
  std::string canonical;
};

ExperimentConfig parse_config(const std::string& jsonText);
ExperimentConfig load_config(const std::string& path);

struct RunArtifact {
  std::string name;
  std::string csv;
  std::string manifest;
};

struct RunOptions {
  /// Overrides method.workers when set.
  std::optional<std::size_t> workers;
};

/// Executes every run the config describes (one, or one per sweep entry).
/// Throws ConfigError for schema problems and DivergenceError when a run
/// blows up.
std::vector<RunArtifact> run_experiment(const ExperimentConfig& config,
                                        const RunOptions& options = {});

/// Writes <dir>/<name>.csv and <dir>/<name>.manifest.json for each artifact
/// and returns the paths written.
std::vector<std::string> write_artifacts(const ExperimentConfig& config,
                                         const std::vector<RunArtifact>& runs);

/// Dry run: resolves schedules and reports eta, gamma_l, gamma_g, theta,
/// clamps and which bound regimes apply. Throws ConfigError on failure.
std::string validate_experiment(const ExperimentConfig& config);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);

std::string metrics_csv_header();
std::string two_loop_csv_header();

/// Exit codes of the command-line runner.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;

}  // namespace fedbilevel
