#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "distill/config.hpp"
#include "distill/diagnostics.hpp"

namespace distill {

/// Environment variable that replaces the default output root "runs".
inline constexpr const char* kOutputRootEnv = "DISTILL_OUTPUT_ROOT";

inline constexpr const char* kGaussianTrajectorySchema = "gaussian-trajectory/1";
inline constexpr const char* kNeuralTrajectorySchema = "neural-trajectory/1";
inline constexpr const char* kNormSchema = "neural-norms/1";
inline constexpr const char* kSamplesSchema = "samples/1";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfigError = 2, kExitDiverged = 3 };

std::filesystem::path output_root();

/// Absolute output_dir as is; a relative one (or the default "<lab>-<method>-seed<seed>")
/// below output_root().
std::filesystem::path resolve_output_dir(const ExperimentConfig& c);

/// Writes through a temporary sibling file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path resolved_config;
  std::filesystem::path trajectory;
  std::optional<std::filesystem::path> norms;
  std::optional<std::filesystem::path> samples;
  std::filesystem::path summary;
  std::filesystem::path timing;
  bool truncated = false;
  std::string truncation_reason;
  double final_divergence = 0.0;
};

/// Runs the configured lab and writes every artifact below `dir`.
RunArtifacts run_experiment(const ExperimentConfig& c, const std::filesystem::path& dir);

/// Rows "step,set,index,x_0..x_{d-1}" where set is p, q or r.
std::string samples_csv(const std::vector<SampleSnapshot>& snapshots, std::uint64_t seed);
std::vector<SampleSnapshot> read_samples_csv(std::istream& is);

nlohmann::json to_json(const EnsembleSummary& s);

struct EnsembleRequest {
  ExperimentConfig config;
  int seeds = 1;
  int jobs = 1;
  /// Overrides defining a second arm compared against the base config.
  std::vector<std::string> compare;
  /// Writes full per-seed artifacts below <dir>/<arm>/seed-<s>.
  bool per_seed_artifacts = true;
};

struct EnsembleOutcome {
  EnsembleSummary a;
  std::optional<EnsembleSummary> b;
  std::optional<EnsembleComparison> comparison;
  std::filesystem::path summary_path;
};

/// Seeds base..base+count-1 of one or two arms; writes ensemble.json below `dir`.
EnsembleOutcome run_ensemble_request(const EnsembleRequest& req, const std::filesystem::path& dir);

/// Final divergence of one seed without writing anything.
double final_divergence(const ExperimentConfig& c, std::uint64_t seed);

}  // namespace distill
