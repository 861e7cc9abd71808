#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "distill/gaussian_lab.hpp"
#include "distill/neural_lab.hpp"

namespace distill {

enum class LabKind { gaussian, neural };

std::string_view to_string(LabKind k);

/// Invalid configuration; `key_path` names the offending entry (e.g. "run.lr").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : std::runtime_error(key_path.empty() ? message : key_path + ": " + message), key_path_(std::move(key_path)) {}

  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

/// One experiment: the lab to run, its fully resolved parameters and where to write.
/// Only the block matching `lab` is meaningful.
struct ExperimentConfig {
  LabKind lab = LabKind::gaussian;
  std::string output_dir;
  GaussianRunConfig gaussian;
  NeuralRunConfig neural;

  std::uint64_t seed() const { return lab == LabKind::gaussian ? gaussian.seed : neural.seed; }
  void set_seed(std::uint64_t seed);
  std::string method_name() const;
  void validate() const;
};

/// Parses and validates; unknown keys and type errors raise ConfigError with the key path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field, including defaults, so that parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& c);

/// Applies "a.b.c=value". The value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& j, std::string_view assignment);
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& assignments);

}  // namespace distill
