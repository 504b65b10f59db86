// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "echo/cells.hpp"
#include "echo/tasks.hpp"
#include "echo/training.hpp"

namespace echo::cli {

inline constexpr int kConfigSchemaVersion = 1;

/// Everything a command needs, flattened into one record. Each field has a
/// config-file key of the same name (see config_keys()).
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string task = "distractor";
  Variant model = Variant::echo;
  TrainConfig train = TrainConfig::distractor_defaults();
  std::size_t hidden_size = 64;
  std::size_t embed_dim = 16;
  double forget_bias = 1.0;
  AttentionScoring scoring = AttentionScoring::additive;
  DistractorSpec distractor;
  ListOpsSpec listops;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::uint64_t data_seed = 7;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "results";
  std::string data_dir;  // empty: <output_dir>/data/<task>

  /// Model hyperparameters for `variant` on a dataset with the given sizes.
  ModelConfig model_config(Variant variant, std::size_t vocab_size, std::size_t num_classes) const;
  std::filesystem::path data_path() const;
  std::filesystem::path task_path() const;
  std::filesystem::path run_path(Variant variant, std::uint64_t seed) const;
  void validate() const;

  bool operator==(const ExperimentConfig&) const;
};

/// Built-in defaults for a task; listops uses its own training defaults.
ExperimentConfig defaults_for(const std::string& task);

/// Shrinks dataset sizes and epoch budgets so a full ablation grid runs in
/// minutes on one CPU core.
void apply_desk_scale(ExperimentConfig& cfg);

/// All recognised keys, in file order.
const std::vector<std::string>& config_keys();

/// Sets one key from its text form. Throws ConfigError on an unknown key
/// or a malformed value.
void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_key(const ExperimentConfig& cfg, const std::string& key);

/// Parses "key = value" lines; '#' starts a comment. schema_version must be
/// present and match. Unknown or repeated keys are errors.
std::map<std::string, std::string> parse_config_text(std::istream& in);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Writes every key, schema_version first. parse_config_text + set_key
/// restore an equal config.
void write_config(std::ostream& out, const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Layers: task defaults, then the desk-scale preset, then the file, then
/// flags, then `env_output_dir` (if non-empty) unless output_dir came from a
/// flag.
ExperimentConfig resolve_config(const std::map<std::string, std::string>& file_values,
                                const std::map<std::string, std::string>& flag_values,
                                bool desk_scale, const std::string& env_output_dir);

}  // namespace echo::cli
