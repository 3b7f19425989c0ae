#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pda/harness.hpp"

namespace pda {

// Stable process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;  // item failures, budget violations, I/O
inline constexpr int kExitConfig = 2;   // invalid configuration or precondition

inline const std::vector<std::string> kAgentRoles{"paraphrase_agent", "decomposer", "aggregator", "judge",
                                                  "victim_vlm"};

struct RunConfig {
  VariantConfig variant;
  std::filesystem::path dataset;
  DatasetSchema schema = DatasetSchema::vqa;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  int fan_out = 1;
  ScoringMode scoring = ScoringMode::exact;
  // role (or "default") -> backend spec {"type": "http"|"replay"|"synthetic", ...}
  std::map<std::string, nlohmann::json> backends;

  /// Backend settings for a role: its own entry or "default". Throws
  /// ConfigError when neither exists.
  const nlohmann::json& backend_spec(const std::string& role) const;

  /// Serializable form for the manifest, with api keys removed.
  nlohmann::json to_manifest_json() const;
};

/// Replace ${NAME} in every string value with the environment variable.
/// Throws ConfigError for unset variables.
nlohmann::json interpolate_env(const nlohmann::json& value);

// Command-line values that override the config file.
struct RunOverrides {
  std::optional<std::string> variant;
  std::optional<int> n;
  std::optional<int> k;
  std::optional<std::string> intensity;
  std::optional<std::string> dataset;
  std::optional<std::string> schema;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> fan_out;
  bool fallback_undefended = false;
};

/// Builds the run configuration from an optional JSON config file plus
/// overrides. Relative paths in the file resolve against its directory.
RunConfig load_run_config(const std::optional<std::filesystem::path>& config_path, const RunOverrides& overrides);

using BackendFactory =
    std::function<std::unique_ptr<Backend>(const nlohmann::json& spec, const RunConfig& config,
                                           const std::vector<DatasetItem>& items)>;

/// Default factory for http, replay and synthetic specs.
std::unique_ptr<Backend> make_backend(const nlohmann::json& spec, const RunConfig& config,
                                      const std::vector<DatasetItem>& items);

// Seams for tests: a backend factory and the per-query pipeline.
struct RunHooks {
  BackendFactory make_backend;
  PipelineFn pipeline;
};

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err, const RunHooks& hooks = {});
int cmd_simulate(double q, const std::vector<int>& n_values, int trials, std::uint64_t seed, int fan_out,
                 std::ostream& out, std::ostream& err);
int cmd_budget(const std::string& variant, int n, int k, std::ostream& out, std::ostream& err);
int cmd_report(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);

/// Full command-line entry point (argv[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const RunHooks& hooks = {});

}  // namespace pda
