#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pda/pipeline.hpp"

namespace pda {

// ---- datasets ----

enum class DatasetSchema { vqa, classification, caption };
std::string_view to_string(DatasetSchema schema);
DatasetSchema parse_dataset_schema(std::string_view name);  // throws ConfigError

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetItem {
  std::string id;
  std::string image_ref;
  std::string question;
  std::optional<std::string> short_caption;
  std::optional<std::string> detailed_caption;
  std::vector<std::string> candidates;
  std::vector<std::string> gold;
  bool adversarial = false;  // split "adversarial" vs "clean"
};

/// Line-delimited JSON. Blank lines are skipped. Errors name the 1-based
/// line; duplicate ids are rejected.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& path, DatasetSchema schema);
std::vector<DatasetItem> parse_dataset(std::istream& in, DatasetSchema schema);

Query to_query(const DatasetItem& item);

// ---- evaluation ----

enum class ScoringMode { exact, vqa_soft };

using PipelineFn = std::function<DecisionRecord(const Query&, const VariantConfig&, const AgentBackends&)>;

struct EvalOptions {
  int fan_out = 1;  // worker threads over items
  ScoringMode scoring = ScoringMode::exact;
  PipelineFn pipeline;  // run_pda when empty
};

std::string_view to_string(ScoringMode mode);
ScoringMode parse_scoring_mode(std::string_view name);  // throws ConfigError

struct RunMetrics {
  std::size_t n_items = 0;
  std::size_t n_scored = 0;
  std::size_t failure_count = 0;
  std::size_t unscored = 0;        // no gold, or a caption (scored externally)
  double correct = 0.0;            // sum of per-item scores
  std::size_t wrong = 0;           // scored items with score 0
  double accuracy = 0.0;           // correct / n_scored
  double agreement_rate = 0.0;     // share of voted items whose paraphrase answers all agree
  double mean_vote_margin = 0.0;
  std::size_t budget_violations = 0;
  std::map<std::string, double> mean_calls_per_item;  // ledger key -> mean
  double mean_wall_ms = 0.0;

  bool operator==(const RunMetrics&) const = default;
};

void to_json(nlohmann::json& j, const RunMetrics& m);
void from_json(const nlohmann::json& j, RunMetrics& m);

/// Metrics with wall-clock time removed; equal across deterministic re-runs.
nlohmann::json deterministic_view(const RunMetrics& m);

/// Score of one record against its gold answers: exact match against the
/// most frequent gold answer, or min(matches / 3, 1) in vqa_soft mode.
/// nullopt for records that are not scored.
std::optional<double> score_record(const DecisionRecord& record, ScoringMode mode);

RunMetrics compute_metrics(const std::vector<DecisionRecord>& records, ScoringMode mode = ScoringMode::exact);

struct EvalResult {
  std::vector<DecisionRecord> records;  // in item order
  RunMetrics metrics;
};

/// Items run in parallel (OpenMP, fan_out threads). Preconditions are
/// checked for every item before any backend call; ConfigError propagates.
EvalResult evaluate(const std::vector<Query>& queries, const VariantConfig& config, const AgentBackends& backends,
                    const EvalOptions& options = {});

/// Single-threaded reference of evaluate().
EvalResult evaluate_serial(const std::vector<Query>& queries, const VariantConfig& config,
                           const AgentBackends& backends, const EvalOptions& options = {});

// ---- smoothing study ----

/// P(majority of n independent views is correct) with per-view accuracy q.
/// n must be odd.
double binomial_majority_oracle(double q, int n);

struct SimulationRow {
  double q = 0.0;
  int n = 0;
  int trials = 0;
  double accuracy = 0.0;
  double oracle = 0.0;
  double std_error = 0.0;
  double delta() const;
};

/// PV over `trials` two-candidate queries on the synthetic backend with
/// independent views of accuracy q.
SimulationRow simulate_smoothing(double q, int n, int trials, std::uint64_t seed, int fan_out = 1);

struct AblationCell {
  Variant variant = Variant::pv;
  int n = 0;
  RunMetrics metrics;
  std::optional<double> oracle;
  std::string error;
};

/// One evaluate() per (variant, n) cell. A failing cell records its error
/// and the grid continues.
std::vector<AblationCell> ablate_k(const std::vector<Query>& queries, const VariantConfig& base,
                                   const std::vector<Variant>& variants, const std::vector<int>& n_values,
                                   const AgentBackends& backends, const EvalOptions& options = {},
                                   std::optional<double> oracle_q = std::nullopt);
nlohmann::json to_json(const std::vector<AblationCell>& cells);

// ---- persistence ----

struct RunManifest {
  nlohmann::json config = nlohmann::json::object();
  std::string config_hash;
  std::map<std::string, std::string> prompt_versions;
  std::map<std::string, std::string> backend_ids;  // role -> backend id
  RunMetrics metrics;
  std::size_t n_items = 0;

  bool operator==(const RunManifest&) const = default;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

std::string config_hash(const nlohmann::json& config);

struct LoadedRun {
  RunManifest manifest;
  std::vector<DecisionRecord> records;
};

/// Writes <dir>/manifest.json and <dir>/records.jsonl.
RunManifest persist_run(const std::filesystem::path& dir, const nlohmann::json& config,
                        const std::map<std::string, std::string>& backend_ids,
                        const std::vector<DecisionRecord>& records, const RunMetrics& metrics);
LoadedRun load_run(const std::filesystem::path& dir);

}  // namespace pda
