#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pda/agents.hpp"
#include "pda/answerspace.hpp"
#include "pda/backend.hpp"
#include "pda/ledger.hpp"

namespace pda {

// Invalid configuration or a query that violates a variant's precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Variant { full, rjv, rda, pv };
std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);  // throws ConfigError

struct VariantConfig {
  Variant variant = Variant::full;
  int n_paraphrases = 5;
  int k_atomic = 3;
  ChangeIntensity change_intensity = ChangeIntensity::medium;
  bool require_rationale = false;  // implied by rjv/rda
  bool fallback_undefended = false;

  static VariantConfig defaults(Variant variant, bool captioning = false);

  /// Throws ConfigError for n or k below 1, or k above the decomposer's
  /// limit of 5 for the full variant.
  void validate() const;
};

void to_json(nlohmann::json& j, const VariantConfig& c);
void from_json(const nlohmann::json& j, VariantConfig& c);

struct StructuredTask {
  CandidateSet candidates;
};

struct OpenFormTask {
  std::optional<std::string> short_caption;
  std::optional<std::string> detailed_caption;
};

struct Query {
  std::string id;
  std::string image_ref;
  std::string text;
  std::variant<StructuredTask, OpenFormTask> task;
  std::vector<std::string> gold;
  bool adversarial_flag = false;  // read by the synthetic backend only

  const CandidateSet* candidates() const;
  bool is_caption() const;
};

// Backend per agent role. Several roles may share one backend.
struct AgentBackends {
  Backend& paraphrase_agent;
  Backend& decomposer;
  Backend& aggregator;
  Backend& judge;
  Backend& victim_vlm;

  static AgentBackends uniform(Backend& backend) { return {backend, backend, backend, backend, backend}; }
};

struct ParaphraseAnswer {
  int index = 0;  // 1-based
  std::string label;
  double weight = 1.0;
  std::string raw;
  std::string rationale;

  bool operator==(const ParaphraseAnswer&) const = default;
};

enum class RecordStatus { ok, failed, fallback };
std::string_view to_string(RecordStatus status);

enum class TaskKind { structured, open_form, caption };
std::string_view to_string(TaskKind kind);

struct DecisionRecord {
  std::string query_id;
  Variant variant = Variant::full;
  TaskKind task = TaskKind::structured;
  int n_paraphrases = 0;
  int k_atomic = 0;
  bool adversarial = false;

  std::variant<std::monostate, ParaphraseSet, LogicalParaphraseSet> paraphrases;
  std::optional<CaptionClaims> claims;
  std::vector<EvidenceSet> evidence;
  std::vector<ParaphraseAnswer> per_paraphrase_answers;

  std::string final_label;  // the caption for caption runs
  std::optional<CaptionVerdict> verdict;
  std::optional<std::string> global_summary;
  VoteTally tally;

  CallLedger ledger;
  std::map<std::string, double> timing_ms;  // excluded from equality checks

  RecordStatus status = RecordStatus::ok;
  std::string error;
  std::string error_raw;
  std::string budget_violation;

  std::vector<std::string> candidates;
  std::vector<std::string> gold;
};

nlohmann::json to_json(const DecisionRecord& r, bool with_timing = true);
DecisionRecord record_from_json(const nlohmann::json& j);

/// Everything that should be identical across re-runs: the record without
/// wall-clock timing.
nlohmann::json deterministic_view(const DecisionRecord& r);

// ---- variants ----

DecisionRecord run_pda_full(const Query& query, const VariantConfig& config, const AgentBackends& backends);
DecisionRecord run_pda_rjv(const Query& query, const VariantConfig& config, const AgentBackends& backends);
DecisionRecord run_pda_rda(const Query& query, const VariantConfig& config, const AgentBackends& backends);
DecisionRecord run_pda_pv(const Query& query, const VariantConfig& config, const AgentBackends& backends);
DecisionRecord run_caption_pipeline(const Query& query, const VariantConfig& config, const AgentBackends& backends);

/// Throws ConfigError when the query does not fit the variant (pv on an
/// open-form query, a caption query with anything but full).
void check_preconditions(const Query& query, const VariantConfig& config);

/// Dispatch on the variant and task. Agent and backend failures yield a
/// failed record (or, with fallback_undefended, the direct answer) rather
/// than an exception; ConfigError still propagates.
DecisionRecord run_pda(const Query& query, const VariantConfig& config, const AgentBackends& backends);

/// The undefended single query to the victim model.
std::string run_direct(const Query& query, Backend& victim_vlm);

// ---- budget contract ----

CallLedger expected_budget(Variant variant, int n, int k);

/// Budget of a caption run, derived from its own record: one claim
/// extraction plus one decomposition per round, one VLM call per probe and
/// one judge call when any probe produced usable evidence.
CallLedger expected_caption_budget(const DecisionRecord& record);

struct BudgetOffense {
  LedgerKey key;
  std::uint64_t expected = 0;
  std::uint64_t actual = 0;
};

class BudgetViolation : public std::runtime_error {
 public:
  BudgetViolation(std::string query_id, std::vector<BudgetOffense> offenses);
  const std::vector<BudgetOffense>& offenses() const { return offenses_; }

 private:
  std::vector<BudgetOffense> offenses_;
};

/// nullopt when the record's contract view (retry keys dropped) equals the
/// expected ledger.
std::optional<BudgetViolation> verify_budget(const DecisionRecord& record);

/// Table layout: paraphrase | answering | decomposition + judging | aggregation.
std::string budget_row(const CallLedger& ledger);

}  // namespace pda
