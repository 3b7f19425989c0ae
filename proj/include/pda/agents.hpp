#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pda/answerspace.hpp"
#include "pda/backend.hpp"

namespace pda {

// Raised when an agent reply is still malformed after the single reprompt.
// Carries the last raw reply for diagnostics.
class AgentError : public std::runtime_error {
 public:
  AgentError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class ParaphraseError : public AgentError {
 public:
  using AgentError::AgentError;
};
class DecompositionError : public AgentError {
 public:
  using AgentError::AgentError;
};
class ClaimError : public AgentError {
 public:
  using AgentError::AgentError;
};

enum class ChangeIntensity { low, medium, high };
std::string_view to_string(ChangeIntensity intensity);
ChangeIntensity parse_change_intensity(std::string_view name);

// Decoding temperatures per agent role.
inline constexpr double kParaphraseTemperature = 0.7;
inline constexpr double kDeterministicTemperature = 0.0;

inline constexpr std::string_view kGenericCountSuffix =
    "Answer exactly: 'one', 'two', 'many', 'none', or 'unclear'.";
inline constexpr std::string_view kYesNoSuffix = "Answer exactly: 'yes', 'no', or 'unclear'.";

struct ParaphraseSet {
  std::string original;
  std::vector<std::string> candidates;
  ChangeIntensity change_intensity = ChangeIntensity::medium;
};

struct LogicalItem {
  std::string question;
  std::vector<std::string> options;  // position j <-> original option j
};

struct LogicalParaphraseSet {
  std::string original_question;
  std::vector<std::string> original_options;
  std::vector<LogicalItem> items;
};

enum class AnswerType { yes_no, choice, phrase };
std::string_view to_string(AnswerType type);

struct AtomicQuestion {
  int sub_index = 0;  // 1-based, in decomposer order
  std::string text;
  AnswerType answer_type = AnswerType::phrase;
  std::vector<std::string> options;
};

struct AtomicQuestionSet {
  int paraphrase_index = 0;
  std::vector<AtomicQuestion> questions;
  std::string answer_logic;
};

enum class SubjectCount { one, two, many, unknown };
std::string_view to_string(SubjectCount count);
std::optional<SubjectCount> parse_subject_count(std::string_view name);

struct CaptionClaims {
  std::string subject_head = "unknown";
  SubjectCount subject_count = SubjectCount::unknown;
  std::string key_object = "unknown";
  std::string relation = "unknown";
  std::string scene = "unknown";

  bool operator==(const CaptionClaims&) const = default;
};

struct JudgedAnswer {
  int paraphrase_index = 0;
  std::string label;
  double weight = 1.0;
  std::string rationale;
};

struct CaptionVerdict {
  bool has_conflict = false;
  std::string caption;
  // What the judge model itself said; kept for auditing disagreements with
  // the deterministic gate.
  bool model_has_conflict = false;
  bool gate_allows_edit = false;
};

// ---- JSON ----
void to_json(nlohmann::json& j, const ParaphraseSet& v);
void from_json(const nlohmann::json& j, ParaphraseSet& v);
void to_json(nlohmann::json& j, const LogicalParaphraseSet& v);
void from_json(const nlohmann::json& j, LogicalParaphraseSet& v);
void to_json(nlohmann::json& j, const AtomicQuestionSet& v);
void from_json(const nlohmann::json& j, AtomicQuestionSet& v);
void to_json(nlohmann::json& j, const CaptionClaims& v);
void from_json(const nlohmann::json& j, CaptionClaims& v);
void to_json(nlohmann::json& j, const CaptionVerdict& v);
void from_json(const nlohmann::json& j, CaptionVerdict& v);

// ---- operations ----

ParaphraseSet paraphrase_semantic(std::string_view query_text, int n, ChangeIntensity intensity,
                                  Backend& backend);

LogicalParaphraseSet paraphrase_logical(std::string_view question,
                                        const std::vector<std::string>& options, int n,
                                        Backend& backend);

/// Sub-questions for one paraphrase. `requested` (clamped to 3..5) is the
/// count asked of the decomposer; replies with fewer are rejected.
AtomicQuestionSet decompose_vqa(std::string_view paraphrase_text, int paraphrase_index,
                                Backend& backend, int requested = 3);

CaptionClaims extract_caption_claims(std::string_view short_caption, Backend& backend);

/// `round`/`rounds` distinguish repeated verification passes over one caption.
AtomicQuestionSet decompose_caption_verify(const CaptionClaims& claims,
                                           std::string_view detailed_caption, Backend& backend,
                                           int round = 1, int rounds = 1);

/// Per-sub-answer consistency check against the earlier pairs. Returns the
/// checker's normalized answer, or the sentinel when it flags the answer as
/// inconsistent. An unreadable checker reply keeps the probe answer.
std::string check_sub_answer(std::string_view question, const std::vector<EvidencePair>& earlier,
                             std::string_view sub_question, std::string_view answer,
                             Backend& backend);

/// Short answer from a set of evidence pairs. Falls back to the sentinel
/// after one reprompt.
std::string aggregate_structured(std::string_view question, const EvidenceSet& evidence,
                                 Backend& backend, StageTag stage = StageTag::aggregation);

JudgedAnswer judge_paraphrase(std::string_view paraphrase_text, std::string_view vlm_answer,
                              std::string_view rationale, Backend& backend,
                              int paraphrase_index = 0);

struct AnswerTuple {
  std::string paraphrase;
  std::string answer;  // normalized
  std::string rationale;
};

/// One-shot review of every tuple. A malformed reply (or one that does not
/// land on a candidate when a closed set is given) falls back to the
/// majority over the tuple answers.
std::string aggregate_global(std::string_view question, const std::vector<AnswerTuple>& tuples,
                             Backend& backend, const CandidateSet* candidates = nullptr);

/// Deterministic confidence gate over the verification evidence: an edit is
/// allowed on any direct "no", or on two or more consistent answers naming
/// the same alternative subject count with no "no" against them.
bool caption_gate_allows_edit(const CaptionClaims& claims, const std::vector<EvidencePair>& evidence);

CaptionVerdict caption_judge(std::string_view short_caption, const CaptionClaims& claims,
                             const std::vector<EvidencePair>& evidence, Backend& backend);

// Shared rendering of evidence for the prompts: "Q1: ...\nA1: ...".
std::string render_evidence(const std::vector<EvidencePair>& pairs);

}  // namespace pda
