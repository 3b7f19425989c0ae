#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pda {

// Sentinel for "no usable answer". Never counted as a vote.
inline constexpr std::string_view kUnclear = "unclear";

/// Lowercase, trim, strip surrounding punctuation, drop leading articles
/// (a/an/the) and collapse internal whitespace. Idempotent; empty input maps
/// to "unclear".
std::string normalize_answer(std::string_view raw);

/// Strip conversational lead-ins ("The answer is:", "Final answer -") and
/// keep the first non-empty line, then normalize.
std::string extract_short_answer(std::string_view raw);

std::size_t word_count(std::string_view text);

// The closed label set of a structured task. Labels are normalized on
// construction and their order is the tie-break order.
class CandidateSet {
 public:
  CandidateSet() = default;
  /// Throws std::invalid_argument if empty or if two labels normalize to
  /// the same string.
  explicit CandidateSet(const std::vector<std::string>& labels);

  /// Distinct non-sentinel votes in first-appearance order; used for
  /// open-vocabulary tasks where no closed set exists.
  static CandidateSet from_votes(std::span<const std::string> votes);

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::optional<std::size_t> index_of(std::string_view label) const;
  bool contains(std::string_view label) const { return index_of(label).has_value(); }

 private:
  std::vector<std::string> labels_;
};

/// Exact match first, then unique whole-word containment in either
/// direction. Ambiguous containment yields nullopt.
std::optional<std::string> map_to_candidates(std::string_view answer,
                                             const CandidateSet& candidates);

struct VoteTally {
  // One score per candidate label, in candidate order.
  std::vector<std::pair<std::string, double>> scores;
  double total_weight = 0.0;
  // Votes that were the sentinel or not a member of the candidate set.
  std::size_t excluded = 0;

  double score(std::string_view label) const;
  /// Highest score minus the runner-up (the top score when only one label).
  double margin() const;
};

void to_json(nlohmann::json& j, const VoteTally& tally);
void from_json(const nlohmann::json& j, VoteTally& tally);

struct WeightedLabel {
  std::string label;
  double weight = 1.0;
};

/// E(y): number of votes equal to each candidate.
VoteTally evidence_scores(std::span<const std::string> votes, const CandidateSet& candidates);
VoteTally weighted_scores(std::span<const WeightedLabel> votes, const CandidateSet& candidates);

/// Argmax of a tally; ties go to the earlier candidate. Returns the sentinel
/// when every vote was excluded.
std::string argmax_label(const VoteTally& tally);

std::string majority_vote(std::span<const std::string> votes, const CandidateSet& candidates);
std::string weighted_vote(std::span<const WeightedLabel> votes, const CandidateSet& candidates);

/// Match the answer against the paraphrased option wording (or the original
/// wording), then return the original option at the same position.
std::optional<std::string> map_pv_option(std::string_view answer,
                                         const std::vector<std::string>& item_options,
                                         const std::vector<std::string>& original_options);

struct EvidencePair {
  int sub_index = 0;
  std::string question;
  std::string raw_answer;
  std::string answer;  // normalized
};

// The (atomic question, answer) pairs gathered for one paraphrase.
struct EvidenceSet {
  int paraphrase_index = 0;
  std::vector<EvidencePair> pairs;
};

void to_json(nlohmann::json& j, const EvidencePair& pair);
void from_json(const nlohmann::json& j, EvidencePair& pair);
void to_json(nlohmann::json& j, const EvidenceSet& set);
void from_json(const nlohmann::json& j, EvidenceSet& set);

}  // namespace pda
