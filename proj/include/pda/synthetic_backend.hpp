#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pda/backend.hpp"

namespace pda {

// A VLM that answers correctly with a fixed probability, and canned,
// well-formed replies for every LLM agent. Used for the smoothing simulation,
// budget checks and offline runs.
struct SyntheticVlmConfig {
  std::vector<std::string> candidate_answers;
  std::string correct_label;
  // Per-image ground truth; images not listed use correct_label.
  std::map<std::string, std::string> truth_by_image;
  double q_clean = 0.7;
  double q_adv = 0.3;
  std::uint64_t seed = 0;
  // When false every call about the same image returns the same answer, so
  // paraphrase errors are perfectly correlated.
  bool independence = true;

  /// Throws std::invalid_argument on fewer than two candidates, a correct
  /// label outside the candidates, or a probability outside [0,1].
  void validate() const;
};

/// Correct label with probability q (q_adv when adversarial), otherwise a
/// uniformly drawn wrong candidate.
std::string synthetic_answer(const SyntheticVlmConfig& config, bool adversarial,
                             std::mt19937_64& rng, const std::string& truth);
std::string synthetic_answer(const SyntheticVlmConfig& config, bool adversarial,
                             std::mt19937_64& rng);

class SyntheticBackend final : public Backend {
 public:
  explicit SyntheticBackend(SyntheticVlmConfig config, std::string id = "synthetic");

  const SyntheticVlmConfig& config() const { return config_; }

 protected:
  ChatResponse send(const ChatRequest& request) override;

 private:
  std::string vlm_reply(const ChatRequest& request) const;
  std::string llm_reply(const ChatRequest& request) const;

  SyntheticVlmConfig config_;
};

}  // namespace pda
