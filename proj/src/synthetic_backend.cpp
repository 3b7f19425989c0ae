#include "pda/synthetic_backend.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "pda/agents.hpp"
#include "pda/answerspace.hpp"
#include "pda/json_extract.hpp"

namespace pda {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const std::string& first_user_text(const ChatRequest& request) {
  for (const auto& m : request.messages) {
    if (m.role == Role::user) return m.content;
  }
  static const std::string empty;
  return empty;
}

// Value of a "- key: value" line.
std::string field(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line, prefix = "- " + key + ":";
  while (std::getline(in, line)) {
    auto t = collapse_whitespace(line);
    if (t.rfind(prefix, 0) == 0) return collapse_whitespace(std::string_view(t).substr(prefix.size()));
  }
  return {};
}

// Lines following a heading line, up to the next blank or "---" line.
std::string block_after(const std::string& text, const std::string& heading) {
  std::istringstream in(text);
  std::string line, out;
  bool inside = false;
  while (std::getline(in, line)) {
    auto t = collapse_whitespace(line);
    if (!inside) {
      inside = t == heading;
      continue;
    }
    if (t.empty() || t == "---") break;
    if (!out.empty()) out += '\n';
    out += line;
  }
  return out;
}

std::string plurality(const std::vector<std::string>& votes) {
  std::vector<std::string> labels;
  std::map<std::string, int> counts;
  for (const auto& v : votes) {
    if (v == kUnclear) continue;
    if (counts[v]++ == 0) labels.push_back(v);
  }
  std::string best(kUnclear);
  int top = 0;
  for (const auto& l : labels) {
    if (counts[l] > top) {
      top = counts[l];
      best = l;
    }
  }
  return best;
}

// Normalized answers on lines that start with `marker` followed by a
// number and a colon ("A2: yes", "Answer 3: cat").
std::vector<std::string> numbered_answers(const std::string& text, const std::string& marker) {
  std::vector<std::string> out;
  std::regex line_re("^" + marker + R"(\s*\d+:\s*(.*)$)");
  std::istringstream in(text);
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_match(line, m, line_re)) out.push_back(normalize_answer(m[1].str()));
  }
  return out;
}

int count_from(const std::string& text, int fallback) {
  std::smatch m;
  static const std::regex exact(R"(Generate exactly (\d+))");
  if (std::regex_search(text, m, exact)) return std::stoi(m[1].str());
  return fallback;
}

}  // namespace

void SyntheticVlmConfig::validate() const {
  if (candidate_answers.size() < 2) throw std::invalid_argument("synthetic VLM needs at least two candidates");
  CandidateSet set(candidate_answers);
  if (!correct_label.empty() && !set.contains(normalize_answer(correct_label))) {
    throw std::invalid_argument("correct label '" + correct_label + "' is not a candidate");
  }
  for (double q : {q_clean, q_adv}) {
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("synthetic accuracy must lie in [0,1]");
  }
}

std::string synthetic_answer(const SyntheticVlmConfig& config, bool adversarial, std::mt19937_64& rng,
                             const std::string& truth) {
  const double q = adversarial ? config.q_adv : config.q_clean;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto correct = normalize_answer(truth);
  if (unit(rng) < q) return correct;
  std::vector<std::string> wrong;
  for (const auto& c : config.candidate_answers) {
    auto label = normalize_answer(c);
    if (label != correct) wrong.push_back(std::move(label));
  }
  if (wrong.empty()) return correct;
  std::uniform_int_distribution<std::size_t> pick(0, wrong.size() - 1);
  return wrong[pick(rng)];
}

std::string synthetic_answer(const SyntheticVlmConfig& config, bool adversarial, std::mt19937_64& rng) {
  return synthetic_answer(config, adversarial, rng, config.correct_label);
}

SyntheticBackend::SyntheticBackend(SyntheticVlmConfig config, std::string id)
    : Backend(std::move(id), RetryPolicy{0, std::chrono::milliseconds{0}}), config_(std::move(config)) {
  config_.validate();
}

ChatResponse SyntheticBackend::send(const ChatRequest& request) {
  ChatResponse response;
  response.text = request.model_kind == ModelKind::vlm ? vlm_reply(request) : llm_reply(request);
  response.latency_ms = 1;
  return response;
}

std::string SyntheticBackend::vlm_reply(const ChatRequest& request) const {
  const auto image = request.image_ref().value_or("");
  // Randomness is a pure function of the request, so results do not depend
  // on call order or on how items are spread over threads.
  std::string key = config_.independence ? fingerprint(request).prompt_digest + "|" + image : image;
  std::mt19937_64 rng(splitmix64(config_.seed ^ fnv1a64(key)));

  auto truth_it = config_.truth_by_image.find(image);
  const std::string& truth = truth_it != config_.truth_by_image.end() ? truth_it->second : config_.correct_label;
  const bool adversarial = request.adversarial_hint;
  const auto& text = first_user_text(request);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double q = adversarial ? config_.q_adv : config_.q_clean;
  auto trimmed = collapse_whitespace(text);
  auto ends_with = [&](std::string_view suffix) {
    return trimmed.size() >= suffix.size() && trimmed.compare(trimmed.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(kYesNoSuffix)) return unit(rng) < q ? "yes" : "no";
  if (ends_with(kGenericCountSuffix)) return unit(rng) < q ? "one" : "two";
  if (trimmed.rfind("Describe the appearance", 0) == 0) return "plain appearance";

  auto label = synthetic_answer(config_, adversarial, rng, truth);
  if (request.agent == "answer_with_rationale") {
    return "Answer: " + label + "\nRationale: the visible evidence points to " + label + ".";
  }
  return label;
}

std::string SyntheticBackend::llm_reply(const ChatRequest& request) const {
  const auto& agent = request.agent;
  const auto& text = first_user_text(request);

  if (agent == "paraphrase_semantic") {
    int n = std::stoi(field(text, "num_candidates"));
    auto sentence = field(text, "input_sentence");
    json out{{"candidates", json::array()}};
    for (int i = 1; i <= n; ++i) out["candidates"].push_back(sentence + " [view " + std::to_string(i) + "]");
    return out.dump();
  }
  if (agent == "paraphrase_logical") {
    int n = count_from(text, std::stoi(field(text, "num_candidates")));
    auto options = json::parse(field(text, "options"));
    auto sentence = field(text, "input_sentence");
    json out{{"generated_questions", json::array()}};
    for (int i = 1; i <= n; ++i) {
      out["generated_questions"].push_back(
          {{"question", sentence + " [view " + std::to_string(i) + "]"}, {"options", options}});
    }
    return out.dump();
  }
  if (agent == "decompose_vqa") {
    int n = count_from(text, 3);
    static const std::regex input_re(R"(Input: \"([\s\S]*)\"\s*\nGenerate exactly)");
    std::smatch m;
    std::string question = std::regex_search(text, m, input_re) ? m[1].str() : std::string("the question");
    json out{{"sub_questions", json::array()}, {"answer_logic", "The answer is the label most sub-answers support."}};
    for (int i = 1; i <= n; ++i) {
      out["sub_questions"].push_back(
          {{"question", question + " (aspect " + std::to_string(i) + ")"}, {"answer_type", "phrase"}});
    }
    return out.dump();
  }
  if (agent == "check_sub_answer") {
    return json{{"answer", block_after(text, "Answer:")}, {"consistent", true}}.dump();
  }
  if (agent == "aggregate_vqa") {
    return plurality(numbered_answers(text, "A"));
  }
  if (agent == "judge_paraphrase") {
    return json{{"label", block_after(text, "Model answer:")}, {"confidence", 0.9}, {"rationale", "consistent with the image"}}
        .dump();
  }
  if (agent == "aggregate_global") {
    return json{{"answer", plurality(numbered_answers(text, "Answer "))}}.dump();
  }
  if (agent == "extract_claims") {
    auto caption = " " + normalize_answer(block_after(text, "---")) + " ";
    std::string count = "unknown";
    if (caption.find(" two ") != std::string::npos) {
      count = "two";
    } else if (caption.find(" a ") != std::string::npos || caption.find(" an ") != std::string::npos ||
               caption.find(" one ") != std::string::npos) {
      count = "one";
    }
    return json{{"subject_head", "object"}, {"subject_count", count}, {"key_object", "unknown"},
                {"relation", "unknown"}, {"scene", "unknown"}}
        .dump();
  }
  if (agent == "decompose_caption") {
    std::string count = "one";
    if (auto claims = extract_json_object(text)) {
      auto c = claims->value("subject_count", "unknown");
      if (c != "unknown") count = c;
    }
    return json{{"sub_questions",
                 {"How many main subjects are visible? " + std::string(kGenericCountSuffix),
                  "Is there exactly " + count + " main subject? " + std::string(kYesNoSuffix),
                  "Describe the appearance of the main subject. Answer in a short phrase."}}}
        .dump();
  }
  if (agent == "caption_judge") {
    auto caption = block_after(text, "---");
    auto answers = numbered_answers(text, "A");
    bool conflict = std::find(answers.begin(), answers.end(), "no") != answers.end();
    return json{{"has_conflict", conflict}, {"caption", conflict ? caption + " (revised)" : caption}}.dump();
  }
  return std::string(kUnclear);
}

}  // namespace pda
