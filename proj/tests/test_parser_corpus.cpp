// Adversarial replies run through each agent parser. Every case states
// whether the first reply is accepted and what happens otherwise.
#include <doctest.h>

#include "pda/agents.hpp"
#include "support.hpp"

using namespace pda;
using pda::testing::QueueBackend;

namespace {

struct Case {
  const char* name;
  std::string reply;
  bool accepted;  // on the first attempt
};

// The good reply given after a reprompt.
const std::string kGoodParaphrase = R"({"candidates": ["x one", "x two"]})";

}  // namespace

TEST_CASE("paraphrase replies") {
  const std::vector<Case> cases{
      {"plain", R"({"candidates": ["a", "b"]})", true},
      {"fenced", "```json\n{\"candidates\": [\"a\", \"b\"]}\n```", true},
      {"prefixed prose", "Here you go:\n{\"candidates\": [\"a\", \"b\"]}", true},
      {"trailing prose", "{\"candidates\": [\"a\", \"b\"]}\nLet me know if you need more.", true},
      {"extra keys", R"({"note": "x", "candidates": ["a", "b"]})", true},
      {"truncated", R"({"candidates": ["a", "b")", false},
      {"too many", R"({"candidates": ["a", "b", "c"]})", false},
      {"too few", R"({"candidates": ["a"]})", false},
      {"wrong key", R"({"paraphrases": ["a", "b"]})", false},
      {"numbers", R"({"candidates": [1, 2]})", false},
      {"bare list", R"(["a", "b"])", false},
      {"single quotes", "{'candidates': ['a', 'b']}", false},
      {"empty reply", "", false},
      {"refusal", "I'm sorry, I can't help with that.", false},
      {"blank candidate", R"({"candidates": ["a", ""]})", false},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    QueueBackend b({c.reply, kGoodParaphrase});
    auto set = paraphrase_semantic("q", 2, ChangeIntensity::medium, b);
    CHECK(set.candidates.size() == 2);
    CHECK(b.requests().size() == (c.accepted ? 1u : 2u));
  }
}

TEST_CASE("decomposition replies") {
  auto q = [](const char* t, const char* type) {
    return nlohmann::json{{"question", t}, {"answer_type", type}};
  };
  nlohmann::json three = {q("a", "phrase"), q("b", "yes_no"), q("c", "phrase")};
  const std::string good = nlohmann::json{{"sub_questions", three}}.dump();
  const std::vector<Case> cases{
      {"plain", good, true},
      {"fenced", "```\n" + good + "\n```", true},
      {"yes-no spelling", nlohmann::json{{"sub_questions", {q("a", "Yes-No"), q("b", "phrase"), q("c", "phrase")}}}.dump(), true},
      {"choice with array", nlohmann::json{{"sub_questions", {{{"question", "a"}, {"answer_type", "choice"}, {"options", {"x", "y"}}}, q("b", "phrase"), q("c", "phrase")}}}.dump(), true},
      {"two only", nlohmann::json{{"sub_questions", {q("a", "phrase"), q("b", "phrase")}}}.dump(), false},
      {"six", nlohmann::json{{"sub_questions", {q("a", "phrase"), q("b", "phrase"), q("c", "phrase"), q("d", "phrase"), q("e", "phrase"), q("f", "phrase")}}}.dump(), false},
      {"bad type", nlohmann::json{{"sub_questions", {q("a", "number"), q("b", "phrase"), q("c", "phrase")}}}.dump(), false},
      {"strings not objects", R"({"sub_questions": ["a", "b", "c"]})", false},
      {"truncated", good.substr(0, good.size() - 3), false},
      {"missing text", nlohmann::json{{"sub_questions", {q("", "phrase"), q("b", "phrase"), q("c", "phrase")}}}.dump(), false},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    QueueBackend b({c.reply, good});
    CHECK(decompose_vqa("Q", 1, b).questions.size() == 3);
    CHECK(b.requests().size() == (c.accepted ? 1u : 2u));
  }
}

TEST_CASE("judge replies") {
  const std::vector<std::pair<std::string, double>> weights{
      {R"({"label": "cat", "confidence": 0.5, "rationale": "r"})", 0.5},
      {R"({"label": "cat", "confidence": -2})", 0.0},
      {R"({"label": "cat", "confidence": "0.25"})", 0.25},
      {R"({"label": "cat"})", 1.0},
      {"```json\n{\"label\": \"Cat.\", \"confidence\": 0.9}\n```", 0.9},
  };
  for (const auto& [reply, w] : weights) {
    CAPTURE(reply);
    QueueBackend b({reply});
    auto j = judge_paraphrase("q", "dog", "because", b);
    CHECK(j.label == "cat");
    CHECK(j.weight == doctest::Approx(w));
  }
  for (const std::string reply : {R"({"confidence": 0.3})", R"({"label": "cat", "confidence": "high"})",
                                  R"({"label": "cat", "confidence": [1]})", "cat, 0.9"}) {
    CAPTURE(reply);
    QueueBackend b({reply, reply});
    auto j = judge_paraphrase("q", "dog", "because", b);
    CHECK(j.label == "dog");
    CHECK(j.weight == 1.0);
    CHECK(b.requests().size() == 2);
  }
}

TEST_CASE("caption judge replies") {
  CaptionClaims claims;
  claims.subject_head = "dog";
  claims.subject_count = SubjectCount::two;
  std::vector<EvidencePair> contradiction{{1, "Are there exactly two dogs? " + std::string(kYesNoSuffix), "No", "no"}};
  const std::string cap = "Two dogs.";
  const std::vector<std::pair<std::string, std::string>> cases{
      {R"({"has_conflict": true, "caption": "One dog."})", "One dog."},
      {R"({"has_conflict": "true", "caption": "One dog."})", cap},
      {R"({"has_conflict": true})", cap},
      {R"({"has_conflict": true, "caption": "   "})", cap},
      {"has_conflict: true", cap},
  };
  for (const auto& [reply, expected] : cases) {
    CAPTURE(reply);
    QueueBackend b({reply, reply});
    CHECK(caption_judge(cap, claims, contradiction, b).caption == expected);
  }
}
