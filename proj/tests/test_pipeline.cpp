#include <doctest.h>

#include "pda/pipeline.hpp"
#include "pda/synthetic_backend.hpp"
#include "support.hpp"

using namespace pda;
using pda::testing::QueueBackend;

namespace {

SyntheticBackend make_synthetic(double q = 0.7, std::uint64_t seed = 3) {
  SyntheticVlmConfig c;
  c.candidate_answers = {"cat", "dog"};
  c.correct_label = "cat";
  c.q_clean = q;
  c.q_adv = q;
  c.seed = seed;
  return SyntheticBackend(c);
}

Query animal_query(const std::string& id = "q1", const std::string& image = "img/1.png") {
  return Query{id, image, "What animal is this?", StructuredTask{CandidateSet({"cat", "dog"})}, {"cat"}, true};
}

Query open_query() { return Query{"o1", "img/o.png", "What is the cat doing?", OpenFormTask{}, {"sleeping"}, false}; }

Query caption(const std::string& text) {
  return Query{"c1", "img/c.png", "", OpenFormTask{text, "A detailed description."}, {}, false};
}

VariantConfig cfg(Variant v, int n, int k = 3) {
  auto c = VariantConfig::defaults(v);
  c.n_paraphrases = n;
  c.k_atomic = k;
  return c;
}

// Calls per stage written out from the variant definitions:
// paraphrase | answering | decomposition + judging | aggregation.
std::array<std::uint64_t, 4> oracle_budget(Variant v, std::uint64_t n, std::uint64_t k) {
  switch (v) {
    case Variant::full: return {1, n * k, n * k + n, 1};
    case Variant::rjv: return {1, n, n, 0};
    case Variant::rda: return {1, n, 0, 1};
    case Variant::pv: return {1, n, 0, 0};
  }
  return {};
}

std::array<std::uint64_t, 4> observed(const CallLedger& l) {
  return {l.count(StageTag::paraphrase, ModelKind::llm), l.count(StageTag::answering, ModelKind::vlm),
          l.count(StageTag::decomposition, ModelKind::llm) + l.count(StageTag::judging, ModelKind::llm),
          l.count(StageTag::aggregation, ModelKind::llm)};
}

}  // namespace

TEST_CASE("variant config") {
  CHECK(parse_variant("rjv") == Variant::rjv);
  CHECK_THROWS_AS(parse_variant("fast"), ConfigError);
  CHECK_THROWS_AS(cfg(Variant::full, 5, 6).validate(), ConfigError);
  CHECK_NOTHROW(cfg(Variant::pv, 5, 9).validate());
  CHECK_THROWS_AS(cfg(Variant::pv, 0).validate(), ConfigError);
  auto cap = VariantConfig::defaults(Variant::full, true);
  CHECK(cap.n_paraphrases == 2);
  CHECK(cap.k_atomic == 5);
  nlohmann::json j = cfg(Variant::rda, 4, 2);
  auto back = j.get<VariantConfig>();
  CHECK(back.variant == Variant::rda);
  CHECK(back.n_paraphrases == 4);
  CHECK(back.require_rationale);
}

TEST_CASE("every variant spends exactly its budget") {
  auto backend = make_synthetic();
  auto roles = AgentBackends::uniform(backend);
  for (auto v : {Variant::full, Variant::rjv, Variant::rda, Variant::pv}) {
    for (int n : {1, 2, 3, 5, 7}) {
      for (int k : {1, 2, 3, 4, 5}) {
        if (v != Variant::full && k > 1) continue;
        CAPTURE(to_string(v));
        CAPTURE(n);
        CAPTURE(k);
        auto r = run_pda(animal_query(), cfg(v, n, k), roles);
        REQUIRE(r.status == RecordStatus::ok);
        CHECK(observed(r.ledger) == oracle_budget(v, n, k));
        CHECK(r.ledger.contract_view() == expected_budget(v, n, k));
        CHECK_FALSE(verify_budget(r).has_value());
        CHECK(r.per_paraphrase_answers.size() == static_cast<std::size_t>(n));
      }
    }
  }
}

TEST_CASE("smallest full run") {
  auto backend = make_synthetic();
  auto r = run_pda(animal_query(), cfg(Variant::full, 1, 1), AgentBackends::uniform(backend));
  CHECK(budget_row(r.ledger) == "1 | 1 | 2 | 1");
  CHECK(budget_row(expected_budget(Variant::full, 5, 3)) == "1 | 15 | 20 | 1");
  CHECK(budget_row(expected_budget(Variant::rjv, 5, 3)) == "1 | 5 | 5 | 0");
}

TEST_CASE("budget violations are reported per key") {
  auto backend = make_synthetic();
  auto r = run_pda(animal_query(), cfg(Variant::full, 5, 3), AgentBackends::uniform(backend));
  r.ledger.add({StageTag::answering, ModelKind::vlm});
  auto v = verify_budget(r);
  REQUIRE(v.has_value());
  CHECK(std::string(v->what()) == "budget violation for q1: (answering/vlm, expected 15, actual 16)");
  REQUIRE(v->offenses().size() == 1);

  // retries never count against the contract
  auto retried = run_pda(animal_query(), cfg(Variant::full, 5, 3), AgentBackends::uniform(backend));
  retried.ledger.add({StageTag::decomposition, ModelKind::llm, true}, 4);
  CHECK_FALSE(verify_budget(retried).has_value());

  auto rjv = run_pda(animal_query(), cfg(Variant::rjv, 5), AgentBackends::uniform(backend));
  rjv.ledger.add({StageTag::aggregation, ModelKind::llm});
  auto rv = verify_budget(rjv);
  REQUIRE(rv.has_value());
  CHECK(std::string(rv->what()).find("(aggregation/llm, expected 0, actual 1)") != std::string::npos);
}

TEST_CASE("ledgers are per query even on a shared backend") {
  auto backend = make_synthetic();
  auto roles = AgentBackends::uniform(backend);
  auto a = run_pda(animal_query("a"), cfg(Variant::pv, 3), roles);
  auto b = run_pda(animal_query("b"), cfg(Variant::pv, 3), roles);
  CHECK(a.ledger == b.ledger);
  CHECK(backend.ledger_snapshot().total() == a.ledger.total() + b.ledger.total());
}

TEST_CASE("pv with a perfect model is unanimous") {
  auto backend = make_synthetic(1.0);
  auto r = run_pda(animal_query(), cfg(Variant::pv, 5), AgentBackends::uniform(backend));
  CHECK(r.final_label == "cat");
  CHECK(r.tally.score("cat") == 5.0);
  CHECK(r.tally.margin() == 5.0);
  CHECK(std::holds_alternative<LogicalParaphraseSet>(r.paraphrases));
}

TEST_CASE("rjv and rda agree with a plain vote when weights are equal") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto backend = make_synthetic(0.6, seed);
    auto roles = AgentBackends::uniform(backend);
    auto q = animal_query("s" + std::to_string(seed), "img/" + std::to_string(seed));
    auto rjv = run_pda(q, cfg(Variant::rjv, 5), roles);
    std::vector<std::string> labels;
    for (const auto& a : rjv.per_paraphrase_answers) {
      labels.push_back(a.label);
      CHECK(a.weight == doctest::Approx(0.9));
    }
    CHECK(rjv.final_label == majority_vote(labels, CandidateSet({"cat", "dog"})));

    auto rda = run_pda(q, cfg(Variant::rda, 5), roles);
    std::vector<std::string> rda_labels;
    for (const auto& a : rda.per_paraphrase_answers) rda_labels.push_back(a.label);
    CHECK(rda.final_label == majority_vote(rda_labels, CandidateSet({"cat", "dog"})));
  }
}

TEST_CASE("full on an open-form query answers with the global aggregate") {
  auto backend = make_synthetic();
  auto r = run_pda(open_query(), cfg(Variant::full, 3, 3), AgentBackends::uniform(backend));
  REQUIRE(r.status == RecordStatus::ok);
  CHECK(r.task == TaskKind::open_form);
  REQUIRE(r.global_summary.has_value());
  CHECK(r.final_label == *r.global_summary);
}

TEST_CASE("agent failure yields a failed record, or the direct answer on request") {
  auto victim = make_synthetic(1.0);
  QueueBackend broken({"not json", "still not json"});
  AgentBackends roles{broken, victim, victim, victim, victim};
  auto r = run_pda(animal_query(), cfg(Variant::rda, 3), roles);
  CHECK(r.status == RecordStatus::failed);
  CHECK(r.final_label == "unclear");
  CHECK(r.error.find("paraphrase") != std::string::npos);
  CHECK(r.error_raw == "still not json");
  CHECK(r.ledger.count(StageTag::paraphrase, ModelKind::llm, true) == 1);

  QueueBackend broken_again({"x", "y"});
  AgentBackends roles2{broken_again, victim, victim, victim, victim};
  auto with_fallback = cfg(Variant::rda, 3);
  with_fallback.fallback_undefended = true;
  auto f = run_pda(animal_query(), with_fallback, roles2);
  CHECK(f.status == RecordStatus::fallback);
  CHECK(f.final_label == "cat");
  CHECK(f.ledger.count(StageTag::answering, ModelKind::vlm) == 1);
}

TEST_CASE("preconditions") {
  auto backend = make_synthetic();
  auto roles = AgentBackends::uniform(backend);
  CHECK_THROWS_AS(run_pda(open_query(), cfg(Variant::pv, 3), roles), ConfigError);
  CHECK_THROWS_AS(run_pda(caption("A cat."), cfg(Variant::rjv, 3), roles), ConfigError);
  CHECK_THROWS_AS(run_pda(animal_query(), cfg(Variant::full, 3, 6), roles), ConfigError);
  CHECK_THROWS_AS(run_pda_full(animal_query(), cfg(Variant::pv, 3), roles), ConfigError);
  auto empty = animal_query();
  empty.text = "  ";
  CHECK_THROWS_AS(check_preconditions(empty, cfg(Variant::pv, 3)), ConfigError);
  CHECK(backend.ledger_snapshot().total() == 0);
}

TEST_CASE("caption pipeline") {
  const std::string text = "Two cats on a sofa.";
  SUBCASE("budget derived from the record") {
    auto backend = make_synthetic(1.0);
    auto r = run_pda(caption(text), VariantConfig::defaults(Variant::full, true), AgentBackends::uniform(backend));
    REQUIRE(r.status == RecordStatus::ok);
    CHECK(r.task == TaskKind::caption);
    CHECK(r.claims->subject_count == SubjectCount::two);
    CHECK(r.evidence.size() == 2);
    CHECK_FALSE(verify_budget(r).has_value());
    CHECK(r.ledger.count(StageTag::decomposition, ModelKind::llm) == 3);
    CHECK(r.ledger.count(StageTag::aggregation, ModelKind::llm) == 1);
    REQUIRE(r.verdict.has_value());
    if (!r.verdict->has_conflict) CHECK(r.final_label == text);
  }
  SUBCASE("a direct no allows the edit") {
    auto backend = make_synthetic(0.0);
    auto r = run_pda(caption(text), VariantConfig::defaults(Variant::full, true), AgentBackends::uniform(backend));
    REQUIRE(r.verdict.has_value());
    CHECK(r.verdict->has_conflict);
    CHECK(r.final_label == text + " (revised)");
  }
  SUBCASE("all probes unclear: no judge call, caption untouched") {
    auto llm = make_synthetic();
    QueueBackend mute(std::vector<std::string>(10, ""));
    AgentBackends roles{llm, llm, llm, llm, mute};
    auto r = run_pda(caption(text), VariantConfig::defaults(Variant::full, true), roles);
    REQUIRE(r.status == RecordStatus::ok);
    CHECK(r.ledger.count(StageTag::aggregation, ModelKind::llm) == 0);
    CHECK_FALSE(verify_budget(r).has_value());
    CHECK_FALSE(r.verdict->has_conflict);
    CHECK(r.final_label == text);
  }
}

TEST_CASE("records round-trip through JSON and re-runs are identical") {
  auto backend = make_synthetic();
  auto roles = AgentBackends::uniform(backend);
  for (auto v : {Variant::full, Variant::rjv, Variant::rda, Variant::pv}) {
    CAPTURE(to_string(v));
    auto r = run_pda(animal_query(), cfg(v, 3), roles);
    auto again = run_pda(animal_query(), cfg(v, 3), roles);
    CHECK(deterministic_view(r) == deterministic_view(again));
    auto back = record_from_json(to_json(r));
    CHECK(deterministic_view(back) == deterministic_view(r));
    CHECK(to_json(r).contains("timing_ms"));
    CHECK_FALSE(deterministic_view(r).contains("timing_ms"));
  }
  auto cap = run_pda(caption("A cat."), VariantConfig::defaults(Variant::full, true), roles);
  CHECK(deterministic_view(record_from_json(to_json(cap))) == deterministic_view(cap));
}

TEST_CASE("run_direct") {
  auto backend = make_synthetic(1.0);
  CHECK(run_direct(animal_query(), backend) == "cat");
  CHECK(run_direct(caption("A cat."), backend) == "A cat.");
}
