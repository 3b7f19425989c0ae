#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "pda/harness.hpp"
#include "pda/synthetic_backend.hpp"

using namespace pda;

namespace {

// Enumerates all 2^n correct/wrong patterns.
double brute_force_majority(double q, int n) {
  double total = 0.0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    int correct = __builtin_popcount(mask);
    if (2 * correct > n) total += std::pow(q, correct) * std::pow(1.0 - q, n - correct);
  }
  return total;
}

std::vector<DatasetItem> parse(const std::string& text, DatasetSchema schema) {
  std::istringstream in(text);
  return parse_dataset(in, schema);
}

std::string dataset_error(const std::string& text, DatasetSchema schema) {
  try {
    parse(text, schema);
  } catch (const DatasetError& e) {
    return e.what();
  }
  return {};
}

SyntheticBackend synthetic(double q, std::uint64_t seed = 5) {
  SyntheticVlmConfig c;
  c.candidate_answers = {"cat", "dog"};
  c.correct_label = "cat";
  c.q_clean = q;
  c.q_adv = q;
  c.seed = seed;
  return SyntheticBackend(c);
}

std::vector<Query> animal_queries(int count) {
  std::vector<Query> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(Query{"a" + std::to_string(i), "img/" + std::to_string(i), "Which animal is it?",
                        StructuredTask{CandidateSet({"cat", "dog"})}, {"cat"}, i % 2 == 0});
  }
  return out;
}

DecisionRecord scored(const std::string& final_label, std::vector<std::string> gold) {
  DecisionRecord r;
  r.final_label = final_label;
  r.gold = std::move(gold);
  return r;
}

}  // namespace

TEST_CASE("dataset parsing") {
  auto items = parse(
      "{\"id\": 7, \"image\": \"a.png\", \"question\": \"Q?\", \"answers\": [\"x\"], \"split\": \"adversarial\"}\n\n"
      "{\"id\": \"b\", \"image\": \"b.png\", \"question\": \"R?\"}\n",
      DatasetSchema::vqa);
  REQUIRE(items.size() == 2);
  CHECK(items[0].id == "7");
  CHECK(items[0].adversarial);
  CHECK(items[1].gold.empty());

  auto cls = parse(R"({"id": "c", "image": "c.png", "question": "Q", "candidates": ["Cat", "dog"], "gold": "cat"})",
                   DatasetSchema::classification);
  auto q = to_query(cls[0]);
  REQUIRE(q.candidates());
  CHECK(q.candidates()->labels() == std::vector<std::string>{"cat", "dog"});

  auto cap = parse(R"({"id": "k", "image": "k.png", "short_caption": "A cat."})", DatasetSchema::caption);
  CHECK(to_query(cap[0]).is_caption());
}

TEST_CASE("dataset errors name the line and schema") {
  CHECK(dataset_error("{\"id\": \"a\", \"image\": \"a\", \"question\": \"q\"}\nnot json", DatasetSchema::vqa) ==
        "line 2: invalid JSON");
  CHECK(dataset_error(R"({"id": "a", "question": "q"})", DatasetSchema::vqa) ==
        "line 1: missing field \"image\" (schema vqa)");
  auto dup = "{\"id\": \"a\", \"image\": \"a\", \"question\": \"q\"}\n{\"id\": \"a\", \"image\": \"b\", \"question\": \"r\"}";
  CHECK(dataset_error(dup, DatasetSchema::vqa).find("line 2: duplicate id") == 0);
  CHECK(dataset_error(R"({"id": "a", "image": "a", "question": "q", "candidates": ["x"]})",
                      DatasetSchema::classification)
            .find("at least two") != std::string::npos);
  CHECK(dataset_error(R"({"id": "a", "image": "a", "question": "q", "candidates": ["x", "y"], "gold": "z"})",
                      DatasetSchema::classification)
            .find("not one of the candidates") != std::string::npos);
  CHECK(dataset_error(R"({"id": "a", "image": "a", "question": "q", "split": "test"})", DatasetSchema::vqa)
            .find("split") != std::string::npos);
  CHECK(dataset_error(R"({"id": "a", "image": "a"})", DatasetSchema::caption).find("short_caption") !=
        std::string::npos);
  CHECK_THROWS_AS(load_dataset("/nonexistent.jsonl", DatasetSchema::vqa), DatasetError);
  CHECK_THROWS_AS(parse_dataset_schema("coco"), ConfigError);
}

TEST_CASE("scoring") {
  CHECK(score_record(scored("2", {"2", "2", "two"}), ScoringMode::exact) == 1.0);
  CHECK(score_record(scored("two", {"2", "2", "two"}), ScoringMode::exact) == 0.0);
  CHECK(score_record(scored("umbrella", {"umbrella", "An umbrella", "parasol"}), ScoringMode::exact) == 1.0);
  CHECK(score_record(scored("umbrella", {"umbrella", "umbrella", "an umbrella", "parasol"}), ScoringMode::vqa_soft) ==
        1.0);
  CHECK(*score_record(scored("parasol", {"umbrella", "umbrella", "parasol"}), ScoringMode::vqa_soft) ==
        doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(score_record(scored("x", {}), ScoringMode::exact).has_value());
  auto failed = scored("x", {"x"});
  failed.status = RecordStatus::failed;
  CHECK_FALSE(score_record(failed, ScoringMode::exact).has_value());
  auto cap = scored("x", {"x"});
  cap.task = TaskKind::caption;
  CHECK_FALSE(score_record(cap, ScoringMode::exact).has_value());
  CHECK(parse_scoring_mode("vqa_soft") == ScoringMode::vqa_soft);
}

TEST_CASE("majority oracle") {
  CHECK(binomial_majority_oracle(0.7, 5) == doctest::Approx(0.83692).epsilon(1e-9));
  CHECK(binomial_majority_oracle(0.7, 1) == doctest::Approx(0.7));
  CHECK(binomial_majority_oracle(1.0, 9) == 1.0);
  CHECK(binomial_majority_oracle(0.0, 9) == 0.0);
  for (int n : {1, 3, 5, 7, 9, 11, 15}) {
    CHECK(binomial_majority_oracle(0.5, n) == doctest::Approx(0.5));
    for (double q : {0.1, 0.3, 0.6, 0.7, 0.8, 0.95}) {
      CAPTURE(n);
      CAPTURE(q);
      CHECK(binomial_majority_oracle(q, n) == doctest::Approx(brute_force_majority(q, n)).epsilon(1e-12));
      CHECK(binomial_majority_oracle(q, n) + binomial_majority_oracle(1.0 - q, n) == doctest::Approx(1.0));
    }
  }
  CHECK_THROWS_AS(binomial_majority_oracle(0.7, 4), std::invalid_argument);
  CHECK_THROWS_AS(binomial_majority_oracle(1.5, 3), std::invalid_argument);
}

TEST_CASE("smoothing simulation stays near the oracle") {
  auto row = simulate_smoothing(0.7, 5, 2000, 11);
  CHECK(row.oracle == doctest::Approx(0.83692).epsilon(1e-6));
  CHECK(row.delta() < 4 * row.std_error + 1e-9);
  auto single = simulate_smoothing(0.7, 1, 2000, 11);
  CHECK(std::abs(single.accuracy - 0.7) < 4 * std::sqrt(0.21 / 2000));
  CHECK_THROWS(simulate_smoothing(0.7, 3, 0, 1));
}

TEST_CASE("metrics conservation") {
  auto backend = synthetic(0.7);
  auto queries = animal_queries(12);
  queries.push_back(Query{"nogold", "img/x", "Which?", StructuredTask{CandidateSet({"cat", "dog"})}, {}, false});
  auto config = VariantConfig::defaults(Variant::pv);
  config.n_paraphrases = 3;
  EvalOptions options;
  options.pipeline = [](const Query& q, const VariantConfig& c, const AgentBackends& b) {
    if (q.id == "a3") throw std::runtime_error("injected");
    return run_pda(q, c, b);
  };
  auto result = evaluate(queries, config, AgentBackends::uniform(backend), options);
  const auto& m = result.metrics;
  CHECK(m.n_items == 13);
  CHECK(m.failure_count == 1);
  CHECK(m.unscored == 1);
  CHECK(m.correct + static_cast<double>(m.wrong) + m.failure_count + m.unscored == doctest::Approx(m.n_items));
  CHECK(m.accuracy == doctest::Approx(m.correct / m.n_scored));
  CHECK(result.records[3].status == RecordStatus::failed);
  CHECK(result.records[3].error == "injected");
  CHECK(m.mean_calls_per_item.at("answering/vlm") == doctest::Approx(36.0 / 13.0));
  CHECK(m.budget_violations == 0);
}

TEST_CASE("budget violations surface in the metrics") {
  auto backend = synthetic(0.7);
  auto config = VariantConfig::defaults(Variant::pv);
  config.n_paraphrases = 3;
  EvalOptions options;
  options.pipeline = [](const Query& q, const VariantConfig& c, const AgentBackends& b) {
    auto r = run_pda(q, c, b);
    r.ledger.add({StageTag::answering, ModelKind::vlm});
    return r;
  };
  auto result = evaluate(animal_queries(2), config, AgentBackends::uniform(backend), options);
  CHECK(result.metrics.budget_violations == 2);
  CHECK(result.records[0].budget_violation.find("expected 3, actual 4") != std::string::npos);
}

TEST_CASE("parallel and serial evaluation agree") {
  auto backend = synthetic(0.6);
  auto queries = animal_queries(24);
  for (auto v : {Variant::full, Variant::rjv, Variant::rda, Variant::pv}) {
    auto config = VariantConfig::defaults(v);
    config.n_paraphrases = 3;
    auto serial = evaluate_serial(queries, config, AgentBackends::uniform(backend));
    for (int threads : {1, 2, 4}) {
      auto parallel = evaluate(queries, config, AgentBackends::uniform(backend), EvalOptions{threads, ScoringMode::exact, {}});
      CHECK(deterministic_view(parallel.metrics) == deterministic_view(serial.metrics));
      for (std::size_t i = 0; i < queries.size(); ++i) {
        CHECK(deterministic_view(parallel.records[i]) == deterministic_view(serial.records[i]));
      }
    }
  }
}

TEST_CASE("preconditions are checked before any call") {
  auto backend = synthetic(0.6);
  auto queries = animal_queries(3);
  queries.push_back(Query{"open", "img/o", "What?", OpenFormTask{}, {}, false});
  CHECK_THROWS_AS(evaluate(queries, VariantConfig::defaults(Variant::pv), AgentBackends::uniform(backend)), ConfigError);
  CHECK(backend.ledger_snapshot().total() == 0);
  CHECK_THROWS_AS(evaluate(animal_queries(1), VariantConfig::defaults(Variant::pv), AgentBackends::uniform(backend),
                           EvalOptions{0, ScoringMode::exact, {}}),
                  ConfigError);
}

TEST_CASE("empty run") {
  auto backend = synthetic(0.6);
  auto result = evaluate({}, VariantConfig::defaults(Variant::pv), AgentBackends::uniform(backend));
  CHECK(result.records.empty());
  CHECK(result.metrics == RunMetrics{});
}

TEST_CASE("persist and reload a run") {
  auto backend = synthetic(0.6);
  auto config = VariantConfig::defaults(Variant::rda);
  config.n_paraphrases = 3;
  auto result = evaluate(animal_queries(4), config, AgentBackends::uniform(backend));
  auto dir = std::filesystem::temp_directory_path() / "pda_persist_test";
  std::filesystem::remove_all(dir);
  nlohmann::json cfg_json = config;
  auto manifest = persist_run(dir, cfg_json, {{"victim_vlm", "synthetic"}}, result.records, result.metrics);
  CHECK(manifest.config_hash.rfind("fnv1a64:", 0) == 0);
  CHECK(manifest.config_hash.size() == 8 + 16);
  CHECK(manifest.prompt_versions.count("paraphrase_semantic") == 1);

  auto loaded = load_run(dir);
  CHECK(loaded.manifest == manifest);
  REQUIRE(loaded.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(to_json(loaded.records[i]) == to_json(result.records[i]));
  CHECK(compute_metrics(loaded.records) == result.metrics);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_run(dir));
  CHECK(config_hash(cfg_json) == manifest.config_hash);
  CHECK(config_hash(nlohmann::json{{"a", 1}}) != config_hash(nlohmann::json{{"a", 2}}));
}

TEST_CASE("ablation grid") {
  auto backend = synthetic(0.7);
  auto queries = animal_queries(6);
  queries.push_back(Query{"open", "img/o", "What?", OpenFormTask{}, {"cat"}, false});
  auto cells = ablate_k(queries, VariantConfig::defaults(Variant::pv), {Variant::pv, Variant::rda}, {1, 3},
                        AgentBackends::uniform(backend), {}, 0.7);
  REQUIRE(cells.size() == 4);
  CHECK_FALSE(cells[0].error.empty());  // pv cannot take the open-form item
  CHECK(cells[2].error.empty());
  CHECK(cells[2].metrics.n_items == 7);
  REQUIRE(cells[3].oracle.has_value());
  CHECK(*cells[3].oracle == doctest::Approx(binomial_majority_oracle(0.7, 3)));
  auto j = to_json(cells);
  CHECK(j.size() == 4);
  CHECK(j[0]["variant"] == "pv");
}
