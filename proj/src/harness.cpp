#include "pda/harness.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pda/prompts.hpp"
#include "pda/synthetic_backend.hpp"

namespace pda {

using nlohmann::json;

// ---------------------------------------------------------------- metrics

std::string_view to_string(ScoringMode mode) { return mode == ScoringMode::exact ? "exact" : "vqa_soft"; }

ScoringMode parse_scoring_mode(std::string_view name) {
  if (name == "exact") return ScoringMode::exact;
  if (name == "vqa_soft") return ScoringMode::vqa_soft;
  throw ConfigError("unknown scoring mode '" + std::string(name) + "' (expected exact or vqa_soft)");
}

void to_json(json& j, const RunMetrics& m) {
  j = json{{"n_items", m.n_items},
           {"n_scored", m.n_scored},
           {"failure_count", m.failure_count},
           {"unscored", m.unscored},
           {"correct", m.correct},
           {"wrong", m.wrong},
           {"accuracy", m.accuracy},
           {"agreement_rate", m.agreement_rate},
           {"mean_vote_margin", m.mean_vote_margin},
           {"budget_violations", m.budget_violations},
           {"mean_calls_per_item", m.mean_calls_per_item},
           {"mean_wall_ms", m.mean_wall_ms}};
}

void from_json(const json& j, RunMetrics& m) {
  m.n_items = j.at("n_items").get<std::size_t>();
  m.n_scored = j.at("n_scored").get<std::size_t>();
  m.failure_count = j.at("failure_count").get<std::size_t>();
  m.unscored = j.at("unscored").get<std::size_t>();
  m.correct = j.at("correct").get<double>();
  m.wrong = j.at("wrong").get<std::size_t>();
  m.accuracy = j.at("accuracy").get<double>();
  m.agreement_rate = j.at("agreement_rate").get<double>();
  m.mean_vote_margin = j.at("mean_vote_margin").get<double>();
  m.budget_violations = j.at("budget_violations").get<std::size_t>();
  m.mean_calls_per_item = j.at("mean_calls_per_item").get<std::map<std::string, double>>();
  m.mean_wall_ms = j.at("mean_wall_ms").get<double>();
}

json deterministic_view(const RunMetrics& m) {
  json j = m;
  j.erase("mean_wall_ms");
  return j;
}

std::optional<double> score_record(const DecisionRecord& record, ScoringMode mode) {
  if (record.status == RecordStatus::failed || record.task == TaskKind::caption || record.gold.empty()) {
    return std::nullopt;
  }
  std::vector<std::string> gold;
  for (const auto& g : record.gold) gold.push_back(normalize_answer(g));
  const auto& final_label = record.final_label;
  if (mode == ScoringMode::vqa_soft) {
    auto matches = std::count(gold.begin(), gold.end(), final_label);
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
  }
  // most frequent gold answer; earlier answers win ties
  std::string best;
  long top = 0;
  for (const auto& g : gold) {
    auto c = std::count(gold.begin(), gold.end(), g);
    if (c > top) {
      top = c;
      best = g;
    }
  }
  return final_label == best ? 1.0 : 0.0;
}

RunMetrics compute_metrics(const std::vector<DecisionRecord>& records, ScoringMode mode) {
  RunMetrics m;
  m.n_items = records.size();
  std::size_t voted = 0, agreeing = 0;
  double margin_sum = 0.0, wall_sum = 0.0;
  std::map<std::string, std::uint64_t> calls;
  for (const auto& r : records) {
    for (const auto& [key, n] : r.ledger.counts()) calls[to_string(key)] += n;
    if (auto it = r.timing_ms.find("total"); it != r.timing_ms.end()) wall_sum += it->second;
    if (!r.budget_violation.empty()) ++m.budget_violations;

    if (r.status == RecordStatus::failed) {
      ++m.failure_count;
      continue;
    }
    if (auto s = score_record(r, mode)) {
      ++m.n_scored;
      m.correct += *s;
      if (*s == 0.0) ++m.wrong;
    } else {
      ++m.unscored;
    }
    if (r.status == RecordStatus::ok && !r.per_paraphrase_answers.empty()) {
      ++voted;
      const auto& first = r.per_paraphrase_answers.front().label;
      bool all_same = first != kUnclear;
      for (const auto& a : r.per_paraphrase_answers) all_same = all_same && a.label == first;
      if (all_same) ++agreeing;
      margin_sum += r.tally.margin();
    }
  }
  if (m.n_scored) m.accuracy = m.correct / static_cast<double>(m.n_scored);
  if (voted) {
    m.agreement_rate = static_cast<double>(agreeing) / static_cast<double>(voted);
    m.mean_vote_margin = margin_sum / static_cast<double>(voted);
  }
  if (m.n_items) {
    for (const auto& [key, n] : calls) {
      m.mean_calls_per_item[key] = static_cast<double>(n) / static_cast<double>(m.n_items);
    }
    m.mean_wall_ms = wall_sum / static_cast<double>(m.n_items);
  }
  return m;
}

// ---------------------------------------------------------------- evaluate

namespace {

DecisionRecord evaluate_one(const Query& query, const VariantConfig& config, const AgentBackends& backends,
                            const PipelineFn& pipeline) {
  auto start = std::chrono::steady_clock::now();
  DecisionRecord record;
  try {
    record = pipeline ? pipeline(query, config, backends) : run_pda(query, config, backends);
  } catch (const std::exception& e) {
    // anything escaping run_pda is still an item failure, never fatal
    record.query_id = query.id;
    record.variant = config.variant;
    record.n_paraphrases = config.n_paraphrases;
    record.k_atomic = config.k_atomic;
    record.gold = query.gold;
    record.status = RecordStatus::failed;
    record.final_label = std::string(kUnclear);
    record.error = e.what();
  }
  if (record.status == RecordStatus::ok) {
    if (auto violation = verify_budget(record)) record.budget_violation = violation->what();
  }
  std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  record.timing_ms["total"] = elapsed.count();
  return record;
}

EvalResult run_items(const std::vector<Query>& queries, const VariantConfig& config, const AgentBackends& backends,
                     const EvalOptions& options, bool parallel) {
  config.validate();
  for (const auto& q : queries) check_preconditions(q, config);
  if (options.fan_out < 1) throw ConfigError("fan_out must be at least 1");

  EvalResult result;
  result.records.resize(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
  if (parallel) {
#pragma omp parallel for num_threads(options.fan_out) schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      result.records[static_cast<std::size_t>(i)] = evaluate_one(queries[static_cast<std::size_t>(i)], config, backends, options.pipeline);
    }
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      result.records[static_cast<std::size_t>(i)] = evaluate_one(queries[static_cast<std::size_t>(i)], config, backends, options.pipeline);
    }
  }
  result.metrics = compute_metrics(result.records, options.scoring);
  return result;
}

}  // namespace

EvalResult evaluate(const std::vector<Query>& queries, const VariantConfig& config, const AgentBackends& backends,
                    const EvalOptions& options) {
  return run_items(queries, config, backends, options, /*parallel=*/true);
}

EvalResult evaluate_serial(const std::vector<Query>& queries, const VariantConfig& config,
                           const AgentBackends& backends, const EvalOptions& options) {
  return run_items(queries, config, backends, options, /*parallel=*/false);
}

// ---------------------------------------------------------------- smoothing

double binomial_majority_oracle(double q, int n) {
  if (n < 1 || n % 2 == 0) throw std::invalid_argument("binomial_majority_oracle needs an odd positive n");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("q must lie in [0,1]");
  const long double p = q, r = 1.0L - p;
  long double coeff = 1.0L;  // C(n, j), built up exactly for the n used here
  long double total = 0.0L;
  for (int j = 0; j <= n; ++j) {
    if (j > 0) coeff = coeff * static_cast<long double>(n - j + 1) / static_cast<long double>(j);
    if (2 * j > n) total += coeff * std::pow(p, j) * std::pow(r, n - j);
  }
  return static_cast<double>(total);
}

double SimulationRow::delta() const { return std::fabs(accuracy - oracle); }

SimulationRow simulate_smoothing(double q, int n, int trials, std::uint64_t seed, int fan_out) {
  if (trials < 1) throw std::invalid_argument("trials must be at least 1");
  SyntheticVlmConfig vlm;
  vlm.candidate_answers = {"yes", "no"};
  vlm.correct_label = "yes";
  vlm.q_clean = q;
  vlm.q_adv = q;
  vlm.seed = seed;
  SyntheticBackend backend(vlm);

  std::vector<Query> queries;
  queries.reserve(static_cast<std::size_t>(trials));
  const CandidateSet candidates({"yes", "no"});
  for (int t = 0; t < trials; ++t) {
    Query query;
    query.id = "trial-" + std::to_string(t);
    query.image_ref = "sim://trial/" + std::to_string(t);
    query.text = "Is the marked object present in the image?";
    query.task = StructuredTask{candidates};
    query.gold = {"yes"};
    query.adversarial_flag = true;
    queries.push_back(std::move(query));
  }
  auto config = VariantConfig::defaults(Variant::pv);
  config.n_paraphrases = n;
  auto result = evaluate(queries, config, AgentBackends::uniform(backend), EvalOptions{fan_out, ScoringMode::exact, {}});

  SimulationRow row;
  row.q = q;
  row.n = n;
  row.trials = trials;
  row.accuracy = result.metrics.accuracy;
  row.oracle = n % 2 == 1 ? binomial_majority_oracle(q, n) : std::nan("");
  row.std_error = std::sqrt(row.oracle * (1.0 - row.oracle) / trials);
  return row;
}

std::vector<AblationCell> ablate_k(const std::vector<Query>& queries, const VariantConfig& base,
                                   const std::vector<Variant>& variants, const std::vector<int>& n_values,
                                   const AgentBackends& backends, const EvalOptions& options,
                                   std::optional<double> oracle_q) {
  std::vector<AblationCell> cells;
  for (auto variant : variants) {
    for (int n : n_values) {
      AblationCell cell;
      cell.variant = variant;
      cell.n = n;
      try {
        auto config = base;
        config.variant = variant;
        config.n_paraphrases = n;
        config.require_rationale = variant == Variant::rjv || variant == Variant::rda;
        cell.metrics = evaluate(queries, config, backends, options).metrics;
        if (oracle_q && n % 2 == 1) cell.oracle = binomial_majority_oracle(*oracle_q, n);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

json to_json(const std::vector<AblationCell>& cells) {
  json out = json::array();
  for (const auto& c : cells) {
    out.push_back({{"variant", to_string(c.variant)},
                   {"n", c.n},
                   {"accuracy", c.metrics.accuracy},
                   {"failure_count", c.metrics.failure_count},
                   {"oracle", c.oracle ? json(*c.oracle) : json(nullptr)},
                   {"error", c.error}});
  }
  return out;
}

// ---------------------------------------------------------------- persistence

void to_json(json& j, const RunManifest& m) {
  j = json{{"config", m.config},
           {"config_hash", m.config_hash},
           {"prompt_versions", m.prompt_versions},
           {"backend_ids", m.backend_ids},
           {"metrics", m.metrics},
           {"n_items", m.n_items}};
}

void from_json(const json& j, RunManifest& m) {
  m.config = j.at("config");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.prompt_versions = j.at("prompt_versions").get<std::map<std::string, std::string>>();
  m.backend_ids = j.at("backend_ids").get<std::map<std::string, std::string>>();
  m.metrics = j.at("metrics").get<RunMetrics>();
  m.n_items = j.at("n_items").get<std::size_t>();
}

std::string config_hash(const json& config) {
  std::ostringstream out;
  out << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config.dump());
  return out.str();
}

RunManifest persist_run(const std::filesystem::path& dir, const json& config,
                        const std::map<std::string, std::string>& backend_ids,
                        const std::vector<DecisionRecord>& records, const RunMetrics& metrics) {
  std::filesystem::create_directories(dir);
  RunManifest manifest;
  manifest.config = config;
  manifest.config_hash = config_hash(config);
  manifest.prompt_versions = prompt_versions();
  manifest.backend_ids = backend_ids;
  manifest.metrics = metrics;
  manifest.n_items = records.size();

  {
    std::ofstream out(dir / "records.jsonl");
    if (!out) throw std::runtime_error("cannot write " + (dir / "records.jsonl").string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + (dir / "records.jsonl").string());
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << json(manifest).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + (dir / "manifest.json").string());
  return manifest;
}

LoadedRun load_run(const std::filesystem::path& dir) {
  std::ifstream manifest_in(dir / "manifest.json");
  if (!manifest_in) throw std::runtime_error("no manifest.json in " + dir.string());
  LoadedRun run;
  json manifest = json::parse(manifest_in, nullptr, false);
  if (manifest.is_discarded()) throw std::runtime_error("malformed manifest.json in " + dir.string());
  run.manifest = manifest.get<RunManifest>();

  std::ifstream records_in(dir / "records.jsonl");
  std::string line;
  std::size_t line_no = 0;
  while (records_in && std::getline(records_in, line)) {
    ++line_no;
    if (collapse_whitespace(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw std::runtime_error("records.jsonl line " + std::to_string(line_no) + ": invalid JSON");
    }
    run.records.push_back(record_from_json(j));
  }
  return run;
}

}  // namespace pda
