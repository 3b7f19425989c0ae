#include "pda/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "pda/http_backend.hpp"
#include "pda/replay_backend.hpp"
#include "pda/synthetic_backend.hpp"

namespace pda {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

const json& RunConfig::backend_spec(const std::string& role) const {
  if (auto it = backends.find(role); it != backends.end()) return it->second;
  if (auto it = backends.find("default"); it != backends.end()) return it->second;
  throw ConfigError("no backend configured for role '" + role + "' and no default backend");
}

json RunConfig::to_manifest_json() const {
  json j{{"variant", variant},
         {"dataset", dataset.string()},
         {"schema", to_string(schema)},
         {"seed", seed ? json(*seed) : json(nullptr)},
         {"fan_out", fan_out},
         {"scoring", to_string(scoring)},
         {"backends", json::object()}};
  for (auto [role, spec] : backends) {
    spec.erase("api_key");
    j["backends"][role] = spec;
  }
  return j;
}

json interpolate_env(const json& value) {
  if (value.is_string()) {
    static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
    const auto text = value.get<std::string>();
    std::string out;
    auto last = text.cbegin();
    for (std::sregex_iterator it(text.begin(), text.end(), var), end; it != end; ++it) {
      const auto& m = *it;
      const char* env = std::getenv(m[1].str().c_str());
      if (!env) throw ConfigError("environment variable " + m[1].str() + " is not set");
      out.append(last, m[0].first);
      out += env;
      last = m[0].second;
    }
    out.append(last, text.cend());
    return out;
  }
  if (value.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : value.items()) out[k] = interpolate_env(v);
    return out;
  }
  if (value.is_array()) {
    json out = json::array();
    for (const auto& v : value) out.push_back(interpolate_env(v));
    return out;
  }
  return value;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
  }
}

}  // namespace

RunConfig load_run_config(const std::optional<fs::path>& config_path, const RunOverrides& o) {
  json file = json::object();
  fs::path base;
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw ConfigError("cannot open config " + config_path->string());
    file = json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw ConfigError("config " + config_path->string() + " is not a JSON object");
    file = interpolate_env(file);
    base = config_path->parent_path();
  }

  RunConfig c;
  auto variant = parse_variant(o.variant.value_or(get_or<std::string>(file, "variant", "full")));
  c.schema = parse_dataset_schema(o.schema.value_or(get_or<std::string>(file, "schema", "vqa")));
  c.variant = VariantConfig::defaults(variant, c.schema == DatasetSchema::caption);
  c.variant.n_paraphrases = o.n.value_or(get_or<int>(file, "n", c.variant.n_paraphrases));
  c.variant.k_atomic = o.k.value_or(get_or<int>(file, "k", c.variant.k_atomic));
  try {
    c.variant.change_intensity =
        parse_change_intensity(o.intensity.value_or(get_or<std::string>(file, "intensity", "medium")));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.variant.fallback_undefended = o.fallback_undefended || get_or<bool>(file, "fallback_undefended", false);
  c.variant.validate();

  if (o.dataset) {
    c.dataset = *o.dataset;
  } else if (file.contains("dataset")) {
    c.dataset = resolve(base, get_or<std::string>(file, "dataset", ""));
  }
  if (o.out) {
    c.out = *o.out;
  } else if (file.contains("out")) {
    c.out = resolve(base, get_or<std::string>(file, "out", ""));
  }
  if (o.seed) {
    c.seed = o.seed;
  } else if (file.contains("seed")) {
    c.seed = get_or<std::uint64_t>(file, "seed", 0);
  }
  c.fan_out = o.fan_out.value_or(get_or<int>(file, "fan_out", 1));
  if (c.fan_out < 1) throw ConfigError("fan_out must be at least 1");
  c.scoring = parse_scoring_mode(get_or<std::string>(file, "scoring", "exact"));

  if (file.contains("backends")) {
    if (!file["backends"].is_object()) throw ConfigError("\"backends\" must be an object");
    for (const auto& [role, spec] : file["backends"].items()) {
      if (role != "default" && std::find(kAgentRoles.begin(), kAgentRoles.end(), role) == kAgentRoles.end()) {
        throw ConfigError("unknown backend role '" + role + "'");
      }
      if (!spec.is_object() || !spec.contains("type")) throw ConfigError("backend '" + role + "' needs a \"type\"");
      json resolved = spec;
      if (resolved.contains("script")) resolved["script"] = resolve(base, resolved["script"].get<std::string>()).string();
      c.backends[role] = resolved;
    }
  }
  for (const auto& role : kAgentRoles) {
    const auto& spec = c.backend_spec(role);
    auto type = spec.at("type").get<std::string>();
    if (type != "http" && type != "replay" && type != "synthetic") {
      throw ConfigError("backend type '" + type + "' is not one of http, replay, synthetic");
    }
    if (type == "synthetic" && !c.seed && !spec.contains("seed")) {
      throw ConfigError("synthetic backends need a seed (--seed or \"seed\")");
    }
  }
  return c;
}

std::unique_ptr<Backend> make_backend(const json& spec, const RunConfig& config, const std::vector<DatasetItem>& items) {
  const auto type = spec.at("type").get<std::string>();
  if (type == "replay") {
    if (!spec.contains("script")) throw ConfigError("replay backend needs a \"script\" path");
    try {
      return std::make_unique<ReplayBackend>(ReplayScript::load(spec["script"].get<std::string>()),
                                             get_or<std::string>(spec, "id", "replay"));
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
  }
  if (type == "http") {
    HttpBackendConfig http;
    http.base_url = get_or<std::string>(spec, "base_url", "");
    http.model = get_or<std::string>(spec, "model", "");
    if (http.base_url.empty() || http.model.empty()) throw ConfigError("http backend needs base_url and model");
    const char* env_key = std::getenv("PDA_API_KEY");
    http.api_key = get_or<std::string>(spec, "api_key", env_key ? env_key : "");
    http.timeout_seconds = get_or<int>(spec, "timeout_seconds", 60);
    http.retry.max_retries = get_or<int>(spec, "max_retries", 3);
    http.retry.initial_backoff = std::chrono::milliseconds(get_or<int>(spec, "initial_backoff_ms", 250));
    try {
      return std::make_unique<HttpBackend>(http, get_or<std::string>(spec, "id", ""));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (type == "synthetic") {
    SyntheticVlmConfig s;
    s.seed = spec.contains("seed") ? spec["seed"].get<std::uint64_t>() : config.seed.value();
    s.q_clean = get_or<double>(spec, "q_clean", 0.7);
    s.q_adv = get_or<double>(spec, "q_adv", 0.7);
    s.independence = get_or<bool>(spec, "independence", true);
    s.candidate_answers = get_or<std::vector<std::string>>(spec, "candidates", {});
    std::set<std::string> seen(s.candidate_answers.begin(), s.candidate_answers.end());
    for (const auto& item : items) {
      std::vector<std::string> labels = item.candidates;
      if (!item.gold.empty()) {
        labels.push_back(item.gold.front());
        s.truth_by_image[item.image_ref] = item.gold.front();
      }
      for (const auto& l : labels) {
        auto n = normalize_answer(l);
        if (seen.insert(n).second) s.candidate_answers.push_back(n);
      }
    }
    if (s.candidate_answers.size() < 2) s.candidate_answers.push_back("unknown");
    s.correct_label = s.candidate_answers.front();
    try {
      return std::make_unique<SyntheticBackend>(s, get_or<std::string>(spec, "id", "synthetic"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  throw ConfigError("unknown backend type '" + type + "'");
}

// ---------------------------------------------------------------- output

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

void print_metrics_table(std::ostream& out, const std::vector<std::pair<std::string, RunMetrics>>& runs) {
  out << std::left << std::setw(24) << "run" << std::right << std::setw(7) << "items" << std::setw(8) << "scored"
      << std::setw(10) << "accuracy" << std::setw(11) << "agreement" << std::setw(9) << "margin" << std::setw(10)
      << "failures" << std::setw(12) << "violations" << '\n';
  for (const auto& [name, m] : runs) {
    out << std::left << std::setw(24) << name << std::right << std::setw(7) << m.n_items << std::setw(8)
        << m.n_scored << std::setw(10) << fixed(m.accuracy) << std::setw(11) << fixed(m.agreement_rate)
        << std::setw(9) << fixed(m.mean_vote_margin, 3) << std::setw(10) << m.failure_count << std::setw(12)
        << m.budget_violations << '\n';
  }
  std::set<std::string> keys;
  for (const auto& [name, m] : runs) {
    for (const auto& [k, v] : m.mean_calls_per_item) keys.insert(k);
  }
  if (keys.empty()) return;
  out << "\nmean calls per item\n" << std::left << std::setw(28) << "stage/kind";
  for (const auto& [name, m] : runs) out << std::right << std::setw(14) << name.substr(0, 13);
  out << '\n';
  for (const auto& k : keys) {
    out << std::left << std::setw(28) << k;
    for (const auto& [name, m] : runs) {
      auto it = m.mean_calls_per_item.find(k);
      out << std::right << std::setw(14) << fixed(it == m.mean_calls_per_item.end() ? 0.0 : it->second, 2);
    }
    out << '\n';
  }
}

}  // namespace

// ---------------------------------------------------------------- commands

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err, const RunHooks& hooks) {
  std::vector<DatasetItem> items;
  std::vector<std::unique_ptr<Backend>> owned;
  std::map<std::string, Backend*> by_role;
  std::vector<Query> queries;
  try {
    if (config.dataset.empty()) throw ConfigError("no dataset given (--dataset or \"dataset\")");
    try {
      items = load_dataset(config.dataset, config.schema);
    } catch (const DatasetError& e) {
      throw ConfigError(e.what());
    }
    // roles with an identical spec share one backend instance
    std::map<std::string, Backend*> by_spec;
    for (const auto& role : kAgentRoles) {
      const auto& spec = config.backend_spec(role);
      auto key = spec.dump();
      if (!by_spec.count(key)) {
        owned.push_back(hooks.make_backend ? hooks.make_backend(spec, config, items) : make_backend(spec, config, items));
        by_spec[key] = owned.back().get();
      }
      by_role[role] = by_spec[key];
    }
    for (const auto& item : items) {
      queries.push_back(to_query(item));
      check_preconditions(queries.back(), config.variant);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  AgentBackends backends{*by_role["paraphrase_agent"], *by_role["decomposer"], *by_role["aggregator"],
                         *by_role["judge"], *by_role["victim_vlm"]};
  EvalResult result;
  try {
    result = evaluate(queries, config.variant, backends, EvalOptions{config.fan_out, config.scoring, hooks.pipeline});
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  if (!config.out.empty()) {
    try {
      std::map<std::string, std::string> ids;
      for (const auto& [role, backend] : by_role) ids[role] = backend->id();
      persist_run(config.out, config.to_manifest_json(), ids, result.records, result.metrics);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }

  print_metrics_table(out, {{std::string(to_string(config.variant.variant)), result.metrics}});
  if (!config.out.empty()) out << "\nrecords written to " << config.out.string() << '\n';

  int status = kExitOk;
  for (const auto& r : result.records) {
    if (!r.budget_violation.empty()) {
      err << "BudgetViolation: " << r.budget_violation << '\n';
      status = kExitRuntime;
    }
  }
  if (result.metrics.failure_count > 0) {
    err << result.metrics.failure_count << " of " << result.metrics.n_items << " items failed\n";
    for (const auto& r : result.records) {
      if (r.status == RecordStatus::failed) err << "  " << r.query_id << ": " << r.error << '\n';
    }
    status = kExitRuntime;
  }
  return status;
}

int cmd_simulate(double q, const std::vector<int>& n_values, int trials, std::uint64_t seed, int fan_out,
                 std::ostream& out, std::ostream& err) {
  if (trials < 1 || !(q >= 0.0 && q <= 1.0) || fan_out < 1) {
    err << "config error: need trials >= 1, q in [0,1] and fan_out >= 1\n";
    return kExitConfig;
  }
  for (int n : n_values) {
    if (n < 1 || n % 2 == 0) {
      err << "config error: n must be odd and positive (got " << n << ")\n";
      return kExitConfig;
    }
  }
  out << "q = " << q << ", trials = " << trials << ", seed = " << seed << '\n';
  out << std::right << std::setw(4) << "n" << std::setw(12) << "simulated" << std::setw(10) << "oracle"
      << std::setw(10) << "|delta|" << std::setw(10) << "std_err" << '\n';
  for (int n : n_values) {
    auto row = simulate_smoothing(q, n, trials, seed, fan_out);
    out << std::setw(4) << n << std::setw(12) << fixed(row.accuracy) << std::setw(10) << fixed(row.oracle, 5)
        << std::setw(10) << fixed(row.delta()) << std::setw(10) << fixed(row.std_error) << '\n';
  }
  return kExitOk;
}

int cmd_budget(const std::string& variant, int n, int k, std::ostream& out, std::ostream& err) {
  try {
    auto v = parse_variant(variant);
    if (n < 1 || k < 1) throw ConfigError("n and k must be at least 1");
    out << "paraphrase LLM | decomposition VLM | decomposition LLM | aggregation LLM\n";
    out << budget_row(expected_budget(v, n, k)) << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> dirs;
  if (fs::exists(run_dir / "manifest.json")) {
    dirs.push_back(run_dir);
  } else if (fs::is_directory(run_dir)) {
    for (const auto& entry : fs::directory_iterator(run_dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) {
    err << "config error: no manifest.json in " << run_dir.string() << '\n';
    return kExitConfig;
  }

  std::vector<std::pair<std::string, RunMetrics>> rows;
  std::vector<LoadedRun> runs;
  int status = kExitOk;
  for (const auto& dir : dirs) {
    LoadedRun run;
    try {
      run = load_run(dir);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
    auto scoring = parse_scoring_mode(run.manifest.config.value("scoring", "exact"));
    auto recomputed = compute_metrics(run.records, scoring);
    if (!(recomputed == run.manifest.metrics)) {
      err << "metrics in " << dir.string() << " do not match its records\n";
      status = kExitRuntime;
    }
    std::string name = dirs.size() == 1 ? std::string(run.manifest.config.contains("variant")
                                                          ? run.manifest.config["variant"].value("variant", "run")
                                                          : "run")
                                        : dir.filename().string();
    rows.emplace_back(name, recomputed);
    runs.push_back(std::move(run));
  }

  print_metrics_table(out, rows);
  out << '\n';
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& m = runs[i].manifest;
    out << rows[i].first << ": config " << m.config_hash << ", " << m.n_items << " items";
    for (const auto& [role, id] : m.backend_ids) out << ", " << role << "=" << id;
    out << '\n';
    std::size_t shown = 0;
    for (const auto& r : runs[i].records) {
      if (r.status == RecordStatus::ok && r.budget_violation.empty()) continue;
      if (shown++ == 0) out << "  failure digest:\n";
      if (shown > 10) continue;
      out << "    " << r.query_id << " [" << to_string(r.status) << "] "
          << (r.budget_violation.empty() ? r.error : r.budget_violation) << '\n';
    }
    if (shown > 10) out << "    ... " << shown - 10 << " more\n";
  }
  return status;
}

// ---------------------------------------------------------------- argv

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const RunHooks& hooks) {
  CLI::App app{"Paraphrase-decomposition-aggregation defense for vision-language models", "pda"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  RunOverrides o;
  auto* run = app.add_subcommand("run", "Run a defense variant over a dataset");
  run->add_option("--config", config_path, "JSON run configuration");
  run->add_option("--variant", o.variant, "full, rjv, rda or pv");
  run->add_option("--n", o.n, "Number of paraphrases");
  run->add_option("--k", o.k, "Atomic questions per paraphrase");
  run->add_option("--intensity", o.intensity, "Paraphrase change intensity: low, medium or high");
  run->add_option("--dataset", o.dataset, "Line-delimited JSON dataset");
  run->add_option("--schema", o.schema, "vqa, classification or caption");
  run->add_option("--out", o.out, "Output directory for manifest and records");
  run->add_option("--seed", o.seed, "Seed for synthetic backends");
  run->add_option("--fan-out", o.fan_out, "Items evaluated in parallel");
  run->add_flag("--fallback-undefended", o.fallback_undefended, "Answer with the direct query when the defense fails");

  double q = 0.7;
  std::vector<int> n_values{3, 5, 7, 9};
  int trials = 10000;
  std::uint64_t seed = 1;
  int fan_out = 1;
  auto* sim = app.add_subcommand("simulate", "Smoothing study on the synthetic backend");
  sim->add_option("--q", q, "Per-view accuracy")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--n", n_values, "Paraphrase counts (odd)");
  sim->add_option("--trials", trials, "Trials per n");
  sim->add_option("--seed", seed, "Seed");
  sim->add_option("--fan-out", fan_out, "Worker threads");

  std::string variant = "full";
  int bn = 5, bk = 3;
  auto* budget = app.add_subcommand("budget", "Print the per-stage call budget of a variant");
  budget->add_option("--variant", variant, "full, rjv, rda or pv");
  budget->add_option("--n", bn, "Number of paraphrases");
  budget->add_option("--k", bk, "Atomic questions per paraphrase");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize persisted runs");
  report->add_option("run_dir", report_dir, "Run directory (or a directory of runs)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*run) {
    RunConfig config;
    try {
      std::optional<fs::path> path;
      if (config_path) path = *config_path;
      config = load_run_config(path, o);
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << '\n';
      return kExitConfig;
    }
    return cmd_run(config, out, err, hooks);
  }
  if (*sim) return cmd_simulate(q, n_values, trials, seed, fan_out, out, err);
  if (*budget) return cmd_budget(variant, bn, bk, out, err);
  return cmd_report(report_dir, out, err);
}

}  // namespace pda
