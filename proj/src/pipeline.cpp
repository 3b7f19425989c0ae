#include "pda/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>

#include "pda/prompts.hpp"

namespace pda {

using nlohmann::json;

// ---------------------------------------------------------------- enums

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::full: return "full";
    case Variant::rjv: return "rjv";
    case Variant::rda: return "rda";
    case Variant::pv: return "pv";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "rjv") return Variant::rjv;
  if (name == "rda") return Variant::rda;
  if (name == "pv") return Variant::pv;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected full, rjv, rda or pv)");
}

std::string_view to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::ok: return "ok";
    case RecordStatus::failed: return "failed";
    case RecordStatus::fallback: return "fallback";
  }
  return "ok";
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::structured: return "structured";
    case TaskKind::open_form: return "open_form";
    case TaskKind::caption: return "caption";
  }
  return "structured";
}

namespace {

RecordStatus parse_status(std::string_view s) {
  if (s == "ok") return RecordStatus::ok;
  if (s == "failed") return RecordStatus::failed;
  if (s == "fallback") return RecordStatus::fallback;
  throw std::invalid_argument("unknown record status '" + std::string(s) + "'");
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "structured") return TaskKind::structured;
  if (s == "open_form") return TaskKind::open_form;
  if (s == "caption") return TaskKind::caption;
  throw std::invalid_argument("unknown task kind '" + std::string(s) + "'");
}

}  // namespace

// ---------------------------------------------------------------- config

VariantConfig VariantConfig::defaults(Variant variant, bool captioning) {
  VariantConfig c;
  c.variant = variant;
  c.n_paraphrases = captioning ? 2 : 5;
  c.k_atomic = captioning ? 5 : 3;
  c.require_rationale = variant == Variant::rjv || variant == Variant::rda;
  return c;
}

void VariantConfig::validate() const {
  if (n_paraphrases < 1) throw ConfigError("n_paraphrases must be at least 1");
  if (k_atomic < 1) throw ConfigError("k_atomic must be at least 1");
  if (variant == Variant::full && k_atomic > 5) {
    throw ConfigError("k_atomic above 5 exceeds the decomposer's 3-5 question range");
  }
}

void to_json(json& j, const VariantConfig& c) {
  j = json{{"variant", to_string(c.variant)},
           {"n_paraphrases", c.n_paraphrases},
           {"k_atomic", c.k_atomic},
           {"change_intensity", to_string(c.change_intensity)},
           {"require_rationale", c.require_rationale},
           {"fallback_undefended", c.fallback_undefended}};
}

void from_json(const json& j, VariantConfig& c) {
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.n_paraphrases = j.at("n_paraphrases").get<int>();
  c.k_atomic = j.at("k_atomic").get<int>();
  c.change_intensity = parse_change_intensity(j.at("change_intensity").get<std::string>());
  c.require_rationale = j.value("require_rationale", false);
  c.fallback_undefended = j.value("fallback_undefended", false);
}

const CandidateSet* Query::candidates() const {
  if (auto* s = std::get_if<StructuredTask>(&task)) return &s->candidates;
  return nullptr;
}

bool Query::is_caption() const {
  auto* o = std::get_if<OpenFormTask>(&task);
  return o != nullptr && o->short_caption.has_value();
}

// ---------------------------------------------------------------- records

json to_json(const DecisionRecord& r, bool with_timing) {
  json j{{"query_id", r.query_id},
         {"variant", to_string(r.variant)},
         {"task", to_string(r.task)},
         {"n_paraphrases", r.n_paraphrases},
         {"k_atomic", r.k_atomic},
         {"adversarial", r.adversarial},
         {"evidence", r.evidence},
         {"per_paraphrase_answers", json::array()},
         {"final", r.final_label},
         {"tally", r.tally},
         {"ledger", r.ledger},
         {"status", to_string(r.status)},
         {"error", r.error},
         {"error_raw", r.error_raw},
         {"budget_violation", r.budget_violation},
         {"candidates", r.candidates},
         {"gold", r.gold}};
  if (auto* p = std::get_if<ParaphraseSet>(&r.paraphrases)) {
    j["paraphrases"] = json{{"kind", "semantic"}, {"set", *p}};
  } else if (auto* l = std::get_if<LogicalParaphraseSet>(&r.paraphrases)) {
    j["paraphrases"] = json{{"kind", "logical"}, {"set", *l}};
  } else {
    j["paraphrases"] = nullptr;
  }
  for (const auto& a : r.per_paraphrase_answers) {
    j["per_paraphrase_answers"].push_back(
        {{"index", a.index}, {"label", a.label}, {"weight", a.weight}, {"raw", a.raw}, {"rationale", a.rationale}});
  }
  j["claims"] = r.claims ? json(*r.claims) : json(nullptr);
  j["verdict"] = r.verdict ? json(*r.verdict) : json(nullptr);
  j["global_summary"] = r.global_summary ? json(*r.global_summary) : json(nullptr);
  if (with_timing) j["timing_ms"] = r.timing_ms;
  return j;
}

DecisionRecord record_from_json(const json& j) {
  DecisionRecord r;
  r.query_id = j.at("query_id").get<std::string>();
  r.variant = parse_variant(j.at("variant").get<std::string>());
  r.task = parse_task_kind(j.at("task").get<std::string>());
  r.n_paraphrases = j.at("n_paraphrases").get<int>();
  r.k_atomic = j.at("k_atomic").get<int>();
  r.adversarial = j.value("adversarial", false);
  const auto& p = j.at("paraphrases");
  if (p.is_object()) {
    if (p.at("kind") == "semantic") {
      r.paraphrases = p.at("set").get<ParaphraseSet>();
    } else {
      r.paraphrases = p.at("set").get<LogicalParaphraseSet>();
    }
  }
  if (!j.at("claims").is_null()) r.claims = j["claims"].get<CaptionClaims>();
  r.evidence = j.at("evidence").get<std::vector<EvidenceSet>>();
  for (const auto& a : j.at("per_paraphrase_answers")) {
    r.per_paraphrase_answers.push_back({a.at("index").get<int>(), a.at("label").get<std::string>(),
                                        a.at("weight").get<double>(), a.at("raw").get<std::string>(),
                                        a.at("rationale").get<std::string>()});
  }
  r.final_label = j.at("final").get<std::string>();
  if (!j.at("verdict").is_null()) r.verdict = j["verdict"].get<CaptionVerdict>();
  if (!j.at("global_summary").is_null()) r.global_summary = j["global_summary"].get<std::string>();
  r.tally = j.at("tally").get<VoteTally>();
  r.ledger = j.at("ledger").get<CallLedger>();
  if (j.contains("timing_ms")) r.timing_ms = j["timing_ms"].get<std::map<std::string, double>>();
  r.status = parse_status(j.at("status").get<std::string>());
  r.error = j.at("error").get<std::string>();
  r.error_raw = j.at("error_raw").get<std::string>();
  r.budget_violation = j.at("budget_violation").get<std::string>();
  r.candidates = j.at("candidates").get<std::vector<std::string>>();
  r.gold = j.at("gold").get<std::vector<std::string>>();
  return r;
}

json deterministic_view(const DecisionRecord& r) { return to_json(r, /*with_timing=*/false); }

// ---------------------------------------------------------------- helpers

namespace {

// One meter per query, shared by every role, so the record's ledger holds
// exactly this query's calls even when roles share a backend.
struct MeteredRoles {
  std::shared_ptr<AtomicLedger> meter = std::make_shared<AtomicLedger>();
  MeteredBackend paraphrase;
  MeteredBackend decomposer;
  MeteredBackend aggregator;
  MeteredBackend judge;
  MeteredBackend victim;

  explicit MeteredRoles(const AgentBackends& b)
      : paraphrase(b.paraphrase_agent, meter),
        decomposer(b.decomposer, meter),
        aggregator(b.aggregator, meter),
        judge(b.judge, meter),
        victim(b.victim_vlm, meter) {}
};

class StageTimer {
 public:
  StageTimer(DecisionRecord& record, std::string stage)
      : record_(record), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start_;
    record_.timing_ms[stage_] += elapsed.count();
  }

 private:
  DecisionRecord& record_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string with_options(std::string_view text, const CandidateSet* candidates) {
  if (!candidates) return std::string(text);
  return std::string(text) + "\nOptions: " + join(candidates->labels(), ", ");
}

ChatRequest vlm_request(std::string_view asset, std::string question, const Query& query, StageTag stage) {
  auto rendered = render(prompt_asset(asset), {{"question", std::move(question)}});
  auto request = make_vlm_request(stage, std::string(asset), std::move(rendered.user), query.image_ref);
  request.adversarial_hint = query.adversarial_flag;
  return request;
}

struct AnswerWithRationale {
  std::string answer;
  std::string rationale;
};

AnswerWithRationale split_rationale(const std::string& raw) {
  std::string head, rationale;
  std::size_t pos = 0;
  bool in_rationale = false;
  while (pos <= raw.size()) {
    auto nl = raw.find('\n', pos);
    auto line = raw.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    auto trimmed = collapse_whitespace(line);
    std::string lowered = trimmed;
    for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!in_rationale && lowered.rfind("rationale", 0) == 0) {
      in_rationale = true;
      auto colon = trimmed.find(':');
      trimmed = colon == std::string::npos ? trimmed.substr(9) : trimmed.substr(colon + 1);
    }
    auto& target = in_rationale ? rationale : head;
    if (!collapse_whitespace(trimmed).empty()) {
      if (!target.empty()) target += ' ';
      target += collapse_whitespace(trimmed);
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  return {extract_short_answer(head), rationale};
}

std::string to_candidate(const std::string& answer, const CandidateSet* candidates) {
  if (!candidates) return answer;
  return map_to_candidates(answer, *candidates).value_or(std::string(kUnclear));
}

VoteTally tally_of(const std::vector<ParaphraseAnswer>& answers, const CandidateSet* candidates) {
  std::vector<WeightedLabel> votes;
  std::vector<std::string> labels;
  for (const auto& a : answers) {
    votes.push_back({a.label, a.weight});
    labels.push_back(a.label);
  }
  if (candidates) return weighted_scores(votes, *candidates);
  return weighted_scores(votes, CandidateSet::from_votes(labels));
}

DecisionRecord start_record(const Query& query, const VariantConfig& config) {
  DecisionRecord r;
  r.query_id = query.id;
  r.variant = config.variant;
  r.task = query.candidates() ? TaskKind::structured : (query.is_caption() ? TaskKind::caption : TaskKind::open_form);
  r.n_paraphrases = config.n_paraphrases;
  r.k_atomic = config.k_atomic;
  r.adversarial = query.adversarial_flag;
  if (auto* c = query.candidates()) r.candidates = c->labels();
  r.gold = query.gold;
  return r;
}

using Steps = std::function<void(const Query&, const VariantConfig&, MeteredRoles&, DecisionRecord&)>;

DecisionRecord execute(const Query& query, const VariantConfig& config, const AgentBackends& backends,
                       const Steps& steps) {
  config.validate();
  DecisionRecord record = start_record(query, config);
  MeteredRoles roles(backends);
  try {
    steps(query, config, roles, record);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    record.status = RecordStatus::failed;
    record.error = e.what();
    if (auto* agent_error = dynamic_cast<const AgentError*>(&e)) record.error_raw = agent_error->raw();
    if (config.fallback_undefended) {
      try {
        StageTimer timer(record, "fallback");
        record.final_label = run_direct(query, roles.victim);
        record.status = RecordStatus::fallback;
      } catch (const std::exception& fallback_error) {
        record.error += "; undefended fallback failed: " + std::string(fallback_error.what());
      }
    }
    if (record.status == RecordStatus::failed) record.final_label = std::string(kUnclear);
  }
  record.ledger = roles.meter->snapshot();
  return record;
}

// ---------------------------------------------------------------- variants

// Probe-level filter: pairs answered with the sentinel do not reach the
// aggregator. When nothing survives the aggregator still sees the full set,
// so the call (and the budget) is the same on every path.
EvidenceSet usable_pairs(const EvidenceSet& evidence) {
  EvidenceSet kept{evidence.paraphrase_index, {}};
  for (const auto& pair : evidence.pairs) {
    if (pair.answer != kUnclear) kept.pairs.push_back(pair);
  }
  return kept.pairs.empty() ? evidence : kept;
}

void full_steps(const Query& query, const VariantConfig& config, MeteredRoles& roles, DecisionRecord& record) {
  const auto* candidates = query.candidates();
  ParaphraseSet paraphrases;
  {
    StageTimer timer(record, "paraphrase");
    paraphrases = paraphrase_semantic(query.text, config.n_paraphrases, config.change_intensity, roles.paraphrase);
    record.paraphrases = paraphrases;
  }

  {
    StageTimer timer(record, "decomposition");
    for (int i = 1; i <= config.n_paraphrases; ++i) {
      const auto& text = paraphrases.candidates[static_cast<std::size_t>(i - 1)];
      auto questions = decompose_vqa(text, i, roles.decomposer, config.k_atomic);
      questions.questions.resize(std::min<std::size_t>(questions.questions.size(), config.k_atomic));

      EvidenceSet evidence{i, {}};
      for (const auto& q : questions.questions) {
        std::string prompt = q.text;
        if (q.answer_type == AnswerType::choice) prompt += "\nOptions: " + join(q.options, ", ");
        auto asset = q.answer_type == AnswerType::choice ? "answer_choice" : "answer_atomic";
        auto reply = roles.victim.complete(vlm_request(asset, prompt, query, StageTag::answering));
        auto answer = extract_short_answer(reply.text);
        if (!evidence.pairs.empty()) {
          answer = check_sub_answer(text, evidence.pairs, q.text, answer, roles.decomposer);
        }
        evidence.pairs.push_back({q.sub_index, q.text, reply.text, answer});
      }
      auto summary = aggregate_structured(text, usable_pairs(evidence), roles.aggregator, StageTag::decomposition);
      record.evidence.push_back(std::move(evidence));
      record.per_paraphrase_answers.push_back({i, to_candidate(summary, candidates), 1.0, summary, {}});
    }
  }

  StageTimer timer(record, "aggregation");
  EvidenceSet all{0, {}};
  for (const auto& set : record.evidence) all.pairs.insert(all.pairs.end(), set.pairs.begin(), set.pairs.end());
  auto global = aggregate_structured(query.text, usable_pairs(all), roles.aggregator, StageTag::aggregation);
  record.global_summary = global;
  record.tally = tally_of(record.per_paraphrase_answers, candidates);
  if (candidates) {
    // structured: the evidence vote decides; the global answer only stands
    // in when every paraphrase-level answer was excluded
    record.final_label = argmax_label(record.tally);
    if (record.final_label == kUnclear) record.final_label = to_candidate(global, candidates);
  } else {
    record.final_label = global != kUnclear ? global : argmax_label(record.tally);
  }
}

std::vector<AnswerTuple> answer_with_rationales(const Query& query, const ParaphraseSet& paraphrases,
                                                MeteredRoles& roles, DecisionRecord& record) {
  StageTimer timer(record, "answering");
  std::vector<AnswerTuple> tuples;
  int i = 0;
  for (const auto& text : paraphrases.candidates) {
    ++i;
    auto prompt = with_options(text, query.candidates());
    auto reply = roles.victim.complete(vlm_request("answer_with_rationale", prompt, query, StageTag::answering));
    auto parsed = split_rationale(reply.text);
    record.evidence.push_back({i, {{1, text, reply.text, parsed.answer}}});
    tuples.push_back({text, parsed.answer, parsed.rationale});
  }
  return tuples;
}

void rjv_steps(const Query& query, const VariantConfig& config, MeteredRoles& roles, DecisionRecord& record) {
  const auto* candidates = query.candidates();
  ParaphraseSet paraphrases;
  {
    StageTimer timer(record, "paraphrase");
    paraphrases = paraphrase_semantic(query.text, config.n_paraphrases, config.change_intensity, roles.paraphrase);
    record.paraphrases = paraphrases;
  }
  auto tuples = answer_with_rationales(query, paraphrases, roles, record);
  {
    StageTimer timer(record, "judging");
    for (std::size_t i = 0; i < tuples.size(); ++i) {
      const int index = static_cast<int>(i + 1);
      auto judged = judge_paraphrase(tuples[i].paraphrase, tuples[i].answer, tuples[i].rationale, roles.judge, index);
      record.per_paraphrase_answers.push_back(
          {index, to_candidate(judged.label, candidates), judged.weight, tuples[i].answer, judged.rationale});
    }
  }
  StageTimer timer(record, "aggregation");
  record.tally = tally_of(record.per_paraphrase_answers, candidates);
  record.final_label = argmax_label(record.tally);
}

void rda_steps(const Query& query, const VariantConfig& config, MeteredRoles& roles, DecisionRecord& record) {
  const auto* candidates = query.candidates();
  ParaphraseSet paraphrases;
  {
    StageTimer timer(record, "paraphrase");
    paraphrases = paraphrase_semantic(query.text, config.n_paraphrases, config.change_intensity, roles.paraphrase);
    record.paraphrases = paraphrases;
  }
  auto tuples = answer_with_rationales(query, paraphrases, roles, record);
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    record.per_paraphrase_answers.push_back(
        {static_cast<int>(i + 1), to_candidate(tuples[i].answer, candidates), 1.0, tuples[i].answer, tuples[i].rationale});
  }
  StageTimer timer(record, "aggregation");
  record.tally = tally_of(record.per_paraphrase_answers, candidates);
  record.final_label = aggregate_global(query.text, tuples, roles.aggregator, candidates);
}

void pv_steps(const Query& query, const VariantConfig& config, MeteredRoles& roles, DecisionRecord& record) {
  const auto* candidates = query.candidates();
  LogicalParaphraseSet items;
  {
    StageTimer timer(record, "paraphrase");
    items = paraphrase_logical(query.text, candidates->labels(), config.n_paraphrases, roles.paraphrase);
    record.paraphrases = items;
  }
  {
    StageTimer timer(record, "answering");
    int i = 0;
    for (const auto& item : items.items) {
      ++i;
      auto prompt = item.question + "\nOptions: " + join(item.options, ", ");
      auto reply = roles.victim.complete(vlm_request("answer_choice", prompt, query, StageTag::answering));
      auto answer = extract_short_answer(reply.text);
      auto label = map_pv_option(answer, item.options, items.original_options).value_or(std::string(kUnclear));
      record.evidence.push_back({i, {{1, item.question, reply.text, answer}}});
      record.per_paraphrase_answers.push_back({i, label, 1.0, answer, {}});
    }
  }
  StageTimer timer(record, "aggregation");
  record.tally = tally_of(record.per_paraphrase_answers, candidates);
  record.final_label = argmax_label(record.tally);
  if (record.final_label == kUnclear) record.error = "no paraphrase answer mapped back to an original option";
}

void caption_steps(const Query& query, const VariantConfig& config, MeteredRoles& roles, DecisionRecord& record) {
  const auto& task = std::get<OpenFormTask>(query.task);
  const auto& short_caption = *task.short_caption;
  {
    StageTimer timer(record, "decomposition");
    record.claims = extract_caption_claims(short_caption, roles.decomposer);
    for (int round = 1; round <= config.n_paraphrases; ++round) {
      auto questions = decompose_caption_verify(*record.claims, task.detailed_caption.value_or(""), roles.decomposer,
                                                round, config.n_paraphrases);
      questions.questions.resize(std::min<std::size_t>(questions.questions.size(), config.k_atomic));
      EvidenceSet evidence{round, {}};
      for (const auto& q : questions.questions) {
        auto reply = roles.victim.complete(vlm_request("answer_probe", q.text, query, StageTag::answering));
        evidence.pairs.push_back({q.sub_index, q.text, reply.text, extract_short_answer(reply.text)});
      }
      record.evidence.push_back(std::move(evidence));
    }
  }
  StageTimer timer(record, "aggregation");
  std::vector<EvidencePair> usable;
  for (const auto& set : record.evidence) {
    for (const auto& pair : set.pairs) {
      if (pair.answer != kUnclear) usable.push_back(pair);
    }
  }
  record.verdict = caption_judge(short_caption, *record.claims, usable, roles.aggregator);
  record.final_label = record.verdict->caption;
}

}  // namespace

void check_preconditions(const Query& query, const VariantConfig& config) {
  config.validate();
  if (auto* c = query.candidates(); c && c->empty()) {
    throw ConfigError("query " + query.id + ": structured task without candidates");
  }
  if (config.variant == Variant::pv && !query.candidates()) {
    throw ConfigError("query " + query.id + ": pv needs a structured task with candidate options");
  }
  if (query.is_caption() && config.variant != Variant::full) {
    throw ConfigError("query " + query.id + ": captioning runs only with the full variant");
  }
  if (!query.is_caption() && collapse_whitespace(query.text).empty()) {
    throw ConfigError("query " + query.id + ": empty question text");
  }
}

DecisionRecord run_pda_full(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  if (config.variant != Variant::full) throw ConfigError("run_pda_full called with variant " + std::string(to_string(config.variant)));
  return execute(query, config, backends, full_steps);
}

DecisionRecord run_pda_rjv(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  if (config.variant != Variant::rjv) throw ConfigError("run_pda_rjv called with variant " + std::string(to_string(config.variant)));
  return execute(query, config, backends, rjv_steps);
}

DecisionRecord run_pda_rda(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  if (config.variant != Variant::rda) throw ConfigError("run_pda_rda called with variant " + std::string(to_string(config.variant)));
  return execute(query, config, backends, rda_steps);
}

DecisionRecord run_pda_pv(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  if (config.variant != Variant::pv) throw ConfigError("run_pda_pv called with variant " + std::string(to_string(config.variant)));
  if (!query.candidates()) throw ConfigError("pv needs a structured task");
  return execute(query, config, backends, pv_steps);
}

DecisionRecord run_caption_pipeline(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  if (!query.is_caption()) throw ConfigError("caption pipeline needs a short caption");
  return execute(query, config, backends, caption_steps);
}

DecisionRecord run_pda(const Query& query, const VariantConfig& config, const AgentBackends& backends) {
  check_preconditions(query, config);
  if (query.is_caption()) return run_caption_pipeline(query, config, backends);
  switch (config.variant) {
    case Variant::full: return run_pda_full(query, config, backends);
    case Variant::rjv: return run_pda_rjv(query, config, backends);
    case Variant::rda: return run_pda_rda(query, config, backends);
    case Variant::pv: return run_pda_pv(query, config, backends);
  }
  throw ConfigError("unreachable variant");
}

std::string run_direct(const Query& query, Backend& victim_vlm) {
  if (query.is_caption()) return *std::get<OpenFormTask>(query.task).short_caption;
  auto reply = victim_vlm.complete(
      vlm_request("answer_atomic", with_options(query.text, query.candidates()), query, StageTag::answering));
  return to_candidate(extract_short_answer(reply.text), query.candidates());
}

}  // namespace pda
