#include "pda/agents.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "pda/json_extract.hpp"
#include "pda/prompts.hpp"

namespace pda {

using nlohmann::json;

namespace {

constexpr std::string_view kFormatReminder =
    "Your previous reply could not be used ({reason}). Reply again and follow the output "
    "format exactly: return only the requested output, with no extra text before or after it.";

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) { return collapse_whitespace(s); }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// A parser either yields a value or explains why the reply is unusable.
template <typename T>
struct Parsed {
  std::optional<T> value;
  std::string reason;

  static Parsed ok(T v) { return Parsed{std::move(v), {}}; }
  static Parsed fail(std::string why) { return Parsed{std::nullopt, std::move(why)}; }
};

template <typename T>
struct Attempted {
  std::optional<T> value;
  std::string last_raw;
  std::string reason;
};

ChatRequest reprompt_of(const ChatRequest& original, const std::string& raw,
                        const std::string& instruction) {
  ChatRequest retry = original;
  retry.reprompt = true;
  retry.messages.push_back({Role::assistant, raw, {}});
  retry.messages.push_back({Role::user, instruction, {}});
  return retry;
}

// One attempt plus at most one reprompt carrying the format reminder.
template <typename T>
Attempted<T> ask_with_reprompt(Backend& backend, const ChatRequest& request,
                               const std::function<Parsed<T>(const std::string&)>& parse) {
  auto first = backend.complete(request);
  auto parsed = parse(first.text);
  if (parsed.value) return {std::move(parsed.value), first.text, {}};

  auto reminder = render(kFormatReminder, {{"reason", parsed.reason}});
  auto second = backend.complete(reprompt_of(request, first.text, reminder));
  auto reparsed = parse(second.text);
  return {std::move(reparsed.value), second.text, reparsed.reason};
}

ChatRequest llm_request(std::string_view asset_name, const PromptVars& vars, StageTag stage,
                        double temperature) {
  const auto& asset = prompt_asset(asset_name);
  auto rendered = render(asset, vars);
  auto request = make_llm_request(stage, asset.name, std::move(rendered.system),
                                  std::move(rendered.user), temperature);
  request.max_output_tokens = 1024;
  return request;
}

std::optional<std::vector<std::string>> string_array(const json& value) {
  if (!value.is_array()) return std::nullopt;
  std::vector<std::string> out;
  for (const auto& item : value) {
    if (!item.is_string()) return std::nullopt;
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::optional<std::string> string_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::optional<AnswerType> parse_answer_type(std::string_view raw) {
  auto s = lower(trim(raw));
  if (s == "yes_no" || s == "yes/no" || s == "yesno" || s == "yes-no") return AnswerType::yes_no;
  if (s == "choice") return AnswerType::choice;
  if (s == "phrase") return AnswerType::phrase;
  return std::nullopt;
}

std::vector<std::string> split_options(std::string_view raw) {
  std::vector<std::string> out;
  std::string current;
  for (char c : raw) {
    if (c == '/' || c == ',' || c == '|') {
      if (auto t = trim(current); !t.empty()) out.push_back(t);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (auto t = trim(current); !t.empty()) out.push_back(t);
  return out;
}

// Count word asserted by a question or answer: one/two/many/none.
std::optional<std::string> count_word_in(std::string_view text) {
  static const std::map<std::string, std::string, std::less<>> words{
      {"one", "one"},     {"single", "one"},   {"alone", "one"},     {"two", "two"},
      {"pair", "two"},    {"couple", "two"},   {"both", "two"},      {"three", "many"},
      {"four", "many"},   {"five", "many"},    {"six", "many"},      {"seven", "many"},
      {"eight", "many"},  {"nine", "many"},    {"ten", "many"},      {"many", "many"},
      {"several", "many"}, {"multiple", "many"}, {"group", "many"},   {"crowd", "many"},
      {"none", "none"},   {"zero", "none"}};
  std::string word;
  auto flush = [&]() -> std::optional<std::string> {
    if (word.empty()) return std::nullopt;
    auto it = words.find(word);
    word.clear();
    if (it == words.end()) return std::nullopt;
    return it->second;
  };
  for (char c : lower(text)) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(c);
    } else if (auto hit = flush()) {
      return hit;
    }
  }
  return flush();
}

std::string strip_suffix(std::string_view text, std::string_view suffix) {
  auto t = trim(text);
  if (ends_with(t, suffix)) t = trim(std::string_view(t).substr(0, t.size() - suffix.size()));
  return t;
}

bool is_generic_subject(std::string_view head) {
  static constexpr std::array<std::string_view, 13> generic{
      "person", "people", "man", "woman", "child", "animal", "vehicle",
      "object", "thing", "room", "unknown", "none", ""};
  auto h = lower(trim(head));
  return std::find(generic.begin(), generic.end(), h) != generic.end();
}

bool is_count_question(std::string_view question) {
  auto q = lower(strip_suffix(question, kYesNoSuffix));
  return count_word_in(q).has_value() || q.find("exactly") != std::string::npos ||
         q.find("how many") != std::string::npos || q.find("number of") != std::string::npos;
}

bool is_appearance_question(std::string_view question) {
  auto q = lower(trim(question));
  return q.find("appearance") != std::string::npos || q.rfind("describe", 0) == 0;
}

json claims_json(const CaptionClaims& claims) {
  json j;
  to_json(j, claims);
  return j;
}

}  // namespace

// ---------------------------------------------------------------- enums

std::string_view to_string(ChangeIntensity intensity) {
  switch (intensity) {
    case ChangeIntensity::low: return "low";
    case ChangeIntensity::medium: return "medium";
    case ChangeIntensity::high: return "high";
  }
  return "medium";
}

ChangeIntensity parse_change_intensity(std::string_view name) {
  if (name == "low") return ChangeIntensity::low;
  if (name == "medium") return ChangeIntensity::medium;
  if (name == "high") return ChangeIntensity::high;
  throw std::invalid_argument("unknown change intensity '" + std::string(name) + "'");
}

std::string_view to_string(AnswerType type) {
  switch (type) {
    case AnswerType::yes_no: return "yes_no";
    case AnswerType::choice: return "choice";
    case AnswerType::phrase: return "phrase";
  }
  return "phrase";
}

std::string_view to_string(SubjectCount count) {
  switch (count) {
    case SubjectCount::one: return "one";
    case SubjectCount::two: return "two";
    case SubjectCount::many: return "many";
    case SubjectCount::unknown: return "unknown";
  }
  return "unknown";
}

std::optional<SubjectCount> parse_subject_count(std::string_view name) {
  auto n = lower(trim(name));
  if (n == "one") return SubjectCount::one;
  if (n == "two") return SubjectCount::two;
  if (n == "many") return SubjectCount::many;
  if (n == "unknown") return SubjectCount::unknown;
  return std::nullopt;
}

// ---------------------------------------------------------------- json

void to_json(json& j, const ParaphraseSet& v) {
  j = json{{"original", v.original},
           {"candidates", v.candidates},
           {"change_intensity", to_string(v.change_intensity)}};
}
void from_json(const json& j, ParaphraseSet& v) {
  v.original = j.at("original").get<std::string>();
  v.candidates = j.at("candidates").get<std::vector<std::string>>();
  v.change_intensity = parse_change_intensity(j.at("change_intensity").get<std::string>());
}

void to_json(json& j, const LogicalParaphraseSet& v) {
  j = json{{"original_question", v.original_question},
           {"original_options", v.original_options},
           {"items", json::array()}};
  for (const auto& item : v.items) {
    j["items"].push_back({{"question", item.question}, {"options", item.options}});
  }
}
void from_json(const json& j, LogicalParaphraseSet& v) {
  v.original_question = j.at("original_question").get<std::string>();
  v.original_options = j.at("original_options").get<std::vector<std::string>>();
  v.items.clear();
  for (const auto& item : j.at("items")) {
    v.items.push_back({item.at("question").get<std::string>(),
                       item.at("options").get<std::vector<std::string>>()});
  }
}

void to_json(json& j, const AtomicQuestionSet& v) {
  j = json{{"paraphrase_index", v.paraphrase_index},
           {"answer_logic", v.answer_logic},
           {"questions", json::array()}};
  for (const auto& q : v.questions) {
    json item{{"sub_index", q.sub_index}, {"text", q.text}, {"answer_type", to_string(q.answer_type)}};
    if (!q.options.empty()) item["options"] = q.options;
    j["questions"].push_back(std::move(item));
  }
}
void from_json(const json& j, AtomicQuestionSet& v) {
  v.paraphrase_index = j.at("paraphrase_index").get<int>();
  v.answer_logic = j.at("answer_logic").get<std::string>();
  v.questions.clear();
  for (const auto& item : j.at("questions")) {
    AtomicQuestion q;
    q.sub_index = item.at("sub_index").get<int>();
    q.text = item.at("text").get<std::string>();
    q.answer_type = parse_answer_type(item.at("answer_type").get<std::string>()).value();
    if (item.contains("options")) q.options = item["options"].get<std::vector<std::string>>();
    v.questions.push_back(std::move(q));
  }
}

void to_json(json& j, const CaptionClaims& v) {
  j = json{{"subject_head", v.subject_head},
           {"subject_count", to_string(v.subject_count)},
           {"key_object", v.key_object},
           {"relation", v.relation},
           {"scene", v.scene}};
}
void from_json(const json& j, CaptionClaims& v) {
  v.subject_head = j.at("subject_head").get<std::string>();
  v.subject_count = parse_subject_count(j.at("subject_count").get<std::string>()).value();
  v.key_object = j.at("key_object").get<std::string>();
  v.relation = j.at("relation").get<std::string>();
  v.scene = j.at("scene").get<std::string>();
}

void to_json(json& j, const CaptionVerdict& v) {
  j = json{{"has_conflict", v.has_conflict},
           {"caption", v.caption},
           {"model_has_conflict", v.model_has_conflict},
           {"gate_allows_edit", v.gate_allows_edit}};
}
void from_json(const json& j, CaptionVerdict& v) {
  v.has_conflict = j.at("has_conflict").get<bool>();
  v.caption = j.at("caption").get<std::string>();
  v.model_has_conflict = j.at("model_has_conflict").get<bool>();
  v.gate_allows_edit = j.at("gate_allows_edit").get<bool>();
}

// ---------------------------------------------------------------- evidence

std::string render_evidence(const std::vector<EvidencePair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto n = std::to_string(i + 1);
    out += "Q" + n + ": " + trim(pairs[i].question) + "\n";
    out += "A" + n + ": " + pairs[i].answer + "\n";
  }
  if (out.empty()) return "(none)";
  out.pop_back();
  return out;
}

// ---------------------------------------------------------------- paraphrase

ParaphraseSet paraphrase_semantic(std::string_view query_text, int n, ChangeIntensity intensity,
                                  Backend& backend) {
  if (n < 1) throw std::invalid_argument("num_candidates must be at least 1");
  auto request = llm_request("paraphrase_semantic",
                             {{"change_intensity", std::string(to_string(intensity))},
                              {"num_candidates", std::to_string(n)},
                              {"input_sentence", std::string(query_text)}},
                             StageTag::paraphrase, kParaphraseTemperature);

  std::function<Parsed<std::vector<std::string>>(const std::string&)> parse =
      [n](const std::string& raw) -> Parsed<std::vector<std::string>> {
    auto obj = extract_json_object(raw);
    if (!obj) return Parsed<std::vector<std::string>>::fail("no JSON object found");
    auto it = obj->find("candidates");
    if (it == obj->end()) return Parsed<std::vector<std::string>>::fail("missing \"candidates\"");
    auto list = string_array(*it);
    if (!list) return Parsed<std::vector<std::string>>::fail("\"candidates\" must be a list of strings");
    if (static_cast<int>(list->size()) != n) {
      return Parsed<std::vector<std::string>>::fail("expected " + std::to_string(n) +
                                                    " candidates, got " + std::to_string(list->size()));
    }
    for (auto& c : *list) {
      c = trim(c);
      if (c.empty()) return Parsed<std::vector<std::string>>::fail("empty candidate");
    }
    return Parsed<std::vector<std::string>>::ok(std::move(*list));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value) {
    throw ParaphraseError("paraphrase agent output unusable: " + result.reason, result.last_raw);
  }
  return ParaphraseSet{std::string(query_text), std::move(*result.value), intensity};
}

LogicalParaphraseSet paraphrase_logical(std::string_view question,
                                        const std::vector<std::string>& options, int n,
                                        Backend& backend) {
  if (options.size() < 2) throw std::invalid_argument("logical paraphrase needs at least two options");
  if (n < 1) throw std::invalid_argument("num_candidates must be at least 1");

  auto request = llm_request("paraphrase_logical",
                             {{"num_candidates", std::to_string(n)},
                              {"options", json(options).dump()},
                              {"input_sentence", std::string(question)}},
                             StageTag::paraphrase, kParaphraseTemperature);

  const std::size_t arity = options.size();
  struct Batch {
    bool well_formed = false;
    std::vector<LogicalItem> items;
    std::size_t rejected = 0;
  };
  auto parse = [arity](const std::string& raw) {
    Batch batch;
    auto obj = extract_json_object(raw);
    if (!obj) return batch;
    auto it = obj->find("generated_questions");
    if (it == obj->end() || !it->is_array()) return batch;
    batch.well_formed = true;
    for (const auto& entry : *it) {
      if (!entry.is_object()) {
        ++batch.rejected;
        continue;
      }
      auto q = string_field(entry, "question");
      auto opts = entry.contains("options") ? string_array(entry["options"]) : std::nullopt;
      bool ok = q && !trim(*q).empty() && opts && opts->size() == arity &&
                std::none_of(opts->begin(), opts->end(),
                             [](const std::string& o) { return trim(o).empty(); });
      if (!ok) {
        ++batch.rejected;
        continue;
      }
      batch.items.push_back({trim(*q), *opts});
    }
    return batch;
  };

  auto first = backend.complete(request);
  auto batch = parse(first.text);
  std::string last_raw = first.text;
  std::vector<LogicalItem> items = batch.items;

  if (!batch.well_formed || items.size() < static_cast<std::size_t>(n)) {
    std::string instruction;
    if (!batch.well_formed) {
      instruction = render(kFormatReminder, {{"reason", "no JSON object with \"generated_questions\""}});
    } else {
      auto missing = static_cast<std::size_t>(n) - items.size();
      instruction = "Some generated questions were unusable because their \"options\" list did not have exactly " +
                    std::to_string(arity) + " entries. Return a single JSON object whose \"generated_questions\" "
                    "holds exactly " + std::to_string(missing) +
                    " more logically equivalent questions in the same format, with the options in the same order.";
    }
    auto second = backend.complete(reprompt_of(request, first.text, instruction));
    last_raw = second.text;
    auto more = parse(second.text);
    if (!batch.well_formed) items.clear();
    items.insert(items.end(), more.items.begin(), more.items.end());
  }

  if (items.size() < static_cast<std::size_t>(n)) {
    throw ParaphraseError("logical paraphrase produced " + std::to_string(items.size()) + " usable items, needed " +
                              std::to_string(n),
                          last_raw);
  }
  items.resize(static_cast<std::size_t>(n));
  return LogicalParaphraseSet{std::string(question), options, std::move(items)};
}

// ---------------------------------------------------------------- decomposition

AtomicQuestionSet decompose_vqa(std::string_view paraphrase_text, int paraphrase_index,
                                Backend& backend, int requested) {
  if (trim(paraphrase_text).empty()) throw std::invalid_argument("paraphrase text is empty");
  requested = std::clamp(requested, 3, 5);
  auto request = llm_request("decompose_vqa",
                             {{"question", std::string(paraphrase_text)},
                              {"num_questions", std::to_string(requested)}},
                             StageTag::decomposition, kDeterministicTemperature);

  using Result = Parsed<AtomicQuestionSet>;
  std::function<Result(const std::string&)> parse = [&](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    auto it = obj->find("sub_questions");
    if (it == obj->end() || !it->is_array()) return Result::fail("missing \"sub_questions\" list");
    if (it->size() < 3 || it->size() > 5) {
      return Result::fail("expected 3-5 sub-questions, got " + std::to_string(it->size()));
    }
    if (static_cast<int>(it->size()) < requested) {
      return Result::fail("expected " + std::to_string(requested) + " sub-questions, got " +
                          std::to_string(it->size()));
    }
    AtomicQuestionSet set;
    set.paraphrase_index = paraphrase_index;
    int position = 0;
    for (const auto& entry : *it) {
      ++position;
      if (!entry.is_object()) return Result::fail("sub-question is not an object");
      auto text = string_field(entry, "question");
      if (!text || trim(*text).empty()) return Result::fail("sub-question without text");
      auto type_text = string_field(entry, "answer_type");
      auto type = type_text ? parse_answer_type(*type_text) : std::nullopt;
      if (!type) return Result::fail("sub-question with invalid answer_type");
      AtomicQuestion q{position, trim(*text), *type, {}};
      if (*type == AnswerType::choice) {
        auto opt = entry.find("options");
        if (opt != entry.end() && opt->is_string()) {
          q.options = split_options(opt->get<std::string>());
        } else if (opt != entry.end()) {
          if (auto list = string_array(*opt)) q.options = *list;
        }
        if (q.options.empty()) return Result::fail("choice sub-question without options");
      }
      set.questions.push_back(std::move(q));
    }
    set.answer_logic = string_field(*obj, "answer_logic").value_or("");
    return Result::ok(std::move(set));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value) {
    throw DecompositionError("decomposition output unusable: " + result.reason, result.last_raw);
  }
  return std::move(*result.value);
}

CaptionClaims extract_caption_claims(std::string_view short_caption, Backend& backend) {
  if (trim(short_caption).empty()) throw std::invalid_argument("short caption is empty");
  auto request = llm_request("extract_claims", {{"SHORT_CAPTION", std::string(short_caption)}},
                             StageTag::decomposition, kDeterministicTemperature);

  using Result = Parsed<CaptionClaims>;
  std::function<Result(const std::string&)> parse = [](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    CaptionClaims claims;
    for (const char* key : {"subject_head", "subject_count", "key_object", "relation", "scene"}) {
      if (!string_field(*obj, key)) return Result::fail(std::string("missing key \"") + key + "\"");
    }
    auto value = [&](const char* key) {
      auto v = lower(trim(*string_field(*obj, key)));
      return v.empty() ? std::string("unknown") : v;
    };
    auto count = parse_subject_count(value("subject_count"));
    if (!count) return Result::fail("subject_count outside one/two/many/unknown");
    claims.subject_head = value("subject_head");
    claims.subject_count = *count;
    claims.key_object = value("key_object");
    claims.relation = value("relation");
    claims.scene = value("scene");
    return Result::ok(claims);
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value) throw ClaimError("claim extraction output unusable: " + result.reason, result.last_raw);
  return *result.value;
}

AtomicQuestionSet decompose_caption_verify(const CaptionClaims& claims,
                                           std::string_view detailed_caption, Backend& backend,
                                           int round, int rounds) {
  auto request = llm_request("decompose_caption",
                             {{"claims", claims_json(claims).dump(2)},
                              {"detailed_caption", trim(detailed_caption).empty()
                                                       ? std::string("(none)")
                                                       : std::string(detailed_caption)},
                              {"round", std::to_string(round)},
                              {"rounds", std::to_string(rounds)}},
                             StageTag::decomposition, kDeterministicTemperature);

  const bool count_asserted = claims.subject_count != SubjectCount::unknown;
  const bool specific_subject = !is_generic_subject(claims.subject_head);

  using Result = Parsed<AtomicQuestionSet>;
  std::function<Result(const std::string&)> parse = [&](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    auto it = obj->find("sub_questions");
    if (it == obj->end() || !it->is_array()) return Result::fail("missing \"sub_questions\" list");
    std::vector<std::string> texts;
    for (const auto& entry : *it) {
      if (entry.is_string()) {
        texts.push_back(trim(entry.get<std::string>()));
      } else if (entry.is_object() && string_field(entry, "question")) {
        texts.push_back(trim(*string_field(entry, "question")));
      } else {
        return Result::fail("sub-question is not a string");
      }
    }
    if (texts.size() < 3 || texts.size() > 5) {
      return Result::fail("expected 3-5 sub-questions, got " + std::to_string(texts.size()));
    }
    bool generic_count = false, yes_no_count = false, appearance = false;
    AtomicQuestionSet set;
    set.paraphrase_index = round;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto& t = texts[i];
      if (t.empty()) return Result::fail("empty sub-question");
      if (lower(t).find("answer") == std::string::npos) {
        return Result::fail("sub-question without its own answer-format instruction");
      }
      AtomicQuestion q{static_cast<int>(i + 1), t, AnswerType::phrase, {}};
      if (ends_with(t, kGenericCountSuffix)) {
        generic_count = true;
        q.answer_type = AnswerType::choice;
        q.options = {"one", "two", "many", "none", "unclear"};
      } else if (ends_with(t, kYesNoSuffix)) {
        q.answer_type = AnswerType::yes_no;
        if (is_count_question(t)) yes_no_count = true;
      }
      if (is_appearance_question(t)) appearance = true;
      set.questions.push_back(std::move(q));
    }
    if (count_asserted && !(generic_count && yes_no_count)) {
      return Result::fail("asserted subject count needs a generic count question and a yes/no count check");
    }
    if (specific_subject && !appearance) {
      return Result::fail("specific subject needs an appearance question");
    }
    return Result::ok(std::move(set));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value) {
    throw DecompositionError("caption verification output unusable: " + result.reason, result.last_raw);
  }
  return std::move(*result.value);
}

std::string check_sub_answer(std::string_view question, const std::vector<EvidencePair>& earlier,
                             std::string_view sub_question, std::string_view answer,
                             Backend& backend) {
  auto request = llm_request("check_sub_answer",
                             {{"question", std::string(question)},
                              {"sub", render_evidence(earlier)},
                              {"sub_question", std::string(sub_question)},
                              {"answer", std::string(answer)}},
                             StageTag::decomposition, kDeterministicTemperature);

  using Result = Parsed<std::string>;
  std::function<Result(const std::string&)> parse = [](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    auto ans = string_field(*obj, "answer");
    auto consistent = obj->find("consistent");
    if (!ans || consistent == obj->end() || !consistent->is_boolean()) {
      return Result::fail("expected {\"answer\": string, \"consistent\": boolean}");
    }
    if (!consistent->get<bool>()) return Result::ok(std::string(kUnclear));
    return Result::ok(extract_short_answer(*ans));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  // a checker that cannot be read must not erase the probe
  return result.value ? *result.value : normalize_answer(answer);
}

// ---------------------------------------------------------------- aggregation

std::string aggregate_structured(std::string_view question, const EvidenceSet& evidence,
                                 Backend& backend, StageTag stage) {
  if (evidence.pairs.empty()) throw std::invalid_argument("evidence set is empty");
  const auto& asset = prompt_asset("aggregate_vqa");
  auto rendered = render(asset, {{"question", std::string(question)}, {"sub", render_evidence(evidence.pairs)}});
  auto request = make_llm_request(stage, asset.name, "", std::move(rendered.user), kDeterministicTemperature);
  request.max_output_tokens = 32;

  using Result = Parsed<std::string>;
  std::function<Result(const std::string&)> parse = [](const std::string& raw) -> Result {
    std::string text = raw;
    if (auto obj = extract_json_object(raw)) {
      if (auto ans = string_field(*obj, "answer")) text = *ans;
    }
    auto answer = extract_short_answer(text);
    if (word_count(answer) > 4) return Result::fail("answer longer than four words");
    return Result::ok(std::move(answer));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  return result.value ? *result.value : std::string(kUnclear);
}

JudgedAnswer judge_paraphrase(std::string_view paraphrase_text, std::string_view vlm_answer,
                              std::string_view rationale, Backend& backend, int paraphrase_index) {
  const std::string fallback_label = normalize_answer(vlm_answer);
  const bool has_rationale = !trim(rationale).empty();
  auto request = llm_request("judge_paraphrase",
                             {{"question", std::string(paraphrase_text)},
                              {"answer", std::string(vlm_answer)},
                              {"rationale", has_rationale ? std::string(rationale) : "(none given)"}},
                             StageTag::judging, kDeterministicTemperature);

  using Result = Parsed<JudgedAnswer>;
  std::function<Result(const std::string&)> parse = [&](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    auto label = string_field(*obj, "label");
    if (!label) return Result::fail("missing \"label\"");
    JudgedAnswer judged;
    judged.paraphrase_index = paraphrase_index;
    judged.label = extract_short_answer(*label);
    if (judged.label == kUnclear) judged.label = fallback_label;
    judged.rationale = string_field(*obj, "rationale").value_or("");
    auto conf = obj->find("confidence");
    if (conf != obj->end() && !conf->is_null()) {
      double w = 0.0;
      if (conf->is_number()) {
        w = conf->get<double>();
      } else if (conf->is_string()) {
        char* end = nullptr;
        auto s = conf->get<std::string>();
        w = std::strtod(s.c_str(), &end);
        if (end == s.c_str()) return Result::fail("confidence is not a number");
      } else {
        return Result::fail("confidence is not a number");
      }
      if (std::isnan(w)) return Result::fail("confidence is NaN");
      judged.weight = std::clamp(w, 0.0, 1.0);
    }
    return Result::ok(std::move(judged));
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value || !has_rationale) {
    return JudgedAnswer{paraphrase_index, fallback_label, 1.0, std::string(rationale)};
  }
  return std::move(*result.value);
}

std::string aggregate_global(std::string_view question, const std::vector<AnswerTuple>& tuples,
                             Backend& backend, const CandidateSet* candidates) {
  if (tuples.empty()) throw std::invalid_argument("aggregate_global needs at least one tuple");
  std::string sub;
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    auto n = std::to_string(i + 1);
    sub += "Paraphrase " + n + ": " + trim(tuples[i].paraphrase) + "\n";
    sub += "Answer " + n + ": " + tuples[i].answer + "\n";
    sub += "Rationale " + n + ": " + (trim(tuples[i].rationale).empty() ? "(none)" : trim(tuples[i].rationale)) + "\n";
  }
  sub.pop_back();
  auto request = llm_request("aggregate_global", {{"question", std::string(question)}, {"sub", sub}},
                             StageTag::aggregation, kDeterministicTemperature);
  auto response = backend.complete(request);

  std::optional<std::string> answer;
  if (auto obj = extract_json_object(response.text)) {
    if (auto a = string_field(*obj, "answer")) answer = extract_short_answer(*a);
  } else if (auto plain = extract_short_answer(response.text); word_count(plain) <= 4) {
    answer = plain;
  }
  if (answer && (*answer == kUnclear || word_count(*answer) > 4)) answer.reset();
  if (answer && candidates) answer = map_to_candidates(*answer, *candidates);
  if (answer) return *answer;

  std::vector<std::string> votes;
  for (const auto& t : tuples) {
    if (candidates) {
      votes.push_back(map_to_candidates(t.answer, *candidates).value_or(std::string(kUnclear)));
    } else {
      votes.push_back(t.answer);
    }
  }
  return candidates ? majority_vote(votes, *candidates) : majority_vote(votes, CandidateSet::from_votes(votes));
}

bool caption_gate_allows_edit(const CaptionClaims& claims, const std::vector<EvidencePair>& evidence) {
  for (const auto& pair : evidence) {
    if (pair.answer == "no") return true;
  }
  if (claims.subject_count == SubjectCount::unknown) return false;
  const std::string asserted(to_string(claims.subject_count));
  std::map<std::string, int> alternatives;
  for (const auto& pair : evidence) {
    auto q = trim(pair.question);
    if (ends_with(q, kGenericCountSuffix)) {
      auto said = count_word_in(pair.answer);
      if (said && *said != asserted) ++alternatives[*said];
    } else if (pair.answer == "yes") {
      auto named = count_word_in(strip_suffix(q, kYesNoSuffix));
      if (named && *named != asserted) ++alternatives[*named];
    }
  }
  return std::any_of(alternatives.begin(), alternatives.end(), [](const auto& kv) { return kv.second >= 2; });
}

CaptionVerdict caption_judge(std::string_view short_caption, const CaptionClaims& claims,
                             const std::vector<EvidencePair>& evidence, Backend& backend) {
  CaptionVerdict keep{false, std::string(short_caption), false, false};
  if (evidence.empty()) return keep;

  const bool gate = caption_gate_allows_edit(claims, evidence);
  auto request = llm_request("caption_judge",
                             {{"SHORT_CAPTION", std::string(short_caption)},
                              {"claims", claims_json(claims).dump(2)},
                              {"sub", render_evidence(evidence)}},
                             StageTag::aggregation, kDeterministicTemperature);

  struct ModelVerdict {
    bool has_conflict;
    std::string caption;
  };
  using Result = Parsed<ModelVerdict>;
  std::function<Result(const std::string&)> parse = [](const std::string& raw) -> Result {
    auto obj = extract_json_object(raw);
    if (!obj) return Result::fail("no JSON object found");
    auto flag = obj->find("has_conflict");
    auto caption = string_field(*obj, "caption");
    if (flag == obj->end() || !flag->is_boolean() || !caption) {
      return Result::fail("expected {\"has_conflict\": boolean, \"caption\": string}");
    }
    return Result::ok(ModelVerdict{flag->get<bool>(), *caption});
  };

  auto result = ask_with_reprompt(backend, request, parse);
  if (!result.value) return keep;

  CaptionVerdict verdict = keep;
  verdict.model_has_conflict = result.value->has_conflict;
  verdict.gate_allows_edit = gate;
  verdict.has_conflict = gate;
  if (gate && result.value->has_conflict && !trim(result.value->caption).empty()) {
    verdict.caption = result.value->caption;
  }
  return verdict;
}

}  // namespace pda
