#include "pda/answerspace.hpp"

#include "pda/chat.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <stdexcept>

namespace pda {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    auto start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) words.push_back(s.substr(start, i - start));
  }
  return words;
}

// True when `needle` occurs in `hay` as a contiguous run of whole words.
bool contains_words(std::string_view hay, std::string_view needle) {
  auto h = split_words(hay);
  auto n = split_words(needle);
  if (n.empty() || n.size() > h.size()) return false;
  for (std::size_t i = 0; i + n.size() <= h.size(); ++i) {
    if (std::equal(n.begin(), n.end(), h.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

std::string normalize_once(std::string s) {
  // trim + collapse
  std::string collapsed;
  bool space = false;
  for (char c : s) {
    if (is_space(c)) {
      space = !collapsed.empty();
      continue;
    }
    if (space) collapsed.push_back(' ');
    space = false;
    collapsed.push_back(c);
  }
  s = std::move(collapsed);

  std::size_t b = 0, e = s.size();
  while (b < e && (is_punct(s[b]) || is_space(s[b]))) ++b;
  while (e > b && (is_punct(s[e - 1]) || is_space(s[e - 1]))) --e;
  s = s.substr(b, e - b);

  for (const std::string_view article : {"a ", "an ", "the "}) {
    if (s.size() > article.size() && s.compare(0, article.size(), article) == 0) {
      s.erase(0, article.size());
      break;
    }
  }
  return s;
}

}  // namespace

std::string normalize_answer(std::string_view raw) {
  std::string s(raw);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    // "t-shirt" and "t shirt" are the same label
    if (s[i] == '-' && i > 0 && i + 1 < s.size() && std::isalpha(static_cast<unsigned char>(s[i - 1])) &&
        std::isalpha(static_cast<unsigned char>(s[i + 1]))) {
      s[i] = ' ';
    }
  }
  for (;;) {
    auto next = normalize_once(s);
    if (next == s) break;
    s = std::move(next);
  }
  if (s.empty()) return std::string(kUnclear);
  return s;
}

std::string extract_short_answer(std::string_view raw) {
  std::string text(raw);
  text.erase(std::remove(text.begin(), text.end(), '*'), text.end());
  text.erase(std::remove(text.begin(), text.end(), '`'), text.end());

  std::string line;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto candidate = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    if (!collapse_whitespace(candidate).empty()) {
      line = candidate;
      break;
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }

  static const std::regex lead_in(
      R"(^\s*(final\s+answer|the\s+answer\s+is|answer\s+is|short\s+answer|answer)\s*[:\-]?\s*)",
      std::regex::icase);
  line = std::regex_replace(line, lead_in, "", std::regex_constants::format_first_only);
  return normalize_answer(line);
}

std::size_t word_count(std::string_view text) { return split_words(collapse_whitespace(text)).size(); }

CandidateSet::CandidateSet(const std::vector<std::string>& labels) {
  if (labels.empty()) throw std::invalid_argument("candidate set must not be empty");
  for (const auto& raw : labels) {
    auto label = normalize_answer(raw);
    if (index_of(label)) {
      throw std::invalid_argument("duplicate candidate label '" + label + "'");
    }
    labels_.push_back(std::move(label));
  }
}

CandidateSet CandidateSet::from_votes(std::span<const std::string> votes) {
  CandidateSet out;
  for (const auto& v : votes) {
    if (v == kUnclear || v.empty() || out.index_of(v)) continue;
    out.labels_.push_back(v);
  }
  return out;
}

std::optional<std::size_t> CandidateSet::index_of(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

std::optional<std::string> map_to_candidates(std::string_view answer,
                                             const CandidateSet& candidates) {
  if (answer == kUnclear || answer.empty()) return std::nullopt;
  if (candidates.contains(answer)) return std::string(answer);
  std::optional<std::string> hit;
  for (const auto& label : candidates.labels()) {
    if (contains_words(answer, label) || contains_words(label, answer)) {
      if (hit) return std::nullopt;  // ambiguous
      hit = label;
    }
  }
  return hit;
}

double VoteTally::score(std::string_view label) const {
  for (const auto& [l, s] : scores) {
    if (l == label) return s;
  }
  return 0.0;
}

double VoteTally::margin() const {
  double top = 0.0, second = 0.0;
  for (const auto& [label, s] : scores) {
    if (s > top) {
      second = top;
      top = s;
    } else if (s > second) {
      second = s;
    }
  }
  return top - second;
}

void to_json(nlohmann::json& j, const VoteTally& tally) {
  j = nlohmann::json{{"scores", nlohmann::json::array()},
                     {"total_weight", tally.total_weight},
                     {"excluded", tally.excluded}};
  for (const auto& [label, s] : tally.scores) j["scores"].push_back({label, s});
}

void from_json(const nlohmann::json& j, VoteTally& tally) {
  tally = VoteTally{};
  for (const auto& entry : j.at("scores")) {
    tally.scores.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<double>());
  }
  tally.total_weight = j.at("total_weight").get<double>();
  tally.excluded = j.at("excluded").get<std::size_t>();
}

VoteTally weighted_scores(std::span<const WeightedLabel> votes, const CandidateSet& candidates) {
  VoteTally tally;
  for (const auto& label : candidates.labels()) tally.scores.emplace_back(label, 0.0);
  for (const auto& vote : votes) {
    auto idx = vote.label == kUnclear ? std::nullopt : candidates.index_of(vote.label);
    if (!idx) {
      ++tally.excluded;
      continue;
    }
    tally.scores[*idx].second += vote.weight;
    tally.total_weight += vote.weight;
  }
  return tally;
}

VoteTally evidence_scores(std::span<const std::string> votes, const CandidateSet& candidates) {
  std::vector<WeightedLabel> weighted;
  weighted.reserve(votes.size());
  for (const auto& v : votes) weighted.push_back({v, 1.0});
  return weighted_scores(weighted, candidates);
}

std::string argmax_label(const VoteTally& tally) {
  const std::pair<std::string, double>* best = nullptr;
  for (const auto& entry : tally.scores) {
    if (entry.second > 0.0 && (best == nullptr || entry.second > best->second)) best = &entry;
  }
  return best ? best->first : std::string(kUnclear);
}

std::string majority_vote(std::span<const std::string> votes, const CandidateSet& candidates) {
  return argmax_label(evidence_scores(votes, candidates));
}

std::string weighted_vote(std::span<const WeightedLabel> votes, const CandidateSet& candidates) {
  return argmax_label(weighted_scores(votes, candidates));
}

std::optional<std::string> map_pv_option(std::string_view answer,
                                         const std::vector<std::string>& item_options,
                                         const std::vector<std::string>& original_options) {
  if (item_options.size() != original_options.size()) {
    throw std::invalid_argument("item and original option lists differ in length");
  }
  auto position = [&](const std::vector<std::string>& options) -> std::optional<std::size_t> {
    std::vector<std::string> normalized;
    for (const auto& o : options) normalized.push_back(normalize_answer(o));
    // paraphrased options may collide after normalization; treat as unmatched
    try {
      CandidateSet set(normalized);
      auto hit = map_to_candidates(answer, set);
      if (!hit) return std::nullopt;
      return set.index_of(*hit);
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  };
  auto pos = position(item_options);
  if (!pos) pos = position(original_options);
  if (!pos) return std::nullopt;
  return normalize_answer(original_options[*pos]);
}

void to_json(nlohmann::json& j, const EvidencePair& pair) {
  j = nlohmann::json{{"sub_index", pair.sub_index},
                     {"question", pair.question},
                     {"raw_answer", pair.raw_answer},
                     {"answer", pair.answer}};
}

void from_json(const nlohmann::json& j, EvidencePair& pair) {
  pair.sub_index = j.at("sub_index").get<int>();
  pair.question = j.at("question").get<std::string>();
  pair.raw_answer = j.at("raw_answer").get<std::string>();
  pair.answer = j.at("answer").get<std::string>();
}

void to_json(nlohmann::json& j, const EvidenceSet& set) {
  j = nlohmann::json{{"paraphrase_index", set.paraphrase_index}, {"pairs", set.pairs}};
}

void from_json(const nlohmann::json& j, EvidenceSet& set) {
  set.paraphrase_index = j.at("paraphrase_index").get<int>();
  set.pairs = j.at("pairs").get<std::vector<EvidencePair>>();
}

}  // namespace pda
