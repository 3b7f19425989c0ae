#include <fstream>
#include <set>

#include "pda/harness.hpp"

namespace pda {

using nlohmann::json;

std::string_view to_string(DatasetSchema schema) {
  switch (schema) {
    case DatasetSchema::vqa: return "vqa";
    case DatasetSchema::classification: return "classification";
    case DatasetSchema::caption: return "caption";
  }
  return "vqa";
}

DatasetSchema parse_dataset_schema(std::string_view name) {
  if (name == "vqa") return DatasetSchema::vqa;
  if (name == "classification") return DatasetSchema::classification;
  if (name == "caption") return DatasetSchema::caption;
  throw ConfigError("unknown dataset schema '" + std::string(name) + "' (expected vqa, classification or caption)");
}

namespace {

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::runtime_error(std::string("missing field \"") + key + "\"");
  if (!it->is_string() || collapse_whitespace(it->get<std::string>()).empty()) {
    throw std::runtime_error(std::string("field \"") + key + "\" must be a non-empty string");
  }
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::runtime_error(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

std::vector<std::string> string_list(const json& j, const char* key, bool required) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw std::runtime_error(std::string("missing field \"") + key + "\"");
    return {};
  }
  if (!it->is_array()) throw std::runtime_error(std::string("field \"") + key + "\" must be a list of strings");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw std::runtime_error(std::string("field \"") + key + "\" must be a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

DatasetItem parse_item(const json& j, DatasetSchema schema) {
  if (!j.is_object()) throw std::runtime_error("line is not a JSON object");
  DatasetItem item;
  auto id = j.find("id");
  if (id == j.end()) throw std::runtime_error("missing field \"id\"");
  if (id->is_string() && !id->get<std::string>().empty()) {
    item.id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    item.id = std::to_string(id->get<long long>());
  } else {
    throw std::runtime_error("field \"id\" must be a non-empty string or an integer");
  }
  item.image_ref = required_string(j, "image");
  if (auto split = optional_string(j, "split")) {
    if (*split != "clean" && *split != "adversarial") {
      throw std::runtime_error("field \"split\" must be \"clean\" or \"adversarial\"");
    }
    item.adversarial = *split == "adversarial";
  }

  switch (schema) {
    case DatasetSchema::vqa:
      item.question = required_string(j, "question");
      item.gold = string_list(j, "answers", false);
      break;
    case DatasetSchema::classification: {
      item.question = required_string(j, "question");
      item.candidates = string_list(j, "candidates", true);
      if (item.candidates.size() < 2) throw std::runtime_error("\"candidates\" needs at least two labels");
      CandidateSet set(item.candidates);  // rejects labels that collide after normalization
      if (auto gold = optional_string(j, "gold")) {
        if (!set.contains(normalize_answer(*gold))) throw std::runtime_error("\"gold\" is not one of the candidates");
        item.gold = {*gold};
      }
      break;
    }
    case DatasetSchema::caption:
      item.short_caption = required_string(j, "short_caption");
      item.detailed_caption = optional_string(j, "detailed_caption");
      item.gold = string_list(j, "gold_captions", false);
      break;
  }
  return item;
}

}  // namespace

std::vector<DatasetItem> parse_dataset(std::istream& in, DatasetSchema schema) {
  std::vector<DatasetItem> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (collapse_whitespace(line).empty()) continue;
    auto where = "line " + std::to_string(line_no) + ": ";
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DatasetError(where + "invalid JSON");
    try {
      auto item = parse_item(j, schema);
      if (!seen.insert(item.id).second) throw std::runtime_error("duplicate id \"" + item.id + "\"");
      items.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw DatasetError(where + e.what() + " (schema " + std::string(to_string(schema)) + ")");
    }
  }
  return items;
}

std::vector<DatasetItem> load_dataset(const std::filesystem::path& path, DatasetSchema schema) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  return parse_dataset(in, schema);
}

Query to_query(const DatasetItem& item) {
  Query q;
  q.id = item.id;
  q.image_ref = item.image_ref;
  q.text = item.question;
  q.gold = item.gold;
  q.adversarial_flag = item.adversarial;
  if (!item.candidates.empty()) {
    q.task = StructuredTask{CandidateSet(item.candidates)};
  } else {
    q.task = OpenFormTask{item.short_caption, item.detailed_caption};
  }
  return q;
}

}  // namespace pda
