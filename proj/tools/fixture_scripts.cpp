#include "fixture_scripts.hpp"

#include <array>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "pda/synthetic_backend.hpp"

namespace pda::fixtures {

using nlohmann::json;

namespace {

const std::string& user_text(const ChatRequest& request) {
  for (const auto& m : request.messages) {
    if (m.role == Role::user) return m.content;
  }
  throw std::logic_error("request without a user message");
}

bool has(const std::string& text, const std::string& needle) { return text.find(needle) != std::string::npos; }

// First line after a heading line.
std::string line_after(const std::string& text, const std::string& heading) {
  auto pos = text.find(heading + "\n");
  if (pos == std::string::npos) return {};
  pos += heading.size() + 1;
  return text.substr(pos, text.find('\n', pos) - pos);
}

const std::string kTshirtQuestion = "What is the main object in this image? Choose from the following list: jeans, t shirt.";

const std::array<std::string, 5> kParaphrases{
    "Which item is the most prominent object in this photo: jeans or a t shirt?",
    "What garment is shown as the main subject of the image, jeans or a t shirt?",
    "Looking at the picture, is the central object a pair of jeans or a t shirt?",
    "Identify the primary clothing item in the image: jeans or t shirt.",
    "What is the main thing pictured here, jeans or a t shirt?"};

// Three atomic checks per paraphrase: prominence, body region, garment type.
const std::array<std::array<std::string, 3>, 5> kSubQuestions{{
    {"Which clothing item covers the largest area of the photo?", "Is that item worn on the upper or the lower body?",
     "Does that item have sleeves?"},
    {"Which garment is in the center of the image?", "Which body region does the central garment cover?",
     "Is the central garment made of denim?"},
    {"What clothing item is closest to the camera?", "Is the closest item a top or a bottom?",
     "Does the closest item have a neckline?"},
    {"Which piece of clothing stands out the most?", "Where on the body is that piece worn?",
     "Does that piece have two leg openings?"},
    {"What item fills most of the frame?", "Is the item in the frame upper wear or lower wear?",
     "Does the item in the frame have short sleeves?"},
}};

// The attack still fools the view built from paraphrase 4.
const std::array<std::array<std::string, 3>, 5> kSubAnswers{{
    {"T shirt", "Upper body.", "Yes"},
    {"t-shirt", "upper body", "No"},
    {"The t shirt", "A top", "Yes"},
    {"Jeans", "Lower body", "Yes"},
    {"t shirt", "upper wear", "Yes."},
}};

struct LogicalView {
  std::string question;
  std::vector<std::string> options;
  std::string answer;
};

const std::array<LogicalView, 5> kLogical{{
    {"Is the main object worn on the lower body or the upper body?", {"lower wear", "upper wear"}, "Upper wear"},
    {"Is the main object denim trousers or a cotton top?", {"denim trousers", "cotton top"}, "cotton top"},
    {"Is the main object a pair of pants or a shirt?", {"pants", "shirt"}, "Pants"},
    {"Is the main object legwear or topwear?", {"legwear", "topwear"}, "Topwear."},
    {"Is the main object jeans or a t shirt?", {"jeans", "t shirt"}, "T-shirt"},
}};

int paraphrase_in(const std::string& text) {
  for (std::size_t i = 0; i < kParaphrases.size(); ++i) {
    if (has(text, kParaphrases[i])) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

Query tshirt_query() {
  Query q;
  q.id = "tshirt-jeans";
  q.image_ref = "images/tshirt_adv.png";
  q.text = kTshirtQuestion;
  q.task = StructuredTask{CandidateSet({"jeans", "t shirt"})};
  q.gold = {"t shirt"};
  q.adversarial_flag = true;
  return q;
}

std::string tshirt_reply(const ChatRequest& request) {
  const auto& text = user_text(request);
  const auto& agent = request.agent;

  if (agent == "paraphrase_semantic") {
    json out{{"candidates", kParaphrases}};
    return "```json\n" + out.dump(2) + "\n```";
  }
  if (agent == "paraphrase_logical") {
    json items = json::array();
    for (const auto& v : kLogical) items.push_back({{"question", v.question}, {"options", v.options}});
    return "Here are the logically equivalent questions:\n" + json{{"generated_questions", items}}.dump(2);
  }
  if (agent == "decompose_vqa") {
    int p = paraphrase_in(text);
    if (p < 0) throw std::logic_error("unscripted decomposition request");
    json subs = json::array();
    const auto& q = kSubQuestions[static_cast<std::size_t>(p)];
    subs.push_back({{"question", q[0]}, {"answer_type", "phrase"}});
    subs.push_back({{"question", q[1]}, {"answer_type", "phrase"}});
    subs.push_back({{"question", q[2]}, {"answer_type", "yes_no"}});
    return json{{"sub_questions", subs}, {"answer_logic", "Upper-body garment with sleeves means t shirt."}}.dump(2);
  }
  if (agent == "check_sub_answer") {
    return json{{"answer", line_after(text, "Answer:")}, {"consistent", true}}.dump();
  }
  if (agent == "aggregate_vqa") {
    if (has(text, kTshirtQuestion)) return "t shirt";
    return has(text, "A1: jeans") ? "Jeans" : "T shirt";
  }
  if (agent == "judge_paraphrase") {
    auto answer = line_after(text, "Model answer:");
    double confidence = normalize_answer(answer) == "jeans" ? 0.55 : 0.9;
    return json{{"label", answer}, {"confidence", confidence}, {"rationale", "matches the stated evidence"}}.dump();
  }
  if (agent == "aggregate_global") {
    return "Most tuples point to an upper-body garment.\n{\"answer\": \"t shirt\"}";
  }

  // victim model
  if (has(text, kTshirtQuestion)) return "Jeans.";
  if (agent == "answer_with_rationale") {
    int p = paraphrase_in(text);
    if (p == 3) return "Answer: jeans\nRationale: blue denim fabric is visible.";
    return "Answer: t shirt\nRationale: a short-sleeved top fills the frame.";
  }
  for (std::size_t p = 0; p < kSubQuestions.size(); ++p) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (has(text, kSubQuestions[p][j])) return kSubAnswers[p][j];
    }
  }
  for (const auto& v : kLogical) {
    if (has(text, v.question)) return v.answer;
  }
  throw std::logic_error("unscripted request for agent " + agent);
}

std::vector<VariantConfig> tshirt_configs() {
  std::vector<VariantConfig> out;
  for (auto v : {Variant::full, Variant::rjv, Variant::rda, Variant::pv}) out.push_back(VariantConfig::defaults(v));
  return out;
}

// ---------------------------------------------------------------- caption

namespace {

const std::string kShortCaption = "Two dogs playing with a red ball on the grass.";
const std::string kDetailedCaption =
    "A single brown dog with short fur runs across a green lawn, chasing a red ball. No other animals are visible.";

const std::array<std::array<std::string, 4>, 2> kCaptionProbes{{
    {"How many dogs are visible in the image? Answer exactly: 'one', 'two', 'many', 'none', or 'unclear'.",
     "Are there exactly two dogs in the image? Answer exactly: 'yes', 'no', or 'unclear'.",
     "Describe the appearance of the dog. Answer in a short phrase.",
     "Is there a red ball in the image? Answer exactly: 'yes', 'no', or 'unclear'."},
    {"Count the dogs that appear in the photo. Answer exactly: 'one', 'two', 'many', 'none', or 'unclear'.",
     "Does the photo show two dogs? Answer exactly: 'yes', 'no', or 'unclear'.",
     "Describe the appearance of the dog's fur. Answer in a short phrase.",
     "Is the dog on grass? Answer exactly: 'yes', 'no', or 'unclear'."},
}};

const std::array<std::array<std::string, 4>, 2> kCaptionAnswers{{
    {"one", "No", "brown, short-haired", "yes"},
    {"One.", "no", "short brown fur", "Yes"},
}};

}  // namespace

Query caption_query() {
  Query q;
  q.id = "two-dogs";
  q.image_ref = "images/dog_ball.jpg";
  q.task = OpenFormTask{kShortCaption, kDetailedCaption};
  q.gold = {"A brown dog chasing a red ball across a lawn."};
  return q;
}

std::string caption_reply(const ChatRequest& request) {
  const auto& text = user_text(request);
  const auto& agent = request.agent;
  if (agent == "extract_claims") {
    return json{{"subject_head", "dog"}, {"subject_count", "two"}, {"key_object", "red ball"},
                {"relation", "playing with"}, {"scene", "grass"}}
        .dump(2);
  }
  if (agent == "decompose_caption") {
    std::size_t round = has(text, "Verification round 2") ? 1 : 0;
    return json{{"sub_questions", kCaptionProbes[round]}}.dump(2);
  }
  if (agent == "caption_judge") {
    return json{{"has_conflict", true}, {"caption", "One dog playing with a red ball on the grass."}}.dump(2);
  }
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (has(text, kCaptionProbes[r][j])) return kCaptionAnswers[r][j];
    }
  }
  throw std::logic_error("unscripted request for agent " + agent);
}

// ---------------------------------------------------------------- recording

namespace {

void require_ok(const DecisionRecord& record) {
  if (record.status != RecordStatus::ok) throw std::logic_error("scripted run failed: " + record.error);
}

}  // namespace

ReplayScript record_tshirt_script() {
  ScriptedBackend scripted("scripted", tshirt_reply);
  RecordingBackend recorder(scripted);
  const auto query = tshirt_query();
  for (const auto& config : tshirt_configs()) require_ok(run_pda(query, config, AgentBackends::uniform(recorder)));
  run_direct(query, recorder);
  return recorder.script();
}

ReplayScript record_caption_script() {
  ScriptedBackend scripted("scripted", caption_reply);
  RecordingBackend recorder(scripted);
  require_ok(run_pda(caption_query(), VariantConfig::defaults(Variant::full, true), AgentBackends::uniform(recorder)));
  return recorder.script();
}

std::string cli_dataset_jsonl() {
  return R"({"id": "c1", "image": "images/c1.jpg", "question": "Which animal is shown?", "candidates": ["cat", "dog"], "gold": "cat", "split": "adversarial"}
{"id": "c2", "image": "images/c2.jpg", "question": "What is flying in the sky?", "candidates": ["bird", "plane"], "gold": "plane", "split": "adversarial"}
{"id": "c3", "image": "images/c3.jpg", "question": "What color is the car?", "candidates": ["red", "blue"], "gold": "blue"}
)";
}

ReplayScript record_cli_script() {
  std::istringstream in(cli_dataset_jsonl());
  auto items = parse_dataset(in, DatasetSchema::classification);
  SyntheticVlmConfig vlm;
  vlm.seed = 7;
  vlm.q_clean = 0.9;
  vlm.q_adv = 0.8;
  for (const auto& item : items) {
    for (const auto& c : item.candidates) vlm.candidate_answers.push_back(c);
    vlm.truth_by_image[item.image_ref] = item.gold.front();
  }
  vlm.correct_label = vlm.candidate_answers.front();
  SyntheticBackend synthetic(vlm);
  RecordingBackend recorder(synthetic);
  auto config = VariantConfig::defaults(Variant::pv);
  config.n_paraphrases = 3;
  for (const auto& item : items) require_ok(run_pda(to_query(item), config, AgentBackends::uniform(recorder)));
  return recorder.script();
}

std::vector<std::string> write_all(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  record_tshirt_script().save(dir / "tshirt_replay.json");
  record_caption_script().save(dir / "caption_replay.json");
  record_cli_script().save(dir / "cli_replay.json");
  std::ofstream(dir / "cli_items.jsonl") << cli_dataset_jsonl();
  json config{{"variant", "pv"},
              {"n", 3},
              {"schema", "classification"},
              {"dataset", "cli_items.jsonl"},
              {"backends", {{"default", {{"type", "replay"}, {"script", "cli_replay.json"}}}}}};
  std::ofstream(dir / "cli_run.json") << config.dump(2) << '\n';
  return {"tshirt_replay.json", "caption_replay.json", "cli_replay.json", "cli_items.jsonl", "cli_run.json"};
}

}  // namespace pda::fixtures
