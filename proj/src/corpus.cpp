#include "convqa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"
#include "convqa/metrics.hpp"

namespace convqa {

using ordered_json = nlohmann::ordered_json;

namespace {

thread_local GoldAccessTracker* current_tracker = nullptr;

// CoQA offsets count Unicode code points; the passage is held as UTF-8.
std::size_t utf8_byte_offset(std::string_view text, int char_offset) {
  std::size_t pos = 0;
  int chars = 0;
  while (pos < text.size() && chars < char_offset) {
    const auto lead = static_cast<unsigned char>(text[pos]);
    std::size_t width = 1;
    if (lead >= 0xF0) {
      width = 4;
    } else if (lead >= 0xE0) {
      width = 3;
    } else if (lead >= 0xC0) {
      width = 2;
    }
    pos = std::min(text.size(), pos + width);
    ++chars;
  }
  return chars == char_offset ? pos : std::string_view::npos;
}

std::size_t locate(std::string_view text, const std::string& needle) {
  const auto pos = text.find(needle);
  return pos == std::string_view::npos ? 0 : pos;
}

}  // namespace

std::size_t char_to_byte_offset(std::string_view text, int char_offset) {
  if (char_offset < 0) return std::string_view::npos;
  return utf8_byte_offset(text, char_offset);
}

std::string_view to_string(AnswerType type) {
  switch (type) {
    case AnswerType::yes: return "yes";
    case AnswerType::no: return "no";
    case AnswerType::unknown: return "unknown";
    case AnswerType::span: return "span";
  }
  return "span";
}

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::children: return "children";
    case Domain::literature: return "literature";
    case Domain::mid_high: return "mid-high";
    case Domain::news: return "news";
    case Domain::wikipedia: return "wikipedia";
    case Domain::synthetic: return "synthetic";
  }
  return "synthetic";
}

std::optional<AnswerType> answer_type_from_string(std::string_view name) {
  for (auto t : {AnswerType::yes, AnswerType::no, AnswerType::unknown,
                 AnswerType::span}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

std::optional<Domain> domain_from_string(std::string_view name) {
  for (auto d : {Domain::children, Domain::literature, Domain::mid_high,
                 Domain::news, Domain::wikipedia, Domain::synthetic}) {
    if (to_string(d) == name) return d;
  }
  return std::nullopt;
}

std::optional<Domain> domain_from_source(std::string_view source) {
  if (source == "mctest") return Domain::children;
  if (source == "gutenberg") return Domain::literature;
  if (source == "race") return Domain::mid_high;
  if (source == "cnn") return Domain::news;
  if (source == "wikipedia") return Domain::wikipedia;
  if (source == "synthetic") return Domain::synthetic;
  return std::nullopt;
}

std::string_view source_for(Domain domain) {
  switch (domain) {
    case Domain::children: return "mctest";
    case Domain::literature: return "gutenberg";
    case Domain::mid_high: return "race";
    case Domain::news: return "cnn";
    case Domain::wikipedia: return "wikipedia";
    case Domain::synthetic: return "synthetic";
  }
  return "synthetic";
}

// --- Turn -------------------------------------------------------------------

Turn::Turn(int id, std::string question, Answer gold,
           std::vector<Answer> refs)
    : turn_id(id),
      question_text(std::move(question)),
      additional_refs(std::move(refs)) {
  set_gold(std::move(gold));
}

const Answer& Turn::gold() const {
  if (current_tracker != nullptr) current_tracker->record(turn_id);
  return gold_;
}

void Turn::set_gold(Answer gold) {
  gold_ = std::move(gold);
  answer_type = derive_answer_type(gold_.text);
}

bool Turn::operator==(const Turn& other) const {
  return turn_id == other.turn_id && question_text == other.question_text &&
         additional_refs == other.additional_refs &&
         answer_type == other.answer_type && gold_ == other.gold_;
}

GoldAccessTracker::GoldAccessTracker() : previous_(current_tracker) {
  current_tracker = this;
}

GoldAccessTracker::~GoldAccessTracker() { current_tracker = previous_; }

AnswerType derive_answer_type(std::string_view gold_text) {
  const std::string norm = normalize_answer(gold_text);
  if (norm == "yes") return AnswerType::yes;
  if (norm == "no") return AnswerType::no;
  if (norm == "unknown") return AnswerType::unknown;
  return AnswerType::span;
}

// --- Validation ---------------------------------------------------------------

namespace {

void validate_answer(const Conversation& conv, int turn_id, const Answer& a) {
  if (a.span_start < -1) {
    throw IntegrityError(conv.id, turn_id, "span_start below -1");
  }
  if (a.span_start == -1) return;
  if (a.span_end < a.span_start) {
    throw IntegrityError(conv.id, turn_id, "span_end precedes span_start");
  }
  const auto begin = char_to_byte_offset(conv.passage, a.span_start);
  const auto end = char_to_byte_offset(conv.passage, a.span_end);
  if (begin == std::string_view::npos || end == std::string_view::npos) {
    throw IntegrityError(conv.id, turn_id, "span offsets exceed passage");
  }
  if (conv.passage.compare(begin, end - begin, a.span_text) != 0) {
    throw IntegrityError(conv.id, turn_id,
                         "span_text '" + a.span_text +
                             "' does not match passage slice '" +
                             conv.passage.substr(begin, end - begin) + "'");
  }
}

}  // namespace

void validate_conversation(const Conversation& conv) {
  if (conv.passage.empty()) throw IntegrityError(conv.id, 0, "empty passage");
  if (conv.turns.empty()) throw IntegrityError(conv.id, 0, "no turns");
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    const Turn& t = conv.turns[i];
    if (t.turn_id != static_cast<int>(i) + 1) {
      throw IntegrityError(conv.id, t.turn_id,
                           "turn ids must be 1..k without gaps");
    }
    validate_answer(conv, t.turn_id, t.gold());
    for (const auto& ref : t.additional_refs) {
      validate_answer(conv, t.turn_id, ref);
    }
  }
}

// --- CoQA JSON ------------------------------------------------------------------

namespace {

template <typename Json>
const Json& require(const Json& obj, const char* key, std::string_view text,
                    const std::string& anchor) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(std::string("missing field '") + key + "'",
                      locate(text, anchor));
  }
  return obj.at(key);
}

template <typename Json>
Answer parse_answer(const Json& j, std::string_view text,
                    const std::string& anchor) {
  try {
    Answer a;
    a.text = require(j, "input_text", text, anchor).template get<std::string>();
    a.span_start = require(j, "span_start", text, anchor).template get<int>();
    a.span_end = require(j, "span_end", text, anchor).template get<int>();
    a.span_text = require(j, "span_text", text, anchor).template get<std::string>();
    return a;
  } catch (const nlohmann::json::type_error& e) {
    throw FormatError(std::string("bad answer field: ") + e.what(),
                      locate(text, anchor));
  }
}

}  // namespace

std::vector<Conversation> parse_coqa(std::string_view json_text) {
  ordered_json root;
  try {
    root = ordered_json::parse(json_text.begin(), json_text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed CoQA JSON: ") + e.what(),
                      e.byte);
  }
  if (!root.is_object() || !root.contains("data") || !root["data"].is_array()) {
    throw FormatError("top-level object must contain a 'data' array", 0);
  }

  std::vector<Conversation> out;
  out.reserve(root["data"].size());
  for (const auto& entry : root["data"]) {
    Conversation conv;
    try {
      conv.id = require(entry, "id", json_text, "").get<std::string>();
      const std::string anchor = "\"" + conv.id + "\"";
      const auto source =
          require(entry, "source", json_text, anchor).get<std::string>();
      const auto domain = domain_from_source(source);
      if (!domain) {
        throw FormatError("unknown source '" + source + "'",
                          locate(json_text, anchor));
      }
      conv.domain = *domain;
      conv.passage = require(entry, "story", json_text, anchor).get<std::string>();

      const auto& questions = require(entry, "questions", json_text, anchor);
      const auto& answers = require(entry, "answers", json_text, anchor);
      if (!questions.is_array() || !answers.is_array() ||
          questions.size() != answers.size()) {
        throw FormatError("questions and answers must be arrays of equal length",
                          locate(json_text, anchor));
      }

      // Additional answer lists may skip turns, so attach by turn_id.
      std::map<int, std::vector<Answer>> extra;
      if (entry.contains("additional_answers")) {
        for (const auto& [key, list] : entry["additional_answers"].items()) {
          for (const auto& a : list) {
            const int tid = require(a, "turn_id", json_text, anchor).template get<int>();
            extra[tid].push_back(parse_answer(a, json_text, anchor));
          }
        }
      }

      for (std::size_t i = 0; i < questions.size(); ++i) {
        const int qid = require(questions[i], "turn_id", json_text, anchor).get<int>();
        const int aid = require(answers[i], "turn_id", json_text, anchor).get<int>();
        if (qid != aid) {
          throw IntegrityError(conv.id, qid, "question/answer turn_id mismatch");
        }
        Turn turn(qid,
                  require(questions[i], "input_text", json_text, anchor)
                      .get<std::string>(),
                  parse_answer(answers[i], json_text, anchor));
        if (auto it = extra.find(qid); it != extra.end()) {
          turn.additional_refs = it->second;
        }
        conv.turns.push_back(std::move(turn));
      }
    } catch (const nlohmann::json::type_error& e) {
      throw FormatError(std::string("bad field type: ") + e.what(),
                        locate(json_text, "\"" + conv.id + "\""));
    }
    validate_conversation(conv);
    out.push_back(std::move(conv));
  }
  return out;
}

std::vector<Conversation> load_coqa(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_coqa(buf.str());
}

namespace {

ordered_json answer_json(const Answer& a, int turn_id) {
  ordered_json j;
  j["span_start"] = a.span_start;
  j["span_end"] = a.span_end;
  j["span_text"] = a.span_text;
  j["input_text"] = a.text;
  j["turn_id"] = turn_id;
  return j;
}

}  // namespace

std::string serialize_coqa(const std::vector<Conversation>& convs,
                           std::string_view extra_json) {
  ordered_json root;
  root["version"] = 1.0;
  if (!extra_json.empty()) {
    const ordered_json extra = ordered_json::parse(extra_json);
    for (auto& [k, v] : extra.items()) root[k] = v;
  }
  auto data = ordered_json::array();
  for (const auto& conv : convs) {
    ordered_json e;
    e["source"] = std::string(source_for(conv.domain));
    e["id"] = conv.id;
    e["story"] = conv.passage;
    auto qs = ordered_json::array();
    auto as = ordered_json::array();
    std::size_t max_refs = 0;
    for (const auto& t : conv.turns) {
      qs.push_back({{"input_text", t.question_text}, {"turn_id", t.turn_id}});
      as.push_back(answer_json(t.gold(), t.turn_id));
      max_refs = std::max(max_refs, t.additional_refs.size());
    }
    e["questions"] = std::move(qs);
    e["answers"] = std::move(as);
    if (max_refs > 0) {
      ordered_json extra;
      for (std::size_t r = 0; r < max_refs; ++r) {
        auto list = ordered_json::array();
        for (const auto& t : conv.turns) {
          if (r < t.additional_refs.size()) {
            list.push_back(answer_json(t.additional_refs[r], t.turn_id));
          }
        }
        extra[std::to_string(r)] = std::move(list);
      }
      e["additional_answers"] = std::move(extra);
    }
    data.push_back(std::move(e));
  }
  root["data"] = std::move(data);
  return root.dump(1) + "\n";
}

void save_coqa(const std::vector<Conversation>& convs,
               const std::filesystem::path& path, std::string_view extra_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  out << serialize_coqa(convs, extra_json);
  if (!out) throw IoError("write failed for " + path.string());
}

// --- Tokenization ---------------------------------------------------------------

bool is_punctuation_token(std::string_view token) {
  return !token.empty() &&
         std::all_of(token.begin(), token.end(), [](char c) {
           return std::ispunct(static_cast<unsigned char>(c)) != 0;
         });
}

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
  std::vector<TokenSpan> out;
  TokenSpan cur;
  bool open = false;
  auto flush = [&](int end) {
    if (open) {
      cur.end = end;
      out.push_back(std::move(cur));
      cur = {};
      open = false;
    }
  };
  for (int i = 0; i < static_cast<int>(text.size()); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush(i);
    } else if (c < 0x80 && std::ispunct(c)) {
      flush(i);
      out.push_back({std::string(1, static_cast<char>(c)), i, i + 1});
    } else {
      if (!open) {
        cur.begin = i;
        open = true;
      }
      cur.text.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush(static_cast<int>(text.size()));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.text));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// --- Vocab ---------------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<q>", "<a>"}) add(t);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < static_cast<std::size_t>(kNumReserved)) {
    throw InputError("vocabulary is missing reserved tokens");
  }
  for (int i = 0; i < kNumReserved; ++i) {
    if (tokens[i] != v.tokens_[i]) {
      throw InputError("vocabulary reserved token mismatch at id " +
                       std::to_string(i));
    }
  }
  for (std::size_t i = kNumReserved; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) {
      throw InputError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.add(tokens[i]);
  }
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return ids_.count(std::string(token)) > 0;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw InputError("token id out of range");
  return tokens_[id];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Vocab build_vocab(const std::vector<Conversation>& convs, int min_count) {
  if (min_count < 1) throw InputError("min_count must be >= 1");
  std::vector<std::string> order;
  std::unordered_map<std::string, int> counts;
  auto count = [&](std::string_view text) {
    for (auto& t : tokenize(text)) {
      auto [it, inserted] = counts.try_emplace(t, 0);
      if (inserted) order.push_back(t);
      ++it->second;
    }
  };
  for (const auto& conv : convs) {
    count(conv.passage);
    for (const auto& turn : conv.turns) {
      count(turn.question_text);
      count(turn.gold().text);
    }
  }
  Vocab v;
  for (const auto& t : order) {
    if (counts[t] >= min_count) v.add(t);
  }
  return v;
}

}  // namespace convqa
