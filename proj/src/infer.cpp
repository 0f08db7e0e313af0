#include "convqa/infer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

std::string_view to_string(InferenceMode mode) {
  return mode == InferenceMode::sm ? "sm" : "mp";
}

std::optional<InferenceMode> mode_from_string(std::string_view name) {
  if (name == "sm" || name == "SM") return InferenceMode::sm;
  if (name == "mp" || name == "MP") return InferenceMode::mp;
  return std::nullopt;
}

PreparedPassage prepare_passage(const Conversation& conv, const Vocab& vocab) {
  PreparedPassage p;
  p.tokens = tokenize(conv.passage);
  if (p.tokens.empty()) throw InputError("conversation " + conv.id + " has an empty passage");
  p.ids = vocab.encode(p.tokens);
  return p;
}

std::vector<std::string> build_history_input(
    const Conversation& conv, int turn_index, int window,
    const std::function<std::string(int)>& answer_text) {
  if (turn_index < 0 || turn_index >= static_cast<int>(conv.turns.size())) {
    throw InputError("turn index out of range");
  }
  std::vector<std::string> out;
  auto append = [&out](const std::string& marker, std::string_view text) {
    out.push_back(marker);
    for (auto& t : tokenize(text)) out.push_back(std::move(t));
  };
  for (int j = std::max(0, turn_index - std::max(0, window)); j < turn_index; ++j) {
    append(kQuestionMarker, conv.turns[j].question_text);
    append(kAnswerMarker, answer_text(j));
  }
  append(kQuestionMarker, conv.turns[turn_index].question_text);
  return out;
}

ConversationResult answer_conversation(const ModelParams& params, const Vocab& vocab,
                                       const Conversation& conv, InferenceMode mode,
                                       int window, int max_span_len,
                                       const InputObserver& observer) {
  const PreparedPassage passage = prepare_passage(conv, vocab);
  ConversationResult result;
  result.conversation_id = conv.id;

  std::function<std::string(int)> history;
  if (mode == InferenceMode::sm) {
    history = [&conv](int j) { return conv.turns[j].gold().text; };
  } else {
    history = [&result](int j) { return result.predictions[j].answer_text; };
  }

  for (int i = 0; i < static_cast<int>(conv.turns.size()); ++i) {
    const auto tokens = build_history_input(conv, i, window, history);
    if (observer) observer(conv.turns[i].turn_id, tokens);
    const auto ids = vocab.encode(tokens);
    const auto trace = forward(params, passage.ids, ids);
    result.turn_ids.push_back(conv.turns[i].turn_id);
    result.predictions.push_back(predict_answer(trace, passage.tokens, max_span_len));
  }
  return result;
}

PredictionMap to_prediction_map(const std::vector<ConversationResult>& results) {
  PredictionMap out;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.turn_ids.size(); ++i) {
      out[{r.conversation_id, r.turn_ids[i]}] = r.predictions[i].answer_text;
    }
  }
  return out;
}

std::string predictions_to_json(const std::vector<ConversationResult>& results) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& [key, answer] : to_prediction_map(results)) {
    nlohmann::ordered_json j;
    j["id"] = key.first;
    j["turn_id"] = key.second;
    j["answer"] = answer;
    arr.push_back(std::move(j));
  }
  return arr.dump(1) + "\n";
}

void write_predictions(const std::vector<ConversationResult>& results,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions " + path.string());
  out << predictions_to_json(results);
  if (!out) throw IoError("write failed for " + path.string());
}

PredictionMap predictions_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed prediction file: ") + e.what(), e.byte);
  }
  if (!j.is_array()) throw FormatError("prediction file must be a JSON array", 0);
  PredictionMap out;
  try {
    for (const auto& e : j) {
      out[{e.at("id").get<std::string>(), e.at("turn_id").get<int>()}] =
          e.at("answer").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad prediction record: ") + e.what(), 0);
  }
  return out;
}

PredictionMap read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return predictions_from_json(buf.str());
}

Evaluation evaluate(const ModelParams& params, const Vocab& vocab,
                    const std::vector<Conversation>& corpus, InferenceMode mode,
                    int window, int max_span_len, ScoringScheme scheme) {
  Evaluation ev;
  ev.results.reserve(corpus.size());
  for (const auto& conv : corpus) {
    ev.results.push_back(answer_conversation(params, vocab, conv, mode, window, max_span_len));
  }
  ev.report = aggregate_report(to_prediction_map(ev.results), corpus, scheme);
  return ev;
}

}  // namespace convqa
