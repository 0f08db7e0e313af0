#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/metrics.hpp"
#include "convqa/model.hpp"

namespace convqa {

// SM: history built from gold answers. MP: history built from the model's
// own earlier predictions in the same conversation.
enum class InferenceMode { sm, mp };

std::string_view to_string(InferenceMode mode);
std::optional<InferenceMode> mode_from_string(std::string_view name);

inline constexpr const char* kQuestionMarker = "<q>";
inline constexpr const char* kAnswerMarker = "<a>";

// Passage tokens and ids, computed once per conversation. Reads no gold data.
struct PreparedPassage {
  std::vector<std::string> tokens;
  std::vector<int> ids;
};
PreparedPassage prepare_passage(const Conversation& conv, const Vocab& vocab);

// [<q> q_{i-K} <a> a_{i-K} ... <q> q_{i-1} <a> a_{i-1} <q> q_i], with the
// window truncated at the start of the conversation. turn_index is 0-based;
// answer_text(j) supplies the history answer for 0-based turn j < turn_index.
std::vector<std::string> build_history_input(
    const Conversation& conv, int turn_index, int window,
    const std::function<std::string(int)>& answer_text);

struct ConversationResult {
  std::string conversation_id;
  std::vector<int> turn_ids;
  std::vector<AnswerPrediction> predictions;
};

// Receives the augmented question of each turn before it is answered.
using InputObserver = std::function<void(int turn_id, const std::vector<std::string>& tokens)>;

ConversationResult answer_conversation(const ModelParams& params, const Vocab& vocab,
                                       const Conversation& conv, InferenceMode mode,
                                       int window, int max_span_len,
                                       const InputObserver& observer = {});

PredictionMap to_prediction_map(const std::vector<ConversationResult>& results);

// JSON array of {"id", "turn_id", "answer"} ordered by (id, turn_id).
std::string predictions_to_json(const std::vector<ConversationResult>& results);
void write_predictions(const std::vector<ConversationResult>& results,
                       const std::filesystem::path& path);
PredictionMap read_predictions(const std::filesystem::path& path);
PredictionMap predictions_from_json(std::string_view text);

struct Evaluation {
  std::vector<ConversationResult> results;
  EvalReport report;
};

Evaluation evaluate(const ModelParams& params, const Vocab& vocab,
                    const std::vector<Conversation>& corpus, InferenceMode mode,
                    int window, int max_span_len, ScoringScheme scheme);

}  // namespace convqa
