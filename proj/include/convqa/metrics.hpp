#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
// whitespace. Same convention as the official CoQA evaluator.
std::string normalize_answer(std::string_view text);

double f1_single(std::string_view pred, std::string_view gold);
double em_single(std::string_view pred, std::string_view gold);

enum class ScoringScheme { max, leave_one_out };
std::string_view to_string(ScoringScheme scheme);
std::optional<ScoringScheme> scheme_from_string(std::string_view name);

struct TurnScore {
  double em = 0.0;
  double f1 = 0.0;
};

// F1 and EM against a reference list. Throws InputError on an empty list.
TurnScore score_multi_both(std::string_view pred,
                           const std::vector<std::string>& golds,
                           ScoringScheme scheme);
double score_multi(std::string_view pred, const std::vector<std::string>& golds,
                   ScoringScheme scheme);

// --- Bucketing --------------------------------------------------------------

struct LengthBuckets {
  int conv_length_threshold = 12;
  std::array<int, 4> question_length_edges{3, 5, 7, 10};
};

enum class ConvLengthBucket { shorter, longer };
std::string_view to_string(ConvLengthBucket bucket);

// Word tokens of a question, standalone punctuation excluded.
int question_length(std::string_view question);
// 0-based index: 0 -> QL1 ... 4 -> QL5.
int question_length_bucket(int length, const LengthBuckets& buckets = {});
std::string question_length_label(int bucket_index);
ConvLengthBucket conv_length_bucket(int rounds,
                                    const LengthBuckets& buckets = {});

// --- Reports ------------------------------------------------------------------

// Scores for one cell, x100. Empty cells have count == 0 and are emitted as
// null.
struct CellScore {
  double em = 0.0;
  double f1 = 0.0;
  int count = 0;

  bool empty() const { return count == 0; }
};

// A partition cell broken down by answer type plus its overall score.
struct TypedCell {
  CellScore overall;
  std::array<CellScore, kNumAnswerTypes> by_type;
};

struct EvalReport {
  CellScore overall;
  std::map<Domain, CellScore> by_domain;
  std::array<CellScore, kNumAnswerTypes> by_answer_type;
  std::array<TypedCell, 2> by_conv_length;      // shorter, longer
  std::array<TypedCell, 5> by_question_length;  // QL1..QL5
  int total_turns = 0;
  ScoringScheme scheme = ScoringScheme::leave_one_out;
};

// (conversation id, turn id) -> predicted answer text.
using PredictionMap = std::map<std::pair<std::string, int>, std::string>;

// All references of a turn: gold first, then additional answers.
std::vector<std::string> reference_texts(const Turn& turn);

EvalReport aggregate_report(const PredictionMap& predictions,
                            const std::vector<Conversation>& corpus,
                            ScoringScheme scheme,
                            const LengthBuckets& buckets = {});

// Flattened view of a report: one row per non-aggregate cell.
struct ReportRow {
  std::string partition;  // overall, domain, answer_type, conv_length, question_length
  std::string cell;
  std::string type;  // "overall" or an answer type
  CellScore score;
};
std::vector<ReportRow> report_rows(const EvalReport& report);

// Full nested JSON. Empty cells are emitted as null.
std::string report_to_json(const EvalReport& report,
                           const std::string& corpus_fingerprint,
                           std::string_view mode);
std::string report_to_csv(const EvalReport& report);

}  // namespace convqa
