#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

// Row-major dense matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  bool operator==(const Matrix&) const = default;
};

struct ModelDims {
  int vocab_size = 0;
  int embed_dim = 32;
  int hidden_dim = 32;
  int max_span_len = 15;

  bool operator==(const ModelDims&) const = default;
};

// Elman cell: h_t = tanh(input * x_t + hidden * h_{t-1} + bias).
struct RecurrentWeights {
  Matrix input;   // hidden x embed
  Matrix hidden;  // hidden x hidden
  std::vector<double> bias;

  bool operator==(const RecurrentWeights&) const = default;
};

// The class head scores {yes, no, unknown, span} from the question summary
// concatenated with the attended passage vector.
inline constexpr int kNumClasses = 4;

struct ModelParams {
  ModelDims dims;
  Matrix embedding;  // vocab x embed
  RecurrentWeights passage_rnn;
  RecurrentWeights question_rnn;
  Matrix attention;  // hidden x hidden, bilinear
  std::vector<double> start_scorer;
  std::vector<double> end_scorer;
  Matrix class_scorer;  // 4 x (2 * hidden)
  std::vector<double> class_bias;
  // Added to the passage cell input at tokens that also occur in the current
  // question (after the last <q>), in the most recent history answer
  // (between the last <a> and the last <q>) or elsewhere in the history.
  // Reserved markers never match.
  std::vector<double> match_current;
  std::vector<double> match_answer;
  std::vector<double> match_history;

  bool operator==(const ModelParams&) const = default;
};

// Zero-valued parameters with the given dimensions; gradients and optimizer
// moments share this layout.
ModelParams zeros_like(const ModelDims& dims);

// Visits every tensor in a fixed order. Both overloads walk the same order.
void for_each_tensor(ModelParams& p,
                     const std::function<void(std::string_view, std::span<double>)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(std::string_view, std::span<const double>)>& fn);
// Pairs up matching tensors of two parameter sets with identical dims.
void for_each_tensor_pair(
    ModelParams& a, const ModelParams& b,
    const std::function<void(std::string_view, std::span<double>, std::span<const double>)>& fn);

std::size_t parameter_count(const ModelParams& p);
bool all_finite(const ModelParams& p);

ModelParams init_params(const ModelDims& dims, std::uint64_t seed);

struct ForwardTrace {
  std::vector<int> passage_ids;
  std::vector<int> question_ids;
  // Per passage token: bit 0 set when it occurs in the current question,
  // bit 1 in the most recent history answer, bit 2 elsewhere in the history.
  std::vector<int> passage_match;
  Matrix passage_states;   // passage_len x hidden
  Matrix question_states;  // question_len x hidden
  std::vector<double> summary;    // final question state
  std::vector<double> projected;  // attention * summary
  std::vector<double> attention_weights;  // softmax over passage positions
  std::vector<double> attended;           // sum_j weight_j * passage_state_j
  std::vector<double> start_logits;
  std::vector<double> end_logits;
  std::vector<double> class_logits;
};

ForwardTrace forward(const ModelParams& params, std::span<const int> passage_ids,
                     std::span<const int> question_ids);

// Supervision for one turn. start/end are token indices, used only when
// type == span.
struct SpanTarget {
  AnswerType type = AnswerType::span;
  int start = -1;
  int end = -1;
};

double loss(const ForwardTrace& trace, const SpanTarget& gold);

// Exact gradients of loss(trace, gold) with respect to every parameter.
ModelParams backward(const ModelParams& params, const ForwardTrace& trace,
                     const SpanTarget& gold);
// Same, accumulating into an existing gradient buffer.
void backward_into(const ModelParams& params, const ForwardTrace& trace,
                   const SpanTarget& gold, ModelParams& grads);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;

  static AdamState for_dims(const ModelDims& dims);
  bool operator==(const AdamState&) const = default;
};

// One bias-corrected Adam update. Throws NumericError on a non-finite
// gradient or resulting weight; params and state are left untouched then.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamHyper& hyper);

struct AnswerPrediction {
  int start = 0;
  int end = 0;
  std::array<double, kNumClasses> class_probs{};
  AnswerType type = AnswerType::span;
  std::string answer_text;
};

std::vector<double> softmax(std::span<const double> logits);

// Constrained argmax over (start, end) with start <= end < start + max_len.
// Ties go to the smallest start, then the smallest end.
std::pair<int, int> best_span(std::span<const double> start_logits,
                              std::span<const double> end_logits, int max_span_len);

AnswerPrediction predict_answer(const ForwardTrace& trace,
                                const std::vector<std::string>& passage_tokens,
                                int max_span_len);

}  // namespace convqa
