#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "convqa/checkpoint.hpp"
#include "convqa/corpus.hpp"
#include "convqa/infer.hpp"
#include "convqa/metrics.hpp"
#include "convqa/model.hpp"
#include "convqa/sampling.hpp"

namespace convqa {

struct RegimeSpec {
  std::string name = "sm";
  int warmup_epochs = 0;  // epochs trained on gold history only
  bool from_best_model = false;
  Schedule schedule{ScheduleKind::usr, 1.0, 30};
  int total_epochs = 30;
  int history_window = 2;

  bool operator==(const RegimeSpec&) const = default;
};

// Throws RegimeError when the spec is internally inconsistent.
void validate_regime(const RegimeSpec& spec);

// Named regimes: sm (teacher forcing, USR c = 1), ss-t1-ed, ss-t5-ed,
// ss-bm-ed, ss-bm-usr (c = 0.5) and ss-bm-edc (falling ED complement).
// "ss-t0-ed" is accepted as an alias of ss-t1-ed.
RegimeSpec regime_preset(const std::string& name, int epochs = 30);
std::vector<std::string> regime_preset_names();

struct Seeds {
  std::uint64_t init = 1;
  std::uint64_t sampling = 2;
  std::uint64_t shuffle = 3;

  bool operator==(const Seeds&) const = default;
};

// Seeds derived from a single run seed; the three streams never coincide.
Seeds derive_seeds(std::uint64_t seed);

struct TrainHyper {
  AdamHyper adam;
  int embed_dim = 32;
  int hidden_dim = 32;
  int max_span_len = 15;
  int min_count = 1;
  ScoringScheme dev_scheme = ScoringScheme::leave_one_out;

  bool operator==(const TrainHyper& o) const {
    return adam.lr == o.adam.lr && adam.beta1 == o.adam.beta1 &&
           adam.beta2 == o.adam.beta2 && adam.eps == o.adam.eps &&
           embed_dim == o.embed_dim && hidden_dim == o.hidden_dim &&
           max_span_len == o.max_span_len && min_count == o.min_count &&
           dev_scheme == o.dev_scheme;
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double dev_f1 = 0.0;  // MP-mode dev F1, x100
  double gold_fraction_observed = 1.0;
  int history_slots = 0;
  int gold_slots = 0;
};

// --- Training data ---------------------------------------------------------------

struct TrainingTurn {
  int turn_id = 0;
  SpanTarget target;
  bool supervised = false;  // false when no usable span could be located
};

struct TrainingConversation {
  const Conversation* conv = nullptr;
  PreparedPassage passage;
  std::vector<TrainingTurn> turns;
};

// Token-level span targets from the gold answers. Span turns take the
// sub-span of the rationale that best matches the free-form answer.
std::vector<TrainingConversation> prepare_training(const std::vector<Conversation>& corpus,
                                                   const Vocab& vocab, int max_span_len);

// --- Epochs ------------------------------------------------------------------------

struct HistoryEvent {
  std::string conversation_id;
  int turn_id = 0;          // the turn being trained
  int history_turn_id = 0;  // the previous turn whose answer was chosen
  Provenance provenance = Provenance::gold;
  int source_stamp = -1;    // epoch stamp of the consumed cache entry
};
using HistoryLog = std::function<void(const HistoryEvent&)>;

struct TrainState {
  ModelParams params;
  AdamState optimizer;
};

struct TrainContext {
  std::mt19937_64 sampling_rng;
  std::mt19937_64 shuffle_rng;
};

// One pass over the corpus. History answers are sampled against `incoming`
// (the previous epoch's predictions); every turn's prediction is written to
// `outgoing`. Returns stats without dev_f1.
EpochStats train_epoch(TrainState& state, const std::vector<TrainingConversation>& corpus,
                       const Vocab& vocab, double eps, const PredictionCache& incoming,
                       PredictionCache& outgoing, TrainContext& ctx, const TrainHyper& hyper,
                       int history_window, const HistoryLog& log = {});

// Predictions of the model for every training turn with gold history.
PredictionCache prediction_pass(const ModelParams& params, const Vocab& vocab,
                                const std::vector<Conversation>& corpus, int history_window,
                                int max_span_len, int epoch_stamp);

struct RegimeResult {
  Checkpoint best;
  int best_epoch = 0;
  std::vector<EpochStats> stats;
  PredictionCache final_cache;
};

struct RegimeHooks {
  HistoryLog history;
  std::function<void(const EpochStats&)> on_epoch;
  // Called with each epoch's outgoing cache right after the epoch.
  std::function<void(int epoch, const PredictionCache&)> on_cache;
};

RegimeResult run_regime(const RegimeSpec& spec, const std::vector<Conversation>& train,
                        const std::vector<Conversation>& dev, const Seeds& seeds,
                        const TrainHyper& hyper,
                        const std::optional<Checkpoint>& pretrained = std::nullopt,
                        const RegimeHooks& hooks = {});

// --- Configuration -------------------------------------------------------------------

struct ExperimentConfig {
  RegimeSpec regime;
  TrainHyper hyper;
  Seeds seeds;
  std::string pretrain_checkpoint;  // required when regime.from_best_model
};

// Structured-text (JSON) config. A "preset" key seeds the regime before the
// explicit keys are applied.
ExperimentConfig parse_config(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& cfg);

std::string stats_to_csv(const std::vector<EpochStats>& stats);

}  // namespace convqa
