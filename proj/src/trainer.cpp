#include "convqa/trainer.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

void validate_regime(const RegimeSpec& spec) {
  if (spec.total_epochs < 1) throw RegimeError("total_epochs must be >= 1");
  if (spec.warmup_epochs < 0) throw RegimeError("warmup_epochs must be >= 0");
  if (spec.warmup_epochs >= spec.total_epochs) {
    throw RegimeError("warmup_epochs must be smaller than total_epochs");
  }
  if (spec.history_window < 0) throw RegimeError("history window K must be >= 0");
  if (spec.schedule.N < 1) throw RegimeError("schedule N must be >= 1");
  if (spec.total_epochs > spec.schedule.N) {
    throw RegimeError("schedule spans " + std::to_string(spec.schedule.N) +
                      " epochs but the regime runs " + std::to_string(spec.total_epochs));
  }
  if (spec.schedule.kind == ScheduleKind::usr &&
      !(spec.schedule.c >= 0.0 && spec.schedule.c <= 1.0)) {
    throw RegimeError("USR rate c must lie in [0, 1]");
  }
}

RegimeSpec regime_preset(const std::string& name, int epochs) {
  RegimeSpec s;
  s.total_epochs = epochs;
  s.schedule.N = epochs;
  if (name == "sm") {
    s.name = "sm";
    s.schedule = {ScheduleKind::usr, 1.0, epochs};
  } else if (name == "ss-t1-ed" || name == "ss-t0-ed") {
    s.name = "ss-t1-ed";
    s.warmup_epochs = 1;
    s.schedule = {ScheduleKind::ed, 0.0, epochs};
  } else if (name == "ss-t5-ed") {
    s.name = "ss-t5-ed";
    s.warmup_epochs = 5;
    s.schedule = {ScheduleKind::ed, 0.0, epochs};
  } else if (name == "ss-bm-ed") {
    s.name = "ss-bm-ed";
    s.from_best_model = true;
    s.schedule = {ScheduleKind::ed, 0.0, epochs};
  } else if (name == "ss-bm-usr") {
    s.name = "ss-bm-usr";
    s.from_best_model = true;
    s.schedule = {ScheduleKind::usr, 0.5, epochs};
  } else if (name == "ss-bm-edc") {
    s.name = "ss-bm-edc";
    s.from_best_model = true;
    s.schedule = {ScheduleKind::ed_complement, 0.0, epochs};
  } else {
    throw RegimeError("unknown regime preset '" + name + "'");
  }
  return s;
}

std::vector<std::string> regime_preset_names() {
  return {"sm", "ss-t1-ed", "ss-t5-ed", "ss-bm-ed", "ss-bm-usr", "ss-bm-edc"};
}

Seeds derive_seeds(std::uint64_t seed) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return {splitmix(seed * 3 + 0), splitmix(seed * 3 + 1), splitmix(seed * 3 + 2)};
}

// --- Training data -----------------------------------------------------------------

namespace {

std::optional<std::pair<int, int>> find_tokens(const std::vector<std::string>& haystack,
                                               const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end());
  if (it == haystack.end()) return std::nullopt;
  const int s = static_cast<int>(it - haystack.begin());
  return std::make_pair(s, s + static_cast<int>(needle.size()) - 1);
}

std::optional<std::pair<int, int>> span_target(const Conversation& conv, const Answer& gold,
                                               const std::vector<TokenSpan>& offsets,
                                               const std::vector<std::string>& tokens,
                                               int max_span_len) {
  if (gold.span_start >= 0) {
    const auto b = static_cast<int>(char_to_byte_offset(conv.passage, gold.span_start));
    const auto e = static_cast<int>(char_to_byte_offset(conv.passage, gold.span_end));
    int first = -1, last = -1;
    for (int i = 0; i < static_cast<int>(offsets.size()); ++i) {
      if (offsets[i].begin < e && offsets[i].end > b) {
        if (first < 0) first = i;
        last = i;
      }
    }
    if (first >= 0) {
      // Best-matching sub-span of the rationale.
      double best = -1.0;
      std::pair<int, int> arg{first, first};
      for (int s = first; s <= last; ++s) {
        std::vector<std::string> words;
        for (int t = s; t <= last && t < s + max_span_len; ++t) {
          words.push_back(tokens[t]);
          const double f = f1_single(join_tokens(words), gold.text);
          if (f > best) {
            best = f;
            arg = {s, t};
          }
        }
      }
      if (best > 0.0) return arg;
    }
  }
  auto found = find_tokens(tokens, tokenize(gold.text));
  if (found && found->second - found->first < max_span_len) return found;
  return std::nullopt;
}

}  // namespace

std::vector<TrainingConversation> prepare_training(const std::vector<Conversation>& corpus,
                                                   const Vocab& vocab, int max_span_len) {
  std::vector<TrainingConversation> out;
  out.reserve(corpus.size());
  for (const auto& conv : corpus) {
    TrainingConversation tc;
    tc.conv = &conv;
    tc.passage = prepare_passage(conv, vocab);
    const auto offsets = tokenize_with_offsets(conv.passage);
    for (const auto& turn : conv.turns) {
      TrainingTurn tt;
      tt.turn_id = turn.turn_id;
      tt.target.type = turn.answer_type;
      if (turn.answer_type != AnswerType::span) {
        tt.supervised = true;
      } else if (auto span = span_target(conv, turn.gold(), offsets, tc.passage.tokens,
                                         max_span_len)) {
        tt.target.start = span->first;
        tt.target.end = span->second;
        tt.supervised = true;
      }
      tc.turns.push_back(tt);
    }
    out.push_back(std::move(tc));
  }
  return out;
}

// --- Epochs ----------------------------------------------------------------------------

EpochStats train_epoch(TrainState& state, const std::vector<TrainingConversation>& corpus,
                       const Vocab& vocab, double eps, const PredictionCache& incoming,
                       PredictionCache& outgoing, TrainContext& ctx, const TrainHyper& hyper,
                       int history_window, const HistoryLog& log) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), ctx.shuffle_rng);

  EpochStats stats;
  double loss_sum = 0.0;
  int supervised = 0;
  ModelParams grads = zeros_like(state.params.dims);
  const int max_span_len = state.params.dims.max_span_len;

  for (std::size_t ci : order) {
    const TrainingConversation& tc = corpus[ci];
    const Conversation& conv = *tc.conv;
    for (int i = 0; i < static_cast<int>(conv.turns.size()); ++i) {
      const int turn_id = conv.turns[i].turn_id;
      auto history = [&](int j) {
        const Turn& prev = conv.turns[j];
        const auto cached = incoming.entry(conv.id, prev.turn_id);
        std::optional<std::string> cached_text;
        if (cached) cached_text = cached->answer_text;
        HistoryChoice choice =
            choose_history_answer(ctx.sampling_rng, eps, prev.gold().text, cached_text);
        ++stats.history_slots;
        if (choice.provenance == Provenance::gold) ++stats.gold_slots;
        if (log) {
          log({conv.id, turn_id, prev.turn_id, choice.provenance,
               choice.provenance == Provenance::predicted ? cached->epoch_stamp : -1});
        }
        return choice.answer_text;
      };
      const auto tokens = build_history_input(conv, i, history_window, history);
      const auto ids = vocab.encode(tokens);
      const auto trace = forward(state.params, tc.passage.ids, ids);
      outgoing.put(conv.id, turn_id,
                   predict_answer(trace, tc.passage.tokens, max_span_len).answer_text);

      const TrainingTurn& tt = tc.turns[i];
      if (!tt.supervised) continue;
      loss_sum += loss(trace, tt.target);
      ++supervised;
      for_each_tensor(grads, [](std::string_view, std::span<double> t) {
        std::fill(t.begin(), t.end(), 0.0);
      });
      backward_into(state.params, trace, tt.target, grads);
      try {
        adam_step(state.params, grads, state.optimizer, hyper.adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in conversation " + conv.id +
                               " turn " + std::to_string(turn_id),
                           conv.id, turn_id);
      }
    }
  }
  stats.mean_loss = supervised > 0 ? loss_sum / supervised : 0.0;
  stats.gold_fraction_observed =
      stats.history_slots > 0
          ? static_cast<double>(stats.gold_slots) / stats.history_slots
          : 1.0;
  return stats;
}

PredictionCache prediction_pass(const ModelParams& params, const Vocab& vocab,
                                const std::vector<Conversation>& corpus, int history_window,
                                int max_span_len, int epoch_stamp) {
  PredictionCache cache(epoch_stamp);
  for (const auto& conv : corpus) {
    const auto r = answer_conversation(params, vocab, conv, InferenceMode::sm,
                                       history_window, max_span_len);
    for (std::size_t i = 0; i < r.turn_ids.size(); ++i) {
      cache.put(conv.id, r.turn_ids[i], r.predictions[i].answer_text);
    }
  }
  return cache;
}

RegimeResult run_regime(const RegimeSpec& spec, const std::vector<Conversation>& train,
                        const std::vector<Conversation>& dev, const Seeds& seeds,
                        const TrainHyper& hyper, const std::optional<Checkpoint>& pretrained,
                        const RegimeHooks& hooks) {
  validate_regime(spec);
  if (train.empty()) throw RegimeError("training corpus is empty");
  if (dev.empty()) throw RegimeError("dev corpus is empty");
  if (spec.from_best_model && !pretrained) {
    throw RegimeError("regime '" + spec.name +
                      "' fine-tunes a best model but no pretraining checkpoint was given");
  }

  Vocab vocab;
  TrainState state;
  std::uint64_t init_seed = seeds.init;
  if (spec.from_best_model) {
    vocab = pretrained->vocab;
    state = {pretrained->params, pretrained->optimizer};
    init_seed = pretrained->init_seed;
  } else {
    vocab = build_vocab(train, hyper.min_count);
    ModelDims dims{vocab.size(), hyper.embed_dim, hyper.hidden_dim, hyper.max_span_len};
    state = {init_params(dims, seeds.init), AdamState::for_dims(dims)};
  }
  const int max_span_len = state.params.dims.max_span_len;
  const auto prepared = prepare_training(train, vocab, max_span_len);
  TrainContext ctx{std::mt19937_64(seeds.sampling), std::mt19937_64(seeds.shuffle)};

  PredictionCache incoming(0);
  if (spec.from_best_model) {
    incoming = prediction_pass(state.params, vocab, train, spec.history_window, max_span_len, 0);
  }

  RegimeResult result;
  bool have_best = false;
  double best_f1 = 0.0;
  for (int t = 1; t <= spec.total_epochs; ++t) {
    const double eps = t <= spec.warmup_epochs ? 1.0 : epsilon(spec.schedule, t);
    PredictionCache outgoing(t);
    EpochStats stats = train_epoch(state, prepared, vocab, eps, incoming, outgoing, ctx, hyper,
                                   spec.history_window, hooks.history);
    stats.epoch = t;
    const auto missing = assert_complete(outgoing, train);
    if (!missing.empty()) {
      throw Error("prediction cache incomplete after epoch " + std::to_string(t) + ": " +
                  std::to_string(missing.size()) + " turn(s) missing");
    }
    const auto ev = evaluate(state.params, vocab, dev, InferenceMode::mp, spec.history_window,
                             max_span_len, hyper.dev_scheme);
    stats.dev_f1 = ev.report.overall.f1;
    if (!have_best || stats.dev_f1 > best_f1) {
      have_best = true;
      best_f1 = stats.dev_f1;
      result.best_epoch = t;
      result.best = Checkpoint{state.params, state.optimizer, vocab, init_seed, t, spec.name};
    }
    result.stats.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);
    if (hooks.on_cache) hooks.on_cache(t, outgoing);
    incoming = std::move(outgoing);
  }
  result.final_cache = std::move(incoming);
  return result;
}

// --- Configuration ------------------------------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed config: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  try {
    reject_unknown(j,
                   {"preset", "name", "warmup_epochs", "from_best_model", "schedule",
                    "total_epochs", "K", "hyper", "seed", "seeds", "pretrain_checkpoint"},
                   "config");
    if (j.contains("preset")) {
      const int epochs = j.value("total_epochs", 30);
      cfg.regime = regime_preset(j["preset"].get<std::string>(), epochs);
    }
    auto& r = cfg.regime;
    r.name = j.value("name", r.name);
    r.warmup_epochs = j.value("warmup_epochs", r.warmup_epochs);
    r.from_best_model = j.value("from_best_model", r.from_best_model);
    r.total_epochs = j.value("total_epochs", r.total_epochs);
    r.history_window = j.value("K", r.history_window);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      reject_unknown(s, {"kind", "c", "N"}, "schedule");
      if (s.contains("kind")) {
        const auto kind = schedule_kind_from_string(s["kind"].get<std::string>());
        if (!kind) throw ConfigError("unknown schedule kind " + s["kind"].dump());
        r.schedule.kind = *kind;
      }
      r.schedule.c = s.value("c", r.schedule.c);
      r.schedule.N = s.value("N", r.schedule.N);
    }
    if (j.contains("hyper")) {
      const auto& h = j["hyper"];
      reject_unknown(h,
                     {"lr", "beta1", "beta2", "eps_adam", "embed_dim", "hidden_dim",
                      "max_span_len", "min_count", "dev_scheme"},
                     "hyper");
      auto& hp = cfg.hyper;
      hp.adam.lr = h.value("lr", hp.adam.lr);
      hp.adam.beta1 = h.value("beta1", hp.adam.beta1);
      hp.adam.beta2 = h.value("beta2", hp.adam.beta2);
      hp.adam.eps = h.value("eps_adam", hp.adam.eps);
      hp.embed_dim = h.value("embed_dim", hp.embed_dim);
      hp.hidden_dim = h.value("hidden_dim", hp.hidden_dim);
      hp.max_span_len = h.value("max_span_len", hp.max_span_len);
      hp.min_count = h.value("min_count", hp.min_count);
      if (h.contains("dev_scheme")) {
        const auto scheme = scheme_from_string(h["dev_scheme"].get<std::string>());
        if (!scheme) throw ConfigError("unknown dev_scheme " + h["dev_scheme"].dump());
        hp.dev_scheme = *scheme;
      }
    }
    if (j.contains("seed")) cfg.seeds = derive_seeds(j["seed"].get<std::uint64_t>());
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      reject_unknown(s, {"init", "sampling", "shuffle"}, "seeds");
      cfg.seeds.init = s.value("init", cfg.seeds.init);
      cfg.seeds.sampling = s.value("sampling", cfg.seeds.sampling);
      cfg.seeds.shuffle = s.value("shuffle", cfg.seeds.shuffle);
    }
    cfg.pretrain_checkpoint = j.value("pretrain_checkpoint", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  } catch (const RegimeError& e) {
    throw ConfigError(e.what());
  }
  try {
    validate_regime(cfg.regime);
  } catch (const RegimeError& e) {
    throw ConfigError(std::string("invalid regime: ") + e.what());
  }
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const auto& r = cfg.regime;
  const auto& h = cfg.hyper;
  json j;
  j["name"] = r.name;
  j["warmup_epochs"] = r.warmup_epochs;
  j["from_best_model"] = r.from_best_model;
  j["schedule"] = {{"kind", std::string(to_string(r.schedule.kind))},
                   {"c", r.schedule.c},
                   {"N", r.schedule.N}};
  j["total_epochs"] = r.total_epochs;
  j["K"] = r.history_window;
  j["hyper"] = {{"lr", h.adam.lr},
                {"beta1", h.adam.beta1},
                {"beta2", h.adam.beta2},
                {"eps_adam", h.adam.eps},
                {"embed_dim", h.embed_dim},
                {"hidden_dim", h.hidden_dim},
                {"max_span_len", h.max_span_len},
                {"min_count", h.min_count},
                {"dev_scheme", std::string(to_string(h.dev_scheme))}};
  j["seeds"] = {{"init", cfg.seeds.init},
                {"sampling", cfg.seeds.sampling},
                {"shuffle", cfg.seeds.shuffle}};
  if (!cfg.pretrain_checkpoint.empty()) j["pretrain_checkpoint"] = cfg.pretrain_checkpoint;
  return j.dump(2) + "\n";
}

std::string stats_to_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream os;
  os << "epoch,mean_loss,dev_f1,gold_fraction\n";
  os << std::fixed;
  for (const auto& s : stats) {
    os << s.epoch << ',' << std::setprecision(6) << s.mean_loss << ','
       << std::setprecision(4) << s.dev_f1 << ',' << std::setprecision(6)
       << s.gold_fraction_observed << '\n';
  }
  return os.str();
}

}  // namespace convqa
