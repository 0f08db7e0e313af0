#include <doctest.h>

#include <filesystem>
#include <random>

#include "convqa/errors.hpp"
#include "convqa/infer.hpp"
#include "fixtures.hpp"

using namespace convqa;

namespace {

struct Setup {
  std::vector<Conversation> corpus;
  Vocab vocab;
  ModelParams params;
};

Setup small_setup(std::uint64_t seed) {
  Setup s;
  SyntheticConfig cfg;
  cfg.n_convs = 12;
  cfg.rounds_per_conv = 6;
  cfg.entity_pool_size = 30;
  s.corpus = gen_synthetic(cfg, seed);
  for (auto& c : test::mixed_corpus()) s.corpus.push_back(c);
  s.vocab = build_vocab(s.corpus, 1);
  ModelDims dims{s.vocab.size(), 8, 8, 6};
  s.params = init_params(dims, seed);
  return s;
}

}  // namespace

TEST_CASE("history input layout") {
  const auto conv = test::mixed_corpus()[0];
  auto answers = [](int j) { return "ans" + std::to_string(j); };
  CHECK(build_history_input(conv, 0, 2, answers) ==
        std::vector<std::string>{"<q>", "what", "color", "was", "cotton", "?"});
  CHECK(build_history_input(conv, 3, 0, answers) ==
        std::vector<std::string>{"<q>", "who", "?"});
  CHECK(build_history_input(conv, 3, 2, answers) ==
        std::vector<std::string>{"<q>", "where", "did", "she", "live", "?", "<a>", "ans1",
                                 "<q>", "did", "she", "live", "alone", "?", "<a>", "ans2",
                                 "<q>", "who", "?"});
  // The window is cut at the start of the conversation.
  CHECK(build_history_input(conv, 1, 5, answers) ==
        std::vector<std::string>{"<q>", "what", "color", "was", "cotton", "?", "<a>", "ans0",
                                 "<q>", "where", "did", "she", "live", "?"});
}

TEST_CASE("history answers only come from the supplier for earlier turns") {
  const auto conv = test::mixed_corpus()[1];
  for (int window : {0, 1, 2, 4}) {
    for (int i = 0; i < static_cast<int>(conv.turns.size()); ++i) {
      std::vector<int> asked;
      build_history_input(conv, i, window, [&](int j) {
        asked.push_back(j);
        return std::string("x");
      });
      CHECK(static_cast<int>(asked.size()) == std::min(i, window));
      for (int j : asked) {
        CHECK(j < i);
        CHECK(j >= i - window);
      }
    }
  }
}

TEST_CASE("MP inference never reads gold answers") {
  const auto s = small_setup(3);
  const auto ev = evaluate(s.params, s.vocab, s.corpus, InferenceMode::mp, 2, 6,
                           ScoringScheme::max);
  // evaluate scores against gold after inference, so isolate inference.
  GoldAccessTracker inner;
  for (const auto& c : s.corpus) answer_conversation(s.params, s.vocab, c, InferenceMode::mp, 2, 6);
  CHECK(inner.reads() == 0);
  CHECK(ev.report.total_turns > 0);
}

TEST_CASE("SM inference reads exactly the windowed previous gold answers") {
  const auto s = small_setup(4);
  const auto& conv = s.corpus[0];
  GoldAccessTracker tracker;
  answer_conversation(s.params, s.vocab, conv, InferenceMode::sm, 2, 6);
  std::vector<int> want;
  for (int i = 0; i < static_cast<int>(conv.turns.size()); ++i) {
    for (int j = std::max(0, i - 2); j < i; ++j) want.push_back(conv.turns[j].turn_id);
  }
  auto got = tracker.turn_ids();
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  CHECK(got == want);
}

TEST_CASE("MP feeds back its own predictions") {
  const auto s = small_setup(5);
  const auto& conv = s.corpus[1];
  std::vector<std::vector<std::string>> inputs;
  const auto r = answer_conversation(
      s.params, s.vocab, conv, InferenceMode::mp, 1, 6,
      [&](int, const std::vector<std::string>& toks) { inputs.push_back(toks); });
  REQUIRE(inputs.size() == conv.turns.size());
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    const auto a = std::find(inputs[i].begin(), inputs[i].end(), std::string(kAnswerMarker));
    REQUIRE(a != inputs[i].end());
    const auto q = std::find(a, inputs[i].end(), std::string(kQuestionMarker));
    const std::vector<std::string> fed(a + 1, q);
    CHECK(join_tokens(fed) == join_tokens(tokenize(r.predictions[i - 1].answer_text)));
  }
}

TEST_CASE("prefix property on random prefixes") {
  const auto s = small_setup(6);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const auto& conv = s.corpus[rng() % s.corpus.size()];
    const int k = 1 + static_cast<int>(rng() % conv.turns.size());
    Conversation prefix = conv;
    prefix.turns.resize(k);
    for (auto mode : {InferenceMode::mp, InferenceMode::sm}) {
      const auto full = answer_conversation(s.params, s.vocab, conv, mode, 2, 6);
      const auto part = answer_conversation(s.params, s.vocab, prefix, mode, 2, 6);
      REQUIRE(part.predictions.size() == static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) {
        CHECK(part.predictions[i].answer_text == full.predictions[i].answer_text);
        CHECK(part.predictions[i].start == full.predictions[i].start);
      }
    }
  }
}

TEST_CASE("predictions JSON round-trip") {
  const auto s = small_setup(7);
  const auto ev = evaluate(s.params, s.vocab, s.corpus, InferenceMode::sm, 2, 6,
                           ScoringScheme::leave_one_out);
  const auto text = predictions_to_json(ev.results);
  CHECK(predictions_from_json(text) == to_prediction_map(ev.results));
  const auto path = std::filesystem::temp_directory_path() / "convqa_preds_test.json";
  write_predictions(ev.results, path);
  CHECK(read_predictions(path) == to_prediction_map(ev.results));
  std::filesystem::remove(path);
  CHECK(to_prediction_map(ev.results).size() == static_cast<std::size_t>(ev.report.total_turns));
  CHECK(mode_from_string("mp") == InferenceMode::mp);
  CHECK_FALSE(mode_from_string("xx").has_value());
}

TEST_CASE("predictions are deterministic") {
  const auto s = small_setup(8);
  const auto a = evaluate(s.params, s.vocab, s.corpus, InferenceMode::mp, 2, 6, ScoringScheme::max);
  const auto b = evaluate(s.params, s.vocab, s.corpus, InferenceMode::mp, 2, 6, ScoringScheme::max);
  CHECK(predictions_to_json(a.results) == predictions_to_json(b.results));
}
