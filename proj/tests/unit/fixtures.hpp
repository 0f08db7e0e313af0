#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/model.hpp"

namespace convqa::test {

// Answer whose rationale is the first occurrence of `span` in an ASCII passage.
inline Answer answer_at(const std::string& passage, const std::string& text,
                        const std::string& span) {
  Answer a;
  a.text = text;
  const auto pos = passage.find(span);
  if (pos == std::string::npos || span.empty()) return a;
  a.span_start = static_cast<int>(pos);
  a.span_end = static_cast<int>(pos + span.size());
  a.span_text = span;
  return a;
}

// Small hand-written corpus covering every answer type, every question-length
// bucket, extra references, two domains and both conversation-length buckets.
inline std::vector<Conversation> mixed_corpus() {
  std::vector<Conversation> out;

  {
    Conversation c;
    c.id = "cotton";
    c.domain = Domain::children;
    c.passage =
        "Cotton was a white kitten who lived in a barn near the farm house. "
        "Her sisters were orange and white. Cotton wanted to be orange too, so "
        "she jumped into a can of paint.";
    const auto& p = c.passage;
    c.turns.emplace_back(1, "What color was Cotton?", answer_at(p, "white", "white kitten"),
                         std::vector<Answer>{answer_at(p, "a white kitten", "white kitten")});
    c.turns.emplace_back(2, "Where did she live?", answer_at(p, "in a barn", "in a barn"),
                         std::vector<Answer>{answer_at(p, "barn", "barn"),
                                             answer_at(p, "in the barn", "in a barn")});
    c.turns.emplace_back(3, "Did she live alone?", answer_at(p, "no", "Her sisters"));
    c.turns.emplace_back(4, "Who?", answer_at(p, "her sisters", "Her sisters"));
    c.turns.emplace_back(5, "What color were they?",
                         answer_at(p, "orange and white", "orange and white"));
    c.turns.emplace_back(6, "Was Cotton happy being white and not orange like them?",
                         answer_at(p, "no", "wanted to be orange"));
    c.turns.emplace_back(7, "What did she jump into?", answer_at(p, "a can of paint", "can of paint"));
    c.turns.emplace_back(8, "What was the name of the dog that lived with the family in the house?",
                         Answer{"unknown", -1, -1, ""});
    out.push_back(std::move(c));
  }

  {
    Conversation c;
    c.id = "harbor";
    c.domain = Domain::news;
    c.passage =
        "The city council voted on Monday to rebuild the old harbor bridge. "
        "The mayor said work would start in spring and cost forty million "
        "dollars. Residents have complained about traffic for years.";
    const auto& p = c.passage;
    const std::vector<std::pair<std::string, std::string>> qa{
        {"Who voted?", "the city council"},
        {"When?", "on Monday"},
        {"What will they rebuild?", "the old harbor bridge"},
        {"Is it new?", "no"},
        {"Who spoke?", "the mayor"},
        {"When does the work start?", "in spring"},
        {"How much will it cost the city in total?", "forty million dollars"},
        {"Did anyone complain?", "yes"},
        {"About what?", "traffic"},
        {"For how long?", "for years"},
        {"Did the mayor say who would pay for the new harbor bridge work?", "unknown"},
        {"Was the vote on Monday?", "yes"},
    };
    const std::vector<std::string> spans{
        "The city council", "on Monday", "the old harbor bridge", "rebuild the old",
        "The mayor", "in spring", "forty million dollars", "Residents have complained",
        "traffic", "for years", "", "voted on Monday"};
    for (std::size_t i = 0; i < qa.size(); ++i) {
      Answer a = spans[i].empty() ? Answer{qa[i].second, -1, -1, ""}
                                  : answer_at(p, qa[i].second, spans[i]);
      c.turns.emplace_back(static_cast<int>(i) + 1, qa[i].first, a);
    }
    c.turns[8].additional_refs.push_back(answer_at(p, "about traffic", "traffic"));
    out.push_back(std::move(c));
  }

  {
    Conversation c;
    c.id = "river";
    c.domain = Domain::children;
    c.passage = "Tom and Ann walked to the river. Ann caught a big fish.";
    const auto& p = c.passage;
    c.turns.emplace_back(1, "Where did Tom and Ann walk?", answer_at(p, "to the river", "to the river"));
    c.turns.emplace_back(2, "Who caught a fish?", answer_at(p, "Ann", "Ann caught"),
                         std::vector<Answer>{answer_at(p, "Ann", "Ann")});
    c.turns.emplace_back(3, "Was it big?", answer_at(p, "yes", "big fish"));
    out.push_back(std::move(c));
  }
  return out;
}

struct GradInstance {
  ModelParams params;
  std::vector<int> passage;
  std::vector<int> question;
  SpanTarget target;
};

// Random model and input at the given width. Questions carry a history
// ("<q> .. <a> .. <q> ..") that shares tokens with the passage so every match
// flag gets exercised.
inline GradInstance random_grad_instance(std::uint64_t seed, int width = 8) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  ModelDims dims;
  dims.vocab_size = 16;
  dims.embed_dim = width;
  dims.hidden_dim = width;
  dims.max_span_len = 4;
  GradInstance g{init_params(dims, rng()), {}, {}, {}};
  const int n = uniform(3, 9);
  for (int i = 0; i < n; ++i) g.passage.push_back(uniform(Vocab::kNumReserved, 15));
  auto word = [&]() {
    return uniform(0, 2) == 0 ? g.passage[uniform(0, n - 1)] : uniform(Vocab::kNumReserved, 15);
  };
  if (uniform(0, 1) == 1) {
    g.question.push_back(Vocab::kQuestionSep);
    for (int i = uniform(1, 3); i > 0; --i) g.question.push_back(word());
    g.question.push_back(Vocab::kAnswerSep);
    for (int i = uniform(1, 2); i > 0; --i) g.question.push_back(word());
  }
  g.question.push_back(Vocab::kQuestionSep);
  for (int i = uniform(1, 4); i > 0; --i) g.question.push_back(word());
  g.target.type = static_cast<AnswerType>(uniform(0, 3));
  if (g.target.type == AnswerType::span) {
    g.target.start = uniform(0, n - 1);
    g.target.end = std::min(n - 1, g.target.start + uniform(0, 2));
  }
  return g;
}

// Largest relative error between analytic gradients and central differences.
// The denominator is floored so that entries whose true gradient is ~0 are
// judged on absolute error.
inline double max_gradient_error(const GradInstance& g, double step = 1e-5,
                                 double floor = 1e-6) {
  const auto analytic = backward(g.params, forward(g.params, g.passage, g.question), g.target);
  std::vector<std::vector<double>> flat;
  for_each_tensor(analytic, [&](std::string_view, std::span<const double> t) {
    flat.emplace_back(t.begin(), t.end());
  });
  ModelParams p = g.params;
  double worst = 0.0;
  std::size_t tensor = 0;
  for_each_tensor(p, [&](std::string_view, std::span<double> t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = loss(forward(p, g.passage, g.question), g.target);
      t[i] = saved - step;
      const double down = loss(forward(p, g.passage, g.question), g.target);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = flat[tensor][i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, err);
    }
    ++tensor;
  });
  return worst;
}

}  // namespace convqa::test
