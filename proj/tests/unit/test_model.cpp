#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "convqa/errors.hpp"
#include "convqa/model.hpp"
#include "fixtures.hpp"

using namespace convqa;

TEST_CASE("analytic gradients match central differences") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto g = test::random_grad_instance(seed);
    CAPTURE(seed);
    CHECK(test::max_gradient_error(g) < 1e-4);
  }
}

TEST_CASE("gradient check notices a broken gradient") {
  // Sanity check of the oracle itself: a deliberately perturbed analytic
  // gradient must be flagged.
  auto g = test::random_grad_instance(7);
  const auto trace = forward(g.params, g.passage, g.question);
  auto grads = backward(g.params, trace, g.target);
  grads.start_scorer[0] += 0.1;
  ModelParams p = g.params;
  const double step = 1e-5;
  p.start_scorer[0] += step;
  const double up = loss(forward(p, g.passage, g.question), g.target);
  p.start_scorer[0] -= 2 * step;
  const double down = loss(forward(p, g.passage, g.question), g.target);
  const double numeric = (up - down) / (2 * step);
  CHECK(std::abs(grads.start_scorer[0] - numeric) > 0.05);
}

TEST_CASE("initial weights lie within fan-in bounds") {
  ModelDims dims{50, 12, 10, 5};
  const auto p = init_params(dims, 3);
  CHECK(p == init_params(dims, 3));
  CHECK_FALSE(p == init_params(dims, 4));
  const double bd = 1.0 / std::sqrt(12.0);
  const double bh = 1.0 / std::sqrt(10.0);
  for (double x : p.embedding.data) CHECK(std::abs(x) <= bd);
  for (double x : p.passage_rnn.hidden.data) CHECK(std::abs(x) <= bh);
  for (double x : p.class_scorer.data) CHECK(std::abs(x) <= 1.0 / std::sqrt(20.0));
  CHECK(all_finite(p));
  CHECK(p.class_scorer.rows == kNumClasses);
  CHECK(p.class_scorer.cols == 20);
  std::size_t count = 0;
  for_each_tensor(p, [&](std::string_view, std::span<const double> t) { count += t.size(); });
  CHECK(parameter_count(p) == count);
  CHECK_THROWS_AS(init_params(ModelDims{0, 4, 4, 4}, 1), ConfigError);
}

TEST_CASE("tensor visitors agree on order and names") {
  ModelDims dims{9, 4, 3, 2};
  auto a = init_params(dims, 1);
  const auto b = init_params(dims, 2);
  std::vector<std::string> names_mut, names_const;
  for_each_tensor(a, [&](std::string_view n, std::span<double>) { names_mut.emplace_back(n); });
  for_each_tensor(b, [&](std::string_view n, std::span<const double>) {
    names_const.emplace_back(n);
  });
  CHECK(names_mut == names_const);
  CHECK(std::set<std::string>(names_mut.begin(), names_mut.end()).size() == names_mut.size());
  for_each_tensor_pair(a, b, [](std::string_view, std::span<double> x, std::span<const double> y) {
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = y[i];
  });
  CHECK(a == b);
}

TEST_CASE("zero parameters give the uniform loss") {
  ModelDims dims{12, 6, 5, 3};
  const auto p = zeros_like(dims);
  const std::vector<int> passage{4, 5, 6, 7, 8, 9, 10, 11};
  const std::vector<int> question{2, 4, 5};
  const auto trace = forward(p, passage, question);
  CHECK(loss(trace, {AnswerType::span, 2, 3}) ==
        doctest::Approx(2 * std::log(8.0) + std::log(4.0)).epsilon(1e-12));
  CHECK(loss(trace, {AnswerType::yes, -1, -1}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (double w : trace.attention_weights) CHECK(w == doctest::Approx(1.0 / 8));
}

TEST_CASE("supervision targets are checked") {
  ModelDims dims{12, 4, 4, 3};
  const auto p = init_params(dims, 1);
  const std::vector<int> passage{4, 5, 6};
  const std::vector<int> question{2, 7};
  const auto trace = forward(p, passage, question);
  CHECK_THROWS_AS(loss(trace, {AnswerType::span, 2, 1}), SupervisionError);
  CHECK_THROWS_AS(loss(trace, {AnswerType::span, 0, 3}), SupervisionError);
  CHECK_THROWS_AS(loss(trace, {AnswerType::span, -1, 0}), SupervisionError);
}

TEST_CASE("best_span agrees with brute-force enumeration") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    const int max_len = std::uniform_int_distribution<int>(1, 6)(rng);
    std::vector<double> s(n), e(n);
    for (auto& x : s) x = std::round(noise(rng) * 2) / 2;  // coarse values force ties
    for (auto& x : e) x = std::round(noise(rng) * 2) / 2;
    double best = -std::numeric_limits<double>::infinity();
    std::pair<int, int> want{-1, -1};
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n && j < i + max_len; ++j) {
        if (s[i] + e[j] > best) {
          best = s[i] + e[j];
          want = {i, j};
        }
      }
    }
    CHECK(best_span(s, e, max_len) == want);
  }
  const std::vector<double> flat(6, 0.0);
  CHECK(best_span(flat, flat, 3) == std::pair<int, int>{0, 0});
}

TEST_CASE("predict_answer prefers the span class on ties") {
  ForwardTrace t;
  t.class_logits = {0.0, 0.0, 0.0, 0.0};
  t.start_logits = {0.0, 3.0, 0.0};
  t.end_logits = {0.0, 0.0, 2.0};
  const std::vector<std::string> tokens{"a", "white", "kitten"};
  auto p = predict_answer(t, tokens, 5);
  CHECK(p.type == AnswerType::span);
  CHECK(p.answer_text == "white kitten");
  t.class_logits = {0.0, 1.0, 1.0, 0.5};
  p = predict_answer(t, tokens, 5);
  CHECK(p.type == AnswerType::no);
  CHECK(p.answer_text == "no");
  double total = 0.0;
  for (double x : p.class_probs) total += x;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("softmax is stable for large logits") {
  const std::vector<double> big{1000.0, 1000.0, -1000.0};
  const auto p = softmax(big);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[2] == doctest::Approx(0.0));
}

TEST_CASE("first Adam step moves each weight by lr against the gradient sign") {
  ModelDims dims{10, 4, 3, 3};
  auto p = init_params(dims, 5);
  const auto before = p;
  const auto trace = forward(p, std::vector<int>{4, 5, 6, 7}, std::vector<int>{2, 8, 5});
  const auto g = backward(p, trace, {AnswerType::span, 1, 2});
  auto state = AdamState::for_dims(dims);
  AdamHyper hyper;
  hyper.lr = 0.01;
  adam_step(p, g, state, hyper);
  CHECK(state.step == 1);
  std::vector<std::vector<double>> gs, b0;
  for_each_tensor(g, [&](std::string_view, std::span<const double> t) { gs.emplace_back(t.begin(), t.end()); });
  for_each_tensor(before, [&](std::string_view, std::span<const double> t) { b0.emplace_back(t.begin(), t.end()); });
  std::size_t k = 0;
  for_each_tensor(p, [&](std::string_view, std::span<const double> t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double grad = gs[k][i];
      const double delta = t[i] - b0[k][i];
      if (std::abs(grad) > 1e-6) {
        CHECK(delta == doctest::Approx(-hyper.lr * (grad > 0 ? 1.0 : -1.0)).epsilon(1e-3));
      } else if (grad == 0.0) {
        CHECK(delta == 0.0);
      }
    }
    ++k;
  });
}

TEST_CASE("Adam rejects non-finite gradients and leaves state untouched") {
  ModelDims dims{10, 4, 3, 3};
  auto p = init_params(dims, 5);
  auto g = zeros_like(dims);
  g.end_scorer[1] = std::numeric_limits<double>::quiet_NaN();
  auto state = AdamState::for_dims(dims);
  const auto p0 = p;
  const auto s0 = state;
  CHECK_THROWS_AS(adam_step(p, g, state, {}), NumericError);
  CHECK(p == p0);
  CHECK(state == s0);
}

TEST_CASE("embedding gradient only touches rows that were read") {
  ModelDims dims{20, 5, 4, 3};
  const auto p = init_params(dims, 8);
  const std::vector<int> passage{4, 5, 6, 5};
  const std::vector<int> question{2, 7, 4};
  const auto g = backward(p, forward(p, passage, question), {AnswerType::span, 0, 1});
  const std::set<int> used{2, 4, 5, 6, 7};
  for (int r = 0; r < dims.vocab_size; ++r) {
    double norm = 0.0;
    for (double x : g.embedding.row(r)) norm += std::abs(x);
    if (used.count(r)) {
      CHECK(norm > 0.0);
    } else {
      CHECK(norm == 0.0);
    }
  }
}

TEST_CASE("identical embeddings give identical passage states") {
  // Two token ids with equal embeddings and no match flags are
  // indistinguishable to the passage reader.
  ModelDims dims{12, 4, 4, 3};
  auto p = init_params(dims, 2);
  for (int c = 0; c < dims.embed_dim; ++c) p.embedding(9, c) = p.embedding(8, c);
  const auto a = forward(p, std::vector<int>{4, 8, 5}, std::vector<int>{2, 6});
  const auto b = forward(p, std::vector<int>{4, 9, 5}, std::vector<int>{2, 6});
  CHECK(a.passage_states == b.passage_states);
  CHECK(a.start_logits == b.start_logits);
}

TEST_CASE("match flags follow the history markers") {
  ModelDims dims{20, 4, 4, 3};
  const auto p = init_params(dims, 2);
  // history question mentions 6, history answer is 7, current question has 8.
  const std::vector<int> question{2, 6, 3, 7, 2, 8, 1};
  const std::vector<int> passage{6, 7, 8, 9, 1, 0};
  const auto t = forward(p, passage, question);
  CHECK(t.passage_match == std::vector<int>{4, 2, 1, 0, 0, 0});
  // Without history only the current-question bit can appear.
  const auto u = forward(p, passage, std::vector<int>{8, 6});
  CHECK(u.passage_match == std::vector<int>{1, 0, 1, 0, 0, 0});
}

TEST_CASE("forward validates its inputs and shapes") {
  ModelDims dims{10, 4, 4, 3};
  const auto p = init_params(dims, 1);
  CHECK_THROWS_AS(forward(p, std::vector<int>{4, 10}, std::vector<int>{2, 5}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<int>{4}, std::vector<int>{-1}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<int>{}, std::vector<int>{5}), InputError);
  const auto t = forward(p, std::vector<int>{7}, std::vector<int>{2, 7});
  CHECK(t.start_logits.size() == 1);
  CHECK(t.end_logits.size() == 1);
  CHECK(t.class_logits.size() == kNumClasses);
  double total = 0.0;
  for (double w : t.attention_weights) total += w;
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("no initial weight reaches magnitude one") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = init_params(ModelDims{30, 1, 1, 4}, seed);  // fan-in 1 is the widest range
    for_each_tensor(p, [](std::string_view, std::span<const double> t) {
      for (double x : t) CHECK(std::abs(x) < 1.0);
    });
  }
}

TEST_CASE("swapping two embedding rows and their ids leaves logits unchanged") {
  ModelDims dims{14, 5, 4, 3};
  const auto p = init_params(dims, 6);
  auto q = p;
  for (int c = 0; c < dims.embed_dim; ++c) std::swap(q.embedding(5, c), q.embedding(9, c));
  auto swap_ids = [](std::vector<int> ids) {
    for (int& id : ids) id = id == 5 ? 9 : id == 9 ? 5 : id;
    return ids;
  };
  const std::vector<int> passage{4, 5, 6, 9, 5};
  const std::vector<int> question{2, 9, 3, 5, 2, 6, 5};
  const auto a = forward(p, passage, question);
  const auto b = forward(q, swap_ids(passage), swap_ids(question));
  CHECK(a.start_logits == b.start_logits);
  CHECK(a.end_logits == b.end_logits);
  CHECK(a.class_logits == b.class_logits);
}

TEST_CASE("loss vanishes at a perfect prediction and so does the gradient") {
  ForwardTrace t;
  t.class_logits = {0.0, 0.0, 0.0, 1000.0};
  t.start_logits = {0.0, 1000.0, 0.0};
  t.end_logits = {0.0, 0.0, 1000.0};
  t.passage_states = Matrix(3, 1);
  CHECK(loss(t, {AnswerType::span, 1, 2}) == doctest::Approx(0.0));

  // A class bias that makes "yes" certain: every gradient is scaled by the
  // vanishing class residual.
  ModelDims dims{10, 4, 4, 3};
  auto p = init_params(dims, 2);
  p.class_bias[static_cast<int>(AnswerType::yes)] = 60.0;
  const auto trace = forward(p, std::vector<int>{4, 5, 6}, std::vector<int>{2, 7});
  CHECK(loss(trace, {AnswerType::yes, -1, -1}) < 1e-20);
  const auto g = backward(p, trace, {AnswerType::yes, -1, -1});
  double norm = 0.0;
  for_each_tensor(g, [&](std::string_view, std::span<const double> x) {
    for (double v : x) norm += v * v;
  });
  CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  ModelDims dims{10, 4, 3, 3};
  auto p = init_params(dims, 9);
  const auto before = p;
  auto state = AdamState::for_dims(dims);
  adam_step(p, zeros_like(dims), state, {});
  CHECK(p == before);
}
