#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "convqa/errors.hpp"
#include "convqa/sampling.hpp"
#include "fixtures.hpp"

using namespace convqa;

TEST_CASE("epsilon closed forms") {
  const Schedule usr{ScheduleKind::usr, 0.5, 30};
  const Schedule ed{ScheduleKind::ed, 1.0, 30};
  const Schedule edc{ScheduleKind::ed_complement, 1.0, 30};
  for (int t = 1; t <= 30; ++t) {
    CHECK(std::abs(epsilon(usr, t) - 0.5) <= 1e-12);
    const double want = 1.0 - std::exp(-t / 60.0);
    CHECK(std::abs(epsilon(ed, t) - want) <= 1e-12);
    CHECK(std::abs(epsilon(edc, t) - (1.0 - want)) <= 1e-12);
  }
  CHECK(std::abs(epsilon(ed, 30) - (1.0 - std::exp(-0.5))) <= 1e-12);
  CHECK(std::abs(epsilon(ed, 1) - (1.0 - std::exp(-1.0 / 60.0))) <= 1e-12);
}

TEST_CASE("ED rises and its complement falls") {
  const Schedule ed{ScheduleKind::ed, 1.0, 20};
  const Schedule edc{ScheduleKind::ed_complement, 1.0, 20};
  for (int t = 2; t <= 20; ++t) {
    CHECK(epsilon(ed, t) > epsilon(ed, t - 1));
    CHECK(epsilon(edc, t) < epsilon(edc, t - 1));
    CHECK(epsilon(ed, t) > 0.0);
    CHECK(epsilon(ed, t) < 1.0);
  }
}

TEST_CASE("invalid schedules are rejected") {
  CHECK_THROWS_AS(epsilon({ScheduleKind::usr, 0.5, 30}, 0), ScheduleError);
  CHECK_THROWS_AS(epsilon({ScheduleKind::usr, 0.5, 30}, 31), ScheduleError);
  CHECK_THROWS_AS(epsilon({ScheduleKind::usr, 1.5, 30}, 1), ScheduleError);
  CHECK_THROWS_AS(epsilon({ScheduleKind::usr, -0.1, 30}, 1), ScheduleError);
  CHECK_THROWS_AS(epsilon({ScheduleKind::ed, 1.0, 0}, 1), ScheduleError);
  CHECK(schedule_kind_from_string(to_string(ScheduleKind::ed_complement)) ==
        ScheduleKind::ed_complement);
  CHECK_FALSE(schedule_kind_from_string("linear").has_value());
}

TEST_CASE("gold fraction stays within three binomial sigmas") {
  const std::optional<std::string> cached = std::string("pred");
  for (double eps : {0.1, 0.3, 0.5, 0.9}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(eps * 1000));
    const int n = 10000;
    int gold = 0;
    for (int i = 0; i < n; ++i) {
      const auto c = choose_history_answer(rng, eps, "gold", cached);
      if (c.provenance == Provenance::gold) {
        ++gold;
        CHECK(c.answer_text == "gold");
      } else {
        CHECK(c.answer_text == "pred");
      }
    }
    const double sigma = std::sqrt(n * eps * (1 - eps));
    CHECK(std::abs(gold - n * eps) <= 3 * sigma);
  }
}

TEST_CASE("eps 0 and 1 are exact") {
  const std::optional<std::string> cached = std::string("pred");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    CHECK(choose_history_answer(rng, 1.0, "gold", cached).provenance == Provenance::gold);
    CHECK(choose_history_answer(rng, 0.0, "gold", cached).provenance == Provenance::predicted);
  }
}

TEST_CASE("a missing cache entry falls back to gold but still draws") {
  std::mt19937_64 a(4), b(4);
  const auto c = choose_history_answer(a, 0.0, "gold", std::nullopt);
  CHECK(c.provenance == Provenance::gold);
  CHECK(c.answer_text == "gold");
  choose_history_answer(b, 0.0, "gold", std::string("x"));
  CHECK(a() == b());
}

TEST_CASE("prediction cache stamps and completeness") {
  const auto corpus = test::mixed_corpus();
  PredictionCache cache(3);
  for (const auto& c : corpus) {
    for (const auto& t : c.turns) cache.put(c.id, t.turn_id, "x" + std::to_string(t.turn_id));
  }
  CHECK(assert_complete(cache, corpus).empty());
  CHECK(cache.entry("cotton", 2)->epoch_stamp == 3);
  CHECK(*cache.get("cotton", 2) == "x2");
  CHECK_FALSE(cache.get("cotton", 99).has_value());
  CHECK(cache.erase("harbor", 5));
  CHECK_FALSE(cache.erase("harbor", 5));
  const auto missing = assert_complete(cache, corpus);
  REQUIRE(missing.size() == 1);
  CHECK(missing[0] == CacheKey{"harbor", 5});
  cache.set_epoch_stamp(4);
  cache.put("harbor", 5, "y");
  CHECK(cache.entry("harbor", 5)->epoch_stamp == 4);
}

TEST_CASE("cache JSONL round-trip") {
  PredictionCache cache(2);
  cache.put("a", 1, "white kitten");
  cache.put("a", 2, "say \"hi\"\nthere");
  cache.set_epoch_stamp(5);
  cache.put("b", 1, "");
  const auto text = cache_to_jsonl(cache);
  const auto back = cache_from_jsonl(text);
  CHECK(back.entries() == cache.entries());
  CHECK(back.epoch_stamp() == 5);
  CHECK(cache_to_jsonl(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "convqa_cache_test.jsonl";
  save_cache(cache, path);
  CHECK(load_cache(path).entries() == cache.entries());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(cache_from_jsonl("{\"conversation_id\": \"a\"}\n"), FormatError);
  CHECK_THROWS_AS(cache_from_jsonl("not json\n"), FormatError);
  CHECK(cache_from_jsonl("").empty());
  CHECK_THROWS_AS(load_cache("/nonexistent/dir/cache.jsonl"), IoError);
}
