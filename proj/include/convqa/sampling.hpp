#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

// USR: constant rate c. ED: 1 - exp(-t / 2N), rising with t.
// ED_COMPLEMENT: exp(-t / 2N), falling with t.
enum class ScheduleKind { usr, ed, ed_complement };

std::string_view to_string(ScheduleKind kind);
std::optional<ScheduleKind> schedule_kind_from_string(std::string_view name);

struct Schedule {
  ScheduleKind kind = ScheduleKind::usr;
  double c = 1.0;  // USR only
  int N = 30;

  bool operator==(const Schedule&) const = default;
};

// Probability of feeding the gold previous answer at epoch t (1-based).
// Throws ScheduleError when t lies outside 1..N or the schedule is invalid.
double epsilon(const Schedule& sched, int t);

enum class Provenance { gold, predicted };

struct HistoryChoice {
  std::string answer_text;
  Provenance provenance = Provenance::gold;
};

// One coin flip: gold with probability eps, cached prediction otherwise.
// Without a cached prediction the gold answer is returned. Always consumes
// exactly one draw from rng.
HistoryChoice choose_history_answer(std::mt19937_64& rng, double eps,
                                    const std::string& gold,
                                    const std::optional<std::string>& cached);

using CacheKey = std::pair<std::string, int>;  // (conversation id, turn id)

struct CacheEntry {
  std::string answer_text;
  int epoch_stamp = 0;

  bool operator==(const CacheEntry&) const = default;
};

// Model-predicted answer text per training turn. Entries written while the
// cache is stamped with epoch t carry stamp t. Reads may run concurrently;
// writes need a single owner.
class PredictionCache {
 public:
  explicit PredictionCache(int epoch_stamp = 0) : epoch_stamp_(epoch_stamp) {}

  void put(const std::string& conv_id, int turn_id, std::string text);
  std::optional<std::string> get(const std::string& conv_id, int turn_id) const;
  std::optional<CacheEntry> entry(const std::string& conv_id, int turn_id) const;
  bool erase(const std::string& conv_id, int turn_id);

  int epoch_stamp() const { return epoch_stamp_; }
  void set_epoch_stamp(int stamp) { epoch_stamp_ = stamp; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<CacheKey, CacheEntry>& entries() const { return entries_; }

  bool operator==(const PredictionCache&) const = default;

 private:
  int epoch_stamp_;
  std::map<CacheKey, CacheEntry> entries_;
};

// Training turns lacking a cache entry; empty when the cache is complete.
std::vector<CacheKey> assert_complete(const PredictionCache& cache,
                                      const std::vector<Conversation>& corpus);

// One JSON object per line: conversation_id, turn_id, answer_text,
// epoch_stamp.
void save_cache(const PredictionCache& cache, const std::filesystem::path& path);
PredictionCache load_cache(const std::filesystem::path& path);
std::string cache_to_jsonl(const PredictionCache& cache);
PredictionCache cache_from_jsonl(std::string_view text);

}  // namespace convqa
