#include "convqa/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::usr: return "USR";
    case ScheduleKind::ed: return "ED";
    case ScheduleKind::ed_complement: return "ED_COMPLEMENT";
  }
  return "USR";
}

std::optional<ScheduleKind> schedule_kind_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (auto k : {ScheduleKind::usr, ScheduleKind::ed, ScheduleKind::ed_complement}) {
    if (to_string(k) == upper) return k;
  }
  return std::nullopt;
}

double epsilon(const Schedule& sched, int t) {
  if (sched.N < 1) throw ScheduleError("schedule N must be positive");
  if (t < 1 || t > sched.N) {
    throw ScheduleError("epoch " + std::to_string(t) + " outside schedule range 1.." +
                        std::to_string(sched.N));
  }
  const double decay = std::exp(-static_cast<double>(t) / (2.0 * sched.N));
  switch (sched.kind) {
    case ScheduleKind::usr:
      if (!(sched.c >= 0.0 && sched.c <= 1.0)) {
        throw ScheduleError("USR rate c must lie in [0, 1]");
      }
      return sched.c;
    case ScheduleKind::ed: return 1.0 - decay;
    case ScheduleKind::ed_complement: return decay;
  }
  throw ScheduleError("unknown schedule kind");
}

HistoryChoice choose_history_answer(std::mt19937_64& rng, double eps,
                                    const std::string& gold,
                                    const std::optional<std::string>& cached) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < eps || !cached) return {gold, Provenance::gold};
  return {*cached, Provenance::predicted};
}

void PredictionCache::put(const std::string& conv_id, int turn_id, std::string text) {
  entries_[{conv_id, turn_id}] = {std::move(text), epoch_stamp_};
}

std::optional<std::string> PredictionCache::get(const std::string& conv_id,
                                                int turn_id) const {
  auto it = entries_.find({conv_id, turn_id});
  if (it == entries_.end()) return std::nullopt;
  return it->second.answer_text;
}

std::optional<CacheEntry> PredictionCache::entry(const std::string& conv_id,
                                                 int turn_id) const {
  auto it = entries_.find({conv_id, turn_id});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool PredictionCache::erase(const std::string& conv_id, int turn_id) {
  return entries_.erase({conv_id, turn_id}) > 0;
}

std::vector<CacheKey> assert_complete(const PredictionCache& cache,
                                      const std::vector<Conversation>& corpus) {
  std::vector<CacheKey> missing;
  for (const auto& conv : corpus) {
    for (const auto& turn : conv.turns) {
      if (!cache.entry(conv.id, turn.turn_id)) missing.emplace_back(conv.id, turn.turn_id);
    }
  }
  return missing;
}

std::string cache_to_jsonl(const PredictionCache& cache) {
  std::string out;
  for (const auto& [key, e] : cache.entries()) {
    nlohmann::ordered_json j;
    j["conversation_id"] = key.first;
    j["turn_id"] = key.second;
    j["answer_text"] = e.answer_text;
    j["epoch_stamp"] = e.epoch_stamp;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

PredictionCache cache_from_jsonl(std::string_view text) {
  PredictionCache cache;
  int max_stamp = 0;
  std::size_t offset = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int stamp = j.at("epoch_stamp").get<int>();
      cache.set_epoch_stamp(stamp);
      cache.put(j.at("conversation_id").get<std::string>(), j.at("turn_id").get<int>(),
                j.at("answer_text").get<std::string>());
      max_stamp = std::max(max_stamp, stamp);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("bad cache record: ") + e.what(), line_start + e.byte);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad cache record: ") + e.what(), line_start);
    }
  }
  cache.set_epoch_stamp(max_stamp);
  return cache;
}

void save_cache(const PredictionCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write cache " + path.string());
  out << cache_to_jsonl(cache);
}

PredictionCache load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cache " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return cache_from_jsonl(buf.str());
}

}  // namespace convqa
