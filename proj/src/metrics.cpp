#include "convqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool is_article(const std::string& w) { return w == "a" || w == "an" || w == "the"; }

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::ispunct(c)) continue;
    stripped.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  std::string out;
  for (const auto& w : split_ws(stripped)) {
    if (is_article(w)) continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

double f1_single(std::string_view pred, std::string_view gold) {
  const auto p = split_ws(normalize_answer(pred));
  const auto g = split_ws(normalize_answer(gold));
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
  std::unordered_map<std::string, int> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  int overlap = 0;
  for (const auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / p.size();
  const double recall = static_cast<double>(overlap) / g.size();
  return 2.0 * precision * recall / (precision + recall);
}

double em_single(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1.0 : 0.0;
}

std::string_view to_string(ScoringScheme scheme) {
  return scheme == ScoringScheme::max ? "max" : "loo";
}

std::optional<ScoringScheme> scheme_from_string(std::string_view name) {
  if (name == "max") return ScoringScheme::max;
  if (name == "loo" || name == "leave_one_out") return ScoringScheme::leave_one_out;
  return std::nullopt;
}

TurnScore score_multi_both(std::string_view pred,
                           const std::vector<std::string>& golds,
                           ScoringScheme scheme) {
  if (golds.empty()) throw InputError("score_multi needs at least one reference");
  auto best_over = [&](std::size_t skip) {
    TurnScore best{0.0, 0.0};
    for (std::size_t i = 0; i < golds.size(); ++i) {
      if (i == skip) continue;
      best.em = std::max(best.em, em_single(pred, golds[i]));
      best.f1 = std::max(best.f1, f1_single(pred, golds[i]));
    }
    return best;
  };
  if (golds.size() == 1 || scheme == ScoringScheme::max) {
    return best_over(golds.size());
  }
  TurnScore sum{0.0, 0.0};
  for (std::size_t k = 0; k < golds.size(); ++k) {
    const auto fold = best_over(k);
    sum.em += fold.em;
    sum.f1 += fold.f1;
  }
  const double n = static_cast<double>(golds.size());
  return {sum.em / n, sum.f1 / n};
}

double score_multi(std::string_view pred, const std::vector<std::string>& golds,
                   ScoringScheme scheme) {
  return score_multi_both(pred, golds, scheme).f1;
}

// --- Buckets ----------------------------------------------------------------------

std::string_view to_string(ConvLengthBucket bucket) {
  return bucket == ConvLengthBucket::shorter ? "shorter" : "longer";
}

int question_length(std::string_view question) {
  int n = 0;
  for (const auto& t : tokenize(question)) {
    if (!is_punctuation_token(t)) ++n;
  }
  return n;
}

int question_length_bucket(int length, const LengthBuckets& buckets) {
  int idx = 0;
  for (int edge : buckets.question_length_edges) {
    if (length < edge) return idx;
    ++idx;
  }
  return idx;
}

std::string question_length_label(int bucket_index) {
  return "QL" + std::to_string(bucket_index + 1);
}

ConvLengthBucket conv_length_bucket(int rounds, const LengthBuckets& buckets) {
  return rounds < buckets.conv_length_threshold ? ConvLengthBucket::shorter
                                                : ConvLengthBucket::longer;
}

// --- Aggregation -----------------------------------------------------------------

std::vector<std::string> reference_texts(const Turn& turn) {
  std::vector<std::string> refs{turn.gold().text};
  for (const auto& a : turn.additional_refs) refs.push_back(a.text);
  return refs;
}

namespace {

struct Accumulator {
  double em = 0.0;
  double f1 = 0.0;
  int count = 0;

  void add(const TurnScore& s) {
    em += s.em;
    f1 += s.f1;
    ++count;
  }
  CellScore finish() const {
    if (count == 0) return {};
    return {100.0 * em / count, 100.0 * f1 / count, count};
  }
};

struct TypedAccumulator {
  Accumulator overall;
  std::array<Accumulator, kNumAnswerTypes> by_type;

  void add(AnswerType type, const TurnScore& s) {
    overall.add(s);
    by_type[static_cast<int>(type)].add(s);
  }
  TypedCell finish() const {
    TypedCell c;
    c.overall = overall.finish();
    for (int t = 0; t < kNumAnswerTypes; ++t) c.by_type[t] = by_type[t].finish();
    return c;
  }
};

}  // namespace

EvalReport aggregate_report(const PredictionMap& predictions,
                            const std::vector<Conversation>& corpus,
                            ScoringScheme scheme, const LengthBuckets& buckets) {
  std::vector<std::string> missing;
  for (const auto& conv : corpus) {
    for (const auto& turn : conv.turns) {
      if (!predictions.count({conv.id, turn.turn_id})) {
        missing.push_back(conv.id + "#" + std::to_string(turn.turn_id));
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions for " +
                      std::to_string(missing.size()) + " turn(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw CoverageError(msg);
  }

  Accumulator overall;
  std::map<Domain, Accumulator> by_domain;
  std::array<Accumulator, kNumAnswerTypes> by_type;
  std::array<TypedAccumulator, 2> by_conv;
  std::array<TypedAccumulator, 5> by_ql;

  for (const auto& conv : corpus) {
    const auto conv_bucket = static_cast<int>(
        conv_length_bucket(static_cast<int>(conv.turns.size()), buckets));
    for (const auto& turn : conv.turns) {
      const auto& pred = predictions.at({conv.id, turn.turn_id});
      const TurnScore s = score_multi_both(pred, reference_texts(turn), scheme);
      overall.add(s);
      by_domain[conv.domain].add(s);
      by_type[static_cast<int>(turn.answer_type)].add(s);
      by_conv[conv_bucket].add(turn.answer_type, s);
      by_ql[question_length_bucket(question_length(turn.question_text), buckets)]
          .add(turn.answer_type, s);
    }
  }

  EvalReport r;
  r.scheme = scheme;
  r.total_turns = overall.count;
  r.overall = overall.finish();
  for (const auto& [d, acc] : by_domain) r.by_domain[d] = acc.finish();
  for (int t = 0; t < kNumAnswerTypes; ++t) r.by_answer_type[t] = by_type[t].finish();
  for (int b = 0; b < 2; ++b) r.by_conv_length[b] = by_conv[b].finish();
  for (int b = 0; b < 5; ++b) r.by_question_length[b] = by_ql[b].finish();
  return r;
}

// --- Emission ------------------------------------------------------------------------

namespace {

constexpr std::array<AnswerType, kNumAnswerTypes> kTypes{
    AnswerType::yes, AnswerType::no, AnswerType::unknown, AnswerType::span};

void typed_rows(std::vector<ReportRow>& rows, const std::string& partition,
                const std::string& cell, const TypedCell& tc) {
  rows.push_back({partition, cell, "overall", tc.overall});
  for (auto t : kTypes) {
    rows.push_back({partition, cell, std::string(to_string(t)),
                    tc.by_type[static_cast<int>(t)]});
  }
}

nlohmann::ordered_json cell_json(const CellScore& c) {
  if (c.empty()) return nullptr;
  return {{"em", c.em}, {"f1", c.f1}, {"count", c.count}};
}

nlohmann::ordered_json typed_json(const TypedCell& tc) {
  nlohmann::ordered_json j;
  j["overall"] = cell_json(tc.overall);
  for (auto t : kTypes) j[std::string(to_string(t))] = cell_json(tc.by_type[static_cast<int>(t)]);
  return j;
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::vector<ReportRow> report_rows(const EvalReport& report) {
  std::vector<ReportRow> rows;
  rows.push_back({"overall", "all", "overall", report.overall});
  for (const auto& [d, c] : report.by_domain) {
    rows.push_back({"domain", std::string(to_string(d)), "overall", c});
  }
  for (auto t : kTypes) {
    rows.push_back({"answer_type", std::string(to_string(t)), "overall",
                    report.by_answer_type[static_cast<int>(t)]});
  }
  typed_rows(rows, "conv_length", "shorter", report.by_conv_length[0]);
  typed_rows(rows, "conv_length", "longer", report.by_conv_length[1]);
  for (int b = 0; b < 5; ++b) {
    typed_rows(rows, "question_length", question_length_label(b),
               report.by_question_length[b]);
  }
  return rows;
}

std::string report_to_json(const EvalReport& report,
                           const std::string& corpus_fingerprint,
                           std::string_view mode) {
  nlohmann::ordered_json j;
  j["corpus_fingerprint"] = corpus_fingerprint;
  j["mode"] = std::string(mode);
  j["scheme"] = std::string(to_string(report.scheme));
  j["total_turns"] = report.total_turns;
  j["overall"] = cell_json(report.overall);
  nlohmann::ordered_json dom = nlohmann::ordered_json::object();
  for (const auto& [d, c] : report.by_domain) dom[std::string(to_string(d))] = cell_json(c);
  j["by_domain"] = dom;
  nlohmann::ordered_json types;
  for (auto t : kTypes) {
    types[std::string(to_string(t))] = cell_json(report.by_answer_type[static_cast<int>(t)]);
  }
  j["by_answer_type"] = types;
  j["by_conv_length"] = {{"shorter", typed_json(report.by_conv_length[0])},
                         {"longer", typed_json(report.by_conv_length[1])}};
  nlohmann::ordered_json ql;
  for (int b = 0; b < 5; ++b) {
    ql[question_length_label(b)] = typed_json(report.by_question_length[b]);
  }
  j["by_question_length"] = ql;
  j["notes"] = "conversations with exactly 12 rounds are counted as longer";
  return j.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "partition,cell,type,f1,em,count\n";
  for (const auto& row : report_rows(report)) {
    os << row.partition << ',' << row.cell << ',' << row.type << ',';
    if (row.score.empty()) {
      os << ",,0\n";
    } else {
      os << fixed2(row.score.f1) << ',' << fixed2(row.score.em) << ','
         << row.score.count << '\n';
    }
  }
  return os.str();
}

}  // namespace convqa
