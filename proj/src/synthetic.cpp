#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/errors.hpp"

namespace convqa {

namespace {

constexpr std::array<const char*, 4> kRoles{"baker", "farmer", "tailor", "pilot"};
constexpr std::array<const char*, 4> kRelations{"friend", "neighbor", "boss",
                                                "cousin"};

// Question templates, shortest first. {x} is the entity phrase, {r} the
// relation.
constexpr std::array<const char*, 5> kTemplates{
    "the {r} of {x} ?",
    "who is the {r} of {x} ?",
    "and who is the {r} of {x} ?",
    "tell me who the {r} of {x} is ?",
    "can you tell me who the {r} of {x} is , please ?",
};

// Questions that leave the relation open. The gold answer is the fact the
// conversation continues from; the subject always carries a second fact.
constexpr std::array<const char*, 5> kVagueTemplates{
    "who is linked to {x} ?",
    "and who is linked to {x} ?",
    "tell me who is linked to {x} ?",
    "who is somebody linked to {x} ?",
    "can you tell me who is linked to {x} , please ?",
};

std::string entity_name(int k) {
  static constexpr std::array<const char*, 12> kHead{
      "ba", "ke", "mi", "lo", "tu", "ra", "si", "no", "de", "fa", "go", "pe"};
  static constexpr std::array<const char*, 8> kTail{"n", "ra", "lo", "mi",
                                                    "dor", "sa", "vin", "tta"};
  std::string name = kHead[k % kHead.size()];
  name += kTail[(k / kHead.size()) % kTail.size()];
  const int round = k / static_cast<int>(kHead.size() * kTail.size());
  if (round > 0) name += std::to_string(round);
  return name;
}

std::string fill_template(const char* tmpl, const std::string& rel,
                 const std::string& entity) {
  std::string out(tmpl);
  auto replace = [&out](const std::string& key, const std::string& value) {
    const auto pos = out.find(key);
    if (pos != std::string::npos) out.replace(pos, key.size(), value);
  };
  replace("{r}", rel);
  replace("{x}", entity);
  return out;
}

struct Fact {
  int subject;
  int relation;
  int value;
};

class ConversationBuilder {
 public:
  ConversationBuilder(std::mt19937_64& rng, int pool_size)
      : rng_(rng), pool_(pool_size) {
    std::iota(pool_.begin(), pool_.end(), 0);
    std::shuffle(pool_.begin(), pool_.end(), rng_);
  }

  int fresh_entity() {
    if (next_ >= pool_.size()) {
      throw ConfigError("entity pool exhausted while building a conversation");
    }
    const int e = pool_[next_++];
    role_[e] = uniform(static_cast<int>(kRoles.size()));
    cast_.push_back(e);
    return e;
  }

  int uniform(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  bool has_fact(int subject, int relation) const {
    return facts_index_.count({subject, relation}) > 0;
  }

  void add_fact(int subject, int relation, int value) {
    facts_index_[{subject, relation}] = static_cast<int>(facts_.size());
    facts_.push_back({subject, relation, value});
  }

  int relation_for(int subject) {
    std::vector<int> free;
    for (int r = 0; r < static_cast<int>(kRelations.size()); ++r) {
      if (!has_fact(subject, r)) free.push_back(r);
    }
    if (free.empty()) return -1;
    return free[uniform(static_cast<int>(free.size()))];
  }

  // Guarantees another entity sharing the subject's role carries the same
  // relation, so the role word alone cannot resolve the reference.
  void ensure_role_distractor(int subject, int relation, int answer) {
    const int role = role_.at(subject);
    std::vector<int> same_role;
    for (int e : cast_) {
      if (e == subject || role_.at(e) != role) continue;
      if (has_fact(e, relation)) return;
      same_role.push_back(e);
    }
    int d;
    if (same_role.empty()) {
      d = fresh_entity();
      role_[d] = role;
    } else {
      d = same_role[uniform(static_cast<int>(same_role.size()))];
    }
    add_fact(d, relation, pick_value(d, answer));
  }

  void maybe_extra_fact(int subject, int answer, bool force) {
    if (!force && !coin(0.5)) return;
    const int r = relation_for(subject);
    if (r >= 0) add_fact(subject, r, pick_value(subject, answer));
  }

  int pick_value(int subject, int answer) {
    std::vector<int> options;
    for (int e : cast_) {
      if (e != subject && e != answer) options.push_back(e);
    }
    if (options.empty()) return fresh_entity();
    return options[uniform(static_cast<int>(options.size()))];
  }

  const std::vector<Fact>& facts() const { return facts_; }
  int role(int e) const { return role_.at(e); }

 private:
  std::mt19937_64& rng_;
  std::vector<int> pool_;
  std::size_t next_ = 0;
  std::vector<int> cast_;
  std::map<int, int> role_;
  std::vector<Fact> facts_;
  std::map<std::pair<int, int>, int> facts_index_;
};

}  // namespace

int min_entity_pool_size(int rounds_per_conv) {
  // Chain subjects and answers are all distinct (at most 2 per round), plus
  // at most one freshly created role distractor per role and the filler
  // values needed before the cast has grown.
  return 2 * rounds_per_conv + static_cast<int>(kRoles.size()) + 2;
}

bool is_anaphoric_question(std::string_view question) {
  for (const char* role : kRoles) {
    if (question.find(std::string("that ") + role) != std::string_view::npos) {
      return true;
    }
  }
  return false;
}

std::vector<Conversation> gen_synthetic(const SyntheticConfig& cfg,
                                        std::uint64_t seed) {
  if (cfg.n_convs <= 0 || cfg.rounds_per_conv <= 0 || cfg.entity_pool_size <= 0) {
    throw ConfigError("synthetic corpus counts must be positive");
  }
  if (!(cfg.dependency_prob >= 0.0 && cfg.dependency_prob <= 1.0)) {
    throw ConfigError("dependency_prob must lie in [0, 1]");
  }
  if (!(cfg.vague_prob >= 0.0 && cfg.vague_prob <= 1.0)) {
    throw ConfigError("vague_prob must lie in [0, 1]");
  }
  if (cfg.entity_pool_size < min_entity_pool_size(cfg.rounds_per_conv)) {
    throw ConfigError("entity_pool_size " + std::to_string(cfg.entity_pool_size) +
                      " cannot keep " + std::to_string(cfg.rounds_per_conv) +
                      " rounds distinct (need >= " +
                      std::to_string(min_entity_pool_size(cfg.rounds_per_conv)) +
                      ")");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::string> names;
  for (int k = 0; k < cfg.entity_pool_size; ++k) names.push_back(entity_name(k));

  std::vector<Conversation> out;
  for (int c = 0; c < cfg.n_convs; ++c) {
    ConversationBuilder b(rng, cfg.entity_pool_size);
    struct Pending {
      std::string question;
      int fact_index;
    };
    std::vector<Pending> pending;

    int previous_answer = -1;
    for (int i = 0; i < cfg.rounds_per_conv; ++i) {
      const bool anaphoric = i > 0 && b.coin(cfg.dependency_prob);
      int subject = -1;
      int relation = -1;
      if (anaphoric) {
        subject = previous_answer;
        relation = b.relation_for(subject);
      }
      const bool chained = subject >= 0 && relation >= 0;
      if (!chained) {
        subject = b.fresh_entity();
        relation = b.relation_for(subject);
      }
      const int answer = b.fresh_entity();
      const int fact_index = static_cast<int>(b.facts().size());
      b.add_fact(subject, relation, answer);
      if (chained) b.ensure_role_distractor(subject, relation, answer);
      const bool vague = cfg.vague_prob > 0.0 && b.coin(cfg.vague_prob);
      b.maybe_extra_fact(subject, answer, vague);

      const std::string phrase =
          chained ? std::string("that ") + kRoles[b.role(subject)] : names[subject];
      const auto& templates = vague ? kVagueTemplates : kTemplates;
      const char* tmpl = templates[b.uniform(static_cast<int>(templates.size()))];
      pending.push_back({fill_template(tmpl, kRelations[relation], phrase), fact_index});
      previous_answer = answer;
    }

    // Lay the fact sentences out in a random order and record where each
    // value lands.
    const auto& facts = b.facts();
    std::vector<int> order(facts.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::string passage;
    std::vector<int> value_offset(facts.size(), -1);
    for (int idx : order) {
      const Fact& f = facts[idx];
      if (!passage.empty()) passage.push_back(' ');
      passage += kRoles[b.role(f.subject)];
      passage += ' ';
      passage += names[f.subject];
      passage += " has ";
      passage += kRelations[f.relation];
      passage += ' ';
      value_offset[idx] = static_cast<int>(passage.size());
      passage += names[f.value];
      passage += " .";
    }

    Conversation conv;
    conv.id = "synth-" + std::to_string(seed) + "-" + std::to_string(c);
    conv.domain = Domain::synthetic;
    conv.passage = std::move(passage);
    for (int i = 0; i < cfg.rounds_per_conv; ++i) {
      const Fact& f = facts[pending[i].fact_index];
      Answer gold;
      gold.text = names[f.value];
      gold.span_text = names[f.value];
      gold.span_start = value_offset[pending[i].fact_index];
      gold.span_end = gold.span_start + static_cast<int>(gold.span_text.size());
      conv.turns.emplace_back(i + 1, pending[i].question, std::move(gold));
    }
    validate_conversation(conv);
    out.push_back(std::move(conv));
  }
  return out;
}

}  // namespace convqa
