#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace convqa {

enum class AnswerType { yes, no, unknown, span };
enum class Domain { children, literature, mid_high, news, wikipedia, synthetic };

inline constexpr int kNumAnswerTypes = 4;

std::string_view to_string(AnswerType type);
std::string_view to_string(Domain domain);
std::optional<AnswerType> answer_type_from_string(std::string_view name);
std::optional<Domain> domain_from_string(std::string_view name);
// CoQA "source" field -> domain (mctest, gutenberg, race, cnn, wikipedia,
// synthetic).
std::optional<Domain> domain_from_source(std::string_view source);
std::string_view source_for(Domain domain);

struct Answer {
  std::string text;
  // Character offsets into the passage, half-open [span_start, span_end).
  // span_start == -1 marks a turn with no supporting span.
  int span_start = -1;
  int span_end = -1;
  std::string span_text;

  bool operator==(const Answer&) const = default;
};

class Turn {
 public:
  Turn() = default;
  Turn(int turn_id, std::string question, Answer gold,
       std::vector<Answer> additional_refs = {});

  int turn_id = 0;
  std::string question_text;
  std::vector<Answer> additional_refs;
  AnswerType answer_type = AnswerType::span;

  // Every read of the gold answer goes through here so that tests can prove
  // predicted-history inference never touches it.
  const Answer& gold() const;
  void set_gold(Answer gold);

  bool operator==(const Turn& other) const;

 private:
  Answer gold_;
};

struct Conversation {
  std::string id;
  Domain domain = Domain::synthetic;
  std::string passage;
  std::vector<Turn> turns;

  bool operator==(const Conversation&) const = default;
};

// Counts Turn::gold() reads on the current thread while alive. Nesting
// restores the previous tracker on destruction.
class GoldAccessTracker {
 public:
  GoldAccessTracker();
  ~GoldAccessTracker();
  GoldAccessTracker(const GoldAccessTracker&) = delete;
  GoldAccessTracker& operator=(const GoldAccessTracker&) = delete;

  std::size_t reads() const { return turn_ids_.size(); }
  const std::vector<int>& turn_ids() const { return turn_ids_; }
  void record(int turn_id) { turn_ids_.push_back(turn_id); }

 private:
  GoldAccessTracker* previous_;
  std::vector<int> turn_ids_;
};

// --- CoQA JSON ingestion -------------------------------------------------

std::vector<Conversation> parse_coqa(std::string_view json_text);
std::vector<Conversation> load_coqa(const std::filesystem::path& path);
// Serializes in the CoQA layout; `extra` top-level members (e.g. generator
// provenance) are merged in when non-empty.
std::string serialize_coqa(const std::vector<Conversation>& convs,
                           std::string_view extra_json = {});
void save_coqa(const std::vector<Conversation>& convs,
               const std::filesystem::path& path,
               std::string_view extra_json = {});

// Byte offset of a code-point offset in UTF-8 text; npos when out of range.
std::size_t char_to_byte_offset(std::string_view text, int char_offset);

// Checks every span invariant; throws IntegrityError on the first failure.
void validate_conversation(const Conversation& conv);

// --- Tokenization ---------------------------------------------------------

struct TokenSpan {
  std::string text;
  int begin = 0;  // byte offsets into the source, half-open
  int end = 0;
};

// Lowercase, whitespace-collapsed, with every ASCII punctuation character
// emitted as its own token.
std::vector<std::string> tokenize(std::string_view text);
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);
bool is_punctuation_token(std::string_view token);

// --- Vocabulary -------------------------------------------------------------

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kQuestionSep = 2;
  static constexpr int kAnswerSep = 3;
  static constexpr int kNumReserved = 4;

  Vocab();
  // Rebuilds from an id-ordered token list; the first kNumReserved entries
  // must be the reserved markers.
  static Vocab from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  // Adds a token if absent and returns its id.
  int add(const std::string& token);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kMinCountInfinity = std::numeric_limits<int>::max();

Vocab build_vocab(const std::vector<Conversation>& convs, int min_count);

AnswerType derive_answer_type(std::string_view gold_text);

// --- Synthetic chain-dependency corpora -------------------------------------

struct SyntheticConfig {
  int n_convs = 50;
  int rounds_per_conv = 10;
  int entity_pool_size = 60;
  double dependency_prob = 0.9;
  // Share of questions that omit the relation; their subject always has a
  // second fact, so even gold history leaves them ambiguous.
  double vague_prob = 0.0;
};

// Smallest entity pool that can honor the distinctness of chain entities.
int min_entity_pool_size(int rounds_per_conv);

std::vector<Conversation> gen_synthetic(const SyntheticConfig& cfg,
                                        std::uint64_t seed);

// The anaphoric question form used by the generator, exposed for tests.
bool is_anaphoric_question(std::string_view question);

}  // namespace convqa
