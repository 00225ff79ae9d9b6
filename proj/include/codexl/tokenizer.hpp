#pragma once

// Character-level and BPE subword vocabularies over Unicode scalar values.
//
// Subword encoding first cuts text into pieces: runs of ASCII whitespace,
// runs of word characters (ASCII alphanumerics, '_' and any non-ASCII scalar)
// and runs of ASCII punctuation. Merges never cross a piece boundary. The
// first token of every non-whitespace piece carries a word-initial marker
// (kWordMarker in memory, shown as U+2581 "▁" in files and displays); decode
// drops the marker, so decode(encode(t)) == t for in-vocabulary text.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace codexl {

enum class VocabKind { character, subword };

std::string_view to_string(VocabKind kind);
VocabKind parse_vocab_kind(std::string_view s);

// 0xFF never occurs in valid UTF-8, so the marker cannot collide with text.
inline constexpr char kWordMarker = '\xFF';
inline constexpr std::string_view kMarkerDisplay = "▁";
inline constexpr std::size_t kDefaultVocabBudget = 1000;

struct TokenStream {
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> source_boundaries;  // index of each file's first token
};

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::size_t kNumSpecials = 2;

  using Merge = std::pair<std::string, std::string>;

  Vocabulary() = default;
  Vocabulary(VocabKind kind, std::vector<std::string> tokens, std::vector<Merge> merges);

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<Merge>& merges() const { return merges_; }

  // In-memory token text (marker byte included).
  const std::string& token(std::int32_t id) const;
  // Token text with the marker rendered as "▁".
  std::string display(std::int32_t id) const;
  std::optional<std::int32_t> find(std::string_view token) const;

  TokenStream encode(std::string_view text) const;
  // Throws DataError for out-of-range ids.
  std::string decode(std::span<const std::int32_t> ids) const;

  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  // FNV-1a of serialize(); checkpoints record it.
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& other) const {
    return kind_ == other.kind_ && tokens_ == other.tokens_ && merges_ == other.merges_;
  }

 private:
  struct MergeRule {
    std::size_t rank;
    std::int32_t result;
  };

  void index();
  std::vector<std::int32_t> encode_piece(std::string_view piece, bool word_initial) const;

  VocabKind kind_ = VocabKind::character;
  std::vector<std::string> tokens_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::unordered_map<std::uint64_t, MergeRule> merge_rules_;
};

// One token per distinct scalar value, in code-point order, after the specials.
Vocabulary build_char_vocab(const std::vector<std::string>& corpus);

// Greedy most-frequent-pair merging until `budget` tokens (specials included)
// or until no pair occurs twice. Ties go to the lexicographically smallest
// (left, right) pair.
Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t budget = kDefaultVocabBudget);

struct Piece {
  std::string_view text;
  bool word_initial;  // false for whitespace runs
};
std::vector<Piece> split_pieces(std::string_view text);

std::string escape_token(std::string_view token);
std::string unescape_token(std::string_view escaped);

}  // namespace codexl
