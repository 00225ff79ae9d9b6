#include "codexl/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "codexl/errors.hpp"
#include "codexl/hash.hpp"
#include "codexl/unicode.hpp"

namespace codexl {

namespace {

constexpr std::string_view kPadText = "<pad>";
constexpr std::string_view kUnkText = "<unk>";
constexpr std::string_view kReplacement = "\xEF\xBF\xBD";  // U+FFFD
constexpr std::string_view kHeaderTag = "codexl-vocab";
constexpr std::string_view kMergeSection = "[merges]";
constexpr int kFormatVersion = 1;

enum class CharClass { space, word, punct };

CharClass classify(unsigned char c) {
  switch (c) {
    case ' ':
    case '\t':
    case '\n':
    case '\r':
    case '\f':
    case '\v':
      return CharClass::space;
    default:
      break;
  }
  if (c >= 0x80 || c == '_' || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
    return CharClass::word;
  }
  return CharClass::punct;
}

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

std::vector<std::string> initial_symbols(std::string_view piece, bool word_initial) {
  auto scalars = unicode::split_scalars(piece);
  if (word_initial && !scalars.empty()) scalars.front().insert(scalars.front().begin(), kWordMarker);
  return scalars;
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view to_string(VocabKind kind) { return kind == VocabKind::character ? "char" : "bpe"; }

VocabKind parse_vocab_kind(std::string_view s) {
  if (s == "char" || s == "character") return VocabKind::character;
  if (s == "bpe" || s == "subword") return VocabKind::subword;
  throw ConfigError("unknown vocabulary kind '" + std::string(s) + "' (expected char or bpe)");
}

std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> pieces;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto cls = classify(static_cast<unsigned char>(text[start]));
    std::size_t end = start + 1;
    while (end < text.size() && classify(static_cast<unsigned char>(text[end])) == cls) ++end;
    pieces.push_back({text.substr(start, end - start), cls != CharClass::space});
    start = end;
  }
  return pieces;
}

std::string escape_token(std::string_view token) {
  std::string out;
  std::string_view body = token;
  if (!body.empty() && body.front() == kWordMarker) {
    out += kMarkerDisplay;
    body.remove_prefix(1);
  }
  for (char32_t cp : unicode::decode_utf8(body)) {
    if (cp == '\t') {
      out += "\\t";
    } else if (cp == '\n') {
      out += "\\n";
    } else if (cp == '\\') {
      out += "\\\\";
    } else if (cp < 0x20 || cp == 0x7F || cp == 0x2581) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04X", static_cast<unsigned>(cp));
      out += buf;
    } else {
      unicode::append_utf8(out, cp);
    }
  }
  return out;
}

std::string unescape_token(std::string_view escaped) {
  std::string out;
  if (escaped.starts_with(kMarkerDisplay)) {
    out.push_back(kWordMarker);
    escaped.remove_prefix(kMarkerDisplay.size());
  }
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    const char c = escaped[i];
    if (c != '\\') {
      out.push_back(c);
      continue;
    }
    if (i + 1 >= escaped.size()) throw DataError("dangling escape in vocabulary token");
    const char e = escaped[++i];
    if (e == 't') {
      out.push_back('\t');
    } else if (e == 'n') {
      out.push_back('\n');
    } else if (e == '\\') {
      out.push_back('\\');
    } else if (e == 'u') {
      if (i + 4 >= escaped.size()) {
        throw DataError("truncated \\u escape in vocabulary token");
      }
      const std::string hex(escaped.substr(i + 1, 4));
      char* end = nullptr;
      const auto cp = std::strtoul(hex.c_str(), &end, 16);
      if (hex.size() != 4 || end != hex.c_str() + 4) throw DataError("bad \\u escape in vocabulary token");
      unicode::append_utf8(out, static_cast<char32_t>(cp));
      i += 4;
    } else {
      throw DataError(std::string("unknown escape \\") + e + " in vocabulary token");
    }
  }
  return out;
}

Vocabulary::Vocabulary(VocabKind kind, std::vector<std::string> tokens, std::vector<Merge> merges)
    : kind_(kind), tokens_(std::move(tokens)), merges_(std::move(merges)) {
  index();
}

void Vocabulary::index() {
  if (tokens_.size() < kNumSpecials || tokens_[kPad] != kPadText || tokens_[kUnk] != kUnkText) {
    throw DataError("vocabulary must start with <pad> and <unk>");
  }
  if (tokens_.size() > (1u << 16)) throw DataError("vocabulary larger than 65536 tokens");
  ids_.clear();
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate vocabulary token '" + escape_token(tokens_[i]) + "'");
    }
  }
  merge_rules_.clear();
  if (kind_ == VocabKind::character && !merges_.empty()) throw DataError("character vocabulary with merges");
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    const auto a = find(left);
    const auto b = find(right);
    const auto ab = find(left + right);
    if (!a || !b || !ab) throw DataError("merge refers to a token missing from the vocabulary");
    merge_rules_.emplace(pair_key(*a, *b), MergeRule{r, *ab});
  }
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::display(std::int32_t id) const {
  const auto& t = token(id);
  if (!t.empty() && t.front() == kWordMarker) return std::string(kMarkerDisplay) + t.substr(1);
  return t;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::int32_t> Vocabulary::encode_piece(std::string_view piece, bool word_initial) const {
  const auto scalars = unicode::split_scalars(piece);
  std::vector<std::int32_t> ids;
  ids.reserve(scalars.size());
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    std::optional<std::int32_t> id;
    if (k == 0 && word_initial) id = find(std::string(1, kWordMarker) + scalars[k]);
    // An unmarked token decodes identically, so it is a lossless fallback.
    if (!id) id = find(scalars[k]);
    ids.push_back(id.value_or(kUnk));
  }
  while (ids.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::uint64_t best_key = 0;
    std::int32_t best_result = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto key = pair_key(ids[i], ids[i + 1]);
      auto it = merge_rules_.find(key);
      if (it != merge_rules_.end() && it->second.rank < best_rank) {
        best_rank = it->second.rank;
        best_key = key;
        best_result = it->second.result;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<std::int32_t> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && pair_key(ids[i], ids[i + 1]) == best_key) {
        next.push_back(best_result);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids.swap(next);
  }
  return ids;
}

TokenStream Vocabulary::encode(std::string_view text) const {
  TokenStream stream;
  stream.source_boundaries.push_back(0);
  if (kind_ == VocabKind::character) {
    for (const auto& s : unicode::split_scalars(text)) stream.ids.push_back(find(s).value_or(kUnk));
    return stream;
  }
  // Per-call cache keeps encode() free of shared mutable state.
  std::unordered_map<std::string, std::vector<std::int32_t>> cache;
  for (const auto& piece : split_pieces(text)) {
    std::string key;
    key.reserve(piece.text.size() + 1);
    if (piece.word_initial) key.push_back(kWordMarker);
    key.append(piece.text);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(std::move(key), encode_piece(piece.text, piece.word_initial)).first;
    stream.ids.insert(stream.ids.end(), it->second.begin(), it->second.end());
  }
  return stream;
}

std::string Vocabulary::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    const auto& t = token(id);
    if (id == kPad) continue;
    if (id == kUnk) {
      out += kReplacement;
      continue;
    }
    if (!t.empty() && t.front() == kWordMarker) {
      out.append(t, 1, std::string::npos);
    } else {
      out += t;
    }
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  os << kHeaderTag << '\t' << kFormatVersion << '\t' << to_string(kind_) << '\t' << tokens_.size() << '\t'
     << merges_.size() << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    os << i << '\t' << (i < kNumSpecials ? tokens_[i] : escape_token(tokens_[i])) << '\n';
  }
  os << kMergeSection << '\n';
  for (const auto& [l, r] : merges_) os << escape_token(l) << '\t' << escape_token(r) << '\n';
  return os.str();
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw DataError("empty vocabulary file");
  std::istringstream header{std::string(lines[0])};
  std::string tag, kind;
  int version = 0;
  std::size_t n_tokens = 0, n_merges = 0;
  header >> tag >> version >> kind >> n_tokens >> n_merges;
  if (!header || tag != kHeaderTag) throw DataError("not a codexl vocabulary file");
  if (version != kFormatVersion) throw DataError("unsupported vocabulary version " + std::to_string(version));
  if (lines.size() < 2 + n_tokens + n_merges) throw DataError("truncated vocabulary file");

  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const auto line = lines[1 + i];
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || line.substr(0, tab) != std::to_string(i)) {
      throw DataError("vocabulary record " + std::to_string(i) + " is malformed");
    }
    const auto body = line.substr(tab + 1);
    tokens.push_back(i < kNumSpecials ? std::string(body) : unescape_token(body));
  }
  if (lines[1 + n_tokens] != kMergeSection) throw DataError("vocabulary file lacks the merge section");
  std::vector<Merge> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    const auto line = lines[2 + n_tokens + i];
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw DataError("malformed merge record");
    merges.emplace_back(unescape_token(line.substr(0, tab)), unescape_token(line.substr(tab + 1)));
  }
  return Vocabulary(parse_vocab_kind(kind), std::move(tokens), std::move(merges));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary to " + path.string());
  out << serialize();
  if (!out) throw DataError("failed writing vocabulary to " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t Vocabulary::hash() const { return fnv1a64(serialize()); }

Vocabulary build_char_vocab(const std::vector<std::string>& corpus) {
  std::set<std::string> chars;  // byte order of UTF-8 == code point order
  bool any_text = false;
  for (const auto& text : corpus) {
    any_text = any_text || !text.empty();
    for (auto& s : unicode::split_scalars(text)) chars.insert(std::move(s));
  }
  if (!any_text) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::string> tokens{std::string(kPadText), std::string(kUnkText)};
  tokens.insert(tokens.end(), chars.begin(), chars.end());
  return Vocabulary(VocabKind::character, std::move(tokens), {});
}

Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t budget) {
  // Unique pieces with their frequencies; std::map keeps word order deterministic.
  std::map<std::string, std::int64_t> piece_counts;
  bool any_text = false;
  for (const auto& text : corpus) {
    any_text = any_text || !text.empty();
    for (const auto& piece : split_pieces(text)) {
      std::string key;
      if (piece.word_initial) key.push_back(kWordMarker);
      key.append(piece.text);
      ++piece_counts[key];
    }
  }
  if (!any_text) throw DataError("cannot train BPE on an empty corpus");

  std::vector<std::string> symbols;
  std::unordered_map<std::string, std::int32_t> symbol_ids;
  std::vector<std::vector<std::int32_t>> words;
  std::vector<std::int64_t> freq;
  {
    std::set<std::string> alphabet;
    std::vector<std::vector<std::string>> raw;
    for (const auto& [key, count] : piece_counts) {
      const bool initial = key.front() == kWordMarker;
      raw.push_back(initial_symbols(initial ? std::string_view(key).substr(1) : std::string_view(key), initial));
      alphabet.insert(raw.back().begin(), raw.back().end());
      freq.push_back(count);
    }
    for (const auto& s : alphabet) {
      symbol_ids.emplace(s, static_cast<std::int32_t>(symbols.size()));
      symbols.push_back(s);
    }
    for (const auto& w : raw) {
      std::vector<std::int32_t> ids;
      ids.reserve(w.size());
      for (const auto& s : w) ids.push_back(symbol_ids.at(s));
      words.push_back(std::move(ids));
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> pair_words;
  auto add_word_pairs = [&](std::size_t w, std::int64_t sign) {
    const auto& ids = words[w];
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto key = pair_key(ids[i], ids[i + 1]);
      pair_counts[key] += sign * freq[w];
      if (sign > 0) pair_words[key].push_back(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) add_word_pairs(w, +1);

  std::vector<Vocabulary::Merge> merges;
  std::vector<std::size_t> stamp(words.size(), 0);
  std::size_t round = 0;
  while (Vocabulary::kNumSpecials + symbols.size() < budget) {
    std::uint64_t best = 0;
    std::int64_t best_count = 1;  // a pair must occur at least twice
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      if (best_count < 2) continue;
      const auto& l = symbols[key >> 32];
      const auto& r = symbols[key & 0xFFFFFFFFu];
      const auto& bl = symbols[best >> 32];
      const auto& br = symbols[best & 0xFFFFFFFFu];
      if (std::tie(l, r) < std::tie(bl, br)) best = key;
    }
    if (best_count < 2) break;

    const auto left = static_cast<std::int32_t>(best >> 32);
    const auto right = static_cast<std::int32_t>(best & 0xFFFFFFFFu);
    std::string merged = symbols[left] + symbols[right];
    merges.emplace_back(symbols[left], symbols[right]);
    std::int32_t merged_id;
    if (auto it = symbol_ids.find(merged); it != symbol_ids.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<std::int32_t>(symbols.size());
      symbol_ids.emplace(merged, merged_id);
      symbols.push_back(std::move(merged));
    }

    ++round;
    const auto affected = std::move(pair_words[best]);
    pair_words.erase(best);
    for (auto w : affected) {
      if (stamp[w] == round) continue;
      stamp[w] = round;
      auto& ids = words[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < ids.size() && !present; ++i) present = ids[i] == left && ids[i + 1] == right;
      if (!present) continue;
      add_word_pairs(w, -1);
      std::vector<std::int32_t> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids.swap(next);
      add_word_pairs(w, +1);
    }
    pair_counts.erase(best);
  }

  std::vector<std::string> tokens{std::string(kPadText), std::string(kUnkText)};
  tokens.insert(tokens.end(), symbols.begin(), symbols.end());
  return Vocabulary(VocabKind::subword, std::move(tokens), std::move(merges));
}

}  // namespace codexl
