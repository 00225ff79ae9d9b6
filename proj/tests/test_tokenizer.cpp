#include <doctest.h>

#include <map>
#include <set>

#include "codexl/corpus.hpp"
#include "codexl/errors.hpp"
#include "codexl/tokenizer.hpp"
#include "codexl/unicode.hpp"
#include "support.hpp"

using namespace codexl;

namespace {

std::string marked(std::string_view s) { return std::string(1, kWordMarker) + std::string(s); }

// Reference BPE written from scratch: recount every pair over every word after
// each merge. Quadratic, but trivially correct on small inputs.
struct NaiveBpe {
  std::vector<std::string> symbols;
  std::size_t alphabet = 0;
  std::vector<std::pair<std::string, std::string>> merges;
};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_word(unsigned char c) { return c >= 0x80 || std::isalnum(c) || c == '_'; }

int piece_class(unsigned char c) { return is_space(c) ? 0 : (is_word(c) ? 1 : 2); }

NaiveBpe naive_bpe(const std::vector<std::string>& corpus, std::size_t budget) {
  std::map<std::vector<std::string>, long> words;
  std::set<std::string> alphabet;
  for (const auto& text : corpus) {
    std::size_t i = 0;
    while (i < text.size()) {
      const int cls = piece_class(static_cast<unsigned char>(text[i]));
      std::size_t j = i;
      while (j < text.size() && piece_class(static_cast<unsigned char>(text[j])) == cls) ++j;
      auto syms = unicode::split_scalars(std::string_view(text).substr(i, j - i));
      if (cls != 0) syms[0] = marked(syms[0]);
      for (const auto& s : syms) alphabet.insert(s);
      ++words[syms];
      i = j;
    }
  }
  NaiveBpe out;
  out.symbols.assign(alphabet.begin(), alphabet.end());
  out.alphabet = alphabet.size();
  std::set<std::string> known(alphabet.begin(), alphabet.end());
  while (Vocabulary::kNumSpecials + out.symbols.size() < budget) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (const auto& [w, n] : words) {
      for (std::size_t k = 0; k + 1 < w.size(); ++k) counts[{w[k], w[k + 1]}] += n;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    long best_count = 1;
    for (const auto& [p, n] : counts) {
      if (n > best_count) {
        best = &p;
        best_count = n;
      }
    }
    if (!best) break;
    const auto pair = *best;
    out.merges.push_back(pair);
    const auto joined = pair.first + pair.second;
    if (known.insert(joined).second) out.symbols.push_back(joined);
    std::map<std::vector<std::string>, long> next;
    for (const auto& [w, n] : words) {
      std::vector<std::string> r;
      for (std::size_t k = 0; k < w.size(); ++k) {
        if (k + 1 < w.size() && w[k] == pair.first && w[k + 1] == pair.second) {
          r.push_back(joined);
          ++k;
        } else {
          r.push_back(w[k]);
        }
      }
      next[r] += n;
    }
    words.swap(next);
  }
  return out;
}

const std::vector<std::string> kSnippets = {
    "def add(a, b):\n    return a + b\n",
    "def sub(a, b):\n    return a - b\n\n\nprint(add(1, 2), sub(3, 4))\n",
    "for i in range(10):\n    if i % 2 == 0:\n        print(i)\n",
    "class Point:\n    def __init__(self, x, y):\n        self.x = x\n        self.y = y\n",
    "s = 'héllo wörld'  # ünïcode\nnames = [n for n in s.split() if n]\n",
};

std::vector<std::string> corpus_sample(std::size_t n) {
  auto files = load_directory(CODEXL_CORPUS_DIR);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < files.size() && out.size() < n; i += 7) out.push_back(files[i].text);
  return out;
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("character vocabulary lists specials then scalars in code point order") {
  const auto v = build_char_vocab({"aab"});
  REQUIRE(v.size() == 4);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<unk>");
  CHECK(v.token(2) == "a");
  CHECK(v.token(3) == "b");
  CHECK(v.encode("aab").ids == std::vector<std::int32_t>{2, 2, 3});
  CHECK(build_char_vocab({"aab"}) == v);
  CHECK(build_char_vocab({"ba", "a"}) == v);
}

TEST_CASE("character vocabulary maps unseen scalars to unk") {
  const auto v = build_char_vocab({"ab"});
  const auto ids = v.encode("abz").ids;
  CHECK(ids == std::vector<std::int32_t>{2, 3, Vocabulary::kUnk});
  CHECK(v.decode(ids) == "ab\xEF\xBF\xBD");
  CHECK(v.encode("").ids.empty());
  CHECK(v.decode(std::vector<std::int32_t>{}).empty());
  CHECK_THROWS_AS(v.decode(std::vector<std::int32_t>{99}), DataError);
  CHECK_THROWS_AS(v.decode(std::vector<std::int32_t>{-1}), DataError);
  CHECK_THROWS_AS(build_char_vocab({"", ""}), DataError);
}

TEST_CASE("character vocabulary handles multi-byte scalars") {
  const std::string text = "λx → x² 🐍";
  const auto v = build_char_vocab({text});
  const auto ids = v.encode(text).ids;
  CHECK(ids.size() == unicode::decode_utf8(text).size());
  CHECK(v.decode(ids) == text);
}

TEST_CASE("pieces split on class changes and mark non-whitespace runs") {
  const auto pieces = split_pieces("x  = foo_1(a);\n");
  std::vector<std::string> texts;
  std::vector<bool> initial;
  for (const auto& p : pieces) {
    texts.emplace_back(p.text);
    initial.push_back(p.word_initial);
  }
  CHECK(texts == std::vector<std::string>{"x", "  ", "=", " ", "foo_1", "(", "a", ");", "\n"});
  CHECK(initial == std::vector<bool>{true, false, true, false, true, true, true, true, false});
}

TEST_CASE("bpe on a repeated pair makes exactly that merge") {
  // Alphabet is {▁a, a, b}; one slot above it allows a single merge.
  const auto v = train_bpe({"abababab"}, Vocabulary::kNumSpecials + 3 + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == Vocabulary::Merge{"a", "b"});
  CHECK(v.find("ab").has_value());
  CHECK(v.size() == 6);
  CHECK(v.decode(v.encode("abababab").ids) == "abababab");
}

TEST_CASE("bpe with a budget at or below the alphabet learns nothing") {
  for (std::size_t budget : {std::size_t{3}, std::size_t{5}}) {
    const auto v = train_bpe({"abababab"}, budget);
    CHECK(v.merges().empty());
    CHECK(v.size() == 5);
  }
}

TEST_CASE("bpe stops when no pair repeats") {
  const auto v = train_bpe({"abc"}, 100);
  CHECK(v.merges().empty());
}

TEST_CASE("bpe matches the naive reference on snippets") {
  for (std::size_t budget : {std::size_t{20}, std::size_t{60}, std::size_t{150}}) {
    CAPTURE(budget);
    const auto v = train_bpe(kSnippets, budget);
    const auto ref = naive_bpe(kSnippets, budget);
    CHECK(v.merges() == ref.merges);
    std::vector<std::string> symbols(v.tokens().begin() + Vocabulary::kNumSpecials, v.tokens().end());
    CHECK(symbols == ref.symbols);
    CHECK(v.size() <= std::max(budget, Vocabulary::kNumSpecials + ref.alphabet));
  }
}

TEST_CASE("bpe matches the naive reference on corpus files") {
  const auto sample = corpus_sample(3);
  REQUIRE(sample.size() == 3);
  const auto v = train_bpe(sample, 300);
  const auto ref = naive_bpe(sample, 300);
  CHECK(v.merges() == ref.merges);
  CHECK(v.size() == 300);
}

TEST_CASE("bpe training is deterministic") {
  const auto a = train_bpe(kSnippets, 80);
  const auto b = train_bpe(kSnippets, 80);
  CHECK(a == b);
  CHECK(a.hash() == b.hash());
}

TEST_CASE("subword encoding round-trips and is never longer than characters") {
  const auto sample = corpus_sample(6);
  const auto sub = train_bpe(sample, 500);
  const auto chr = build_char_vocab(sample);
  for (const auto& text : sample) {
    const auto ids = sub.encode(text).ids;
    CHECK(sub.decode(ids) == text);
    CHECK(ids.size() <= chr.encode(text).ids.size());
    CHECK(chr.decode(chr.encode(text).ids) == text);
  }
  const auto snip = train_bpe(kSnippets, 120);
  for (const auto& text : kSnippets) CHECK(snip.decode(snip.encode(text).ids) == text);
}

TEST_CASE("subword tokens of a code line follow lexical units") {
  std::vector<std::string> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back("print(x + 3 if x == 0)\n");
  const auto v = train_bpe(corpus, 200);
  std::vector<std::string> shown;
  for (auto id : v.encode("print(x + 3 if x == 0)").ids) {
    auto t = v.token(id);
    if (!t.empty() && t.front() == kWordMarker) t.erase(0, 1);
    if (t.find_first_not_of(" \t\n") != std::string::npos) shown.push_back(t);
  }
  CHECK(shown == std::vector<std::string>{"print", "(", "x", "+", "3", "if", "x", "==", "0", ")"});
}

TEST_CASE("display renders the marker") {
  const auto v = train_bpe({"abababab"}, 6);
  const auto id = v.find(marked("a"));
  REQUIRE(id.has_value());
  CHECK(v.display(*id) == "▁a");
}

TEST_CASE("token escapes round-trip") {
  for (std::string t : {std::string("a\tb"), std::string("\n"), std::string("\\"), std::string("x\x01y"),
                        std::string("▁literal"), marked("def"), std::string("ü\x7F")}) {
    CAPTURE(escape_token(t));
    CHECK(escape_token(t).find('\n') == std::string::npos);
    CHECK(escape_token(t).find('\t') == std::string::npos);
    CHECK(unescape_token(escape_token(t)) == t);
  }
  CHECK(escape_token(marked("if")) == "▁if");
  CHECK(escape_token("▁") == "\\u2581");
  CHECK_THROWS_AS(unescape_token("abc\\"), DataError);
}

TEST_CASE("vocabulary files round-trip and hash their content") {
  const auto v = train_bpe(kSnippets, 90);
  const auto text = v.serialize();
  const auto back = Vocabulary::parse(text);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
  CHECK(back.encode(kSnippets[2]).ids == v.encode(kSnippets[2]).ids);
  const auto c = build_char_vocab(kSnippets);
  CHECK(Vocabulary::parse(c.serialize()) == c);
  CHECK(c.hash() != v.hash());

  const auto dir = testing::temp_dir("vocab");
  v.save(dir / "v.txt");
  CHECK(Vocabulary::load(dir / "v.txt") == v);
  CHECK_THROWS_AS(Vocabulary::load(dir / "missing.txt"), DataError);
  CHECK_THROWS_AS(Vocabulary::parse("not a vocabulary\n"), DataError);
}

}  // TEST_SUITE
