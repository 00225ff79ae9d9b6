#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "codexl/errors.hpp"
#include "codexl/evaluation.hpp"
#include "codexl/training.hpp"
#include "support.hpp"

using namespace codexl;

namespace {

ModelConfig eval_config(std::size_t vocab) {
  ModelConfig c;
  c.depth = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffd_inner = 32;
  c.vocab_size = vocab;
  c.seq_len = 8;
  c.mem_len = 8;
  return c;
}

const std::string kText =
    "def area(r):\n    return 3.14159 * r * r\n\nfor k in range(4):\n    print(k, area(k))\n";

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("bits per character and perplexity") {
  CHECK(std::abs(bpc(std::numbers::ln2) - 1.0) <= 1e-12);
  CHECK(bpc(0.0) == 0.0);
  CHECK(std::abs(bpc(1.1297 * std::numbers::ln2) - 1.1297) <= 1e-12);
  CHECK(perplexity(0.0) == 1.0);
  CHECK(std::abs(perplexity(std::log(2.7185)) - 2.7185) <= 1e-12);
  CHECK(perplexity(701.0) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(bpc(-0.1), ConfigError);
  CHECK_THROWS_AS(perplexity(-1.0), ConfigError);
  CHECK_THROWS_AS(bpc(std::nan("")), ConfigError);
  double prev = 0.0;
  for (double loss = 0.0; loss < 20.0; loss += 0.37) {
    const double p = perplexity(loss);
    CHECK(p > prev);
    prev = p;
    CHECK(std::abs(p - std::pow(2.0, bpc(loss))) <= 1e-12 * p);
  }
}

TEST_CASE("reports are internally consistent") {
  const auto r = EvalReport::from_loss("txl-4", 4, VocabKind::character, 300.0, 200, 2.0);
  CHECK(r.loss == 1.5);
  CHECK(r.bpc == 1.5 / std::numbers::ln2);
  CHECK(r.perplexity == std::exp(1.5));
  CHECK(r.tokens_per_second == 100.0);
  CHECK(r.headline() == r.bpc);
  const auto s = EvalReport::from_loss("txl-4", 4, VocabKind::subword, 300.0, 200, 2.0);
  CHECK(s.headline() == s.perplexity);
  CHECK(r.csv_row().starts_with("txl-4,4,char,200,1.5,"));
  const auto header = EvalReport::csv_header();
  const auto row = r.csv_row();
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(r.summary().find("BPC 2.1640") != std::string::npos);
  CHECK_THROWS_AS(EvalReport::from_loss("x", 1, VocabKind::character, 1.0, 0, 1.0), DataError);
}

TEST_CASE("a uniform model scores exactly ln V") {
  const auto vocab = build_char_vocab({kText});
  const auto V = vocab.size();
  TransformerXL<float> m(eval_config(V), 1);
  for (const auto& p : m.parameters()) {
    if (p.name.starts_with("head.")) {
      Tensor<float> t = p.tensor;
      for (auto& v : t.mutable_data()) v = 0.0f;
    }
  }
  const SegmentStream stream(vocab.encode(kText).ids, 8, 1);
  const auto r = evaluate(m, vocab.hash(), vocab, stream);
  CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));
  CHECK(r.perplexity == doctest::Approx(static_cast<double>(V)).epsilon(1e-9));
  CHECK(r.token_count == stream.num_batches() * 8);
}

TEST_CASE("evaluation is deterministic, read-only and checks the vocabulary") {
  const auto vocab = build_char_vocab({kText});
  TransformerXL<float> m(eval_config(vocab.size()), 2);
  testing::jitter(m, 3, 0.1);
  std::vector<std::vector<float>> before;
  for (const auto& p : m.parameters()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  const SegmentStream stream(vocab.encode(kText).ids, 8, 2);
  const auto a = evaluate(m, vocab.hash(), vocab, stream);
  const auto b = evaluate(m, vocab.hash(), vocab, stream);
  CHECK(a.loss == b.loss);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(std::equal(before[i].begin(), before[i].end(), m.parameters()[i].tensor.data().begin()));
  }
  CHECK_THROWS_AS(evaluate(m, vocab.hash() ^ 1, vocab, stream), DataError);
  const auto other = build_char_vocab({kText + "@"});
  CHECK_THROWS_AS(evaluate(m, other.hash(), other, stream), DataError);
}

TEST_CASE("streamed aggregation equals the monolithic mean") {
  const auto vocab = build_char_vocab({kText});
  TransformerXL<float> m(eval_config(vocab.size()), 4);
  testing::jitter(m, 5, 0.1);
  const SegmentStream stream(vocab.encode(kText).ids, 8, 2);
  Rng rng(0);
  auto mem = m.initial_state(2);
  std::vector<double> all;
  double weighted = 0.0;
  std::size_t tokens = 0;
  NoGradGuard ng;
  for (std::size_t i = 0; i < stream.num_batches(); ++i) {
    const auto b = stream.batch(i);
    auto out = m.forward(b.inputs, 2, 8, mem, false, rng);
    mem = out.memory;
    const auto l = token_losses(out.logits, b.targets);
    double seg = 0.0;
    for (double x : l) seg += x;
    weighted += (seg / static_cast<double>(l.size())) * static_cast<double>(l.size());
    tokens += l.size();
    all.insert(all.end(), l.begin(), l.end());
  }
  double mono = 0.0;
  for (double x : all) mono += x;
  mono /= static_cast<double>(all.size());
  const auto r = evaluate(m, vocab.hash(), vocab, stream);
  CHECK(std::abs(weighted / static_cast<double>(tokens) - mono) <= 1e-9);
  CHECK(std::abs(r.loss - mono) <= 1e-9);
}

TEST_CASE("seed summaries use the sample standard deviation") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.runs == 4);
  CHECK(summarize({7.0}).stddev == 0.0);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ConfigError);
}

TEST_CASE("benchmark normalizes by the fastest model") {
  std::vector<std::int32_t> ids(3000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i % 11);
  const SegmentStream data(ids, 8, 2);
  auto txl = eval_config(11);
  auto lstm = txl;
  lstm.arch = Arch::lstm;
  CHECK_THROWS_AS(benchmark_training_time({txl}, data, 29, 2), ConfigError);
  const auto rows = benchmark_training_time({txl, lstm}, data, 30, 2);
  REQUIRE(rows.size() == 2);
  double lowest = 1e9;
  for (const auto& r : rows) {
    CHECK(r.normalized >= 1.0);
    CHECK(r.timed_iterations == 30);
    CHECK(r.median_seconds > 0.0);
    lowest = std::min(lowest, r.normalized);
  }
  CHECK(lowest == 1.0);
  const auto table = bench_table(rows);
  CHECK(table.starts_with("model,parameters,timed_iterations,median_seconds,normalized\n"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

}  // TEST_SUITE
