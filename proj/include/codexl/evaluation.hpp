#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codexl/corpus.hpp"
#include "codexl/models.hpp"
#include "codexl/tokenizer.hpp"

namespace codexl {

// loss / ln 2. Throws ConfigError for a negative or NaN loss.
double bpc(double loss);
// e^loss; +infinity once loss exceeds 700. Throws ConfigError for a negative or NaN loss.
double perplexity(double loss);

struct EvalReport {
  std::string model;  // e.g. "txl-4"
  std::size_t depth = 0;
  VocabKind kind = VocabKind::character;
  std::size_t token_count = 0;
  double loss = 0.0;  // mean nats per token
  double bpc = 0.0;
  double perplexity = 0.0;
  double seconds = 0.0;
  double tokens_per_second = 0.0;

  static EvalReport from_loss(std::string model, std::size_t depth, VocabKind kind, double total_nats,
                              std::size_t tokens, double seconds);
  // The headline metric: BPC for character vocabularies, perplexity for subword ones.
  double headline() const { return kind == VocabKind::character ? bpc : perplexity; }
  static std::string csv_header();
  std::string csv_row() const;
  std::string summary() const;
};

// Teacher-forced pass over `stream` with memory threaded across segments and
// dropout off. Throws DataError when `model_vocab_hash` (recorded at training
// time) differs from the vocabulary that produced the stream.
EvalReport evaluate(const LanguageModel<float>& model, std::uint64_t model_vocab_hash, const Vocabulary& vocab,
                    const SegmentStream& stream);

struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
};
SeedSummary summarize(const std::vector<double>& values);

struct BenchRow {
  std::string model;
  std::size_t parameters = 0;
  std::size_t timed_iterations = 0;
  double median_seconds = 0.0;
  double normalized = 0.0;  // median / fastest median
};

inline constexpr std::size_t kBenchWarmup = 10;
inline constexpr std::size_t kBenchMinTimed = 30;

// Full training iterations (forward, backward, clip, Adam) on `data` for each
// config in turn; the first `warmup` iterations are not timed. Throws
// ConfigError for fewer than 30 timed iterations.
std::vector<BenchRow> benchmark_training_time(const std::vector<ModelConfig>& configs, const SegmentStream& data,
                                              std::size_t timed_iterations, std::size_t warmup = kBenchWarmup,
                                              std::uint64_t seed = 0);

// Median of a non-empty sample.
double median(std::vector<double> values);

std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace codexl
