#include "codexl/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "codexl/errors.hpp"
#include "codexl/hash.hpp"
#include "codexl/training.hpp"

namespace codexl {

namespace {

void require_loss(double loss) {
  if (std::isnan(loss) || loss < 0.0) throw ConfigError("loss must be non-negative, got " + std::to_string(loss));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double bpc(double loss) {
  require_loss(loss);
  return loss / std::numbers::ln2;
}

double perplexity(double loss) {
  require_loss(loss);
  if (loss > 700.0) return std::numeric_limits<double>::infinity();
  return std::exp(loss);
}

EvalReport EvalReport::from_loss(std::string model, std::size_t depth, VocabKind kind, double total_nats,
                                 std::size_t tokens, double seconds) {
  if (tokens == 0) throw DataError("evaluation stream has no tokens");
  EvalReport r;
  r.model = std::move(model);
  r.depth = depth;
  r.kind = kind;
  r.token_count = tokens;
  r.loss = total_nats / static_cast<double>(tokens);
  r.bpc = codexl::bpc(r.loss);
  r.perplexity = codexl::perplexity(r.loss);
  r.seconds = seconds;
  r.tokens_per_second = seconds > 0.0 ? static_cast<double>(tokens) / seconds : 0.0;
  return r;
}

std::string EvalReport::csv_header() { return "model,depth,vocab,tokens,loss,bpc,perplexity,seconds,tokens_per_second"; }

std::string EvalReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%s,%zu,%.9g,%.9g,%.9g,%.3f,%.1f", model.c_str(), depth,
                std::string(to_string(kind)).c_str(), token_count, loss, bpc, perplexity, seconds, tokens_per_second);
  return buf;
}

std::string EvalReport::summary() const {
  std::string s = model + " on " + std::to_string(token_count) + " " + std::string(to_string(kind)) + " tokens: ";
  s += "loss " + fixed(loss, 4) + " nats/token, ";
  s += "BPC " + fixed(bpc, 4) + ", perplexity " + fixed(perplexity, 4);
  s += " (" + fixed(seconds, 1) + " s, " + fixed(tokens_per_second, 0) + " tokens/s)";
  return s;
}

EvalReport evaluate(const LanguageModel<float>& model, std::uint64_t model_vocab_hash, const Vocabulary& vocab,
                    const SegmentStream& stream) {
  if (model_vocab_hash != vocab.hash()) {
    throw DataError("model was trained with vocabulary " + hex64(model_vocab_hash) + " but the stream uses " +
                    hex64(vocab.hash()));
  }
  if (vocab.size() != model.config().vocab_size) {
    throw DataError("vocabulary has " + std::to_string(vocab.size()) + " tokens, model expects " +
                    std::to_string(model.config().vocab_size));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto loss = stream_loss(model, stream);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return EvalReport::from_loss(model.config().describe(), model.config().depth, vocab.kind(), loss.total_nats,
                               loss.tokens, secs);
}

SeedSummary summarize(const std::vector<double>& values) {
  SeedSummary s;
  s.runs = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<BenchRow> benchmark_training_time(const std::vector<ModelConfig>& configs, const SegmentStream& data,
                                              std::size_t timed_iterations, std::size_t warmup, std::uint64_t seed) {
  if (timed_iterations < kBenchMinTimed) {
    throw ConfigError("benchmark needs at least " + std::to_string(kBenchMinTimed) + " timed iterations, got " +
                      std::to_string(timed_iterations));
  }
  if (configs.empty()) throw ConfigError("benchmark needs at least one model");
  std::vector<BenchRow> rows;
  for (const auto& config : configs) {
    TrainSchedule sched;
    sched.warmup_iters = 1;
    sched.total_iters = warmup + timed_iterations + 2;
    sched.epoch_iters = sched.total_iters;
    TrainOptions options;
    options.seed = seed;
    options.validate = false;
    Trainer trainer(config, sched, options, data, std::nullopt, 0);
    for (std::size_t i = 0; i < warmup; ++i) trainer.step();
    std::vector<double> times;
    times.reserve(timed_iterations);
    for (std::size_t i = 0; i < timed_iterations; ++i) times.push_back(trainer.step().seconds);
    BenchRow row;
    row.model = config.describe();
    row.parameters = trainer.model().parameter_count();
    row.timed_iterations = timed_iterations;
    row.median_seconds = median(times);
    rows.push_back(row);
  }
  double fastest = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) fastest = std::min(fastest, r.median_seconds);
  for (auto& r : rows) r.normalized = r.median_seconds / fastest;
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::string out = "model,parameters,timed_iterations,median_seconds,normalized\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6f,%.3f\n", r.model.c_str(), r.parameters, r.timed_iterations,
                  r.median_seconds, r.normalized);
    out += buf;
  }
  return out;
}

}  // namespace codexl
