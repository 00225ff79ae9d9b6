#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "codexl/checkpoint.hpp"
#include "codexl/corpus.hpp"
#include "codexl/models.hpp"

namespace codexl {

struct TrainSchedule {
  double lr_floor = 1e-6;
  double lr_peak = 5e-4;
  std::size_t warmup_iters = 5120;
  std::size_t total_iters = 25600;  // 50 epochs x 512
  std::size_t epoch_iters = 512;

  // Throws ConfigError unless warmup < total, floor < peak and epoch_iters > 0.
  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

// Linear warmup floor -> peak, then half-cosine decay back to the floor.
// Iterations past total_iters stay at the floor.
double lr_at(std::size_t iter, const TrainSchedule& sched);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m;  // one per parameter, zero until the first step
  std::vector<std::vector<T>> v;
};

// θ ← θ − lr·m̂/(√v̂ + ε) with bias-corrected moments. Parameters whose
// gradient was never touched are treated as having a zero gradient.
template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr);

// Summed next-token loss over every segment of a stream, teacher-forced with
// memory threaded from segment to segment and dropout off. Never records a
// graph or touches parameters.
struct StreamLoss {
  double total_nats = 0.0;
  std::size_t tokens = 0;
  double mean() const { return tokens == 0 ? 0.0 : total_nats / static_cast<double>(tokens); }
};

template <typename T>
StreamLoss stream_loss(const LanguageModel<T>& model, const SegmentStream& stream);

// Per-row negative log-likelihood of `targets` under softmax(logits), in double.
template <typename T>
std::vector<double> token_losses(const Tensor<T>& logits, std::span<const std::int32_t> targets);

struct TrainOptions {
  double clip = 0.1;
  std::uint64_t seed = 0;
  // Empty disables checkpoint and metrics files.
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_path;
  // Extra "key = value" provenance lines written above the metrics header.
  std::vector<std::pair<std::string, std::string>> provenance;
  bool validate = true;
  // Called after every iteration with (iteration, loss); optional.
  std::function<void(std::size_t, double)> on_step;
};

struct StepRecord {
  std::size_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

// Owns a float32 model, its optimizer state and the training-stream cursor.
// One call to step() is one iteration: forward on the next segment batch
// (memory carried over, reset when the stream wraps), mean cross-entropy,
// backward, global-norm clip, Adam at lr_at(iter).
class Trainer {
 public:
  Trainer(ModelConfig model, TrainSchedule sched, TrainOptions options, SegmentStream train,
          std::optional<SegmentStream> validation, std::uint64_t vocab_hash);

  // Restores model, optimizer, memory, RNG and iteration from a checkpoint
  // written by save(); continuing yields the same trace as never stopping.
  static Trainer resume(const CheckpointFile& checkpoint, TrainOptions options, SegmentStream train,
                        std::optional<SegmentStream> validation, std::uint64_t vocab_hash);

  StepRecord step();
  // Steps until iteration() == until (capped at total_iters), running the
  // validation pass, metrics row and checkpoints at every epoch boundary.
  void run(std::size_t until);
  void run() { run(sched_.total_iters); }

  // Validation loss over the whole validation stream; nullopt without one.
  std::optional<StreamLoss> validate() const;

  CheckpointFile snapshot() const;
  void save(const std::filesystem::path& path) const;

  std::size_t iteration() const { return iter_; }
  const std::vector<double>& loss_trace() const { return losses_; }
  const LanguageModel<float>& model() const { return *model_; }
  const TrainSchedule& schedule() const { return sched_; }
  const AdamState<float>& optimizer() const { return adam_; }
  std::optional<double> best_validation() const { return best_val_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }

 private:
  Trainer(std::unique_ptr<LanguageModel<float>> model, TrainSchedule sched, TrainOptions options,
          SegmentStream train, std::optional<SegmentStream> validation, std::uint64_t vocab_hash, bool fresh);
  void end_of_epoch();
  void write_metrics_row(const std::string& row);

  std::unique_ptr<LanguageModel<float>> model_;
  TrainSchedule sched_;
  TrainOptions options_;
  SegmentStream train_;
  std::optional<SegmentStream> validation_;
  std::uint64_t vocab_hash_;
  AdamState<float> adam_;
  MemoryState<float> memory_;
  Rng rng_;
  std::size_t iter_ = 0;
  std::vector<double> losses_;
  std::optional<double> best_val_;
  std::unique_ptr<std::ofstream> metrics_;
  std::chrono::steady_clock::time_point started_;
};

// Metadata helpers shared by checkpoints and run configs.
void write_model_config(CheckpointFile& file, const ModelConfig& config);
ModelConfig read_model_config(const CheckpointFile& file);

// Rebuilds the model stored in a trainer checkpoint.
std::unique_ptr<LanguageModel<float>> load_model(const CheckpointFile& checkpoint);
std::uint64_t checkpoint_vocab_hash(const CheckpointFile& checkpoint);

inline constexpr const char* kMetricsHeader = "iter,epoch,split,loss,bpc,perplexity,lr,grad_norm,seconds";

}  // namespace codexl
