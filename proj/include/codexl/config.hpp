#pragma once

// Flat "key = value" run configuration. Every key has a default, unknown keys
// are rejected, and command-line flags (--seq-len for seq_len) override
// values read from a file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codexl/corpus.hpp"
#include "codexl/models.hpp"
#include "codexl/tokenizer.hpp"
#include "codexl/training.hpp"

namespace codexl {

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;  // vocab_size is taken from the vocabulary, not from here
  VocabKind vocab = VocabKind::subword;
  std::size_t vocab_size = kDefaultVocabBudget;  // BPE merge budget, specials included
  std::size_t epochs = 50;
  std::size_t iters_per_epoch = 512;
  double lr_peak = 5e-4;
  double lr_floor = 1e-6;
  std::size_t warmup = 5120;
  double clip = 0.1;
  std::size_t batch = 32;
  std::size_t eval_batch = 1;
  double threshold = kDefaultOverlapThreshold;
  std::string extension = ".py";
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir = "run";
  // Empty paths resolve under out_dir.
  std::filesystem::path manifest;
  std::filesystem::path vocab_file;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_file;

  static const std::vector<std::string>& keys();
  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  std::vector<std::pair<std::string, std::string>> entries() const;

  // Applies "key = value" lines; '#' starts a comment. `origin` names the
  // source in error messages.
  void apply_text(std::string_view text, const std::string& origin = "config");
  void apply_file(const std::filesystem::path& path);
  std::string to_text() const;

  TrainSchedule schedule() const;
  // Throws ConfigError for inconsistent settings.
  void validate() const;

  std::filesystem::path manifest_path() const;
  std::filesystem::path vocab_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path metrics_path() const;
};

}  // namespace codexl
