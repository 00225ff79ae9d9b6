#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "codexl/tokenizer.hpp"

namespace codexl {

struct SourceFile {
  std::string path;  // relative to the corpus root
  std::string text;
  std::vector<std::string> lines;
  bool trailing_newline = false;
  std::uint64_t hash = 0;

  static SourceFile from_text(std::string path, std::string text);
  // Lines joined with '\n', plus the trailing newline when the flag is set.
  std::string rejoin() const;
};

// Recursively reads files with `extension` under `root`, sorted by relative
// path. Files that are not valid UTF-8 are skipped and their paths appended to
// `skipped` when given. Throws DataError if `root` is not a directory.
std::vector<SourceFile> load_directory(const std::filesystem::path& root, std::string_view extension = ".py",
                                       std::vector<std::string>* skipped = nullptr);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

inline constexpr double kDefaultOverlapThreshold = 0.25;

struct DatasetSplit {
  std::vector<SourceFile> train;
  std::vector<SourceFile> validation;
  std::vector<SourceFile> test;
  std::vector<SourceFile> duplicates;  // exact copies collapsed before partitioning
  std::uint64_t seed = 0;
  double threshold = kDefaultOverlapThreshold;
};

// Collapses byte-identical files (first path wins), shuffles with `seed` and
// partitions by file count. Throws ConfigError for bad ratios and DataError
// for fewer than 10 distinct files.
DatasetSplit split_corpus(std::vector<SourceFile> files, SplitRatios ratios, std::uint64_t seed);

// Whitespace-trimmed, non-blank lines of the training files.
class LineIndex {
 public:
  LineIndex() = default;
  explicit LineIndex(const std::vector<SourceFile>& files);
  void add(const SourceFile& file);
  bool contains(std::string_view line) const;
  std::size_t size() const { return lines_.size(); }

 private:
  std::unordered_set<std::string> lines_;
};

std::string_view trim(std::string_view line);

// Fraction of the candidate's non-blank lines (trimmed, counted per
// occurrence) that appear anywhere in the index; 0 for a file with no
// non-blank lines.
double line_overlap_ratio(const SourceFile& candidate, const LineIndex& train_index);

struct ManifestRecord {
  std::string split;  // train | validation | test | duplicate
  std::string path;
  std::uint64_t hash = 0;
  std::optional<double> overlap;  // only for validation/test
  bool kept = true;

  bool operator==(const ManifestRecord&) const = default;
};

struct DedupResult {
  DatasetSplit split;
  std::vector<ManifestRecord> log;  // every file, kept or removed
};

// Removes validation/test files whose overlap ratio is strictly above the threshold.
DedupResult dedup_filter(DatasetSplit split, double threshold = kDefaultOverlapThreshold);

// Tab-separated: split, path, hex hash, overlap ("-" when not applicable), kept|removed.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// Reloads the kept files of a manifest from `root`, verifying content hashes.
DatasetSplit load_split(const std::filesystem::path& root, const std::vector<ManifestRecord>& records);

// Files in path order joined by a newline, encoded file by file so every
// boundary lands on a token edge.
TokenStream build_stream(const std::vector<SourceFile>& files, const Vocabulary& vocab);

std::vector<std::string> texts_of(const std::vector<SourceFile>& files);

struct SegmentBatch {
  std::size_t index = 0;  // position within one pass over the streams
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> inputs;   // batch_size x seq_len, row-major
  std::vector<std::int32_t> targets;  // inputs shifted left by one token
  std::vector<std::size_t> stream_id;
  std::vector<bool> is_stream_start;
};

// Cuts a token stream into batch_size equal contiguous streams; batch i
// carries tokens [i*seq_len, (i+1)*seq_len) of every stream, so consecutive
// batches continue each row exactly where the previous one stopped.
class SegmentStream {
 public:
  SegmentStream(std::vector<std::int32_t> ids, std::size_t seq_len, std::size_t batch_size);

  std::size_t num_batches() const { return num_batches_; }
  std::size_t batch_size() const { return batch_size_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t stream_length() const { return stream_length_; }
  // Tokens that can never be an input (the ragged tail of each stream).
  std::size_t dropped_tokens() const;
  SegmentBatch batch(std::size_t i) const;

 private:
  std::vector<std::int32_t> ids_;
  std::size_t seq_len_;
  std::size_t batch_size_;
  std::size_t stream_length_;
  std::size_t num_batches_;
};

// Largest batch size <= requested that still yields at least one batch, or 0.
std::size_t fit_batch_size(std::size_t tokens, std::size_t seq_len, std::size_t requested);

}  // namespace codexl
