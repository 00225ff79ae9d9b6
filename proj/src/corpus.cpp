#include "codexl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "codexl/errors.hpp"
#include "codexl/hash.hpp"
#include "codexl/io.hpp"
#include "codexl/tensor.hpp"
#include "codexl/unicode.hpp"

namespace codexl {

namespace fs = std::filesystem;

namespace {

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw DataError("bad content hash '" + s + "' in manifest");
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw DataError("bad content hash '" + s + "' in manifest");
  return v;
}

}  // namespace

SourceFile SourceFile::from_text(std::string path, std::string text) {
  SourceFile f;
  f.path = std::move(path);
  f.hash = fnv1a64(text);
  f.trailing_newline = !text.empty() && text.back() == '\n';
  std::string_view rest = text;
  if (f.trailing_newline) rest.remove_suffix(1);
  if (!text.empty()) {
    std::size_t pos = 0;
    while (true) {
      const auto nl = rest.find('\n', pos);
      if (nl == std::string_view::npos) {
        f.lines.emplace_back(rest.substr(pos));
        break;
      }
      f.lines.emplace_back(rest.substr(pos, nl - pos));
      pos = nl + 1;
    }
  }
  f.text = std::move(text);
  return f;
}

std::string SourceFile::rejoin() const {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out += lines[i];
  }
  if (trailing_newline) out.push_back('\n');
  return out;
}

std::vector<SourceFile> load_directory(const fs::path& root, std::string_view extension,
                                       std::vector<std::string>* skipped) {
  if (!fs::is_directory(root)) throw DataError("corpus directory not found: " + root.string());
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().extension() == extension) paths.push_back(entry.path());
  }
  std::vector<std::pair<std::string, fs::path>> rel;
  rel.reserve(paths.size());
  for (const auto& p : paths) rel.emplace_back(fs::relative(p, root).generic_string(), p);
  std::sort(rel.begin(), rel.end());
  std::vector<SourceFile> files;
  for (const auto& [name, full] : rel) {
    auto text = read_file(full);
    if (!unicode::is_valid_utf8(text)) {
      if (skipped) skipped->push_back(name);
      continue;
    }
    files.push_back(SourceFile::from_text(name, std::move(text)));
  }
  return files;
}

DatasetSplit split_corpus(std::vector<SourceFile> files, SplitRatios ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.validation + ratios.test;
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  DatasetSplit split;
  split.seed = seed;
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  std::vector<SourceFile> unique;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  for (auto& f : files) {
    auto it = seen.find(f.hash);
    if (it != seen.end() && unique[it->second].text == f.text) {
      split.duplicates.push_back(std::move(f));
      continue;
    }
    seen.emplace(f.hash, unique.size());
    unique.push_back(std::move(f));
  }
  if (unique.size() < 10) {
    throw DataError("need at least 10 distinct files to split, found " + std::to_string(unique.size()));
  }
  // Fisher-Yates with raw engine output so the order is the same on every platform.
  Rng rng(seed);
  for (std::size_t i = unique.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(unique[i], unique[j]);
  }
  const auto n = unique.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.train));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios.validation)));
  for (std::size_t i = 0; i < n; ++i) {
    auto& dest = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    dest.push_back(std::move(unique[i]));
  }
  auto by_path = [](const auto& a, const auto& b) { return a.path < b.path; };
  std::sort(split.train.begin(), split.train.end(), by_path);
  std::sort(split.validation.begin(), split.validation.end(), by_path);
  std::sort(split.test.begin(), split.test.end(), by_path);
  return split;
}

std::string_view trim(std::string_view line) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto b = line.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = line.find_last_not_of(kSpace);
  return line.substr(b, e - b + 1);
}

LineIndex::LineIndex(const std::vector<SourceFile>& files) {
  for (const auto& f : files) add(f);
}

void LineIndex::add(const SourceFile& file) {
  for (const auto& line : file.lines) {
    const auto t = trim(line);
    if (!t.empty()) lines_.emplace(t);
  }
}

bool LineIndex::contains(std::string_view line) const { return lines_.count(std::string(line)) > 0; }

double line_overlap_ratio(const SourceFile& candidate, const LineIndex& train_index) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& line : candidate.lines) {
    const auto t = trim(line);
    if (t.empty()) continue;
    ++total;
    if (train_index.contains(t)) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

DedupResult dedup_filter(DatasetSplit split, double threshold) {
  DedupResult result;
  const LineIndex index(split.train);
  for (const auto& f : split.train) result.log.push_back({"train", f.path, f.hash, std::nullopt, true});
  auto filter = [&](std::vector<SourceFile>& files, const char* name) {
    std::vector<SourceFile> kept;
    for (auto& f : files) {
      const double ratio = line_overlap_ratio(f, index);
      const bool keep = !(ratio > threshold);
      result.log.push_back({name, f.path, f.hash, ratio, keep});
      if (keep) kept.push_back(std::move(f));
    }
    files.swap(kept);
  };
  filter(split.validation, "validation");
  filter(split.test, "test");
  for (const auto& f : split.duplicates) result.log.push_back({"duplicate", f.path, f.hash, std::nullopt, false});
  split.threshold = threshold;
  result.split = std::move(split);
  return result;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "# split\tpath\thash\toverlap\tstatus\n";
  for (const auto& r : records) {
    if (r.path.find_first_of("\t\n") != std::string::npos) throw DataError("path with tab/newline: " + r.path);
    out << r.split << '\t' << r.path << '\t' << hex64(r.hash) << '\t';
    if (r.overlap) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *r.overlap);
      out << buf;
    } else {
      out << '-';
    }
    out << '\t' << (r.kept ? "kept" : "removed") << '\n';
  }
  if (!out) throw DataError("failed writing manifest " + path.string());
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 5) throw DataError("manifest line " + std::to_string(lineno) + " has wrong field count");
    ManifestRecord r;
    r.split = fields[0];
    r.path = fields[1];
    r.hash = parse_hex64(fields[2]);
    if (fields[3] != "-") r.overlap = std::stod(fields[3]);
    if (fields[4] != "kept" && fields[4] != "removed") {
      throw DataError("manifest line " + std::to_string(lineno) + " has bad status");
    }
    r.kept = fields[4] == "kept";
    records.push_back(std::move(r));
  }
  return records;
}

DatasetSplit load_split(const fs::path& root, const std::vector<ManifestRecord>& records) {
  DatasetSplit split;
  for (const auto& r : records) {
    if (!r.kept) continue;
    auto f = SourceFile::from_text(r.path, read_file(root / r.path));
    if (f.hash != r.hash) throw DataError("content of " + r.path + " changed since the manifest was written");
    if (r.split == "train") {
      split.train.push_back(std::move(f));
    } else if (r.split == "validation") {
      split.validation.push_back(std::move(f));
    } else if (r.split == "test") {
      split.test.push_back(std::move(f));
    } else {
      throw DataError("unknown split '" + r.split + "' in manifest");
    }
  }
  return split;
}

std::vector<std::string> texts_of(const std::vector<SourceFile>& files) {
  std::vector<std::string> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(f.text);
  return out;
}

TokenStream build_stream(const std::vector<SourceFile>& files, const Vocabulary& vocab) {
  std::vector<const SourceFile*> ordered;
  for (const auto& f : files) ordered.push_back(&f);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->path < b->path; });
  const auto separator = vocab.encode("\n").ids;
  TokenStream stream;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i) stream.ids.insert(stream.ids.end(), separator.begin(), separator.end());
    stream.source_boundaries.push_back(stream.ids.size());
    const auto part = vocab.encode(ordered[i]->text);
    stream.ids.insert(stream.ids.end(), part.ids.begin(), part.ids.end());
  }
  return stream;
}

SegmentStream::SegmentStream(std::vector<std::int32_t> ids, std::size_t seq_len, std::size_t batch_size)
    : ids_(std::move(ids)), seq_len_(seq_len), batch_size_(batch_size) {
  if (seq_len == 0 || batch_size == 0) throw ConfigError("seq_len and batch_size must be positive");
  if (ids_.size() < batch_size * (seq_len + 1)) {
    throw DataError("token stream of " + std::to_string(ids_.size()) + " tokens is too short for batch " +
                    std::to_string(batch_size) + " x (seq_len " + std::to_string(seq_len) + " + 1)");
  }
  stream_length_ = ids_.size() / batch_size;
  num_batches_ = (stream_length_ - 1) / seq_len;
}

std::size_t SegmentStream::dropped_tokens() const { return ids_.size() - batch_size_ * num_batches_ * seq_len_; }

SegmentBatch SegmentStream::batch(std::size_t i) const {
  if (i >= num_batches_) throw std::out_of_range("segment batch index out of range");
  SegmentBatch b;
  b.index = i;
  b.batch_size = batch_size_;
  b.seq_len = seq_len_;
  b.inputs.resize(batch_size_ * seq_len_);
  b.targets.resize(batch_size_ * seq_len_);
  for (std::size_t s = 0; s < batch_size_; ++s) {
    const auto* base = ids_.data() + s * stream_length_ + i * seq_len_;
    std::copy_n(base, seq_len_, b.inputs.data() + s * seq_len_);
    std::copy_n(base + 1, seq_len_, b.targets.data() + s * seq_len_);
    b.stream_id.push_back(s);
    b.is_stream_start.push_back(i == 0);
  }
  return b;
}

std::size_t fit_batch_size(std::size_t tokens, std::size_t seq_len, std::size_t requested) {
  for (std::size_t b = requested; b > 0; --b) {
    if (tokens >= b * (seq_len + 1)) return b;
  }
  return 0;
}

}  // namespace codexl
