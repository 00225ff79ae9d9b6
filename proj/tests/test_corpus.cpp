#include <doctest.h>

#include <fstream>
#include <set>

#include "codexl/corpus.hpp"
#include "codexl/errors.hpp"
#include "codexl/io.hpp"
#include "support.hpp"

using namespace codexl;

namespace {

std::vector<SourceFile> numbered_files(std::size_t n) {
  std::vector<SourceFile> files;
  for (std::size_t i = 0; i < n; ++i) {
    files.push_back(SourceFile::from_text("f" + std::to_string(100 + i) + ".py",
                                          "value_" + std::to_string(i) + " = " + std::to_string(i * i) + "\n"));
  }
  return files;
}

// Candidate with `hits` of its `total` lines taken from the training file.
SourceFile candidate(const std::string& name, std::size_t hits, std::size_t total) {
  std::string text;
  for (std::size_t i = 0; i < total; ++i) {
    text += i < hits ? "shared_" + std::to_string(i) + " = 1\n" : name + "_own_" + std::to_string(i) + " = 2\n";
  }
  return SourceFile::from_text(name + ".py", text);
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("source files keep lines and rejoin exactly") {
  for (std::string text : {"", "a", "a\n", "a\nb", "a\n\nb\n", "\n", "x = 1\r\ny = 2\n"}) {
    const auto f = SourceFile::from_text("t.py", text);
    CHECK(f.rejoin() == text);
  }
  const auto f = SourceFile::from_text("t.py", "a\n\nb\n");
  CHECK(f.lines == std::vector<std::string>{"a", "", "b"});
  CHECK(f.trailing_newline);
}

TEST_CASE("directory loading is sorted and skips invalid utf-8") {
  const auto dir = testing::temp_dir("load");
  write_file_atomic(dir / "b.py", "b = 1\n");
  write_file_atomic(dir / "sub" / "a.py", "a = 1\n");
  write_file_atomic(dir / "notes.txt", "ignored\n");
  write_file_atomic(dir / "bad.py", std::string("x = '\xC3\x28'\n"));
  std::vector<std::string> skipped;
  const auto files = load_directory(dir, ".py", &skipped);
  REQUIRE(files.size() == 2);
  CHECK(files[0].path == "b.py");
  CHECK(files[1].path == "sub/a.py");
  CHECK(skipped == std::vector<std::string>{"bad.py"});
  CHECK_THROWS_AS(load_directory(dir / "nope"), DataError);
}

TEST_CASE("split sizes follow the ratios") {
  const auto split = split_corpus(numbered_files(20), {}, 7);
  CHECK(split.train.size() == 16);
  CHECK(split.validation.size() == 2);
  CHECK(split.test.size() == 2);
  std::set<std::string> all;
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const auto& f : *part) all.insert(f.path);
  }
  CHECK(all.size() == 20);
}

TEST_CASE("split is a function of the seed") {
  const auto a = split_corpus(numbered_files(30), {}, 1);
  const auto b = split_corpus(numbered_files(30), {}, 1);
  const auto c = split_corpus(numbered_files(30), {}, 2);
  auto paths = [](const std::vector<SourceFile>& fs) {
    std::vector<std::string> out;
    for (const auto& f : fs) out.push_back(f.path);
    return out;
  };
  CHECK(paths(a.test) == paths(b.test));
  CHECK(paths(a.validation) == paths(b.validation));
  CHECK((paths(a.test) != paths(c.test) || paths(a.validation) != paths(c.validation)));
}

TEST_CASE("split collapses exact duplicates and needs ten distinct files") {
  auto files = numbered_files(10);
  files.push_back(SourceFile::from_text("zz_copy.py", files[3].text));
  const auto split = split_corpus(files, {}, 3);
  REQUIRE(split.duplicates.size() == 1);
  CHECK(split.duplicates[0].path == "zz_copy.py");
  CHECK(split.train.size() + split.validation.size() + split.test.size() == 10);

  auto nine = numbered_files(9);
  nine.push_back(SourceFile::from_text("dup.py", nine[0].text));
  CHECK_THROWS_AS(split_corpus(nine, {}, 3), DataError);
  CHECK_THROWS_AS(split_corpus(numbered_files(20), {0.5, 0.5, 0.5}, 3), ConfigError);
  CHECK_THROWS_AS(split_corpus(numbered_files(20), {1.2, -0.1, -0.1}, 3), ConfigError);
}

TEST_CASE("overlap ratio counts trimmed non-blank lines") {
  const auto train = SourceFile::from_text("t.py", "x = 1\n  y = 2\n\n");
  const LineIndex index({train});
  CHECK(index.size() == 2);
  CHECK(line_overlap_ratio(SourceFile::from_text("c.py", "\tx = 1  \nz = 3\n\n\n"), index) == doctest::Approx(0.5));
  CHECK(line_overlap_ratio(SourceFile::from_text("c.py", "x = 1\nx = 1\nq\n"), index) == doctest::Approx(2.0 / 3.0));
  CHECK(line_overlap_ratio(SourceFile::from_text("c.py", "\n  \n"), index) == 0.0);
}

TEST_CASE("dedup removes files strictly above the threshold") {
  DatasetSplit split;
  std::string train_text;
  for (int i = 0; i < 20; ++i) train_text += "shared_" + std::to_string(i) + " = 1\n";
  split.train.push_back(SourceFile::from_text("train.py", train_text));
  split.validation.push_back(candidate("v30", 3, 10));
  split.validation.push_back(candidate("v20", 2, 10));
  split.test.push_back(candidate("t25", 1, 4));
  split.test.push_back(SourceFile::from_text("tcopy.py", train_text));
  const auto result = dedup_filter(split, 0.25);
  REQUIRE(result.split.validation.size() == 1);
  CHECK(result.split.validation[0].path == "v20.py");
  REQUIRE(result.split.test.size() == 1);
  CHECK(result.split.test[0].path == "t25.py");
  CHECK(result.log.size() == 5);
  for (const auto& r : result.log) {
    if (r.overlap) CHECK(r.kept == (*r.overlap <= 0.25));
  }
  const LineIndex index(result.split.train);
  for (const auto* part : {&result.split.validation, &result.split.test}) {
    for (const auto& f : *part) CHECK(line_overlap_ratio(f, index) <= 0.25);
  }
}

TEST_CASE("dedup on the bundled corpus leaves no heavy overlap") {
  const auto split = split_corpus(load_directory(CODEXL_CORPUS_DIR), {}, 0);
  const auto result = dedup_filter(split, 0.25);
  const LineIndex index(result.split.train);
  for (const auto* part : {&result.split.validation, &result.split.test}) {
    for (const auto& f : *part) CHECK(line_overlap_ratio(f, index) <= 0.25);
  }
  CHECK(result.log.size() == split.train.size() + split.validation.size() + split.test.size());
}

TEST_CASE("manifest round-trips and guards file content") {
  const auto dir = testing::temp_dir("manifest");
  auto files = numbered_files(12);
  for (const auto& f : files) write_file_atomic(dir / f.path, f.text);
  const auto result = dedup_filter(split_corpus(files, {}, 5), 0.25);
  write_manifest(dir / "manifest.tsv", result.log);
  const auto records = read_manifest(dir / "manifest.tsv");
  CHECK(records == result.log);
  const auto reloaded = load_split(dir, records);
  CHECK(reloaded.train.size() == result.split.train.size());
  CHECK(reloaded.test.size() == result.split.test.size());
  write_file_atomic(dir / reloaded.test[0].path, "changed\n");
  CHECK_THROWS_AS(load_split(dir, records), DataError);
}

TEST_CASE("streams join files with a newline on token boundaries") {
  const std::vector<SourceFile> files = {SourceFile::from_text("b.py", "bb"), SourceFile::from_text("a.py", "a")};
  const auto v = build_char_vocab({"ab\n"});
  const auto s = build_stream(files, v);
  CHECK(v.decode(s.ids) == "a\nbb");
  CHECK(s.source_boundaries == std::vector<std::size_t>{0, 2});
}

TEST_CASE("segment batches tile contiguous streams") {
  std::vector<std::int32_t> ids(1000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i);
  const SegmentStream stream(ids, 100, 2);
  CHECK(stream.stream_length() == 500);
  CHECK(stream.num_batches() == 4);
  CHECK(stream.dropped_tokens() == 200);
  for (std::size_t b = 0; b < stream.num_batches(); ++b) {
    const auto batch = stream.batch(b);
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t t = 0; t < 100; ++t) {
        const auto expect = static_cast<std::int32_t>(s * 500 + b * 100 + t);
        CHECK(batch.inputs[s * 100 + t] == expect);
        CHECK(batch.targets[s * 100 + t] == expect + 1);
      }
      CHECK(batch.is_stream_start[s] == (b == 0));
    }
  }
  CHECK_THROWS_AS(stream.batch(4), std::out_of_range);
  CHECK_THROWS_AS(SegmentStream(ids, 0, 2), ConfigError);
  CHECK_THROWS_AS(SegmentStream(ids, 500, 2), DataError);
}

TEST_CASE("batch size fitting") {
  CHECK(fit_batch_size(1000, 100, 8) == 8);
  CHECK(fit_batch_size(1000, 100, 32) == 9);
  CHECK(fit_batch_size(50, 100, 4) == 0);
}

}  // TEST_SUITE
