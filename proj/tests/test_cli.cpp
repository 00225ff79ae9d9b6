#include <doctest.h>

#include <sstream>

#include "codexl/cli.hpp"
#include "codexl/config.hpp"
#include "codexl/errors.hpp"
#include "codexl/io.hpp"
#include "codexl/training.hpp"
#include "support.hpp"

using namespace codexl;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "codexl");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// A dozen bundled files are enough for a ten-file split.
fs::path small_corpus() {
  const auto dir = testing::temp_dir("cli-corpus");
  std::size_t copied = 0;
  std::vector<fs::path> all;
  for (const auto& e : fs::directory_iterator(CODEXL_CORPUS_DIR)) all.push_back(e.path());
  std::sort(all.begin(), all.end());
  for (const auto& p : all) {
    if (p.extension() != ".py" || fs::file_size(p) > 12000) continue;
    fs::copy_file(p, dir / p.filename());
    if (++copied == 14) break;
  }
  return dir;
}

std::vector<std::string> tiny_flags(const fs::path& corpus, const fs::path& out) {
  return {"--corpus-dir", corpus.string(), "--out-dir", out.string(), "--vocab", "char", "--hidden", "16",
          "--heads", "2", "--ffd-inner", "32", "--depth", "2", "--seq-len", "16", "--mem-len", "16", "--batch",
          "4", "--eval-batch", "2", "--epochs", "2", "--iters-per-epoch", "5", "--warmup", "2"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run config defaults and key handling") {
  RunConfig c;
  CHECK(c.model.hidden == 512);
  CHECK(c.schedule() == TrainSchedule{});
  CHECK(c.get("seq_len") == "256");
  c.set("seq_len", "64");
  CHECK(c.model.seq_len == 64);
  c.set("arch", "gru");
  CHECK(c.model.arch == Arch::gru);
  c.set("vocab", "char");
  CHECK(c.vocab == VocabKind::character);
  CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("seq_len", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("lr_peak", "fast"), ConfigError);
  CHECK_THROWS_AS(c.set("arch", "cnn"), ConfigError);
  CHECK(c.manifest_path() == fs::path("run") / "manifest.tsv");
}

TEST_CASE("run config text round-trips and reports lines") {
  RunConfig a;
  a.apply_text("# comment\nseed = 42\n\nlr_peak = 0.00025  # inline\nout_dir = /tmp/x\n");
  CHECK(a.seed == 42);
  CHECK(a.lr_peak == 0.00025);
  RunConfig b;
  b.apply_text(a.to_text());
  CHECK(b.to_text() == a.to_text());
  CHECK_THROWS_WITH_AS(b.apply_text("seed = 1\nbogus = 2\n", "f.cfg"), doctest::Contains("f.cfg:2"), ConfigError);
  CHECK_THROWS_AS(b.apply_text("just words\n"), ConfigError);
  CHECK_THROWS_AS(b.apply_file("/nonexistent/run.cfg"), ConfigError);
  RunConfig bad;
  bad.warmup = bad.epochs * bad.iters_per_epoch;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("usage errors exit 1") {
  auto r = cli({"--bogus-flag"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--corpus-dir") != std::string::npos);
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"train", "--seq-len", "abc"}).code == kExitUsage);
  CHECK(cli({"train", "--heads", "3", "--hidden", "16"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("missing data exits 2") {
  const auto out = testing::temp_dir("cli-missing");
  auto r = cli({"train", "--corpus-dir", (out / "nothing").string(), "--out-dir", out.string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("not found") != std::string::npos);
  CHECK(cli({"eval", "--out-dir", out.string(), "--checkpoint", (out / "x.cxlm").string()}).code == kExitData);
}

TEST_CASE("the pipeline runs end to end") {
  const auto corpus = small_corpus();
  const auto out = testing::temp_dir("cli-run");
  const auto flags = tiny_flags(corpus, out);

  auto ingest = cli(with({"ingest"}, flags));
  REQUIRE_MESSAGE(ingest.code == kExitOk, ingest.err);
  CHECK(fs::exists(out / "manifest.tsv"));
  auto tok = cli(with({"tokenize"}, flags));
  REQUIRE_MESSAGE(tok.code == kExitOk, tok.err);
  CHECK(Vocabulary::load(out / "vocab.txt").kind() == VocabKind::character);

  auto train = cli(with({"train"}, flags));
  REQUIRE_MESSAGE(train.code == kExitOk, train.err);
  CHECK(fs::exists(out / "run.cfg"));
  CHECK(fs::exists(out / "checkpoints" / "last.cxlm"));
  const auto metrics = read_file(out / "metrics.csv");
  CHECK(metrics.find("# seed = 0") != std::string::npos);
  CHECK(metrics.find(kMetricsHeader) != std::string::npos);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == std::count(metrics.begin(), metrics.end(), '#') + 1 + 12);

  auto eval = cli(with({"eval"}, flags));
  REQUIRE_MESSAGE(eval.code == kExitOk, eval.err);
  CHECK(eval.out.find("BPC") != std::string::npos);
  CHECK(fs::exists(out / "eval.csv"));

  auto sample = cli(with({"sample", "--prompt", "def ", "--length", "20", "--temperature", "0"}, flags));
  REQUIRE_MESSAGE(sample.code == kExitOk, sample.err);
  CHECK(sample.out.starts_with("def "));
  CHECK(cli(with({"sample", "--prompt", "def ", "--length", "20", "--temperature", "0"}, flags)).out == sample.out);
  CHECK(cli(with({"sample", "--prompt", "x", "--length", "0"}, flags)).out == "x\n");
  CHECK(cli(with({"sample", "--temperature", "-1"}, flags)).code == kExitUsage);

  // A run stopped early picks up where it left off; the stored schedule wins.
  const auto out2 = testing::temp_dir("cli-resume");
  auto flags2 = tiny_flags(corpus, out2);
  auto partial = cli(with({"train", "--max-iters", "7"}, flags2));
  REQUIRE_MESSAGE(partial.code == kExitOk, partial.err);
  CHECK(std::stoul(load_checkpoint(out2 / "checkpoints" / "last.cxlm").get("iteration")) == 7);
  auto resume = cli(with({"train", "--resume", "--epochs", "9", "--epochs", "2"}, flags2));
  REQUIRE_MESSAGE(resume.code == kExitOk, resume.err);
  CHECK(resume.out.find("resuming at iteration 7") != std::string::npos);
  CHECK(std::stoul(load_checkpoint(out2 / "checkpoints" / "last.cxlm").get("iteration")) == 10);
  CHECK(read_file(out2 / "checkpoints" / "last.cxlm") == read_file(out / "checkpoints" / "last.cxlm"));
}

TEST_CASE("generation feeds the prompt and appends the requested length") {
  ModelConfig c;
  c.depth = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffd_inner = 32;
  c.vocab_size = 9;
  c.seq_len = 4;
  c.mem_len = 4;
  TransformerXL<float> m(c, 1);
  testing::jitter(m, 2, 0.2);
  const std::vector<std::int32_t> prompt{1, 2, 3, 4, 5, 6};
  const auto a = generate(m, prompt, 10, 0.0, 1);
  CHECK(a.size() == 16);
  CHECK(std::equal(prompt.begin(), prompt.end(), a.begin()));
  CHECK(generate(m, prompt, 10, 0.0, 99) == a);
  CHECK(generate(m, prompt, 0, 1.0, 1) == prompt);
  const auto s1 = generate(m, prompt, 30, 1.0, 5);
  CHECK(generate(m, prompt, 30, 1.0, 5) == s1);
  for (auto id : s1) CHECK((id >= 0 && id < 9));
}

}  // TEST_SUITE
