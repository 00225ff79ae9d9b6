#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "codexl/checkpoint.hpp"
#include "codexl/errors.hpp"
#include "codexl/io.hpp"
#include "codexl/ops.hpp"
#include "codexl/training.hpp"
#include "support.hpp"

using namespace codexl;

namespace {

ModelConfig small_txl(std::size_t vocab = 13) {
  ModelConfig c;
  c.depth = 2;
  c.hidden = 16;
  c.heads = 2;
  c.ffd_inner = 32;
  c.vocab_size = vocab;
  c.seq_len = 8;
  c.mem_len = 8;
  c.dropout = 0.1;
  return c;
}

std::vector<std::int32_t> pattern_ids(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int32_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = static_cast<std::int32_t>(i % 5 == 0 ? rng() % vocab : (i * 3 + i / 7) % vocab);
  }
  return ids;
}

TrainSchedule short_schedule(std::size_t total, std::size_t epoch) {
  TrainSchedule s;
  s.warmup_iters = total / 4;
  s.total_iters = total;
  s.epoch_iters = epoch;
  s.lr_peak = 3e-3;
  return s;
}

std::size_t count_lines(const std::filesystem::path& p, const std::string& needle) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning rate schedule values") {
  const TrainSchedule s;
  CHECK(lr_at(0, s) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(lr_at(5120, s) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_at(2560, s) == doctest::Approx(2.505e-4).epsilon(1e-12));
  CHECK(lr_at(25600, s) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(lr_at(30000, s) == doctest::Approx(1e-6).epsilon(1e-12));
  // Midpoint of the decay: half-way between peak and floor.
  CHECK(lr_at(5120 + 10240, s) == doctest::Approx(0.5 * (5e-4 + 1e-6)).epsilon(1e-12));
}

TEST_CASE("learning rate schedule is continuous and bounded") {
  const TrainSchedule s;
  CHECK(std::abs(lr_at(5121, s) - lr_at(5120, s)) < 1e-9);
  CHECK(std::abs(lr_at(5119, s) - lr_at(5120, s)) < 1e-7);
  double prev = lr_at(5120, s);
  for (std::size_t i = 0; i <= 25600; ++i) {
    const double lr = lr_at(i, s);
    REQUIRE(lr >= s.lr_floor - 1e-18);
    REQUIRE(lr <= s.lr_peak + 1e-18);
    if (i > 5120) {
      REQUIRE(lr <= prev);
      prev = lr;
    }
  }
  auto bad = s;
  bad.warmup_iters = bad.total_iters;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.lr_floor = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adam first step and zero gradients") {
  ParameterList<double> params{{"w", Tensor<double>({1}, {2.0}, true)}};
  params[0].tensor.grad()[0] = 0.5;
  AdamState<double> st;
  adam_step(params, st, 1e-3);
  // m̂ = g, v̂ = g², so Δθ = −lr·g/(|g| + ε).
  const double expected = -1e-3 * 0.5 / (0.5 + 1e-8);
  CHECK(params[0].tensor.data()[0] - 2.0 == doctest::Approx(expected).epsilon(1e-9));
  CHECK(st.t == 1);

  ParameterList<double> still{{"w", Tensor<double>({3}, {1.0, -2.0, 3.0}, true)}};
  AdamState<double> zs;
  adam_step(still, zs, 1e-3);
  CHECK(zs.t == 1);
  CHECK(std::vector<double>(still[0].tensor.data().begin(), still[0].tensor.data().end()) ==
        std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam second moments stay non-negative") {
  Rng rng(3);
  ParameterList<double> params{{"w", testing::random_tensor<double>({10}, rng)}};
  AdamState<double> st;
  for (int step = 0; step < 50; ++step) {
    for (auto& g : params[0].tensor.grad()) g = 3.0 * standard_normal(rng);
    adam_step(params, st, 1e-2);
    for (double v : st.v[0]) REQUIRE(v >= 0.0);
  }
}

TEST_CASE("token losses are per-row negative log-likelihoods") {
  const Tensor<double> logits({2, 2}, {0.0, 0.0, 5.0, 5.0 + std::log(3.0)});
  const std::vector<std::int32_t> targets{0, 1};
  const auto l = token_losses(logits, targets);
  CHECK(l[0] == doctest::Approx(std::log(2.0)));
  CHECK(l[1] == doctest::Approx(-std::log(0.75)));
  const Tensor<float> big({1, 3}, {1000.0f, 0.0f, -1000.0f});
  CHECK(token_losses(big, std::vector<std::int32_t>{0})[0] == doctest::Approx(0.0));
  CHECK(std::isfinite(token_losses(big, std::vector<std::int32_t>{2})[0]));
}

TEST_CASE("checkpoint container round-trips bitwise") {
  CheckpointFile f;
  f.set("kind", "test");
  f.set("note", "a b = c");
  const std::vector<float> fv{1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), 3e38f};
  const std::vector<double> dv{std::numbers::pi, -1e-300};
  f.arrays.push_back(CheckpointArray::of<float>("f", {2, 2}, fv));
  f.arrays.push_back(CheckpointArray::of<double>("d", {2}, dv));
  const auto bytes = serialize_checkpoint(f);
  CHECK(bytes.substr(0, 4) == "CXLM");
  const auto back = parse_checkpoint(bytes);
  CHECK(back == f);
  CHECK(back.get("note") == "a b = c");
  CHECK(back.array("f")->values<float>() == fv);
  CHECK(back.array("d")->values<double>() == dv);
  CHECK_THROWS_AS(back.get("missing"), DataError);
  CHECK_THROWS_AS(f.set("bad\nkey", "x"), std::exception);

  const auto dir = testing::temp_dir("ckpt");
  save_checkpoint(dir / "a.cxlm", f);
  CHECK(load_checkpoint(dir / "a.cxlm") == f);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.cxlm"), DataError);
}

TEST_CASE("corrupt checkpoints are rejected") {
  CheckpointFile f;
  f.set("kind", "test");
  f.arrays.push_back(CheckpointArray::of<float>("x", {3}, std::vector<float>{1, 2, 3}));
  const auto bytes = serialize_checkpoint(f);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad_magic), doctest::Contains("magic"), DataError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad_version), doctest::Contains("version"), DataError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(std::string_view(bytes).substr(0, cut)), DataError);
  }
  auto flipped = bytes;
  flipped[bytes.size() - 12] ^= 1;
  CHECK_THROWS_AS(parse_checkpoint(flipped), DataError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), DataError);
}

TEST_CASE("first loss is near the uniform entropy") {
  for (auto arch : {Arch::txl, Arch::lstm, Arch::gru}) {
    auto c = small_txl(40);
    c.arch = arch;
    TrainOptions opt;
    opt.validate = false;
    Trainer t(c, short_schedule(20, 10), opt, SegmentStream(pattern_ids(2000, 40, 1), 8, 4), std::nullopt, 0);
    const auto rec = t.step();
    CHECK(rec.loss == doctest::Approx(std::log(40.0)).epsilon(0.1));
    CHECK(rec.iter == 0);
    CHECK(rec.grad_norm > 0.0);
    CHECK(t.iteration() == 1);
  }
}

TEST_CASE("training lowers the loss") {
  TrainOptions opt;
  opt.validate = false;
  opt.clip = 1.0;
  std::vector<std::int32_t> cyclic(4000);
  for (std::size_t i = 0; i < cyclic.size(); ++i) cyclic[i] = static_cast<std::int32_t>(i % 13);
  Trainer t(small_txl(), short_schedule(150, 150), opt, SegmentStream(cyclic, 8, 4), std::nullopt, 0);
  t.run();
  const auto& trace = t.loss_trace();
  REQUIRE(trace.size() == 150);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += trace[i];
    tail += trace[trace.size() - 1 - i];
  }
  CHECK(tail < 0.2 * head);
}

TEST_CASE("same seed gives the same trace, another seed does not") {
  auto run = [](std::uint64_t seed) {
    TrainOptions opt;
    opt.seed = seed;
    opt.validate = false;
    Trainer t(small_txl(), short_schedule(30, 10), opt, SegmentStream(pattern_ids(3000, 13, 3), 8, 4), std::nullopt,
              0);
    t.run();
    return t.loss_trace();
  };
  CHECK(run(1) == run(1));
  CHECK(run(1) != run(2));
}

TEST_CASE("resuming from a checkpoint continues the identical trace") {
  for (auto arch : {Arch::txl, Arch::lstm}) {
    auto c = small_txl();
    c.arch = arch;
    const auto data = SegmentStream(pattern_ids(1200, 13, 4), 8, 4);  // wraps every 37 iterations
    TrainOptions opt;
    opt.seed = 7;
    opt.validate = false;
    Trainer full(c, short_schedule(80, 20), opt, data, std::nullopt, 0xabc);
    full.run();

    Trainer first(c, short_schedule(80, 20), opt, data, std::nullopt, 0xabc);
    first.run(45);
    const auto dir = testing::temp_dir("resume");
    first.save(dir / "mid.cxlm");
    auto resumed = Trainer::resume(load_checkpoint(dir / "mid.cxlm"), opt, data, std::nullopt, 0xabc);
    CHECK(resumed.iteration() == 45);
    CHECK(resumed.vocab_hash() == 0xabc);
    resumed.run();
    std::vector<double> joined = first.loss_trace();
    joined.insert(joined.end(), resumed.loss_trace().begin(), resumed.loss_trace().end());
    CHECK(joined == full.loss_trace());
    CHECK(serialize_checkpoint(resumed.snapshot()) == serialize_checkpoint(full.snapshot()));
    CHECK_THROWS_AS(Trainer::resume(load_checkpoint(dir / "mid.cxlm"), opt, data, std::nullopt, 0xdef), DataError);
  }
}

TEST_CASE("checkpointed models reload bitwise") {
  TrainOptions opt;
  opt.validate = false;
  Trainer t(small_txl(), short_schedule(20, 10), opt, SegmentStream(pattern_ids(2000, 13, 5), 8, 4), std::nullopt, 9);
  t.run(5);
  const auto cp = parse_checkpoint(serialize_checkpoint(t.snapshot()));
  CHECK(read_model_config(cp) == t.model().config());
  CHECK(checkpoint_vocab_hash(cp) == 9);
  const auto m = load_model(cp);
  const auto& a = t.model().parameters();
  const auto& b = m->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
  }
}

TEST_CASE("validation leaves the trainer untouched") {
  TrainOptions opt;
  opt.validate = false;
  Trainer t(small_txl(), short_schedule(20, 10), opt, SegmentStream(pattern_ids(2000, 13, 6), 8, 4),
            SegmentStream(pattern_ids(500, 13, 7), 8, 2), 0);
  t.run(3);
  const auto before = serialize_checkpoint(t.snapshot());
  const auto v1 = t.validate();
  const auto v2 = t.validate();
  REQUIRE(v1.has_value());
  CHECK(v1->total_nats == v2->total_nats);
  CHECK(v1->tokens == 2 * 31 * 8);
  CHECK(serialize_checkpoint(t.snapshot()) == before);
}

TEST_CASE("stream loss threads memory and matches a manual pass") {
  TransformerXL<float> m(small_txl(), 3);
  const SegmentStream s(pattern_ids(300, 13, 8), 8, 2);
  const auto loss = stream_loss<float>(m, s);
  double manual = 0;
  Rng rng(0);
  auto mem = m.initial_state(2);
  NoGradGuard ng;
  for (std::size_t i = 0; i < s.num_batches(); ++i) {
    const auto b = s.batch(i);
    auto out = m.forward(b.inputs, 2, 8, mem, false, rng);
    for (double l : token_losses(out.logits, b.targets)) manual += l;
    mem = out.memory;
  }
  CHECK(loss.tokens == s.num_batches() * 16);
  CHECK(loss.total_nats == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("metrics and checkpoints follow the epoch structure") {
  const auto dir = testing::temp_dir("metrics");
  TrainOptions opt;
  opt.checkpoint_dir = dir / "ckpt";
  opt.metrics_path = dir / "metrics.csv";
  opt.provenance = {{"run", "unit"}};
  Trainer t(small_txl(), short_schedule(30, 10), opt, SegmentStream(pattern_ids(2000, 13, 9), 8, 4),
            SegmentStream(pattern_ids(400, 13, 10), 8, 2), 0);
  t.run();
  const auto text = read_file(dir / "metrics.csv");
  CHECK(text.find("# run = unit\n") != std::string::npos);
  CHECK(text.find(std::string(kMetricsHeader) + "\n") != std::string::npos);
  CHECK(count_lines(dir / "metrics.csv", ",train,") == 30);
  CHECK(count_lines(dir / "metrics.csv", ",validation,") == 3);
  CHECK(std::filesystem::exists(dir / "ckpt" / "last.cxlm"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "best.cxlm"));
  REQUIRE(t.best_validation().has_value());
  const auto best = load_checkpoint(dir / "ckpt" / "best.cxlm");
  CHECK(std::stod(best.get("best_validation")) == doctest::Approx(*t.best_validation()));
  CHECK(std::stoul(load_checkpoint(dir / "ckpt" / "last.cxlm").get("iteration")) == 30);
}

TEST_CASE("non-finite loss aborts with the iteration") {
  TrainOptions opt;
  opt.validate = false;
  Trainer t(small_txl(), short_schedule(20, 10), opt, SegmentStream(pattern_ids(2000, 13, 11), 8, 4), std::nullopt,
            0);
  t.run(2);
  for (const auto& p : t.model().parameters()) {
    if (p.name == "head.bias") {
      Tensor<float> b = p.tensor;
      b.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    }
  }
  CHECK_THROWS_WITH_AS(t.step(), doctest::Contains("iteration 2"), NumericError);
}

TEST_CASE("trainer rejects mismatched segment lengths") {
  TrainOptions opt;
  CHECK_THROWS_AS(Trainer(small_txl(), short_schedule(20, 10), opt, SegmentStream(pattern_ids(2000, 13, 12), 16, 4),
                          std::nullopt, 0),
                  ConfigError);
}

}  // TEST_SUITE
