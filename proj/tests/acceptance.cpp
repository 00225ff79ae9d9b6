// Acceptance runner: one PASS/FAIL line per criterion.
//
//   codexl_acceptance            all criteria
//   codexl_acceptance --only 7   a single criterion
//
// Criterion 7 trains twelve desk-scale models and takes hours on one core;
// --work-dir keeps finished runs so an interrupted sweep can pick up again.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include "codexl/corpus.hpp"
#include "codexl/errors.hpp"
#include "codexl/evaluation.hpp"
#include "codexl/io.hpp"
#include "codexl/training.hpp"
#include "support.hpp"

using namespace codexl;
using codexl::testing::gradcheck;
using codexl::testing::jitter;
using codexl::testing::probe;
using codexl::testing::random_ids;
using codexl::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

ModelConfig tiny_txl() {
  ModelConfig c;
  c.depth = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffd_inner = 12;
  c.vocab_size = 11;
  c.seq_len = 4;
  c.mem_len = 4;
  c.dropout = 0.0;
  return c;
}

std::vector<std::vector<double>> grads_of(const LanguageModel<double>& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) {
    const auto g = p.tensor.grad();
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

// 1 ----------------------------------------------------------------------

Outcome formulas() {
  Outcome o;
  const TrainSchedule sched;
  const std::vector<std::pair<std::string, std::pair<double, double>>> cases = {
      {"bpc(ln 2)", {bpc(std::numbers::ln2), 1.0}},
      {"perplexity(0)", {perplexity(0.0), 1.0}},
      {"perplexity(ln 2.7185)", {perplexity(std::log(2.7185)), 2.7185}},
      {"lr_at(0)", {lr_at(0, sched), 1e-6}},
      {"lr_at(5120)", {lr_at(5120, sched), 5e-4}},
      {"lr_at(25600)", {lr_at(25600, sched), 1e-6}},
  };
  double worst = 0.0;
  for (const auto& [name, values] : cases) {
    const double err = std::abs(values.first - values.second);
    worst = std::max(worst, err);
    o.expect(err <= 1e-9, name + " = " + std::to_string(values.first));
  }
  if (o.pass) o.detail = "6 values, max error " + std::to_string(worst);
  return o;
}

// 2 ----------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  double worst = 0.0;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, const std::vector<Tensor<double>>& leaves,
                   const std::function<Tensor<double>()>& loss) {
    const auto r = gradcheck(leaves, loss);
    ++checks;
    worst = std::max(worst, r.max_rel);
    o.expect(r.max_rel <= 1e-4, name + " rel " + std::to_string(r.max_rel));
  };

  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  auto at = random_tensor({4, 3}, rng);
  auto bt = random_tensor({5, 4}, rng);
  check("matmul", {a, b}, [&] { return probe(ops::matmul(a, b)); });
  check("matmul a^T", {at, b}, [&] { return probe(ops::matmul(at, b, true, false)); });
  check("matmul b^T", {a, bt}, [&] { return probe(ops::matmul(a, bt, false, true)); });
  check("matmul a^T b^T", {at, bt}, [&] { return probe(ops::matmul(at, bt, true, true)); });
  auto x3 = random_tensor({2, 3, 4}, rng);
  auto y3 = random_tensor({2, 4, 5}, rng);
  auto y3t = random_tensor({2, 5, 4}, rng);
  check("bmm", {x3, y3}, [&] { return probe(ops::bmm(x3, y3)); });
  check("bmm b^T", {x3, y3t}, [&] { return probe(ops::bmm(x3, y3t, true)); });
  auto w = random_tensor({4, 6}, rng);
  auto bias = random_tensor({6}, rng);
  check("linear", {x3, w, bias}, [&] { return probe(ops::linear(x3, w, bias)); });
  auto e1 = random_tensor({3, 4}, rng);
  auto e2 = random_tensor({3, 4}, rng);
  auto row = random_tensor({4}, rng);
  check("add", {e1, e2}, [&] { return probe(ops::add(e1, e2)); });
  check("sub", {e1, e2}, [&] { return probe(ops::sub(e1, e2)); });
  check("mul", {e1, e2}, [&] { return probe(ops::mul(e1, e2)); });
  check("scale", {e1}, [&] { return probe(ops::scale(e1, 0.6)); });
  check("add_row", {e1, row}, [&] { return probe(ops::add_row(e1, row)); });
  check("gelu", {e1}, [&] { return probe(ops::gelu(e1)); });
  check("sigmoid", {e1}, [&] { return probe(ops::sigmoid(e1)); });
  check("tanh", {e1}, [&] { return probe(ops::tanh(e1)); });
  auto s = random_tensor({2, 3, 5}, rng);
  auto d = random_tensor({2, 3, 5}, rng);
  check("softmax", {s}, [&] { return probe(ops::softmax(s)); });
  check("softmax axis 1", {s}, [&] { return probe(ops::softmax(s, 1)); });
  check("causal_mask", {s}, [&] { return probe(ops::softmax(ops::causal_mask(s))); });
  check("masked_softmax", {s}, [&] { return probe(ops::masked_softmax(s, 0.7)); });
  check("relative_softmax", {s, d}, [&] { return probe(ops::relative_softmax(s, d, 0.7)); });
  check("rel_shift", {s}, [&] { return probe(ops::rel_shift(s)); });
  auto ln_x = random_tensor({3, 6}, rng);
  auto gain = random_tensor({6}, rng);
  auto ln_b = random_tensor({6}, rng);
  check("layer_norm", {ln_x, gain, ln_b}, [&] { return probe(ops::layer_norm(ln_x, gain, ln_b)); });
  check("dropout", {e1}, [&] {
    Rng mask(5);
    return probe(ops::dropout(e1, 0.4, mask, true));
  });
  auto table = random_tensor({7, 3}, rng);
  const std::vector<std::int32_t> ids{3, 0, 3, 6};
  check("embedding", {table}, [&] { return probe(ops::embedding(ids, table)); });
  auto c1 = random_tensor({2, 1, 4}, rng);
  check("concat", {x3, c1}, [&] { return probe(ops::concat<double>({x3, c1}, 1)); });
  check("slice", {x3}, [&] { return probe(ops::slice(x3, 2, 1, 2)); });
  check("reshape", {x3}, [&] { return probe(ops::reshape(x3, {6, 4})); });
  check("permute", {x3}, [&] { return probe(ops::permute(x3, {2, 0, 1})); });
  check("sum", {x3}, [&] { return ops::sum(ops::mul(x3, x3)); });
  check("mean", {x3}, [&] { return ops::mean(ops::mul(x3, x3)); });
  auto logits = random_tensor({5, 4}, rng);
  const std::vector<std::int32_t> t{1, 3, 0, 0, 2};
  check("cross_entropy", {logits}, [&] { return ops::cross_entropy(logits, t); });
  check("cross_entropy_from_probabilities", {logits},
        [&] { return ops::cross_entropy_from_probabilities(ops::softmax(logits), t); });
  auto pre = random_tensor({2, 12}, rng);
  auto cell = random_tensor({2, 3}, rng);
  check("lstm_cell_state", {pre, cell}, [&] { return probe(ops::lstm_cell_state(pre, cell)); });
  check("lstm_cell_output", {pre, cell},
        [&] { return probe(ops::lstm_cell_output(pre, ops::lstm_cell_state(pre, cell))); });

  // Whole model: segment 2 of a 2-layer Transformer-XL with segment 1 as memory.
  TransformerXL<double> m(tiny_txl(), 19);
  jitter(m, 20);
  Rng data(9);
  const auto seg1 = random_ids(8, 11, data);
  const auto seg2 = random_ids(8, 11, data);
  const auto targets = random_ids(8, 11, data);
  const auto memory = m.forward(seg1, 2, 4, m.initial_state(2), false, data).memory;
  const auto r = gradcheck(testing::leaves_of(m), [&] {
    return ops::cross_entropy(m.forward(seg2, 2, 4, memory, false, data).logits, targets);
  });
  ++checks;
  worst = std::max(worst, r.max_rel);
  o.expect(r.checked == m.parameter_count(), "model gradcheck skipped parameters");
  o.expect(r.max_rel <= 1e-4, "2-layer TXL rel " + std::to_string(r.max_rel));
  if (o.pass) {
    o.detail = std::to_string(checks) + " checks (" + std::to_string(r.checked) +
               " model parameters), max relative error " + std::to_string(worst);
  }
  return o;
}

// 3 ----------------------------------------------------------------------

Outcome memory_semantics() {
  Outcome o;
  // (a) mem_len = 0 is the vanilla Transformer.
  {
    auto c = tiny_txl();
    c.mem_len = 0;
    TransformerXL<double> m(c, 9);
    jitter(m, 10);
    Rng rng(4);
    auto state = m.initial_state(2);
    for (int seg = 0; seg < 3; ++seg) {
      const auto ids = random_ids(8, 11, rng);
      const auto out = m.forward(ids, 2, 4, state, false, rng);
      o.expect(same_values(out.logits, m.forward_vanilla(ids, 2, 4, false, rng)),
               "(a) segment " + std::to_string(seg) + " differs from vanilla");
      state = out.memory;
    }
  }
  // (b) stop-gradient.
  {
    TransformerXL<double> m(tiny_txl(), 15);
    jitter(m, 16);
    Rng rng(7);
    const auto a = random_ids(8, 11, rng);
    const auto b = random_ids(8, 11, rng);
    const auto targets = random_ids(8, 11, rng);
    const auto first = m.forward(a, 2, 4, m.initial_state(2), false, rng);
    auto run = [&](const MemoryState<double>& mem) {
      for (const auto& p : m.parameters()) p.tensor.zero_grad();
      backward(ops::cross_entropy(m.forward(b, 2, 4, mem, false, rng).logits, targets));
      return grads_of(m);
    };
    MemoryState<double> attached;
    MemoryState<double> constant;
    for (const auto& x : first.layer_inputs) {
      attached.layers.push_back(x);
      constant.layers.emplace_back(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    }
    const auto g_constant = run(constant);
    o.expect(run(first.memory) == g_constant, "(b) recorded memory changes gradients");
    o.expect(run(attached) == g_constant, "(b) attached memory changes gradients");
  }
  // (c) memory[l] is the detached layer-l input.
  {
    TransformerXL<double> m(tiny_txl(), 11);
    jitter(m, 12);
    Rng rng(5);
    auto state = m.initial_state(2);
    for (int seg = 0; seg < 2; ++seg) {
      const auto out = m.forward(random_ids(8, 11, rng), 2, 4, state, false, rng);
      for (std::size_t l = 0; l < out.layer_inputs.size(); ++l) {
        o.expect(same_values(out.memory.layers[l], out.layer_inputs[l]), "(c) layer " + std::to_string(l));
        o.expect(!out.memory.layers[l].requires_grad(), "(c) memory still attached");
      }
      state = out.memory;
    }
  }
  if (o.pass) o.detail = "vanilla equivalence, stop-gradient and memory contents exact";
  return o;
}

// 4 ----------------------------------------------------------------------

Outcome causality() {
  Outcome o;
  std::size_t pairs = 0;
  for (auto arch : {Arch::txl, Arch::lstm, Arch::gru}) {
    auto c = tiny_txl();
    c.arch = arch;
    c.seq_len = 8;
    c.mem_len = 8;
    auto m = make_model<double>(c, 17);
    jitter(*m, 18);
    Rng rng(8);
    const auto state = m->forward(random_ids(8, 11, rng), 1, 8, m->initial_state(1), false, rng).memory;
    const auto base_ids = random_ids(8, 11, rng);
    const auto base = m->forward(base_ids, 1, 8, state, false, rng).logits;
    for (std::size_t j = 0; j < 8; ++j) {
      for (std::int32_t delta = 1; delta < 11; ++delta) {
        auto ids = base_ids;
        ids[j] = (ids[j] + delta) % 11;
        const auto moved = m->forward(ids, 1, 8, state, false, rng).logits;
        for (std::size_t i = 0; i < j; ++i) {
          ++pairs;
          for (std::size_t v = 0; v < 11; ++v) {
            if (moved.at({i, v}) != base.at({i, v})) {
              o.expect(false, std::string(to_string(arch)) + ": token " + std::to_string(j) + " changed logit " +
                                  std::to_string(i));
              v = 11;
            }
          }
        }
      }
    }
  }
  if (o.pass) o.detail = std::to_string(pairs) + " (perturbation, earlier position) pairs unchanged across txl/lstm/gru";
  return o;
}

// 5 ----------------------------------------------------------------------

Outcome tokenization() {
  Outcome o;
  const auto files = load_directory(CODEXL_CORPUS_DIR);
  const auto texts = texts_of(files);
  const auto chars = build_char_vocab(texts);
  const auto sub = train_bpe(texts, 1000);
  std::size_t ok_char = 0, ok_sub = 0;
  for (const auto& f : files) {
    ok_char += chars.decode(chars.encode(f.text).ids) == f.text ? 1 : 0;
    ok_sub += sub.decode(sub.encode(f.text).ids) == f.text ? 1 : 0;
  }
  o.expect(ok_char == files.size(), "char round-trip " + std::to_string(ok_char) + "/" + std::to_string(files.size()));
  o.expect(ok_sub == files.size(), "bpe round-trip " + std::to_string(ok_sub) + "/" + std::to_string(files.size()));
  o.expect(sub.size() == 1000, "bpe vocabulary has " + std::to_string(sub.size()) + " tokens");

  const std::string example = "print(x + 3 if x == 0)";
  const auto ids = sub.encode(example).ids;
  o.expect(sub.decode(ids) == example, "example does not round-trip");
  std::vector<std::string> units;
  std::string shown;
  for (auto id : ids) {
    shown += (shown.empty() ? "" : " ") + sub.display(id);
    auto t = sub.token(id);
    if (!t.empty() && t.front() == kWordMarker) t.erase(0, 1);
    if (t.find_first_not_of(" \t\n") != std::string::npos) units.push_back(t);
  }
  const std::vector<std::string> want{"print", "(", "x", "+", "3", "if", "x", "==", "0", ")"};
  o.expect(units == want, "example segmented as [" + shown + "]");
  if (o.pass) {
    o.detail = std::to_string(files.size()) + " files round-trip under both schemes; bpe size 1000; example -> [" +
               shown + "]";
  }
  return o;
}

// 6 ----------------------------------------------------------------------

SourceFile numbered(const std::string& path, const std::vector<int>& ids) {
  std::string text;
  for (int i : ids) text += "value_" + std::to_string(i) + " = compute(" + std::to_string(i) + ")\n";
  return SourceFile::from_text(path, text);
}

Outcome dedup() {
  Outcome o;
  // Training lines value_0..value_99; each held-out file has 20 lines of which
  // the first k come from training.
  std::vector<int> train_ids(100);
  for (int i = 0; i < 100; ++i) train_ids[i] = i;
  auto held_out = [](const std::string& name, int shared) {
    std::vector<int> ids;
    for (int i = 0; i < 20; ++i) ids.push_back(i < shared ? i : 1000 + i);
    return numbered(name, ids);
  };
  DatasetSplit split;
  split.train.push_back(numbered("train.py", train_ids));
  split.validation.push_back(held_out("v30.py", 6));  // 0.30
  split.validation.push_back(held_out("v20.py", 4));  // 0.20
  split.test.push_back(held_out("t25.py", 5));        // 0.25, the boundary
  split.test.push_back(numbered("copy.py", train_ids));
  const auto result = dedup_filter(split, 0.25);
  std::map<std::string, bool> kept;
  for (const auto& r : result.log) kept[r.path] = r.kept;
  o.expect(!kept["v30.py"], "overlap 0.30 kept");
  o.expect(kept["v20.py"], "overlap 0.20 removed");
  o.expect(kept["t25.py"], "overlap 0.25 removed");
  o.expect(!kept["copy.py"], "exact duplicate kept");

  const LineIndex index(result.split.train);
  double worst = 0.0;
  for (const auto* part : {&result.split.validation, &result.split.test}) {
    for (const auto& f : *part) worst = std::max(worst, line_overlap_ratio(f, index));
  }
  o.expect(worst <= 0.25, "post-filter ratio " + std::to_string(worst));

  // Same guarantee on the bundled corpus.
  const auto bundled = dedup_filter(split_corpus(load_directory(CODEXL_CORPUS_DIR), SplitRatios{}, 0), 0.25);
  const LineIndex bundled_index(bundled.split.train);
  double bundled_worst = 0.0;
  for (const auto* part : {&bundled.split.validation, &bundled.split.test}) {
    for (const auto& f : *part) bundled_worst = std::max(bundled_worst, line_overlap_ratio(f, bundled_index));
  }
  o.expect(bundled_worst <= 0.25, "bundled post-filter ratio " + std::to_string(bundled_worst));
  if (o.pass) {
    o.detail = "0.30 removed, 0.20 and 0.25 kept, copy removed; max post-filter ratio " + fmt(worst, 2) +
               " (bundled corpus " + fmt(bundled_worst, 3) + ")";
  }
  return o;
}

// Desk-scale data shared by 7 and 8 ----------------------------------------

struct DeskData {
  Vocabulary vocab;
  SegmentStream train;
  SegmentStream validation;
};

DeskData desk_data() {
  auto split = dedup_filter(split_corpus(load_directory(CODEXL_CORPUS_DIR), SplitRatios{}, 0), 0.25).split;
  auto vocab = build_char_vocab(texts_of(split.train));
  SegmentStream train(build_stream(split.train, vocab).ids, 128, 16);
  auto val_ids = build_stream(split.validation, vocab).ids;
  const auto val_batch = fit_batch_size(val_ids.size(), 128, 16);
  SegmentStream validation(std::move(val_ids), 128, val_batch);
  return {std::move(vocab), std::move(train), std::move(validation)};
}

ModelConfig desk_model(Arch arch, std::size_t depth, std::size_t vocab) {
  ModelConfig c;
  c.arch = arch;
  c.depth = depth;
  c.hidden = 128;
  c.heads = 8;
  c.ffd_inner = 512;
  c.seq_len = 128;
  c.mem_len = 128;
  c.dropout = 0.1;
  c.vocab_size = vocab;
  return c;
}

// 7 ----------------------------------------------------------------------

constexpr std::size_t kDeskIters = 2000;

Outcome desk_ordering(const fs::path& work_dir) {
  Outcome o;
  const auto data = desk_data();
  TrainSchedule sched;
  sched.total_iters = kDeskIters;
  sched.warmup_iters = kDeskIters / 5;  // same warmup fraction as the full-scale schedule
  sched.epoch_iters = 512;
  if (!work_dir.empty()) fs::create_directories(work_dir);

  const std::vector<std::pair<std::string, ModelConfig>> models = {
      {"txl-4", desk_model(Arch::txl, 4, data.vocab.size())},
      {"txl-8", desk_model(Arch::txl, 8, data.vocab.size())},
      {"lstm-4", desk_model(Arch::lstm, 4, data.vocab.size())},
      {"gru-4", desk_model(Arch::gru, 4, data.vocab.size())},
  };
  std::map<std::string, std::vector<double>> results;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& [name, config] : models) {
      const auto cached = work_dir / (name + "-seed" + std::to_string(seed) + ".bpc");
      if (!work_dir.empty() && fs::exists(cached)) {
        results[name].push_back(std::stod(read_file(cached)));
        std::cout << "  " << name << " seed " << seed << ": validation BPC " << fmt(results[name].back())
                  << " (cached)\n" << std::flush;
        continue;
      }
      const auto started = std::chrono::steady_clock::now();
      TrainOptions options;
      options.seed = seed;
      options.validate = false;
      Trainer trainer(config, sched, options, data.train, data.validation, data.vocab.hash());
      trainer.run();
      const double val = bpc(trainer.validate()->mean());
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      results[name].push_back(val);
      if (!work_dir.empty()) write_file_atomic(cached, fmt(val, 9) + "\n");
      std::cout << "  " << name << " seed " << seed << ": validation BPC " << fmt(val) << ", final train loss "
                << fmt(trainer.loss_trace().back()) << ", " << fmt(secs, 0) << " s\n"
                << std::flush;
    }
  }
  std::map<std::string, SeedSummary> s;
  for (const auto& [name, values] : results) s[name] = summarize(values);
  for (const auto& [name, summary] : s) {
    std::cout << "  " << name << ": mean validation BPC " << fmt(summary.mean) << " +- " << fmt(summary.stddev)
              << " over " << summary.runs << " seeds\n";
  }
  const double txl4 = s["txl-4"].mean;
  o.expect(txl4 + 0.05 <= s["gru-4"].mean, "TXL-4 not 0.05 below GRU-4");
  o.expect(txl4 + 0.05 <= s["lstm-4"].mean, "TXL-4 not 0.05 below LSTM-4");
  o.expect(s["txl-8"].mean <= txl4 + 0.02, "TXL-8 more than 0.02 above TXL-4");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("mean BPC txl-4 ") + fmt(txl4) + ", txl-8 " +
              fmt(s["txl-8"].mean) + ", lstm-4 " + fmt(s["lstm-4"].mean) + ", gru-4 " + fmt(s["gru-4"].mean);
  return o;
}

// 8 ----------------------------------------------------------------------

Outcome time_ordering() {
  Outcome o;
  const auto data = desk_data();
  const auto V = data.vocab.size();
  const auto rows =
      benchmark_training_time({desk_model(Arch::txl, 4, V), desk_model(Arch::txl, 8, V), desk_model(Arch::lstm, 4, V),
                               desk_model(Arch::gru, 4, V)},
                              data.train, kBenchMinTimed);
  std::cout << bench_table(rows);
  std::map<std::string, double> t;
  for (const auto& r : rows) t[r.model] = r.median_seconds;
  o.expect(t["txl-4"] < t["gru-4"], "TXL-4 not faster than GRU-4");
  o.expect(t["gru-4"] < t["lstm-4"], "GRU-4 not faster than LSTM-4");
  o.expect(t["txl-8"] < std::min(t["lstm-4"], t["gru-4"]), "TXL-8 not faster than both RNNs");
  o.detail += (o.detail.empty() ? "" : "; ") + std::string("median s/iter txl-4 ") + fmt(t["txl-4"], 3) +
              ", txl-8 " + fmt(t["txl-8"], 3) + ", lstm-4 " + fmt(t["lstm-4"], 3) + ", gru-4 " + fmt(t["gru-4"], 3);
  return o;
}

// 9 ----------------------------------------------------------------------

Outcome determinism() {
  Outcome o;
  const auto files = load_directory(CODEXL_CORPUS_DIR);
  const std::vector<SourceFile> some(files.begin(), files.begin() + 10);
  const auto vocab = build_char_vocab(texts_of(some));
  const SegmentStream stream(build_stream(some, vocab).ids, 32, 4);
  ModelConfig c;
  c.depth = 2;
  c.hidden = 32;
  c.heads = 4;
  c.ffd_inner = 64;
  c.seq_len = 32;
  c.mem_len = 32;
  c.vocab_size = vocab.size();
  TrainSchedule sched;
  sched.total_iters = 200;
  sched.warmup_iters = 20;
  sched.epoch_iters = 512;
  TrainOptions options;
  options.seed = 7;
  options.validate = false;

  auto fresh = [&] { return Trainer(c, sched, options, stream, std::nullopt, vocab.hash()); };
  auto a = fresh();
  a.run();
  auto b = fresh();
  b.run();
  o.expect(a.loss_trace().size() == 200, "trace has " + std::to_string(a.loss_trace().size()) + " entries");
  o.expect(a.loss_trace() == b.loss_trace(), "two runs with one seed differ");

  const auto dir = testing::temp_dir("acceptance-resume");
  auto first = fresh();
  first.run(100);
  first.save(dir / "at100.cxlm");
  auto resumed = Trainer::resume(load_checkpoint(dir / "at100.cxlm"), options, stream, std::nullopt, vocab.hash());
  resumed.run();
  std::vector<double> stitched(first.loss_trace());
  stitched.insert(stitched.end(), resumed.loss_trace().begin(), resumed.loss_trace().end());
  o.expect(stitched == a.loss_trace(), "resumed trace differs from the uninterrupted run");
  o.expect(serialize_checkpoint(resumed.snapshot()) == serialize_checkpoint(a.snapshot()), "final checkpoints differ");
  fs::remove_all(dir);
  if (o.pass) o.detail = "200-iteration traces identical; resume at 100 matches bit for bit";
  return o;
}

// 10 ---------------------------------------------------------------------

Outcome overfit() {
  Outcome o;
  // The first bundled file of 4-8 KB.
  std::optional<SourceFile> pick;
  for (auto& f : load_directory(CODEXL_CORPUS_DIR)) {
    if (f.text.size() >= 4000 && f.text.size() <= 8000) {
      pick = std::move(f);
      break;
    }
  }
  if (!pick) return {false, "no bundled file of 4-8 KB"};
  const auto vocab = build_char_vocab({pick->text});
  const SegmentStream stream(vocab.encode(pick->text).ids, 64, 8);
  ModelConfig c;
  c.depth = 4;
  c.hidden = 128;
  c.heads = 8;
  c.ffd_inner = 512;
  c.seq_len = 64;
  c.mem_len = 64;
  c.dropout = 0.0;
  c.vocab_size = vocab.size();
  TrainSchedule sched;
  sched.total_iters = 500;
  sched.warmup_iters = 50;
  sched.epoch_iters = 512;
  sched.lr_peak = 1e-3;
  TrainOptions options;
  options.validate = false;
  Trainer trainer(c, sched, options, stream, std::nullopt, vocab.hash());
  trainer.run();
  const double train_bpc = bpc(stream_loss(trainer.model(), stream).mean());
  o.expect(train_bpc < 0.1, "training BPC " + fmt(train_bpc));
  if (o.pass) {
    o.detail = pick->path + " (" + std::to_string(pick->text.size()) + " bytes): training BPC " + fmt(train_bpc) +
               " after 500 iterations";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  std::string work_dir;
  app.add_option("--only", only, "Run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work-dir", work_dir, "Keep finished desk-scale runs here");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "formula exactness", formulas},
      {2, "gradient fidelity", gradients},
      {3, "memory semantics", memory_semantics},
      {4, "causality", causality},
      {5, "tokenization", tokenization},
      {6, "dedup", dedup},
      {7, "desk-scale BPC ordering", [&] { return desk_ordering(work_dir); }},
      {8, "training time ordering", time_ordering},
      {9, "determinism and checkpointing", determinism},
      {10, "overfit sanity", overfit},
  };
  bool all = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    all = all && o.pass;
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail
              << " [" << fmt(secs, 1) << " s]\n"
              << std::flush;
  }
  return all ? 0 : 1;
}
