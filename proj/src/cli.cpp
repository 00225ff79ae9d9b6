#include "codexl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "codexl/checkpoint.hpp"
#include "codexl/config.hpp"
#include "codexl/corpus.hpp"
#include "codexl/errors.hpp"
#include "codexl/evaluation.hpp"
#include "codexl/hash.hpp"
#include "codexl/io.hpp"
#include "codexl/random.hpp"
#include "codexl/tokenizer.hpp"
#include "codexl/training.hpp"

namespace codexl {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::string>& setting_help() {
  static const std::map<std::string, std::string> help = {
      {"seed", "random seed for splitting, initialization and dropout"},
      {"arch", "model architecture: txl, lstm or gru"},
      {"depth", "number of layers"},
      {"hidden", "hidden size"},
      {"heads", "attention heads (txl)"},
      {"ffd_inner", "feed-forward inner size (txl)"},
      {"seq_len", "tokens per segment"},
      {"mem_len", "cached memory positions per layer (txl)"},
      {"dropout", "dropout rate while training"},
      {"positional", "positional encoding: relative or absolute (txl)"},
      {"vocab", "tokenization: char or bpe"},
      {"vocab_size", "BPE vocabulary budget, special tokens included"},
      {"epochs", "training epochs"},
      {"iters_per_epoch", "iterations per epoch"},
      {"lr_peak", "learning rate at the end of warmup"},
      {"lr_floor", "learning rate at the start of warmup and the end of decay"},
      {"warmup", "warmup iterations"},
      {"clip", "global gradient-norm cap (0 disables)"},
      {"batch", "training batch size"},
      {"eval_batch", "batch size for validation and evaluation streams"},
      {"threshold", "maximum line overlap kept by deduplication"},
      {"extension", "source file extension to ingest"},
      {"corpus_dir", "directory of source files"},
      {"out_dir", "directory for manifest, vocabulary, checkpoints and metrics"},
      {"manifest", "split manifest path (default OUT_DIR/manifest.tsv)"},
      {"vocab_file", "vocabulary path (default OUT_DIR/vocab.txt)"},
      {"checkpoint_dir", "checkpoint directory (default OUT_DIR/checkpoints)"},
      {"metrics_file", "metrics CSV path (default OUT_DIR/metrics.csv)"},
  };
  return help;
}

std::string flag_for(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

DatasetSplit ingest(const RunConfig& cfg, std::ostream& out) {
  if (cfg.corpus_dir.empty()) throw DataError("no corpus directory given (use --corpus-dir)");
  std::vector<std::string> skipped;
  auto files = load_directory(cfg.corpus_dir, cfg.extension, &skipped);
  for (const auto& s : skipped) out << "skipped (not UTF-8): " << s << '\n';
  auto split = split_corpus(std::move(files), SplitRatios{}, cfg.seed);
  auto result = dedup_filter(std::move(split), cfg.threshold);
  std::size_t removed = 0;
  for (const auto& r : result.log) removed += r.kept ? 0 : 1;
  fs::create_directories(cfg.manifest_path().parent_path().empty() ? fs::path(".") : cfg.manifest_path().parent_path());
  write_manifest(cfg.manifest_path(), result.log);
  out << "train " << result.split.train.size() << ", validation " << result.split.validation.size() << ", test "
      << result.split.test.size() << " files; " << removed << " removed -> " << cfg.manifest_path().string() << '\n';
  return std::move(result.split);
}

DatasetSplit load_or_ingest(const RunConfig& cfg, std::ostream& out) {
  if (!fs::exists(cfg.manifest_path())) return ingest(cfg, out);
  if (cfg.corpus_dir.empty()) throw DataError("no corpus directory given (use --corpus-dir)");
  if (!fs::is_directory(cfg.corpus_dir)) throw DataError("corpus directory " + cfg.corpus_dir.string() + " not found");
  return load_split(cfg.corpus_dir, read_manifest(cfg.manifest_path()));
}

Vocabulary tokenize(const RunConfig& cfg, const DatasetSplit& split, std::ostream& out) {
  const auto texts = texts_of(split.train);
  auto vocab = cfg.vocab == VocabKind::character ? build_char_vocab(texts) : train_bpe(texts, cfg.vocab_size);
  if (cfg.vocab_path().has_parent_path()) fs::create_directories(cfg.vocab_path().parent_path());
  write_file_atomic(cfg.vocab_path(), vocab.serialize());
  out << to_string(vocab.kind()) << " vocabulary: " << vocab.size() << " tokens, " << vocab.merges().size()
      << " merges -> " << cfg.vocab_path().string() << '\n';
  return vocab;
}

Vocabulary load_or_tokenize(const RunConfig& cfg, const DatasetSplit& split, std::ostream& out) {
  if (!fs::exists(cfg.vocab_path())) return tokenize(cfg, split, out);
  auto vocab = Vocabulary::load(cfg.vocab_path());
  if (vocab.kind() != cfg.vocab) {
    throw DataError(cfg.vocab_path().string() + " holds a " + std::string(to_string(vocab.kind())) +
                    " vocabulary but --vocab is " + std::string(to_string(cfg.vocab)));
  }
  return vocab;
}

SegmentStream make_stream(const std::vector<SourceFile>& files, const Vocabulary& vocab, std::size_t seq,
                          std::size_t requested_batch, const std::string& what, std::ostream& err) {
  auto ids = build_stream(files, vocab).ids;
  const auto batch = fit_batch_size(ids.size(), seq, requested_batch);
  if (batch == 0) {
    throw DataError(what + " split has " + std::to_string(ids.size()) + " tokens, too few for one segment of " +
                    std::to_string(seq));
  }
  if (batch < requested_batch) err << "warning: " << what << " batch reduced to " << batch << " to fit the data\n";
  return SegmentStream(std::move(ids), seq, batch);
}

fs::path default_checkpoint(const RunConfig& cfg) {
  const auto best = cfg.checkpoint_path() / "best.cxlm";
  return fs::exists(best) ? best : cfg.checkpoint_path() / "last.cxlm";
}

int run_train(const RunConfig& cfg, bool resume, std::optional<std::size_t> max_iters, std::ostream& out,
              std::ostream& err) {
  auto split = load_or_ingest(cfg, out);
  const auto vocab = load_or_tokenize(cfg, split, out);
  auto model = cfg.model;
  model.vocab_size = vocab.size();
  model.validate();

  auto train = make_stream(split.train, vocab, model.seq_len, cfg.batch, "training", err);
  std::optional<SegmentStream> validation;
  try {
    validation = make_stream(split.validation, vocab, model.seq_len, cfg.eval_batch, "validation", err);
  } catch (const DataError& e) {
    err << "warning: no validation pass: " << e.what() << '\n';
  }

  TrainOptions options;
  options.clip = cfg.clip;
  options.seed = cfg.seed;
  options.checkpoint_dir = cfg.checkpoint_path();
  options.metrics_path = cfg.metrics_path();
  options.provenance = cfg.entries();
  options.provenance.emplace_back("vocab_hash", hex64(vocab.hash()));
  options.provenance.emplace_back("model_vocab_size", std::to_string(vocab.size()));
  options.provenance.emplace_back("train_tokens", std::to_string(train.stream_length() * train.batch_size()));
  options.on_step = [&out](std::size_t iter, double loss) {
    if ((iter + 1) % 50 == 0) out << "iter " << iter + 1 << " loss " << loss << '\n' << std::flush;
  };

  // Resolved settings go to disk before the first step.
  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "run.cfg", "# resolved settings\n" + cfg.to_text());

  const auto last = cfg.checkpoint_path() / "last.cxlm";
  auto trainer = resume && fs::exists(last)
                     ? Trainer::resume(load_checkpoint(last), options, std::move(train), std::move(validation),
                                       vocab.hash())
                     : Trainer(model, cfg.schedule(), options, std::move(train), std::move(validation), vocab.hash());
  if (resume) out << "resuming at iteration " << trainer.iteration() << '\n';
  out << trainer.model().config().describe() << ": " << trainer.model().parameter_count() << " parameters\n";
  trainer.run(max_iters.value_or(trainer.schedule().total_iters));
  if (trainer.iteration() % trainer.schedule().epoch_iters != 0) trainer.save(last);
  out << "finished at iteration " << trainer.iteration();
  if (const auto best = trainer.best_validation()) {
    out << ", best validation loss " << *best << " (BPC " << bpc(*best) << ", perplexity " << perplexity(*best) << ")";
  }
  out << "\ncheckpoints in " << cfg.checkpoint_path().string() << ", metrics in " << cfg.metrics_path().string()
      << '\n';
  return kExitOk;
}

int run_eval(const RunConfig& cfg, const fs::path& checkpoint_arg, const std::string& which, std::ostream& out,
             std::ostream& err) {
  const auto path = checkpoint_arg.empty() ? default_checkpoint(cfg) : checkpoint_arg;
  const auto cp = load_checkpoint(path);
  const auto model = load_model(cp);
  const auto vocab = Vocabulary::load(cfg.vocab_path());
  if (!fs::exists(cfg.manifest_path())) throw DataError("no split manifest at " + cfg.manifest_path().string());
  if (cfg.corpus_dir.empty()) throw DataError("no corpus directory given (use --corpus-dir)");
  const auto split = load_split(cfg.corpus_dir, read_manifest(cfg.manifest_path()));
  const auto& files = which == "validation" ? split.validation : split.test;
  const auto stream = make_stream(files, vocab, model->config().seq_len, cfg.eval_batch, which, err);
  const auto report = evaluate(*model, checkpoint_vocab_hash(cp), vocab, stream);
  out << report.summary() << '\n' << EvalReport::csv_header() << '\n' << report.csv_row() << '\n';

  const auto csv = cfg.out_dir / "eval.csv";
  const bool fresh = !fs::exists(csv);
  fs::create_directories(cfg.out_dir);
  std::ofstream f(csv, std::ios::app);
  if (fresh) f << EvalReport::csv_header() << '\n';
  f << report.csv_row() << '\n';
  return kExitOk;
}

ModelConfig parse_model_spec(const std::string& spec, const ModelConfig& base) {
  const auto dash = spec.rfind('-');
  if (dash == std::string::npos) throw ConfigError("model '" + spec + "' should look like txl-4");
  ModelConfig c = base;
  c.arch = parse_arch(spec.substr(0, dash));
  try {
    c.depth = std::stoul(spec.substr(dash + 1));
  } catch (const std::exception&) {
    throw ConfigError("model '" + spec + "' has no depth");
  }
  c.validate();
  return c;
}

int run_bench(const RunConfig& cfg, const std::string& models, std::size_t iters, std::size_t warmup,
              std::ostream& out, std::ostream& err) {
  auto split = load_or_ingest(cfg, out);
  const auto vocab = load_or_tokenize(cfg, split, out);
  auto base = cfg.model;
  base.vocab_size = vocab.size();
  std::vector<ModelConfig> configs;
  std::size_t start = 0;
  while (start <= models.size()) {
    auto end = models.find(',', start);
    if (end == std::string::npos) end = models.size();
    if (end > start) configs.push_back(parse_model_spec(models.substr(start, end - start), base));
    start = end + 1;
  }
  const auto data = make_stream(split.train, vocab, base.seq_len, cfg.batch, "training", err);
  const auto rows = benchmark_training_time(configs, data, iters, warmup, cfg.seed);
  const auto table = bench_table(rows);
  out << table;
  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir / "bench.csv", table);
  return kExitOk;
}

int run_sample(const RunConfig& cfg, const fs::path& checkpoint_arg, const std::string& prompt, std::size_t length,
               double temperature, std::ostream& out, std::ostream& err) {
  if (temperature < 0.0 || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
  const auto path = checkpoint_arg.empty() ? default_checkpoint(cfg) : checkpoint_arg;
  const auto cp = load_checkpoint(path);
  const auto model = load_model(cp);
  const auto vocab = Vocabulary::load(cfg.vocab_path());
  if (checkpoint_vocab_hash(cp) != vocab.hash()) {
    throw DataError("checkpoint vocabulary " + hex64(checkpoint_vocab_hash(cp)) + " does not match " +
                    cfg.vocab_path().string());
  }
  auto ids = vocab.encode(prompt.empty() ? std::string("\n") : prompt).ids;
  if (std::all_of(ids.begin(), ids.end(), [](auto id) { return id == Vocabulary::kUnk; })) {
    err << "warning: prompt has no known tokens; continuing from <unk>\n";
  }
  const auto result = generate(*model, ids, length, temperature, cfg.seed);
  out << vocab.decode(result);
  if (!out.bad()) out << '\n';
  return kExitOk;
}

}  // namespace

std::vector<std::int32_t> generate(const LanguageModel<float>& model, std::span<const std::int32_t> prompt,
                                   std::size_t length, double temperature, std::uint64_t seed) {
  if (prompt.empty()) throw ConfigError("generation needs at least one prompt token");
  NoGradGuard no_grad;
  Rng rng(seed);
  Rng unused(0);
  const auto V = model.config().vocab_size;
  const auto seq = model.config().seq_len;
  std::vector<std::int32_t> ids(prompt.begin(), prompt.end());
  if (length == 0) return ids;

  auto memory = model.initial_state(1);
  std::vector<float> last(V);
  auto feed = [&](std::span<const std::int32_t> chunk) {
    auto result = model.forward(chunk, 1, chunk.size(), memory, false, unused);
    memory = std::move(result.memory);
    const auto logits = result.logits.data();
    std::copy(logits.end() - static_cast<std::ptrdiff_t>(V), logits.end(), last.begin());
  };
  for (std::size_t start = 0; start < ids.size(); start += seq) {
    feed(std::span<const std::int32_t>(ids).subspan(start, std::min(seq, ids.size() - start)));
  }
  for (std::size_t k = 0; k < length; ++k) {
    std::int32_t next = 0;
    if (temperature == 0.0) {
      next = static_cast<std::int32_t>(std::max_element(last.begin(), last.end()) - last.begin());
    } else {
      const double mx = *std::max_element(last.begin(), last.end());
      std::vector<double> p(V);
      double z = 0.0;
      for (std::size_t j = 0; j < V; ++j) z += p[j] = std::exp((last[j] - mx) / temperature);
      double u = uniform01(rng) * z;
      next = static_cast<std::int32_t>(V - 1);
      for (std::size_t j = 0; j < V; ++j) {
        if (u < p[j]) {
          next = static_cast<std::int32_t>(j);
          break;
        }
        u -= p[j];
      }
    }
    ids.push_back(next);
    if (k + 1 < length) feed(std::span<const std::int32_t>(&ids.back(), 1));
  }
  return ids;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Language models for source code: Transformer-XL with LSTM and GRU baselines."};
  app.name(args.empty() ? "codexl" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "settings file of key = value lines");
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> setting_options;
  for (const auto& key : RunConfig::keys()) {
    auto* opt = app.add_option(flag_for(key), values[key], setting_help().at(key))
                    ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    setting_options.emplace_back(key, opt);
  }

  auto* ingest_cmd = app.add_subcommand("ingest", "scan the corpus, split it and write the deduplicated manifest");
  auto* tokenize_cmd = app.add_subcommand("tokenize", "build the char or BPE vocabulary from the training split");
  auto* train_cmd = app.add_subcommand("train", "train a model, writing checkpoints and a metrics CSV");
  bool resume = false;
  std::size_t max_iters = 0;
  train_cmd->add_flag("--resume", resume, "continue from CHECKPOINT_DIR/last.cxlm when present");
  auto* max_iters_opt = train_cmd->add_option("--max-iters", max_iters, "stop after this many iterations in total");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  std::string checkpoint;
  std::string which = "test";
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default best, else last)");
  eval_cmd->add_option("--split", which, "split to score")->check(CLI::IsMember({"test", "validation"}));

  auto* bench_cmd = app.add_subcommand("bench", "normalized per-iteration training time");
  std::string models = "txl-4,txl-8,lstm-4,gru-4";
  std::size_t iters = kBenchMinTimed;
  std::size_t warmup = kBenchWarmup;
  bench_cmd->add_option("--models", models, "comma-separated arch-depth list")->capture_default_str();
  bench_cmd->add_option("--iters", iters, "timed iterations per model")->capture_default_str();
  bench_cmd->add_option("--warmup-iters", warmup, "untimed iterations per model")->capture_default_str();

  auto* sample_cmd = app.add_subcommand("sample", "generate text from a checkpoint");
  std::string prompt;
  std::size_t length = 200;
  double temperature = 0.8;
  sample_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default best, else last)");
  sample_cmd->add_option("--prompt", prompt, "text to continue");
  sample_cmd->add_option("--length", length, "tokens to generate")->capture_default_str();
  sample_cmd->add_option("--temperature", temperature, "softmax temperature; 0 is greedy")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> argv_copy = args.empty() ? std::vector<std::string>{"codexl"} : args;
  std::vector<char*> argv;
  for (auto& a : argv_copy) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.apply_file(config_path);
    for (const auto& [key, opt] : setting_options) {
      if (opt->count() > 0) cfg.set(key, values[key]);
    }
    cfg.validate();

    if (ingest_cmd->parsed()) {
      ingest(cfg, out);
      return kExitOk;
    }
    if (tokenize_cmd->parsed()) {
      tokenize(cfg, load_or_ingest(cfg, out), out);
      return kExitOk;
    }
    if (train_cmd->parsed()) {
      return run_train(cfg, resume, max_iters_opt->count() > 0 ? std::optional(max_iters) : std::nullopt, out, err);
    }
    if (eval_cmd->parsed()) return run_eval(cfg, checkpoint, which, out, err);
    if (bench_cmd->parsed()) return run_bench(cfg, models, iters, warmup, out, err);
    if (sample_cmd->parsed()) return run_sample(cfg, checkpoint, prompt, length, temperature, out, err);
    err << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace codexl
