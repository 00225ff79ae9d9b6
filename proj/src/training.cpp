#include "codexl/training.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "codexl/errors.hpp"
#include "codexl/evaluation.hpp"
#include "codexl/hash.hpp"
#include "codexl/ops.hpp"

namespace codexl {

namespace {

constexpr std::uint64_t kDropoutStream = 0x9E3779B97F4A7C15ULL;
constexpr const char* kCheckpointKind = "codexl-trainer";

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s, std::string_view key) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw DataError("bad numeric value '" + s + "' for '" + std::string(key) + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s, std::string_view key, int base = 10) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw DataError("bad integer value '" + s + "' for '" + std::string(key) + "'");
  }
  return v;
}

std::string csv_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

template <typename T>
CheckpointArray array_of(const std::string& name, const Tensor<T>& t) {
  return CheckpointArray::of<T>(name, t.shape(), t.data());
}

Tensor<float> tensor_of(const CheckpointArray& a) { return Tensor<float>(a.shape, a.values<float>()); }

}  // namespace

void TrainSchedule::validate() const {
  if (!(lr_floor > 0.0 && lr_floor < lr_peak)) throw ConfigError("need 0 < lr_floor < lr_peak");
  if (warmup_iters >= total_iters) throw ConfigError("warmup must be shorter than the whole run");
  if (epoch_iters == 0) throw ConfigError("epoch_iters must be positive");
}

double lr_at(std::size_t iter, const TrainSchedule& s) {
  if (iter > s.total_iters) return s.lr_floor;
  const double span = s.lr_peak - s.lr_floor;
  if (s.warmup_iters > 0 && iter <= s.warmup_iters) {
    return s.lr_floor + span * static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
  }
  const double progress =
      static_cast<double>(iter - s.warmup_iters) / static_cast<double>(s.total_iters - s.warmup_iters);
  return s.lr_floor + span * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.size(), T(0));
      state.v.emplace_back(p.tensor.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
  state.t += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> w = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ShapeError("optimizer moment size mismatch for " + params[i].name);
    const bool has_grad = w.has_grad();
    const std::span<const T> g = has_grad ? std::span<const T>(w.grad()) : std::span<const T>{};
    auto theta = w.mutable_data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = has_grad ? static_cast<double>(g[k]) : 0.0;
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / c1;
      const double v_hat = vk / c2;
      theta[k] = static_cast<T>(static_cast<double>(theta[k]) - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

template <typename T>
std::vector<double> token_losses(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("token_losses: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  const auto rows = logits.dim(0);
  const auto V = logits.dim(1);
  const auto x = logits.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= V) throw ShapeError("target id out of range");
    const T* row = x.data() + r * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    out[r] = mx + std::log(z) - static_cast<double>(row[t]);
  }
  return out;
}

template <typename T>
StreamLoss stream_loss(const LanguageModel<T>& model, const SegmentStream& stream) {
  NoGradGuard no_grad;
  Rng unused(0);
  StreamLoss total;
  MemoryState<T> memory = model.initial_state(stream.batch_size());
  for (std::size_t i = 0; i < stream.num_batches(); ++i) {
    const auto b = stream.batch(i);
    auto out = model.forward(b.inputs, b.batch_size, b.seq_len, memory, false, unused);
    for (double l : token_losses(out.logits, b.targets)) total.total_nats += l;
    total.tokens += b.targets.size();
    memory = std::move(out.memory);
  }
  if (!std::isfinite(total.total_nats)) throw NumericError("non-finite evaluation loss");
  return total;
}

void write_model_config(CheckpointFile& file, const ModelConfig& c) {
  file.set("model.arch", std::string(to_string(c.arch)));
  file.set("model.depth", std::to_string(c.depth));
  file.set("model.hidden", std::to_string(c.hidden));
  file.set("model.heads", std::to_string(c.heads));
  file.set("model.ffd_inner", std::to_string(c.ffd_inner));
  file.set("model.vocab_size", std::to_string(c.vocab_size));
  file.set("model.seq_len", std::to_string(c.seq_len));
  file.set("model.mem_len", std::to_string(c.mem_len));
  file.set("model.dropout", fmt_double(c.dropout));
  file.set("model.positional", std::string(to_string(c.positional)));
}

ModelConfig read_model_config(const CheckpointFile& file) {
  ModelConfig c;
  auto size = [&](const char* key) { return static_cast<std::size_t>(parse_u64(file.get(key), key)); };
  c.arch = parse_arch(file.get("model.arch"));
  c.depth = size("model.depth");
  c.hidden = size("model.hidden");
  c.heads = size("model.heads");
  c.ffd_inner = size("model.ffd_inner");
  c.vocab_size = size("model.vocab_size");
  c.seq_len = size("model.seq_len");
  c.mem_len = size("model.mem_len");
  c.dropout = parse_double(file.get("model.dropout"), "model.dropout");
  c.positional = parse_positional(file.get("model.positional"));
  c.validate();
  return c;
}

std::unique_ptr<LanguageModel<float>> load_model(const CheckpointFile& cp) {
  auto model = make_model<float>(read_model_config(cp), 0);
  for (const auto& p : model->parameters()) {
    const auto* a = cp.array("param." + p.name);
    if (a == nullptr) throw DataError("checkpoint has no parameter '" + p.name + "'");
    if (a->shape != p.tensor.shape()) {
      throw DataError("parameter '" + p.name + "' has shape " + shape_str(a->shape) + " in checkpoint, model expects " +
                      shape_str(p.tensor.shape()));
    }
    const auto values = a->values<float>();
    Tensor<float> t = p.tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
  return model;
}

std::uint64_t checkpoint_vocab_hash(const CheckpointFile& cp) {
  return parse_u64(cp.get("vocab_hash"), "vocab_hash", 16);
}

Trainer::Trainer(ModelConfig model, TrainSchedule sched, TrainOptions options, SegmentStream train,
                 std::optional<SegmentStream> validation, std::uint64_t vocab_hash)
    : Trainer(make_model<float>(model, options.seed), sched, std::move(options), std::move(train),
              std::move(validation), vocab_hash, true) {}

Trainer::Trainer(std::unique_ptr<LanguageModel<float>> model, TrainSchedule sched, TrainOptions options,
                 SegmentStream train, std::optional<SegmentStream> validation, std::uint64_t vocab_hash, bool fresh)
    : model_(std::move(model)),
      sched_(sched),
      options_(std::move(options)),
      train_(std::move(train)),
      validation_(std::move(validation)),
      vocab_hash_(vocab_hash),
      rng_(options_.seed ^ kDropoutStream),
      started_(std::chrono::steady_clock::now()) {
  sched_.validate();
  if (train_.seq_len() != model_->config().seq_len) {
    throw ConfigError("training stream seq_len " + std::to_string(train_.seq_len()) + " differs from model seq_len " +
                      std::to_string(model_->config().seq_len));
  }
  memory_ = model_->initial_state(train_.batch_size());
  if (!options_.metrics_path.empty()) {
    if (options_.metrics_path.has_parent_path()) std::filesystem::create_directories(options_.metrics_path.parent_path());
    const auto mode = fresh ? std::ios::trunc : std::ios::app;
    metrics_ = std::make_unique<std::ofstream>(options_.metrics_path, std::ios::out | mode);
    if (!*metrics_) throw DataError("cannot write metrics file " + options_.metrics_path.string());
    if (fresh) {
      // Provenance first, so a crashed run can still be reconstructed.
      for (const auto& [k, v] : options_.provenance) *metrics_ << "# " << k << " = " << v << '\n';
      *metrics_ << "# model = " << model_->config().describe() << '\n';
      *metrics_ << "# seed = " << options_.seed << '\n';
      *metrics_ << kMetricsHeader << '\n';
      metrics_->flush();
    }
  }
}

Trainer Trainer::resume(const CheckpointFile& cp, TrainOptions options, SegmentStream train,
                        std::optional<SegmentStream> validation, std::uint64_t vocab_hash) {
  if (cp.find("kind") != kCheckpointKind) throw DataError("checkpoint was not written by the trainer");
  if (checkpoint_vocab_hash(cp) != vocab_hash) {
    throw DataError("checkpoint vocabulary " + cp.get("vocab_hash") + " does not match " + hex64(vocab_hash));
  }
  TrainSchedule sched;
  sched.lr_floor = parse_double(cp.get("schedule.lr_floor"), "schedule.lr_floor");
  sched.lr_peak = parse_double(cp.get("schedule.lr_peak"), "schedule.lr_peak");
  sched.warmup_iters = parse_u64(cp.get("schedule.warmup_iters"), "schedule.warmup_iters");
  sched.total_iters = parse_u64(cp.get("schedule.total_iters"), "schedule.total_iters");
  sched.epoch_iters = parse_u64(cp.get("schedule.epoch_iters"), "schedule.epoch_iters");
  options.seed = parse_u64(cp.get("seed"), "seed");
  options.clip = parse_double(cp.get("clip"), "clip");
  const auto batch = parse_u64(cp.get("batch"), "batch");
  if (batch != train.batch_size()) {
    throw ConfigError("checkpoint was trained with batch " + std::to_string(batch) + ", stream has " +
                      std::to_string(train.batch_size()));
  }

  Trainer t(load_model(cp), sched, std::move(options), std::move(train), std::move(validation), vocab_hash, false);
  t.iter_ = parse_u64(cp.get("iteration"), "iteration");
  {
    std::istringstream in(cp.get("rng"));
    in >> t.rng_;
    if (!in) throw DataError("checkpoint RNG state is unreadable");
  }
  if (const auto best = cp.get("best_validation"); best != "none") t.best_val_ = parse_double(best, "best_validation");

  t.adam_.t = parse_u64(cp.get("adam.t"), "adam.t");
  t.adam_.beta1 = parse_double(cp.get("adam.beta1"), "adam.beta1");
  t.adam_.beta2 = parse_double(cp.get("adam.beta2"), "adam.beta2");
  t.adam_.eps = parse_double(cp.get("adam.eps"), "adam.eps");
  if (t.adam_.t > 0) {
    for (const auto& p : t.model_->parameters()) {
      const auto* m = cp.array("adam.m." + p.name);
      const auto* v = cp.array("adam.v." + p.name);
      if (m == nullptr || v == nullptr) throw DataError("checkpoint has no optimizer moments for '" + p.name + "'");
      t.adam_.m.push_back(m->values<float>());
      t.adam_.v.push_back(v->values<float>());
      if (t.adam_.m.back().size() != p.tensor.size() || t.adam_.v.back().size() != p.tensor.size()) {
        throw DataError("optimizer moments for '" + p.name + "' have the wrong size");
      }
    }
  }

  auto& mem = t.memory_;
  for (std::size_t l = 0; l < mem.layers.size(); ++l) {
    if (const auto* a = cp.array("memory.layers." + std::to_string(l))) mem.layers[l] = tensor_of(*a);
  }
  for (std::size_t l = 0; l < mem.hidden.size(); ++l) {
    if (const auto* a = cp.array("memory.hidden." + std::to_string(l))) mem.hidden[l] = tensor_of(*a);
  }
  for (std::size_t l = 0; l < mem.cell.size(); ++l) {
    if (const auto* a = cp.array("memory.cell." + std::to_string(l))) mem.cell[l] = tensor_of(*a);
  }
  t.losses_.clear();
  return t;
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto batch = train_.batch(iter_ % train_.num_batches());
  if (batch.index == 0) memory_ = model_->initial_state(batch.batch_size);
  const auto& params = model_->parameters();

  auto out = model_->forward(batch.inputs, batch.batch_size, batch.seq_len, memory_, true, rng_);
  auto loss = ops::cross_entropy(out.logits, batch.targets);
  StepRecord rec;
  rec.iter = iter_;
  rec.loss = static_cast<double>(loss.item());
  if (!std::isfinite(rec.loss)) {
    throw NumericError("non-finite training loss at iteration " + std::to_string(iter_));
  }
  backward(loss);
  const double cap = options_.clip > 0.0 ? options_.clip : std::numeric_limits<double>::infinity();
  try {
    rec.grad_norm = ops::clip_global_norm(params, cap).norm;
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(iter_));
  }
  rec.lr = lr_at(iter_, sched_);
  adam_step(params, adam_, rec.lr);
  zero_grads(params);
  memory_ = std::move(out.memory);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  losses_.push_back(rec.loss);
  ++iter_;
  if (metrics_) {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    write_metrics_row(std::to_string(rec.iter) + "," + std::to_string(rec.iter / sched_.epoch_iters + 1) + ",train," +
                      csv_num(rec.loss) + "," + csv_num(bpc(rec.loss)) + "," + csv_num(perplexity(rec.loss)) + "," +
                      csv_num(rec.lr) + "," + csv_num(rec.grad_norm) + "," + csv_num(elapsed));
  }
  if (options_.on_step) options_.on_step(rec.iter, rec.loss);
  return rec;
}

void Trainer::run(std::size_t until) {
  until = std::min(until, sched_.total_iters);
  while (iter_ < until) {
    step();
    if (iter_ % sched_.epoch_iters == 0 || iter_ == sched_.total_iters) end_of_epoch();
  }
  if (metrics_) metrics_->flush();
}

std::optional<StreamLoss> Trainer::validate() const {
  if (!validation_) return std::nullopt;
  return stream_loss(*model_, *validation_);
}

void Trainer::end_of_epoch() {
  const auto epoch = (iter_ + sched_.epoch_iters - 1) / sched_.epoch_iters;
  bool improved = false;
  if (options_.validate && validation_) {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = validate()->mean();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!best_val_ || loss < *best_val_) {
      best_val_ = loss;
      improved = true;
    }
    if (metrics_) {
      write_metrics_row(std::to_string(iter_ - 1) + "," + std::to_string(epoch) + ",validation," + csv_num(loss) + "," +
                        csv_num(bpc(loss)) + "," + csv_num(perplexity(loss)) + "," + csv_num(lr_at(iter_ - 1, sched_)) +
                        ",," + csv_num(secs));
    }
  }
  if (metrics_) metrics_->flush();
  if (!options_.checkpoint_dir.empty()) {
    save(options_.checkpoint_dir / "last.cxlm");
    if (improved) save(options_.checkpoint_dir / "best.cxlm");
  }
}

void Trainer::write_metrics_row(const std::string& row) { *metrics_ << row << '\n'; }

CheckpointFile Trainer::snapshot() const {
  CheckpointFile cp;
  cp.set("kind", kCheckpointKind);
  write_model_config(cp, model_->config());
  cp.set("schedule.lr_floor", fmt_double(sched_.lr_floor));
  cp.set("schedule.lr_peak", fmt_double(sched_.lr_peak));
  cp.set("schedule.warmup_iters", std::to_string(sched_.warmup_iters));
  cp.set("schedule.total_iters", std::to_string(sched_.total_iters));
  cp.set("schedule.epoch_iters", std::to_string(sched_.epoch_iters));
  cp.set("seed", std::to_string(options_.seed));
  cp.set("clip", fmt_double(options_.clip));
  cp.set("batch", std::to_string(train_.batch_size()));
  cp.set("iteration", std::to_string(iter_));
  cp.set("vocab_hash", hex64(vocab_hash_));
  cp.set("best_validation", best_val_ ? fmt_double(*best_val_) : "none");
  cp.set("adam.t", std::to_string(adam_.t));
  cp.set("adam.beta1", fmt_double(adam_.beta1));
  cp.set("adam.beta2", fmt_double(adam_.beta2));
  cp.set("adam.eps", fmt_double(adam_.eps));
  std::ostringstream rng;
  rng << rng_;
  cp.set("rng", rng.str());

  const auto& params = model_->parameters();
  for (const auto& p : params) cp.arrays.push_back(array_of("param." + p.name, p.tensor));
  if (!adam_.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      cp.arrays.push_back(CheckpointArray::of<float>("adam.m." + params[i].name, params[i].tensor.shape(), adam_.m[i]));
      cp.arrays.push_back(CheckpointArray::of<float>("adam.v." + params[i].name, params[i].tensor.shape(), adam_.v[i]));
    }
  }
  for (std::size_t l = 0; l < memory_.layers.size(); ++l) {
    if (memory_.layers[l].defined()) cp.arrays.push_back(array_of("memory.layers." + std::to_string(l), memory_.layers[l]));
  }
  for (std::size_t l = 0; l < memory_.hidden.size(); ++l) {
    cp.arrays.push_back(array_of("memory.hidden." + std::to_string(l), memory_.hidden[l]));
  }
  for (std::size_t l = 0; l < memory_.cell.size(); ++l) {
    cp.arrays.push_back(array_of("memory.cell." + std::to_string(l), memory_.cell[l]));
  }
  return cp;
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, snapshot()); }

template void adam_step<float>(const ParameterList<float>&, AdamState<float>&, double);
template void adam_step<double>(const ParameterList<double>&, AdamState<double>&, double);
template std::vector<double> token_losses<float>(const Tensor<float>&, std::span<const std::int32_t>);
template std::vector<double> token_losses<double>(const Tensor<double>&, std::span<const std::int32_t>);
template StreamLoss stream_loss<float>(const LanguageModel<float>&, const SegmentStream&);
template StreamLoss stream_loss<double>(const LanguageModel<double>&, const SegmentStream&);

}  // namespace codexl
