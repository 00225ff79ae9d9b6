#include "codexl/config.hpp"

#include <charconv>
#include <functional>

#include "codexl/errors.hpp"
#include "codexl/io.hpp"

namespace codexl {

namespace {

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::string real_str(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { std::invoke(member, c) = parse_size(key, v); },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field real_field(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { std::invoke(member, c) = parse_real(key, v); },
          [member](const RunConfig& c) { return real_str(std::invoke(member, c)); }};
}

template <typename Member>
Field path_field(std::string key, Member member) {
  return {key, [member](RunConfig& c, std::string_view v) { std::invoke(member, c) = std::filesystem::path(v); },
          [member](const RunConfig& c) { return std::invoke(member, c).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_size("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back({"arch", [](RunConfig& c, std::string_view v) { c.model.arch = parse_arch(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.model.arch)); }});
    f.push_back(size_field("depth", [](auto& c) -> auto& { return c.model.depth; }));
    f.push_back(size_field("hidden", [](auto& c) -> auto& { return c.model.hidden; }));
    f.push_back(size_field("heads", [](auto& c) -> auto& { return c.model.heads; }));
    f.push_back(size_field("ffd_inner", [](auto& c) -> auto& { return c.model.ffd_inner; }));
    f.push_back(size_field("seq_len", [](auto& c) -> auto& { return c.model.seq_len; }));
    f.push_back(size_field("mem_len", [](auto& c) -> auto& { return c.model.mem_len; }));
    f.push_back(real_field("dropout", [](auto& c) -> auto& { return c.model.dropout; }));
    f.push_back({"positional", [](RunConfig& c, std::string_view v) { c.model.positional = parse_positional(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.model.positional)); }});
    f.push_back({"vocab", [](RunConfig& c, std::string_view v) { c.vocab = parse_vocab_kind(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.vocab)); }});
    f.push_back(size_field("vocab_size", &RunConfig::vocab_size));
    f.push_back(size_field("epochs", &RunConfig::epochs));
    f.push_back(size_field("iters_per_epoch", &RunConfig::iters_per_epoch));
    f.push_back(real_field("lr_peak", &RunConfig::lr_peak));
    f.push_back(real_field("lr_floor", &RunConfig::lr_floor));
    f.push_back(size_field("warmup", &RunConfig::warmup));
    f.push_back(real_field("clip", &RunConfig::clip));
    f.push_back(size_field("batch", &RunConfig::batch));
    f.push_back(size_field("eval_batch", &RunConfig::eval_batch));
    f.push_back(real_field("threshold", &RunConfig::threshold));
    f.push_back({"extension", [](RunConfig& c, std::string_view v) { c.extension = std::string(v); },
                 [](const RunConfig& c) { return c.extension; }});
    f.push_back(path_field("corpus_dir", &RunConfig::corpus_dir));
    f.push_back(path_field("out_dir", &RunConfig::out_dir));
    f.push_back(path_field("manifest", &RunConfig::manifest));
    f.push_back(path_field("vocab_file", &RunConfig::vocab_file));
    f.push_back(path_field("checkpoint_dir", &RunConfig::checkpoint_dir));
    f.push_back(path_field("metrics_file", &RunConfig::metrics_file));
    return f;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown setting '" + std::string(key) + "'");
}

std::string_view strip(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& f = field(key);
  try {
    f.set(*this, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("setting '" + std::string(key) + "': " + e.what());
  }
}

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::apply_text(std::string_view text, const std::string& origin) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(start, end - start);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = strip(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      try {
        set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  apply_text(text, path.string());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

TrainSchedule RunConfig::schedule() const {
  TrainSchedule s;
  s.lr_floor = lr_floor;
  s.lr_peak = lr_peak;
  s.warmup_iters = warmup;
  s.epoch_iters = iters_per_epoch;
  s.total_iters = epochs * iters_per_epoch;
  return s;
}

void RunConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  schedule().validate();
  if (batch == 0 || eval_batch == 0) throw ConfigError("batch sizes must be positive");
  if (clip < 0.0) throw ConfigError("clip must be non-negative (0 disables clipping)");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  if (vocab == VocabKind::subword && vocab_size <= 2) throw ConfigError("vocab_size must exceed the special tokens");
  auto m = model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, 1);
  m.validate();
}

std::filesystem::path RunConfig::manifest_path() const {
  return manifest.empty() ? out_dir / "manifest.tsv" : manifest;
}

std::filesystem::path RunConfig::vocab_path() const { return vocab_file.empty() ? out_dir / "vocab.txt" : vocab_file; }

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint_dir.empty() ? out_dir / "checkpoints" : checkpoint_dir;
}

std::filesystem::path RunConfig::metrics_path() const {
  return metrics_file.empty() ? out_dir / "metrics.csv" : metrics_file;
}

}  // namespace codexl
