#include <cmath>
#include <sstream>

#include "codexl/errors.hpp"
#include "codexl/models.hpp"
#include "codexl/random.hpp"

namespace codexl {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::txl:
      return "txl";
    case Arch::lstm:
      return "lstm";
    case Arch::gru:
      return "gru";
  }
  return "?";
}

Arch parse_arch(std::string_view s) {
  if (s == "txl") return Arch::txl;
  if (s == "lstm") return Arch::lstm;
  if (s == "gru") return Arch::gru;
  throw ConfigError("unknown architecture '" + std::string(s) + "' (expected txl, lstm or gru)");
}

std::string_view to_string(PositionalEncoding p) { return p == PositionalEncoding::relative ? "relative" : "absolute"; }

PositionalEncoding parse_positional(std::string_view s) {
  if (s == "relative") return PositionalEncoding::relative;
  if (s == "absolute") return PositionalEncoding::absolute;
  throw ConfigError("unknown positional encoding '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (depth == 0 || hidden == 0 || vocab_size == 0 || seq_len == 0) {
    throw ConfigError("depth, hidden, vocab_size and seq_len must be positive");
  }
  if (arch == Arch::txl) {
    if (heads == 0 || hidden % heads != 0) {
      throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    }
    if (ffd_inner == 0) throw ConfigError("ffd_inner must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << to_string(arch) << '-' << depth;
  return os.str();
}

template <typename T>
std::size_t MemoryState<T>::length() const {
  if (layers.empty() || !layers.front().defined()) return 0;
  return layers.front().dim(1);
}

template <typename T>
Tensor<T> LanguageModel<T>::add_parameter(const std::string& name, Shape shape, Rng& rng, double init_std) {
  const auto n = shape_numel(shape);
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(init_std * standard_normal(rng));
  Tensor<T> t(std::move(shape), std::move(data), true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> LanguageModel<T>::add_constant_parameter(const std::string& name, Shape shape, T value) {
  auto t = Tensor<T>::full(std::move(shape), value, true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
void LanguageModel<T>::check_ids(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq) const {
  if (ids.size() != batch * seq) {
    throw ShapeError("segment has " + std::to_string(ids.size()) + " ids, expected " + std::to_string(batch) + " x " +
                     std::to_string(seq));
  }
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
Tensor<T> sinusoid_table(std::size_t positions, std::size_t width) {
  std::vector<T> data(positions * width);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      data[p * width + i] = static_cast<T>(std::sin(static_cast<double>(p) * freq));
      if (i + 1 < width) data[p * width + i + 1] = static_cast<T>(std::cos(static_cast<double>(p) * freq));
    }
  }
  return Tensor<T>({positions, width}, std::move(data));
}

template <typename T>
std::unique_ptr<LanguageModel<T>> make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.arch == Arch::txl) return std::make_unique<TransformerXL<T>>(config, seed);
  return std::make_unique<RecurrentLM<T>>(config, seed);
}

template struct MemoryState<float>;
template struct MemoryState<double>;
template class LanguageModel<float>;
template class LanguageModel<double>;
template Tensor<float> sinusoid_table<float>(std::size_t, std::size_t);
template Tensor<double> sinusoid_table<double>(std::size_t, std::size_t);
template std::unique_ptr<LanguageModel<float>> make_model<float>(const ModelConfig&, std::uint64_t);
template std::unique_ptr<LanguageModel<double>> make_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace codexl
