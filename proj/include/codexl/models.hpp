#pragma once

// Next-token language models: Transformer-XL with segment-level recurrence
// and the LSTM / GRU baselines. Activations are [batch, time, hidden].

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codexl/tensor.hpp"

namespace codexl {

enum class Arch { txl, lstm, gru };
enum class PositionalEncoding { relative, absolute };

std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view s);
std::string_view to_string(PositionalEncoding p);
PositionalEncoding parse_positional(std::string_view s);

struct ModelConfig {
  Arch arch = Arch::txl;
  std::size_t depth = 4;
  std::size_t hidden = 512;
  std::size_t heads = 8;
  std::size_t ffd_inner = 2048;
  std::size_t vocab_size = 1000;
  std::size_t seq_len = 256;
  std::size_t mem_len = 256;
  double dropout = 0.1;
  PositionalEncoding positional = PositionalEncoding::relative;

  // Throws ConfigError when extents are zero, heads do not divide hidden, or
  // dropout is outside [0, 1).
  void validate() const;
  std::string describe() const;  // e.g. "txl-4"
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Tensor<T> w_q, w_k, w_v, w_o;      // hidden x hidden, no bias
  Tensor<T> w_1, b_1, w_2, b_2;      // FFD: hidden -> ffd_inner -> hidden
  Tensor<T> norm1_gain, norm1_bias;  // after attention
  Tensor<T> norm2_gain, norm2_bias;  // after FFD
  // Relative attention: projection of the sinusoidal distance table plus the
  // global content (u) and position (v) query biases.
  Tensor<T> w_r, u_bias, v_bias;
};

template <typename T>
struct EmbeddingParams {
  Tensor<T> input;        // vocab x hidden
  Tensor<T> output;       // hidden x vocab
  Tensor<T> output_bias;  // vocab
};

template <typename T>
struct LstmParams {
  Tensor<T> w_x;  // in x 4H, gate order (input, forget, candidate, output)
  Tensor<T> b;    // 4H
  Tensor<T> w_h;  // H x 4H
};

template <typename T>
struct GruParams {
  Tensor<T> w_x;   // in x 3H, order (update z, reset r, candidate)
  Tensor<T> b;     // 3H
  Tensor<T> w_hzr; // H x 2H
  Tensor<T> w_hn;  // H x H, applied to r⊙h
};

// Recurrent state carried between segments. Every tensor held here is
// detached; an undefined Transformer-XL entry means "no memory yet".
template <typename T>
struct MemoryState {
  std::vector<Tensor<T>> layers;  // Transformer-XL: [batch, m, hidden]
  std::vector<Tensor<T>> hidden;  // RNN: [batch, hidden]
  std::vector<Tensor<T>> cell;    // LSTM only

  std::size_t length() const;  // memory positions (Transformer-XL)
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // [batch * seq, vocab]; row b*seq + t predicts token t+1
  MemoryState<T> memory;
  // Transformer-XL: the (attached) input each layer consumed this segment.
  std::vector<Tensor<T>> layer_inputs;
};

template <typename T>
class LanguageModel {
 public:
  explicit LanguageModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }
  virtual ~LanguageModel() = default;
  LanguageModel(const LanguageModel&) = delete;
  LanguageModel& operator=(const LanguageModel&) = delete;

  const ModelConfig& config() const { return config_; }
  const ParameterList<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return count_parameters(params_); }

  // ids is batch x seq, row-major. Throws ShapeError for ids outside the vocabulary.
  virtual ForwardResult<T> forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                                   const MemoryState<T>& state, bool training, Rng& rng) const = 0;
  virtual MemoryState<T> initial_state(std::size_t batch) const = 0;

 protected:
  Tensor<T> add_parameter(const std::string& name, Shape shape, Rng& rng, double init_std);
  Tensor<T> add_constant_parameter(const std::string& name, Shape shape, T value);
  void check_ids(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq) const;

  ModelConfig config_;
  ParameterList<T> params_;
};

inline constexpr double kInitStd = 0.02;

// Standard sinusoid table [positions, width]: row p holds sin/cos of p at
// geometrically spaced frequencies.
template <typename T>
Tensor<T> sinusoid_table(std::size_t positions, std::size_t width);

// Q = W_Q·x; K,V = W_{K,V}·[SG(mem) ∥ x]; multi-head scaled dot-product with
// a causal mask that leaves every memory position visible. `mem` may be
// undefined (no memory).
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Tensor<T>& mem, const LayerParams<T>& p, std::size_t heads,
                         PositionalEncoding positional);

// W_2·gelu(W_1·x + b_1) + b_2
template <typename T>
Tensor<T> ffd(const Tensor<T>& x, const LayerParams<T>& p);

// att = self_attention(x); x' = layernorm(att) + x; out = layernorm(ffd(x')) + x'.
// Dropout follows the attention and FFD outputs while training.
template <typename T>
Tensor<T> txl_layer(const Tensor<T>& x, const Tensor<T>& mem, const LayerParams<T>& p, const ModelConfig& config,
                    bool training, Rng& rng);

template <typename T>
class TransformerXL final : public LanguageModel<T> {
 public:
  TransformerXL(ModelConfig config, std::uint64_t seed);

  ForwardResult<T> forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                           const MemoryState<T>& state, bool training, Rng& rng) const override;
  MemoryState<T> initial_state(std::size_t batch) const override;

  // Plain Transformer over one segment: no memory input and no memory output.
  Tensor<T> forward_vanilla(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq, bool training,
                            Rng& rng) const;

  const EmbeddingParams<T>& embeddings() const { return embed_; }
  const std::vector<LayerParams<T>>& layers() const { return layers_; }

 private:
  Tensor<T> embed(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq) const;
  Tensor<T> project(const Tensor<T>& x, std::size_t rows) const;

  EmbeddingParams<T> embed_;
  std::vector<LayerParams<T>> layers_;
};

// Returns (h', c').
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c,
                                          const LstmParams<T>& p);
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p);

template <typename T>
class RecurrentLM final : public LanguageModel<T> {
 public:
  RecurrentLM(ModelConfig config, std::uint64_t seed);

  ForwardResult<T> forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                           const MemoryState<T>& state, bool training, Rng& rng) const override;
  MemoryState<T> initial_state(std::size_t batch) const override;

  const EmbeddingParams<T>& embeddings() const { return embed_; }
  const std::vector<LstmParams<T>>& lstm_layers() const { return lstm_; }
  const std::vector<GruParams<T>>& gru_layers() const { return gru_; }

 private:
  EmbeddingParams<T> embed_;
  std::vector<LstmParams<T>> lstm_;
  std::vector<GruParams<T>> gru_;
};

template <typename T>
std::unique_ptr<LanguageModel<T>> make_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace codexl
