#include <cmath>

#include "codexl/errors.hpp"
#include "codexl/models.hpp"
#include "codexl/ops.hpp"

namespace codexl {

namespace {

// [B, N, H] -> [B*heads, N, H/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const auto B = x.dim(0);
  const auto N = x.dim(1);
  const auto dk = x.dim(2) / heads;
  auto t = ops::permute(ops::reshape(x, {B, N, heads, dk}), {0, 2, 1, 3});
  return ops::reshape(t, {B * heads, N, dk});
}

// [B*heads, N, dk] -> [B, N, heads*dk]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t batch) {
  const auto heads = x.dim(0) / batch;
  const auto N = x.dim(1);
  const auto dk = x.dim(2);
  auto t = ops::permute(ops::reshape(x, {batch, heads, N, dk}), {0, 2, 1, 3});
  return ops::reshape(t, {batch, N, heads * dk});
}

// Memory for the next segment: the last mem_len positions of [old ∥ layer input], detached.
template <typename T>
Tensor<T> next_memory(const Tensor<T>& old, const Tensor<T>& input, std::size_t mem_len) {
  if (mem_len == 0) return {};
  NoGradGuard no_grad;
  Tensor<T> joined = old.defined() ? ops::concat<T>({old, input}, 1) : input;
  const auto len = joined.dim(1);
  if (len > mem_len) joined = ops::slice(joined, 1, len - mem_len, mem_len);
  return joined.detach();
}

}  // namespace

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Tensor<T>& mem, const LayerParams<T>& p, std::size_t heads,
                         PositionalEncoding positional) {
  if (x.rank() != 3) throw ShapeError("self_attention expects [batch, seq, hidden], got " + shape_str(x.shape()));
  const auto B = x.dim(0);
  const auto H = x.dim(2);
  if (heads == 0 || H % heads != 0) throw ShapeError("hidden size not divisible by head count");
  Tensor<T> context = x;
  if (mem.defined()) {
    if (mem.rank() != 3 || mem.dim(0) != B || mem.dim(2) != H) {
      throw ShapeError("memory " + shape_str(mem.shape()) + " incompatible with segment " + shape_str(x.shape()));
    }
    // Stop-gradient: memory contributes values, never gradients.
    context = ops::concat<T>({mem.detach(), x}, 1);
  }
  const auto K = context.dim(1);
  const auto dk = H / heads;

  auto q = ops::linear(x, p.w_q);
  auto kh = split_heads(ops::linear(context, p.w_k), heads);
  auto vh = split_heads(ops::linear(context, p.w_v), heads);

  const auto factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor<T> weights;
  if (positional == PositionalEncoding::relative) {
    // Content term (q + u)·k_j and position term (q + v)·(W_R r_{i-j}).
    auto ac = ops::bmm(split_heads(ops::add_row(q, p.u_bias), heads), kh, true);
    auto r = ops::linear(sinusoid_table<T>(K, H), p.w_r);
    auto rh = ops::permute(ops::reshape(r, {K, heads, dk}), {1, 0, 2});
    // One copy of the small [heads, K, dk] table per batch row keeps the
    // product in [B*heads, L, K] layout.
    auto rh_tiled = ops::concat(std::vector<Tensor<T>>(B, rh), 0);
    auto by_distance = ops::bmm(split_heads(ops::add_row(q, p.v_bias), heads), rh_tiled, true);
    weights = ops::relative_softmax(ac, by_distance, factor);
  } else {
    weights = ops::masked_softmax(ops::bmm(split_heads(q, heads), kh, true), factor);
  }
  auto out = merge_heads(ops::bmm(weights, vh), B);
  return ops::linear(out, p.w_o);
}

template <typename T>
Tensor<T> ffd(const Tensor<T>& x, const LayerParams<T>& p) {
  return ops::linear(ops::gelu(ops::linear(x, p.w_1, p.b_1)), p.w_2, p.b_2);
}

template <typename T>
Tensor<T> txl_layer(const Tensor<T>& x, const Tensor<T>& mem, const LayerParams<T>& p, const ModelConfig& config,
                    bool training, Rng& rng) {
  auto att = ops::dropout(self_attention(x, mem, p, config.heads, config.positional), config.dropout, rng, training);
  auto x1 = ops::add(ops::layer_norm(att, p.norm1_gain, p.norm1_bias), x);
  auto f = ops::dropout(ffd(x1, p), config.dropout, rng, training);
  return ops::add(ops::layer_norm(f, p.norm2_gain, p.norm2_bias), x1);
}

template <typename T>
TransformerXL<T>::TransformerXL(ModelConfig config, std::uint64_t seed) : LanguageModel<T>(std::move(config)) {
  if (this->config_.arch != Arch::txl) throw ConfigError("TransformerXL needs arch txl");
  const auto& c = this->config_;
  Rng rng(seed);
  const auto H = c.hidden;
  embed_.input = this->add_parameter("embed.weight", {c.vocab_size, H}, rng, kInitStd);
  for (std::size_t l = 0; l < c.depth; ++l) {
    const auto pre = "layers." + std::to_string(l) + ".";
    LayerParams<T> p;
    p.w_q = this->add_parameter(pre + "attn.w_q", {H, H}, rng, kInitStd);
    p.w_k = this->add_parameter(pre + "attn.w_k", {H, H}, rng, kInitStd);
    p.w_v = this->add_parameter(pre + "attn.w_v", {H, H}, rng, kInitStd);
    p.w_o = this->add_parameter(pre + "attn.w_o", {H, H}, rng, kInitStd);
    if (c.positional == PositionalEncoding::relative) {
      p.w_r = this->add_parameter(pre + "attn.w_r", {H, H}, rng, kInitStd);
      p.u_bias = this->add_constant_parameter(pre + "attn.u_bias", {H}, T(0));
      p.v_bias = this->add_constant_parameter(pre + "attn.v_bias", {H}, T(0));
    }
    p.norm1_gain = this->add_constant_parameter(pre + "norm1.gain", {H}, T(1));
    p.norm1_bias = this->add_constant_parameter(pre + "norm1.bias", {H}, T(0));
    p.w_1 = this->add_parameter(pre + "ffd.w_1", {H, c.ffd_inner}, rng, kInitStd);
    p.b_1 = this->add_constant_parameter(pre + "ffd.b_1", {c.ffd_inner}, T(0));
    p.w_2 = this->add_parameter(pre + "ffd.w_2", {c.ffd_inner, H}, rng, kInitStd);
    p.b_2 = this->add_constant_parameter(pre + "ffd.b_2", {H}, T(0));
    p.norm2_gain = this->add_constant_parameter(pre + "norm2.gain", {H}, T(1));
    p.norm2_bias = this->add_constant_parameter(pre + "norm2.bias", {H}, T(0));
    layers_.push_back(std::move(p));
  }
  embed_.output = this->add_parameter("head.weight", {H, c.vocab_size}, rng, kInitStd);
  embed_.output_bias = this->add_constant_parameter("head.bias", {c.vocab_size}, T(0));
}

template <typename T>
Tensor<T> TransformerXL<T>::embed(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq) const {
  this->check_ids(ids, batch, seq);
  const auto H = this->config_.hidden;
  auto x = ops::reshape(ops::embedding(ids, embed_.input), {batch, seq, H});
  if (this->config_.positional == PositionalEncoding::absolute) {
    const auto table = sinusoid_table<T>(seq, H);
    std::vector<T> tiled;
    tiled.reserve(batch * seq * H);
    for (std::size_t b = 0; b < batch; ++b) tiled.insert(tiled.end(), table.data().begin(), table.data().end());
    x = ops::add(x, Tensor<T>({batch, seq, H}, std::move(tiled)));
  }
  return x;
}

template <typename T>
Tensor<T> TransformerXL<T>::project(const Tensor<T>& x, std::size_t rows) const {
  return ops::reshape(ops::linear(x, embed_.output, embed_.output_bias), {rows, this->config_.vocab_size});
}

template <typename T>
ForwardResult<T> TransformerXL<T>::forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                                           const MemoryState<T>& state, bool training, Rng& rng) const {
  const auto& c = this->config_;
  if (!state.layers.empty() && state.layers.size() != c.depth) {
    throw ShapeError("memory has " + std::to_string(state.layers.size()) + " layers, model has " +
                     std::to_string(c.depth));
  }
  ForwardResult<T> result;
  result.memory.layers.resize(c.depth);
  auto x = embed(ids, batch, seq);
  for (std::size_t l = 0; l < c.depth; ++l) {
    const Tensor<T> mem = state.layers.empty() ? Tensor<T>{} : state.layers[l];
    result.layer_inputs.push_back(x);
    result.memory.layers[l] = next_memory(mem, x, c.mem_len);
    x = txl_layer(x, mem, layers_[l], c, training, rng);
  }
  result.logits = project(x, batch * seq);
  return result;
}

template <typename T>
Tensor<T> TransformerXL<T>::forward_vanilla(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                                            bool training, Rng& rng) const {
  auto x = embed(ids, batch, seq);
  for (const auto& layer : layers_) x = txl_layer(x, Tensor<T>{}, layer, this->config_, training, rng);
  return project(x, batch * seq);
}

template <typename T>
MemoryState<T> TransformerXL<T>::initial_state(std::size_t) const {
  MemoryState<T> s;
  s.layers.resize(this->config_.depth);
  return s;
}

#define CODEXL_INSTANTIATE(T)                                                                                  \
  template Tensor<T> self_attention<T>(const Tensor<T>&, const Tensor<T>&, const LayerParams<T>&, std::size_t, \
                                       PositionalEncoding);                                                   \
  template Tensor<T> ffd<T>(const Tensor<T>&, const LayerParams<T>&);                                          \
  template Tensor<T> txl_layer<T>(const Tensor<T>&, const Tensor<T>&, const LayerParams<T>&,                   \
                                  const ModelConfig&, bool, Rng&);                                             \
  template class TransformerXL<T>;

CODEXL_INSTANTIATE(float)
CODEXL_INSTANTIATE(double)
#undef CODEXL_INSTANTIATE

}  // namespace codexl
