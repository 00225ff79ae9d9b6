#include "codexl/errors.hpp"
#include "codexl/models.hpp"
#include "codexl/ops.hpp"

namespace codexl {

namespace {

// One LSTM step from precomputed input projections xp[B, 4H].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(const Tensor<T>& xp, const Tensor<T>& h, const Tensor<T>& c,
                                          const Tensor<T>& w_h) {
  auto pre = ops::add(xp, ops::matmul(h, w_h));
  auto c_next = ops::lstm_cell_state(pre, c);
  auto h_next = ops::lstm_cell_output(pre, c_next);
  return {h_next, c_next};
}

// One GRU step from precomputed input projections xp[B, 3H].
template <typename T>
Tensor<T> gru_step(const Tensor<T>& xp, const Tensor<T>& h, const GruParams<T>& p) {
  const auto H = h.dim(1);
  auto zr = ops::sigmoid(ops::add(ops::slice(xp, 1, 0, 2 * H), ops::matmul(h, p.w_hzr)));
  auto z = ops::slice(zr, 1, 0, H);
  auto r = ops::slice(zr, 1, H, H);
  auto candidate = ops::tanh(ops::add(ops::slice(xp, 1, 2 * H, H), ops::matmul(ops::mul(r, h), p.w_hn)));
  // (1 - z)⊙h + z⊙h̃
  return ops::add(h, ops::mul(z, ops::sub(candidate, h)));
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& x, const Tensor<T>& h, const Tensor<T>& c,
                                          const LstmParams<T>& p) {
  return lstm_step(ops::linear(x, p.w_x, p.b), h, c, p.w_h);
}

template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p) {
  return gru_step(ops::linear(x, p.w_x, p.b), h, p);
}

template <typename T>
RecurrentLM<T>::RecurrentLM(ModelConfig config, std::uint64_t seed) : LanguageModel<T>(std::move(config)) {
  const auto& c = this->config_;
  if (c.arch == Arch::txl) throw ConfigError("RecurrentLM needs arch lstm or gru");
  Rng rng(seed);
  const auto H = c.hidden;
  embed_.input = this->add_parameter("embed.weight", {c.vocab_size, H}, rng, kInitStd);
  for (std::size_t l = 0; l < c.depth; ++l) {
    const auto pre = "layers." + std::to_string(l) + ".";
    if (c.arch == Arch::lstm) {
      LstmParams<T> p;
      p.w_x = this->add_parameter(pre + "lstm.w_x", {H, 4 * H}, rng, kInitStd);
      p.b = this->add_constant_parameter(pre + "lstm.b", {4 * H}, T(0));
      p.w_h = this->add_parameter(pre + "lstm.w_h", {H, 4 * H}, rng, kInitStd);
      lstm_.push_back(std::move(p));
    } else {
      GruParams<T> p;
      p.w_x = this->add_parameter(pre + "gru.w_x", {H, 3 * H}, rng, kInitStd);
      p.b = this->add_constant_parameter(pre + "gru.b", {3 * H}, T(0));
      p.w_hzr = this->add_parameter(pre + "gru.w_hzr", {H, 2 * H}, rng, kInitStd);
      p.w_hn = this->add_parameter(pre + "gru.w_hn", {H, H}, rng, kInitStd);
      gru_.push_back(std::move(p));
    }
  }
  embed_.output = this->add_parameter("head.weight", {H, c.vocab_size}, rng, kInitStd);
  embed_.output_bias = this->add_constant_parameter("head.bias", {c.vocab_size}, T(0));
}

template <typename T>
MemoryState<T> RecurrentLM<T>::initial_state(std::size_t batch) const {
  const auto& c = this->config_;
  MemoryState<T> s;
  for (std::size_t l = 0; l < c.depth; ++l) {
    s.hidden.push_back(Tensor<T>::zeros({batch, c.hidden}));
    if (c.arch == Arch::lstm) s.cell.push_back(Tensor<T>::zeros({batch, c.hidden}));
  }
  return s;
}

template <typename T>
ForwardResult<T> RecurrentLM<T>::forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t seq,
                                         const MemoryState<T>& state, bool training, Rng& rng) const {
  const auto& c = this->config_;
  this->check_ids(ids, batch, seq);
  const auto H = c.hidden;
  const bool lstm = c.arch == Arch::lstm;
  const MemoryState<T> start = state.hidden.empty() ? initial_state(batch) : state;
  if (start.hidden.size() != c.depth || (lstm && start.cell.size() != c.depth)) {
    throw ShapeError("recurrent state does not match model depth");
  }

  ForwardResult<T> result;
  auto x = ops::reshape(ops::embedding(ids, embed_.input), {batch, seq, H});
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::size_t gates = lstm ? 4 : 3;
    auto xp = lstm ? ops::linear(x, lstm_[l].w_x, lstm_[l].b) : ops::linear(x, gru_[l].w_x, gru_[l].b);
    Tensor<T> h = start.hidden[l];
    Tensor<T> cell = lstm ? start.cell[l] : Tensor<T>{};
    if (h.dim(0) != batch) throw ShapeError("recurrent state batch does not match segment batch");
    std::vector<Tensor<T>> outputs;
    outputs.reserve(seq);
    for (std::size_t t = 0; t < seq; ++t) {
      auto xp_t = ops::reshape(ops::slice(xp, 1, t, 1), {batch, gates * H});
      if (lstm) {
        std::tie(h, cell) = lstm_step(xp_t, h, cell, lstm_[l].w_h);
      } else {
        h = gru_step(xp_t, h, gru_[l]);
      }
      outputs.push_back(h);
    }
    result.memory.hidden.push_back(h.detach());
    if (lstm) result.memory.cell.push_back(cell.detach());
    x = ops::dropout(ops::reshape(ops::concat(outputs, 1), {batch, seq, H}), c.dropout, rng, training);
  }
  result.logits = ops::reshape(ops::linear(x, embed_.output, embed_.output_bias), {batch * seq, c.vocab_size});
  return result;
}

#define CODEXL_INSTANTIATE(T)                                                                             \
  template std::pair<Tensor<T>, Tensor<T>> lstm_cell<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                        const LstmParams<T>&);                            \
  template Tensor<T> gru_cell<T>(const Tensor<T>&, const Tensor<T>&, const GruParams<T>&);                \
  template class RecurrentLM<T>;

CODEXL_INSTANTIATE(float)
CODEXL_INSTANTIATE(double)
#undef CODEXL_INSTANTIATE

}  // namespace codexl
