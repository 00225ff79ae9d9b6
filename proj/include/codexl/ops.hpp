#pragma once

// Differentiable primitives. Every function records a backward closure when
// an input requires grad and recording is enabled (see NoGradGuard).

#include <cstdint>
#include <span>
#include <vector>

#include "codexl/tensor.hpp"

namespace codexl::ops {

inline constexpr double kLayerNormEps = 1e-5;

// 2-D product op(a)·op(b).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                 bool transpose_b = false);

// Batched product over the leading axis: [n,m,k]·[n,k,p] -> [n,m,p]
// ([n,p,k] for b when transpose_b).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// x[..., in]·w[in, out] + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
// a[..., C] + row[C] broadcast over the leading axes.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);

// x·Φ(x) with the exact erf-based normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// Max-subtracted softmax along `axis`. Entries equal to -inf are masked and
// come out as exactly 0; a slice with every entry masked is an error.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1);

// scores[..., L, K]: key j is visible to query i iff j <= (K - L) + i, i.e.
// every one of the K - L memory positions plus the causal prefix. Hidden
// entries become -inf.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores);

// softmax(causal_mask(factor * scores)) in one pass; hidden keys get exactly 0.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, T factor);

// masked_softmax(content + rel_shift(by_distance), factor) without the
// intermediate tensors. Both inputs are [..., L, K].
template <typename T>
Tensor<T> relative_softmax(const Tensor<T>& content, const Tensor<T>& by_distance, T factor);

// Realigns relative-distance scores onto key positions:
// out[..., i, j] = in[..., i, (K - L) + i - j] when that distance is >= 0, else 0.
template <typename T>
Tensor<T> rel_shift(const Tensor<T>& scores);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = kLayerNormEps);

// Inverted dropout: survivors are scaled by 1/(1 - rate). Identity when not
// training or when rate == 0. Throws ConfigError unless 0 <= rate < 1.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training);

// Rows of table[V, H] selected by ids -> [ids.size(), H].
template <typename T>
Tensor<T> embedding(std::span<const std::int32_t> ids, const Tensor<T>& table);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Mean over rows of -log softmax(logits)[target], fused in log space.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

// Same loss from probability rows. Probabilities below the precision floor
// are clamped there; `clamped` (if given) receives how many were.
template <typename T>
Tensor<T> cross_entropy_from_probabilities(const Tensor<T>& probs,
                                           std::span<const std::int32_t> targets,
                                           std::size_t* clamped = nullptr);

// Pointwise LSTM pieces. pre[B, 4H] holds gate pre-activations ordered
// (input, forget, candidate, output).
//   c' = σ(f)⊙c + σ(i)⊙tanh(g)
template <typename T>
Tensor<T> lstm_cell_state(const Tensor<T>& pre, const Tensor<T>& c);
//   h' = σ(o)⊙tanh(c')
template <typename T>
Tensor<T> lstm_cell_output(const Tensor<T>& pre, const Tensor<T>& c_next);

struct ClipResult {
  double norm = 0.0;  // before clipping
  bool clipped = false;
};

// Scales every gradient by max_norm / total when the global L2 norm exceeds max_norm.
template <typename T>
ClipResult clip_global_norm(const ParameterList<T>& params, double max_norm);

}  // namespace codexl::ops
