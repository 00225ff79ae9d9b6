#include "codexl/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace codexl::ops {

namespace {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      BackwardFn<T> fn) {
  Tensor<T> out(std::move(shape), std::move(value));
  if (!grad_recording_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return out;
  Node<T>* node = out.node();
  node->requires_grad = true;
  for (const auto* in : inputs) {
    if (in->defined() && in->requires_grad()) node->parents.push_back(in->node_ptr());
  }
  node->backward_fn = std::move(fn);
  return out;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C (m x n) = op(A)·op(B), or C += op(A)·op(B) when accumulating.
template <typename T>
void gemm(bool ta, bool tb, Eigen::Index m, Eigen::Index n, Eigen::Index k, const T* A, const T* B, T* C,
          bool accumulate) {
  Eigen::Map<const RowMat<T>> a(A, ta ? k : m, ta ? m : k);
  Eigen::Map<const RowMat<T>> b(B, tb ? n : k, tb ? k : n);
  Eigen::Map<RowMat<T>> c(C, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      c.noalias() += lhs * rhs;
    } else {
      c.noalias() = lhs * rhs;
    }
  };
  if (!ta && !tb) {
    run(a, b);
  } else if (!ta && tb) {
    run(a, b.transpose());
  } else if (ta && !tb) {
    run(a.transpose(), b);
  } else {
    run(a.transpose(), b.transpose());
  }
}

// The message expression is only evaluated on failure.
#define CODEXL_REQUIRE(ok, message)             \
  do {                                          \
    if (!(ok)) throw ShapeError(message);       \
  } while (false)

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  CODEXL_REQUIRE(a >= 0 && a < r, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  CODEXL_REQUIRE(a.shape() == b.shape(),
          std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
}

template <typename T>
T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Elementwise unary op given f(x) and f'(x) expressed through x and y = f(x).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D df) {
  const auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, df](Node<T>& self) {
    auto gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
  });
}

// Copies an axis permutation. `strides_in` are the input strides reordered
// into output-axis order.
template <typename T>
void permute_copy(const T* in, T* out, const Shape& out_shape, const std::vector<std::size_t>& strides_in,
                  bool accumulate) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = shape_numel(out_shape);
  if (total == 0) return;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t inner_stride = strides_in[rank - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    if (inner_stride == 1) {
      if (accumulate) {
        for (std::size_t t = 0; t < inner; ++t) out[o + t] += in[offset + t];
      } else {
        std::copy(in + offset, in + offset + inner, out + o);
      }
    } else {
      for (std::size_t t = 0; t < inner; ++t) {
        if (accumulate) {
          out[o + t] += in[offset + t * inner_stride];
        } else {
          out[o + t] = in[offset + t * inner_stride];
        }
      }
    }
    // Advance the odometer over all but the innermost axis.
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      offset += strides_in[ax];
      if (idx[ax] < out_shape[ax]) break;
      offset -= strides_in[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  CODEXL_REQUIRE(a.rank() == 2 && b.rank() == 2, "matmul needs 2-D operands, got " + shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
  const auto m = transpose_a ? a.dim(1) : a.dim(0);
  const auto k = transpose_a ? a.dim(0) : a.dim(1);
  const auto kb = transpose_b ? b.dim(1) : b.dim(0);
  const auto n = transpose_b ? b.dim(0) : b.dim(1);
  CODEXL_REQUIRE(k == kb, "matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  gemm<T>(transpose_a, transpose_b, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>({m, n}, std::move(out), {&a, &b},
                        [an, bn, m, n, k, transpose_a, transpose_b](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (an->requires_grad) {
                            // dA_eff = G·op(B)ᵀ ; stored transposed when transpose_a.
                            if (!transpose_a) {
                              gemm<T>(false, !transpose_b, m, k, n, g, bn->value.data(),
                                      an->grad_buffer().data(), true);
                            } else {
                              gemm<T>(transpose_b, true, k, m, n, bn->value.data(), g,
                                      an->grad_buffer().data(), true);
                            }
                          }
                          if (bn->requires_grad) {
                            // dB_eff = op(A)ᵀ·G ; stored transposed when transpose_b.
                            if (!transpose_b) {
                              gemm<T>(!transpose_a, false, k, n, m, an->value.data(), g,
                                      bn->grad_buffer().data(), true);
                            } else {
                              gemm<T>(true, transpose_a, n, k, m, g, an->value.data(),
                                      bn->grad_buffer().data(), true);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  CODEXL_REQUIRE(a.rank() == 3 && b.rank() == 3,
          "bmm needs 3-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto batch = a.dim(0);
  const auto m = a.dim(1);
  const auto k = a.dim(2);
  const auto kb = transpose_b ? b.dim(2) : b.dim(1);
  const auto n = transpose_b ? b.dim(1) : b.dim(2);
  CODEXL_REQUIRE(b.dim(0) == batch && k == kb,
          "bmm extents disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(batch * m * n);
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm<T>(false, transpose_b, m, n, k, A + i * m * k, B + i * k * n, out.data() + i * m * n, false);
  }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>({batch, m, n}, std::move(out), {&a, &b},
                        [an, bn, batch, m, n, k, transpose_b](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (an->requires_grad) {
                            T* ga = an->grad_buffer().data();
                            for (std::size_t i = 0; i < batch; ++i) {
                              gemm<T>(false, !transpose_b, m, k, n, g + i * m * n,
                                      bn->value.data() + i * k * n, ga + i * m * k, true);
                            }
                          }
                          if (bn->requires_grad) {
                            T* gb = bn->grad_buffer().data();
                            for (std::size_t i = 0; i < batch; ++i) {
                              if (!transpose_b) {
                                gemm<T>(true, false, k, n, m, an->value.data() + i * m * k, g + i * m * n,
                                        gb + i * k * n, true);
                              } else {
                                gemm<T>(true, false, n, k, m, g + i * m * n, an->value.data() + i * m * k,
                                        gb + i * k * n, true);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  CODEXL_REQUIRE(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.dim(0),
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  const auto in = w.dim(0);
  const auto outf = w.dim(1);
  const auto rows = x.size() / in;
  if (bias.defined()) {
    CODEXL_REQUIRE(bias.size() == outf, "linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(w.shape()));
  }
  std::vector<T> out(rows * outf);
  gemm<T>(false, false, rows, outf, in, x.data().data(), w.data().data(), out.data(), false);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.data() + r * outf;
      for (std::size_t c = 0; c < outf; ++c) row[c] += b[c];
    }
  }
  Shape shape = x.shape();
  shape.back() = outf;
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : nullptr;
  return make_result<T>(std::move(shape), std::move(out), {&x, &w, &bias},
                        [xn, wn, bn, rows, in, outf](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (xn->requires_grad) {
                            gemm<T>(false, true, rows, in, outf, g, wn->value.data(), xn->grad_buffer().data(),
                                    true);
                          }
                          if (wn->requires_grad) {
                            gemm<T>(true, false, in, outf, rows, xn->value.data(), g, wn->grad_buffer().data(),
                                    true);
                          }
                          if (bn && bn->requires_grad) {
                            auto gb = bn->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < outf; ++c) gb[c] += g[r * outf + c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      auto g = n->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  auto an = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a}, [an, factor](Node<T>& self) {
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  CODEXL_REQUIRE(a.rank() >= 1 && row.size() == a.shape().back(),
          "add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  const auto cols = row.size();
  const auto rows = a.size() / cols;
  const auto x = a.data();
  const auto r = row.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] = x[i * cols + c] + r[c];
  }
  auto an = a.node_ptr();
  auto rn = row.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {&a, &row}, [an, rn, rows, cols](Node<T>& self) {
    if (an->requires_grad) {
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (rn->requires_grad) {
      auto g = rn->grad_buffer();
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[i * cols + c];
      }
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(kInvSqrt2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(kInvSqrt2)));
        const T pdf = T(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto ax = normalize_axis(axis, x.rank());
  const auto outer = product(x.shape(), 0, ax);
  const auto n = x.dim(ax);
  const auto inner = product(x.shape(), ax + 1, x.rank());
  const auto in = x.data();
  std::vector<T> out(in.size());
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * n * inner + r;
      T mx = kNegInf;
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      if (mx == kNegInf) throw ShapeError("softmax: every position of a slice is masked");
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T v = in[base + i * inner];
        const T e = v == kNegInf ? T(0) : std::exp(v - mx);
        out[base + i * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] *= inv;
    }
  }
  auto xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, outer, n, inner](Node<T>& self) {
    auto gx = xn->grad_buffer();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * n * inner + r;
        T dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t at = base + i * inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores) {
  CODEXL_REQUIRE(scores.rank() >= 2, "causal_mask needs [..., L, K] scores, got " + shape_str(scores.shape()));
  const auto L = scores.dim(scores.rank() - 2);
  const auto K = scores.dim(scores.rank() - 1);
  CODEXL_REQUIRE(K >= L, "causal_mask: fewer keys than queries in " + shape_str(scores.shape()));
  const auto offset = K - L;
  const auto blocks = scores.size() / (L * K);
  std::vector<T> out(scores.data().begin(), scores.data().end());
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      T* row = out.data() + (b * L + i) * K;
      for (std::size_t j = offset + i + 1; j < K; ++j) row[j] = kNegInf;
    }
  }
  auto sn = scores.node_ptr();
  return make_result<T>(scores.shape(), std::move(out), {&scores}, [sn, blocks, L, K, offset](Node<T>& self) {
    auto g = sn->grad_buffer();
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t row = (b * L + i) * K;
        for (std::size_t j = 0; j <= offset + i; ++j) g[row + j] += self.grad[row + j];
      }
    }
  });
}

// Eigen peels unaligned maps up to the next packet boundary and handles those
// elements with scalar code, which rounds differently. The row helpers below
// only ever vectorize over an owned buffer so results never depend on where a
// tensor was allocated.
template <typename T>
using Column = Eigen::Array<T, Eigen::Dynamic, 1>;

// y[0..n) = softmax(factor * buf[0..n)); buf holds the scores on entry.
template <typename T>
void softmax_row(Column<T>& buf, std::size_t n, T factor, T* y) {
  auto x = buf.head(static_cast<Eigen::Index>(n));
  const T mx = x.maxCoeff();
  x = ((x - mx) * factor).exp();
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) total += buf[static_cast<Eigen::Index>(j)];
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < n; ++j) y[j] = buf[static_cast<Eigen::Index>(j)] * inv;
}

// buf[0..n) = factor * y * (g - <g, y>), the score gradient of softmax_row.
template <typename T>
void softmax_row_grad(const T* y, const T* g, std::size_t n, T factor, Column<T>& buf) {
  T dot = 0;
  for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) buf[static_cast<Eigen::Index>(j)] = factor * y[j] * (g[j] - dot);
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, T factor) {
  CODEXL_REQUIRE(scores.rank() >= 2, "masked_softmax needs [..., L, K] scores, got " + shape_str(scores.shape()));
  const auto L = scores.dim(scores.rank() - 2);
  const auto K = scores.dim(scores.rank() - 1);
  CODEXL_REQUIRE(K >= L, "masked_softmax: fewer keys than queries in " + shape_str(scores.shape()));
  CODEXL_REQUIRE(factor > T(0), "masked_softmax: scale factor must be positive");
  const auto offset = K - L;
  const auto rows = scores.size() / K;
  const T* in = scores.data().data();
  std::vector<T> out(scores.size());
  Column<T> buf(static_cast<Eigen::Index>(K));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto visible = offset + r % L + 1;
    std::copy_n(in + r * K, visible, buf.data());
    softmax_row(buf, visible, factor, out.data() + r * K);
  }
  auto sn = scores.node_ptr();
  return make_result<T>(scores.shape(), std::move(out), {&scores}, [sn, L, K, offset, rows, factor](Node<T>& self) {
    auto gx = sn->grad_buffer();
    Column<T> buf(static_cast<Eigen::Index>(K));
    for (std::size_t r = 0; r < rows; ++r) {
      const auto visible = offset + r % L + 1;
      softmax_row_grad(self.value.data() + r * K, self.grad.data() + r * K, visible, factor, buf);
      T* dx = gx.data() + r * K;
      for (std::size_t j = 0; j < visible; ++j) dx[j] += buf[static_cast<Eigen::Index>(j)];
    }
  });
}

template <typename T>
Tensor<T> relative_softmax(const Tensor<T>& content, const Tensor<T>& by_distance, T factor) {
  CODEXL_REQUIRE(content.rank() >= 2 && content.shape() == by_distance.shape(),
                 "relative_softmax: shapes " + shape_str(content.shape()) + " and " + shape_str(by_distance.shape()));
  const auto L = content.dim(content.rank() - 2);
  const auto K = content.dim(content.rank() - 1);
  CODEXL_REQUIRE(K >= L, "relative_softmax: fewer keys than queries in " + shape_str(content.shape()));
  CODEXL_REQUIRE(factor > T(0), "relative_softmax: scale factor must be positive");
  const auto offset = K - L;
  const auto rows = content.size() / K;
  const T* ac = content.data().data();
  const T* bd = by_distance.data().data();
  std::vector<T> out(content.size());
  Column<T> buf(static_cast<Eigen::Index>(K));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto visible = offset + r % L + 1;
    const T* a = ac + r * K;
    const T* d = bd + r * K;
    // Key j sits at distance visible - 1 - j.
    for (std::size_t j = 0; j < visible; ++j) buf[static_cast<Eigen::Index>(j)] = a[j] + d[visible - 1 - j];
    softmax_row(buf, visible, factor, out.data() + r * K);
  }
  auto an = content.node_ptr();
  auto dn = by_distance.node_ptr();
  return make_result<T>(content.shape(), std::move(out), {&content, &by_distance},
                        [an, dn, L, K, offset, rows, factor](Node<T>& self) {
                          const bool want_a = an->requires_grad;
                          const bool want_d = dn->requires_grad;
                          std::span<T> ga, gd;
                          if (want_a) ga = an->grad_buffer();
                          if (want_d) gd = dn->grad_buffer();
                          Column<T> buf(static_cast<Eigen::Index>(K));
                          for (std::size_t r = 0; r < rows; ++r) {
                            const auto visible = offset + r % L + 1;
                            softmax_row_grad(self.value.data() + r * K, self.grad.data() + r * K, visible, factor,
                                             buf);
                            if (want_a) {
                              T* a = ga.data() + r * K;
                              for (std::size_t j = 0; j < visible; ++j) a[j] += buf[static_cast<Eigen::Index>(j)];
                            }
                            if (want_d) {
                              T* d = gd.data() + r * K;
                              for (std::size_t j = 0; j < visible; ++j) d[visible - 1 - j] += buf[static_cast<Eigen::Index>(j)];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> rel_shift(const Tensor<T>& scores) {
  CODEXL_REQUIRE(scores.rank() >= 2, "rel_shift needs [..., L, K] scores, got " + shape_str(scores.shape()));
  const auto L = scores.dim(scores.rank() - 2);
  const auto K = scores.dim(scores.rank() - 1);
  CODEXL_REQUIRE(K >= L, "rel_shift: fewer keys than queries in " + shape_str(scores.shape()));
  const auto offset = K - L;
  const auto blocks = scores.size() / (L * K);
  const auto in = scores.data();
  std::vector<T> out(in.size(), T(0));
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t row = (b * L + i) * K;
      for (std::size_t j = 0; j <= offset + i; ++j) out[row + j] = in[row + offset + i - j];
    }
  }
  auto sn = scores.node_ptr();
  return make_result<T>(scores.shape(), std::move(out), {&scores}, [sn, blocks, L, K, offset](Node<T>& self) {
    auto g = sn->grad_buffer();
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t i = 0; i < L; ++i) {
        const std::size_t row = (b * L + i) * K;
        for (std::size_t j = 0; j <= offset + i; ++j) g[row + offset + i - j] += self.grad[row + j];
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  CODEXL_REQUIRE(x.rank() >= 1, "layer_norm on a rank-0 tensor");
  const auto C = x.shape().back();
  CODEXL_REQUIRE(gain.size() == C && bias.size() == C, "layer_norm: gain " + shape_str(gain.shape()) + "/bias " +
                                                    shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  const auto rows = x.size() / C;
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<T> out(in.size());
  std::vector<T> xhat(in.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * C;
    T mu = 0;
    for (std::size_t c = 0; c < C; ++c) mu += row[c];
    mu /= T(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(C);
    const T rs = T(1) / std::sqrt(var + T(eps));
    rstd[r] = rs;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (row[c] - mu) * rs;
      xhat[r * C + c] = h;
      out[r * C + c] = h * g[c] + b[c];
    }
  }
  auto xn = x.node_ptr();
  auto gn = gain.node_ptr();
  auto bn = bias.node_ptr();
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, rows, C, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* gy = self.grad.data();
        if (gn->requires_grad) {
          auto gg = gn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < C; ++c) gg[c] += gy[r * C + c] * xhat[r * C + c];
          }
        }
        if (bn->requires_grad) {
          auto gb = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < C; ++c) gb[c] += gy[r * C + c];
          }
        }
        if (xn->requires_grad) {
          auto gx = xn->grad_buffer();
          const auto& gain_v = gn->value;
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0;
            T mean_dx = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const T d = gy[r * C + c] * gain_v[c];
              mean_d += d;
              mean_dx += d * xhat[r * C + c];
            }
            mean_d /= T(C);
            mean_dx /= T(C);
            for (std::size_t c = 0; c < C; ++c) {
              const T d = gy[r * C + c] * gain_v[c];
              gx[r * C + c] += rstd[r] * (d - mean_d - xhat[r * C + c] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  const auto in = x.data();
  std::vector<T> mask(in.size());
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    // 53 random bits -> uniform [0, 1); independent of the standard library's distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < rate ? T(0) : keep_scale;
    out[i] = in[i] * mask[i];
  }
  auto xn = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, mask = std::move(mask)](Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> embedding(std::span<const std::int32_t> ids, const Tensor<T>& table) {
  CODEXL_REQUIRE(table.rank() == 2, "embedding table must be 2-D, got " + shape_str(table.shape()));
  const auto V = table.dim(0);
  const auto H = table.dim(1);
  std::vector<T> out(ids.size() * H);
  const auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw ShapeError("token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * H, H, out.data() + i * H);
  }
  auto tn = table.node_ptr();
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>({ids.size(), H}, std::move(out), {&table}, [tn, H, saved = std::move(saved)](Node<T>& self) {
    auto g = tn->grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* row = g.data() + static_cast<std::size_t>(saved[i]) * H;
      const T* src = self.grad.data() + i * H;
      for (std::size_t h = 0; h < H; ++h) row[h] += src[h];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  CODEXL_REQUIRE(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  CODEXL_REQUIRE(axis < first.size(), "concat axis out of range for " + shape_str(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    CODEXL_REQUIRE(p.rank() == first.size(), "concat rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a) {
      if (a != axis) {
        CODEXL_REQUIRE(p.dim(a) == first[a],
                "concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first));
      }
    }
    shape[axis] += p.dim(axis);
  }
  const auto outer = product(first, 0, axis);
  const auto inner = product(first, axis + 1, first.size());
  const auto out_chunk = shape[axis] * inner;
  std::vector<T> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto chunk = p.dim(axis) * inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * chunk, chunk, out.data() + o * out_chunk + off);
    off += chunk;
  }
  Tensor<T> result(std::move(shape), std::move(out));
  if (!grad_recording_enabled()) return result;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) return result;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  Node<T>* node = result.node();
  node->requires_grad = true;
  for (const auto& n : nodes) {
    if (n->requires_grad) node->parents.push_back(n);
  }
  node->backward_fn = [nodes, offsets, outer, inner, out_chunk, axis](Node<T>& self) {
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (!nodes[p]->requires_grad) continue;
      const auto chunk = nodes[p]->shape[axis] * inner;
      auto g = nodes[p]->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = self.grad.data() + o * out_chunk + offsets[p];
        T* dst = g.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  };
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  CODEXL_REQUIRE(axis < x.rank(), "slice axis out of range for " + shape_str(x.shape()));
  CODEXL_REQUIRE(start + length <= x.dim(axis) && length > 0,
          "slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") outside " + shape_str(x.shape()));
  const auto outer = product(x.shape(), 0, axis);
  const auto inner = product(x.shape(), axis + 1, x.rank());
  const auto in_chunk = x.dim(axis) * inner;
  const auto out_chunk = length * inner;
  const auto begin = start * inner;
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<T> out(outer * out_chunk);
  const T* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * in_chunk + begin, out_chunk, out.data() + o * out_chunk);
  auto xn = x.node_ptr();
  return make_result<T>(std::move(shape), std::move(out), {&x},
                        [xn, outer, in_chunk, out_chunk, begin](Node<T>& self) {
                          auto g = xn->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = g.data() + o * in_chunk + begin;
                            const T* s = self.grad.data() + o * out_chunk;
                            for (std::size_t i = 0; i < out_chunk; ++i) dst[i] += s[i];
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  CODEXL_REQUIRE(shape_numel(shape) == x.size(), "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node_ptr();
  return make_result<T>(std::move(shape), std::move(out), {&x}, [xn](Node<T>& self) {
    auto g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto rank = x.rank();
  CODEXL_REQUIRE(axes.size() == rank && rank >= 1, "permute: axes do not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    CODEXL_REQUIRE(a < rank && !seen[a], "permute: invalid axis list");
    seen[a] = true;
  }
  const auto in_strides = row_major_strides(x.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> gather(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(axes[i]);
    gather[i] = in_strides[axes[i]];
  }
  std::vector<T> out(x.size());
  permute_copy<T>(x.data().data(), out.data(), out_shape, gather, false);

  // Backward applies the inverse permutation to the gradient.
  std::vector<std::size_t> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) inverse[axes[i]] = i;
  const auto out_strides = row_major_strides(out_shape);
  std::vector<std::size_t> scatter(rank);
  for (std::size_t i = 0; i < rank; ++i) scatter[i] = out_strides[inverse[i]];
  auto xn = x.node_ptr();
  Shape in_shape = x.shape();
  return make_result<T>(std::move(out_shape), std::move(out), {&x},
                        [xn, in_shape, scatter](Node<T>& self) {
                          permute_copy<T>(self.grad.data(), xn->grad_buffer().data(), in_shape, scatter, true);
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto xn = x.node_ptr();
  return make_result<T>({1}, {total}, {&x}, [xn](Node<T>& self) {
    auto g = xn->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  CODEXL_REQUIRE(logits.rank() == 2 && logits.dim(0) == targets.size(),
          "cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
              " targets");
  const auto N = logits.dim(0);
  const auto V = logits.dim(1);
  const T* z = logits.data().data();
  double total = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw ShapeError("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
    }
    const T* row = z + r * V;
    const T mx = *std::max_element(row, row + V);
    T s = 0;
    for (std::size_t c = 0; c < V; ++c) s += std::exp(row[c] - mx);
    total += static_cast<double>(std::log(s) + mx - row[t]);
  }
  const T loss = static_cast<T>(total / static_cast<double>(N));
  auto ln = logits.node_ptr();
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>({1}, {loss}, {&logits}, [ln, N, V, saved = std::move(saved)](Node<T>& self) {
    auto g = ln->grad_buffer();
    const T scale_by = self.grad[0] / T(N);
    for (std::size_t r = 0; r < N; ++r) {
      const T* row = ln->value.data() + r * V;
      T* grow = g.data() + r * V;
      const T mx = *std::max_element(row, row + V);
      T s = 0;
      for (std::size_t c = 0; c < V; ++c) s += std::exp(row[c] - mx);
      const T inv = T(1) / s;
      for (std::size_t c = 0; c < V; ++c) grow[c] += scale_by * std::exp(row[c] - mx) * inv;
      grow[saved[r]] -= scale_by;
    }
  });
}

template <typename T>
Tensor<T> cross_entropy_from_probabilities(const Tensor<T>& probs, std::span<const std::int32_t> targets,
                                           std::size_t* clamped) {
  CODEXL_REQUIRE(probs.rank() == 2 && probs.dim(0) == targets.size(),
          "cross_entropy: probabilities " + shape_str(probs.shape()) + " vs " + std::to_string(targets.size()) +
              " targets");
  const auto N = probs.dim(0);
  const auto V = probs.dim(1);
  const T floor = std::numeric_limits<T>::min();
  std::size_t n_clamped = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw ShapeError("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
    }
    T p = probs.data()[r * V + t];
    if (p < floor) {
      p = floor;
      ++n_clamped;
    }
    total -= std::log(static_cast<double>(p));
  }
  if (clamped) *clamped = n_clamped;
  auto pn = probs.node_ptr();
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>({1}, {static_cast<T>(total / static_cast<double>(N))}, {&probs},
                        [pn, N, V, floor, saved = std::move(saved)](Node<T>& self) {
                          auto g = pn->grad_buffer();
                          for (std::size_t r = 0; r < N; ++r) {
                            const auto at = r * V + static_cast<std::size_t>(saved[r]);
                            const T p = std::max(pn->value[at], floor);
                            g[at] -= self.grad[0] / (T(N) * p);
                          }
                        });
}

template <typename T>
Tensor<T> lstm_cell_state(const Tensor<T>& pre, const Tensor<T>& c) {
  CODEXL_REQUIRE(c.rank() == 2 && pre.rank() == 2 && pre.dim(0) == c.dim(0) && pre.dim(1) == 4 * c.dim(1),
          "lstm_cell_state: gates " + shape_str(pre.shape()) + " vs cell " + shape_str(c.shape()));
  const auto B = c.dim(0);
  const auto H = c.dim(1);
  const T* p = pre.data().data();
  const T* cv = c.data().data();
  std::vector<T> out(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = p + b * 4 * H;
    for (std::size_t h = 0; h < H; ++h) {
      const T i = sigmoid_scalar(row[h]);
      const T f = sigmoid_scalar(row[H + h]);
      const T g = std::tanh(row[2 * H + h]);
      out[b * H + h] = f * cv[b * H + h] + i * g;
    }
  }
  auto pn = pre.node_ptr();
  auto cn = c.node_ptr();
  return make_result<T>({B, H}, std::move(out), {&pre, &c}, [pn, cn, B, H](Node<T>& self) {
    const T* gy = self.grad.data();
    T* gp = pn->requires_grad ? pn->grad_buffer().data() : nullptr;
    T* gc = cn->requires_grad ? cn->grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = pn->value.data() + b * 4 * H;
      for (std::size_t h = 0; h < H; ++h) {
        const T i = sigmoid_scalar(row[h]);
        const T f = sigmoid_scalar(row[H + h]);
        const T g = std::tanh(row[2 * H + h]);
        const T d = gy[b * H + h];
        const T c_prev = cn->value[b * H + h];
        if (gp) {
          T* grow = gp + b * 4 * H;
          grow[h] += d * g * i * (T(1) - i);
          grow[H + h] += d * c_prev * f * (T(1) - f);
          grow[2 * H + h] += d * i * (T(1) - g * g);
        }
        if (gc) gc[b * H + h] += d * f;
      }
    }
  });
}

template <typename T>
Tensor<T> lstm_cell_output(const Tensor<T>& pre, const Tensor<T>& c_next) {
  CODEXL_REQUIRE(c_next.rank() == 2 && pre.rank() == 2 && pre.dim(0) == c_next.dim(0) && pre.dim(1) == 4 * c_next.dim(1),
          "lstm_cell_output: gates " + shape_str(pre.shape()) + " vs cell " + shape_str(c_next.shape()));
  const auto B = c_next.dim(0);
  const auto H = c_next.dim(1);
  std::vector<T> out(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const T o = sigmoid_scalar(pre.data()[b * 4 * H + 3 * H + h]);
      out[b * H + h] = o * std::tanh(c_next.data()[b * H + h]);
    }
  }
  auto pn = pre.node_ptr();
  auto cn = c_next.node_ptr();
  return make_result<T>({B, H}, std::move(out), {&pre, &c_next}, [pn, cn, B, H](Node<T>& self) {
    T* gp = pn->requires_grad ? pn->grad_buffer().data() : nullptr;
    T* gc = cn->requires_grad ? cn->grad_buffer().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const T o = sigmoid_scalar(pn->value[b * 4 * H + 3 * H + h]);
        const T tc = std::tanh(cn->value[b * H + h]);
        const T d = self.grad[b * H + h];
        if (gp) gp[b * 4 * H + 3 * H + h] += d * tc * o * (T(1) - o);
        if (gc) gc[b * H + h] += d * o * (T(1) - tc * tc);
      }
    }
  });
}

template <typename T>
ClipResult clip_global_norm(const ParameterList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  ClipResult result;
  result.norm = std::sqrt(sq);
  if (!std::isfinite(result.norm)) throw NumericError("gradient norm is not finite");
  if (result.norm > max_norm) {
    const T factor = static_cast<T>(max_norm / result.norm);
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad()) g *= factor;
    }
    result.clipped = true;
  }
  return result;
}

#define CODEXL_INSTANTIATE(T)                                                                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                              \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                                       \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                              \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                           \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                              \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                                      \
  template Tensor<T> causal_mask<T>(const Tensor<T>&);                                                       \
  template Tensor<T> masked_softmax<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> relative_softmax<T>(const Tensor<T>&, const Tensor<T>&, T);                             \
  template Tensor<T> rel_shift<T>(const Tensor<T>&);                                                         \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&, bool);                                       \
  template Tensor<T> embedding<T>(std::span<const std::int32_t>, const Tensor<T>&);                          \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                  \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                              \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>);                      \
  template Tensor<T> cross_entropy_from_probabilities<T>(const Tensor<T>&, std::span<const std::int32_t>,    \
                                                         std::size_t*);                                      \
  template Tensor<T> lstm_cell_state<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> lstm_cell_output<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template ClipResult clip_global_norm<T>(const ParameterList<T>&, double);

CODEXL_INSTANTIATE(float)
CODEXL_INSTANTIATE(double)
#undef CODEXL_INSTANTIATE

}  // namespace codexl::ops
