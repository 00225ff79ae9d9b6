#include <doctest.h>

#include <cmath>

#include "codexl/errors.hpp"
#include "codexl/models.hpp"
#include "codexl/ops.hpp"
#include "support.hpp"

using namespace codexl;
using codexl::testing::gradcheck;
using codexl::testing::jitter;
using codexl::testing::random_ids;
using codexl::testing::random_tensor;

namespace {

ModelConfig tiny(Arch arch = Arch::txl, PositionalEncoding pos = PositionalEncoding::relative) {
  ModelConfig c;
  c.arch = arch;
  c.depth = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffd_inner = 12;
  c.vocab_size = 11;
  c.seq_len = 4;
  c.mem_len = 4;
  c.dropout = 0.0;
  c.positional = pos;
  return c;
}

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::vector<std::vector<double>> grads_of(const LanguageModel<double>& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) {
    out.emplace_back(p.tensor.has_grad() ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                         : std::vector<double>(p.tensor.size(), 0.0));
  }
  return out;
}

void zero_grads(const LanguageModel<double>& m) {
  for (const auto& p : m.parameters()) p.tensor.zero_grad();
}

LayerParams<double> zero_layer(std::size_t h, std::size_t f) {
  LayerParams<double> p;
  p.w_q = Tensor<double>::zeros({h, h});
  p.w_k = Tensor<double>::zeros({h, h});
  p.w_v = Tensor<double>::zeros({h, h});
  p.w_o = Tensor<double>::zeros({h, h});
  p.w_r = Tensor<double>::zeros({h, h});
  p.u_bias = Tensor<double>::zeros({h});
  p.v_bias = Tensor<double>::zeros({h});
  p.w_1 = Tensor<double>::zeros({h, f});
  p.b_1 = Tensor<double>::zeros({f});
  p.w_2 = Tensor<double>::zeros({f, h});
  p.b_2 = Tensor<double>::zeros({h});
  p.norm1_gain = Tensor<double>::full({h}, 1.0);
  p.norm1_bias = Tensor<double>::zeros({h});
  p.norm2_gain = Tensor<double>::full({h}, 1.0);
  p.norm2_bias = Tensor<double>::zeros({h});
  return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference LSTM step on plain vectors, gate order (i, f, g, o).
void lstm_reference(const std::vector<double>& x, std::vector<double>& h, std::vector<double>& c,
                    const LstmParams<double>& p) {
  const auto H = h.size();
  const auto in = x.size();
  std::vector<double> pre(4 * H);
  for (std::size_t j = 0; j < 4 * H; ++j) {
    double s = p.b.data()[j];
    for (std::size_t k = 0; k < in; ++k) s += x[k] * p.w_x.data()[k * 4 * H + j];
    for (std::size_t k = 0; k < H; ++k) s += h[k] * p.w_h.data()[k * 4 * H + j];
    pre[j] = s;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sigmoid(pre[j]), f = sigmoid(pre[H + j]), g = std::tanh(pre[2 * H + j]),
                 o = sigmoid(pre[3 * H + j]);
    c[j] = f * c[j] + i * g;
    h[j] = o * std::tanh(c[j]);
  }
}

std::vector<double> gru_reference(const std::vector<double>& x, const std::vector<double>& h,
                                  const GruParams<double>& p) {
  const auto H = h.size();
  const auto in = x.size();
  auto xw = [&](std::size_t j) {
    double s = p.b.data()[j];
    for (std::size_t k = 0; k < in; ++k) s += x[k] * p.w_x.data()[k * 3 * H + j];
    return s;
  };
  std::vector<double> z(H), r(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    double sz = xw(j), sr = xw(H + j);
    for (std::size_t k = 0; k < H; ++k) {
      sz += h[k] * p.w_hzr.data()[k * 2 * H + j];
      sr += h[k] * p.w_hzr.data()[k * 2 * H + H + j];
    }
    z[j] = sigmoid(sz);
    r[j] = sigmoid(sr);
  }
  for (std::size_t j = 0; j < H; ++j) {
    double sn = xw(2 * H + j);
    for (std::size_t k = 0; k < H; ++k) sn += r[k] * h[k] * p.w_hn.data()[k * H + j];
    out[j] = (1.0 - z[j]) * h[j] + z[j] * std::tanh(sn);
  }
  return out;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("config validation") {
  auto c = tiny();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.hidden = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(tiny().describe() == "txl-2");
  CHECK(parse_arch("gru") == Arch::gru);
  CHECK_THROWS_AS(parse_arch("cnn"), ConfigError);
}

TEST_CASE("parameter counts match the closed form") {
  const std::size_t H = 8, F = 12, V = 11, D = 2;
  TransformerXL<double> txl(tiny(), 1);
  CHECK(txl.parameter_count() == V * H + D * (5 * H * H + 2 * H * F + F + 7 * H) + H * V + V);
  RecurrentLM<double> lstm(tiny(Arch::lstm), 1);
  CHECK(lstm.parameter_count() == V * H + D * (H * 4 * H + 4 * H + H * 4 * H) + H * V + V);
  RecurrentLM<double> gru(tiny(Arch::gru), 1);
  CHECK(gru.parameter_count() == V * H + D * (H * 3 * H + 3 * H + 2 * H * H + H * H) + H * V + V);
  std::size_t total = 0;
  for (const auto& p : txl.parameters()) total += p.tensor.size();
  CHECK(total == txl.parameter_count());
  auto deep = tiny();
  deep.depth = 4;
  CHECK(TransformerXL<double>(deep, 1).parameter_count() > txl.parameter_count());
  CHECK(count_parameters(ParameterList<double>{{"m", Tensor<double>::zeros({512, 512})}}) == 262144);
}

TEST_CASE("initialization is seeded") {
  TransformerXL<float> a(tiny(), 5), b(tiny(), 5), c(tiny(), 6);
  CHECK(same_values(a.parameters()[0].tensor, b.parameters()[0].tensor));
  CHECK_FALSE(same_values(a.parameters()[0].tensor, c.parameters()[0].tensor));
  for (const auto& p : a.parameters()) {
    for (float v : p.tensor.data()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("logits have one row per position and a valid softmax") {
  for (auto arch : {Arch::txl, Arch::lstm, Arch::gru}) {
    auto m = make_model<double>(tiny(arch), 3);
    jitter(*m, 4);
    Rng rng(1);
    const auto ids = random_ids(2 * 4, 11, rng);
    const auto out = m->forward(ids, 2, 4, m->initial_state(2), false, rng);
    CHECK(out.logits.shape() == Shape{8, 11});
    const auto probs = ops::softmax(out.logits, -1);
    for (std::size_t r = 0; r < 8; ++r) {
      double s = 0;
      for (std::size_t v = 0; v < 11; ++v) s += probs.at({r, v});
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK_THROWS_AS(m->forward(std::vector<std::int32_t>(8, 11), 2, 4, m->initial_state(2), false, rng), ShapeError);
  }
}

TEST_CASE("single token attention is W_V then W_O") {
  auto p = zero_layer(1, 1);
  p.w_v = Tensor<double>({1, 1}, {3.0});
  p.w_o = Tensor<double>({1, 1}, {-0.5});
  p.w_q = Tensor<double>({1, 1}, {2.0});
  p.w_k = Tensor<double>({1, 1}, {1.5});
  p.w_r = Tensor<double>({1, 1}, {0.7});
  const Tensor<double> x({1, 1, 1}, {2.0});
  for (auto pos : {PositionalEncoding::relative, PositionalEncoding::absolute}) {
    CHECK(self_attention(x, Tensor<double>{}, p, 1, pos).item() == doctest::Approx(-3.0));
  }
}

TEST_CASE("memory positions stay visible under the causal mask") {
  const auto masked = ops::causal_mask(Tensor<double>::zeros({1, 3, 5}));
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t visible = 0;
    for (std::size_t j = 0; j < 5; ++j) visible += std::isfinite(masked.at({0, i, j})) && masked.at({0, i, j}) > -1e30;
    CHECK(visible == 2 + i + 1);
  }
}

TEST_CASE("ffd composes gelu between the affine maps") {
  auto p = zero_layer(1, 1);
  const Tensor<double> x({1, 1, 1}, {1.0});
  CHECK(ffd(x, p).item() == 0.0);
  p.w_1 = Tensor<double>({1, 1}, {1.0});
  p.w_2 = Tensor<double>({1, 1}, {1.0});
  CHECK(ffd(x, p).item() == doctest::Approx(0.841345).epsilon(1e-6));
  Rng rng(2);
  const auto big = random_tensor<double>({2, 3, 1}, rng);
  CHECK(ffd(big, p).shape() == big.shape());
}

TEST_CASE("layer with zeroed sublayers adds the norm biases to the residual") {
  auto p = zero_layer(4, 6);
  p.norm1_bias = Tensor<double>({4}, {0.1, 0.2, 0.3, 0.4});
  p.norm2_bias = Tensor<double>({4}, {-1.0, 0.0, 1.0, 2.0});
  Rng rng(3);
  const auto x = random_tensor<double>({2, 3, 4}, rng, 1.0, false);
  auto c = tiny();
  c.hidden = 4;
  c.heads = 1;
  const auto out = txl_layer(x, Tensor<double>{}, p, c, false, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(x.data()[i] + p.norm1_bias.data()[i % 4] + p.norm2_bias.data()[i % 4]));
  }
}

TEST_CASE("zero memory length reduces to the vanilla transformer bitwise") {
  for (auto pos : {PositionalEncoding::relative, PositionalEncoding::absolute}) {
    auto c = tiny(Arch::txl, pos);
    c.mem_len = 0;
    TransformerXL<double> m(c, 9);
    jitter(m, 10);
    Rng rng(4);
    auto state = m.initial_state(2);
    for (int seg = 0; seg < 3; ++seg) {
      const auto ids = random_ids(8, 11, rng);
      const auto out = m.forward(ids, 2, 4, state, false, rng);
      CHECK(same_values(out.logits, m.forward_vanilla(ids, 2, 4, false, rng)));
      state = out.memory;
      for (const auto& l : state.layers) CHECK_FALSE(l.defined());
    }
  }
}

TEST_CASE("memory holds each layer's detached input") {
  TransformerXL<double> m(tiny(), 11);
  jitter(m, 12);
  Rng rng(5);
  const auto ids = random_ids(8, 11, rng);
  const auto out = m.forward(ids, 2, 4, m.initial_state(2), false, rng);
  REQUIRE(out.memory.layers.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(same_values(out.memory.layers[l], out.layer_inputs[l]));
    CHECK_FALSE(out.memory.layers[l].requires_grad());
  }
  CHECK(out.layer_inputs[0].requires_grad());

  // A longer memory keeps the tail of [old memory ∥ input].
  auto c = tiny();
  c.mem_len = 6;
  TransformerXL<double> long_mem(c, 11);
  auto s1 = long_mem.forward(ids, 2, 4, long_mem.initial_state(2), false, rng);
  CHECK(s1.memory.layers[0].shape() == Shape{2, 4, 8});
  auto s2 = long_mem.forward(ids, 2, 4, s1.memory, false, rng);
  CHECK(s2.memory.layers[1].shape() == Shape{2, 6, 8});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 8; ++h) {
      CHECK(s2.memory.layers[1].at({b, 0, h}) == s1.memory.layers[1].at({b, 2, h}));
      CHECK(s2.memory.layers[1].at({b, 5, h}) == s2.layer_inputs[1].at({b, 3, h}));
    }
  }
}

TEST_CASE("memory carries context into the next segment") {
  TransformerXL<double> m(tiny(), 13);
  jitter(m, 14);
  Rng rng(6);
  const auto a = random_ids(8, 11, rng);
  const auto b = random_ids(8, 11, rng);
  const auto first = m.forward(a, 2, 4, m.initial_state(2), false, rng);
  const auto with = m.forward(b, 2, 4, first.memory, false, rng);
  const auto without = m.forward(b, 2, 4, m.initial_state(2), false, rng);
  CHECK_FALSE(same_values(with.logits, without.logits));
}

TEST_CASE("gradients never flow through memory") {
  for (auto pos : {PositionalEncoding::relative, PositionalEncoding::absolute}) {
    TransformerXL<double> m(tiny(Arch::txl, pos), 15);
    jitter(m, 16);
    Rng rng(7);
    const auto a = random_ids(8, 11, rng);
    const auto b = random_ids(8, 11, rng);
    const auto targets = random_ids(8, 11, rng);
    const auto first = m.forward(a, 2, 4, m.initial_state(2), false, rng);

    auto run = [&](const MemoryState<double>& mem) {
      zero_grads(m);
      backward(ops::cross_entropy(m.forward(b, 2, 4, mem, false, rng).logits, targets));
      return grads_of(m);
    };
    // Attached layer inputs from segment 1 as memory, versus constant copies.
    MemoryState<double> attached;
    MemoryState<double> constant;
    for (const auto& x : first.layer_inputs) {
      attached.layers.push_back(x);
      constant.layers.emplace_back(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    }
    const auto g_attached = run(attached);
    const auto g_recorded = run(first.memory);
    const auto g_constant = run(constant);
    CHECK(g_attached == g_constant);
    CHECK(g_recorded == g_constant);
  }
}

TEST_CASE("future tokens never change earlier logits") {
  for (auto arch : {Arch::txl, Arch::lstm, Arch::gru}) {
    auto c = tiny(arch);
    c.seq_len = 8;
    auto m = make_model<double>(c, 17);
    jitter(*m, 18);
    Rng rng(8);
    const auto warm = random_ids(8, 11, rng);
    const auto state = m->forward(warm, 1, 8, m->initial_state(1), false, rng).memory;
    const auto base_ids = random_ids(8, 11, rng);
    const auto base = m->forward(base_ids, 1, 8, state, false, rng).logits;
    for (std::size_t j = 0; j < 8; ++j) {
      auto ids = base_ids;
      ids[j] = (ids[j] + 1) % 11;
      const auto moved = m->forward(ids, 1, 8, state, false, rng).logits;
      for (std::size_t i = 0; i < 8; ++i) {
        bool equal = true;
        for (std::size_t v = 0; v < 11; ++v) equal = equal && moved.at({i, v}) == base.at({i, v});
        CAPTURE(i);
        CAPTURE(j);
        CHECK(equal == (i < j));
      }
    }
  }
}

TEST_CASE("transformer-xl gradients match finite differences") {
  for (auto pos : {PositionalEncoding::relative, PositionalEncoding::absolute}) {
    TransformerXL<double> m(tiny(Arch::txl, pos), 19);
    jitter(m, 20);
    Rng rng(9);
    const auto a = random_ids(8, 11, rng);
    const auto b = random_ids(8, 11, rng);
    const auto targets = random_ids(8, 11, rng);
    const auto memory = m.forward(a, 2, 4, m.initial_state(2), false, rng).memory;
    const auto check = gradcheck(
        testing::leaves_of(m), [&] { return ops::cross_entropy(m.forward(b, 2, 4, memory, false, rng).logits, targets); },
        1e-5, 1e-6, testing::names_of(m));
    CAPTURE(check.worst);
    CHECK(check.checked == m.parameter_count());
    CHECK(check.max_rel <= 1e-4);
  }
}

TEST_CASE("recurrent gradients match finite differences") {
  for (auto arch : {Arch::lstm, Arch::gru}) {
    RecurrentLM<double> m(tiny(arch), 21);
    jitter(m, 22);
    Rng rng(10);
    MemoryState<double> state = m.initial_state(2);
    for (auto& h : state.hidden) h = random_tensor<double>({2, 8}, rng, 0.5, false);
    for (auto& c : state.cell) c = random_tensor<double>({2, 8}, rng, 0.5, false);
    const auto ids = random_ids(8, 11, rng);
    const auto targets = random_ids(8, 11, rng);
    const auto check = gradcheck(
        testing::leaves_of(m), [&] { return ops::cross_entropy(m.forward(ids, 2, 4, state, false, rng).logits, targets); },
        1e-5, 1e-6, testing::names_of(m));
    CAPTURE(check.worst);
    CHECK(check.max_rel <= 1e-4);
  }
}

TEST_CASE("lstm cell on zero weights") {
  LstmParams<double> p{Tensor<double>::zeros({2, 4}), Tensor<double>::zeros({4}), Tensor<double>::zeros({1, 4})};
  const Tensor<double> x({1, 2}, {0.3, -0.7});
  const auto h = Tensor<double>::zeros({1, 1});
  auto [h0, c0] = lstm_cell(x, h, Tensor<double>::zeros({1, 1}), p);
  CHECK(h0.item() == 0.0);
  CHECK(c0.item() == 0.0);
  auto [h1, c1] = lstm_cell(x, h, Tensor<double>::full({1, 1}, 1.0), p);
  CHECK(c1.item() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(h1.item() == doctest::Approx(0.231059).epsilon(1e-6));
}

TEST_CASE("lstm cell matches the scalar reference") {
  Rng rng(11);
  LstmParams<double> p{random_tensor<double>({3, 20}, rng), random_tensor<double>({20}, rng),
                       random_tensor<double>({5, 20}, rng)};
  const auto x = random_tensor<double>({1, 3}, rng);
  const auto h = random_tensor<double>({1, 5}, rng);
  const auto c = random_tensor<double>({1, 5}, rng);
  std::vector<double> rh(h.data().begin(), h.data().end()), rc(c.data().begin(), c.data().end());
  lstm_reference({x.data().begin(), x.data().end()}, rh, rc, p);
  auto [h1, c1] = lstm_cell(x, h, c, p);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(h1.data()[j] == doctest::Approx(rh[j]).epsilon(1e-12));
    CHECK(c1.data()[j] == doctest::Approx(rc[j]).epsilon(1e-12));
    CHECK(std::abs(h1.data()[j]) < 1.0);
  }
}

TEST_CASE("gru cell on zero weights and a closed update gate") {
  GruParams<double> p{Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3}), Tensor<double>::zeros({1, 2}),
                      Tensor<double>::zeros({1, 1})};
  const Tensor<double> x({1, 2}, {0.3, -0.7});
  CHECK(gru_cell(x, Tensor<double>::full({1, 1}, 1.0), p).item() == doctest::Approx(0.5).epsilon(1e-12));
  // A very negative update bias forces z = 0 to double precision, so h' = h.
  p.b = Tensor<double>({3}, {-800.0, 0.4, 2.0});
  p.w_hn = Tensor<double>({1, 1}, {1.3});
  CHECK(gru_cell(x, Tensor<double>::full({1, 1}, 0.37), p).item() == 0.37);
}

TEST_CASE("gru cell matches the scalar reference") {
  Rng rng(12);
  GruParams<double> p{random_tensor<double>({3, 15}, rng), random_tensor<double>({15}, rng),
                      random_tensor<double>({5, 10}, rng), random_tensor<double>({5, 5}, rng)};
  const auto x = random_tensor<double>({1, 3}, rng);
  const auto h = random_tensor<double>({1, 5}, rng);
  const auto ref = gru_reference({x.data().begin(), x.data().end()}, {h.data().begin(), h.data().end()}, p);
  const auto out = gru_cell(x, h, p);
  for (std::size_t j = 0; j < 5; ++j) CHECK(out.data()[j] == doctest::Approx(ref[j]).epsilon(1e-12));
}

TEST_CASE("recurrent state starts at zero, is detached and carries over") {
  for (auto arch : {Arch::lstm, Arch::gru}) {
    RecurrentLM<double> m(tiny(arch), 23);
    jitter(m, 24);
    const auto s0 = m.initial_state(2);
    REQUIRE(s0.hidden.size() == 2);
    for (const auto& h : s0.hidden) {
      for (double v : h.data()) CHECK(v == 0.0);
    }
    CHECK(s0.cell.size() == (arch == Arch::lstm ? 2u : 0u));
    Rng rng(13);
    const auto a = random_ids(8, 11, rng);
    const auto b = random_ids(8, 11, rng);
    const auto first = m.forward(a, 2, 4, s0, false, rng);
    for (const auto& h : first.memory.hidden) CHECK_FALSE(h.requires_grad());
    const auto carried = m.forward(b, 2, 4, first.memory, false, rng);
    const auto fresh = m.forward(b, 2, 4, s0, false, rng);
    CHECK_FALSE(same_values(carried.logits, fresh.logits));
  }
}

TEST_CASE("dropout only acts while training") {
  auto c = tiny();
  c.dropout = 0.3;
  TransformerXL<double> m(c, 25);
  Rng rng(14);
  const auto ids = random_ids(8, 11, rng);
  const auto e1 = m.forward(ids, 2, 4, m.initial_state(2), false, rng).logits;
  const auto e2 = m.forward(ids, 2, 4, m.initial_state(2), false, rng).logits;
  CHECK(same_values(e1, e2));
  const auto t1 = m.forward(ids, 2, 4, m.initial_state(2), true, rng).logits;
  CHECK_FALSE(same_values(e1, t1));
}

}  // TEST_SUITE
