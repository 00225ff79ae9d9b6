#include <doctest.h>

#include <cmath>
#include <numeric>

#include "codexl/errors.hpp"
#include "codexl/ops.hpp"
#include "support.hpp"

using namespace codexl;
using codexl::testing::gradcheck;
using codexl::testing::probe;
using codexl::testing::random_tensor;

namespace {

// Naive triple loop.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Φ(x) from the Maclaurin series of erf, summed until terms vanish.
double phi_series(double x) {
  const double z = x / std::sqrt(2.0);
  double term = z;
  double sum = z;
  for (int n = 1; n < 60; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  const double erf = 2.0 / std::sqrt(std::acos(-1.0)) * sum;
  return 0.5 * (1.0 + erf);
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction checks data length") {
    CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at({1, 2}) == 6.0f);
    CHECK(t.size() == 6);
    CHECK_FALSE(t.has_grad());
  }

  TEST_CASE("matmul values") {
    Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    Tensor<double> b({2, 2}, {5, 6, 7, 8});
    const auto same = ops::matmul(eye, b);
    CHECK(std::vector<double>(same.data().begin(), same.data().end()) == std::vector<double>{5, 6, 7, 8});

    const std::vector<double> av{1, 2, 3, 4};
    const std::vector<double> bv{5, 6, 7, 8};
    const auto oracle = naive_matmul(av, bv, 2, 2, 2);
    CHECK(oracle == std::vector<double>{19, 22, 43, 50});
    const auto c = ops::matmul(Tensor<double>({2, 2}, av), Tensor<double>({2, 2}, bv));
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == oracle);

    CHECK_THROWS_AS(ops::matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})), ShapeError);
  }

  TEST_CASE("matmul transposes agree with the naive product") {
    Rng rng(1);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng);
    const auto ref = naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 3, 4, 5);
    auto at = ops::permute(a, {1, 0});
    auto bt = ops::permute(b, {1, 0});
    for (auto c : {ops::matmul(a, b), ops::matmul(at, b, true, false), ops::matmul(a, bt, false, true),
                   ops::matmul(at, bt, true, true)}) {
      REQUIRE(c.shape() == Shape{3, 5});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("gelu values") {
    CHECK(phi_series(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    Tensor<double> x({3}, {0.0, 1.0, 10.0});
    const auto y = ops::gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(std::abs(y.data()[1] - 1.0 * phi_series(1.0)) < 1e-12);
    CHECK(std::abs(y.data()[1] - 0.841345) < 5e-7);
    CHECK(std::abs(y.data()[2] - 10.0) < 1e-6);
  }

  TEST_CASE("softmax values and invariants") {
    const auto half = ops::softmax(Tensor<double>({2}, {0, 0}));
    CHECK(half.data()[0] == 0.5);
    CHECK(half.data()[1] == 0.5);

    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const std::vector<double> oracle{e1 / (e1 + e2 + e3), e2 / (e1 + e2 + e3), e3 / (e1 + e2 + e3)};
    const std::vector<double> frozen{0.090031, 0.244728, 0.665241};
    const auto s = ops::softmax(Tensor<double>({3}, {1, 2, 3}));
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(oracle[i] - frozen[i]) < 5e-7);
      CHECK(s.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-14));
    }
    const auto shifted = ops::softmax(Tensor<double>({3}, {101, 102, 103}));
    for (int i = 0; i < 3; ++i) CHECK(shifted.data()[i] == doctest::Approx(s.data()[i]).epsilon(1e-12));

    Rng rng(3);
    auto x = random_tensor<float>({7, 13}, rng, 5.0, false);
    for (int axis : {0, 1, -1}) {
      const auto p = ops::softmax(x, axis);
      const std::size_t a = axis == 0 ? 0 : 1;
      const std::size_t rows = a == 0 ? 13 : 7;
      const std::size_t len = x.dim(a);
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          const float v = a == 0 ? p.at({j, r}) : p.at({r, j});
          CHECK(v >= 0.0f);
          CHECK(v <= 1.0f);
          total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("softmax masking") {
    const double inf = std::numeric_limits<double>::infinity();
    const auto p = ops::softmax(Tensor<double>({3}, {1.0, -inf, 1.0}));
    CHECK(p.data()[1] == 0.0);
    CHECK(p.data()[0] == 0.5);
    CHECK_THROWS_AS(ops::softmax(Tensor<double>({2}, {-inf, -inf})), ShapeError);
  }

  TEST_CASE("causal mask leaves memory visible") {
    // L = 2 queries over K = 5 keys: 3 memory positions.
    const auto m = ops::causal_mask(Tensor<double>::zeros({2, 5}));
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        const bool visible = j <= 3 + i;
        CHECK(std::isinf(m.at({i, j})) == !visible);
      }
    }
  }

  TEST_CASE("rel_shift realigns distances") {
    // in[i][d] = 10*i + d; out[i][j] = in[i][offset + i - j].
    const std::size_t L = 3, K = 5, offset = K - L;
    std::vector<double> v(L * K);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t d = 0; d < K; ++d) v[i * K + d] = 10.0 * i + d;
    const auto out = ops::rel_shift(Tensor<double>({L, K}, v));
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        const long d = static_cast<long>(offset + i) - static_cast<long>(j);
        CHECK(out.at({i, j}) == (d >= 0 ? 10.0 * i + d : 0.0));
      }
    }
  }

  TEST_CASE("fused masked softmax matches the composed ops") {
    Rng rng(31);
    const auto s = random_tensor({2, 3, 7}, rng, 2.0, false);
    const auto fused = ops::masked_softmax(s, 0.4);
    const auto composed = ops::softmax(ops::causal_mask(ops::scale(s, 0.4)));
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(std::abs(fused.data()[i] - composed.data()[i]) <= 1e-12);
      if (composed.data()[i] == 0.0) CHECK(fused.data()[i] == 0.0);
    }
    CHECK_THROWS_AS(ops::masked_softmax(s, 0.0), ShapeError);
    CHECK_THROWS_AS(ops::masked_softmax(random_tensor({4, 3}, rng), 1.0), ShapeError);

    const auto d = random_tensor({2, 3, 7}, rng, 2.0, false);
    const auto relative = ops::relative_softmax(s, d, 0.4);
    const auto reference = ops::masked_softmax(ops::add(s, ops::rel_shift(d)), 0.4);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(relative.data()[i] - reference.data()[i]) <= 1e-12);
    CHECK_THROWS_AS(ops::relative_softmax(s, random_tensor({2, 3, 6}, rng), 0.4), ShapeError);
  }

  TEST_CASE("fused softmax results do not depend on buffer alignment") {
    // Same values at every float offset inside a larger buffer.
    Rng rng(32);
    const auto base = random_tensor<float>({3, 37}, rng, 3.0, false);
    const auto want = ops::masked_softmax(base, 0.25f);
    for (std::size_t shift = 1; shift < 16; ++shift) {
      std::vector<float> padded(shift, 0.0f);
      padded.insert(padded.end(), base.data().begin(), base.data().end());
      const auto moved = Tensor<float>({3, 37}, std::vector<float>(padded.begin() + shift, padded.end()));
      const auto got = ops::masked_softmax(moved, 0.25f);
      CHECK(std::equal(got.data().begin(), got.data().end(), want.data().begin()));
    }
  }

  TEST_CASE("layer_norm values") {
    const auto ones = Tensor<double>::full({3}, 1.0);
    const auto zeros = Tensor<double>::zeros({3});
    const auto flat = ops::layer_norm(Tensor<double>({3}, {5, 5, 5}), ones, zeros);
    for (double v : flat.data()) CHECK(v == 0.0);

    const double sd = std::sqrt(2.0 / 3.0);
    CHECK(1.0 / sd == doctest::Approx(1.224745).epsilon(1e-6));
    const auto y = ops::layer_norm(Tensor<double>({3}, {1, 2, 3}), ones, zeros, 0.0);
    CHECK(y.data()[0] == doctest::Approx(-1.0 / sd).epsilon(1e-14));
    CHECK(y.data()[1] == doctest::Approx(0.0));
    CHECK(y.data()[2] == doctest::Approx(1.0 / sd).epsilon(1e-14));

    Rng rng(5);
    auto x = random_tensor<float>({9, 32}, rng, 3.0, false);
    const auto n = ops::layer_norm(x, Tensor<float>::full({32}, 1.0f), Tensor<float>::zeros({32}));
    for (std::size_t r = 0; r < 9; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 32; ++j) mean += n.at({r, j});
      mean /= 32;
      for (std::size_t j = 0; j < 32; ++j) var += (n.at({r, j}) - mean) * (n.at({r, j}) - mean);
      var /= 32;
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(var - 1.0) <= 1e-3);
    }
  }

  TEST_CASE("dropout") {
    Rng rng(7);
    const auto ones = Tensor<float>::full({100000}, 1.0f);
    CHECK(ops::dropout(ones, 0.0, rng, true).node() == ones.node());
    CHECK(ops::dropout(ones, 0.1, rng, false).node() == ones.node());
    const auto d = ops::dropout(ones, 0.1, rng, true);
    const double mean = std::accumulate(d.data().begin(), d.data().end(), 0.0) / 100000.0;
    CHECK(mean >= 0.98);
    CHECK(mean <= 1.02);
    std::size_t zeros = 0;
    for (float v : d.data()) {
      if (v == 0.0f) {
        ++zeros;
      } else {
        CHECK(v == doctest::Approx(1.0 / 0.9));
      }
    }
    CHECK(zeros > 9000);
    CHECK(zeros < 11000);
    CHECK_THROWS_AS(ops::dropout(ones, 1.0, rng, true), ConfigError);
    CHECK_THROWS_AS(ops::dropout(ones, -0.1, rng, true), ConfigError);

    Rng r1(11), r2(11);
    const auto a = ops::dropout(ones, 0.3, r1, true);
    const auto b = ops::dropout(ones, 0.3, r2, true);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }

  TEST_CASE("backward basics") {
    auto x = Tensor<double>::scalar(3.0, true);
    auto y = Tensor<double>::scalar(5.0, true);
    auto unused = Tensor<double>::scalar(1.0, true);
    backward(ops::mul(x, y));
    CHECK(x.grad()[0] == 5.0);
    CHECK(y.grad()[0] == 3.0);
    CHECK(unused.grad()[0] == 0.0);
    CHECK_THROWS_AS(backward(ops::add(Tensor<double>::zeros({2}, true), Tensor<double>::zeros({2}))), ShapeError);
  }

  TEST_CASE("backward frees the graph of a deep chain") {
    auto x = Tensor<double>::scalar(1.0, true);
    auto y = x;
    for (int i = 0; i < 20000; ++i) y = ops::scale(y, 1.0);
    backward(y);
    CHECK(x.grad()[0] == 1.0);
    CHECK(y.node()->parents.empty());
  }

  TEST_CASE("softmax + cross-entropy gradient is p - onehot") {
    Rng rng(13);
    auto logits = random_tensor({4, 6}, rng);
    const std::vector<std::int32_t> targets{0, 5, 2, 2};
    backward(ops::cross_entropy(logits, targets));
    const auto p = ops::softmax(logits.detach());
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t j = 0; j < 6; ++j) {
        const double expected = (p.at({r, j}) - (static_cast<std::int32_t>(j) == targets[r] ? 1.0 : 0.0)) / 4.0;
        CHECK(logits.grad()[r * 6 + j] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
    auto res = gradcheck({logits}, [&] { return ops::cross_entropy(logits, targets); });
    CHECK(res.max_rel <= kGradTol);
  }

  TEST_CASE("cross-entropy values") {
    const std::vector<std::int32_t> t{0, 0};
    const auto loss = ops::cross_entropy_from_probabilities(Tensor<double>({2, 2}, {1.0, 0.0, 0.5, 0.5}), t);
    const double oracle = (0.0 + std::log(2.0)) / 2.0;
    CHECK(std::abs(oracle - 0.346574) < 5e-7);
    CHECK(loss.item() == doctest::Approx(oracle).epsilon(1e-14));

    std::size_t clamped = 0;
    const auto floored =
        ops::cross_entropy_from_probabilities(Tensor<double>({1, 2}, {0.0, 1.0}), std::vector<std::int32_t>{0}, &clamped);
    CHECK(clamped == 1);
    CHECK(std::isfinite(floored.item()));
    CHECK(floored.item() == doctest::Approx(-std::log(std::numeric_limits<double>::min())));
  }

  TEST_CASE("clip_global_norm") {
    ParameterList<double> params{{"w", Tensor<double>({2}, {0.0, 0.0}, true)}};
    params[0].tensor.grad()[0] = 0.3;
    params[0].tensor.grad()[1] = 0.4;
    auto r = ops::clip_global_norm(params, 0.1);
    CHECK(r.norm == doctest::Approx(0.5));
    CHECK(r.clipped);
    CHECK(params[0].tensor.grad()[0] == doctest::Approx(0.06).epsilon(1e-15));
    CHECK(params[0].tensor.grad()[1] == doctest::Approx(0.08).epsilon(1e-15));

    params[0].tensor.grad()[0] = 0.03;
    params[0].tensor.grad()[1] = 0.04;
    r = ops::clip_global_norm(params, 0.1);
    CHECK_FALSE(r.clipped);
    CHECK(params[0].tensor.grad()[0] == 0.03);

    params[0].tensor.zero_grad();
    r = ops::clip_global_norm(params, 0.1);
    CHECK(r.norm == 0.0);

    // Property: the clipped norm never exceeds the cap.
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      ParameterList<float> ps;
      for (int k = 0; k < 3; ++k) {
        auto t = random_tensor<float>({5}, rng, 1.0, true);
        for (std::size_t i = 0; i < 5; ++i) t.grad()[i] = static_cast<float>(10.0 * standard_normal(rng));
        ps.push_back({"p" + std::to_string(k), t});
      }
      ops::clip_global_norm(ps, 0.1);
      double sq = 0.0;
      for (const auto& p : ps)
        for (float g : p.tensor.grad()) sq += double(g) * g;
      CHECK(std::sqrt(sq) <= 0.1 + 1e-7);
    }
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("matmul and bmm") {
    Rng rng(21);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto bt = random_tensor({2, 4}, rng);
    auto at = random_tensor({4, 3}, rng);
    CHECK(gradcheck({a, b}, [&] { return probe(ops::matmul(a, b)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a, bt}, [&] { return probe(ops::matmul(a, bt, false, true)); }).max_rel <= kGradTol);
    CHECK(gradcheck({at, b}, [&] { return probe(ops::matmul(at, b, true, false)); }).max_rel <= kGradTol);
    CHECK(gradcheck({at, bt}, [&] { return probe(ops::matmul(at, bt, true, true)); }).max_rel <= kGradTol);

    auto x = random_tensor({2, 3, 4}, rng);
    auto y = random_tensor({2, 4, 5}, rng);
    auto yt = random_tensor({2, 5, 4}, rng);
    CHECK(gradcheck({x, y}, [&] { return probe(ops::bmm(x, y)); }).max_rel <= kGradTol);
    CHECK(gradcheck({x, yt}, [&] { return probe(ops::bmm(x, yt, true)); }).max_rel <= kGradTol);
  }

  TEST_CASE("linear and elementwise") {
    Rng rng(22);
    auto x = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto bias = random_tensor({5}, rng);
    CHECK(gradcheck({x, w, bias}, [&] { return probe(ops::linear(x, w, bias)); }).max_rel <= kGradTol);
    CHECK(gradcheck({x, w}, [&] { return probe(ops::linear(x, w)); }).max_rel <= kGradTol);

    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng);
    CHECK(gradcheck({a, b}, [&] { return probe(ops::add(a, b)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a, b}, [&] { return probe(ops::sub(a, b)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a, b}, [&] { return probe(ops::mul(a, b)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::mul(a, a)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::scale(a, -1.7)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a, row}, [&] { return probe(ops::add_row(a, row)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::gelu(a)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::sigmoid(a)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::tanh(a)); }).max_rel <= kGradTol);
  }

  TEST_CASE("softmax, masks and layer norm") {
    Rng rng(23);
    auto s = random_tensor({2, 3, 5}, rng);
    CHECK(gradcheck({s}, [&] { return probe(ops::softmax(s, -1)); }).max_rel <= kGradTol);
    CHECK(gradcheck({s}, [&] { return probe(ops::softmax(s, 1)); }).max_rel <= kGradTol);
    CHECK(gradcheck({s}, [&] { return probe(ops::softmax(ops::causal_mask(s), -1)); }).max_rel <= kGradTol);
    CHECK(gradcheck({s}, [&] { return probe(ops::rel_shift(s)); }).max_rel <= kGradTol);
    CHECK(gradcheck({s}, [&] { return probe(ops::masked_softmax(s, 0.7)); }).max_rel <= kGradTol);
    auto d = random_tensor({2, 3, 5}, rng);
    CHECK(gradcheck({s, d}, [&] { return probe(ops::relative_softmax(s, d, 0.7)); }).max_rel <= kGradTol);

    auto x = random_tensor({3, 6}, rng);
    auto gain = random_tensor({6}, rng);
    auto bias = random_tensor({6}, rng);
    CHECK(gradcheck({x, gain, bias}, [&] { return probe(ops::layer_norm(x, gain, bias)); }).max_rel <= kGradTol);
  }

  TEST_CASE("dropout with a replayed mask") {
    Rng rng(24);
    auto x = random_tensor({4, 5}, rng);
    CHECK(gradcheck({x}, [&] {
            Rng mask_rng(5);
            return probe(ops::dropout(x, 0.4, mask_rng, true));
          }).max_rel <= kGradTol);
  }

  TEST_CASE("indexing and shape ops") {
    Rng rng(25);
    auto table = random_tensor({7, 3}, rng);
    const std::vector<std::int32_t> ids{3, 0, 3, 6};
    CHECK(gradcheck({table}, [&] { return probe(ops::embedding(ids, table)); }).max_rel <= kGradTol);

    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 1, 4}, rng);
    CHECK(gradcheck({a, b}, [&] { return probe(ops::concat<double>({a, b}, 1)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::slice(a, 2, 1, 2)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::reshape(a, {6, 4})); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::permute(a, {2, 0, 1})); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return probe(ops::permute(a, {1, 0, 2})); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return ops::sum(ops::mul(a, a)); }).max_rel <= kGradTol);
    CHECK(gradcheck({a}, [&] { return ops::mean(ops::mul(a, a)); }).max_rel <= kGradTol);
  }

  TEST_CASE("losses") {
    Rng rng(26);
    auto logits = random_tensor({5, 4}, rng);
    const std::vector<std::int32_t> t{1, 3, 0, 0, 2};
    CHECK(gradcheck({logits}, [&] { return ops::cross_entropy(logits, t); }).max_rel <= kGradTol);
    auto raw = random_tensor({5, 4}, rng);
    CHECK(gradcheck({raw}, [&] { return ops::cross_entropy_from_probabilities(ops::softmax(raw), t); }).max_rel <=
          kGradTol);
  }

  TEST_CASE("lstm pointwise pieces") {
    Rng rng(27);
    auto pre = random_tensor({2, 12}, rng);
    auto c = random_tensor({2, 3}, rng);
    CHECK(gradcheck({pre, c}, [&] { return probe(ops::lstm_cell_state(pre, c)); }).max_rel <= kGradTol);
    CHECK(gradcheck({pre, c}, [&] {
            return probe(ops::lstm_cell_output(pre, ops::lstm_cell_state(pre, c)));
          }).max_rel <= kGradTol);
  }
}
