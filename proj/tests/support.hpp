#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "codexl/models.hpp"
#include "codexl/ops.hpp"
#include "codexl/random.hpp"
#include "codexl/tensor.hpp"

namespace codexl::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(scale * standard_normal(rng));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

// Σ w⊙t with fixed random weights, so every output element gets a distinct cotangent.
template <typename T>
Tensor<T> probe(const Tensor<T>& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ops::sum(ops::mul(t, random_tensor<T>(t.shape(), rng, 1.0, false)));
}

struct GradCheck {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Compares backward() against central differences for every element of every
// leaf. The relative error denominator is floored at `floor` so gradients
// that are exactly zero compare absolutely.
inline GradCheck gradcheck(const std::vector<Tensor<double>>& leaves,
                           const std::function<Tensor<double>()>& loss_fn, double step = 1e-5,
                           double floor = 1e-6, const std::vector<std::string>& names = {}) {
  for (const auto& l : leaves) l.zero_grad();
  auto loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());

  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    auto data = leaf.mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + step;
      const double up = loss_fn().item();
      data[k] = saved - step;
      const double down = loss_fn().item();
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[li][k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      out.max_abs = std::max(out.max_abs, abs_err);
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = (li < names.size() ? names[li] : "leaf " + std::to_string(li)) + "[" + std::to_string(k) +
                    "] analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline std::vector<Tensor<double>> leaves_of(const LanguageModel<double>& model) {
  std::vector<Tensor<double>> out;
  for (const auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

inline std::vector<std::string> names_of(const LanguageModel<double>& model) {
  std::vector<std::string> out;
  for (const auto& p : model.parameters()) out.push_back(p.name);
  return out;
}

// Moves every parameter off its structured initial value (unit gains, zero biases).
template <typename T>
void jitter(const LanguageModel<T>& model, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (const auto& p : model.parameters()) {
    Tensor<T> t = p.tensor;
    for (auto& v : t.mutable_data()) v = static_cast<T>(v + scale * standard_normal(rng));
  }
}

inline std::vector<std::int32_t> random_ids(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng() % vocab);
  return ids;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("codexl-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace codexl::testing
