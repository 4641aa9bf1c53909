// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctcadapt/ctcadapt.hpp"

namespace testing_support {

using ctcadapt::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, ctcadapt::Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ctcadapt::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Weighted sum with fixed random weights, so every output element matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  return ctcadapt::sum(ctcadapt::mul(y, random_tensor(rng, y.shape())));
}

inline ctcadapt::ModelConfig toy_config() {
  ctcadapt::ModelConfig mc;
  mc.num_layers = 1;
  mc.d_model = 4;
  mc.num_heads = 1;
  mc.d_ffn = 8;
  mc.vocab_size = 3;
  mc.max_seq_len = 64;
  mc.frontend.kind = ctcadapt::FrontendKind::identity;
  return mc;
}

inline ctcadapt::ModelConfig small_config(std::size_t layers = 2) {
  ctcadapt::ModelConfig mc;
  mc.num_layers = layers;
  mc.d_model = 8;
  mc.num_heads = 2;
  mc.d_ffn = 16;
  mc.vocab_size = 4;
  mc.max_seq_len = 64;
  mc.frontend.kind = ctcadapt::FrontendKind::identity;
  return mc;
}

// Max relative finite-difference error of every differentiable op on random
// inputs drawn from `rng`, dims <= 6.
inline std::vector<std::pair<std::string, double>> op_gradient_errors(std::mt19937_64& rng, double h = 1e-5) {
  using namespace ctcadapt;
  const std::size_t m = uniform_size(rng, 1, 5);
  const std::size_t k = uniform_size(rng, 1, 6);
  const std::size_t n = uniform_size(rng, 1, 5);
  Tensor a = random_tensor(rng, {m, k});
  Tensor b = random_tensor(rng, {k, n});
  Tensor c = random_tensor(rng, {m, k});
  Tensor bias = random_tensor(rng, {n});
  // Width 2 normalizes every row to +-1, so the input gradient is zero up to
  // eps and the relative error measures only finite-difference noise.
  const std::size_t kn = uniform_size(rng, 3, 8);
  Tensor ln_in = random_tensor(rng, {m, kn});
  Tensor gamma = random_tensor(rng, {kn}, 0.5, 1.5);
  Tensor beta = random_tensor(rng, {kn});
  // relu away from its kink.
  Tensor r = random_tensor(rng, {m, k});
  for (double& v : r.data()) v = v >= 0 ? v + 0.1 : v - 0.1;

  std::vector<std::pair<std::string, double>> out;
  auto check = [&](const char* name, const std::function<Tensor()>& f, std::vector<Tensor> params) {
    out.emplace_back(name, finite_diff_check(f, std::move(params), h));
  };
  check("matmul", [&] { return probe(matmul(a, b)); }, {a, b});
  check("affine", [&] { return probe(affine(a, b, bias)); }, {a, b, bias});
  check("transpose", [&] { return probe(transpose(a)); }, {a});
  check("add", [&] { return probe(add(a, c)); }, {a, c});
  check("sub", [&] { return probe(sub(a, c)); }, {a, c});
  check("mul", [&] { return probe(mul(a, c)); }, {a, c});
  check("scale", [&] { return probe(scale(a, -1.7)); }, {a});
  check("sum", [&] { return sum(a); }, {a});
  check("relu", [&] { return probe(relu(r)); }, {r});
  check("gelu", [&] { return probe(gelu(a)); }, {a});
  check("softmax", [&] { return probe(softmax(a)); }, {a});
  check("log_softmax", [&] { return probe(log_softmax(a)); }, {a});
  check("layer_norm", [&] { return probe(layer_norm(ln_in, gamma, beta, 1e-5)); }, {ln_in, gamma, beta});
  if (k >= 2) check("slice_cols", [&] { return probe(slice_cols(a, 1, k - 1)); }, {a});
  if (m >= 2) check("slice_rows", [&] { return probe(slice_rows(a, 1, m - 1)); }, {a});
  check("concat_cols", [&] { return probe(concat_cols({a, c})); }, {a, c});
  const std::size_t kernel = std::min<std::size_t>(m, 2);
  check("unfold_rows", [&] { return probe(unfold_rows(a, kernel, 1)); }, {a});
  return out;
}

struct CompositeGradient {
  double max_rel_error = 0.0;    // every parameter except attention key biases
  double key_bias_max_abs = 0.0;  // softmax is shift-invariant per row: exactly zero
};

// One block with both adapters (non-zero up-projections), head and CTC loss.
inline CompositeGradient composite_gradient_check(std::uint64_t seed = 10, double h = 1e-5) {
  using namespace ctcadapt;
  ModelConfig mc = toy_config();
  mc.num_heads = 2;
  mc.d_ffn = 6;
  Model m = build_model(mc, AdapterConfig::all_layers(1, 2), 5);
  std::mt19937_64 rng(seed);
  std::vector<Tensor> checked;
  std::vector<Tensor> key_biases;
  for (auto& p : m.parameters()) {
    if (p.info.group == ParamGroup::adapter)
      for (double& v : p.tensor.data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    if (p.path().ends_with("attn.k.bias")) {
      key_biases.push_back(p.tensor);
    } else {
      checked.push_back(p.tensor);
    }
  }
  const Tensor x = random_tensor(rng, {5, mc.d_model}, -1, 1);
  const LabelSeq target = {0, 2};
  auto loss = [&] { return ctc_loss(log_softmax(forward(m, x)), target); };

  CompositeGradient out;
  out.max_rel_error = finite_diff_check(loss, checked, h);
  for (auto& b : key_biases) {
    b.set_requires_grad(true);
    b.zero_grad();
  }
  backward(loss());
  for (auto& b : key_biases) {
    for (double g : b.grad()) out.key_bias_max_abs = std::max(out.key_bias_max_abs, std::abs(g));
    b.zero_grad();
  }
  return out;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace testing_support
