// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels.h"

#include <algorithm>
#include <cmath>
#include <map>

namespace normcl::testing {

Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

namespace {

// Contracts an arbitrary output with fixed random weights so every output
// element contributes to the checked gradient.
Var contract(const Var& y, const Tensor& w) { return sum(multiply(y, constant(w))); }

Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

}  // namespace

std::vector<KernelProbe> kernel_probes(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
  std::vector<KernelProbe> out;

  {
    const Tensor b = random_tensor(c, k, rng), w = random_tensor(r, k, rng);
    out.push_back({"matmul", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(matmul(x, constant(b)), w); }});
    const Tensor a = random_tensor(r, c, rng);
    out.push_back({"matmul", random_tensor(c, k, rng),
                   [=](const Var& x) { return contract(matmul(constant(a), x), w); }});
  }
  {
    const Tensor b = random_tensor(r, c, rng), row = random_tensor(1, c, rng),
                 w = random_tensor(r, c, rng), big = random_tensor(r, c, rng);
    out.push_back({"add", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(add(x, constant(b)), w); }});
    out.push_back({"add", random_tensor(1, c, rng),
                   [=](const Var& x) { return contract(add(constant(big), x), w); }});
    out.push_back({"multiply", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(multiply(x, constant(b)), w); }});
    out.push_back({"multiply", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(multiply(x, x), w); }});
    out.push_back({"scale", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(scale(x, -1.7), w); }});
    out.push_back({"softmax", random_tensor(r, c, rng),
                   [=](const Var& x) { return contract(softmax_rows(x), w); }});
    out.push_back({"relu", away_from_zero(r, c, rng),
                   [=](const Var& x) { return contract(relu(x), w); }});
    out.push_back({"transpose", random_tensor(c, r, rng),
                   [=](const Var& x) { return contract(transpose(x), w); }});
    out.push_back({"sum", random_tensor(r, c, rng), [](const Var& x) { return sum(x); }});
  }
  {
    const std::size_t cc = c + 2;
    const Tensor gain = random_tensor(1, cc, rng), bias = random_tensor(1, cc, rng),
                 x0 = random_tensor(r, cc, rng), w = random_tensor(r, cc, rng);
    out.push_back({"layer_norm", x0, [=](const Var& x) {
                     return contract(layer_norm(x, constant(gain), constant(bias)), w);
                   }});
    out.push_back({"layer_norm", gain, [=](const Var& g) {
                     return contract(layer_norm(constant(x0), g, constant(bias)), w);
                   }});
    out.push_back({"layer_norm", bias, [=](const Var& b) {
                     return contract(layer_norm(constant(x0), constant(gain), b), w);
                   }});
  }
  {
    const std::size_t vocab = k + 2;
    std::uniform_int_distribution<std::int32_t> id(0, static_cast<std::int32_t>(vocab - 1));
    std::vector<std::int32_t> ids(r);
    for (auto& v : ids) v = id(rng);
    const Tensor w = random_tensor(r, c, rng);
    out.push_back({"embedding_lookup", random_tensor(vocab, c, rng),
                   [=](const Var& x) { return contract(embedding_lookup(x, ids), w); }});
    const Tensor rw = random_tensor(r, 1, rng);
    out.push_back({"cross_entropy", random_tensor(r, vocab, rng),
                   [=](const Var& x) { return contract(cross_entropy_rows(x, ids), rw); }});
    out.push_back({"cross_entropy", random_tensor(r, vocab, rng),
                   [=](const Var& x) { return contract(cross_entropy_rows(x, ids, 0.1), rw); }});
  }
  {
    const Tensor other = random_tensor(k, c, rng), w0 = random_tensor(r + k, c, rng);
    out.push_back({"concat", random_tensor(r, c, rng), [=](const Var& x) {
                     return contract(concat({x, constant(other)}, 0), w0);
                   }});
    const Tensor side = random_tensor(r, k, rng), w1 = random_tensor(r, c + k, rng);
    out.push_back({"concat", random_tensor(r, c, rng), [=](const Var& x) {
                     return contract(concat({x, constant(side)}, 1), w1);
                   }});
  }
  {
    const std::size_t rows = r + 2, cols = c + 2;
    const Tensor w = random_tensor(r, c, rng);
    out.push_back({"slice", random_tensor(rows, cols, rng),
                   [=](const Var& x) { return contract(slice(x, 1, 1 + r, 2, 2 + c), w); }});
  }
  return out;
}

std::vector<std::pair<std::string, double>> kernel_grad_errors(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, double> worst;
  for (int t = 0; t < trials; ++t)
    for (const auto& p : kernel_probes(rng)) {
      double& w = worst[p.kernel];
      w = std::max(w, grad_check(p.f, p.x));
    }
  return {worst.begin(), worst.end()};
}

double model_grad_error(const Transformer& model, const Batch& batch,
                        std::span<const double> weights, double h) {
  for (const auto& p : model.parameters()) p->grad_buffer().fill(0.0);
  backward(model.forward_loss(batch, weights).loss);
  NoGradGuard guard;
  double worst = 0.0;
  for (const auto& p : model.parameters()) {
    const Tensor analytic = p->grad_buffer();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double x = p->value[i];
      p->value[i] = x + h;
      const double fp = model.forward_loss(batch, weights).loss->value[0];
      p->value[i] = x - h;
      const double fm = model.forward_loss(batch, weights).loss->value[0];
      p->value[i] = x;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace normcl::testing
