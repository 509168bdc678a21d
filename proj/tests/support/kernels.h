// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized grad_check probes, one family per differentiable kernel.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "normcl/nmt.h"
#include "normcl/tensor.h"

namespace normcl::testing {

struct KernelProbe {
  std::string kernel;
  Tensor x;
  std::function<Var(const Var&)> f;  // scalar-valued
};

Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0);

// One probe per kernel and argument position, shapes drawn from rng.
std::vector<KernelProbe> kernel_probes(std::mt19937_64& rng);

// Worst relative error per kernel over `trials` rounds of kernel_probes.
std::vector<std::pair<std::string, double>> kernel_grad_errors(int trials, std::uint64_t seed);

// grad_check's relative error taken over every model parameter entry: the
// reverse-mode gradient of forward_loss against central differences.
double model_grad_error(const Transformer& model, const Batch& batch,
                        std::span<const double> weights, double h = 1e-5);

}  // namespace normcl::testing
