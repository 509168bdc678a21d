// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensors with reverse-mode autodiff. Every op returns a Var
// whose node keeps its inputs and a backward closure; backward() walks the
// graph reachable from a scalar root.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace normcl {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view; rank must be 2.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

// Leaf that receives gradients.
Var parameter(Tensor value);
// Leaf that never receives gradients.
Var constant(Tensor value);

// While alive, ops on this thread do not record backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Kernels. All operate on rank-2 tensors.
Var matmul(const Var& a, const Var& b);
// b may have the shape of a, or be a single row broadcast over a's rows.
Var add(const Var& a, const Var& b);
Var multiply(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-6);
Var relu(const Var& a);
Var embedding_lookup(const Var& table, std::span<const std::int32_t> ids);
// Per-row negative log-likelihood (rows x 1) of the target column under a
// log-softmax of each logits row. label_smoothing mixes in the uniform target.
Var cross_entropy_rows(const Var& logits, std::span<const std::int32_t> targets,
                       double label_smoothing = 0.0);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin,
          std::size_t col_end);
Var transpose(const Var& a);
Var sum(const Var& a);

// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
// Intermediate gradients are reset on each call, so two calls from two heads
// sum their contributions on the leaves.
void backward(const Var& root);

// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// numeric being the central difference with step h.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h = 1e-5);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, AdamConfig config = {});

  // Throws TrainingAborted when a gradient is not finite.
  void step(double lr);
  void zero_grad();

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  const AdamConfig& config() const { return config_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Var> params_;
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

// Inverse square-root schedule with linear warmup: peak * min(t/warmup, sqrt(warmup/t)).
double lr_schedule(std::uint64_t step, std::uint64_t warmup, double peak);

}  // namespace normcl
