// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "normcl/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "normcl/errors.h"

namespace normcl {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  std::size_t n = 1;
  for (auto d : shape_) n *= d;
  if (n != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string());
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for tensor");
    for (double v : row) t.data_[i++] = v;
  }
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
  return shape_[1];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor& Node::grad_buffer() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), std::vector<double>(value.size(), 0.0));
  return grad;
}

// ---------------------------------------------------------------- graph

namespace {

thread_local bool g_grad_enabled = true;

Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Var& v) { return v->requires_grad; });
    if (any) {
      n->requires_grad = true;
      n->inputs = std::move(inputs);
      n->backward = std::move(bw);
    }
  }
  return n;
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

// C[n x m] += A[n x k] * B[k x m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n x k] += G[n x m] * B[k x m]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t k) {
  std::vector<double> bt(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  gemm_nn(g, bt.data(), c, n, m, k);
}

// C[k x m] += A[n x k]^T * G[n x m]
void gemm_tn(const double* a, const double* g, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var parameter(Tensor value) { return make_leaf(std::move(value), true); }
Var constant(Tensor value) { return make_leaf(std::move(value), false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------- kernels

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.cols() != bv.rows()) shape_mismatch("matmul", av, bv);
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(n, m);
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), n, k, m);
  return make_node(std::move(out), {a, b}, [n, k, m](Node& self) {
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    const double* g = self.grad.values().data();
    if (a->requires_grad) {
      gemm_nt(g, b->value.values().data(), a->grad_buffer().values().data(), n, m, k);
    }
    if (b->requires_grad) {
      gemm_tn(a->value.values().data(), g, b->grad_buffer().values().data(), n, k, m);
    }
  });
}

Var add(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  const bool broadcast = !av.same_shape(bv);
  if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols())) shape_mismatch("add", av, bv);
  Tensor out = av;
  const std::size_t n = av.rows(), m = av.cols();
  if (broadcast) {
    for (std::size_t i = 0; i < n; ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < m; ++j) r[j] += bv[j];
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  }
  return make_node(std::move(out), {a, b}, [broadcast, n, m](Node& self) {
    const Tensor& g = self.grad;
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    if (a->requires_grad) {
      Tensor& ga = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad_buffer();
      if (broadcast) {
        for (std::size_t i = 0; i < n; ++i) {
          auto r = g.row(i);
          for (std::size_t j = 0; j < m; ++j) gb[j] += r[j];
        }
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    }
  });
}

Var multiply(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (!av.same_shape(bv)) shape_mismatch("multiply", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad;
    const Var& a = self.inputs[0];
    const Var& b = self.inputs[1];
    if (a->requires_grad) {
      Tensor& ga = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a->value;
  for (auto& v : out.values()) v *= factor;
  return make_node(std::move(out), {a}, [factor](Node& self) {
    Tensor& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a->value;
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = av.row(i);
    auto y = out.row(i);
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[j] /= z;
  }
  return make_node(std::move(out), {a}, [n, m](Node& self) {
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    Tensor& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      auto yi = y.row(i);
      auto gi = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += gi[j] * yi[j];
      auto out = ga.row(i);
      for (std::size_t j = 0; j < m; ++j) out[j] += yi[j] * (gi[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& xv = x->value;
  const std::size_t n = xv.rows(), m = xv.cols();
  const Tensor& gv = gain->value;
  const Tensor& bv = bias->value;
  if (gv.rows() != 1 || gv.cols() != m) shape_mismatch("layer_norm(gain)", xv, gv);
  if (bv.rows() != 1 || bv.cols() != m) shape_mismatch("layer_norm(bias)", xv, bv);
  Tensor normed(n, m);
  std::vector<double> inv_std(n);
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = xv.row(i);
    double mean = std::accumulate(xi.begin(), xi.end(), 0.0) / static_cast<double>(m);
    double var = 0.0;
    for (double v : xi) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    auto hi = normed.row(i);
    auto oi = out.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      hi[j] = (xi[j] - mean) * inv_std[i];
      oi[j] = hi[j] * gv[j] + bv[j];
    }
  }
  return make_node(
      std::move(out), {x, gain, bias},
      [n, m, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        const Tensor& g = self.grad;
        const Var& x = self.inputs[0];
        const Var& gain = self.inputs[1];
        const Var& bias = self.inputs[2];
        if (gain->requires_grad) {
          Tensor& gg = gain->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gg[j] += g(i, j) * normed(i, j);
        }
        if (bias->requires_grad) {
          Tensor& gb = bias->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gb[j] += g(i, j);
        }
        if (x->requires_grad) {
          Tensor& gx = x->grad_buffer();
          std::vector<double> dh(m);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              dh[j] = g(i, j) * gain->value[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * normed(i, j);
            }
            mean_dh /= static_cast<double>(m);
            mean_dh_h /= static_cast<double>(m);
            for (std::size_t j = 0; j < m; ++j)
              gx(i, j) += inv_std[i] * (dh[j] - mean_dh - normed(i, j) * mean_dh_h);
          }
        }
      });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {a}, [](Node& self) {
    const Var& a = self.inputs[0];
    Tensor& ga = a->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (a->value[i] > 0.0) ga[i] += self.grad[i];
  });
}

Var embedding_lookup(const Var& table, std::span<const std::int32_t> ids) {
  const Tensor& tv = table->value;
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Tensor out(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(vocab) + " rows");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return make_node(std::move(out), {table}, [kept = std::move(kept), d](Node& self) {
    Tensor& gt = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < kept.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(kept[i]));
      auto g = self.grad.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
}

Var cross_entropy_rows(const Var& logits, std::span<const std::int32_t> targets,
                       double label_smoothing) {
  const Tensor& lv = logits->value;
  const std::size_t n = lv.rows(), m = lv.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) +
                     " targets for logits " + lv.shape_string());
  }
  Tensor probs(n, m);
  Tensor out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= m) {
      throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " outside " +
                       std::to_string(m) + " classes");
    }
    auto z = lv.row(i);
    auto p = probs.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (p[j] = std::exp(z[j] - mx));
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) p[j] /= s;
    double nll = lse - z[static_cast<std::size_t>(t)];
    if (label_smoothing > 0.0) {
      const double mean_z = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(m);
      nll = (1.0 - label_smoothing) * nll + label_smoothing * (lse - mean_z);
    }
    out(i, 0) = nll;
  }
  std::vector<std::int32_t> kept(targets.begin(), targets.end());
  return make_node(std::move(out), {logits},
                   [probs = std::move(probs), kept = std::move(kept), n, m,
                    label_smoothing](Node& self) {
                     Tensor& gl = self.inputs[0]->grad_buffer();
                     const double uniform = label_smoothing / static_cast<double>(m);
                     for (std::size_t i = 0; i < n; ++i) {
                       const double g = self.grad(i, 0);
                       auto p = probs.row(i);
                       auto dst = gl.row(i);
                       for (std::size_t j = 0; j < m; ++j) dst[j] += g * (p[j] - uniform);
                       dst[static_cast<std::size_t>(kept[i])] -= g * (1.0 - label_smoothing);
                     }
                   });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = parts.front()->value;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    const Tensor& v = p->value;
    if (axis == 0) {
      if (v.cols() != first.cols()) shape_mismatch("concat", first, v);
      rows += v.rows();
    } else {
      if (v.rows() != first.rows()) shape_mismatch("concat", first, v);
      cols += v.cols();
    }
  }
  if (axis == 0) cols = first.cols();
  else rows = first.rows();
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& v = p->value;
    for (std::size_t i = 0; i < v.rows(); ++i) {
      auto src = v.row(i);
      double* dst = axis == 0 ? out.row(offset + i).data() : out.row(i).data() + offset;
      std::copy(src.begin(), src.end(), dst);
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  return make_node(std::move(out), parts, [axis](Node& self) {
    std::size_t offset = 0;
    for (const auto& p : self.inputs) {
      const std::size_t r = p->value.rows(), c = p->value.cols();
      if (p->requires_grad) {
        Tensor& gp = p->grad_buffer();
        for (std::size_t i = 0; i < r; ++i) {
          const double* src =
              axis == 0 ? self.grad.row(offset + i).data() : self.grad.row(i).data() + offset;
          auto dst = gp.row(i);
          for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
      offset += axis == 0 ? r : c;
    }
  });
}

Var slice(const Var& a, std::size_t row_begin, std::size_t row_end, std::size_t col_begin,
          std::size_t col_end) {
  const Tensor& av = a->value;
  if (row_begin >= row_end || col_begin >= col_end || row_end > av.rows() ||
      col_end > av.cols()) {
    throw ShapeError("slice: range [" + std::to_string(row_begin) + "," +
                     std::to_string(row_end) + ")x[" + std::to_string(col_begin) + "," +
                     std::to_string(col_end) + ") outside " + av.shape_string());
  }
  const std::size_t r = row_end - row_begin, c = col_end - col_begin;
  Tensor out(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    auto src = av.row(row_begin + i).subspan(col_begin, c);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return make_node(std::move(out), {a}, [row_begin, col_begin, r, c](Node& self) {
    Tensor& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      auto g = self.grad.row(i);
      auto dst = ga.row(row_begin + i).subspan(col_begin, c);
      for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
    }
  });
}

Var transpose(const Var& a) {
  const Tensor& av = a->value;
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(j, i) = av(i, j);
  return make_node(std::move(out), {a}, [n, m](Node& self) {
    Tensor& ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += self.grad(j, i);
  });
}

Var sum(const Var& a) {
  const auto vals = a->value.values();
  Tensor out(1, 1, std::accumulate(vals.begin(), vals.end(), 0.0));
  return make_node(std::move(out), {a}, [](Node& self) {
    Tensor& ga = self.inputs[0]->grad_buffer();
    const double g = self.grad[0];
    for (auto& v : ga.values()) v += g;
  });
}

// ---------------------------------------------------------------- backward

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw ContractViolation("backward: root must be scalar, got " + root->value.shape_string());
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad_buffer().fill(0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  Var leaf = parameter(x);
  Var y = f(leaf);
  if (y->value.size() != 1) {
    throw ContractViolation("grad_check: function output must be scalar, got " +
                            y->value.shape_string());
  }
  backward(y);
  const Tensor analytic = leaf->grad_buffer();

  NoGradGuard guard;
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(constant(probe))->value[0];
    probe[i] = x[i] - h;
    const double fm = f(constant(probe))->value[0];
    probe[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Var> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape(), std::vector<double>(p->value.size(), 0.0));
    v_.emplace_back(p->value.shape(), std::vector<double>(p->value.size(), 0.0));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad_buffer().fill(0.0);
}

void Adam::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    for (double g : params_[k]->grad_buffer().values()) {
      if (!std::isfinite(g)) {
        throw TrainingAborted("adam: non-finite gradient in parameter " + std::to_string(k) +
                              " at optimizer step " + std::to_string(steps_ + 1));
      }
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto theta = params_[k]->value.values();
    auto g = params_[k]->grad_buffer().values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double lr_schedule(std::uint64_t step, std::uint64_t warmup, double peak) {
  if (step < 1 || warmup < 1) throw ConfigError("lr_schedule: step and warmup must be >= 1");
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return peak * std::min(t / w, std::sqrt(w / t));
}

}  // namespace normcl
