// SPDX-License-Identifier: Apache-2.0
#include "echo/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace echo {

namespace {

void require_cols(const Matrix& a, const Matrix& b, const char* op) {
  if (a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": column mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
}

void axpy(Matrix& dst, const Matrix& src, double alpha = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

}  // namespace

// --- recording -------------------------------------------------------------

Var Tape::push(Node node) {
  std::vector<const Matrix*> in;
  in.reserve(node.inputs.size());
  for (auto id : node.inputs) {
    in.push_back(&nodes_[id].value);
    node.needs_grad = node.needs_grad || nodes_[id].needs_grad;
  }
  node.value = evaluate_with(node, in);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(const std::string& name, Matrix value) {
  if (params_.contains(name)) throw ContractError("duplicate parameter on tape: " + name);
  Node n;
  n.needs_grad = true;
  n.value = std::move(value);
  n.name = name;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  params_.emplace(name, id);
  return Var{id};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::matmul(Var a, Var b) { return push({.op = Op::matmul, .inputs = {a.id, b.id}}); }
Var Tape::add(Var a, Var b) { return push({.op = Op::add, .inputs = {a.id, b.id}}); }
Var Tape::sub(Var a, Var b) { return push({.op = Op::sub, .inputs = {a.id, b.id}}); }
Var Tape::hadamard(Var a, Var b) { return push({.op = Op::hadamard, .inputs = {a.id, b.id}}); }
Var Tape::add_bias(Var x, Var b) { return push({.op = Op::add_bias, .inputs = {x.id, b.id}}); }
Var Tape::sigmoid(Var a) { return push({.op = Op::sigmoid, .inputs = {a.id}}); }
Var Tape::tanh(Var a) { return push({.op = Op::tanh, .inputs = {a.id}}); }
Var Tape::scale(Var a, double factor) {
  return push({.op = Op::scale, .inputs = {a.id}, .factor = factor});
}
Var Tape::embedding(Var table, std::vector<std::size_t> ids) {
  return push({.op = Op::embedding, .inputs = {table.id}, .ids = std::move(ids)});
}
Var Tape::stack_rows(std::span<const Var> rows) {
  Node n{.op = Op::stack_rows};
  for (auto r : rows) n.inputs.push_back(r.id);
  return push(std::move(n));
}
Var Tape::softmax_columns(Var a) { return push({.op = Op::softmax_columns, .inputs = {a.id}}); }
Var Tape::row(Var a, std::size_t r) { return push({.op = Op::row, .inputs = {a.id}, .ids = {r}}); }
Var Tape::scale_columns(Var x, Var w) {
  return push({.op = Op::scale_columns, .inputs = {x.id, w.id}});
}
Var Tape::column_dot(Var a, Var b) { return push({.op = Op::column_dot, .inputs = {a.id, b.id}}); }
Var Tape::sum(Var a) { return push({.op = Op::sum, .inputs = {a.id}}); }
Var Tape::softmax_xent(Var logits, std::vector<std::size_t> labels, double factor) {
  return push(
      {.op = Op::softmax_xent, .inputs = {logits.id}, .ids = std::move(labels), .factor = factor});
}

Var Tape::output() const {
  if (!has_output_) throw ContractError("tape has no output node");
  return Var{output_};
}

void Tape::mark_hidden(std::size_t t, Var v) {
  if (!capture_hidden_) return;
  if (t != hidden_.size())
    throw ContractError("hidden states must be marked in order; expected t=" +
                        std::to_string(hidden_.size()) + ", got " + std::to_string(t));
  hidden_.push_back(v);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

// --- forward ---------------------------------------------------------------

Matrix Tape::evaluate(const Node& node) const {
  std::vector<const Matrix*> in;
  for (auto id : node.inputs) in.push_back(&nodes_[id].value);
  return evaluate_with(node, in);
}

Matrix Tape::evaluate_with(const Node& node, std::span<const Matrix* const> in) const {
  switch (node.op) {
    case Op::leaf:
      return node.value;
    case Op::matmul:
      return echo::matmul(*in[0], *in[1]);
    case Op::add:
      return echo::add(*in[0], *in[1]);
    case Op::sub:
      return echo::sub(*in[0], *in[1]);
    case Op::hadamard:
      return echo::hadamard(*in[0], *in[1]);
    case Op::add_bias: {
      const Matrix& x = *in[0];
      const Matrix& b = *in[1];
      if (b.cols() != 1 || b.rows() != x.rows())
        throw ShapeError("add_bias: bias " + b.shape_string() + " does not fit " +
                         x.shape_string());
      Matrix out = x;
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += b[i];
      return out;
    }
    case Op::sigmoid:
      return echo::sigmoid(*in[0]);
    case Op::tanh:
      return echo::tanh(*in[0]);
    case Op::scale:
      return echo::scale(*in[0], node.factor);
    case Op::embedding: {
      const Matrix& table = *in[0];
      if (node.ids.empty()) throw ShapeError("embedding: empty id list");
      Matrix out(table.rows(), node.ids.size());
      for (std::size_t j = 0; j < node.ids.size(); ++j) {
        if (node.ids[j] >= table.cols())
          throw DataError("embedding: id " + std::to_string(node.ids[j]) +
                          " outside vocabulary of " + std::to_string(table.cols()));
        for (std::size_t i = 0; i < table.rows(); ++i) out(i, j) = table(i, node.ids[j]);
      }
      return out;
    }
    case Op::stack_rows: {
      if (in.empty()) throw ShapeError("stack_rows: no rows");
      const std::size_t b = in[0]->cols();
      Matrix out(in.size(), b);
      for (std::size_t t = 0; t < in.size(); ++t) {
        if (in[t]->rows() != 1 || in[t]->cols() != b)
          throw ShapeError("stack_rows: expected 1x" + std::to_string(b) + ", got " +
                           in[t]->shape_string());
        for (std::size_t j = 0; j < b; ++j) out(t, j) = (*in[t])[j];
      }
      return out;
    }
    case Op::softmax_columns:
      return echo::softmax_columns(*in[0]);
    case Op::row: {
      const Matrix& a = *in[0];
      const std::size_t r = node.ids.at(0);
      if (r >= a.rows()) throw ShapeError("row: index out of range for " + a.shape_string());
      Matrix out(1, a.cols());
      for (std::size_t j = 0; j < a.cols(); ++j) out[j] = a(r, j);
      return out;
    }
    case Op::scale_columns: {
      const Matrix& x = *in[0];
      const Matrix& w = *in[1];
      require_cols(x, w, "scale_columns");
      if (w.rows() != 1) throw ShapeError("scale_columns: weights must be a single row");
      Matrix out = x;
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= w[j];
      return out;
    }
    case Op::column_dot: {
      const Matrix& a = *in[0];
      const Matrix& b = *in[1];
      if (!a.same_shape(b))
        throw ShapeError("column_dot: shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
      Matrix out(1, a.cols());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j) * b(i, j);
      return out;
    }
    case Op::sum:
      return Matrix(1, 1, echo::sum(*in[0]));
    case Op::softmax_xent: {
      const Matrix& z = *in[0];
      if (node.ids.size() != z.cols())
        throw ShapeError("softmax_xent: " + std::to_string(node.ids.size()) + " labels for " +
                         z.shape_string() + " logits");
      double loss = 0.0;
      Vector col(z.rows());
      for (std::size_t j = 0; j < z.cols(); ++j) {
        if (node.ids[j] >= z.rows())
          throw DataError("label " + std::to_string(node.ids[j]) + " out of range for " +
                          std::to_string(z.rows()) + " classes");
        for (std::size_t i = 0; i < z.rows(); ++i) col[i] = z(i, j);
        loss += log_sum_exp(col) - col[node.ids[j]];
      }
      return Matrix(1, 1, node.factor * loss);
    }
  }
  throw ContractError("unknown tape op");
}

double Tape::replay_deviation() const {
  std::vector<Matrix> replayed(nodes_.size());
  double worst = 0.0;
  std::vector<const Matrix*> in;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op == Op::leaf) {
      replayed[id] = n.value;
      continue;
    }
    in.clear();
    for (auto i : n.inputs) in.push_back(&replayed[i]);
    replayed[id] = evaluate_with(n, in);
    auto a = replayed[id].data();
    auto b = n.value.data();
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return worst;
}

// --- reverse ---------------------------------------------------------------

Matrix& Tape::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::propagate(std::uint32_t id) {
  const Node& n = nodes_[id];
  if (n.op == Op::leaf || n.grad.empty()) return;
  const Matrix& g = n.grad;
  const Matrix& y = n.value;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };

  switch (n.op) {
    case Op::leaf:
      return;
    case Op::matmul: {
      const Matrix& a = nodes_[n.inputs[0]].value;
      const Matrix& b = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        Matrix& da = grad_slot(n.inputs[0]);
        kernels::gemm_nt(a.rows(), a.cols(), b.cols(), g.data().data(), b.data().data(),
                         da.data().data(), default_exec());
      }
      if (wants(1)) {
        Matrix& db = grad_slot(n.inputs[1]);
        kernels::gemm_tn(b.rows(), b.cols(), a.rows(), a.data().data(), g.data().data(),
                         db.data().data(), default_exec());
      }
      return;
    }
    case Op::add:
      if (wants(0)) axpy(grad_slot(n.inputs[0]), g);
      if (wants(1)) axpy(grad_slot(n.inputs[1]), g);
      return;
    case Op::sub:
      if (wants(0)) axpy(grad_slot(n.inputs[0]), g);
      if (wants(1)) axpy(grad_slot(n.inputs[1]), g, -1.0);
      return;
    case Op::hadamard: {
      const Matrix& a = nodes_[n.inputs[0]].value;
      const Matrix& b = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        auto da = grad_slot(n.inputs[0]).data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto db = grad_slot(n.inputs[1]).data();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * a[i];
      }
      return;
    }
    case Op::add_bias:
      if (wants(0)) axpy(grad_slot(n.inputs[0]), g);
      if (wants(1)) {
        Matrix& db = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) db[i] += g(i, j);
      }
      return;
    case Op::sigmoid: {
      auto da = grad_slot(n.inputs[0]).data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::tanh: {
      auto da = grad_slot(n.inputs[0]).data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::scale:
      axpy(grad_slot(n.inputs[0]), g, n.factor);
      return;
    case Op::embedding: {
      Matrix& dt = grad_slot(n.inputs[0]);
      for (std::size_t j = 0; j < n.ids.size(); ++j)
        for (std::size_t i = 0; i < dt.rows(); ++i) dt(i, n.ids[j]) += g(i, j);
      return;
    }
    case Op::stack_rows:
      for (std::size_t t = 0; t < n.inputs.size(); ++t) {
        if (!wants(t)) continue;
        auto dr = grad_slot(n.inputs[t]).data();
        for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += g(t, j);
      }
      return;
    case Op::softmax_columns: {
      Matrix& da = grad_slot(n.inputs[0]);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) dot += g(i, j) * y(i, j);
        for (std::size_t i = 0; i < y.rows(); ++i) da(i, j) += y(i, j) * (g(i, j) - dot);
      }
      return;
    }
    case Op::row: {
      Matrix& da = grad_slot(n.inputs[0]);
      const std::size_t r = n.ids[0];
      for (std::size_t j = 0; j < da.cols(); ++j) da(r, j) += g[j];
      return;
    }
    case Op::scale_columns: {
      const Matrix& x = nodes_[n.inputs[0]].value;
      const Matrix& w = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        Matrix& dx = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) += g(i, j) * w[j];
      }
      if (wants(1)) {
        Matrix& dw = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) dw[j] += g(i, j) * x(i, j);
      }
      return;
    }
    case Op::column_dot: {
      const Matrix& a = nodes_[n.inputs[0]].value;
      const Matrix& b = nodes_[n.inputs[1]].value;
      if (wants(0)) {
        Matrix& da = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) da(i, j) += g[j] * b(i, j);
      }
      if (wants(1)) {
        Matrix& db = grad_slot(n.inputs[1]);
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) db(i, j) += g[j] * a(i, j);
      }
      return;
    }
    case Op::sum: {
      auto da = grad_slot(n.inputs[0]).data();
      for (auto& v : da) v += g[0];
      return;
    }
    case Op::softmax_xent: {
      const Matrix& z = nodes_[n.inputs[0]].value;
      Matrix& dz = grad_slot(n.inputs[0]);
      Vector col(z.rows());
      for (std::size_t j = 0; j < z.cols(); ++j) {
        for (std::size_t i = 0; i < z.rows(); ++i) col[i] = z(i, j);
        const Vector p = echo::softmax(col);
        for (std::size_t i = 0; i < z.rows(); ++i)
          dz(i, j) += g[0] * n.factor * (p[i] - (i == n.ids[j] ? 1.0 : 0.0));
      }
      return;
    }
  }
}

void Tape::run_backward() {
  const Var out = output();
  const Matrix& v = nodes_[out.id].value;
  if (v.rows() != 1 || v.cols() != 1)
    throw ContractError("backward requires a scalar output, got " + v.shape_string());
  for (auto& n : nodes_) n.grad = Matrix();
  grad_slot(out.id)[0] = 1.0;
  for (std::uint32_t id = out.id + 1; id-- > 0;) {
    if (nodes_[id].needs_grad) propagate(id);
  }
}

GradientSet Tape::parameter_gradients() const {
  GradientSet grads;
  for (const auto& [name, id] : params_) grads.emplace(name, grad(Var{id}));
  return grads;
}

GradientSet backward(Tape& tape) {
  tape.run_backward();
  return tape.parameter_gradients();
}

Vector hidden_grad_norms(const Tape& tape) {
  const auto hidden = tape.hidden_states();
  if (hidden.empty())
    throw ContractError("hidden_grad_norms: no hidden states were marked on this tape");
  Vector norms;
  norms.reserve(hidden.size());
  for (Var h : hidden) {
    const Matrix g = tape.grad(h);
    double total = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) {
      double sq = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) sq += g(i, j) * g(i, j);
      total += std::sqrt(sq);
    }
    norms.push_back(total / static_cast<double>(g.cols()));
  }
  return norms;
}

double relative_error(double a, double b) noexcept {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace echo
