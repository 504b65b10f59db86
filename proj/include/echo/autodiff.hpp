// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "echo/tensor.hpp"

namespace echo {

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

/// Gradient of the scalar output with respect to every named parameter.
using GradientSet = std::map<std::string, Matrix>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// node's inputs precede it. Each node stores the primitive op, its input
/// ids, op payload and the cached forward value.
class Tape {
 public:
  enum class Op : std::uint8_t {
    leaf,
    matmul,
    add,
    sub,
    hadamard,
    add_bias,
    sigmoid,
    tanh,
    scale,
    embedding,
    stack_rows,
    softmax_columns,
    row,
    scale_columns,
    column_dot,
    sum,
    softmax_xent,
  };

  /// When `capture_hidden` is false, mark_hidden() is a no-op.
  explicit Tape(bool capture_hidden = false) : capture_hidden_(capture_hidden) {}

  /// Learnable leaf. Names must be unique on a tape.
  Var parameter(const std::string& name, Matrix value);
  /// Leaf that takes no gradient (inputs, dropout masks, ...).
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  /// x (n x B) plus bias column b (n x 1) broadcast over columns.
  Var add_bias(Var x, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var scale(Var a, double factor);
  /// Gathers columns ids[j] of `table` (dim x vocab) into a dim x B block.
  Var embedding(Var table, std::vector<std::size_t> ids);
  /// Stacks 1 x B rows into a T x B matrix.
  Var stack_rows(std::span<const Var> rows);
  Var softmax_columns(Var a);
  Var row(Var a, std::size_t r);
  /// x (n x B) with column j multiplied by w(0, j).
  Var scale_columns(Var x, Var w);
  /// Per-column inner product of two n x B matrices, giving 1 x B.
  Var column_dot(Var a, Var b);
  Var sum(Var a);
  /// factor * sum_j -log softmax(logits[:, j])[labels[j]] as a 1 x 1 node.
  Var softmax_xent(Var logits, std::vector<std::size_t> labels, double factor = 1.0);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulated by the last backward(); zeros if none reached it.
  Matrix grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

  void set_output(Var v) {
    output_ = v.id;
    has_output_ = true;
  }
  bool has_output() const noexcept { return has_output_; }
  Var output() const;

  bool capture_hidden() const noexcept { return capture_hidden_; }
  /// Records `v` as the hidden state of timestep t (0-based, contiguous).
  void mark_hidden(std::size_t t, Var v);
  std::span<const Var> hidden_states() const noexcept { return hidden_; }

  /// Recomputes every non-leaf value from the leaves and returns the largest
  /// absolute deviation from the recorded values (0 for a consistent tape).
  double replay_deviation() const;

  /// Runs reverse accumulation from the output node. Throws ContractError
  /// unless the output is 1 x 1.
  void run_backward();

  GradientSet parameter_gradients() const;

 private:
  struct Node {
    Op op = Op::leaf;
    bool needs_grad = false;
    std::vector<std::uint32_t> inputs;
    std::vector<std::size_t> ids;  // embedding ids or labels
    double factor = 1.0;           // scale / xent factor, or row index
    Matrix value;
    Matrix grad;
    std::string name;
  };

  Var push(Node node);
  Matrix evaluate(const Node& node) const;
  Matrix evaluate_with(const Node& node, std::span<const Matrix* const> in) const;
  void propagate(std::uint32_t id);
  Matrix& grad_slot(std::uint32_t id);

  std::vector<Node> nodes_;
  std::map<std::string, std::uint32_t> params_;
  std::vector<Var> hidden_;
  std::uint32_t output_ = 0;
  bool has_output_ = false;
  bool capture_hidden_ = false;
};

/// Exact reverse-mode gradients of the tape's scalar output.
GradientSet backward(Tape& tape);

/// ||dL/dh_t||_2 for each marked hidden state, ordered t = 1..T. Hidden
/// blocks holding a batch give the mean of the per-column norms. Requires a
/// prior backward() and at least one marked hidden state.
Vector hidden_grad_norms(const Tape& tape);

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b) noexcept;

}  // namespace echo
