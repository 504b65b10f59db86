// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "echo/autodiff.hpp"

namespace echo {
namespace {

using Params = std::map<std::string, Matrix>;
using Builder = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double mag = 1.0) {
  Matrix m(r, c);
  for (auto& x : m.data()) x = rng.uniform(-mag, mag);
  return m;
}

double forward_value(const Builder& build, const Params& params) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars[name] = tape.parameter(name, value);
  return tape.value(build(tape, vars))[0];
}

// Largest relative error between tape gradients and central differences.
double max_fd_error(const Builder& build, Params params, double eps = 1e-5) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars[name] = tape.parameter(name, value);
  tape.set_output(build(tape, vars));
  const GradientSet grads = backward(tape);
  double worst = 0.0;
  for (auto& [name, value] : params) {
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double saved = value[k];
      value[k] = saved + eps;
      const double up = forward_value(build, params);
      value[k] = saved - eps;
      const double down = forward_value(build, params);
      value[k] = saved;
      worst = std::max(worst, relative_error(grads.at(name)[k], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const Var w = tape.parameter("W", Matrix(3, 2, 0.7));
  tape.set_output(tape.sum(w));
  const auto g = backward(tape);
  EXPECT_EQ(g.at("W"), Matrix(3, 2, 1.0));
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tape tape;
  const Var x = tape.parameter("x", Matrix(4, 1, 2.0));
  const Var pre = tape.scale(x, 0.0);
  tape.set_output(tape.sum(tape.sigmoid(pre)));
  backward(tape);
  EXPECT_EQ(tape.grad(pre), Matrix(4, 1, 0.25));
  EXPECT_EQ(tape.grad(x), Matrix(4, 1, 0.0));
}

TEST(Backward, NonScalarOutputIsContractError) {
  Tape tape;
  const Var w = tape.parameter("W", Matrix(2, 2, 1.0));
  tape.set_output(tape.sigmoid(w));
  EXPECT_THROW(backward(tape), ContractError);
}

TEST(Backward, ConstantGraphHasZeroGradients) {
  Tape tape;
  const Var w = tape.parameter("W", Matrix(2, 3, 1.25));
  tape.set_output(tape.sum(tape.sub(w, w)));
  const auto g = backward(tape);
  EXPECT_EQ(tape.value(tape.output())[0], 0.0);
  EXPECT_EQ(g.at("W"), Matrix(2, 3, 0.0));
}

TEST(Backward, EveryParameterAppearsOnceEvenIfUnused) {
  Tape tape;
  const Var a = tape.parameter("a", Matrix(1, 1, 1.0));
  tape.parameter("unused", Matrix(2, 2, 1.0));
  tape.set_output(tape.sum(a));
  const auto g = backward(tape);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g.at("unused"), Matrix(2, 2, 0.0));
  EXPECT_THROW(tape.parameter("a", Matrix(1, 1)), ContractError);
}

TEST(Backward, LinearClassifierMatchesClosedForm) {
  Rng rng(21);
  const Matrix W = random_matrix(rng, 4, 3);
  const Matrix x = random_matrix(rng, 3, 1);
  const std::size_t label = 2;
  Tape tape;
  const Var w = tape.parameter("W", W);
  const Var logits = tape.matmul(w, tape.constant(x));
  tape.set_output(tape.softmax_xent(logits, {label}));
  const auto g = backward(tape);
  // dL/dW = (softmax(Wx) - onehot) x^T
  const Matrix z = matmul(W, x);
  double mx = z[0];
  for (double v : z.data()) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : z.data()) denom += std::exp(v - mx);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double p = std::exp(z[i] - mx) / denom - (i == label ? 1.0 : 0.0);
      EXPECT_NEAR(g.at("W")(i, j), p * x[j], 1e-14);
    }
  const Builder build = [&](Tape& t, const std::map<std::string, Var>& v) {
    return t.softmax_xent(t.matmul(v.at("W"), t.constant(x)), {label});
  };
  EXPECT_LT(max_fd_error(build, {{"W", W}}), 1e-6);
}

TEST(Backward, DeterministicAndReplayExact) {
  Rng rng(4);
  const Params p{{"A", random_matrix(rng, 3, 3)}, {"b", random_matrix(rng, 3, 1)}};
  auto run = [&] {
    Tape tape;
    const Var a = tape.parameter("A", p.at("A"));
    const Var b = tape.parameter("b", p.at("b"));
    Var h = tape.constant(Matrix(3, 2, 0.5));
    for (int t = 0; t < 4; ++t) h = tape.tanh(tape.add_bias(tape.matmul(a, h), b));
    tape.set_output(tape.sum(h));
    EXPECT_EQ(tape.replay_deviation(), 0.0);
    return backward(tape);
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, EmbeddingRejectsOutOfVocabulary) {
  Tape tape;
  const Var table = tape.parameter("E", Matrix(2, 5, 1.0));
  EXPECT_THROW(tape.embedding(table, {1, 5}), DataError);
}

// Property: random compositions of every primitive agree with central
// differences at eps = 1e-5 within 1e-4 relative error.
TEST(BackwardProperty, RandomGraphsMatchFiniteDifferences) {
  Rng rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(3);
    const std::size_t B = 1 + rng.uniform_int(3);
    const std::size_t V = 4;
    Params p{{"W", random_matrix(rng, n, n)},
             {"U", random_matrix(rng, n, n)},
             {"b", random_matrix(rng, n, 1)},
             {"E", random_matrix(rng, n, V)},
             {"v", random_matrix(rng, 1, n)}};
    std::vector<std::size_t> ids(B), labels(B);
    for (auto& id : ids) id = rng.uniform_int(V);
    for (auto& l : labels) l = rng.uniform_int(n);
    const double factor = rng.uniform(0.2, 2.0);
    const int variant = trial % 4;

    const Builder build = [&](Tape& t, const std::map<std::string, Var>& v) {
      const Var x = t.embedding(v.at("E"), ids);  // n x B
      Var h = t.tanh(t.add_bias(t.matmul(v.at("W"), x), v.at("b")));
      Var g = t.sigmoid(t.matmul(v.at("U"), h));
      h = t.add(t.hadamard(g, h), t.scale(x, 0.5));
      switch (variant) {
        case 0:
          return t.softmax_xent(h, labels, factor);
        case 1: {
          const Var s = t.softmax_columns(t.sub(h, x));
          return t.sum(t.scale_columns(h, t.row(s, 0)));
        }
        case 2: {
          const Var score = t.matmul(v.at("v"), h);  // 1 x B
          const Var rows[] = {score, t.column_dot(h, x)};
          return t.softmax_xent(t.stack_rows(rows), std::vector<std::size_t>(B, 1), factor);
        }
        default:
          return t.sum(t.hadamard(t.column_dot(h, h), t.matmul(v.at("v"), g)));
      }
    };
    EXPECT_LT(max_fd_error(build, p), 1e-4) << "trial " << trial;
  }
}

TEST(HiddenGradNorms, RequiresMarkedStates) {
  Tape tape(true);
  const Var w = tape.parameter("W", Matrix(2, 1, 1.0));
  tape.set_output(tape.sum(w));
  backward(tape);
  EXPECT_THROW(hidden_grad_norms(tape), ContractError);
}

TEST(HiddenGradNorms, CaptureIsOptIn) {
  Tape tape(false);
  const Var w = tape.parameter("W", Matrix(2, 1, 1.0));
  tape.mark_hidden(0, w);
  EXPECT_TRUE(tape.hidden_states().empty());
}

TEST(HiddenGradNorms, IdentityRecurrenceGivesConstantNorm) {
  // c_t = c_{t-1} + x_t with the loss reading only c_T: every dL/dc_t is
  // the all-ones vector, so the norm is sqrt(n) at every step.
  const std::size_t n = 5, T = 8;
  Tape tape(true);
  Var c = tape.constant(Matrix(n, 1, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    c = tape.add(c, tape.parameter("x" + std::to_string(t), Matrix(n, 1, 0.1 * t)));
    tape.mark_hidden(t, c);
  }
  tape.set_output(tape.sum(c));
  backward(tape);
  const Vector norms = hidden_grad_norms(tape);
  ASSERT_EQ(norms.size(), T);
  for (double v : norms) EXPECT_DOUBLE_EQ(v, std::sqrt(static_cast<double>(n)));
}

TEST(HiddenGradNorms, NonNegativeWhenLossReadsOnlyLastState) {
  Rng rng(6);
  Tape tape(true);
  const Var w = tape.parameter("W", random_matrix(rng, 3, 3));
  Var h = tape.constant(random_matrix(rng, 3, 2));
  for (std::size_t t = 0; t < 6; ++t) {
    h = tape.tanh(tape.matmul(w, h));
    tape.mark_hidden(t, h);
  }
  tape.set_output(tape.sum(h));
  backward(tape);
  for (double v : hidden_grad_norms(tape)) EXPECT_GE(v, 0.0);
}

TEST(RelativeError, FloorAvoidsBlowUp) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-4);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

}  // namespace
}  // namespace echo
