// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "echo/tasks.hpp"

namespace echo {
namespace {

TEST(Distractor, DegenerateSpecIsConstantNoisePlusTrigger) {
  DistractorSpec spec;
  spec.num_distractors = 0;
  spec.noise_vocab_size = 1;
  spec.seed = 3;
  const Dataset d = gen_distractor(spec, 50);
  for (const Sample& s : d.samples) {
    std::size_t triggers = 0;
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      if (s.tokens[t] == 0) continue;
      ++triggers;
      EXPECT_EQ(s.tokens[t], spec.trigger_token(s.label));
      EXPECT_EQ(s.meta.trigger_position, t + 1);
    }
    EXPECT_EQ(triggers, 1u);
  }
}

TEST(Distractor, ClassHistogramIsNearUniform) {
  DistractorSpec spec;
  spec.seed = 7;
  const Dataset d = gen_distractor(spec, 1000);
  std::vector<std::size_t> counts(spec.num_classes);
  for (const Sample& s : d.samples) ++counts.at(s.label);
  for (std::size_t c : counts) EXPECT_NEAR(static_cast<double>(c) / 1000.0, 0.25, 0.05);
}

TEST(Distractor, LayoutInvariants) {
  DistractorSpec spec;
  spec.seed = 11;
  const Dataset d = gen_distractor(spec, 500);
  d.validate();
  EXPECT_EQ(d.vocab_size, 12u);
  for (const Sample& s : d.samples) {
    ASSERT_EQ(s.tokens.size(), 50u);
    ASSERT_TRUE(s.meta.trigger_position);
    EXPECT_GE(*s.meta.trigger_position, 1u);
    EXPECT_LE(*s.meta.trigger_position, 10u);
    ASSERT_EQ(s.meta.distractor_positions.size(), 3u);
    for (std::size_t p : s.meta.distractor_positions) {
      EXPECT_GT(p, 10u);
      const std::size_t tok = s.tokens[p - 1];
      EXPECT_TRUE(spec.is_trigger(tok));
      EXPECT_NE(tok, spec.trigger_token(s.label));
    }
    EXPECT_TRUE(
        std::is_sorted(s.meta.distractor_positions.begin(), s.meta.distractor_positions.end()));
  }
}

TEST(Distractor, DeterministicPerSeed) {
  DistractorSpec spec;
  spec.seed = 1;
  EXPECT_EQ(gen_distractor(spec, 100), gen_distractor(spec, 100));
  DistractorSpec other = spec;
  other.seed = 2;
  EXPECT_NE(gen_distractor(spec, 100), gen_distractor(other, 100));
}

TEST(Distractor, InvalidSpecs) {
  DistractorSpec spec;
  spec.window_hi = 60;
  EXPECT_THROW(gen_distractor(spec, 10), SpecError);
  spec = {};
  spec.seq_len = 12;
  spec.num_distractors = 5;  // only two slots after the window
  EXPECT_THROW(gen_distractor(spec, 10), SpecError);
  spec = {};
  EXPECT_THROW(gen_distractor(spec, 0), SpecError);
}

// A reader that looks up the trigger token inside the window solves every
// sample, so the task only tests memory.
TEST(Distractor, BruteForceReaderIsPerfect) {
  DistractorSpec spec;
  spec.seed = 21;
  const Dataset d = gen_distractor(spec, 2000);
  std::size_t correct = 0;
  for (const Sample& s : d.samples) {
    for (std::size_t t = spec.window_lo; t <= spec.window_hi; ++t) {
      const std::size_t tok = s.tokens[t - 1];
      if (spec.is_trigger(tok)) {
        correct += (tok - spec.noise_vocab_size) == s.label;
        break;
      }
    }
  }
  EXPECT_EQ(correct, d.size());
}

// Noise tokens must be independent of the label: Pearson chi-squared over
// the (noise token x class) table, compared with the 0.01 critical value
// for (8-1)(4-1) = 21 degrees of freedom.
TEST(Distractor, NoiseCarriesNoLabelInformation) {
  DistractorSpec spec;
  spec.seed = 99;
  const Dataset d = gen_distractor(spec, 10000);
  std::vector<std::vector<double>> table(spec.noise_vocab_size,
                                         std::vector<double>(spec.num_classes, 0.0));
  for (const Sample& s : d.samples)
    for (std::size_t tok : s.tokens)
      if (tok < spec.noise_vocab_size) table[tok][s.label] += 1.0;
  std::vector<double> row(spec.noise_vocab_size, 0.0), col(spec.num_classes, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < row.size(); ++r)
    for (std::size_t c = 0; c < col.size(); ++c) {
      row[r] += table[r][c];
      col[c] += table[r][c];
      total += table[r][c];
    }
  double chi2 = 0.0;
  for (std::size_t r = 0; r < row.size(); ++r)
    for (std::size_t c = 0; c < col.size(); ++c) {
      const double expected = row[r] * col[c] / total;
      chi2 += (table[r][c] - expected) * (table[r][c] - expected) / expected;
    }
  constexpr double kCritical21Df = 38.932;
  EXPECT_LT(chi2, kCritical21Df);
}

TEST(DistractorShifted, PinsTriggerPosition) {
  DistractorSpec spec;
  spec.seed = 4;
  for (std::size_t t : {5u, 25u, 50u}) {
    const Dataset d = gen_distractor_shifted(spec, t, 200);
    d.validate();
    for (const Sample& s : d.samples) {
      EXPECT_EQ(s.meta.trigger_position, t);
      EXPECT_EQ(s.tokens[t - 1], spec.trigger_token(s.label));
      for (std::size_t p : s.meta.distractor_positions) EXPECT_NE(p, t);
    }
  }
  EXPECT_THROW(gen_distractor_shifted(spec, 0, 10), SpecError);
  EXPECT_THROW(gen_distractor_shifted(spec, 51, 10), SpecError);
}

TEST(StripTriggers, KeepsEverythingButTheTrigger) {
  DistractorSpec spec;
  spec.seed = 8;
  const Dataset d = gen_distractor(spec, 100);
  const Dataset stripped = strip_triggers(d, spec, 1);
  ASSERT_EQ(stripped.size(), d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    const Sample& a = d.samples[k];
    const Sample& b = stripped.samples[k];
    const std::size_t p = *a.meta.trigger_position - 1;
    EXPECT_LT(b.tokens[p], spec.noise_vocab_size);
    for (std::size_t t = 0; t < a.tokens.size(); ++t)
      if (t != p) EXPECT_EQ(a.tokens[t], b.tokens[t]);
  }
}

TEST(ListOps, HandExamples) {
  EXPECT_EQ(eval_listops("[MIN 2 3]"), 2);
  EXPECT_EQ(eval_listops("[MAX 9 8 [MIN 2 3]]"), 9);
  EXPECT_EQ(eval_listops("[SM 5 5 5]"), 5);
  EXPECT_EQ(eval_listops("[MED 1 9 4 7]"), 4);
  EXPECT_EQ(eval_listops("7"), 7);
  EXPECT_EQ(eval_listops(listops_tokenize("[SM 9 [MAX 1 8]]")), 7);
}

TEST(ListOps, MalformedReportsPosition) {
  try {
    eval_listops("[MAX 1 2");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 8u);
  }
  EXPECT_THROW(eval_listops("[FOO 1 2]"), ParseError);
  EXPECT_THROW(eval_listops("[MAX]"), ParseError);
  EXPECT_THROW(eval_listops("[MIN 1 2] 3"), ParseError);
  EXPECT_THROW(eval_listops(""), ParseError);
}

// Stack machine written independently of the recursive-descent evaluator:
// tokens are read left to right, ']' reduces the top frame.
int stack_eval(const TokenSeq& tokens) {
  struct Frame {
    std::size_t op;
    std::vector<int> args;
  };
  std::vector<Frame> stack;
  int result = -1;
  auto push_value = [&](int v) {
    if (stack.empty())
      result = v;
    else
      stack.back().args.push_back(v);
  };
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::size_t tok = tokens[k];
    if (tok == listops_token::open) {
      stack.push_back({tokens.at(++k) - listops_token::op_base, {}});
    } else if (tok == listops_token::close) {
      Frame f = stack.back();
      stack.pop_back();
      std::sort(f.args.begin(), f.args.end());
      int v = 0;
      switch (f.op) {
        case 0:
          v = f.args.back();
          break;
        case 1:
          v = f.args.front();
          break;
        case 2:
          v = f.args[(f.args.size() - 1) / 2];
          break;
        default:
          for (int a : f.args) v += a;
          v %= 10;
      }
      push_value(v);
    } else {
      push_value(static_cast<int>(tok));
    }
  }
  return result;
}

std::size_t nesting_depth(const TokenSeq& tokens) {
  std::size_t depth = 0, best = 0;
  for (std::size_t tok : tokens) {
    if (tok == listops_token::open) best = std::max(best, ++depth);
    if (tok == listops_token::close) --depth;
  }
  return best;
}

TEST(ListOps, DualOracleAgreesOnTenThousandExpressions) {
  ListOpsSpec spec;
  spec.seed = 5;
  const Dataset d = gen_listops(spec, 10000);
  std::size_t disagreements = 0;
  for (const Sample& s : d.samples) {
    const int a = eval_listops(s.tokens);
    disagreements += a != stack_eval(s.tokens);
    EXPECT_EQ(static_cast<std::size_t>(a), s.label);
    EXPECT_LE(s.tokens.size(), spec.max_length);
    EXPECT_GE(s.tokens.size(), spec.min_length);
    EXPECT_LE(nesting_depth(s.tokens), spec.max_depth);
    EXPECT_EQ(eval_listops(listops_to_string(s.tokens)), a);
  }
  EXPECT_EQ(disagreements, 0u);
}

TEST(ListOps, DepthOneIsFlat) {
  ListOpsSpec spec;
  spec.max_depth = 1;
  spec.seed = 9;
  const Dataset d = gen_listops(spec, 500);
  for (const Sample& s : d.samples) {
    EXPECT_EQ(nesting_depth(s.tokens), 1u);
    EXPECT_EQ(stack_eval(s.tokens), static_cast<int>(s.label));
  }
}

TEST(ListOps, DeterministicPerSeed) {
  ListOpsSpec spec;
  spec.seed = 3;
  std::ostringstream a, b;
  write_dataset(a, gen_listops(spec, 300));
  write_dataset(b, gen_listops(spec, 300));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Split, SizesDeterminismAndMultiset) {
  DistractorSpec spec;
  spec.seed = 2;
  const Dataset d = gen_distractor(spec, 100);
  const Splits s = split(d, {0.8, 0.1, 0.1}, 42);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  const Splits again = split(d, {0.8, 0.1, 0.1}, 42);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.val, again.val);
  EXPECT_EQ(s.test, again.test);

  auto key = [](const Sample& x) { return std::make_pair(x.tokens, x.label); };
  std::vector<std::pair<TokenSeq, std::size_t>> original, joined;
  for (const auto& x : d.samples) original.push_back(key(x));
  for (const Dataset* part : {&s.train, &s.val, &s.test})
    for (const auto& x : part->samples) joined.push_back(key(x));
  std::sort(original.begin(), original.end());
  std::sort(joined.begin(), joined.end());
  EXPECT_EQ(original, joined);
}

TEST(Split, Errors) {
  DistractorSpec spec;
  const Dataset d = gen_distractor(spec, 5);
  EXPECT_THROW(split(d, {0.98, 0.01, 0.01}, 0), SpecError);
  EXPECT_THROW(split(d, {0.5, 0.5, 0.5}, 0), SpecError);
  EXPECT_THROW(split(d, {1.0, 0.0, 0.0}, 0), SpecError);
}

TEST(DatasetIo, RoundTripAndRejectsGarbage) {
  DistractorSpec spec;
  spec.seed = 6;
  const Dataset d = gen_distractor(spec, 40);
  std::stringstream buf;
  write_dataset(buf, d);
  EXPECT_EQ(read_dataset(buf), d);

  ListOpsSpec lspec;
  const Dataset l = gen_listops(lspec, 40);
  std::stringstream lbuf;
  write_dataset(lbuf, l);
  EXPECT_EQ(read_dataset(lbuf), l);

  std::stringstream bad("not a dataset\n");
  EXPECT_THROW(read_dataset(bad), DataError);
}

}  // namespace
}  // namespace echo
