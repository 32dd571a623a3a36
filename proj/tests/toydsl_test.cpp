#include "retree/toydsl.hpp"

#include <set>

#include <gtest/gtest.h>

namespace retree::toydsl {
namespace {

TEST(Parse, SimpleForms) {
  const Expr c = parse_expr("(const 5)");
  EXPECT_EQ(c.kind, ExprKind::kConst);
  EXPECT_EQ(c.value, 5);

  const Expr a = parse_expr("(add (var 0) (const 3))");
  EXPECT_EQ(a.kind, ExprKind::kAdd);
  ASSERT_EQ(a.children.size(), 2u);
  EXPECT_EQ(a.children[0].kind, ExprKind::kVar);
  EXPECT_EQ(a.children[0].value, 0);
  EXPECT_EQ(a.children[1].kind, ExprKind::kConst);
  EXPECT_EQ(a.children[1].value, 3);

  const Expr neg = parse_expr("(const -9)");
  EXPECT_EQ(neg.value, -9);
}

TEST(Parse, ArityMismatchIsAnError) {
  EXPECT_THROW(parse_expr("(add (var 0))"), ParseError);
  EXPECT_THROW(parse_expr("(add (var 0) (var 1) (var 0))"), ParseError);
  EXPECT_THROW(parse_expr("(ifle (var 0) (const 1) (const 2))"), ParseError);
}

TEST(Parse, SyntaxErrorsCarryPosition) {
  try {
    parse_expr("(add (var 0) (boom 1))");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.position(), 0u);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
  EXPECT_THROW(parse_expr(""), ParseError);
  EXPECT_THROW(parse_expr("(const 5) trailing"), ParseError);
  EXPECT_THROW(parse_expr("(const 99)"), ParseError);  // constant range
}

TEST(Parse, DepthLimitEnforced) {
  // Depth 7 chain exceeds the default maximum of 6.
  std::string src = "(const 1)";
  for (int i = 0; i < 6; ++i) src = "(add " + src + " (const 1))";
  EXPECT_THROW(parse_expr(src), ParseError);
  EXPECT_NO_THROW(parse_expr(src, 16));
}

TEST(Eval, BasicSemantics) {
  const std::vector<std::int64_t> in1 = {4};
  EXPECT_EQ(eval_expr(parse_expr("(const 5)"), in1), 5);
  EXPECT_EQ(eval_expr(parse_expr("(add (var 0) (const 3))"), in1), 7);

  const std::vector<std::int64_t> in2 = {2};
  EXPECT_EQ(eval_expr(parse_expr("(ifle (var 0) (const 0) (const 1) (const -1))"), in2), -1);
  const std::vector<std::int64_t> in3 = {-2};
  EXPECT_EQ(eval_expr(parse_expr("(ifle (var 0) (const 0) (const 1) (const -1))"), in3), 1);

  EXPECT_EQ(eval_expr(parse_expr("(min (var 0) (const 3))"), in1), 3);
  EXPECT_EQ(eval_expr(parse_expr("(max (var 0) (const 3))"), in1), 4);
  EXPECT_EQ(eval_expr(parse_expr("(sub (const 2) (var 0))"), in1), -2);
  EXPECT_EQ(eval_expr(parse_expr("(mul (var 0) (var 0))"), in1), 16);
}

TEST(Eval, VariableOutOfRange) {
  const std::vector<std::int64_t> in = {1};
  EXPECT_THROW(eval_expr(parse_expr("(var 1)"), in), EvalError);
}

TEST(Eval, WrapAroundIsTotal) {
  // (mul big big) wraps instead of trapping.
  Expr e = parse_expr("(mul (var 0) (var 0))");
  const std::vector<std::int64_t> in = {std::int64_t{1} << 62};
  EXPECT_NO_THROW(eval_expr(e, in));
}

TEST(PrintParse, RoundTripProperty) {
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const int arity = 1 + static_cast<int>(rng.next_below(3));
    const int depth = 1 + static_cast<int>(rng.next_below(5));
    const Expr e = random_expr(rng, arity, depth);
    EXPECT_EQ(parse_expr(print_expr(e)), e);
  }
}

TEST(Mutate, ConstPerturbationRules) {
  Rng rng(5);
  const Expr c5 = parse_expr("(const 5)");
  for (int i = 0; i < 200; ++i) {
    const Expr m = mutate_expr(c5, 1, rng);
    ASSERT_EQ(m.kind, ExprKind::kConst);
    EXPECT_NE(m.value, 5);
    EXPECT_LE(std::abs(m.value - 5), 3);
    EXPECT_GE(m.value, kMinConst);
    EXPECT_LE(m.value, kMaxConst);
  }
  // At the range edge only in-range targets remain.
  const Expr c9 = parse_expr("(const 9)");
  for (int i = 0; i < 100; ++i) {
    const Expr m = mutate_expr(c9, 1, rng);
    EXPECT_GE(m.value, 6);
    EXPECT_LE(m.value, 8);
  }
}

TEST(Mutate, OperatorSwapStaysInArity) {
  Rng rng(6);
  const Expr e = parse_expr("(add (var 0) (const 1))");
  std::set<ExprKind> seen;
  for (int i = 0; i < 500; ++i) {
    const Expr m = mutate_expr(e, 1, rng);
    if (m.children == e.children && m.kind != ExprKind::kAdd) seen.insert(m.kind);
  }
  const std::set<ExprKind> expected = {ExprKind::kSub, ExprKind::kMul, ExprKind::kMin,
                                       ExprKind::kMax};
  EXPECT_EQ(seen, expected);
}

TEST(Mutate, ExactlyOneNodeChanges) {
  // Structural diff oracle: every mutation of a random expression differs in
  // exactly one node.
  Rng rng(7);
  for (int i = 0; i < 300; ++i) {
    const int arity = 1 + static_cast<int>(rng.next_below(3));
    const Expr e = random_expr(rng, arity, 3);
    const Expr m = mutate_expr(e, arity, rng);
    if (m == e) continue;  // no legal mutation existed
    EXPECT_EQ(diff_count(e, m), 1) << print_expr(e) << " vs " << print_expr(m);
  }
}

TEST(Mutate, NoLegalMutationReturnsInput) {
  Rng rng(8);
  const Expr lone_var = parse_expr("(var 0)");
  EXPECT_EQ(mutate_expr(lone_var, 1, rng), lone_var);  // arity 1: nowhere to go
  EXPECT_TRUE(enumerate_mutations(lone_var, 1).empty());
}

TEST(Enumerate, NeighborhoodIsDistinctAndComplete) {
  const Expr e = parse_expr("(add (var 0) (const 5))");
  const auto n = enumerate_mutations(e, 2);
  // 4 operator swaps + 1 var change + 6 const moves.
  EXPECT_EQ(n.size(), 11u);
  std::set<std::string> unique;
  for (const auto& m : n) {
    EXPECT_EQ(diff_count(e, m), 1);
    unique.insert(print_expr(m));
  }
  EXPECT_EQ(unique.size(), n.size());
}

TEST(GenerateTask, ReferencePassesOwnTests) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyTaskSpec spec;
    spec.rng_seed = seed;
    const Task task = generate_task(spec, "t" + std::to_string(seed));
    const Expr ref = parse_expr(task.reference_solution.source);
    for (const auto& tc : task.tests.cases) {
      std::istringstream in(tc.input);
      std::vector<std::int64_t> inputs;
      std::int64_t v;
      while (in >> v) inputs.push_back(v);
      EXPECT_EQ(std::to_string(eval_expr(ref, inputs)), tc.expected_output);
    }
  }
}

TEST(GenerateTask, EverySeedFailsSomeTest) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyTaskSpec spec;
    spec.num_mutations = 2;
    spec.rng_seed = seed;
    const Task task = generate_task(spec, "t" + std::to_string(seed));
    const Expr ref = parse_expr(task.reference_solution.source);
    for (const auto& seed_program : task.seed_programs) {
      const Expr mutant = parse_expr(seed_program.source);
      bool fails_one = false;
      for (const auto& tc : task.tests.cases) {
        std::istringstream in(tc.input);
        std::vector<std::int64_t> inputs;
        std::int64_t v;
        while (in >> v) inputs.push_back(v);
        fails_one = fails_one || eval_expr(mutant, inputs) != eval_expr(ref, inputs);
      }
      EXPECT_TRUE(fails_one) << task.id << ": seed passes all tests";
      EXPECT_EQ(diff_count(ref, mutant), 1);
    }
  }
}

TEST(GenerateTask, DeterministicPerSeed) {
  ToyTaskSpec spec;
  spec.rng_seed = 1234;
  const Task a = generate_task(spec, "same");
  const Task b = generate_task(spec, "same");
  EXPECT_EQ(a, b);
  EXPECT_EQ(tasks_to_jsonl({a}), tasks_to_jsonl({b}));
}

TEST(ToyRefiner, DistinctDistanceOneMutants) {
  Rng rng(31);
  const Program program{"(add (sub (var 0) (const 2)) (mul (var 1) (const 3)))", "toydsl"};
  const Expr e = parse_expr(program.source);
  const auto proposals = toy_refiner(program, Feedback{}, 3, 2, rng);
  ASSERT_EQ(proposals.size(), 3u);
  std::set<std::string> unique;
  for (const auto& p : proposals) {
    unique.insert(p.source);
    EXPECT_EQ(p.language_tag, "toydsl");
    EXPECT_EQ(diff_count(e, parse_expr(p.source)), 1);
  }
  EXPECT_EQ(unique.size(), 3u);
}

TEST(ToyRefiner, ExhaustedNeighborhoodReturnsFewer) {
  Rng rng(32);
  const Program program{"(const 0)", "toydsl"};  // neighborhood size 6
  const auto proposals = toy_refiner(program, Feedback{}, 50, 1, rng);
  EXPECT_EQ(proposals.size(), 6u);
}

TEST(ToyRefiner, InverseMutationIsReachable) {
  // For a single-mutation task the full neighborhood of the seed contains a
  // program that matches the reference on every test.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ToyTaskSpec spec;
    spec.rng_seed = seed;
    const Task task = generate_task(spec, "t" + std::to_string(seed));
    ASSERT_EQ(task.seed_programs.size(), 1u);
    const Expr ref = parse_expr(task.reference_solution.source);
    const Expr start = parse_expr(task.seed_programs[0].source);
    bool fix_found = false;
    for (const auto& neighbor : enumerate_mutations(start, spec.arity)) {
      bool all_match = true;
      for (const auto& tc : task.tests.cases) {
        std::istringstream in(tc.input);
        std::vector<std::int64_t> inputs;
        std::int64_t v;
        while (in >> v) inputs.push_back(v);
        all_match = all_match && eval_expr(neighbor, inputs) == eval_expr(ref, inputs);
      }
      fix_found = fix_found || all_match;
    }
    EXPECT_TRUE(fix_found) << task.id;
  }
}

TEST(ToyRefiner, DeterministicUnderFixedSeed) {
  const Program program{"(add (var 0) (const 3))", "toydsl"};
  Rng a(77), b(77);
  EXPECT_EQ(toy_refiner(program, Feedback{}, 4, 2, a), toy_refiner(program, Feedback{}, 4, 2, b));
}

TEST(ToyRefiner, ParseFailureRecoversWithRandomPrograms) {
  Rng rng(33);
  const Program broken{"(add (var 0)", "toydsl"};
  const auto proposals = toy_refiner(broken, Feedback{}, 5, 2, rng);
  ASSERT_EQ(proposals.size(), 5u);
  std::set<std::string> unique;
  for (const auto& p : proposals) {
    EXPECT_NO_THROW(parse_expr(p.source));
    unique.insert(p.source);
  }
  EXPECT_EQ(unique.size(), 5u);
}

TEST(InferArity, CountsFirstInputLine) {
  ToyTaskSpec spec;
  spec.arity = 3;
  spec.rng_seed = 9;
  const Task task = generate_task(spec, "t");
  EXPECT_EQ(infer_arity(task), 3);
}

}  // namespace
}  // namespace retree::toydsl
