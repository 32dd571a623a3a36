#include "retree/tree.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "retree/grpo.hpp"

namespace retree {
namespace {

RewardBreakdown reward_of(double normalized) {
  RewardBreakdown r;
  r.normalized = normalized;
  r.raw = normalized * 2.0;
  r.codebleu = r.raw / 2.0;
  r.pass_fraction = r.raw / 2.0;
  return r;
}

EvalResult eval_of(std::size_t passed, std::size_t total) {
  std::vector<CaseResult> cases;
  for (std::size_t i = 0; i < total; ++i)
    cases.push_back({"t" + std::to_string(i),
                     i < passed ? CaseOutcome::kPass : CaseOutcome::kWrongOutput, ""});
  return finalize_eval(std::move(cases));
}

TreeNode node_with(double normalized_reward, int failures) {
  TreeNode node;
  node.reward = reward_of(normalized_reward);
  node.failures = failures;
  return node;
}

TEST(BetaParams, HandCases) {
  {
    const auto [alpha, beta] = beta_params(node_with(1.0, 0), 3.0);
    EXPECT_DOUBLE_EQ(alpha, 4.0);
    EXPECT_DOUBLE_EQ(beta, 1.0);
  }
  {
    const auto [alpha, beta] = beta_params(node_with(0.0, 0), 3.0);
    EXPECT_DOUBLE_EQ(alpha, 1.0);
    EXPECT_DOUBLE_EQ(beta, 4.0);
  }
  {
    const auto [alpha, beta] = beta_params(node_with(0.5, 2), 3.0);
    EXPECT_DOUBLE_EQ(alpha, 2.5);
    EXPECT_DOUBLE_EQ(beta, 4.5);
  }
}

TEST(BetaParams, BoundsPropertyOverRandomInputs) {
  Rng rng(505);
  for (int i = 0; i < 5000; ++i) {
    const double reward = rng.next_double();
    const int failures = static_cast<int>(rng.next_below(500));
    const double c = 1e-6 + rng.next_double() * 50.0;
    const auto [alpha, beta] = beta_params(node_with(reward, failures), c);
    ASSERT_GE(alpha, 1.0);
    ASSERT_GE(beta, 1.0);
  }
}

TEST(BetaParams, MeanMonotoneInRewardAndFailures) {
  // With no failures the posterior mean rises with reward.
  double last = -1.0;
  for (double r = 0.0; r <= 1.0; r += 0.125) {
    const auto [a, b] = beta_params(node_with(r, 0), 3.0);
    const double mean = a / (a + b);
    EXPECT_GT(mean, last);
    last = mean;
  }
  // For fixed reward the mean strictly drops as failures accumulate.
  last = 2.0;
  for (int n = 0; n <= 20; ++n) {
    const auto [a, b] = beta_params(node_with(0.5, n), 3.0);
    const double mean = a / (a + b);
    EXPECT_LT(mean, last);
    last = mean;
  }
}

RefinementTree two_node_tree(double r0, double r1, std::uint64_t seed,
                             SelectionPolicy policy = SelectionPolicy::kThompson) {
  TreeConfig cfg;
  cfg.confidence_weight = 3.0;
  cfg.selection = policy;
  RefinementTree tree(cfg, seed);
  tree.add_root(Program{"(const 1)", "toydsl"}, reward_of(r0), eval_of(1, 1));
  tree.add_root(Program{"(const 2)", "toydsl"}, reward_of(r1), eval_of(0, 1));
  return tree;
}

TEST(ThompsonSelect, SingleNodeAlwaysSelected) {
  TreeConfig cfg;
  RefinementTree tree(cfg, 1);
  tree.add_root(Program{"(const 1)", "toydsl"}, reward_of(0.0), eval_of(0, 1));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(tree.select_node(), 0);
}

TEST(ThompsonSelect, CalibratedAgainstClosedFormOrderStatistic) {
  // (alpha, beta) = (4,1) vs (1,4): P(select first) = 1 - 4*B(4,5) = 69/70.
  auto tree = two_node_tree(1.0, 0.0, 2024);
  const int draws = 20000;
  int first = 0;
  for (int i = 0; i < draws; ++i)
    if (tree.select_node() == 0) ++first;
  const double freq = static_cast<double>(first) / draws;
  EXPECT_NEAR(freq, 69.0 / 70.0, 0.01);
}

TEST(ThompsonSelect, ZeroRewardNodeStillGetsSelected) {
  // Beta support is (0,1): even a reward-0 node keeps positive probability.
  auto tree = two_node_tree(1.0, 0.0, 77);
  int second = 0;
  for (int i = 0; i < 100000; ++i)
    if (tree.select_node() == 1) ++second;
  EXPECT_GT(second, 0);
}

TEST(ThompsonSelect, FailuresSuppressSelectionFrequency) {
  const int draws = 50000;
  auto count_first = [&](int failures, std::uint64_t seed) {
    TreeConfig cfg;
    cfg.confidence_weight = 3.0;
    RefinementTree tree(cfg, seed);
    tree.add_root(Program{"(const 1)", "toydsl"}, reward_of(0.5), eval_of(0, 1));
    tree.add_root(Program{"(const 2)", "toydsl"}, reward_of(0.5), eval_of(0, 1));
    // Attach failures to node 0 by inserting failing children.
    for (int i = 0; i < failures; ++i)
      tree.add_children(0, {{Program{"(const 3)", "toydsl"}, reward_of(0.0), eval_of(0, 1)}});
    int first = 0;
    for (int i = 0; i < draws; ++i)
      if (tree.select_node() == 0) ++first;
    return first;
  };
  const int baseline = count_first(0, 11);   // symmetric: ~50% against its twin
  const int penalized = count_first(10, 11);
  EXPECT_GT(baseline, draws / 2 - draws / 20);
  EXPECT_LT(penalized, baseline - draws / 10);  // far more than noise
}

TEST(ThompsonSelect, DeterministicGivenSeed) {
  auto a = two_node_tree(0.8, 0.3, 99);
  auto b = two_node_tree(0.8, 0.3, 99);
  for (int i = 0; i < 200; ++i) {
    std::vector<ThetaSample> sa, sb;
    ASSERT_EQ(a.select_node(&sa), b.select_node(&sb));
    ASSERT_EQ(sa, sb);
  }
}

TEST(ThompsonSelect, SamplesReportedPerNode) {
  auto tree = two_node_tree(0.9, 0.1, 5);
  std::vector<ThetaSample> samples;
  const int chosen = tree.select_node(&samples);
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].node_id, 0);
  EXPECT_EQ(samples[1].node_id, 1);
  const double max_theta = std::max(samples[0].theta, samples[1].theta);
  EXPECT_EQ(samples[chosen == 0 ? 0 : 1].theta, max_theta);
}

TEST(UniformSelection, CoversAllNodes) {
  auto tree = two_node_tree(1.0, 0.0, 3, SelectionPolicy::kUniformRandom);
  int first = 0;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    std::vector<ThetaSample> samples;
    if (tree.select_node(&samples) == 0) ++first;
    EXPECT_TRUE(samples.empty());
  }
  EXPECT_NEAR(static_cast<double>(first) / draws, 0.5, 0.02);
}

TEST(AddChildren, FailureAccounting) {
  TreeConfig cfg;
  RefinementTree tree(cfg, 1);
  tree.add_root(Program{"(const 1)", "toydsl"}, reward_of(0.5), eval_of(0, 1));

  // Three children, none fully correct: failures += 3.
  tree.add_children(0, {{Program{"a", "toydsl"}, reward_of(0.1), eval_of(0, 2)},
                        {Program{"b", "toydsl"}, reward_of(0.2), eval_of(1, 2)},
                        {Program{"c", "toydsl"}, reward_of(0.3), eval_of(1, 2)}});
  EXPECT_EQ(tree.node(0).failures, 3);

  // Three more, one fully correct: failures += 2.
  tree.add_children(0, {{Program{"d", "toydsl"}, reward_of(0.1), eval_of(0, 2)},
                        {Program{"e", "toydsl"}, reward_of(1.0), eval_of(2, 2)},
                        {Program{"f", "toydsl"}, reward_of(0.3), eval_of(1, 2)}});
  EXPECT_EQ(tree.node(0).failures, 5);

  EXPECT_THROW(tree.add_children(0, {}), std::invalid_argument);
  EXPECT_THROW(tree.add_children(42, {{Program{}, RewardBreakdown{}, EvalResult{}}}),
               std::invalid_argument);
}

TEST(Forest, IntegrityAfterRandomOperationSequences) {
  Rng rng(31337);
  for (int round = 0; round < 20; ++round) {
    TreeConfig cfg;
    RefinementTree tree(cfg, round);
    const int roots = 1 + static_cast<int>(rng.next_below(3));
    for (int r = 0; r < roots; ++r)
      tree.add_root(Program{"r" + std::to_string(r), "toydsl"}, reward_of(rng.next_double()),
                    eval_of(0, 1));
    const int ops = static_cast<int>(rng.next_below(40));
    for (int op = 0; op < ops; ++op) {
      const int parent = static_cast<int>(rng.next_below(tree.nodes().size()));
      const int n = 1 + static_cast<int>(rng.next_below(3));
      std::vector<std::tuple<Program, RewardBreakdown, EvalResult>> batch;
      for (int i = 0; i < n; ++i)
        batch.emplace_back(Program{"p", "toydsl"}, reward_of(rng.next_double()),
                           eval_of(rng.next_below(2), 1));
      tree.add_children(parent, batch);
    }

    // Invariants: dense unique ids, mutually consistent links, depths, and
    // failure counts recomputable from children.
    for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
      const TreeNode& node = tree.nodes()[i];
      ASSERT_EQ(node.id, static_cast<int>(i));
      if (node.parent_id) {
        const TreeNode& parent = tree.node(*node.parent_id);
        ASSERT_EQ(node.depth, parent.depth + 1);
        ASSERT_NE(std::find(parent.children.begin(), parent.children.end(), node.id),
                  parent.children.end());
      } else {
        ASSERT_EQ(node.depth, 0);
        ASSERT_NE(std::find(tree.root_ids().begin(), tree.root_ids().end(), node.id),
                  tree.root_ids().end());
      }
      int failing_children = 0;
      for (const int child_id : node.children) {
        const TreeNode& child = tree.node(child_id);
        ASSERT_EQ(child.parent_id, std::optional<int>(node.id));
        if (!child.fully_correct()) ++failing_children;
      }
      ASSERT_EQ(node.failures, failing_children);
      ASSERT_LE(node.failures, static_cast<int>(node.children.size()));
    }
  }
}

// ---- run_search ----

struct SearchFixture {
  Task task;
  toydsl::ToyDslBackend backend;
  CodeBleuConfig bleu;
  ExecutionLimits limits;

  explicit SearchFixture(std::uint64_t seed = 7, int num_mutations = 1) {
    toydsl::ToyTaskSpec spec;
    spec.rng_seed = seed;
    spec.num_mutations = num_mutations;
    task = toydsl::generate_task(spec, "fixture-" + std::to_string(seed));
  }

  RewardFn reward_fn() {
    return [this](const Program& candidate, const EvalResult& eval) {
      return compute_reward(candidate, task.reference_solution, eval, bleu);
    };
  }
};

TEST(RunSearch, AlreadySolvedSeedStopsImmediately) {
  SearchFixture fx;
  fx.task.seed_programs = {fx.task.reference_solution};
  MutationRefiner refiner(2, 1);
  TreeConfig cfg;
  cfg.stop_on_solve = true;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 1);
  EXPECT_TRUE(result.solved);
  EXPECT_EQ(result.tree.expansions_used(), 0);
  EXPECT_TRUE(result.expansion_log.empty());
}

TEST(RunSearch, BudgetOneAddsExactlyKChildren) {
  // Hand-built task: the seed has a mutation neighborhood far larger than k.
  SearchFixture fx;
  fx.task.reference_solution = {"(add (mul (var 0) (const 2)) (var 1))", "toydsl"};
  fx.task.seed_programs = {{"(add (mul (var 0) (const 4)) (var 1))", "toydsl"}};
  MutationRefiner refiner(2, 2);
  TreeConfig cfg;
  cfg.budget = 1;
  cfg.k_children = 3;
  cfg.stop_on_solve = false;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 2);
  EXPECT_EQ(result.tree.expansions_used(), 1);
  ASSERT_EQ(result.expansion_log.size(), 1u);
  EXPECT_EQ(result.tree.nodes().size(), fx.task.seed_programs.size() + 3);
}

TEST(RunSearch, SyntheticRootWhenNoSeeds) {
  SearchFixture fx;
  fx.task.seed_programs.clear();
  MutationRefiner refiner(2, 3);
  TreeConfig cfg;
  cfg.budget = 2;
  cfg.k_children = 2;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 3);
  ASSERT_GE(result.tree.nodes().size(), 1u);
  EXPECT_EQ(result.tree.node(0).program.source, "");
  EXPECT_EQ(result.tree.node(0).reward.normalized, 0.0);
  EXPECT_GE(result.tree.expansions_used(), 1);
}

TEST(RunSearch, RefinerErrorConsumesExpansionAndContinues) {
  struct FailingRefiner : Refiner {
    int calls = 0;
    std::vector<Program> refine(const RefinerRequest&) override {
      ++calls;
      throw RefinerError("backend down");
    }
  };
  SearchFixture fx;
  FailingRefiner refiner;
  TreeConfig cfg;
  cfg.budget = 3;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 4);
  EXPECT_EQ(result.tree.expansions_used(), 3);
  EXPECT_EQ(refiner.calls, 3);
  ASSERT_EQ(result.expansion_log.size(), 3u);
  for (const auto& rec : result.expansion_log) EXPECT_TRUE(rec.child_ids.empty());
}

TEST(RunSearch, UnsupportedLanguageAborts) {
  struct AlienRefiner : Refiner {
    std::vector<Program> refine(const RefinerRequest&) override {
      return {Program{"print(1)", "python"}};
    }
  };
  SearchFixture fx;
  AlienRefiner refiner;
  TreeConfig cfg;
  EXPECT_THROW(run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 5),
               UnsupportedLanguageError);
}

TEST(RunSearch, ReproducibleByteForByte) {
  SearchFixture fx;
  TreeConfig cfg;
  cfg.budget = 15;
  cfg.k_children = 4;
  MutationRefiner r1(2, 42);
  MutationRefiner r2(2, 42);
  const SearchResult a =
      run_search(fx.task, r1, fx.backend, fx.limits, fx.reward_fn(), cfg, 42);
  const SearchResult b =
      run_search(fx.task, r2, fx.backend, fx.limits, fx.reward_fn(), cfg, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(snapshot_to_json(a).dump(), snapshot_to_json(b).dump());
}

TEST(RunSearch, ExpansionLogMatchesExpansionsUsed) {
  SearchFixture fx;
  MutationRefiner refiner(2, 6);
  TreeConfig cfg;
  cfg.budget = 10;
  cfg.stop_on_solve = true;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 6);
  EXPECT_EQ(result.expansion_log.size(),
            static_cast<std::size_t>(result.tree.expansions_used()));
  const bool any_full = [&] {
    for (const auto& n : result.tree.nodes())
      if (n.fully_correct()) return true;
    return false;
  }();
  EXPECT_EQ(result.solved, any_full);
}

TEST(RunSearch, BestNodeIsMaxRewardLowestId) {
  SearchFixture fx;
  MutationRefiner refiner(2, 8);
  TreeConfig cfg;
  cfg.budget = 8;
  cfg.stop_on_solve = false;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 8);
  const TreeNode& best = result.tree.node(result.best_node_id);
  for (const auto& node : result.tree.nodes()) {
    EXPECT_LE(node.reward.normalized, best.reward.normalized);
    if (node.reward.normalized == best.reward.normalized)
      EXPECT_GE(node.id, result.best_node_id);
  }
}

TEST(Snapshot, RoundTripFieldEqual) {
  SearchFixture fx;
  MutationRefiner refiner(2, 9);
  TreeConfig cfg;
  cfg.budget = 6;
  cfg.k_children = 3;
  const SearchResult result =
      run_search(fx.task, refiner, fx.backend, fx.limits, fx.reward_fn(), cfg, 9);

  const auto path = std::filesystem::temp_directory_path() / "retree-snap-test.json";
  save_snapshot(result, path.string());
  const SearchResult loaded = load_snapshot(path.string());
  EXPECT_EQ(loaded, result);
  // Serialized form is stable across a save/load/save cycle.
  EXPECT_EQ(snapshot_to_json(loaded).dump(2), snapshot_to_json(result).dump(2));
  std::filesystem::remove(path);
}

TEST(TreeConfigTest, Validation) {
  TreeConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.confidence_weight = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.k_children = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.budget = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace retree
