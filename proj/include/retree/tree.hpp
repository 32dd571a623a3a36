#pragma once

#include <functional>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "retree/refiner.hpp"

namespace retree {

enum class SelectionPolicy { kThompson, kUniformRandom };

inline std::string_view to_string(SelectionPolicy p) {
  return p == SelectionPolicy::kThompson ? "thompson" : "uniform_random";
}

inline SelectionPolicy selection_policy_from_string(std::string_view s) {
  if (s == "thompson") return SelectionPolicy::kThompson;
  if (s == "uniform_random") return SelectionPolicy::kUniformRandom;
  throw std::invalid_argument("unknown selection policy: " + std::string(s));
}

struct TreeConfig {
  double confidence_weight = 3.0;  // C: how strongly reward shapes the posterior
  int k_children = 5;
  int budget = 50;
  bool stop_on_solve = true;
  SelectionPolicy selection = SelectionPolicy::kThompson;

  void validate() const {
    if (confidence_weight <= 0) throw std::invalid_argument("confidence_weight must be > 0");
    if (k_children < 1) throw std::invalid_argument("k_children must be >= 1");
    if (budget < 1) throw std::invalid_argument("budget must be >= 1");
  }

  friend bool operator==(const TreeConfig&, const TreeConfig&) = default;
};

// One program variant in the refinement forest. `failures` counts the
// children of this node that were not fully correct -- the dead-end penalty
// feeding the Beta posterior.
struct TreeNode {
  int id = 0;
  std::optional<int> parent_id;
  Program program;
  RewardBreakdown reward;
  EvalResult eval;
  int failures = 0;
  int depth = 0;
  std::vector<int> children;

  bool fully_correct() const { return eval.total >= 1 && eval.passed == eval.total; }

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Posterior parameters for one node, from its normalized reward Rhat and
// failure count N:
//
//   alpha = 1 + C * Rhat
//   beta  = 1 + C * (1 - Rhat) + N
//
// Both stay >= 1 because Rhat is kept in [0, 1].
inline std::pair<double, double> beta_params(const TreeNode& node, double confidence_weight) {
  const double reward = node.reward.normalized;
  const double alpha = 1.0 + confidence_weight * reward;
  const double beta = 1.0 + confidence_weight * (1.0 - reward) + static_cast<double>(node.failures);
  return {alpha, beta};
}

struct ThetaSample {
  int node_id = 0;
  double theta = 0.0;

  friend bool operator==(const ThetaSample&, const ThetaSample&) = default;
};

struct ExpansionRecord {
  int selected_node_id = 0;
  std::vector<ThetaSample> sampled_values;  // empty under uniform-random selection
  std::vector<int> child_ids;
  std::string feedback_summary;

  friend bool operator==(const ExpansionRecord&, const ExpansionRecord&) = default;
};

// Forest of program variants: one root per seed program, dense node ids,
// single logical writer. Selection draws one theta per node and picks the
// argmax (ties to the lowest id, for determinism under floating-point).
class RefinementTree {
 public:
  RefinementTree(TreeConfig config, std::uint64_t rng_seed)
      : config_(std::move(config)), rng_seed_(rng_seed), rng_(rng_seed) {
    config_.validate();
  }

  int add_root(Program program, RewardBreakdown reward, EvalResult eval) {
    TreeNode node;
    node.id = static_cast<int>(nodes_.size());
    node.program = std::move(program);
    node.reward = reward;
    node.eval = std::move(eval);
    nodes_.push_back(std::move(node));
    root_ids_.push_back(nodes_.back().id);
    return nodes_.back().id;
  }

  std::vector<int> add_children(
      int parent_id, const std::vector<std::tuple<Program, RewardBreakdown, EvalResult>>& batch) {
    if (parent_id < 0 || static_cast<std::size_t>(parent_id) >= nodes_.size())
      throw std::invalid_argument("unknown parent node id " + std::to_string(parent_id));
    if (batch.empty()) throw std::invalid_argument("add_children requires a non-empty batch");
    std::vector<int> ids;
    ids.reserve(batch.size());
    for (const auto& [program, reward, eval] : batch) {
      TreeNode node;
      node.id = static_cast<int>(nodes_.size());
      node.parent_id = parent_id;
      node.program = program;
      node.reward = reward;
      node.eval = eval;
      node.depth = nodes_[static_cast<std::size_t>(parent_id)].depth + 1;
      const bool solved = node.fully_correct();
      nodes_.push_back(std::move(node));
      auto& parent = nodes_[static_cast<std::size_t>(parent_id)];
      parent.children.push_back(nodes_.back().id);
      if (!solved) ++parent.failures;
      ids.push_back(nodes_.back().id);
    }
    return ids;
  }

  // Thompson step: theta_node ~ Beta(alpha_node, beta_node) for every node,
  // return the argmax. Under uniform-random selection, one index draw.
  int select_node(std::vector<ThetaSample>* samples = nullptr) {
    if (nodes_.empty()) throw std::logic_error("select_node on an empty tree");
    if (samples) samples->clear();
    if (config_.selection == SelectionPolicy::kUniformRandom)
      return static_cast<int>(rng_.next_below(nodes_.size()));
    int best_id = 0;
    double best_theta = -1.0;
    for (const auto& node : nodes_) {
      const auto [alpha, beta] = beta_params(node, config_.confidence_weight);
      const double theta = rng_.beta(alpha, beta);
      if (samples) samples->push_back({node.id, theta});
      if (theta > best_theta) {
        best_theta = theta;
        best_id = node.id;
      }
    }
    return best_id;
  }

  void mark_expansion() { ++expansions_used_; }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<int>& root_ids() const { return root_ids_; }
  const TreeConfig& config() const { return config_; }
  std::uint64_t rng_seed() const { return rng_seed_; }
  int expansions_used() const { return expansions_used_; }

  friend bool operator==(const RefinementTree& a, const RefinementTree& b) {
    return a.nodes_ == b.nodes_ && a.root_ids_ == b.root_ids_ && a.config_ == b.config_ &&
           a.rng_seed_ == b.rng_seed_ && a.expansions_used_ == b.expansions_used_;
  }

 private:
  TreeConfig config_;
  std::uint64_t rng_seed_;
  Rng rng_;
  std::vector<TreeNode> nodes_;
  std::vector<int> root_ids_;
  int expansions_used_ = 0;
};

struct SearchResult {
  explicit SearchResult(RefinementTree t) : tree(std::move(t)) {}

  RefinementTree tree;
  bool solved = false;
  int best_node_id = 0;
  std::vector<ExpansionRecord> expansion_log;
  std::string task_id;
  std::string task_description;

  friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

using RewardFn = std::function<RewardBreakdown(const Program&, const EvalResult&)>;

// The search loop: select a node, render its feedback, ask the refiner for up
// to k_children candidates, evaluate and score each, attach them, repeat until
// the budget is spent or (with stop_on_solve) a fully correct node appears.
// A RefinerError on one expansion consumes the expansion and the loop goes on;
// evaluator errors (e.g. unsupported language) abort the search.
inline SearchResult run_search(const Task& task, Refiner& refiner, ExecutionBackend& backend,
                               const ExecutionLimits& limits, const RewardFn& reward_fn,
                               const TreeConfig& config, std::uint64_t rng_seed,
                               std::size_t feedback_max_listed = 3) {
  config.validate();
  validate_task(task);

  SearchResult result{RefinementTree(config, rng_seed)};
  result.task_id = task.id;
  result.task_description = task.description;

  std::vector<Program> roots = task.seed_programs;
  if (roots.empty()) roots.push_back(Program{"", task.language_tag});  // synthetic empty attempt
  for (const auto& seed : roots) {
    const EvalResult eval = run_tests(seed, task.tests, backend, limits);
    const RewardBreakdown reward = reward_fn(seed, eval);
    const int id = result.tree.add_root(seed, reward, eval);
    if (result.tree.node(id).fully_correct()) result.solved = true;
  }

  while (result.tree.expansions_used() < config.budget &&
         !(result.solved && config.stop_on_solve)) {
    ExpansionRecord record;
    record.selected_node_id = result.tree.select_node(&record.sampled_values);
    const TreeNode& selected = result.tree.node(record.selected_node_id);
    const Feedback feedback = render_feedback(selected.eval, task.tests, feedback_max_listed);
    record.feedback_summary = feedback.summary;

    RefinerRequest request;
    request.task_description = task.description;
    request.current_program = selected.program;
    request.feedback = feedback;
    request.k = config.k_children;
    request.temperature = refiner.preferred_temperature();

    std::vector<Program> proposals;
    try {
      proposals = refiner.refine(request);
    } catch (const RefinerError&) {
      proposals.clear();
    }

    result.tree.mark_expansion();
    if (!proposals.empty()) {
      std::vector<std::tuple<Program, RewardBreakdown, EvalResult>> batch;
      batch.reserve(proposals.size());
      for (auto& candidate : proposals) {
        EvalResult eval = run_tests(candidate, task.tests, backend, limits);
        RewardBreakdown reward = reward_fn(candidate, eval);
        batch.emplace_back(std::move(candidate), reward, std::move(eval));
      }
      record.child_ids = result.tree.add_children(record.selected_node_id, batch);
      for (const int id : record.child_ids)
        if (result.tree.node(id).fully_correct()) result.solved = true;
    }
    result.expansion_log.push_back(std::move(record));
  }

  int best_id = 0;
  double best_reward = -1.0;
  for (const auto& node : result.tree.nodes()) {
    if (node.reward.normalized > best_reward) {
      best_reward = node.reward.normalized;
      best_id = node.id;
    }
  }
  result.best_node_id = best_id;
  return result;
}

// ---------------------------------------------------------------------------
// Snapshot serialization: one JSON document with stable key order.
// ---------------------------------------------------------------------------

inline constexpr int kSnapshotSchemaVersion = 1;

namespace detail {

inline ordered_json eval_to_json(const EvalResult& eval) {
  ordered_json j;
  j["passed"] = eval.passed;
  j["total"] = eval.total;
  j["per_case"] = ordered_json::array();
  for (const auto& c : eval.per_case) {
    ordered_json jc;
    jc["case_id"] = c.case_id;
    jc["outcome"] = std::string(to_string(c.outcome));
    jc["observed_output"] = c.observed_output;
    j["per_case"].push_back(std::move(jc));
  }
  return j;
}

inline EvalResult eval_from_json(const ordered_json& j) {
  std::vector<CaseResult> per_case;
  for (const auto& jc : j.at("per_case")) {
    CaseResult c;
    c.case_id = jc.at("case_id").get<std::string>();
    c.outcome = case_outcome_from_string(jc.at("outcome").get<std::string>());
    c.observed_output = jc.at("observed_output").get<std::string>();
    per_case.push_back(std::move(c));
  }
  return finalize_eval(std::move(per_case));
}

inline ordered_json reward_to_json(const RewardBreakdown& r) {
  ordered_json j;
  j["codebleu"] = r.codebleu;
  j["pass_fraction"] = r.pass_fraction;
  j["raw"] = r.raw;
  j["normalized"] = r.normalized;
  return j;
}

inline RewardBreakdown reward_from_json(const ordered_json& j) {
  RewardBreakdown r;
  r.codebleu = j.at("codebleu").get<double>();
  r.pass_fraction = j.at("pass_fraction").get<double>();
  r.raw = j.at("raw").get<double>();
  r.normalized = j.at("normalized").get<double>();
  return r;
}

}  // namespace detail

inline ordered_json snapshot_to_json(const SearchResult& result) {
  ordered_json j;
  j["schema_version"] = kSnapshotSchemaVersion;
  j["task_id"] = result.task_id;
  j["task_description"] = result.task_description;
  j["rng_seed"] = result.tree.rng_seed();

  const TreeConfig& cfg = result.tree.config();
  ordered_json jc;
  jc["confidence_weight"] = cfg.confidence_weight;
  jc["k_children"] = cfg.k_children;
  jc["budget"] = cfg.budget;
  jc["stop_on_solve"] = cfg.stop_on_solve;
  jc["selection"] = std::string(to_string(cfg.selection));
  j["config"] = std::move(jc);

  j["root_ids"] = result.tree.root_ids();
  j["nodes"] = ordered_json::array();
  for (const auto& node : result.tree.nodes()) {
    ordered_json jn;
    jn["id"] = node.id;
    if (node.parent_id)
      jn["parent_id"] = *node.parent_id;
    else
      jn["parent_id"] = nullptr;
    jn["program"] = ordered_json{{"source", node.program.source},
                                 {"language", node.program.language_tag}};
    jn["reward"] = detail::reward_to_json(node.reward);
    jn["eval"] = detail::eval_to_json(node.eval);
    jn["failures"] = node.failures;
    jn["depth"] = node.depth;
    jn["children"] = node.children;
    j["nodes"].push_back(std::move(jn));
  }

  j["expansions_used"] = result.tree.expansions_used();
  j["expansion_log"] = ordered_json::array();
  for (const auto& rec : result.expansion_log) {
    ordered_json jr;
    jr["selected_node_id"] = rec.selected_node_id;
    jr["sampled_values"] = ordered_json::array();
    for (const auto& s : rec.sampled_values)
      jr["sampled_values"].push_back(ordered_json{{"node_id", s.node_id}, {"theta", s.theta}});
    jr["child_ids"] = rec.child_ids;
    jr["feedback_summary"] = rec.feedback_summary;
    j["expansion_log"].push_back(std::move(jr));
  }

  j["solved"] = result.solved;
  j["best_node_id"] = result.best_node_id;
  return j;
}

inline SearchResult snapshot_from_json(const ordered_json& j) {
  if (j.at("schema_version").get<int>() != kSnapshotSchemaVersion)
    throw std::runtime_error("unsupported snapshot schema version");

  TreeConfig cfg;
  const auto& jc = j.at("config");
  cfg.confidence_weight = jc.at("confidence_weight").get<double>();
  cfg.k_children = jc.at("k_children").get<int>();
  cfg.budget = jc.at("budget").get<int>();
  cfg.stop_on_solve = jc.at("stop_on_solve").get<bool>();
  cfg.selection = selection_policy_from_string(jc.at("selection").get<std::string>());

  SearchResult result{RefinementTree(cfg, j.at("rng_seed").get<std::uint64_t>())};
  result.task_id = j.at("task_id").get<std::string>();
  result.task_description = j.at("task_description").get<std::string>();

  // Rebuild nodes through the regular mutation API so invariants hold.
  struct PendingChild {
    int parent;
    Program program;
    RewardBreakdown reward;
    EvalResult eval;
    int failures;
    std::vector<int> children;
  };
  for (const auto& jn : j.at("nodes")) {
    Program program{jn.at("program").at("source").get<std::string>(),
                    jn.at("program").at("language").get<std::string>()};
    RewardBreakdown reward = detail::reward_from_json(jn.at("reward"));
    EvalResult eval = detail::eval_from_json(jn.at("eval"));
    if (jn.at("parent_id").is_null()) {
      result.tree.add_root(std::move(program), reward, std::move(eval));
    } else {
      result.tree.add_children(
          jn.at("parent_id").get<int>(),
          {std::make_tuple(std::move(program), reward, std::move(eval))});
    }
  }
  for (int i = 0; i < j.at("expansions_used").get<int>(); ++i) result.tree.mark_expansion();

  for (const auto& jr : j.at("expansion_log")) {
    ExpansionRecord rec;
    rec.selected_node_id = jr.at("selected_node_id").get<int>();
    for (const auto& js : jr.at("sampled_values"))
      rec.sampled_values.push_back({js.at("node_id").get<int>(), js.at("theta").get<double>()});
    rec.child_ids = jr.at("child_ids").get<std::vector<int>>();
    rec.feedback_summary = jr.at("feedback_summary").get<std::string>();
    result.expansion_log.push_back(std::move(rec));
  }

  result.solved = j.at("solved").get<bool>();
  result.best_node_id = j.at("best_node_id").get<int>();
  return result;
}

inline void save_snapshot(const SearchResult& result, const std::string& path) {
  write_file_atomic(path, snapshot_to_json(result).dump(2) + "\n");
}

inline SearchResult load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open snapshot: " + path);
  ordered_json j;
  in >> j;
  return snapshot_from_json(j);
}

}  // namespace retree
