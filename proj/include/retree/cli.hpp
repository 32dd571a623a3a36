#pragma once

#include <atomic>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "retree/grpo.hpp"
#include "retree/llm_refiner.hpp"

namespace retree {

enum class BackendKind { kToy, kScripted, kLlm };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::kToy: return "toy";
    case BackendKind::kScripted: return "scripted";
    case BackendKind::kLlm: return "llm";
  }
  return "toy";
}

inline std::optional<BackendKind> backend_kind_from_string(std::string_view s) {
  if (s == "toy") return BackendKind::kToy;
  if (s == "scripted") return BackendKind::kScripted;
  if (s == "llm") return BackendKind::kLlm;
  return std::nullopt;
}

struct RunConfig {
  std::string task_file;
  std::string output_dir;
  TreeConfig tree;
  GRPOConfig grpo;
  ExecutionLimits limits;
  BackendKind backend = BackendKind::kToy;
  std::string fixture_path;         // scripted backend
  LlmBackendConfig llm;             // llm backend
  std::string command_template;     // external evaluator for non-toydsl tasks
  std::vector<std::string> env_blocklist;
  std::uint64_t seed = 0;
  int workers = 1;
  std::size_t feedback_max_failures = 3;
};

// Flat key = value configuration file; '#' starts a comment. Flags given on
// the command line override file values.
inline std::map<std::string, std::string> parse_flat_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected key = value");
    const std::string key{trim(body.substr(0, eq))};
    const std::string value{trim(body.substr(eq + 1))};
    if (key.empty())
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& s) { return std::stoull(s); }
inline double parse_double(const std::string& s) { return std::stod(s); }
inline int parse_int(const std::string& s) { return std::stoi(s); }
inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::runtime_error("expected boolean, got: " + s);
}

}  // namespace detail

inline void apply_config_map(const std::map<std::string, std::string>& kv, RunConfig& cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "tasks") cfg.task_file = value;
    else if (key == "out") cfg.output_dir = value;
    else if (key == "backend") {
      const auto kind = backend_kind_from_string(value);
      if (!kind) throw std::runtime_error("unknown backend: " + value);
      cfg.backend = *kind;
    }
    else if (key == "fixture") cfg.fixture_path = value;
    else if (key == "seed") cfg.seed = detail::parse_u64(value);
    else if (key == "workers") cfg.workers = detail::parse_int(value);
    else if (key == "budget") cfg.tree.budget = detail::parse_int(value);
    else if (key == "k") cfg.tree.k_children = detail::parse_int(value);
    else if (key == "c") cfg.tree.confidence_weight = detail::parse_double(value);
    else if (key == "stop_on_solve") cfg.tree.stop_on_solve = detail::parse_bool(value);
    else if (key == "selection") cfg.tree.selection = selection_policy_from_string(value);
    else if (key == "group_size") cfg.grpo.group_size = detail::parse_int(value);
    else if (key == "eps_low") cfg.grpo.eps_low = detail::parse_double(value);
    else if (key == "eps_high") cfg.grpo.eps_high = detail::parse_double(value);
    else if (key == "timeout_ms") cfg.limits.wall_timeout_ms = detail::parse_int(value);
    else if (key == "max_output_bytes") cfg.limits.max_output_bytes = detail::parse_int(value);
    else if (key == "feedback_max_failures")
      cfg.feedback_max_failures = static_cast<std::size_t>(detail::parse_int(value));
    else if (key == "command_template") cfg.command_template = value;
    else if (key == "llm.endpoint_url") cfg.llm.endpoint_url = value;
    else if (key == "llm.model") cfg.llm.model_name = value;
    else if (key == "llm.api_key_env") cfg.llm.api_key_env_var = value;
    else if (key == "llm.temperature_train") cfg.llm.temperature_train = detail::parse_double(value);
    else if (key == "llm.temperature_eval") cfg.llm.temperature_eval = detail::parse_double(value);
    else if (key == "llm.max_tokens") cfg.llm.max_tokens = detail::parse_int(value);
    else if (key == "llm.request_timeout_ms")
      cfg.llm.request_timeout_ms = detail::parse_int(value);
    else if (key == "llm.max_retries") cfg.llm.max_retries = detail::parse_int(value);
    else if (key == "llm.requests_per_second")
      cfg.llm.requests_per_second = detail::parse_double(value);
    else throw std::runtime_error("unknown config key: " + key);
  }
}

namespace detail {

struct TaskOutcome {
  std::string task_id;
  bool solved = false;
  int expansions_used = 0;
  int node_count = 0;
  double best_reward = 0.0;
  int best_node_id = 0;
  std::vector<double> child_rewards;
  std::string error;  // non-empty = engine error for this task
};

inline std::unique_ptr<Refiner> make_refiner(const RunConfig& cfg, const Task& task,
                                             std::uint64_t task_seed) {
  switch (cfg.backend) {
    case BackendKind::kToy:
      return std::make_unique<MutationRefiner>(toydsl::infer_arity(task),
                                               derive_seed(task_seed, "refiner"));
    case BackendKind::kScripted: {
      return std::make_unique<ScriptedRefiner>(ScriptedRefiner::from_file(cfg.fixture_path));
    }
    case BackendKind::kLlm:
      return std::make_unique<LlmRefiner>(cfg.llm, task.language_tag);
  }
  throw std::logic_error("unreachable backend kind");
}

inline std::unique_ptr<ExecutionBackend> make_backend(const RunConfig& cfg, const Task& task) {
  if (task.language_tag == "toydsl") return std::make_unique<toydsl::ToyDslBackend>();
  if (cfg.command_template.empty())
    throw UnsupportedLanguageError(task.language_tag + " (no command_template configured)");
  ExternalCommandConfig ext;
  ext.command_template = cfg.command_template;
  ext.env_blocklist = cfg.env_blocklist;
  return std::make_unique<ExternalCommandBackend>(std::move(ext));
}

inline TaskOutcome run_one_task(const RunConfig& cfg, const Task& task) {
  TaskOutcome outcome;
  outcome.task_id = task.id;
  const std::uint64_t task_seed = derive_seed(cfg.seed, task.id);
  try {
    const auto refiner = make_refiner(cfg, task, task_seed);
    const auto backend = make_backend(cfg, task);
    const CodeBleuConfig bleu_cfg;
    const Program& reference = task.reference_solution;
    const RewardFn reward_fn = [&](const Program& candidate, const EvalResult& eval) {
      return compute_reward(candidate, reference, eval, bleu_cfg);
    };

    const SearchResult result = run_search(task, *refiner, *backend, cfg.limits, reward_fn,
                                           cfg.tree, task_seed, cfg.feedback_max_failures);

    auto groups = extract_groups(result, cfg.grpo);
    for (auto& g : groups) normalize_advantages(g, cfg.grpo);

    const std::filesystem::path out_dir(cfg.output_dir);
    save_snapshot(result, (out_dir / (task.id + ".tree.json")).string());
    emit_dataset(groups, (out_dir / (task.id + ".dataset.jsonl")).string());

    outcome.solved = result.solved;
    outcome.expansions_used = result.tree.expansions_used();
    outcome.node_count = static_cast<int>(result.tree.nodes().size());
    outcome.best_reward = result.tree.node(result.best_node_id).reward.normalized;
    outcome.best_node_id = result.best_node_id;
    for (const auto& node : result.tree.nodes())
      if (node.parent_id) outcome.child_rewards.push_back(node.reward.normalized);
  } catch (const std::exception& e) {
    outcome.error = e.what();
  }
  return outcome;
}

inline ordered_json summary_report(const RunConfig& cfg, const std::vector<TaskOutcome>& outcomes) {
  ordered_json report;
  report["schema_version"] = 1;
  report["backend"] = std::string(to_string(cfg.backend));
  report["seed"] = cfg.seed;

  report["tasks"] = ordered_json::array();
  int solved = 0;
  int errored = 0;
  long long total_expansions = 0;
  std::vector<int> histogram(10, 0);
  for (const auto& o : outcomes) {
    ordered_json jt;
    jt["id"] = o.task_id;
    if (!o.error.empty()) {
      jt["error"] = o.error;
      ++errored;
    } else {
      jt["solved"] = o.solved;
      jt["expansions_used"] = o.expansions_used;
      jt["node_count"] = o.node_count;
      jt["best_reward"] = o.best_reward;
      jt["best_node_id"] = o.best_node_id;
      solved += o.solved ? 1 : 0;
      total_expansions += o.expansions_used;
      for (const double r : o.child_rewards) {
        const int bin = std::min(9, static_cast<int>(r * 10.0));
        ++histogram[static_cast<std::size_t>(std::max(0, bin))];
      }
    }
    report["tasks"].push_back(std::move(jt));
  }

  const int n_ok = static_cast<int>(outcomes.size()) - errored;
  ordered_json totals;
  totals["tasks"] = outcomes.size();
  totals["errors"] = errored;
  totals["solved"] = solved;
  totals["solve_rate"] = n_ok > 0 ? static_cast<double>(solved) / n_ok : 0.0;
  totals["total_expansions"] = total_expansions;
  totals["reward_histogram"] = histogram;  // 10 bins over normalized reward [0, 1]
  report["summary"] = std::move(totals);
  return report;
}

}  // namespace detail

// Runs the search over every task in the file; per task writes
// <id>.tree.json and <id>.dataset.jsonl under the output directory, then a
// run-level report.json. Unsolved tasks are not errors; exit is 1 only when
// a task aborted with an engine error, 2 for unusable configuration.
inline int cmd_search(const RunConfig& cfg) {
  try {
    cfg.tree.validate();
    cfg.grpo.validate();
    cfg.limits.validate();
    if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (cfg.task_file.empty()) throw std::invalid_argument("task file must be set");
    if (cfg.output_dir.empty()) throw std::invalid_argument("output directory must be set");
    if (!std::filesystem::exists(cfg.task_file))
      throw std::invalid_argument("task file does not exist: " + cfg.task_file);
    if (cfg.backend == BackendKind::kScripted) {
      if (cfg.fixture_path.empty()) throw std::invalid_argument("scripted backend needs fixture");
      if (!std::filesystem::exists(cfg.fixture_path))
        throw std::invalid_argument("fixture does not exist: " + cfg.fixture_path);
    }
    if (cfg.backend == BackendKind::kLlm) cfg.llm.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  std::vector<Task> tasks;
  try {
    std::filesystem::create_directories(cfg.output_dir);
    tasks = load_tasks(cfg.task_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::vector<detail::TaskOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      outcomes[i] = detail::run_one_task(cfg, tasks[i]);  // slot per task: order independent of workers
    }
  };
  const int n_workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), std::max<std::size_t>(tasks.size(), 1)));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  const ordered_json report = detail::summary_report(cfg, outcomes);
  bool had_error = false;
  for (const auto& o : outcomes) {
    if (!o.error.empty()) {
      had_error = true;
      std::cerr << "task " << o.task_id << " failed: " << o.error << "\n";
    }
  }
  try {
    write_file_atomic((std::filesystem::path(cfg.output_dir) / "report.json").string(),
                      report.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error writing report: " << e.what() << "\n";
    return 1;
  }

  const auto& summary = report.at("summary");
  std::cout << "tasks: " << summary.at("tasks") << "  solved: " << summary.at("solved")
            << "  errors: " << summary.at("errors")
            << "  expansions: " << summary.at("total_expansions") << "\n";
  return had_error ? 1 : 0;
}

struct GenToysConfig {
  int count = 0;
  std::uint64_t seed = 0;
  toydsl::ToyTaskSpec spec;
  std::string out;
};

inline int cmd_gen_toys(const GenToysConfig& cfg) {
  try {
    if (cfg.count < 1) throw std::invalid_argument("count must be >= 1");
    if (cfg.out.empty()) throw std::invalid_argument("output path must be set");
    cfg.spec.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    std::vector<Task> tasks;
    std::vector<std::string> warnings;
    for (int i = 0; i < cfg.count; ++i) {
      std::string id = "toy-" + std::string(i < 10 ? "000" : i < 100 ? "00" : i < 1000 ? "0" : "") +
                       std::to_string(i);
      toydsl::ToyTaskSpec spec = cfg.spec;
      spec.rng_seed = derive_seed(cfg.seed, id);
      tasks.push_back(toydsl::generate_task(spec, id, &warnings));
    }
    save_tasks(tasks, cfg.out);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << tasks.size() << " tasks written to " << cfg.out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

struct ReportOptions {
  std::vector<std::string> snapshot_paths;
  std::string csv_path;  // optional
};

// Per-iteration cumulative view over one or more snapshots: iteration 0 is
// the roots, iteration i the state after i expansions. Prints mean cumulative
// best reward and solve rate; optionally writes the same table as CSV.
inline int cmd_report(const ReportOptions& opts) {
  if (opts.snapshot_paths.empty()) {
    std::cerr << "error: no snapshots given\n";
    return 1;
  }
  std::vector<SearchResult> results;
  for (const auto& path : opts.snapshot_paths) {
    try {
      results.push_back(load_snapshot(path));
    } catch (const std::exception& e) {
      std::cerr << "error: " << path << ": " << e.what() << "\n";
      return 1;
    }
  }

  std::size_t max_iters = 0;
  for (const auto& r : results)
    max_iters = std::max(max_iters, r.expansion_log.size());

  // best_by_iter[s][i]: best normalized reward in snapshot s after i expansions.
  std::vector<std::vector<double>> best_by_iter;
  std::vector<std::vector<bool>> solved_by_iter;
  for (const auto& r : results) {
    std::vector<double> best;
    std::vector<bool> solved;
    double cum_best = 0.0;
    bool cum_solved = false;
    std::size_t node_idx = 0;
    const auto absorb_until = [&](std::size_t count) {
      for (; node_idx < count && node_idx < r.tree.nodes().size(); ++node_idx) {
        const auto& node = r.tree.nodes()[node_idx];
        cum_best = std::max(cum_best, node.reward.normalized);
        cum_solved = cum_solved || node.fully_correct();
      }
    };
    absorb_until(r.tree.root_ids().size());
    best.push_back(cum_best);
    solved.push_back(cum_solved);
    std::size_t seen = r.tree.root_ids().size();
    for (const auto& rec : r.expansion_log) {
      seen += rec.child_ids.size();
      absorb_until(seen);
      best.push_back(cum_best);
      solved.push_back(cum_solved);
    }
    while (best.size() < max_iters + 1) {  // solved-early runs hold their final state
      best.push_back(cum_best);
      solved.push_back(cum_solved);
    }
    best_by_iter.push_back(std::move(best));
    solved_by_iter.push_back(std::move(solved));
  }

  std::ostringstream csv;
  csv << "iteration,mean_cumulative_best_reward,solve_rate\n";
  std::cout << "iter  mean_cum_best_reward  solve_rate\n";
  for (std::size_t i = 0; i <= max_iters; ++i) {
    double sum_best = 0.0;
    int solved = 0;
    for (std::size_t s = 0; s < results.size(); ++s) {
      sum_best += best_by_iter[s][i];
      solved += solved_by_iter[s][i] ? 1 : 0;
    }
    const double mean_best = sum_best / static_cast<double>(results.size());
    const double solve_rate = static_cast<double>(solved) / static_cast<double>(results.size());
    char line[96];
    std::snprintf(line, sizeof(line), "%4zu  %20.6f  %10.4f", i, mean_best, solve_rate);
    std::cout << line << "\n";
    csv << i << "," << mean_best << "," << solve_rate << "\n";
  }

  // pass@k over the pooled children of all expansions, per snapshot.
  for (std::size_t s = 0; s < results.size(); ++s) {
    int n = 0;
    int c = 0;
    for (const auto& node : results[s].tree.nodes()) {
      if (!node.parent_id) continue;
      ++n;
      if (node.fully_correct()) ++c;
    }
    if (n >= 1) {
      std::cout << results[s].task_id << ": children=" << n << " correct=" << c
                << " pass@1=" << estimate_pass_at_k(n, c, 1);
      if (n >= 8) std::cout << " pass@8=" << estimate_pass_at_k(n, c, 8);
      std::cout << "\n";
    }
  }

  if (!opts.csv_path.empty()) {
    try {
      write_file_atomic(opts.csv_path, csv.str());
    } catch (const std::exception& e) {
      std::cerr << "error writing csv: " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace retree
