// retree: refinement-tree search engine over debugging tasks.
//
//   retree gen-toys --count 50 --seed 7 --out tasks.jsonl
//   retree search --tasks tasks.jsonl --out runs/demo --seed 7
//   retree report runs/demo/toy-0000.tree.json --csv curve.csv

#include <CLI11.hpp>

#include "retree/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"refinement-tree search engine for debugging tasks"};
  app.require_subcommand(1);

  // ---- search ----
  auto* search = app.add_subcommand("search", "run tree search over a task file");
  retree::RunConfig run_cfg;
  std::string config_path;
  std::string backend_name;
  search->add_option("--config", config_path, "flat key=value config file");
  search->add_option("--tasks", run_cfg.task_file, "task JSONL file");
  search->add_option("--out", run_cfg.output_dir, "output directory");
  search->add_option("--budget", run_cfg.tree.budget, "max expansions per task");
  search->add_option("--k", run_cfg.tree.k_children, "children per expansion");
  search->add_option("--c", run_cfg.tree.confidence_weight, "confidence weight");
  search->add_option("--group-size", run_cfg.grpo.group_size, "intended GRPO group size");
  search->add_option("--seed", run_cfg.seed, "global seed");
  search->add_option("--backend", backend_name, "toy | scripted | llm");
  search->add_option("--fixture", run_cfg.fixture_path, "scripted backend fixture file");
  search->add_option("--workers", run_cfg.workers, "parallel tasks");
  search->add_option("--timeout-ms", run_cfg.limits.wall_timeout_ms, "per-case wall timeout");
  search->add_option("--selection", [&run_cfg](const CLI::results_t& vals) {
    run_cfg.tree.selection = retree::selection_policy_from_string(vals.at(0));
    return true;
  }, "thompson | uniform_random");

  // ---- gen-toys ----
  auto* gen = app.add_subcommand("gen-toys", "generate a toy-DSL task file");
  retree::GenToysConfig gen_cfg;
  gen->add_option("--count", gen_cfg.count, "number of tasks");
  gen->add_option("--seed", gen_cfg.seed, "global seed");
  gen->add_option("--out", gen_cfg.out, "output JSONL path");
  gen->add_option("--arity", gen_cfg.spec.arity, "inputs per task");
  gen->add_option("--depth", gen_cfg.spec.depth, "max expression depth");
  gen->add_option("--tests", gen_cfg.spec.num_tests, "tests per task");
  gen->add_option("--mutations", gen_cfg.spec.num_mutations, "seed programs per task");

  // ---- report ----
  auto* rep = app.add_subcommand("report", "per-iteration table from tree snapshots");
  retree::ReportOptions rep_opts;
  rep->add_option("snapshots", rep_opts.snapshot_paths, "tree snapshot JSON files");
  rep->add_option("--csv", rep_opts.csv_path, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(search)) {
      if (!config_path.empty()) {
        // File first, then explicit flags override.
        retree::RunConfig file_cfg;
        retree::apply_config_map(retree::parse_flat_config(config_path), file_cfg);
        if (search->count("--tasks") == 0) run_cfg.task_file = file_cfg.task_file;
        if (search->count("--out") == 0) run_cfg.output_dir = file_cfg.output_dir;
        if (search->count("--budget") == 0) run_cfg.tree.budget = file_cfg.tree.budget;
        if (search->count("--k") == 0) run_cfg.tree.k_children = file_cfg.tree.k_children;
        if (search->count("--c") == 0)
          run_cfg.tree.confidence_weight = file_cfg.tree.confidence_weight;
        if (search->count("--selection") == 0) run_cfg.tree.selection = file_cfg.tree.selection;
        run_cfg.tree.stop_on_solve = file_cfg.tree.stop_on_solve;
        if (search->count("--group-size") == 0)
          run_cfg.grpo.group_size = file_cfg.grpo.group_size;
        run_cfg.grpo.eps_low = file_cfg.grpo.eps_low;
        run_cfg.grpo.eps_high = file_cfg.grpo.eps_high;
        if (search->count("--seed") == 0) run_cfg.seed = file_cfg.seed;
        if (search->count("--workers") == 0) run_cfg.workers = file_cfg.workers;
        if (search->count("--timeout-ms") == 0)
          run_cfg.limits.wall_timeout_ms = file_cfg.limits.wall_timeout_ms;
        run_cfg.limits.max_output_bytes = file_cfg.limits.max_output_bytes;
        if (search->count("--backend") == 0) run_cfg.backend = file_cfg.backend;
        if (search->count("--fixture") == 0) run_cfg.fixture_path = file_cfg.fixture_path;
        run_cfg.command_template = file_cfg.command_template;
        run_cfg.feedback_max_failures = file_cfg.feedback_max_failures;
        run_cfg.llm = file_cfg.llm;
      }
      if (!backend_name.empty()) {
        const auto kind = retree::backend_kind_from_string(backend_name);
        if (!kind) {
          std::cerr << "config error: unknown backend: " << backend_name << "\n";
          return 2;
        }
        run_cfg.backend = *kind;
      }
      return retree::cmd_search(run_cfg);
    }
    if (app.got_subcommand(gen)) return retree::cmd_gen_toys(gen_cfg);
    if (app.got_subcommand(rep)) return retree::cmd_report(rep_opts);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
