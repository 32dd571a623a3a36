#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "retree/tree.hpp"

namespace retree {

struct GRPOConfig {
  int group_size = 8;      // intended rollouts per query
  double eps_low = 0.2;    // asymmetric clip band, lower
  double eps_high = 0.3;   // asymmetric clip band, upper
  double std_floor = 1e-8;
  bool include_kl = false;  // KL term removed; kept as a config bit for clarity

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (eps_low <= 0 || eps_high <= 0) throw std::invalid_argument("clip epsilons must be > 0");
    if (std_floor <= 0) throw std::invalid_argument("std_floor must be > 0");
    if (include_kl) throw std::invalid_argument("KL term is not implemented");
  }
};

struct TrajectoryState {
  std::string task_description;
  std::string parent_program;
  std::string feedback;

  friend bool operator==(const TrajectoryState&, const TrajectoryState&) = default;
};

// One (state, action, reward) training example; `advantage` is filled by
// group normalization.
struct TrajectoryRecord {
  std::string task_id;
  int group_id = 0;
  int parent_node_id = 0;
  TrajectoryState state;
  std::string action;
  double reward = 0.0;
  double advantage = 0.0;

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

struct AdvantageGroup {
  std::vector<TrajectoryRecord> records;
  double mu = 0.0;
  double sigma = 0.0;  // population std
  bool degenerate = false;

  friend bool operator==(const AdvantageGroup&, const AdvantageGroup&) = default;
};

// The children of one expansion share their parent's state, so they form one
// advantage group (group_id = expansion index). Expansions that kept fewer
// than two children are dropped.
inline std::vector<AdvantageGroup> extract_groups(const SearchResult& result,
                                                  const GRPOConfig& cfg) {
  cfg.validate();
  std::vector<AdvantageGroup> groups;
  for (std::size_t i = 0; i < result.expansion_log.size(); ++i) {
    const ExpansionRecord& rec = result.expansion_log[i];
    if (rec.child_ids.size() < 2) continue;
    AdvantageGroup group;
    const TreeNode& parent = result.tree.node(rec.selected_node_id);
    for (const int child_id : rec.child_ids) {
      const TreeNode& child = result.tree.node(child_id);
      TrajectoryRecord r;
      r.task_id = result.task_id;
      r.group_id = static_cast<int>(i);
      r.parent_node_id = parent.id;
      r.state = {result.task_description, parent.program.source, rec.feedback_summary};
      r.action = child.program.source;
      r.reward = child.reward.normalized;
      group.records.push_back(std::move(r));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

// A_i = (r_i - mu) / sigma with the population standard deviation; groups
// whose sigma falls under std_floor get all-zero advantages.
inline void normalize_advantages(AdvantageGroup& group, const GRPOConfig& cfg = {}) {
  if (group.records.size() < 2)
    throw std::invalid_argument("advantage group needs at least 2 records");
  double sum = 0.0;
  for (const auto& r : group.records) sum += r.reward;
  group.mu = sum / static_cast<double>(group.records.size());
  double var = 0.0;
  for (const auto& r : group.records) {
    const double d = r.reward - group.mu;
    var += d * d;
  }
  group.sigma = std::sqrt(var / static_cast<double>(group.records.size()));
  group.degenerate = group.sigma < cfg.std_floor;
  for (auto& r : group.records)
    r.advantage = group.degenerate ? 0.0 : (r.reward - group.mu) / group.sigma;
}

// Token log-probabilities for one response under the new and old policy, plus
// the response-level advantage broadcast to every token.
struct ResponseTokens {
  std::vector<double> new_logp;
  std::vector<double> old_logp;
  double advantage = 0.0;
};

struct GRPOBatch {
  std::vector<ResponseTokens> responses;
};

// Clipped surrogate, averaged per token then per response:
//
//   J = (1/G) sum_i (1/|o_i|) sum_t min(ratio * A_i,
//                                       clip(ratio, 1-eps_low, 1+eps_high) * A_i)
//
// with ratio = exp(new_logp - old_logp). No KL term.
inline double grpo_objective(const GRPOBatch& batch, const GRPOConfig& cfg) {
  cfg.validate();
  if (batch.responses.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.responses.size(); ++i) {
    const auto& resp = batch.responses[i];
    if (resp.new_logp.size() != resp.old_logp.size())
      throw std::invalid_argument("response " + std::to_string(i) +
                                  ": log-prob arrays differ in length");
    if (resp.new_logp.empty())
      throw std::invalid_argument("response " + std::to_string(i) + ": no tokens");
    double per_token_sum = 0.0;
    for (std::size_t t = 0; t < resp.new_logp.size(); ++t) {
      const double ratio = std::exp(resp.new_logp[t] - resp.old_logp[t]);
      if (!std::isfinite(ratio))
        throw std::domain_error("non-finite ratio at response " + std::to_string(i) +
                                ", token " + std::to_string(t));
      const double clipped = std::min(std::max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high);
      per_token_sum += std::min(ratio * resp.advantage, clipped * resp.advantage);
    }
    total += per_token_sum / static_cast<double>(resp.new_logp.size());
  }
  return total / static_cast<double>(batch.responses.size());
}

// ---------------------------------------------------------------------------
// Dataset serialization: JSON Lines, header record first, then one record per
// line with the group stats repeated. An empty group list emits an empty file.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetSchemaVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string dataset_to_jsonl(const std::vector<AdvantageGroup>& groups) {
  if (groups.empty()) return {};
  std::string out;
  ordered_json header;
  header["schema_version"] = kDatasetSchemaVersion;
  header["kind"] = "trajectory_dataset";
  out += header.dump();
  out += '\n';
  for (const auto& group : groups) {
    for (const auto& r : group.records) {
      ordered_json j;
      j["task_id"] = r.task_id;
      j["group_id"] = r.group_id;
      j["parent_node_id"] = r.parent_node_id;
      j["state"] = ordered_json{{"description", r.state.task_description},
                                {"parent_program", r.state.parent_program},
                                {"feedback", r.state.feedback}};
      j["action"] = r.action;
      j["reward"] = r.reward;
      j["advantage"] = r.advantage;
      j["mu"] = group.mu;
      j["sigma"] = group.sigma;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

inline void emit_dataset(const std::vector<AdvantageGroup>& groups, const std::string& path) {
  write_file_atomic(path, dataset_to_jsonl(groups));
}

inline std::vector<AdvantageGroup> load_dataset(const std::string& path,
                                                const GRPOConfig& cfg = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset: " + path);
  std::vector<AdvantageGroup> groups;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  std::string last_key;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      if (!saw_header) {
        if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
          throw DatasetError("unsupported dataset schema version");
        saw_header = true;
        continue;
      }
      TrajectoryRecord r;
      r.task_id = j.at("task_id").get<std::string>();
      r.group_id = j.at("group_id").get<int>();
      r.parent_node_id = j.at("parent_node_id").get<int>();
      r.state = {j.at("state").at("description").get<std::string>(),
                 j.at("state").at("parent_program").get<std::string>(),
                 j.at("state").at("feedback").get<std::string>()};
      r.action = j.at("action").get<std::string>();
      r.reward = j.at("reward").get<double>();
      r.advantage = j.at("advantage").get<double>();
      const double mu = j.at("mu").get<double>();
      const double sigma = j.at("sigma").get<double>();
      const std::string key = r.task_id + "\x1f" + std::to_string(r.group_id);
      if (groups.empty() || key != last_key) {
        AdvantageGroup g;
        g.mu = mu;
        g.sigma = sigma;
        g.degenerate = sigma < cfg.std_floor;
        groups.push_back(std::move(g));
        last_key = key;
      }
      groups.back().records.push_back(std::move(r));
    } catch (const DatasetError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return groups;
}

// Unbiased pass@k: 1 - C(n-c, k)/C(n, k), evaluated as a running product so
// it stays exact and overflow-free for n up to at least 10,000.
inline double estimate_pass_at_k(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n) throw std::invalid_argument("need 0 <= c <= n, n >= 1");
  if (k < 1 || k > n) throw std::invalid_argument("need 1 <= k <= n");
  if (n - c < k) return 1.0;
  double ratio = 1.0;
  for (int i = 0; i < k; ++i)
    ratio *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - ratio;
}

}  // namespace retree
