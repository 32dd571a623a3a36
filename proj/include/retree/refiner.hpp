#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "retree/reward.hpp"
#include "retree/rng.hpp"

namespace retree {

// One proposal request: refine `current_program` for the described task, in
// light of the execution feedback, producing up to k candidates.
struct RefinerRequest {
  std::string task_description;
  Program current_program;
  Feedback feedback;
  int k = 1;
  double temperature = 1.0;

  void validate() const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (temperature < 0) throw std::invalid_argument("temperature must be >= 0");
  }
};

struct ChatMessage {
  std::string role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

// Signals an unusable backend (retries exhausted, bad fixture, ...). The
// search loop logs it and moves on; other exceptions abort the search.
class RefinerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual std::vector<Program> refine(const RefinerRequest& request) = 0;
  virtual double preferred_temperature() const { return 1.0; }
};

inline bool feedback_is_empty(const Feedback& fb) {
  return fb.summary.empty() && fb.failing_case_ids.empty() && fb.error_kind == ErrorKind::kNone;
}

// Deterministic prompt: task, current attempt in a fenced block, feedback if
// any, and the instruction to answer with only a fenced corrected program.
inline std::vector<ChatMessage> build_prompt(const RefinerRequest& request) {
  std::vector<ChatMessage> messages;
  messages.push_back({"system",
                      "You are a code repair assistant. Reply with ONLY the corrected program "
                      "inside one fenced code block."});
  std::string user;
  user += "Task:\n" + request.task_description + "\n\n";
  if (request.current_program.source.empty()) {
    user += "There is no attempt yet. Write a program that solves the task.\n";
  } else {
    user += "Current program:\n```" + request.current_program.language_tag + "\n" +
            request.current_program.source + "\n```\n";
  }
  if (!feedback_is_empty(request.feedback)) {
    user += "\nExecution feedback (" + std::string(to_string(request.feedback.error_kind)) + "):\n" +
            request.feedback.summary;
    if (!request.feedback.failing_case_ids.empty()) {
      user += "Failing cases:";
      for (const auto& id : request.feedback.failing_case_ids) user += " " + id;
      user += "\n";
    }
  }
  user += "\nOutput only the corrected code in a fenced block.";
  messages.push_back({"user", std::move(user)});
  return messages;
}

inline std::optional<std::string> first_fenced_block(std::string_view text) {
  const std::size_t open = text.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t content_start = open + 3;
  // Skip an optional language word up to end of line.
  const std::size_t eol = text.find('\n', content_start);
  if (eol == std::string_view::npos) return std::nullopt;
  content_start = eol + 1;
  const std::size_t close = text.find("```", content_start);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view body = text.substr(content_start, close - content_start);
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
  return std::string(body);
}

// First fenced block wins; a completion with no block is accepted whole when
// it parses (languages with a registered parser) or at least tokenizes to
// something. Anything else is a dropped sample.
inline std::optional<Program> extract_code(std::string_view completion,
                                           const std::string& language_tag,
                                           const LanguageRegistry& registry =
                                               LanguageRegistry::builtin()) {
  if (const auto block = first_fenced_block(completion))
    return Program{*block, language_tag};
  const std::string body{trim(completion)};
  if (body.empty()) return std::nullopt;
  const LanguageSupport& support = registry.lookup(language_tag);
  if (support.subtree_bag) {
    if (!support.subtree_bag(body)) return std::nullopt;
  } else if (support.tokenize(body).empty()) {
    return std::nullopt;
  }
  return Program{body, language_tag};
}

// Order-preserving: drops byte-identical repeats and the current program.
inline std::vector<Program> dedup_candidates(std::vector<Program> candidates,
                                             const Program& current) {
  std::vector<Program> out;
  for (auto& c : candidates) {
    if (c.source == current.source) continue;
    bool seen = false;
    for (const auto& kept : out) seen = seen || kept.source == c.source;
    if (!seen) out.push_back(std::move(c));
  }
  return out;
}

// Replays canned completions keyed by the exact current program source.
// Programs with no fixture entry get no proposals.
class ScriptedRefiner final : public Refiner {
 public:
  explicit ScriptedRefiner(std::map<std::string, std::vector<std::string>> mappings)
      : mappings_(std::move(mappings)) {}

  // Fixture file: {"mappings": [{"program": "...", "completions": ["...", ...]}]}
  static ScriptedRefiner from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RefinerError("cannot open fixture file: " + path);
    ordered_json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw RefinerError("bad fixture file " + path + ": " + e.what());
    }
    std::map<std::string, std::vector<std::string>> mappings;
    for (const auto& entry : j.at("mappings")) {
      auto& list = mappings[entry.at("program").get<std::string>()];
      for (const auto& c : entry.at("completions")) list.push_back(c.get<std::string>());
    }
    return ScriptedRefiner(std::move(mappings));
  }

  std::vector<Program> refine(const RefinerRequest& request) override {
    request.validate();
    const auto it = mappings_.find(request.current_program.source);
    if (it == mappings_.end()) return {};
    std::vector<Program> candidates;
    candidates.reserve(it->second.size());
    for (const auto& src : it->second)
      candidates.push_back(Program{src, request.current_program.language_tag});
    auto unique = dedup_candidates(std::move(candidates), request.current_program);
    if (unique.size() > static_cast<std::size_t>(request.k))
      unique.resize(static_cast<std::size_t>(request.k));
    return unique;
  }

 private:
  std::map<std::string, std::vector<std::string>> mappings_;
};

// Blind single-node mutation policy over the toy DSL. Feedback is ignored;
// the reward landscape does the steering.
class MutationRefiner final : public Refiner {
 public:
  MutationRefiner(int arity, std::uint64_t seed) : arity_(arity), rng_(seed) {}

  std::vector<Program> refine(const RefinerRequest& request) override {
    request.validate();
    auto proposals = toydsl::toy_refiner(request.current_program, request.feedback, request.k,
                                         arity_, rng_);
    return dedup_candidates(std::move(proposals), request.current_program);
  }

 private:
  int arity_;
  Rng rng_;
};

}  // namespace retree
