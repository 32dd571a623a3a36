#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace retree {

using ordered_json = nlohmann::ordered_json;

class TaskFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One program variant under consideration.
struct Program {
  std::string source;
  std::string language_tag;

  friend bool operator==(const Program&, const Program&) = default;
};

enum class Comparison { kExact, kTrimmed };

inline std::string_view to_string(Comparison c) {
  return c == Comparison::kExact ? "exact" : "trimmed";
}

inline Comparison comparison_from_string(std::string_view s) {
  if (s == "exact") return Comparison::kExact;
  if (s == "trimmed") return Comparison::kTrimmed;
  throw TaskFileError("unknown comparison mode: " + std::string(s));
}

struct TestCase {
  std::string id;
  std::string input;
  std::string expected_output;
  Comparison comparison = Comparison::kTrimmed;

  friend bool operator==(const TestCase&, const TestCase&) = default;
};

struct TestSuite {
  std::vector<TestCase> cases;

  std::size_t total() const { return cases.size(); }

  friend bool operator==(const TestSuite&, const TestSuite&) = default;
};

// A debugging problem: what to fix, how to judge it, and optionally some
// known-faulty starting points.
struct Task {
  std::string id;
  std::string description;
  Program reference_solution;
  TestSuite tests;
  std::vector<Program> seed_programs;
  std::string language_tag;

  friend bool operator==(const Task&, const Task&) = default;
};

enum class ErrorKind { kNone, kWrongOutput, kRuntimeError, kTimeout, kParseError };

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::kNone: return "none";
    case ErrorKind::kWrongOutput: return "wrong_output";
    case ErrorKind::kRuntimeError: return "runtime_error";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kParseError: return "parse_error";
  }
  return "none";
}

// Execution evidence rendered for a refiner.
struct Feedback {
  std::string summary;
  std::vector<std::string> failing_case_ids;
  ErrorKind error_kind = ErrorKind::kNone;

  friend bool operator==(const Feedback&, const Feedback&) = default;
};

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n\f\v";
  const auto begin = s.find_first_not_of(ws);
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(ws);
  return s.substr(begin, end - begin + 1);
}

// Writes via a temp file in the same directory plus rename, so an
// interrupted run never leaves a truncated artifact behind.
inline void write_file_atomic(const std::string& path, std::string_view content) {
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline void validate_task(const Task& task) {
  if (task.id.empty()) throw TaskFileError("task id must be non-empty");
  if (task.reference_solution.source.empty())
    throw TaskFileError("task " + task.id + ": reference solution must be non-empty");
  if (task.tests.total() < 1)
    throw TaskFileError("task " + task.id + ": needs at least one test");
  if (task.language_tag.empty())
    throw TaskFileError("task " + task.id + ": language must be non-empty");
  std::set<std::string> case_ids;
  for (const auto& c : task.tests.cases) {
    if (!case_ids.insert(c.id).second)
      throw TaskFileError("task " + task.id + ": duplicate test case id " + c.id);
  }
}

namespace detail {

inline Task task_from_json(const ordered_json& j) {
  Task task;
  task.id = j.at("id").get<std::string>();
  task.description = j.at("description").get<std::string>();
  task.language_tag = j.at("language").get<std::string>();
  task.reference_solution = Program{j.at("reference_solution").get<std::string>(), task.language_tag};
  for (const auto& jc : j.at("tests")) {
    TestCase c;
    c.id = jc.at("id").get<std::string>();
    c.input = jc.at("input").get<std::string>();
    c.expected_output = jc.at("expected_output").get<std::string>();
    if (jc.contains("comparison"))
      c.comparison = comparison_from_string(jc.at("comparison").get<std::string>());
    task.tests.cases.push_back(std::move(c));
  }
  if (j.contains("seeds")) {
    for (const auto& js : j.at("seeds"))
      task.seed_programs.push_back(Program{js.get<std::string>(), task.language_tag});
  }
  return task;
}

inline ordered_json task_to_json(const Task& task) {
  ordered_json j;
  j["id"] = task.id;
  j["description"] = task.description;
  j["reference_solution"] = task.reference_solution.source;
  j["language"] = task.language_tag;
  j["tests"] = ordered_json::array();
  for (const auto& c : task.tests.cases) {
    ordered_json jc;
    jc["id"] = c.id;
    jc["input"] = c.input;
    jc["expected_output"] = c.expected_output;
    jc["comparison"] = std::string(to_string(c.comparison));
    j["tests"].push_back(std::move(jc));
  }
  if (!task.seed_programs.empty()) {
    j["seeds"] = ordered_json::array();
    for (const auto& s : task.seed_programs) j["seeds"].push_back(s.source);
  }
  return j;
}

}  // namespace detail

// Task file: JSON Lines, one task object per line, UTF-8, LF endings.
inline std::vector<Task> load_tasks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TaskFileError("cannot open task file: " + path);
  std::vector<Task> tasks;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    Task task;
    try {
      task = detail::task_from_json(ordered_json::parse(line));
      validate_task(task);
    } catch (const std::exception& e) {
      throw TaskFileError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(task.id).second)
      throw TaskFileError(path + ": line " + std::to_string(line_no) + ": duplicate task id " +
                          task.id);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

inline std::string tasks_to_jsonl(const std::vector<Task>& tasks) {
  std::ostringstream out;
  for (const auto& task : tasks) {
    validate_task(task);
    out << detail::task_to_json(task).dump() << '\n';
  }
  return out.str();
}

inline void save_tasks(const std::vector<Task>& tasks, const std::string& path) {
  write_file_atomic(path, tasks_to_jsonl(tasks));
}

}  // namespace retree
