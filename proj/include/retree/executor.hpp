#pragma once

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "retree/domain.hpp"

extern char** environ;

namespace retree {

struct ExecutionLimits {
  std::int64_t wall_timeout_ms = 2000;
  std::int64_t max_output_bytes = 1 << 20;

  void validate() const {
    if (wall_timeout_ms <= 0) throw std::invalid_argument("wall_timeout_ms must be > 0");
    if (max_output_bytes <= 0) throw std::invalid_argument("max_output_bytes must be > 0");
  }
};

enum class CaseOutcome { kPass, kWrongOutput, kRuntimeError, kTimeout };

inline std::string_view to_string(CaseOutcome o) {
  switch (o) {
    case CaseOutcome::kPass: return "pass";
    case CaseOutcome::kWrongOutput: return "wrong_output";
    case CaseOutcome::kRuntimeError: return "runtime_error";
    case CaseOutcome::kTimeout: return "timeout";
  }
  return "runtime_error";
}

inline CaseOutcome case_outcome_from_string(std::string_view s) {
  if (s == "pass") return CaseOutcome::kPass;
  if (s == "wrong_output") return CaseOutcome::kWrongOutput;
  if (s == "runtime_error") return CaseOutcome::kRuntimeError;
  if (s == "timeout") return CaseOutcome::kTimeout;
  throw std::invalid_argument("unknown case outcome: " + std::string(s));
}

struct CaseResult {
  std::string case_id;
  CaseOutcome outcome = CaseOutcome::kRuntimeError;
  std::string observed_output;

  friend bool operator==(const CaseResult&, const CaseResult&) = default;
};

struct EvalResult {
  std::vector<CaseResult> per_case;  // in suite order
  std::size_t passed = 0;
  std::size_t total = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

inline EvalResult finalize_eval(std::vector<CaseResult> per_case) {
  EvalResult r;
  r.total = per_case.size();
  for (const auto& c : per_case)
    if (c.outcome == CaseOutcome::kPass) ++r.passed;
  r.per_case = std::move(per_case);
  return r;
}

inline bool outputs_match(std::string_view observed, std::string_view expected, Comparison mode) {
  if (mode == Comparison::kExact) return observed == expected;
  return trim(observed) == trim(expected);
}

class UnsupportedLanguageError : public std::runtime_error {
 public:
  explicit UnsupportedLanguageError(const std::string& tag)
      : std::runtime_error("no execution backend support for language: " + tag) {}
};

class ExecutionBackend {
 public:
  virtual ~ExecutionBackend() = default;
  virtual bool supports(std::string_view language_tag) const = 0;
  virtual EvalResult run(const Program& program, const TestSuite& suite,
                         const ExecutionLimits& limits) = 0;
};

inline EvalResult run_tests(const Program& program, const TestSuite& suite,
                            ExecutionBackend& backend, const ExecutionLimits& limits) {
  limits.validate();
  if (!backend.supports(program.language_tag))
    throw UnsupportedLanguageError(program.language_tag);
  return backend.run(program, suite, limits);
}

// Summarizes failing cases for the refiner; error_kind carries the most
// severe failure (timeout > runtime_error > wrong_output).
inline Feedback render_feedback(const EvalResult& result, const TestSuite& suite,
                                std::size_t max_listed = 3) {
  Feedback fb;
  std::ostringstream out;
  std::size_t listed = 0;
  for (std::size_t i = 0; i < result.per_case.size(); ++i) {
    const auto& c = result.per_case[i];
    if (c.outcome == CaseOutcome::kPass) continue;
    fb.failing_case_ids.push_back(c.case_id);
    switch (c.outcome) {
      case CaseOutcome::kTimeout:
        fb.error_kind = ErrorKind::kTimeout;
        break;
      case CaseOutcome::kRuntimeError:
        if (fb.error_kind != ErrorKind::kTimeout) fb.error_kind = ErrorKind::kRuntimeError;
        break;
      default:
        if (fb.error_kind == ErrorKind::kNone) fb.error_kind = ErrorKind::kWrongOutput;
        break;
    }
    if (listed < max_listed && i < suite.cases.size()) {
      const auto& tc = suite.cases[i];
      out << "case " << c.case_id << " [" << to_string(c.outcome) << "]\n"
          << "  input: " << tc.input << "\n"
          << "  expected: " << tc.expected_output << "\n"
          << "  observed: " << c.observed_output << "\n";
      ++listed;
    }
  }
  if (!fb.failing_case_ids.empty()) {
    std::ostringstream head;
    head << fb.failing_case_ids.size() << " of " << result.total << " tests failing.\n";
    if (fb.failing_case_ids.size() > listed) out << "(further failing cases omitted)\n";
    fb.summary = head.str() + out.str();
  }
  return fb;
}

// --------------------------------------------------------------------------
// External-command backend.
//
// Writes the candidate program to a temporary file and runs a user-supplied
// shell command per test case, feeding the case input on stdin and comparing
// stdout. This is NOT a security sandbox: untrusted code must be confined by
// an external container or jail around the whole process.
// --------------------------------------------------------------------------

struct ExternalCommandConfig {
  std::string command_template;  // must contain {program_file}
  std::string program_file_suffix = ".txt";
  std::vector<std::string> env_blocklist;
  std::vector<std::string> languages;  // supported tags; empty means any
  int workers = 1;
};

namespace detail {

struct RunOnceResult {
  bool timed_out = false;
  bool output_overflow = false;
  int exit_status = 0;   // wait status
  std::string output;    // captured stdout, truncated at max_output_bytes
};

inline void ignore_sigpipe_once() {
  static const bool done = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

inline std::vector<std::string> filtered_env(const std::vector<std::string>& blocklist) {
  std::unordered_set<std::string> blocked(blocklist.begin(), blocklist.end());
  std::vector<std::string> env;
  for (char** p = environ; p && *p; ++p) {
    std::string_view entry(*p);
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    if (blocked.count(std::string(entry.substr(0, eq)))) continue;
    env.emplace_back(entry);
  }
  return env;
}

// Runs `/bin/sh -c command`, writes `input` to stdin, reads stdout with a
// wall-clock deadline. Input is written before reading output, which is fine
// for the short judge-style inputs this engine feeds (well under the pipe
// buffer).
inline RunOnceResult run_command_once(const std::string& command, const std::string& input,
                                      const ExecutionLimits& limits,
                                      const std::vector<std::string>& env_blocklist) {
  ignore_sigpipe_once();
  RunOnceResult res;

  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw std::runtime_error("pipe() failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw std::runtime_error("pipe() failed");
  }

  const std::vector<std::string> env = filtered_env(env_blocklist);

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    throw std::runtime_error("fork() failed");
  }
  if (pid == 0) {
    setpgid(0, 0);  // own process group so a timeout can kill the whole job
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    std::vector<char*> envp;
    envp.reserve(env.size() + 1);
    for (const auto& e : env) envp.push_back(const_cast<char*>(e.c_str()));
    envp.push_back(nullptr);
    const char* argv[] = {"sh", "-c", command.c_str(), nullptr};
    execve("/bin/sh", const_cast<char**>(argv), envp.data());
    _exit(127);
  }

  close(in_pipe[0]);
  close(out_pipe[1]);

  // Feed input, ignoring EPIPE from programs that never read stdin.
  std::size_t written = 0;
  while (written < input.size()) {
    const ssize_t n = write(in_pipe[1], input.data() + written, input.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  close(in_pipe[1]);

  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(limits.wall_timeout_ms);
  bool open = true;
  while (open) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      res.timed_out = true;
      break;
    }
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    pollfd pfd{out_pipe[0], POLLIN, 0};
    const int pr = poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(remaining, 50)));
    if (pr < 0 && errno != EINTR) break;
    if (pr > 0) {
      char buf[4096];
      const ssize_t n = read(out_pipe[0], buf, sizeof(buf));
      if (n <= 0) {
        open = false;
      } else {
        const std::size_t room =
            static_cast<std::size_t>(limits.max_output_bytes) - res.output.size();
        res.output.append(buf, std::min(static_cast<std::size_t>(n), room));
        if (res.output.size() >= static_cast<std::size_t>(limits.max_output_bytes) &&
            static_cast<std::size_t>(n) > room) {
          res.output_overflow = true;
          break;
        }
      }
    }
  }
  close(out_pipe[0]);

  if (res.timed_out || res.output_overflow) {
    kill(-pid, SIGKILL);
    kill(pid, SIGKILL);
    waitpid(pid, &res.exit_status, 0);
    return res;
  }

  // Output closed; wait for exit, still bounded by the deadline.
  for (;;) {
    const pid_t w = waitpid(pid, &res.exit_status, WNOHANG);
    if (w == pid) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      waitpid(pid, &res.exit_status, 0);
      res.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return res;
}

inline std::string replace_all(std::string text, std::string_view what, std::string_view with) {
  std::size_t pos = 0;
  while ((pos = text.find(what, pos)) != std::string::npos) {
    text.replace(pos, what.size(), with);
    pos += with.size();
  }
  return text;
}

class TempProgramFile {
 public:
  TempProgramFile(const std::string& source, const std::string& suffix) {
    std::string tmpl = (std::filesystem::temp_directory_path() / "retree-XXXXXX").string() + suffix;
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    const int fd = mkstemps(buf.data(), static_cast<int>(suffix.size()));
    if (fd < 0) throw std::runtime_error("mkstemps() failed");
    path_.assign(buf.data());
    std::size_t written = 0;
    while (written < source.size()) {
      const ssize_t n = write(fd, source.data() + written, source.size() - written);
      if (n <= 0) {
        close(fd);
        throw std::runtime_error("write to temp program file failed");
      }
      written += static_cast<std::size_t>(n);
    }
    close(fd);
  }
  ~TempProgramFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  TempProgramFile(const TempProgramFile&) = delete;
  TempProgramFile& operator=(const TempProgramFile&) = delete;

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace detail

class ExternalCommandBackend final : public ExecutionBackend {
 public:
  explicit ExternalCommandBackend(ExternalCommandConfig config) : config_(std::move(config)) {
    if (config_.command_template.find("{program_file}") == std::string::npos)
      throw std::invalid_argument("command template must contain {program_file}");
    if (config_.workers < 1) throw std::invalid_argument("workers must be >= 1");
  }

  bool supports(std::string_view language_tag) const override {
    if (config_.languages.empty()) return true;
    for (const auto& lang : config_.languages)
      if (lang == language_tag) return true;
    return false;
  }

  EvalResult run(const Program& program, const TestSuite& suite,
                 const ExecutionLimits& limits) override {
    const detail::TempProgramFile file(program.source, config_.program_file_suffix);
    const std::string command =
        detail::replace_all(config_.command_template, "{program_file}", file.path());

    std::vector<CaseResult> per_case(suite.cases.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= suite.cases.size()) return;
        const auto& tc = suite.cases[i];
        CaseResult cr;
        cr.case_id = tc.id;
        try {
          const auto out = detail::run_command_once(command, tc.input, limits,
                                                    config_.env_blocklist);
          cr.observed_output = out.output;
          if (out.timed_out) {
            cr.outcome = CaseOutcome::kTimeout;
          } else if (out.output_overflow || out.exit_status != 0) {
            cr.outcome = CaseOutcome::kRuntimeError;
          } else {
            cr.outcome = outputs_match(out.output, tc.expected_output, tc.comparison)
                             ? CaseOutcome::kPass
                             : CaseOutcome::kWrongOutput;
          }
        } catch (const std::exception& e) {
          cr.outcome = CaseOutcome::kRuntimeError;
          cr.observed_output = std::string("executor error: ") + e.what();
        }
        per_case[i] = std::move(cr);  // merged by index: suite order regardless of workers
      }
    };

    const int n_workers =
        static_cast<int>(std::min<std::size_t>(config_.workers, suite.cases.size()));
    if (n_workers <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      threads.reserve(static_cast<std::size_t>(n_workers));
      for (int t = 0; t < n_workers; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    return finalize_eval(std::move(per_case));
  }

 private:
  ExternalCommandConfig config_;
};

}  // namespace retree
