#pragma once

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "retree/executor.hpp"
#include "retree/rng.hpp"

// A hermetic integer expression language used to drive the whole engine
// without any external model or runtime.
//
// Grammar (prefix s-expressions):
//
//   expr := (const N)          N in [-9, 9]
//         | (var I)            I >= 0, input vector index
//         | (add expr expr)
//         | (sub expr expr)
//         | (mul expr expr)
//         | (min expr expr)
//         | (max expr expr)
//         | (ifle expr expr expr expr)   ; (ifle a b t f) = t if a <= b else f
//
// Arithmetic is 64-bit two's-complement wrap-around, so evaluation is total
// and exactly reproducible.
namespace retree::toydsl {

inline constexpr int kMinConst = -9;
inline constexpr int kMaxConst = 9;
inline constexpr int kMaxConstStep = 3;
inline constexpr int kDefaultMaxDepth = 6;

enum class ExprKind { kConst, kVar, kAdd, kSub, kMul, kMin, kMax, kIfLessEq };

inline int arity_of(ExprKind kind) {
  switch (kind) {
    case ExprKind::kConst:
    case ExprKind::kVar:
      return 0;
    case ExprKind::kIfLessEq:
      return 4;
    default:
      return 2;
  }
}

inline std::string_view name_of(ExprKind kind) {
  switch (kind) {
    case ExprKind::kConst: return "const";
    case ExprKind::kVar: return "var";
    case ExprKind::kAdd: return "add";
    case ExprKind::kSub: return "sub";
    case ExprKind::kMul: return "mul";
    case ExprKind::kMin: return "min";
    case ExprKind::kMax: return "max";
    case ExprKind::kIfLessEq: return "ifle";
  }
  return "const";
}

struct Expr {
  ExprKind kind = ExprKind::kConst;
  int value = 0;  // Const payload or Var index
  std::vector<Expr> children;

  friend bool operator==(const Expr&, const Expr&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " at offset " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string print_expr(const Expr& e) {
  std::string out;
  out.push_back('(');
  out += name_of(e.kind);
  if (e.kind == ExprKind::kConst || e.kind == ExprKind::kVar) {
    out.push_back(' ');
    out += std::to_string(e.value);
  } else {
    for (const auto& child : e.children) {
      out.push_back(' ');
      out += print_expr(child);
    }
  }
  out.push_back(')');
  return out;
}

namespace detail {

struct Parser {
  std::string_view src;
  std::size_t pos = 0;
  int max_depth;

  void skip_ws() {
    while (pos < src.size() && (src[pos] == ' ' || src[pos] == '\t' || src[pos] == '\n' ||
                                src[pos] == '\r'))
      ++pos;
  }

  std::string_view atom() {
    const std::size_t start = pos;
    while (pos < src.size() && src[pos] != '(' && src[pos] != ')' && src[pos] != ' ' &&
           src[pos] != '\t' && src[pos] != '\n' && src[pos] != '\r')
      ++pos;
    if (pos == start) throw ParseError("expected atom", start);
    return src.substr(start, pos - start);
  }

  int integer() {
    const std::size_t start = pos;
    const std::string_view a = atom();
    int sign = 1;
    std::size_t i = 0;
    if (!a.empty() && (a[0] == '-' || a[0] == '+')) {
      sign = a[0] == '-' ? -1 : 1;
      i = 1;
    }
    if (i >= a.size()) throw ParseError("expected integer", start);
    long long v = 0;
    for (; i < a.size(); ++i) {
      if (a[i] < '0' || a[i] > '9') throw ParseError("expected integer", start);
      v = v * 10 + (a[i] - '0');
      if (v > 1000000) throw ParseError("integer literal out of range", start);
    }
    return static_cast<int>(sign * v);
  }

  Expr expr(int depth) {
    skip_ws();
    if (depth > max_depth) throw ParseError("expression exceeds maximum depth", pos);
    const std::size_t open = pos;
    if (pos >= src.size() || src[pos] != '(') throw ParseError("expected '('", pos);
    ++pos;
    skip_ws();
    const std::size_t head_pos = pos;
    const std::string_view head = atom();

    Expr e;
    if (head == "const") {
      e.kind = ExprKind::kConst;
      skip_ws();
      e.value = integer();
      if (e.value < kMinConst || e.value > kMaxConst)
        throw ParseError("constant outside [-9, 9]", head_pos);
    } else if (head == "var") {
      e.kind = ExprKind::kVar;
      skip_ws();
      e.value = integer();
      if (e.value < 0) throw ParseError("variable index must be >= 0", head_pos);
    } else if (head == "add") {
      e.kind = ExprKind::kAdd;
    } else if (head == "sub") {
      e.kind = ExprKind::kSub;
    } else if (head == "mul") {
      e.kind = ExprKind::kMul;
    } else if (head == "min") {
      e.kind = ExprKind::kMin;
    } else if (head == "max") {
      e.kind = ExprKind::kMax;
    } else if (head == "ifle") {
      e.kind = ExprKind::kIfLessEq;
    } else {
      throw ParseError("unknown operator '" + std::string(head) + "'", head_pos);
    }

    const int want = arity_of(e.kind);
    for (int i = 0; i < want; ++i) {
      skip_ws();
      if (pos >= src.size() || src[pos] == ')')
        throw ParseError("operator '" + std::string(name_of(e.kind)) + "' expects " +
                             std::to_string(want) + " operands",
                         open);
      e.children.push_back(expr(depth + 1));
    }
    skip_ws();
    if (pos >= src.size() || src[pos] != ')') {
      if (pos < src.size() && src[pos] == '(')
        throw ParseError("operator '" + std::string(name_of(e.kind)) + "' expects " +
                             std::to_string(want) + " operands",
                         open);
      throw ParseError("expected ')'", pos);
    }
    ++pos;
    return e;
  }
};

inline std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}

}  // namespace detail

inline Expr parse_expr(std::string_view source, int max_depth = kDefaultMaxDepth) {
  detail::Parser p{source, 0, max_depth};
  const Expr e = p.expr(1);
  p.skip_ws();
  if (p.pos != source.size()) throw ParseError("trailing input after expression", p.pos);
  return e;
}

inline std::int64_t eval_expr(const Expr& e, std::span<const std::int64_t> inputs) {
  switch (e.kind) {
    case ExprKind::kConst:
      return e.value;
    case ExprKind::kVar:
      if (e.value < 0 || static_cast<std::size_t>(e.value) >= inputs.size())
        throw EvalError("variable index " + std::to_string(e.value) + " out of range");
      return inputs[static_cast<std::size_t>(e.value)];
    case ExprKind::kAdd:
      return detail::wrap_add(eval_expr(e.children[0], inputs), eval_expr(e.children[1], inputs));
    case ExprKind::kSub:
      return detail::wrap_sub(eval_expr(e.children[0], inputs), eval_expr(e.children[1], inputs));
    case ExprKind::kMul:
      return detail::wrap_mul(eval_expr(e.children[0], inputs), eval_expr(e.children[1], inputs));
    case ExprKind::kMin:
      return std::min(eval_expr(e.children[0], inputs), eval_expr(e.children[1], inputs));
    case ExprKind::kMax:
      return std::max(eval_expr(e.children[0], inputs), eval_expr(e.children[1], inputs));
    case ExprKind::kIfLessEq:
      return eval_expr(e.children[0], inputs) <= eval_expr(e.children[1], inputs)
                 ? eval_expr(e.children[2], inputs)
                 : eval_expr(e.children[3], inputs);
  }
  throw EvalError("corrupt expression node");
}

inline int depth_of(const Expr& e) {
  int deepest = 0;
  for (const auto& c : e.children) deepest = std::max(deepest, depth_of(c));
  return 1 + deepest;
}

inline int node_count(const Expr& e) {
  int n = 1;
  for (const auto& c : e.children) n += node_count(c);
  return n;
}

// Number of differing nodes between two same-shape trees (a node differs by
// kind, or by payload for leaves). Subtrees whose shapes diverge count every
// node of both as different.
inline int diff_count(const Expr& a, const Expr& b) {
  if (a.children.size() != b.children.size()) return node_count(a) + node_count(b);
  int d = 0;
  if (a.kind != b.kind)
    d = 1;
  else if ((a.kind == ExprKind::kConst || a.kind == ExprKind::kVar) && a.value != b.value)
    d = 1;
  for (std::size_t i = 0; i < a.children.size(); ++i) d += diff_count(a.children[i], b.children[i]);
  return d;
}

namespace detail {

inline const std::vector<ExprKind>& binary_kinds() {
  static const std::vector<ExprKind> kinds = {ExprKind::kAdd, ExprKind::kSub, ExprKind::kMul,
                                              ExprKind::kMin, ExprKind::kMax};
  return kinds;
}

template <typename Fn>
void for_each_node_variant(const Expr& root, int arity, Fn&& emit) {
  // Emits every expression that differs from `root` in exactly one node:
  // binary operator swapped, constant moved by 1..3 within range, or
  // variable index changed. (ifle) has no same-arity sibling.
  struct Walker {
    int arity;
    Fn& emit;
    void walk(std::vector<int>& path, const Expr& node) {
      switch (node.kind) {
        case ExprKind::kConst:
          for (int delta = -kMaxConstStep; delta <= kMaxConstStep; ++delta) {
            if (delta == 0) continue;
            const int c = node.value + delta;
            if (c < kMinConst || c > kMaxConst) continue;
            emit(path, [c](Expr& n) { n.value = c; });
          }
          break;
        case ExprKind::kVar:
          for (int idx = 0; idx < arity; ++idx) {
            if (idx == node.value) continue;
            emit(path, [idx](Expr& n) { n.value = idx; });
          }
          break;
        case ExprKind::kIfLessEq:
          break;
        default:
          for (const ExprKind kind : binary_kinds()) {
            if (kind == node.kind) continue;
            emit(path, [kind](Expr& n) { n.kind = kind; });
          }
          break;
      }
      for (std::size_t i = 0; i < node.children.size(); ++i) {
        path.push_back(static_cast<int>(i));
        walk(path, node.children[i]);
        path.pop_back();
      }
    }
  };
  std::vector<int> path;
  Walker w{arity, emit};
  w.walk(path, root);
}

inline Expr& node_at(Expr& root, const std::vector<int>& path) {
  Expr* node = &root;
  for (const int i : path) node = &node->children[static_cast<std::size_t>(i)];
  return *node;
}

}  // namespace detail

// All single-node variants of `e`, in deterministic (preorder) order.
inline std::vector<Expr> enumerate_mutations(const Expr& e, int arity) {
  std::vector<Expr> out;
  detail::for_each_node_variant(e, arity, [&](const std::vector<int>& path, auto&& apply) {
    Expr copy = e;
    apply(detail::node_at(copy, path));
    out.push_back(std::move(copy));
  });
  return out;
}

// Uniform draw from the single-node mutation neighborhood. Returns `e`
// unchanged when no legal mutation exists (e.g. a lone (var 0) at arity 1).
inline Expr mutate_expr(const Expr& e, int arity, Rng& rng) {
  const std::vector<Expr> neighborhood = enumerate_mutations(e, arity);
  if (neighborhood.empty()) return e;
  return neighborhood[static_cast<std::size_t>(rng.next_below(neighborhood.size()))];
}

inline Expr random_expr(Rng& rng, int arity, int max_depth) {
  const bool can_nest = max_depth > 1;
  // Lean toward small trees: their mutation neighborhoods stay searchable.
  const bool leaf = !can_nest || rng.next_double() < 0.35;
  Expr e;
  if (leaf) {
    if (rng.next_double() < 0.5) {
      e.kind = ExprKind::kVar;
      e.value = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(arity)));
    } else {
      e.kind = ExprKind::kConst;
      e.value = kMinConst + static_cast<int>(rng.next_below(kMaxConst - kMinConst + 1));
    }
    return e;
  }
  const bool branch = rng.next_double() < 0.15;
  e.kind = branch ? ExprKind::kIfLessEq
                  : detail::binary_kinds()[rng.next_below(detail::binary_kinds().size())];
  const int n = arity_of(e.kind);
  for (int i = 0; i < n; ++i) e.children.push_back(random_expr(rng, arity, max_depth - 1));
  return e;
}

struct ToyTaskSpec {
  int arity = 2;
  int depth = 4;
  int num_tests = 6;
  int num_mutations = 1;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (arity < 1) throw std::invalid_argument("arity must be >= 1");
    if (depth < 1 || depth > kDefaultMaxDepth)
      throw std::invalid_argument("depth must be in [1, 6]");
    if (num_tests < 1) throw std::invalid_argument("num_tests must be >= 1");
    if (num_mutations < 1) throw std::invalid_argument("num_mutations must be >= 1");
  }
};

namespace detail {

inline std::vector<std::int64_t> random_inputs(Rng& rng, int arity) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(arity));
  for (auto& x : v)
    x = kMinConst + static_cast<std::int64_t>(rng.next_below(kMaxConst - kMinConst + 1));
  return v;
}

inline std::string input_text(const std::vector<std::int64_t>& inputs) {
  std::string s;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(inputs[i]);
  }
  return s;
}

inline bool fails_some_test(const Expr& candidate, const Expr& reference,
                            const std::vector<std::vector<std::int64_t>>& tests) {
  for (const auto& in : tests)
    if (eval_expr(candidate, in) != eval_expr(reference, in)) return true;
  return false;
}

}  // namespace detail

namespace detail {

struct TaskDraft {
  Expr reference;
  std::vector<std::vector<std::int64_t>> test_inputs;
  std::vector<Expr> mutants;
  int skipped_slots = 0;
};

inline TaskDraft draft_task(const ToyTaskSpec& spec, Rng& rng) {
  TaskDraft draft;

  // Leaf-only references make degenerate tasks; insist on an operator root
  // with a usable mutation neighborhood.
  for (int attempt = 0;; ++attempt) {
    draft.reference = random_expr(rng, spec.arity, spec.depth);
    if ((node_count(draft.reference) >= 3 || spec.depth == 1) &&
        !enumerate_mutations(draft.reference, spec.arity).empty())
      break;
    if (attempt > 200) throw std::runtime_error("could not generate a mutable reference");
  }

  draft.test_inputs.reserve(static_cast<std::size_t>(spec.num_tests));
  for (int i = 0; i < spec.num_tests; ++i)
    draft.test_inputs.push_back(random_inputs(rng, spec.arity));

  constexpr int kMutantTries = 64;
  constexpr int kWitnessProbes = 64;
  for (int slot = 0; slot < spec.num_mutations; ++slot) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMutantTries && !accepted; ++attempt) {
      const Expr m = mutate_expr(draft.reference, spec.arity, rng);
      if (m == draft.reference) break;  // no legal mutation at all
      if (std::find(draft.mutants.begin(), draft.mutants.end(), m) != draft.mutants.end())
        continue;

      if (fails_some_test(m, draft.reference, draft.test_inputs)) {
        draft.mutants.push_back(m);
        accepted = true;
        break;
      }
      // Passes every sampled test: hunt for a witness input.
      std::optional<std::vector<std::int64_t>> witness;
      for (int probe = 0; probe < kWitnessProbes; ++probe) {
        auto in = random_inputs(rng, spec.arity);
        if (eval_expr(m, in) != eval_expr(draft.reference, in)) {
          witness = std::move(in);
          break;
        }
      }
      if (!witness) continue;  // likely equivalent; resample the mutant

      // Swap the witness in without un-distinguishing accepted mutants.
      for (std::size_t j = 0; j < draft.test_inputs.size(); ++j) {
        auto candidate_inputs = draft.test_inputs;
        candidate_inputs[j] = *witness;
        bool all_ok = fails_some_test(m, draft.reference, candidate_inputs);
        for (const auto& prev : draft.mutants)
          all_ok = all_ok && fails_some_test(prev, draft.reference, candidate_inputs);
        if (all_ok) {
          draft.test_inputs = std::move(candidate_inputs);
          draft.mutants.push_back(m);
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) ++draft.skipped_slots;
  }
  return draft;
}

}  // namespace detail

// Builds a task whose reference is a random expression, whose tests pin the
// reference's behavior, and whose seed programs are distinct single-node
// mutants that each fail at least one test. When a mutant agrees with the
// reference on the sampled tests, one test input is replaced by a witness
// input on which they differ. References whose mutants all look semantically
// equivalent (e.g. everything multiplied by zero) are redrawn a few times;
// if slots still cannot be filled they are skipped with a warning.
inline Task generate_task(const ToyTaskSpec& spec, const std::string& id,
                          std::vector<std::string>* warnings = nullptr) {
  spec.validate();
  Rng rng(spec.rng_seed);

  constexpr int kDraftRounds = 8;
  detail::TaskDraft draft;
  for (int round = 0; round < kDraftRounds; ++round) {
    draft = detail::draft_task(spec, rng);
    if (draft.skipped_slots == 0) break;
  }
  if (warnings) {
    for (int i = 0; i < draft.skipped_slots; ++i)
      warnings->push_back(id + ": skipped a seed slot (no distinguishable mutant found)");
  }
  const Expr& reference = draft.reference;
  const std::vector<std::vector<std::int64_t>>& test_inputs = draft.test_inputs;
  const std::vector<Expr>& mutants = draft.mutants;

  Task task;
  task.id = id;
  task.language_tag = "toydsl";
  task.reference_solution = Program{print_expr(reference), task.language_tag};
  task.description = "Repair the expression so it matches the hidden reference on all tests. "
                     "Inputs are " +
                     std::to_string(spec.arity) + " integers; output one integer.";
  for (std::size_t i = 0; i < test_inputs.size(); ++i) {
    TestCase c;
    c.id = "t" + std::to_string(i);
    c.input = detail::input_text(test_inputs[i]);
    c.expected_output = std::to_string(eval_expr(reference, test_inputs[i]));
    c.comparison = Comparison::kTrimmed;
    task.tests.cases.push_back(std::move(c));
  }
  for (const auto& m : mutants)
    task.seed_programs.push_back(Program{print_expr(m), task.language_tag});
  return task;
}

// Proposes up to k distinct single-node mutants of `program`. If the program
// does not parse, recovers by proposing k fresh random expressions.
inline std::vector<Program> toy_refiner(const Program& program, const Feedback& /*feedback*/,
                                        int k, int arity, Rng& rng) {
  std::vector<Program> out;
  Expr expr;
  try {
    expr = parse_expr(program.source);
  } catch (const ParseError&) {
    std::vector<std::string> seen;
    for (int tries = 0; static_cast<int>(out.size()) < k && tries < 16 * k; ++tries) {
      const std::string src = print_expr(random_expr(rng, arity, 4));
      if (std::find(seen.begin(), seen.end(), src) != seen.end()) continue;
      seen.push_back(src);
      out.push_back(Program{src, program.language_tag});
    }
    return out;
  }

  std::vector<Expr> neighborhood = enumerate_mutations(expr, arity);
  // Partial Fisher-Yates: the first min(k, n) entries become the sample.
  const std::size_t n = neighborhood.size();
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(neighborhood[i], neighborhood[j]);
    out.push_back(Program{print_expr(neighborhood[i]), program.language_tag});
  }
  return out;
}

// Number of integers on the first test's input line; generated tasks use one
// input per variable.
inline int infer_arity(const Task& task) {
  int count = 0;
  std::istringstream in(task.tests.cases.empty() ? std::string() : task.tests.cases[0].input);
  std::string tok;
  while (in >> tok) ++count;
  return std::max(count, 1);
}

// In-process interpreter backend: no side effects, no timeouts, fully
// deterministic.
class ToyDslBackend final : public ExecutionBackend {
 public:
  bool supports(std::string_view language_tag) const override { return language_tag == "toydsl"; }

  EvalResult run(const Program& program, const TestSuite& suite,
                 const ExecutionLimits& /*limits*/) override {
    std::vector<CaseResult> per_case;
    per_case.reserve(suite.cases.size());

    Expr expr;
    try {
      expr = parse_expr(program.source);
    } catch (const ParseError& e) {
      for (const auto& tc : suite.cases)
        per_case.push_back({tc.id, CaseOutcome::kRuntimeError, std::string("parse error: ") + e.what()});
      return finalize_eval(std::move(per_case));
    }

    for (const auto& tc : suite.cases) {
      CaseResult cr;
      cr.case_id = tc.id;
      try {
        const auto inputs = parse_input_vector(tc.input);
        const std::int64_t value = eval_expr(expr, inputs);
        cr.observed_output = std::to_string(value);
        cr.outcome = outputs_match(cr.observed_output, tc.expected_output, tc.comparison)
                         ? CaseOutcome::kPass
                         : CaseOutcome::kWrongOutput;
      } catch (const std::exception& e) {
        cr.outcome = CaseOutcome::kRuntimeError;
        cr.observed_output = e.what();
      }
      per_case.push_back(std::move(cr));
    }
    return finalize_eval(std::move(per_case));
  }

 private:
  static std::vector<std::int64_t> parse_input_vector(const std::string& text) {
    std::vector<std::int64_t> inputs;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size()) throw EvalError("bad input token: " + tok);
      inputs.push_back(v);
    }
    return inputs;
  }
};

// Tokens for similarity scoring: parentheses and atoms.
inline std::vector<std::string> tokenize(std::string_view src) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < src.size()) {
    const char ch = src[i];
    if (ch == '(' || ch == ')') {
      tokens.emplace_back(1, ch);
      ++i;
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      ++i;
    } else {
      std::size_t j = i;
      while (j < src.size() && src[j] != '(' && src[j] != ')' && src[j] != ' ' &&
             src[j] != '\t' && src[j] != '\n' && src[j] != '\r')
        ++j;
      tokens.emplace_back(src.substr(i, j - i));
      i = j;
    }
  }
  return tokens;
}

// Canonical text of every subtree, for bag-overlap syntax matching.
inline std::vector<std::string> subtree_bag(const Expr& e) {
  std::vector<std::string> bag;
  bag.push_back(print_expr(e));
  for (const auto& c : e.children) {
    auto sub = subtree_bag(c);
    bag.insert(bag.end(), std::make_move_iterator(sub.begin()), std::make_move_iterator(sub.end()));
  }
  return bag;
}

}  // namespace retree::toydsl
