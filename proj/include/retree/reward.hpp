#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "retree/toydsl.hpp"

namespace retree {

enum class SolutionClass { kFullyCorrect, kPartiallyCorrect, kIncorrect };

inline std::string_view to_string(SolutionClass c) {
  switch (c) {
    case SolutionClass::kFullyCorrect: return "fully_correct";
    case SolutionClass::kPartiallyCorrect: return "partially_correct";
    case SolutionClass::kIncorrect: return "incorrect";
  }
  return "incorrect";
}

// Fully correct: passed all tests. Partially correct: passed some.
// Incorrect: passed none (wrong output or runtime errors throughout).
inline SolutionClass classify_solution(const EvalResult& eval) {
  if (eval.total < 1) throw std::invalid_argument("classify_solution needs total >= 1");
  if (eval.passed == eval.total) return SolutionClass::kFullyCorrect;
  if (eval.passed == 0) return SolutionClass::kIncorrect;
  return SolutionClass::kPartiallyCorrect;
}

class UnknownLanguageError : public std::runtime_error {
 public:
  explicit UnknownLanguageError(const std::string& tag)
      : std::runtime_error("no tokenizer registered for language: " + tag) {}
};

// Generic programming-language tokenizer: identifiers, numbers, strings,
// operator characters; //, /* */ and #-to-eol comments stripped.
inline std::vector<std::string> tokenize_generic(std::string_view src) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const auto is_ident = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
    } else if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < src.size() && src[i + 1] == '*') {
      i += 2;
      while (i + 1 < src.size() && !(src[i] == '*' && src[i + 1] == '/')) ++i;
      i = std::min(i + 2, src.size());
    } else if (c == '"' || c == '\'') {
      const char quote = c;
      std::size_t j = i + 1;
      while (j < src.size() && src[j] != quote) {
        if (src[j] == '\\') ++j;
        ++j;
      }
      j = std::min(j + 1, src.size());
      tokens.emplace_back(src.substr(i, j - i));
      i = j;
    } else if (is_ident(c)) {
      std::size_t j = i;
      while (j < src.size() && is_ident(src[j])) ++j;
      tokens.emplace_back(src.substr(i, j - i));
      i = j;
    } else {
      tokens.emplace_back(1, c);
      ++i;
    }
  }
  return tokens;
}

struct LanguageSupport {
  std::function<std::vector<std::string>(std::string_view)> tokenize;
  // Canonical strings of all parse subtrees; nullopt when the source does
  // not parse. Null function -> no parser, syntax match uses the token-type
  // LCS fallback.
  std::function<std::optional<std::vector<std::string>>(std::string_view)> subtree_bag;
};

inline LanguageSupport generic_language_support() {
  return LanguageSupport{[](std::string_view s) { return tokenize_generic(s); }, nullptr};
}

inline LanguageSupport toydsl_language_support() {
  LanguageSupport s;
  s.tokenize = [](std::string_view src) { return toydsl::tokenize(src); };
  s.subtree_bag = [](std::string_view src) -> std::optional<std::vector<std::string>> {
    try {
      return toydsl::subtree_bag(toydsl::parse_expr(src));
    } catch (const toydsl::ParseError&) {
      return std::nullopt;
    }
  };
  return s;
}

// Registered tokenizers/parsers keyed by language tag. With the generic
// fallback enabled (the default) an unregistered tag degrades to the generic
// tokenizer; with it disabled, lookup throws UnknownLanguageError.
class LanguageRegistry {
 public:
  explicit LanguageRegistry(bool generic_fallback = true)
      : generic_fallback_(generic_fallback), generic_(generic_language_support()) {
    register_language("toydsl", toydsl_language_support());
  }

  void register_language(std::string tag, LanguageSupport support) {
    languages_[std::move(tag)] = std::move(support);
  }

  bool has(const std::string& tag) const { return languages_.count(tag) > 0; }

  const LanguageSupport& lookup(const std::string& tag) const {
    const auto it = languages_.find(tag);
    if (it != languages_.end()) return it->second;
    if (generic_fallback_) return generic_;
    throw UnknownLanguageError(tag);
  }

  static const LanguageRegistry& builtin() {
    static const LanguageRegistry registry;
    return registry;
  }

 private:
  bool generic_fallback_;
  LanguageSupport generic_;
  std::map<std::string, LanguageSupport> languages_;
};

struct CodeBleuConfig {
  int max_ngram = 4;
  double ngram_weight = 0.4;
  double weighted_ngram_weight = 0.3;
  double syntax_weight = 0.3;
  double keyword_extra_weight = 5.0;
  std::map<std::string, std::set<std::string>> keywords;  // language_tag -> keywords

  CodeBleuConfig() {
    keywords["toydsl"] = {"add", "sub", "mul", "min", "max", "ifle", "const", "var"};
  }

  void validate() const {
    if (max_ngram < 1) throw std::invalid_argument("max_ngram must be >= 1");
    if (ngram_weight < 0 || weighted_ngram_weight < 0 || syntax_weight < 0)
      throw std::invalid_argument("component weights must be >= 0");
    const double sum = ngram_weight + weighted_ngram_weight + syntax_weight;
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("component weights must sum to 1");
    if (keyword_extra_weight < 1.0)
      throw std::invalid_argument("keyword_extra_weight must be >= 1");
  }
};

// One keyword per line; blank lines and #-comments ignored.
inline std::set<std::string> load_keyword_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keyword list: " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto w = trim(line);
    if (w.empty() || w.front() == '#') continue;
    words.insert(std::string(w));
  }
  return words;
}

// The hybrid reward: CodeBLEU similarity to the reference plus the fraction
// of tests passed. `raw` lives in [0, 2]; `normalized` (= raw/2) is what the
// tree search and advantage extraction consume, keeping Beta parameters in
// range.
struct RewardBreakdown {
  double codebleu = 0.0;
  double pass_fraction = 0.0;
  double raw = 0.0;
  double normalized = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

namespace detail {

inline std::unordered_map<std::string, double> ngram_counts(
    const std::vector<std::string>& tokens, int n) {
  std::unordered_map<std::string, double> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += tokens[i + static_cast<std::size_t>(j)];
    }
    counts[key] += 1.0;
  }
  return counts;
}

// Clipped precision for one order; weight_fn scales each n-gram's count on
// both sides of the ratio.
template <typename WeightFn>
std::optional<double> clipped_precision(const std::vector<std::string>& cand,
                                        const std::vector<std::string>& ref, int n,
                                        WeightFn&& weight_fn) {
  const auto cand_counts = ngram_counts(cand, n);
  if (cand_counts.empty()) return std::nullopt;  // no n-grams of this order
  const auto ref_counts = ngram_counts(ref, n);
  double matched = 0.0;
  double out_of = 0.0;
  for (const auto& [gram, count] : cand_counts) {
    const double w = weight_fn(gram);
    out_of += w * count;
    const auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matched += w * std::min(count, it->second);
  }
  if (out_of <= 0.0) return std::nullopt;
  return matched / out_of;
}

template <typename WeightFn>
double bleu_style_match(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                        int max_ngram, WeightFn&& weight_fn) {
  if (cand.empty() || ref.empty()) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_ngram; ++n) {
    const auto p = clipped_precision(cand, ref, n, weight_fn);
    if (!p) continue;  // candidate shorter than n: order skipped, not zeroed
    if (*p <= 0.0) return 0.0;
    log_sum += std::log(*p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double geo_mean = std::exp(log_sum / orders);
  const double brevity = cand.size() >= ref.size()
                             ? 1.0
                             : std::exp(1.0 - static_cast<double>(ref.size()) /
                                                  static_cast<double>(cand.size()));
  return brevity * geo_mean;
}

inline bool contains_keyword(const std::string& gram, const std::set<std::string>& keywords) {
  std::size_t start = 0;
  for (;;) {
    const std::size_t sep = gram.find('\x1f', start);
    const std::string token = gram.substr(start, sep == std::string::npos ? sep : sep - start);
    if (keywords.count(token)) return true;
    if (sep == std::string::npos) return false;
    start = sep + 1;
  }
}

inline double multiset_overlap(std::vector<std::string> a, std::vector<std::string> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0, common = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++common;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(common) / static_cast<double>(std::max(a.size(), b.size()));
}

inline char token_type(const std::string& token) {
  const char c = token.empty() ? ' ' : token[0];
  if (c == '"' || c == '\'') return 's';
  if (c >= '0' && c <= '9') return 'n';
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') return 'i';
  if (c == '(' || c == ')' || c == '[' || c == ']' || c == '{' || c == '}') return 'b';
  return 'o';
}

// Ratio of the longest common subsequence of token-type sequences; used when
// no parser is registered for the language. Sequences are capped to keep the
// O(n*m) table bounded.
inline double token_type_lcs_ratio(const std::vector<std::string>& cand,
                                   const std::vector<std::string>& ref) {
  constexpr std::size_t kCap = 2048;
  const std::size_t n = std::min(cand.size(), kCap);
  const std::size_t m = std::min(ref.size(), kCap);
  if (n == 0 || m == 0) return 0.0;
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (token_type(cand[i - 1]) == token_type(ref[j - 1]))
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

}  // namespace detail

inline double compute_ngram_match(const std::vector<std::string>& candidate_tokens,
                                  const std::vector<std::string>& reference_tokens,
                                  int max_ngram) {
  return detail::bleu_style_match(candidate_tokens, reference_tokens, max_ngram,
                                  [](const std::string&) { return 1.0; });
}

inline double compute_weighted_ngram_match(const std::vector<std::string>& candidate_tokens,
                                           const std::vector<std::string>& reference_tokens,
                                           int max_ngram, const std::set<std::string>& keywords,
                                           double keyword_extra_weight) {
  return detail::bleu_style_match(
      candidate_tokens, reference_tokens, max_ngram, [&](const std::string& gram) {
        return detail::contains_keyword(gram, keywords) ? keyword_extra_weight : 1.0;
      });
}

// Parse-tree subtree-bag overlap when the language has a registered parser
// (0 when the candidate fails to parse); token-type LCS ratio otherwise.
inline double compute_syntax_match(const Program& candidate, const Program& reference,
                                   const LanguageSupport& support,
                                   const std::vector<std::string>& candidate_tokens,
                                   const std::vector<std::string>& reference_tokens) {
  if (support.subtree_bag) {
    const auto cand_bag = support.subtree_bag(candidate.source);
    const auto ref_bag = support.subtree_bag(reference.source);
    if (!cand_bag || !ref_bag) return 0.0;
    return detail::multiset_overlap(*cand_bag, *ref_bag);
  }
  return detail::token_type_lcs_ratio(candidate_tokens, reference_tokens);
}

inline double compute_codebleu(const Program& candidate, const Program& reference,
                               const CodeBleuConfig& cfg,
                               const LanguageRegistry& registry = LanguageRegistry::builtin()) {
  cfg.validate();
  if (candidate.language_tag != reference.language_tag)
    throw std::invalid_argument("candidate/reference language mismatch: " +
                                candidate.language_tag + " vs " + reference.language_tag);
  const LanguageSupport& support = registry.lookup(candidate.language_tag);

  const auto cand_tokens = support.tokenize(candidate.source);
  const auto ref_tokens = support.tokenize(reference.source);
  if (cand_tokens.empty()) return 0.0;

  static const std::set<std::string> kNoKeywords;
  const auto kw_it = cfg.keywords.find(candidate.language_tag);
  const auto& keywords = kw_it == cfg.keywords.end() ? kNoKeywords : kw_it->second;

  const double ngram = compute_ngram_match(cand_tokens, ref_tokens, cfg.max_ngram);
  const double weighted = compute_weighted_ngram_match(cand_tokens, ref_tokens, cfg.max_ngram,
                                                       keywords, cfg.keyword_extra_weight);
  const double syntax =
      compute_syntax_match(candidate, reference, support, cand_tokens, ref_tokens);

  return cfg.ngram_weight * ngram + cfg.weighted_ngram_weight * weighted +
         cfg.syntax_weight * syntax;
}

// R = CodeBLEU(candidate, reference) + passed/total; normalized = R/2.
inline RewardBreakdown compute_reward(const Program& candidate, const Program& reference,
                                      const EvalResult& eval, const CodeBleuConfig& cfg,
                                      const LanguageRegistry& registry =
                                          LanguageRegistry::builtin()) {
  if (eval.total < 1) throw std::invalid_argument("compute_reward needs total >= 1");
  RewardBreakdown r;
  r.codebleu = compute_codebleu(candidate, reference, cfg, registry);
  r.pass_fraction = static_cast<double>(eval.passed) / static_cast<double>(eval.total);
  r.raw = r.codebleu + r.pass_fraction;
  r.normalized = r.raw / 2.0;
  return r;
}

}  // namespace retree
