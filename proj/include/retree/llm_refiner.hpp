#pragma once

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "retree/refiner.hpp"

namespace retree {

struct LlmBackendConfig {
  std::string endpoint_url;  // full URL, e.g. http://host:8000/v1/chat/completions
  std::string model_name;
  std::string api_key_env_var;  // name of the env var holding the key; empty = no auth
  double temperature_train = 1.0;
  double temperature_eval = 0.6;
  int max_tokens = 1024;
  std::int64_t request_timeout_ms = 30000;
  int max_retries = 2;
  double requests_per_second = 0.0;  // token bucket; 0 = unlimited

  void validate() const {
    if (endpoint_url.empty()) throw std::invalid_argument("endpoint_url must be set");
    if (model_name.empty()) throw std::invalid_argument("model_name must be set");
    if (temperature_train < 0 || temperature_eval < 0)
      throw std::invalid_argument("temperatures must be >= 0");
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
    if (request_timeout_ms <= 0) throw std::invalid_argument("request_timeout_ms must be > 0");
    if (max_retries < 0) throw std::invalid_argument("max_retries must be >= 0");
    if (requests_per_second < 0) throw std::invalid_argument("requests_per_second must be >= 0");
  }
};

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host:port
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint_url needs a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Chat-completions client over the de-facto open schema: POST {model,
// messages, temperature, max_tokens, n}. Retries transport errors, 429 and
// 5xx with exponential backoff inside a hard deadline of
// (max_retries + 1) * request_timeout_ms. If the endpoint rejects n > 1, the
// k samples are requested one call at a time instead.
//
// The API key is read from the environment (never from config files) and is
// not echoed by the debug log.
class LlmRefiner final : public Refiner {
 public:
  LlmRefiner(LlmBackendConfig config, std::string language_tag,
             const LanguageRegistry& registry = LanguageRegistry::builtin())
      : config_(std::move(config)),
        language_tag_(std::move(language_tag)),
        registry_(&registry),
        url_(detail::split_url(config_.endpoint_url)) {
    config_.validate();
    if (!config_.api_key_env_var.empty()) {
      if (const char* key = std::getenv(config_.api_key_env_var.c_str())) api_key_ = key;
    }
  }

  double preferred_temperature() const override { return config_.temperature_train; }

  std::function<void(std::string_view)> debug_log;

  std::vector<Program> refine(const RefinerRequest& request) override {
    request.validate();
    const std::vector<ChatMessage> messages = build_prompt(request);

    std::vector<std::string> completions;
    if (request.k == 1) {
      completions = post_once(messages, request.temperature, 1);
    } else {
      try {
        completions = post_once(messages, request.temperature, request.k);
      } catch (const BatchSizeRejected&) {
        for (int i = 0; i < request.k; ++i) {
          auto one = post_once(messages, request.temperature, 1);
          completions.insert(completions.end(), one.begin(), one.end());
        }
      }
    }

    std::vector<Program> candidates;
    for (const auto& text : completions) {
      if (auto program = extract_code(text, language_tag_, *registry_))
        candidates.push_back(std::move(*program));
      // extraction failures drop just that sample
    }
    return dedup_candidates(std::move(candidates), request.current_program);
  }

 private:
  struct BatchSizeRejected : std::runtime_error {
    BatchSizeRejected() : std::runtime_error("endpoint rejected n > 1") {}
  };

  void rate_limit() {
    if (config_.requests_per_second <= 0) return;
    std::unique_lock lock(bucket_mutex_);
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - bucket_stamp_).count();
    bucket_tokens_ = std::min(std::max(1.0, config_.requests_per_second),
                              bucket_tokens_ + elapsed * config_.requests_per_second);
    bucket_stamp_ = now;
    if (bucket_tokens_ >= 1.0) {
      bucket_tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - bucket_tokens_) / config_.requests_per_second;
    bucket_tokens_ = 0.0;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
  }

  std::vector<std::string> post_once(const std::vector<ChatMessage>& messages, double temperature,
                                     int n) {
    ordered_json body;
    body["model"] = config_.model_name;
    body["messages"] = ordered_json::array();
    for (const auto& m : messages)
      body["messages"].push_back(ordered_json{{"role", m.role}, {"content", m.content}});
    body["temperature"] = temperature;
    body["max_tokens"] = config_.max_tokens;
    body["n"] = n;
    const std::string payload = body.dump();

    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds((config_.max_retries + 1) * config_.request_timeout_ms);

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        const auto backoff = std::chrono::milliseconds(250LL << (attempt - 1));
        if (std::chrono::steady_clock::now() + backoff >= deadline) break;
        std::this_thread::sleep_for(backoff);
      }
      rate_limit();

      httplib::Client client(url_.base);
      const auto timeout_s = std::chrono::milliseconds(config_.request_timeout_ms);
      client.set_connection_timeout(timeout_s);
      client.set_read_timeout(timeout_s);
      client.set_write_timeout(timeout_s);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

      const auto res = client.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        log("POST " + url_.path + " -> " + last_error);
        continue;
      }
      log("POST " + url_.path + " -> " + std::to_string(res->status));
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status >= 400) {
        if (n > 1) throw BatchSizeRejected();
        throw RefinerError("chat endpoint returned HTTP " + std::to_string(res->status));
      }
      try {
        const auto j = ordered_json::parse(res->body);
        std::vector<std::string> completions;
        for (const auto& choice : j.at("choices"))
          completions.push_back(choice.at("message").at("content").get<std::string>());
        return completions;
      } catch (const std::exception& e) {
        last_error = std::string("bad response body: ") + e.what();
        continue;
      }
    }
    throw RefinerError("chat endpoint unavailable after " +
                       std::to_string(config_.max_retries + 1) + " attempts (" + last_error + ")");
  }

  void log(const std::string& line) {
    if (debug_log) debug_log(line);
  }

  LlmBackendConfig config_;
  std::string language_tag_;
  const LanguageRegistry* registry_;
  detail::SplitUrl url_;
  std::string api_key_;

  std::mutex bucket_mutex_;
  double bucket_tokens_ = 1.0;
  std::chrono::steady_clock::time_point bucket_stamp_ = std::chrono::steady_clock::now();
};

}  // namespace retree
