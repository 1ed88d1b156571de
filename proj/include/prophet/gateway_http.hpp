#pragma once

// HTTP transports: a completions-style endpoint
//   POST {model, prompt, max_tokens, temperature, stop} -> {choices: [{text}]}
// and the remote scorer endpoint
//   POST {prefix: [tokens]} -> {probs: [floats]}.

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prophet/gateway.hpp"
#include "prophet/heuristics.hpp"

namespace prophet {

struct HttpEndpointConfig {
  std::string url;  // full URL including path, e.g. http://127.0.0.1:8080/v1/completions
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  std::size_t max_in_flight = 4;
  int retries = 4;  // total attempts
  int backoff_base_ms = 500;
  int timeout_ms = 30000;
  int min_interval_ms = 0;  // per-endpoint pacing between request starts
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(std::string_view url) {
  const auto scheme = url.find("://");
  if (scheme == std::string_view::npos) throw ConfigError("endpoint URL '" + std::string(url) + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

inline bool is_transient_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

class HttpCompletionClient final : public CompletionClient {
 public:
  explicit HttpCompletionClient(HttpEndpointConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.url)) {
    if (cfg_.retries < 1) throw ConfigError("retries must be >= 1");
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    }
  }

  std::string endpoint_id() const override { return cfg_.url; }

  CompletionResult complete(const CompletionRequest& request) override {
    request.validate();
    nlohmann::json body{{"model", cfg_.model},
                        {"prompt", request.prompt},
                        {"max_tokens", request.max_tokens},
                        {"temperature", request.temperature},
                        {"stop", request.stop_sequences}};
    const auto payload = body.dump();
    const auto t0 = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(cfg_.backoff_base_ms) << (attempt - 2)));
      }
      pace();
      httplib::Client cli(url_.origin);
      cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      cli.set_write_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = cli.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 401 || res->status == 403) {
        throw GatewayError(GatewayError::Kind::auth, "authentication failed (HTTP " + std::to_string(res->status) + ")");
      }
      if (is_transient_status(res->status)) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        throw GatewayError(GatewayError::Kind::rejected, "request rejected (HTTP " + std::to_string(res->status) + ")");
      }
      CompletionResult r;
      try {
        const auto j = nlohmann::json::parse(res->body);
        r.raw_text = j.at("choices").at(0).at("text").get<std::string>();
      } catch (const nlohmann::json::exception& ex) {
        throw GatewayError(GatewayError::Kind::malformed, std::string("malformed endpoint response: ") + ex.what());
      }
      r.parsed_answer = parse_answer(r.raw_text, request.task_format, request.stop_sequences);
      r.endpoint_id = endpoint_id();
      r.attempts = attempt;
      r.latency_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
    throw GatewayError(GatewayError::Kind::exhausted,
                       "retries exhausted after " + std::to_string(cfg_.retries) + " attempts: " + last_error);
  }

 private:
  void pace() {
    if (cfg_.min_interval_ms <= 0) return;
    std::unique_lock lock(pace_mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto ready = last_start_ + std::chrono::milliseconds(cfg_.min_interval_ms);
    if (now < ready) std::this_thread::sleep_until(ready);
    last_start_ = std::chrono::steady_clock::now();
  }

  HttpEndpointConfig cfg_;
  ParsedUrl url_;
  std::string api_key_;
  std::mutex pace_mu_;
  std::chrono::steady_clock::time_point last_start_{};
};

// Remote autoregressive scorer. Calls are serialized: one request at a time
// per scorer instance.
class HttpScorer final : public AutoregressiveScorer {
 public:
  HttpScorer(std::string url, AnswerVocabulary vocab, int timeout_ms = 30000)
      : url_(parse_url(url)), vocab_(std::move(vocab)), timeout_ms_(timeout_ms) {}

  const AnswerVocabulary& vocabulary() const override { return vocab_; }

  std::vector<double> next_distribution(std::span<const std::size_t> prefix) const override {
    nlohmann::json body;
    body["prefix"] = nlohmann::json::array();
    for (auto t : prefix) body["prefix"].push_back(vocab_[t]);
    std::lock_guard lock(mu_);
    httplib::Client cli(url_.origin);
    cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
    cli.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
    auto res = cli.Post(url_.path, body.dump(), "application/json");
    if (!res) throw GatewayError(GatewayError::Kind::exhausted, "scorer unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw GatewayError(GatewayError::Kind::rejected, "scorer returned HTTP " + std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body).at("probs").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
      throw GatewayError(GatewayError::Kind::malformed, std::string("malformed scorer response: ") + ex.what());
    }
  }

 private:
  ParsedUrl url_;
  AnswerVocabulary vocab_;
  int timeout_ms_;
  mutable std::mutex mu_;
};

}  // namespace prophet
