#pragma once

// Chat-completions HTTP backend. One user message carries the rendered
// prompt; the completion is the first choice's message content.

#include <chrono>
#include <cstdlib>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

// <resolv.h>, pulled in by httplib, defines `_res` as a macro, which breaks
// Eigen headers included afterwards.
#ifdef _res
#undef _res
#endif

#include "cbu/error.hpp"
#include "cbu/gateway.hpp"

namespace cbu {

inline constexpr const char* api_key_env = "CBU_GATEWAY_API_KEY";

struct RetryPolicy {
  int max_attempts = 4;
  int backoff_base_ms = 500;
};

struct BackendConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model_name;
  int max_in_flight = 8;
  RetryPolicy retry;
  int timeout_ms = 600000;
};

inline void validate(const BackendConfig& c) {
  if (c.endpoint.empty()) throw Error(ErrorKind::config, "backend endpoint is empty");
  if (c.model_name.empty()) throw Error(ErrorKind::config, "backend model name is empty");
  if (c.max_in_flight < 1) throw Error(ErrorKind::config, "max_in_flight must be >= 1");
  if (c.retry.max_attempts < 1) throw Error(ErrorKind::config, "retry max_attempts must be >= 1");
  if (c.retry.backoff_base_ms < 0) throw Error(ErrorKind::config, "retry backoff must be >= 0");
  if (c.timeout_ms < 1) throw Error(ErrorKind::config, "timeout_ms must be >= 1");
}

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::config, "endpoint '" + url + "' lacks a scheme");
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorKind::config, "endpoint scheme must be http or https");
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline nlohmann::json chat_request_body(const std::string& model, const GenerationRequest& r) {
  nlohmann::json body = {
      {"model", model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", r.prompt}}})},
      {"temperature", r.sampling.temperature},
      {"max_tokens", r.sampling.max_new_tokens},
  };
  if (r.sampling.seed) body["seed"] = *r.sampling.seed;
  return body;
}

inline std::string chat_response_text(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::protocol, std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    if (!content.is_string()) throw Error(ErrorKind::protocol, "message content is not a string");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("unexpected response shape: ") + e.what());
  }
}

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config) : config_(std::move(config)), url_(split_url(config_.endpoint)) {
    validate(config_);
    if (const char* key = std::getenv(api_key_env)) api_key_ = key;
  }

  std::string generate(const GenerationRequest& request) override {
    check_request(request);
    const std::string payload = chat_request_body(config_.model_name, request).dump();

    ErrorKind last_kind = ErrorKind::backend;
    std::string last_message;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
      if (attempt > 1) sleep_backoff(attempt - 1);

      httplib::Client client(url_.scheme_host_port);
      auto timeout = std::chrono::milliseconds(config_.timeout_ms);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

      auto started = std::chrono::steady_clock::now();
      auto res = client.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        auto elapsed = std::chrono::steady_clock::now() - started;
        bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                         (res.error() == httplib::Error::Read && elapsed >= timeout);
        last_kind = timed_out ? ErrorKind::timeout : ErrorKind::backend;
        last_message = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_kind = ErrorKind::backend;
        last_message = "server error status " + std::to_string(res->status);
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorKind::protocol, "HTTP status " + std::to_string(res->status));
      }
      return chat_response_text(res->body);
    }
    throw Error(last_kind, last_message + " after " + std::to_string(config_.retry.max_attempts) + " attempts");
  }

  const BackendConfig& config() const { return config_; }

 private:
  // Exponential backoff with full jitter.
  void sleep_backoff(int retry) {
    double cap = static_cast<double>(config_.retry.backoff_base_ms) * static_cast<double>(1LL << std::min(retry, 20));
    double wait_ms;
    {
      std::lock_guard lock(jitter_mutex_);
      wait_ms = std::uniform_real_distribution<double>(0.0, cap)(jitter_);
    }
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait_ms));
  }

  BackendConfig config_;
  ParsedUrl url_;
  std::string api_key_;
  std::mutex jitter_mutex_;
  std::mt19937_64 jitter_{std::random_device{}()};
};

}  // namespace cbu
