#include "guardrl/completion.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace guardrl {

std::string_view to_string(CompletionErrorKind kind) {
  switch (kind) {
    case CompletionErrorKind::network: return "network";
    case CompletionErrorKind::timeout: return "timeout";
    case CompletionErrorKind::status: return "status";
    case CompletionErrorKind::empty_completion: return "empty-completion";
    case CompletionErrorKind::bad_response: return "bad-response";
  }
  return "unknown";
}

CompletionError::CompletionError(CompletionErrorKind kind, std::string message, int attempts, int status)
    : AnnotatorError(std::string(to_string(kind)) + ": " + message), kind_(kind), attempts_(attempts),
      status_(status) {}

bool CompletionError::retryable() const {
  switch (kind_) {
    case CompletionErrorKind::network:
    case CompletionErrorKind::timeout: return true;
    case CompletionErrorKind::status: return status_ == 429 || status_ >= 500;
    default: return false;
  }
}

CompletionClient::CompletionClient(EndpointConfig config) : config_(std::move(config)) {
  const auto scheme = config_.url.find("://");
  if (config_.url.empty() || scheme == std::string::npos)
    throw std::invalid_argument("endpoint url must look like http://host[:port]/path, got '" +
                                config_.url + "'");
  const auto slash = config_.url.find('/', scheme + 3);
  origin_ = config_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.url.substr(slash);
  if (config_.max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
  if (config_.timeout_ms < 1) throw std::invalid_argument("timeout_ms must be >= 1");
}

std::string CompletionClient::attempt(const std::string& body, int attempt_no) const {
  httplib::Client cli(origin_);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  auto res = cli.Post(path_, headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
    throw CompletionError(timed_out ? CompletionErrorKind::timeout : CompletionErrorKind::network,
                          httplib::to_string(err), attempt_no);
  }
  if (res->status < 200 || res->status >= 300)
    throw CompletionError(CompletionErrorKind::status, "HTTP " + std::to_string(res->status), attempt_no,
                          res->status);
  if (res->body.empty()) throw CompletionError(CompletionErrorKind::empty_completion, "empty body", attempt_no);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw CompletionError(CompletionErrorKind::bad_response, e.what(), attempt_no);
  }
  if (!j.is_object() || !j.contains("completion") || !j["completion"].is_string())
    throw CompletionError(CompletionErrorKind::bad_response, "response lacks a 'completion' string",
                          attempt_no);
  auto text = j["completion"].get<std::string>();
  if (text.empty())
    throw CompletionError(CompletionErrorKind::empty_completion, "empty completion", attempt_no);
  return text;
}

std::string CompletionClient::complete(const CompletionRequest& request) const {
  const std::string body = nlohmann::json{{"prompt", request.prompt}, {"media", request.media}}.dump();
  double backoff = config_.initial_backoff_ms;
  for (int n = 1;; ++n) {
    try {
      return attempt(body, n);
    } catch (const CompletionError& e) {
      if (!e.retryable() || n >= config_.max_attempts) throw;
    }
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
    backoff = std::min<double>(backoff * config_.backoff_multiplier, config_.max_backoff_ms);
  }
}

std::string external_policy_sample(const CompletionClient& client, const CompletionRequest& request) {
  return client.complete(request);
}

std::string EndpointAnnotator::complete(const Sample& sample, const std::string& prompt) const {
  return client_.complete({prompt, sample.media_refs});
}

}  // namespace guardrl
