#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "guardrl/corpus.hpp"

namespace guardrl {

/// Completion endpoint settings. The API key is read from the environment
/// variable named by `api_key_env` at call time and sent as a bearer token.
struct EndpointConfig {
  std::string url;
  std::string api_key_env = "GUARDRL_API_KEY";
  int timeout_ms = 30000;
  int max_attempts = 3;
  int initial_backoff_ms = 200;
  double backoff_multiplier = 2.0;
  int max_backoff_ms = 5000;
};

/// Wire request: {"prompt": ..., "media": [...]}. Response: {"completion": ...}.
struct CompletionRequest {
  std::string prompt;
  std::vector<std::string> media;
};

enum class CompletionErrorKind { network, timeout, status, empty_completion, bad_response };

std::string_view to_string(CompletionErrorKind kind);

class CompletionError : public AnnotatorError {
 public:
  CompletionError(CompletionErrorKind kind, std::string message, int attempts, int status = 0);
  CompletionErrorKind kind() const { return kind_; }
  bool retryable() const;
  int attempts() const { return attempts_; }
  int status() const { return status_; }

 private:
  CompletionErrorKind kind_;
  int attempts_;
  int status_;
};

/// Single request/response exchange with retries on network errors,
/// timeouts, 429 and 5xx. Thread-safe: each call opens its own connection.
class CompletionClient {
 public:
  explicit CompletionClient(EndpointConfig config);
  const EndpointConfig& config() const { return config_; }
  std::string complete(const CompletionRequest& request) const;

 private:
  std::string attempt(const std::string& body, int attempt_no) const;

  EndpointConfig config_;
  std::string origin_;
  std::string path_;
};

/// Raw completion for a prompt payload. No log-probabilities are available,
/// so this serves mining and evaluation but not policy updates.
std::string external_policy_sample(const CompletionClient& client, const CompletionRequest& request);

/// Teacher backend over the completion endpoint.
class EndpointAnnotator : public Annotator {
 public:
  explicit EndpointAnnotator(EndpointConfig config) : client_(std::move(config)) {}
  std::string complete(const Sample& sample, const std::string& prompt) const override;

 private:
  CompletionClient client_;
};

}  // namespace guardrl
