#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "guardrl/completion.hpp"
#include "guardrl/corpus.hpp"
#include "guardrl/format.hpp"
#include "guardrl/policy.hpp"

namespace guardrl {

/// Produces one guardrail transcript for a sample. `media` is the subset of
/// the sample's media to show (all of it, or a single frame). Implementations
/// must be safe to call concurrently; `seed` makes stochastic backends
/// reproducible per call.
class TranscriptSource {
 public:
  virtual ~TranscriptSource() = default;
  virtual std::string generate(const Sample& sample, std::span<const std::string> media,
                               std::uint64_t seed) const = 0;
  /// Tokenizer used for transcript lengths.
  virtual TokenCounter counter() const { return whitespace_counter(); }
  virtual TranscriptGrammar grammar() const { return {}; }
};

/// Samples from a toy policy snapshot. Ignores media.
class PolicySource : public TranscriptSource {
 public:
  PolicySource(const ToyPolicy& policy, const ToyCodec& codec, double temperature = 1.0)
      : policy_(policy), codec_(codec), temperature_(temperature) {}
  std::string generate(const Sample& sample, std::span<const std::string> media,
                       std::uint64_t seed) const override;
  TokenCounter counter() const override;
  TranscriptGrammar grammar() const override { return codec_.grammar(); }

 private:
  const ToyPolicy& policy_;
  const ToyCodec& codec_;
  double temperature_;
};

/// Renders the moderation prompt and calls a completion endpoint.
class EndpointSource : public TranscriptSource {
 public:
  EndpointSource(EndpointConfig config, PromptTemplate tmpl, TranscriptGrammar grammar = {});
  std::string generate(const Sample& sample, std::span<const std::string> media,
                       std::uint64_t seed) const override;
  TranscriptGrammar grammar() const override { return grammar_; }

 private:
  CompletionClient client_;
  PromptTemplate template_;
  TranscriptGrammar grammar_;
};

/// Adapter over a callable, mostly for tests and scripted backends.
class FunctionSource : public TranscriptSource {
 public:
  using Fn = std::function<std::string(const Sample&, std::span<const std::string>, std::uint64_t)>;
  explicit FunctionSource(Fn fn, TokenCounter counter = whitespace_counter())
      : fn_(std::move(fn)), counter_(std::move(counter)) {}
  std::string generate(const Sample& sample, std::span<const std::string> media,
                       std::uint64_t seed) const override {
    return fn_(sample, media, seed);
  }
  TokenCounter counter() const override { return counter_; }

 private:
  Fn fn_;
  TokenCounter counter_;
};

}  // namespace guardrl
