#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "guardrl/corpus.hpp"
#include "guardrl/format.hpp"
#include "guardrl/random.hpp"

namespace guardrl {

using TokenId = int;

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Active binary prompt features plus a discrete prompt mode that selects
/// the bigram table.
struct PromptFeatures {
  std::vector<Eigen::Index> active;
  Eigen::Index mode = 0;

  bool operator==(const PromptFeatures&) const = default;
};

struct PolicyShape {
  Eigen::Index vocab_size = 0;
  Eigen::Index feature_count = 1;
  Eigen::Index embed_dim = 1;
  /// Terminates generation; also the state before the first token.
  TokenId end_token = 0;
  std::size_t max_len = 64;
  /// Number of prompt modes, each with its own bigram table.
  Eigen::Index modes = 1;

  bool operator==(const PolicyShape&) const = default;
};

/// Autoregressive softmax policy over a small vocabulary. Next-token logits
/// are bigram logits plus a prompt term:
///
///   z(prev, x) = B_m(x)[:, prev] + Q_prev * (E * phi(x))
///
/// where phi(x) is a binary feature vector of the prompt and m(x) its mode. All parameters
/// live in one contiguous vector so gradients and optimizer state are plain
/// Eigen vectors. Copies are independent snapshots.
class ToyPolicy {
 public:
  explicit ToyPolicy(PolicyShape shape);

  const PolicyShape& shape() const { return shape_; }
  Eigen::Index parameter_count() const { return theta_.size(); }
  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }

  /// Gaussian init of the prompt embedding only; bigram and conditioning start at zero,
  /// so the initial next-token distribution is uniform.
  void init_embedding(Rng& rng, double scale);

  Eigen::VectorXd embed(const PromptFeatures& x) const;
  Eigen::VectorXd logits(TokenId prev, Eigen::Index mode, const Eigen::Ref<const Eigen::VectorXd>& h) const;
  /// Column of the bigram block for a (prev, mode) state.
  Eigen::Index state(TokenId prev, Eigen::Index mode) const { return prev + shape_.vocab_size * mode; }

  /// Parameter blocks (views into the flat vector).
  Eigen::Map<const Eigen::MatrixXd> bigram() const;
  Eigen::Map<const Eigen::MatrixXd> conditioning(TokenId prev) const;
  Eigen::Map<const Eigen::MatrixXd> embedding() const;
  Eigen::Map<Eigen::MatrixXd> bigram(Eigen::VectorXd& v) const;
  Eigen::Map<Eigen::MatrixXd> conditioning(Eigen::VectorXd& v, TokenId prev) const;
  Eigen::Map<Eigen::MatrixXd> embedding(Eigen::VectorXd& v) const;

  void check_token(TokenId t) const;
  void check_features(const PromptFeatures& x) const;

 private:
  Eigen::Index bigram_offset() const { return 0; }
  Eigen::Index conditioning_offset(TokenId prev) const;
  Eigen::Index embedding_offset() const;

  PolicyShape shape_;
  Eigen::VectorXd theta_;
};

/// Numerically stable log-softmax.
Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& z);

/// Next-token distribution at a state.
Eigen::VectorXd next_token_probs(const ToyPolicy& policy, TokenId prev, const PromptFeatures& x);

struct Trajectory {
  PromptFeatures prompt;
  /// Includes the end token when generation stopped on it.
  std::vector<TokenId> tokens;
  double logprob = 0.0;
};

/// Sum of per-token log-probabilities at temperature 1. Throws VocabularyError.
double logprob(const ToyPolicy& policy, const PromptFeatures& prompt, std::span<const TokenId> output);

/// Stops at the end token or after max_len tokens. The recorded logprob is
/// the temperature-1 score, bit-identical to logprob() on the same tokens.
Trajectory sample(const ToyPolicy& policy, const PromptFeatures& prompt, double temperature, Rng& rng);

/// grad += weight * d logprob / d theta.
void accumulate_logprob_grad(const ToyPolicy& policy, const PromptFeatures& prompt,
                             std::span<const TokenId> output, double weight, Eigen::VectorXd& grad);

/// weight * d logprob(trajectory) / d theta.
Eigen::VectorXd reinforce_grad(const ToyPolicy& policy, const Trajectory& trajectory, double weight);

struct SftExample {
  PromptFeatures prompt;
  std::vector<TokenId> target;
};

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Mean negative log-likelihood of the targets and its exact gradient.
LossAndGrad sft_loss_and_grad(const ToyPolicy& policy, std::span<const SftExample> batch);

/// Adam on a flat parameter vector; `descend` minimizes along the gradient.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit Adam(Options options) : opt_(options) {}
  void descend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
  void ascend(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) { descend(theta, -grad); }
  long steps() const { return t_; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }

 private:
  Options opt_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

struct SftOptions {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  /// Decay the step size linearly to zero over the run.
  bool linear_decay = true;
};

struct SftEpoch {
  std::size_t epoch = 0;
  /// Mean minibatch loss over the epoch, before each update.
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

/// Minibatch Adam on the mean NLL. Example order is reshuffled each epoch
/// from `seed`. Zero epochs returns the input policy unchanged.
ToyPolicy train_sft(ToyPolicy policy, std::span<const SftExample> examples, const SftOptions& options,
                    std::uint64_t seed, std::vector<SftEpoch>* curve = nullptr);

// ---------------------------------------------------------------------------
// Text interface for the synthetic task

/// Maps transcripts to policy tokens and samples to prompt features.
///
/// Vocabulary: the end token, the four grammar tags, one token per
/// (result key, label) line, then word tokens (task tokens followed by
/// reasoning words). Word tokens are separated by single spaces in text.
/// Prompt features are a bias, a has-response flag, and the presence of
/// each task-token bigram in the request and in the response.
class ToyCodec {
 public:
  ToyCodec(std::vector<std::string> task_tokens, std::vector<std::string> reasoning_words,
           TranscriptGrammar grammar = {});

  /// Codec for the synthetic task and its rule annotator.
  static ToyCodec for_synthetic(const SyntheticTaskConfig& config, TranscriptGrammar grammar = {});

  Eigen::Index vocab_size() const { return static_cast<Eigen::Index>(pieces_.size()); }
  Eigen::Index feature_count() const;
  TokenId end_token() const { return 0; }
  const std::string& piece(TokenId t) const { return pieces_.at(static_cast<std::size_t>(t)); }
  const std::vector<std::string>& task_tokens() const { return task_tokens_; }
  const std::vector<std::string>& reasoning_words() const { return reasoning_words_; }
  const TranscriptGrammar& grammar() const { return grammar_; }

  PolicyShape shape(Eigen::Index embed_dim, std::size_t max_len) const;

  /// Throws VocabularyError on text outside the vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  /// End token and anything after it are dropped.
  std::string decode(std::span<const TokenId> tokens) const;
  /// Token count of arbitrary text; unknown words count one each.
  std::size_t count(std::string_view text) const;
  TokenCounter counter() const;

  /// Throws VocabularyError when request/response words are not task tokens.
  PromptFeatures featurize(const Sample& s) const;

  /// Target tokens (with end token) of a rendered transcript.
  std::vector<TokenId> target_tokens(std::string_view transcript) const;

 private:
  bool is_word(TokenId t) const { return t >= first_word_; }
  std::vector<TokenId> scan(std::string_view text, bool strict) const;
  void bigram_features(const std::string& text, Eigen::Index offset, PromptFeatures& out) const;

  std::vector<std::string> task_tokens_;
  std::vector<std::string> reasoning_words_;
  TranscriptGrammar grammar_;
  std::vector<std::string> pieces_;
  TokenId first_word_ = 0;
  std::unordered_map<std::string, TokenId> word_ids_;
  std::unordered_map<std::string, Eigen::Index> task_index_;
};

/// Policy checkpoint: codec description, shape, parameters and a free-form
/// fingerprint of the configuration that produced it.
struct Checkpoint {
  ToyCodec codec;
  ToyPolicy policy;
  std::string config_fingerprint;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace guardrl
