#include "guardrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace guardrl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

ToyPolicy::ToyPolicy(PolicyShape shape) : shape_(shape) {
  if (shape_.vocab_size < 1 || shape_.feature_count < 1 || shape_.embed_dim < 1 || shape_.modes < 1)
    throw std::invalid_argument("policy dimensions must be positive");
  if (shape_.end_token < 0 || shape_.end_token >= shape_.vocab_size)
    throw std::invalid_argument("end token outside vocabulary");
  const Index v = shape_.vocab_size;
  const Index d = shape_.embed_dim;
  theta_ = VectorXd::Zero(v * v * shape_.modes + v * v * d + d * shape_.feature_count);
}

Index ToyPolicy::conditioning_offset(TokenId prev) const {
  const Index v = shape_.vocab_size;
  return v * v * shape_.modes + static_cast<Index>(prev) * v * shape_.embed_dim;
}

Index ToyPolicy::embedding_offset() const {
  const Index v = shape_.vocab_size;
  return v * v * shape_.modes + v * v * shape_.embed_dim;
}

Eigen::Map<const MatrixXd> ToyPolicy::bigram() const {
  return {theta_.data(), shape_.vocab_size, shape_.vocab_size * shape_.modes};
}
Eigen::Map<const MatrixXd> ToyPolicy::conditioning(TokenId prev) const {
  return {theta_.data() + conditioning_offset(prev), shape_.vocab_size, shape_.embed_dim};
}
Eigen::Map<const MatrixXd> ToyPolicy::embedding() const {
  return {theta_.data() + embedding_offset(), shape_.embed_dim, shape_.feature_count};
}
Eigen::Map<MatrixXd> ToyPolicy::bigram(VectorXd& v) const {
  return {v.data(), shape_.vocab_size, shape_.vocab_size * shape_.modes};
}
Eigen::Map<MatrixXd> ToyPolicy::conditioning(VectorXd& v, TokenId prev) const {
  return {v.data() + conditioning_offset(prev), shape_.vocab_size, shape_.embed_dim};
}
Eigen::Map<MatrixXd> ToyPolicy::embedding(VectorXd& v) const {
  return {v.data() + embedding_offset(), shape_.embed_dim, shape_.feature_count};
}

void ToyPolicy::init_embedding(Rng& rng, double scale) {
  auto e = embedding(theta_);
  for (Index j = 0; j < e.cols(); ++j)
    for (Index i = 0; i < e.rows(); ++i) e(i, j) = scale * rng.normal();
}

void ToyPolicy::check_token(TokenId t) const {
  if (t < 0 || t >= shape_.vocab_size)
    throw VocabularyError("out-of-vocabulary token id " + std::to_string(t));
}

void ToyPolicy::check_features(const PromptFeatures& x) const {
  if (x.mode < 0 || x.mode >= shape_.modes)
    throw VocabularyError("prompt mode " + std::to_string(x.mode) + " out of range");
  for (auto f : x.active) {
    if (f < 0 || f >= shape_.feature_count)
      throw VocabularyError("prompt feature index " + std::to_string(f) + " out of range");
  }
}

VectorXd ToyPolicy::embed(const PromptFeatures& x) const {
  check_features(x);
  VectorXd h = VectorXd::Zero(shape_.embed_dim);
  const auto e = embedding();
  for (auto f : x.active) h += e.col(f);
  return h;
}

VectorXd ToyPolicy::logits(TokenId prev, Index mode, const Eigen::Ref<const VectorXd>& h) const {
  return bigram().col(state(prev, mode)) + conditioning(prev) * h;
}

VectorXd log_softmax(const Eigen::Ref<const VectorXd>& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

VectorXd next_token_probs(const ToyPolicy& policy, TokenId prev, const PromptFeatures& x) {
  policy.check_token(prev);
  return log_softmax(policy.logits(prev, x.mode, policy.embed(x))).array().exp();
}

double logprob(const ToyPolicy& policy, const PromptFeatures& prompt, std::span<const TokenId> output) {
  const VectorXd h = policy.embed(prompt);
  TokenId prev = policy.shape().end_token;
  double total = 0.0;
  for (TokenId t : output) {
    policy.check_token(t);
    total += log_softmax(policy.logits(prev, prompt.mode, h))(t);
    prev = t;
  }
  return total;
}

Trajectory sample(const ToyPolicy& policy, const PromptFeatures& prompt, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  Trajectory traj;
  traj.prompt = prompt;
  const VectorXd h = policy.embed(prompt);
  const TokenId end = policy.shape().end_token;
  TokenId prev = end;
  while (traj.tokens.size() < policy.shape().max_len) {
    const VectorXd z = policy.logits(prev, prompt.mode, h);
    const VectorXd lp = log_softmax(z);
    VectorXd p = temperature == 1.0 ? VectorXd(lp.array().exp())
                                    : VectorXd(log_softmax(z / temperature).array().exp());
    const double u = rng.uniform() * p.sum();
    double acc = 0.0;
    TokenId next = static_cast<TokenId>(p.size() - 1);
    for (Index i = 0; i < p.size(); ++i) {
      acc += p(i);
      if (u < acc) {
        next = static_cast<TokenId>(i);
        break;
      }
    }
    traj.logprob += lp(next);
    traj.tokens.push_back(next);
    if (next == end) break;
    prev = next;
  }
  return traj;
}

void accumulate_logprob_grad(const ToyPolicy& policy, const PromptFeatures& prompt,
                             std::span<const TokenId> output, double weight, VectorXd& grad) {
  if (grad.size() != policy.parameter_count()) grad = VectorXd::Zero(policy.parameter_count());
  if (weight == 0.0 || output.empty()) return;
  const VectorXd h = policy.embed(prompt);
  VectorXd dh = VectorXd::Zero(h.size());
  auto d_bigram = policy.bigram(grad);
  TokenId prev = policy.shape().end_token;
  for (TokenId t : output) {
    policy.check_token(t);
    // d log p(t) / dz = onehot(t) - softmax(z)
    VectorXd g = -log_softmax(policy.logits(prev, prompt.mode, h)).array().exp().matrix();
    g(t) += 1.0;
    g *= weight;
    d_bigram.col(policy.state(prev, prompt.mode)) += g;
    policy.conditioning(grad, prev).noalias() += g * h.transpose();
    dh.noalias() += policy.conditioning(prev).transpose() * g;
    prev = t;
  }
  auto d_embed = policy.embedding(grad);
  for (auto f : prompt.active) d_embed.col(f) += dh;
}

VectorXd reinforce_grad(const ToyPolicy& policy, const Trajectory& trajectory, double weight) {
  VectorXd grad = VectorXd::Zero(policy.parameter_count());
  accumulate_logprob_grad(policy, trajectory.prompt, trajectory.tokens, weight, grad);
  return grad;
}

LossAndGrad sft_loss_and_grad(const ToyPolicy& policy, std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty SFT batch");
  LossAndGrad out;
  out.grad = VectorXd::Zero(policy.parameter_count());
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    out.loss -= scale * logprob(policy, ex.prompt, ex.target);
    accumulate_logprob_grad(policy, ex.prompt, ex.target, -scale, out.grad);
  }
  return out;
}

void Adam::descend(VectorXd& theta, const VectorXd& grad) {
  if (m_.size() != theta.size()) {
    m_ = VectorXd::Zero(theta.size());
    v_ = VectorXd::Zero(theta.size());
  }
  ++t_;
  m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
  v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  theta.array() -= opt_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opt_.epsilon);
}

ToyPolicy train_sft(ToyPolicy policy, std::span<const SftExample> examples, const SftOptions& options,
                    std::uint64_t seed, std::vector<SftEpoch>* curve) {
  if (examples.empty()) throw std::invalid_argument("SFT needs at least one example");
  if (options.batch_size == 0) throw std::invalid_argument("SFT batch size must be positive");
  if (!(options.learning_rate > 0)) throw std::invalid_argument("SFT learning rate must be positive");
  Adam adam({.learning_rate = options.learning_rate});
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<SftExample> batch;
  const std::size_t per_epoch = (examples.size() + options.batch_size - 1) / options.batch_size;
  const double total_steps = static_cast<double>(per_epoch * options.epochs);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng rng(mix_seed(seed, epoch));
    shuffle(order.begin(), order.end(), rng);
    SftEpoch stats{epoch, 0.0, 0};
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      auto lg = sft_loss_and_grad(policy, batch);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) throw std::runtime_error("SFT loss diverged");
      if (options.linear_decay)
        adam.set_learning_rate(options.learning_rate * (1.0 - static_cast<double>(step) / total_steps));
      ++step;
      adam.descend(policy.parameters(), lg.grad);
      stats.mean_loss += lg.loss;
      ++stats.steps;
    }
    stats.mean_loss /= static_cast<double>(stats.steps);
    if (curve) curve->push_back(stats);
  }
  return policy;
}

// ---------------------------------------------------------------------------
// ToyCodec

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

ToyCodec::ToyCodec(std::vector<std::string> task_tokens, std::vector<std::string> reasoning_words,
                   TranscriptGrammar grammar)
    : task_tokens_(std::move(task_tokens)),
      reasoning_words_(std::move(reasoning_words)),
      grammar_(std::move(grammar)) {
  grammar_.validate();
  pieces_ = {"<end>",
             grammar_.think_open,
             grammar_.think_close,
             grammar_.result_open,
             grammar_.result_close,
             grammar_.request_key + " harmful",
             grammar_.request_key + " unharmful",
             "\n" + grammar_.response_key + " harmful",
             "\n" + grammar_.response_key + " unharmful"};
  first_word_ = static_cast<TokenId>(pieces_.size());
  auto add_word = [&](const std::string& w) {
    if (w.empty() || std::any_of(w.begin(), w.end(), is_space) || w.find('<') != std::string::npos)
      throw std::invalid_argument("invalid word token '" + w + "'");
    if (word_ids_.count(w)) return;
    word_ids_[w] = static_cast<TokenId>(pieces_.size());
    pieces_.push_back(w);
  };
  for (std::size_t i = 0; i < task_tokens_.size(); ++i) {
    if (task_index_.count(task_tokens_[i]))
      throw std::invalid_argument("duplicate task token '" + task_tokens_[i] + "'");
    task_index_[task_tokens_[i]] = static_cast<Index>(i);
    add_word(task_tokens_[i]);
  }
  for (const auto& w : reasoning_words_) add_word(w);
}

ToyCodec ToyCodec::for_synthetic(const SyntheticTaskConfig& config, TranscriptGrammar grammar) {
  return ToyCodec(config.vocabulary, SyntheticAnnotator::reasoning_words(), std::move(grammar));
}

Index ToyCodec::feature_count() const {
  const auto t = static_cast<Index>(task_tokens_.size());
  return 2 + 2 * t * t;
}

PolicyShape ToyCodec::shape(Index embed_dim, std::size_t max_len) const {
  // Mode 1 marks samples that carry a response.
  return PolicyShape{vocab_size(), feature_count(), embed_dim, end_token(), max_len, 2};
}

std::vector<TokenId> ToyCodec::scan(std::string_view text, bool strict) const {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    TokenId best = -1;
    std::size_t best_len = 0;
    // Skip the end marker: it never appears in text.
    for (TokenId t = 1; t < first_word_; ++t) {
      const auto& p = pieces_[static_cast<std::size_t>(t)];
      if (p.size() > best_len && text.compare(i, p.size(), p) == 0) {
        best = t;
        best_len = p.size();
      }
    }
    if (best >= 0) {
      out.push_back(best);
      i += best_len;
      continue;
    }
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j]) && (j == i || text[j] != '<')) ++j;
    const std::string word(text.substr(i, j - i));
    auto it = word_ids_.find(word);
    if (it != word_ids_.end()) {
      out.push_back(it->second);
    } else if (strict) {
      throw VocabularyError("out-of-vocabulary word '" + word + "'");
    } else {
      out.push_back(-1);
    }
    i = j;
  }
  return out;
}

std::vector<TokenId> ToyCodec::encode(std::string_view text) const { return scan(text, true); }

std::size_t ToyCodec::count(std::string_view text) const { return scan(text, false).size(); }

TokenCounter ToyCodec::counter() const {
  // The codec is captured by value so the counter outlives temporaries.
  return [codec = *this](std::string_view text) { return codec.count(text); };
}

std::string ToyCodec::decode(std::span<const TokenId> tokens) const {
  std::string out;
  bool prev_word = false;
  for (TokenId t : tokens) {
    if (t == end_token()) break;
    if (t < 0 || t >= vocab_size()) throw VocabularyError("out-of-vocabulary token id " + std::to_string(t));
    const bool word = is_word(t);
    if (word && prev_word) out += ' ';
    out += pieces_[static_cast<std::size_t>(t)];
    prev_word = word;
  }
  return out;
}

std::vector<TokenId> ToyCodec::target_tokens(std::string_view transcript) const {
  auto toks = encode(transcript);
  toks.push_back(end_token());
  return toks;
}

void ToyCodec::bigram_features(const std::string& text, Index offset, PromptFeatures& out) const {
  const auto words = split_words(text);
  const auto t = static_cast<Index>(task_tokens_.size());
  std::vector<Index> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto it = task_index_.find(w);
    if (it == task_index_.end()) throw VocabularyError("out-of-vocabulary prompt token '" + w + "'");
    ids.push_back(it->second);
  }
  for (std::size_t k = 1; k < ids.size(); ++k) out.active.push_back(offset + ids[k - 1] * t + ids[k]);
}

PromptFeatures ToyCodec::featurize(const Sample& s) const {
  PromptFeatures x;
  x.active.push_back(0);
  const auto t = static_cast<Index>(task_tokens_.size());
  if (s.request_text) bigram_features(*s.request_text, 2, x);
  if (s.victim_response) {
    x.active.push_back(1);
    x.mode = 1;
    bigram_features(*s.victim_response, 2 + t * t, x);
  }
  std::sort(x.active.begin(), x.active.end());
  x.active.erase(std::unique(x.active.begin(), x.active.end()), x.active.end());
  return x;
}

// ---------------------------------------------------------------------------
// Checkpoints

using nlohmann::json;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& g = ckpt.codec.grammar();
  const auto& s = ckpt.policy.shape();
  const auto& theta = ckpt.policy.parameters();
  json j;
  j["format"] = "guardrl-policy-v1";
  j["config_fingerprint"] = ckpt.config_fingerprint;
  j["codec"] = {{"task_tokens", ckpt.codec.task_tokens()},
                {"reasoning_words", ckpt.codec.reasoning_words()},
                {"grammar",
                 {{"think_open", g.think_open},
                  {"think_close", g.think_close},
                  {"result_open", g.result_open},
                  {"result_close", g.result_close},
                  {"request_key", g.request_key},
                  {"response_key", g.response_key},
                  {"strict", g.strict}}}};
  j["shape"] = {{"vocab_size", s.vocab_size},   {"feature_count", s.feature_count},
                {"embed_dim", s.embed_dim},     {"end_token", s.end_token},
                {"max_len", s.max_len},         {"modes", s.modes}};
  j["parameters"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "guardrl-policy-v1") throw std::runtime_error("unknown checkpoint format");
    const auto& jg = j.at("codec").at("grammar");
    TranscriptGrammar g;
    g.think_open = jg.at("think_open");
    g.think_close = jg.at("think_close");
    g.result_open = jg.at("result_open");
    g.result_close = jg.at("result_close");
    g.request_key = jg.at("request_key");
    g.response_key = jg.at("response_key");
    g.strict = jg.at("strict");
    ToyCodec codec(j.at("codec").at("task_tokens").get<std::vector<std::string>>(),
                   j.at("codec").at("reasoning_words").get<std::vector<std::string>>(), g);
    const auto& js = j.at("shape");
    PolicyShape shape{js.at("vocab_size"), js.at("feature_count"), js.at("embed_dim"),
                      js.at("end_token"), js.at("max_len"), js.value("modes", Index{1})};
    if (shape.vocab_size != codec.vocab_size() || shape.feature_count != codec.feature_count())
      throw std::runtime_error("checkpoint shape does not match its codec");
    ToyPolicy policy(shape);
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (static_cast<Index>(params.size()) != policy.parameter_count())
      throw std::runtime_error("checkpoint parameter count mismatch");
    policy.parameters() = Eigen::Map<const VectorXd>(params.data(), policy.parameter_count());
    return Checkpoint{std::move(codec), std::move(policy), j.value("config_fingerprint", "")};
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace guardrl
