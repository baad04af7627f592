#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <vector>

#include <json.hpp>

#include "guardrl/policy.hpp"
#include "test_util.hpp"

using namespace guardrl;
using guardrl::testing::check_gradient;
using guardrl::testing::random_policy;
using Eigen::VectorXd;

namespace {

// Three tokens (0 ends), three features, two modes; small enough to enumerate.
PolicyShape tiny_shape() { return PolicyShape{3, 3, 2, 0, 3, 2}; }

// Scalar-loop forward pass straight from the model definition.
double oracle_logprob(const ToyPolicy& p, const PromptFeatures& x, const std::vector<TokenId>& toks,
                      double temperature = 1.0, std::vector<std::vector<double>>* dists = nullptr) {
  const auto& s = p.shape();
  const auto B = p.bigram();
  const auto E = p.embedding();
  std::vector<double> h(static_cast<std::size_t>(s.embed_dim), 0.0);
  for (auto f : x.active)
    for (Eigen::Index k = 0; k < s.embed_dim; ++k) h[static_cast<std::size_t>(k)] += E(k, f);
  double total = 0.0;
  TokenId prev = s.end_token;
  for (TokenId t : toks) {
    const auto Q = p.conditioning(prev);
    std::vector<double> z(static_cast<std::size_t>(s.vocab_size));
    for (Eigen::Index a = 0; a < s.vocab_size; ++a) {
      double v = B(a, prev + s.vocab_size * x.mode);
      for (Eigen::Index k = 0; k < s.embed_dim; ++k) v += Q(a, k) * h[static_cast<std::size_t>(k)];
      z[static_cast<std::size_t>(a)] = v / temperature;
    }
    double norm = 0.0;
    for (double v : z) norm += std::exp(v);
    if (dists) {
      std::vector<double> d;
      for (double v : z) d.push_back(std::exp(v) / norm);
      dists->push_back(d);
    }
    total += z[static_cast<std::size_t>(t)] - std::log(norm);
    prev = t;
  }
  return total;
}

// Every terminal trajectory of the tiny policy.
std::vector<std::vector<TokenId>> enumerate_trajectories(std::size_t max_len) {
  std::vector<std::vector<TokenId>> out;
  std::vector<std::vector<TokenId>> open{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<TokenId>> next;
    for (const auto& prefix : open) {
      for (TokenId t = 0; t < 3; ++t) {
        auto seq = prefix;
        seq.push_back(t);
        if (t == 0 || len == max_len) out.push_back(seq);
        else next.push_back(seq);
      }
    }
    open = std::move(next);
  }
  return out;
}

const PromptFeatures kPrompt{{0, 2}, 1};

}  // namespace

TEST(ToyPolicy, LayoutAndZeroInitIsUniform) {
  ToyPolicy p(tiny_shape());
  EXPECT_EQ(p.parameter_count(), 3 * 3 * 2 + 3 * 3 * 2 + 2 * 3);
  Rng rng(1);
  p.init_embedding(rng, 0.5);
  const VectorXd probs = next_token_probs(p, 0, kPrompt);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(probs(i), 1.0 / 3, 1e-15);
  EXPECT_GT(p.embedding().norm(), 0.0);
  EXPECT_EQ(p.bigram().norm(), 0.0);
}

TEST(ToyPolicy, RejectsBadShapesAndInputs) {
  EXPECT_THROW(ToyPolicy(PolicyShape{0, 1, 1, 0, 4, 1}), std::invalid_argument);
  EXPECT_THROW(ToyPolicy(PolicyShape{3, 1, 1, 3, 4, 1}), std::invalid_argument);
  EXPECT_THROW(ToyPolicy(PolicyShape{3, 1, 1, 0, 4, 0}), std::invalid_argument);
  const auto p = random_policy(tiny_shape(), 3);
  const std::vector<TokenId> bad{1, 7};
  EXPECT_THROW(logprob(p, kPrompt, bad), VocabularyError);
  EXPECT_THROW(p.embed(PromptFeatures{{5}, 0}), VocabularyError);
  EXPECT_THROW(p.embed(PromptFeatures{{0}, 2}), VocabularyError);
}

TEST(ToyPolicy, LogSoftmaxStable) {
  VectorXd z(3);
  z << 1000.0, 1000.0, -1000.0;
  const VectorXd lp = log_softmax(z);
  EXPECT_NEAR(lp(0), std::log(0.5), 1e-12);
  EXPECT_TRUE(lp.allFinite());
}

TEST(ToyPolicy, LogprobMatchesScalarOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_policy(tiny_shape(), seed);
    for (const auto& seq : enumerate_trajectories(3)) {
      EXPECT_NEAR(logprob(p, kPrompt, seq), oracle_logprob(p, kPrompt, seq), 1e-12);
    }
  }
}

TEST(ToyPolicy, TrajectoryProbabilitiesSumToOne) {
  const auto p = random_policy(tiny_shape(), 11);
  const auto all = enumerate_trajectories(3);
  EXPECT_EQ(all.size(), 15u);
  double total = 0.0;
  for (const auto& seq : all) total += std::exp(logprob(p, kPrompt, seq));
  EXPECT_NEAR(total, 1.0, 1e-12);
}

// Exact expected-reward gradient by enumeration vs the score-function form
// built from accumulate_logprob_grad, and vs central differences.
TEST(ToyPolicy, ScoreFunctionGradientByEnumeration) {
  const auto p = random_policy(tiny_shape(), 12);
  const auto all = enumerate_trajectories(3);
  auto reward = [](const std::vector<TokenId>& seq) { return 0.3 * seq.size() + (seq.front() == 2 ? 1.0 : 0.0); };

  VectorXd score_sum = VectorXd::Zero(p.parameter_count());
  VectorXd grad = VectorXd::Zero(p.parameter_count());
  for (const auto& seq : all) {
    const double prob = std::exp(logprob(p, kPrompt, seq));
    accumulate_logprob_grad(p, kPrompt, seq, prob, score_sum);
    accumulate_logprob_grad(p, kPrompt, seq, prob * reward(seq), grad);
  }
  EXPECT_LT(score_sum.cwiseAbs().maxCoeff(), 1e-12);

  auto expected = [&](const VectorXd& theta) {
    ToyPolicy q = p;
    q.parameters() = theta;
    double e = 0.0;
    for (const auto& seq : all) e += std::exp(logprob(q, kPrompt, seq)) * reward(seq);
    return e;
  };
  const auto check = check_gradient(expected, p.parameters(), grad, 60, 5);
  EXPECT_LE(check.max_rel_error, 1e-6);
}

TEST(ToyPolicy, SamplingFrequenciesWithinThreeSigma) {
  const auto p = random_policy(tiny_shape(), 21, 0.9);
  const std::size_t n = 30000;
  std::map<std::vector<TokenId>, std::size_t> counts;
  Rng rng(99);
  for (std::size_t i = 0; i < n; ++i) {
    const auto traj = sample(p, kPrompt, 1.0, rng);
    EXPECT_EQ(traj.logprob, logprob(p, kPrompt, traj.tokens));
    ++counts[traj.tokens];
  }
  for (const auto& seq : enumerate_trajectories(3)) {
    const double prob = std::exp(oracle_logprob(p, kPrompt, seq));
    const double expected = prob * n;
    const double sigma = std::sqrt(n * prob * (1 - prob));
    EXPECT_LE(std::abs(static_cast<double>(counts[seq]) - expected), 3 * sigma + 1e-9);
  }
}

TEST(ToyPolicy, TemperatureSharpensSamplingOnly) {
  const auto p = random_policy(tiny_shape(), 22, 0.9);
  const double T = 0.5;
  const std::size_t n = 30000;
  std::map<TokenId, std::size_t> first;
  Rng rng(7);
  for (std::size_t i = 0; i < n; ++i) {
    const auto traj = sample(p, kPrompt, T, rng);
    EXPECT_EQ(traj.logprob, logprob(p, kPrompt, traj.tokens));
    ++first[traj.tokens.front()];
  }
  std::vector<std::vector<double>> dists;
  oracle_logprob(p, kPrompt, {0}, T, &dists);
  for (TokenId t = 0; t < 3; ++t) {
    const double prob = dists[0][static_cast<std::size_t>(t)];
    EXPECT_LE(std::abs(first[t] - prob * n), 3 * std::sqrt(n * prob * (1 - prob)) + 1e-9);
  }
  Rng r2(1);
  EXPECT_THROW(sample(p, kPrompt, 0.0, r2), std::invalid_argument);
}

TEST(ToyPolicy, SampleStopsAtMaxLen) {
  auto shape = tiny_shape();
  shape.max_len = 5;
  ToyPolicy p(shape);
  p.bigram(p.parameters()).row(0).setConstant(-50.0);  // end token nearly impossible
  Rng rng(3);
  const auto traj = sample(p, kPrompt, 1.0, rng);
  EXPECT_EQ(traj.tokens.size(), 5u);
  EXPECT_NE(traj.tokens.back(), 0);
}

TEST(ToyPolicy, SamplingDeterministicInSeed) {
  const auto p = random_policy(tiny_shape(), 4);
  Rng a(17), b(17);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample(p, kPrompt, 1.0, a).tokens, sample(p, kPrompt, 1.0, b).tokens);
}

TEST(SftLoss, GradientMatchesFiniteDifferences) {
  const PolicyShape shape{6, 7, 3, 0, 12, 2};
  const auto p = random_policy(shape, 31, 0.5);
  std::vector<SftExample> batch;
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    SftExample ex;
    ex.prompt.mode = i % 2;
    ex.prompt.active = {0};
    for (Eigen::Index f = 1; f < shape.feature_count; ++f)
      if (rng.bernoulli(0.4)) ex.prompt.active.push_back(f);
    const auto len = 2 + rng.below(6);
    for (std::uint64_t k = 0; k < len; ++k) ex.target.push_back(1 + static_cast<TokenId>(rng.below(5)));
    ex.target.push_back(0);
    batch.push_back(ex);
  }
  const auto lg = sft_loss_and_grad(p, batch);
  auto loss = [&](const VectorXd& theta) {
    ToyPolicy q = p;
    q.parameters() = theta;
    return sft_loss_and_grad(q, batch).loss;
  };
  const auto check = check_gradient(loss, p.parameters(), lg.grad, 200, 8);
  EXPECT_GE(check.coordinates, 50u);
  EXPECT_LE(check.max_rel_error, 1e-4);
  EXPECT_THROW(sft_loss_and_grad(p, std::span<const SftExample>{}), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam({.learning_rate = 0.1});
  VectorXd theta = VectorXd::Zero(3);
  VectorXd g(3);
  g << 2.0, -0.5, 0.0;
  adam.descend(theta, g);
  EXPECT_NEAR(theta(0), -0.1, 1e-8);
  EXPECT_NEAR(theta(1), 0.1, 1e-8);
  EXPECT_EQ(theta(2), 0.0);
  adam.ascend(theta, g);
  EXPECT_EQ(adam.steps(), 2);
}

namespace {

std::vector<SftExample> counting_task() {
  // Mode 0 prompts want "1 2 end", mode 1 prompts want "2 1 1 end".
  std::vector<SftExample> out;
  for (int i = 0; i < 16; ++i) {
    SftExample ex;
    ex.prompt = PromptFeatures{{0}, i % 2};
    ex.target = i % 2 == 0 ? std::vector<TokenId>{1, 2, 0} : std::vector<TokenId>{2, 1, 1, 0};
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST(TrainSft, ReducesLossAndIsDeterministic) {
  const PolicyShape shape{3, 1, 1, 0, 8, 2};
  const ToyPolicy init(shape);
  const auto data = counting_task();
  const double before = sft_loss_and_grad(init, data).loss;
  std::vector<SftEpoch> curve;
  const SftOptions opts{.epochs = 20, .batch_size = 4, .learning_rate = 0.1};
  const auto a = train_sft(init, data, opts, 42, &curve);
  const auto b = train_sft(init, data, opts, 42);
  EXPECT_EQ(a.parameters(), b.parameters());
  ASSERT_EQ(curve.size(), 20u);
  EXPECT_EQ(curve[0].steps, 4u);
  EXPECT_LT(curve.back().mean_loss, curve.front().mean_loss);
  // Mode 1 follows token 1 with 1 and then with end, so ln 2 is the floor.
  const double loss = sft_loss_and_grad(a, data).loss;
  EXPECT_GT(loss, std::log(2.0) - 1e-9);
  EXPECT_LT(loss, std::log(2.0) + 0.15);
  EXPECT_LT(loss, 0.25 * before);
}

TEST(TrainSft, ZeroEpochsReturnsInit) {
  const auto init = random_policy(PolicyShape{3, 1, 1, 0, 8, 2}, 9);
  const auto out = train_sft(init, counting_task(), SftOptions{.epochs = 0}, 1);
  EXPECT_EQ(out.parameters(), init.parameters());
}

TEST(TrainSft, RejectsBadOptions) {
  const ToyPolicy init(PolicyShape{3, 1, 1, 0, 8, 2});
  EXPECT_THROW(train_sft(init, {}, SftOptions{}, 1), std::invalid_argument);
  EXPECT_THROW(train_sft(init, counting_task(), SftOptions{.batch_size = 0}, 1), std::invalid_argument);
  EXPECT_THROW(train_sft(init, counting_task(), SftOptions{.learning_rate = 0}, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Codec and checkpoints

namespace {

ToyCodec synthetic_codec() { return ToyCodec::for_synthetic(SyntheticTaskConfig{}); }

}  // namespace

TEST(ToyCodec, EncodeDecodeRoundTrip) {
  const auto codec = synthetic_codec();
  const std::string text =
      "<think>inspect request tokens a c found banned pattern</think><result>Request: harmful\n"
      "Response: unharmful</result>";
  const auto toks = codec.encode(text);
  EXPECT_EQ(codec.decode(toks), text);
  EXPECT_EQ(codec.count(text), toks.size());
  const auto target = codec.target_tokens(text);
  EXPECT_EQ(target.back(), codec.end_token());
  EXPECT_EQ(codec.decode(target), text);
}

TEST(ToyCodec, UnknownWords) {
  const auto codec = synthetic_codec();
  EXPECT_THROW(codec.encode("<think>zebra</think>"), VocabularyError);
  EXPECT_EQ(codec.count("<think>zebra crossing</think>"), 4u);
  const std::vector<TokenId> bad{999};
  EXPECT_THROW(codec.decode(bad), VocabularyError);
  EXPECT_THROW(ToyCodec({"a", "a"}, {}), std::invalid_argument);
  EXPECT_THROW(ToyCodec({"a b"}, {}), std::invalid_argument);
}

TEST(ToyCodec, DecodeStopsAtEnd) {
  const auto codec = synthetic_codec();
  const auto toks = codec.encode("<think>inspect</think>");
  std::vector<TokenId> with_end = toks;
  with_end.push_back(codec.end_token());
  with_end.push_back(toks[1]);
  EXPECT_EQ(codec.decode(with_end), "<think>inspect</think>");
}

TEST(ToyCodec, FeaturizeBigramsAndMode) {
  const auto codec = synthetic_codec();
  EXPECT_EQ(codec.feature_count(), 2 + 2 * 64);
  using guardrl::testing::text_sample;
  const auto prompt_only = codec.featurize(text_sample("p", "a b a b", SafetyLabel::unharmful));
  EXPECT_EQ(prompt_only.mode, 0);
  // bias, (a,b) and (b,a)
  EXPECT_EQ(prompt_only.active, (std::vector<Eigen::Index>{0, 2 + 1, 2 + 8}));
  const auto with_resp =
      codec.featurize(text_sample("r", "a b", SafetyLabel::unharmful, "h h", SafetyLabel::harmful));
  EXPECT_EQ(with_resp.mode, 1);
  EXPECT_EQ(with_resp.active, (std::vector<Eigen::Index>{0, 1, 3, 2 + 64 + 63}));
  EXPECT_THROW(codec.featurize(text_sample("x", "a z", SafetyLabel::unharmful)), VocabularyError);
  const auto shape = codec.shape(2, 64);
  EXPECT_EQ(shape.modes, 2);
  EXPECT_EQ(shape.vocab_size, codec.vocab_size());
}

TEST(Checkpoint, RoundTripGivesIdenticalLoss) {
  guardrl::testing::TempDir dir("ckpt");
  const auto codec = synthetic_codec();
  const auto policy = random_policy(codec.shape(2, 32), 77, 0.3);
  const auto path = dir.path() / "nested" / "policy.json";
  save_checkpoint({codec, policy, R"({"seed":7})"}, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.policy.shape(), policy.shape());
  EXPECT_EQ(back.policy.parameters(), policy.parameters());
  EXPECT_EQ(back.config_fingerprint, R"({"seed":7})");
  EXPECT_EQ(back.codec.vocab_size(), codec.vocab_size());

  const std::string text = "<think>inspect request</think><result>Request: harmful</result>";
  const std::vector<SftExample> batch{{PromptFeatures{{0, 5}, 0}, codec.target_tokens(text)}};
  EXPECT_EQ(sft_loss_and_grad(back.policy, batch).loss, sft_loss_and_grad(policy, batch).loss);
}

TEST(Checkpoint, MissingModesDefaultsToOne) {
  guardrl::testing::TempDir dir("ckpt_modes");
  const auto codec = synthetic_codec();
  auto shape = codec.shape(1, 16);
  shape.modes = 1;
  const auto path = dir.path() / "p.json";
  save_checkpoint({codec, ToyPolicy(shape), ""}, path);
  nlohmann::json j;
  {
    std::ifstream in(path);
    j = nlohmann::json::parse(in);
  }
  j["shape"].erase("modes");
  {
    std::ofstream out(path);
    out << j.dump();
  }
  EXPECT_EQ(load_checkpoint(path).policy.shape().modes, 1);
}

TEST(Checkpoint, MalformedFilesRejected) {
  guardrl::testing::TempDir dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.json"), std::runtime_error);
  const auto path = dir.path() / "bad.json";
  {
    std::ofstream out(path);
    out << R"({"format":"other"})";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  const auto codec = synthetic_codec();
  save_checkpoint({codec, ToyPolicy(codec.shape(1, 8)), ""}, path);
  nlohmann::json j;
  {
    std::ifstream in(path);
    j = nlohmann::json::parse(in);
  }
  j["parameters"].erase(0);
  {
    std::ofstream out(path);
    out << j.dump();
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
