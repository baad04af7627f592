#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guardrl/corpus.hpp"
#include "guardrl/policy.hpp"
#include "guardrl/reward.hpp"

namespace guardrl {

struct GrpoConfig {
  std::size_t group_size = 16;
  double clip_epsilon = 0.2;
  double kl_beta = 0.0;
  double learning_rate = 2e-6;
  /// Inputs rolled out per iteration.
  std::size_t rollout_batch = 256;
  /// Inputs per gradient update.
  std::size_t actor_batch = 128;
  double std_floor = 1e-6;
  std::size_t iterations = 200;
  /// Passes over each rollout batch.
  std::size_t inner_epochs = 1;
  double temperature = 1.0;

  void validate() const;
};

/// Group-normalized advantages (r - mean) / population std.
/// Groups whose std is at or below the floor get all zeros.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> compute_advantages(
    const Eigen::ArrayBase<Derived>& rewards, typename Derived::Scalar std_floor) {
  using Scalar = typename Derived::Scalar;
  using Result = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  if (rewards.size() < 2) throw std::invalid_argument("advantages need at least 2 rewards");
  const Scalar mean = rewards.mean();
  const Result centered = rewards.derived().template cast<Scalar>() - mean;
  using std::sqrt;
  const Scalar std_dev = sqrt(centered.square().mean());
  if (std_dev <= std_floor) return Result::Zero(rewards.size());
  return centered / std_dev;
}

inline std::vector<double> compute_advantages(const std::vector<double>& rewards, double std_floor) {
  const auto a = compute_advantages(
      Eigen::Map<const Eigen::ArrayXd>(rewards.data(), static_cast<Eigen::Index>(rewards.size())),
      std_floor);
  return {a.data(), a.data() + a.size()};
}

template <typename Scalar>
Scalar importance_ratio(Scalar new_logprob, Scalar old_logprob) {
  using std::exp;
  using std::isfinite;
  if (!isfinite(new_logprob) || !isfinite(old_logprob))
    throw std::invalid_argument("importance ratio needs finite log-probabilities");
  return exp(new_logprob - old_logprob);
}

template <typename Scalar>
Scalar clipped_surrogate(Scalar ratio, Scalar advantage, Scalar epsilon) {
  const Scalar clipped = std::clamp(ratio, Scalar(1) - epsilon, Scalar(1) + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

/// KL(p || q) for two categorical distributions given as probabilities.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar categorical_kl(const Eigen::MatrixBase<DerivedP>& p,
                                         const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  Scalar kl(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > Scalar(0)) kl += p(i) * (std::log(p(i)) - std::log(q(i)));
  }
  return kl;
}

/// Mean over the trajectory's visited states of KL(policy || ref).
double kl_penalty(const ToyPolicy& policy, const ToyPolicy& ref, const Trajectory& trajectory);

/// grad += weight * d kl_penalty / d theta.
double accumulate_kl_grad(const ToyPolicy& policy, const ToyPolicy& ref, const Trajectory& trajectory,
                          double weight, Eigen::VectorXd& grad);

struct GroupMember {
  Trajectory trajectory;
  RewardBreakdown<double> reward;
  std::size_t length = 0;
  double old_logprob = 0.0;
  double ref_logprob = 0.0;
  double advantage = 0.0;
};

struct RolloutGroup {
  std::string sample_id;
  GroundTruth truth;
  std::vector<GroupMember> members;
};

/// Samples G transcripts from `old_policy`, scores them with the reward, and
/// fills old log-probabilities and advantages.
RolloutGroup roll_out_group(const ToyPolicy& old_policy, const ToyCodec& codec, const Sample& input,
                            const GrpoConfig& config, const RewardParams<double>& reward,
                            std::uint64_t seed);

struct SurrogateValue {
  double objective = 0.0;
  Eigen::VectorXd grad;
  double clip_fraction = 0.0;
  double kl = 0.0;
};

/// Batch objective mean_groups[(1/G) sum_i min(K_i A_i, clip(K_i) A_i) - beta KL_i]
/// and its gradient. `ref` may be null when beta is 0.
SurrogateValue surrogate_objective(const ToyPolicy& policy, const ToyPolicy* ref,
                                   std::span<const RolloutGroup> batch, const GrpoConfig& config);

struct StepMetrics {
  double objective = 0.0;
  double mean_reward = 0.0;
  double mean_racc = 0.0;
  double mean_abs_advantage = 0.0;
  double clip_fraction = 0.0;
  double kl = 0.0;
  double mean_length = 0.0;
};

/// One ascent step on the surrogate. Throws std::runtime_error on a
/// non-finite objective or gradient, leaving the policy untouched.
StepMetrics grpo_step(ToyPolicy& policy, const ToyPolicy* ref, std::span<const RolloutGroup> batch,
                      const GrpoConfig& config, Adam& optimizer);

struct IterationLog {
  std::size_t iter = 0;
  double mean_reward = 0.0;
  double mean_racc = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
  double mean_len = 0.0;
  double wall_ms = 0.0;
  /// Every rollout's total reward, in group order.
  std::vector<double> rewards;

  /// One JSON object per line; wall_ms omitted when requested.
  std::string to_json_line(bool with_wall_time = true) const;
};

struct TrainResult {
  ToyPolicy policy;
  std::vector<IterationLog> log;
};

/// snapshot -> roll out -> reward -> advantages -> step, for config.iterations
/// iterations. The reference policy for the KL term is the input policy.
TrainResult train_grpo(ToyPolicy policy, const ToyCodec& codec, const DatasetManifest& dataset,
                       const GrpoConfig& config, const RewardParams<double>& reward, std::uint64_t seed,
                       const std::function<void(const IterationLog&)>& on_iteration = {});

}  // namespace guardrl
