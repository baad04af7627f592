#include "guardrl/grpo.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "guardrl/format.hpp"
#include "guardrl/random.hpp"

namespace guardrl {

using Eigen::VectorXd;

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
  if (!(kl_beta >= 0.0)) throw std::invalid_argument("kl_beta must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (rollout_batch == 0 || actor_batch == 0) throw std::invalid_argument("batch sizes must be > 0");
  if (!(std_floor > 0.0)) throw std::invalid_argument("std_floor must be > 0");
  if (inner_epochs == 0) throw std::invalid_argument("inner_epochs must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
}

namespace {

void check_shared_vocab(const ToyPolicy& a, const ToyPolicy& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("policy and reference shapes differ");
}

}  // namespace

double accumulate_kl_grad(const ToyPolicy& policy, const ToyPolicy& ref, const Trajectory& traj,
                          double weight, VectorXd& grad) {
  check_shared_vocab(policy, ref);
  if (traj.tokens.empty()) return 0.0;
  const bool want_grad = weight != 0.0;
  if (want_grad && grad.size() != policy.parameter_count())
    grad = VectorXd::Zero(policy.parameter_count());

  const VectorXd h = policy.embed(traj.prompt);
  const VectorXd h_ref = ref.embed(traj.prompt);
  VectorXd dh = VectorXd::Zero(h.size());
  const double scale = 1.0 / static_cast<double>(traj.tokens.size());
  TokenId prev = policy.shape().end_token;
  double total = 0.0;
  for (TokenId t : traj.tokens) {
    policy.check_token(t);
    const VectorXd logp = log_softmax(policy.logits(prev, traj.prompt.mode, h));
    const VectorXd logq = log_softmax(ref.logits(prev, traj.prompt.mode, h_ref));
    const VectorXd p = logp.array().exp();
    const double kl = (p.array() * (logp - logq).array()).sum();
    total += scale * kl;
    if (want_grad) {
      // d KL / dz_j = p_j (log p_j - log q_j - KL)
      const VectorXd g = weight * scale * (p.array() * ((logp - logq).array() - kl)).matrix();
      policy.bigram(grad).col(policy.state(prev, traj.prompt.mode)) += g;
      policy.conditioning(grad, prev).noalias() += g * h.transpose();
      dh.noalias() += policy.conditioning(prev).transpose() * g;
    }
    prev = t;
  }
  if (want_grad) {
    auto d_embed = policy.embedding(grad);
    for (auto f : traj.prompt.active) d_embed.col(f) += dh;
  }
  return total;
}

double kl_penalty(const ToyPolicy& policy, const ToyPolicy& ref, const Trajectory& trajectory) {
  VectorXd unused;
  return accumulate_kl_grad(policy, ref, trajectory, 0.0, unused);
}

RolloutGroup roll_out_group(const ToyPolicy& old_policy, const ToyCodec& codec, const Sample& input,
                            const GrpoConfig& config, const RewardParams<double>& reward,
                            std::uint64_t seed) {
  RolloutGroup group;
  group.sample_id = input.id;
  group.truth = input.truth;
  const PromptFeatures x = codec.featurize(input);
  const TokenCounter counter = [&codec](std::string_view s) { return codec.count(s); };
  const auto mode = mode_for(input.truth);

  std::vector<double> rewards;
  rewards.reserve(config.group_size);
  for (std::size_t j = 0; j < config.group_size; ++j) {
    Rng rng(mix_seed(seed, j));
    GroupMember m;
    m.trajectory = sample(old_policy, x, config.temperature, rng);
    const auto parsed = parse_output(codec.decode(m.trajectory.tokens), codec.grammar(), mode, counter);
    m.reward = total_reward(parsed, input.truth, reward);
    m.length = parsed.token_count;
    m.old_logprob = m.trajectory.logprob;
    rewards.push_back(m.reward.total);
    group.members.push_back(std::move(m));
  }
  const auto adv = compute_advantages(rewards, config.std_floor);
  for (std::size_t j = 0; j < adv.size(); ++j) group.members[j].advantage = adv[j];
  return group;
}

SurrogateValue surrogate_objective(const ToyPolicy& policy, const ToyPolicy* ref,
                                   std::span<const RolloutGroup> batch, const GrpoConfig& config) {
  if (batch.empty()) throw std::invalid_argument("empty GRPO batch");
  const bool use_kl = config.kl_beta > 0.0;
  if (use_kl && !ref) throw std::invalid_argument("kl_beta > 0 needs a reference policy");

  SurrogateValue out;
  out.grad = VectorXd::Zero(policy.parameter_count());
  std::size_t members = 0;
  std::size_t clipped = 0;
  const double lo = 1.0 - config.clip_epsilon;
  const double hi = 1.0 + config.clip_epsilon;
  for (const auto& group : batch) {
    if (group.members.empty()) throw std::invalid_argument("rollout group has no members");
    const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(group.members.size()));
    for (const auto& m : group.members) {
      ++members;
      const auto& traj = m.trajectory;
      const double lp = logprob(policy, traj.prompt, traj.tokens);
      const double k = importance_ratio(lp, m.old_logprob);
      const double a = m.advantage;
      const double unclipped = k * a;
      const double clipped_term = std::clamp(k, lo, hi) * a;
      out.objective += w * std::min(unclipped, clipped_term);
      if (clipped_term < unclipped) {
        // The clipped branch is constant in theta.
        ++clipped;
      } else if (a != 0.0) {
        // d(K A) = A K d log pi
        accumulate_logprob_grad(policy, traj.prompt, traj.tokens, w * a * k, out.grad);
      }
      if (use_kl) {
        const double kl = accumulate_kl_grad(policy, *ref, traj, -w * config.kl_beta, out.grad);
        out.objective -= w * config.kl_beta * kl;
        out.kl += w * kl;
      }
    }
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(members);
  return out;
}

StepMetrics grpo_step(ToyPolicy& policy, const ToyPolicy* ref, std::span<const RolloutGroup> batch,
                      const GrpoConfig& config, Adam& optimizer) {
  const auto value = surrogate_objective(policy, ref, batch, config);
  if (!std::isfinite(value.objective) || !value.grad.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite GRPO objective (objective=" << value.objective
        << ", finite grad=" << value.grad.allFinite() << ", groups=" << batch.size() << ")";
    throw std::runtime_error(msg.str());
  }

  StepMetrics metrics;
  metrics.objective = value.objective;
  metrics.clip_fraction = value.clip_fraction;
  metrics.kl = value.kl;
  std::size_t n = 0;
  for (const auto& g : batch) {
    for (const auto& m : g.members) {
      ++n;
      metrics.mean_reward += m.reward.total;
      metrics.mean_racc += m.reward.fmt ? m.reward.r_acc : 0.0;
      metrics.mean_abs_advantage += std::abs(m.advantage);
      metrics.mean_length += static_cast<double>(m.length);
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  metrics.mean_reward *= inv;
  metrics.mean_racc *= inv;
  metrics.mean_abs_advantage *= inv;
  metrics.mean_length *= inv;

  if (!value.grad.isZero(0.0)) optimizer.ascend(policy.parameters(), value.grad);
  return metrics;
}

std::string IterationLog::to_json_line(bool with_wall_time) const {
  nlohmann::json j;
  j["iter"] = iter;
  j["mean_reward"] = mean_reward;
  j["mean_racc"] = mean_racc;
  j["clip_frac"] = clip_frac;
  j["kl"] = kl;
  j["mean_len"] = mean_len;
  j["num_rollouts"] = rewards.size();
  if (with_wall_time) j["wall_ms"] = wall_ms;
  return j.dump();
}

TrainResult train_grpo(ToyPolicy policy, const ToyCodec& codec, const DatasetManifest& dataset,
                       const GrpoConfig& config, const RewardParams<double>& reward, std::uint64_t seed,
                       const std::function<void(const IterationLog&)>& on_iteration) {
  config.validate();
  reward.validate();
  if (dataset.empty()) throw std::invalid_argument("GRPO dataset is empty");

  const bool use_kl = config.kl_beta > 0.0;
  const ToyPolicy reference = policy;
  Adam optimizer({config.learning_rate});
  Rng order_rng(mix_seed(seed, hash_name("grpo-order")));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  guardrl::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  const std::size_t per_iter = std::min(config.rollout_batch, dataset.size());
  TrainResult result{policy, {}};
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const auto start = std::chrono::steady_clock::now();
    const ToyPolicy old_policy = result.policy;

    std::vector<RolloutGroup> groups;
    groups.reserve(per_iter);
    for (std::size_t k = 0; k < per_iter; ++k) {
      if (cursor == order.size()) {
        guardrl::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const auto& sample = dataset[order[cursor++]].sample;
      groups.push_back(roll_out_group(old_policy, codec, sample, config, reward,
                                      mix_seed(seed, iter, k)));
    }
    if (use_kl) {
      for (auto& g : groups)
        for (auto& m : g.members)
          m.ref_logprob = logprob(reference, m.trajectory.prompt, m.trajectory.tokens);
    }

    IterationLog entry;
    entry.iter = iter;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
      for (std::size_t b = 0; b < groups.size(); b += config.actor_batch) {
        const auto len = std::min(config.actor_batch, groups.size() - b);
        const auto m = grpo_step(result.policy, use_kl ? &reference : nullptr,
                                 std::span<const RolloutGroup>(groups).subspan(b, len), config, optimizer);
        entry.clip_frac += m.clip_fraction;
        entry.kl += m.kl;
        ++steps;
      }
    }
    entry.clip_frac /= static_cast<double>(steps);
    entry.kl /= static_cast<double>(steps);

    std::size_t n = 0;
    for (const auto& g : groups) {
      for (const auto& m : g.members) {
        ++n;
        entry.rewards.push_back(m.reward.total);
        entry.mean_reward += m.reward.total;
        entry.mean_racc += m.reward.fmt ? m.reward.r_acc : 0.0;
        entry.mean_len += static_cast<double>(m.length);
      }
    }
    entry.mean_reward /= static_cast<double>(n);
    entry.mean_racc /= static_cast<double>(n);
    entry.mean_len /= static_cast<double>(n);
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_iteration) on_iteration(entry);
    result.log.push_back(std::move(entry));
  }
  return result;
}

}  // namespace guardrl
