#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "guardrl/format.hpp"
#include "guardrl/labels.hpp"

namespace guardrl {

template <typename Scalar = double>
struct RewardParams {
  /// Maximum exploration bonus.
  Scalar alpha = Scalar(0.2);
  /// Length, in tokens, at which the bonus approaches saturation.
  Scalar sigma = Scalar(300);

  void validate() const {
    if (!(alpha >= Scalar(0))) throw std::invalid_argument("reward alpha must be >= 0");
    if (!(sigma > Scalar(0))) throw std::invalid_argument("reward sigma must be > 0");
  }
};

template <typename Scalar = double>
struct RewardBreakdown {
  int fmt = 0;
  Scalar r_acc = Scalar(0);
  Scalar r_exp = Scalar(0);
  Scalar total = Scalar(0);
};

/// Half credit per sub-task. A prompt-only truth collapses to a single
/// full-weight request indicator, so the value set stays {0, 0.5, 1}.
/// A missing predicted label scores as wrong on that label.
template <typename Scalar = double>
Scalar accuracy_reward(const Verdict& pred, const GroundTruth& truth) {
  const Scalar req = (pred.request && *pred.request == truth.request_label) ? Scalar(1) : Scalar(0);
  if (!truth.response_label) return req;
  const Scalar res =
      (pred.response && *pred.response == *truth.response_label) ? Scalar(1) : Scalar(0);
  return Scalar(0.5) * req + Scalar(0.5) * res;
}

/// Strict variant: throws when the prediction lacks a label the truth requires.
template <typename Scalar = double>
Scalar accuracy_reward_checked(const Verdict& pred, const GroundTruth& truth) {
  if (!pred.request) throw std::invalid_argument("prediction lacks a request label");
  if (truth.response_label && !pred.response)
    throw std::invalid_argument("prediction lacks a response label");
  return accuracy_reward<Scalar>(pred, truth);
}

/// Length bonus paid only while the answer is imperfect.
template <typename Scalar = double>
Scalar exploration_reward(Scalar r_acc, std::size_t token_count, const RewardParams<Scalar>& p = {}) {
  if (r_acc >= Scalar(1)) return Scalar(0);
  using std::tanh;
  return p.alpha * tanh(static_cast<Scalar>(token_count) / p.sigma);
}

/// Format compliance gates everything.
template <typename Scalar = double>
RewardBreakdown<Scalar> total_reward(const ParsedOutput& parsed, const GroundTruth& truth,
                                     const RewardParams<Scalar>& p = {}) {
  RewardBreakdown<Scalar> out;
  if (!parsed.compliant) return out;
  out.fmt = 1;
  out.r_acc = accuracy_reward<Scalar>(parsed.verdict, truth);
  out.r_exp = exploration_reward<Scalar>(out.r_acc, parsed.token_count, p);
  out.total = out.r_acc + out.r_exp;
  return out;
}

}  // namespace guardrl
