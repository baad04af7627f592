#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace guardrl {

enum class SafetyLabel { harmful, unharmful };

inline std::string_view to_string(SafetyLabel label) {
  return label == SafetyLabel::harmful ? "harmful" : "unharmful";
}

/// Case-insensitive; nullopt for anything outside the closed label set.
std::optional<SafetyLabel> parse_label(std::string_view text);

struct GroundTruth {
  SafetyLabel request_label = SafetyLabel::unharmful;
  std::optional<SafetyLabel> response_label;

  bool operator==(const GroundTruth&) const = default;
};

/// A model's prediction; either field may be missing.
struct Verdict {
  std::optional<SafetyLabel> request;
  std::optional<SafetyLabel> response;

  bool operator==(const Verdict&) const = default;
};

inline Verdict to_verdict(const GroundTruth& truth) {
  return Verdict{truth.request_label, truth.response_label};
}

}  // namespace guardrl
