#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "guardrl/backend.hpp"
#include "guardrl/corpus.hpp"

namespace guardrl {

enum class MiningDecision { kept, all_correct, all_incorrect };

std::string_view to_string(MiningDecision d);

struct MiningEntry {
  std::string id;
  std::size_t num_rollouts = 0;
  std::size_t num_correct = 0;
  MiningDecision decision = MiningDecision::kept;
};

struct MiningReport {
  std::vector<MiningEntry> entries;
  std::size_t kept = 0;
  std::size_t all_correct = 0;
  std::size_t all_incorrect = 0;

  std::string to_json_lines() const;
};

/// kept iff 0 < num_correct < num_rollouts.
MiningDecision classify_rollouts(std::size_t num_correct, std::size_t num_rollouts);

struct MiningResult {
  DatasetManifest kept;
  MiningReport report;
};

/// Draws k transcripts per sample; a rollout is correct when it is format
/// compliant and fully accurate. Rollout j of sample s uses the seed
/// mix(seed, hash(id), j), so results do not depend on scheduling.
MiningResult mine_hard_samples(const TranscriptSource& source, const DatasetManifest& dataset,
                               std::size_t k, std::uint64_t seed, std::size_t parallelism = 1);

}  // namespace guardrl
