#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "guardrl/config.hpp"
#include "guardrl/corpus.hpp"
#include "guardrl/eval.hpp"
#include "guardrl/grpo.hpp"
#include "guardrl/mining.hpp"
#include "guardrl/policy.hpp"

namespace guardrl {

/// Stage failure with an actionable message; the CLI maps it to exit code 3.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// mix(root, hash(stage)).
std::uint64_t stage_seed(const RunConfig& cfg, std::string_view stage);

SyntheticTaskConfig synthetic_config(const RunConfig& cfg);
TranscriptGrammar grammar_config(const RunConfig& cfg);
RewardParams<double> reward_config(const RunConfig& cfg);
GrpoConfig grpo_config(const RunConfig& cfg);
SftOptions sft_config(const RunConfig& cfg);
EvalOptions eval_config(const RunConfig& cfg);
EndpointConfig endpoint_config(const RunConfig& cfg);
FilterBounds filter_config(const RunConfig& cfg);

/// Artifact locations under the work directory.
struct RunPaths {
  std::filesystem::path workdir;

  std::filesystem::path train() const { return workdir / "train.jsonl"; }
  std::filesystem::path test() const { return workdir / "test.jsonl"; }
  std::filesystem::path curation_summary() const { return workdir / "curation_summary.json"; }
  std::filesystem::path sft_checkpoint() const { return workdir / "sft_checkpoint.json"; }
  std::filesystem::path sft_log() const { return workdir / "sft_log.jsonl"; }
  std::filesystem::path mined() const { return workdir / "mined.jsonl"; }
  std::filesystem::path mining_report() const { return workdir / "mining_report.jsonl"; }
  std::filesystem::path grpo_checkpoint() const { return workdir / "grpo_checkpoint.json"; }
  std::filesystem::path grpo_log() const { return workdir / "grpo_log.jsonl"; }
  std::filesystem::path eval_report(std::string_view tag) const;
  std::filesystem::path eval_results(std::string_view tag) const;
  std::filesystem::path eval_probe(std::string_view tag) const;
};

RunPaths run_paths(const RunConfig& cfg);

struct CurateOutcome {
  std::size_t input = 0;
  std::size_t annotated = 0;
  std::size_t annotation_failures = 0;
  std::size_t kept = 0;
  std::size_t rejected = 0;
  std::size_t train = 0;
  std::size_t test = 0;
};

struct SftOutcome {
  std::size_t examples = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<SftEpoch> curve;
};

struct GrpoOutcome {
  std::size_t prompts = 0;
  std::vector<IterationLog> log;
};

struct EvalOutcome {
  std::string tag;
  /// One report per scored model: "heldout" for a backend run, "table/row"
  /// for the published fixture.
  std::map<std::string, AggregateReport> reports;
  std::vector<EvalResult> results;
  std::optional<ProbeResult> probe;
  /// Aggregation-only mode: recomputed vs reported averages.
  std::vector<AverageCheck> checks;
};

/// Each stage reads its inputs from and writes its outputs to the run's
/// work directory. Throws ConfigError for bad settings or missing inputs
/// named by the config, StageError when a stage cannot complete.
CurateOutcome run_curate(const RunConfig& cfg, std::ostream& log);
SftOutcome run_sft(const RunConfig& cfg, std::ostream& log);
MiningReport run_mine(const RunConfig& cfg, std::ostream& log);
GrpoOutcome run_grpo(const RunConfig& cfg, std::ostream& log);
EvalOutcome run_eval(const RunConfig& cfg, std::ostream& log);
/// Prints the saved report of eval.checkpoint as an aligned table.
void run_report(const RunConfig& cfg, std::ostream& out);

/// Everything the toy pipeline needs to (de)serialize a policy for this run.
ToyCodec codec_for(const RunConfig& cfg);
/// Mean NLL of the rendered targets of annotated records.
double sft_loss(const ToyPolicy& policy, const ToyCodec& codec, const DatasetManifest& records);

}  // namespace guardrl
