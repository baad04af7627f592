#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guardrl/backend.hpp"
#include "guardrl/corpus.hpp"
#include "guardrl/labels.hpp"
#include "guardrl/reward.hpp"

namespace guardrl {

enum class EvalTask { prompt_harmfulness, response_harmfulness };

std::string_view to_string(EvalTask t);
std::optional<EvalTask> parse_eval_task(std::string_view s);

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  void add(SafetyLabel predicted, SafetyLabel truth);
  std::size_t total() const { return tp + fp + fn + tn; }
  /// Harmful is the positive class; 0 when 2tp+fp+fn == 0.
  double f1() const;
  bool operator==(const ConfusionCounts&) const = default;
};

/// Throws std::invalid_argument on a length mismatch.
ConfusionCounts f1_score(std::span<const SafetyLabel> predictions, std::span<const SafetyLabel> truths);

struct WeightedF1 {
  double f1 = 0.0;
  std::size_t sample_count = 0;
};

/// Sum(f1 * n) / Sum(n). Throws on an empty list or a zero count.
double weighted_average(std::span<const WeightedF1> parts);

/// Harmful iff any verdict is harmful. Throws on an empty list.
SafetyLabel union_aggregate(std::span<const SafetyLabel> frame_verdicts);

struct BenchmarkSpec {
  std::string name;
  EvalTask task = EvalTask::prompt_harmfulness;
  DatasetManifest manifest;

  std::size_t sample_count() const { return manifest.size(); }
};

enum class UnparsedPolicy { harmful, unharmful, exclude };

std::string_view to_string(UnparsedPolicy p);
std::optional<UnparsedPolicy> parse_unparsed_policy(std::string_view s);

struct EvalOptions {
  UnparsedPolicy unparsed = UnparsedPolicy::harmful;
  /// Query video samples one frame at a time and union the verdicts.
  bool frame_union = false;
  std::size_t frames = 16;
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
};

struct SampleFailure {
  std::string id;
  std::string message;
};

struct EvalResult {
  std::string name;
  EvalTask task = EvalTask::prompt_harmfulness;
  ConfusionCounts counts;
  /// Samples with at least one non-compliant output or failed backend call.
  std::size_t unparsed = 0;
  /// Samples dropped under UnparsedPolicy::exclude.
  std::size_t excluded = 0;
  std::size_t sample_count = 0;
  double f1 = 0.0;
  std::vector<SampleFailure> failures;
};

/// `count` frames spread uniformly over [0, n): bin midpoints. All of them
/// when count >= n.
std::vector<std::size_t> uniform_frame_indices(std::size_t n, std::size_t count);

/// Backend call failures are recorded per sample and scored as unparsed.
EvalResult run_benchmark(const TranscriptSource& source, const BenchmarkSpec& spec,
                         const EvalOptions& options = {});

/// A grouping partitions the benchmarks, e.g. {"T&I": [...], "Video": [...]}.
struct Grouping {
  std::string name;
  std::map<std::string, std::vector<std::string>> groups;
};

struct BenchmarkScore {
  std::string name;
  double f1 = 0.0;
  std::size_t sample_count = 0;
  std::size_t unparsed = 0;
};

struct GroupAverage {
  std::string grouping;
  std::string group;
  std::vector<std::string> members;
  double average = 0.0;
};

struct AggregateReport {
  /// Sorted by name.
  std::vector<BenchmarkScore> benchmarks;
  std::vector<GroupAverage> averages;

  const GroupAverage& average(std::string_view grouping, std::string_view group) const;
  std::string to_json() const;
  static AggregateReport from_json(std::string_view text);
  /// Recomputes every average from the stored benchmark scores.
  bool consistent() const;
  std::string to_table() const;
};

/// Throws std::invalid_argument when a benchmark is missing from a grouping,
/// appears twice in one, or a group names an unknown benchmark.
AggregateReport build_report(std::span<const BenchmarkScore> scores, std::span<const Grouping> groupings);

BenchmarkScore to_score(const EvalResult& r);

// ---------------------------------------------------------------------------
// Published-score fixtures (aggregation-only mode)

struct PublishedScore {
  std::string table;
  std::string row;
  std::string name;
  EvalTask task = EvalTask::prompt_harmfulness;
  Modality modality = Modality::text;
  /// Percent.
  double f1 = 0.0;
  std::size_t sample_count = 0;
};

struct ReportedAverage {
  std::string table;
  std::string row;
  std::string grouping;
  std::string group;
  double value = 0.0;
  double tolerance = 0.0;
};

struct PublishedFixture {
  std::vector<PublishedScore> scores;
  std::map<std::string, std::vector<Grouping>> groupings;  // by table
  std::vector<ReportedAverage> reported;

  std::vector<BenchmarkScore> scores_for(std::string_view table, std::string_view row) const;
  AggregateReport report_for(std::string_view table, std::string_view row) const;
};

/// Reads the per-benchmark JSONL plus the grouping JSON.
PublishedFixture load_published_fixture(const std::filesystem::path& scores_jsonl,
                                        const std::filesystem::path& groups_json);

struct AverageCheck {
  ReportedAverage reported;
  double recomputed = 0.0;
  bool within_tolerance = false;
};

std::vector<AverageCheck> check_reported_averages(const PublishedFixture& fixture);

// ---------------------------------------------------------------------------
// Policy probe on a labeled manifest

struct ProbeResult {
  std::size_t samples = 0;
  std::size_t compliant = 0;
  double compliance_rate = 0.0;
  double mean_accuracy = 0.0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  /// Mean transcript length over samples whose accuracy reward is below 1.
  double mean_failing_length = 0.0;
  std::size_t failing = 0;
};

/// `rollouts` samples per record; non-compliant transcripts score accuracy 0.
ProbeResult probe(const TranscriptSource& source, const DatasetManifest& manifest, std::size_t rollouts,
                  std::uint64_t seed, const RewardParams<double>& params = {},
                  std::size_t parallelism = 1);

}  // namespace guardrl
