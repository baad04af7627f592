#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "guardrl/format.hpp"
#include "guardrl/labels.hpp"

namespace guardrl {

enum class Modality { text, image, text_image, video, text_video };
enum class Split { train, test };

std::string_view to_string(Modality m);
std::optional<Modality> parse_modality(std::string_view s);
std::string_view to_string(Split s);

struct Sample {
  std::string id;
  Modality modality = Modality::text;
  std::optional<std::string> request_text;
  std::vector<std::string> media_refs;
  std::optional<std::string> victim_response;
  GroundTruth truth;
  std::string source;
  std::optional<Split> split;

  bool operator==(const Sample&) const = default;
};

/// Empty string when consistent, otherwise the violated constraint.
std::string check_consistency(const Sample& s);

/// Teacher output attached to a sample. Present records are the SFT corpus.
struct Annotation {
  std::string reasoning;
  Verdict teacher_verdict;
  /// Raw completion as returned by the annotator; empty for ingested records.
  std::string raw_output;

  bool operator==(const Annotation&) const = default;
};

struct Record {
  Sample sample;
  std::optional<Annotation> annotation;

  bool operator==(const Record&) const = default;
};

using Tally = std::map<std::string, std::size_t>;

/// Immutable list of records with per-modality and per-source tallies.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Throws ManifestError on duplicate ids.
  explicit DatasetManifest(std::vector<Record> records);

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }

  const Tally& modality_counts() const { return by_modality_; }
  const Tally& source_counts() const { return by_source_; }
  std::size_t count(Modality m) const;

  bool operator==(const DatasetManifest& o) const { return records_ == o.records_; }

 private:
  std::vector<Record> records_;
  Tally by_modality_;
  Tally by_source_;
};

struct LineIssue {
  std::size_t line = 0;
  std::string message;
};

class ManifestError : public std::runtime_error {
 public:
  explicit ManifestError(std::string message, std::vector<LineIssue> issues = {})
      : std::runtime_error(std::move(message)), issues_(std::move(issues)) {}
  const std::vector<LineIssue>& issues() const { return issues_; }

 private:
  std::vector<LineIssue> issues_;
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<LineIssue> issues;
};

/// Record <-> one JSON line.
std::string to_json_line(const Record& r);
/// Throws ManifestError (without line number) on a malformed line.
Record record_from_json_line(std::string_view line);

/// Keeps valid lines and reports the rest. Throws only if the file is unreadable.
IngestResult ingest_manifest_lenient(const std::filesystem::path& path);
/// Throws ManifestError listing every bad line when any line is malformed.
DatasetManifest ingest_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

struct SplitResult {
  DatasetManifest train;
  DatasetManifest test;
};

/// Seeded shuffle of the id-sorted records, then prefix take of
/// round(test_fraction * N) test records. Outputs keep input order.
SplitResult split_dataset(const DatasetManifest& m, double test_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic moderation task

struct SyntheticTaskConfig {
  std::vector<std::string> vocabulary{"a", "b", "c", "d", "e", "f", "g", "h"};
  /// Each pattern is a contiguous token sequence, space separated.
  std::vector<std::string> banned_patterns{"f g", "c a", "h b"};
  std::size_t min_length = 4;
  std::size_t max_length = 10;
  double harmful_rate = 0.5;
  /// Probability that a sample carries a victim response.
  double response_rate = 0.5;

  void validate() const;
};

std::vector<std::string> split_words(std::string_view text);

/// Pattern (as token list) occurring first in `tokens`, if any.
std::optional<std::vector<std::string>> find_banned(const std::vector<std::string>& tokens,
                                                    const SyntheticTaskConfig& config);

DatasetManifest generate_synthetic_task(const SyntheticTaskConfig& config, std::size_t n,
                                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// CoT annotation

/// Placeholders: {modality} {request} {response} {media}.
struct PromptTemplate {
  std::string text;

  static PromptTemplate cot_default();
  static PromptTemplate moderation_default();
  /// Throws std::invalid_argument when a placeholder is missing.
  void validate() const;
  std::string render(const Sample& s) const;
};

class AnnotatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Anything that turns a prompt into a teacher completion.
class Annotator {
 public:
  virtual ~Annotator() = default;
  /// Throws AnnotatorError (or derived) on timeout or refusal.
  virtual std::string complete(const Sample& sample, const std::string& prompt) const = 0;
};

/// Truth-aware rule annotator for the synthetic task.
class SyntheticAnnotator : public Annotator {
 public:
  explicit SyntheticAnnotator(SyntheticTaskConfig config, TranscriptGrammar grammar = {})
      : config_(std::move(config)), grammar_(std::move(grammar)) {}
  std::string complete(const Sample& sample, const std::string& prompt) const override;
  /// Reasoning words emitted by this annotator besides task tokens.
  static std::vector<std::string> reasoning_words();

 private:
  SyntheticTaskConfig config_;
  TranscriptGrammar grammar_;
};

struct AnnotationFailure {
  std::string id;
  std::string reason;
};

struct AnnotationRun {
  std::vector<Record> annotated;
  std::vector<AnnotationFailure> failures;
};

/// One record per successful backend call, in input order. Failures are
/// reported per sample ("unparseable: ..." or the backend's message).
AnnotationRun annotate_cot(const std::vector<Sample>& samples, const Annotator& backend,
                           const PromptTemplate& tmpl, const TranscriptGrammar& grammar = {},
                           std::size_t parallelism = 1);

struct FilterBounds {
  std::size_t min_tokens = 10;
  std::size_t max_tokens = 4096;
};

struct Rejection {
  Record record;
  std::string reason;  // unparseable | verdict-mismatch | too-short | too-long | missing-annotation
};

struct FilterResult {
  std::vector<Record> kept;
  std::vector<Rejection> rejected;
};

/// Rules, first failure wins: output parses, verdict equals truth on all
/// labeled fields, reasoning length within bounds.
FilterResult filter_annotations(const std::vector<Record>& annotated, const FilterBounds& bounds = {},
                                const TranscriptGrammar& grammar = {},
                                const TokenCounter& counter = whitespace_counter());

}  // namespace guardrl
