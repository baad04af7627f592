#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "guardrl/labels.hpp"

namespace guardrl {

/// Counts tokens in a transcript. The default splits on whitespace.
using TokenCounter = std::function<std::size_t(std::string_view)>;

std::size_t count_whitespace_tokens(std::string_view text);

inline TokenCounter whitespace_counter() { return &count_whitespace_tokens; }

inline std::size_t count_tokens(std::string_view text, const TokenCounter& counter) {
  return counter ? counter(text) : count_whitespace_tokens(text);
}

/// Tags and keys of the reasoning/result transcript layout.
struct TranscriptGrammar {
  std::string think_open = "<think>";
  std::string think_close = "</think>";
  std::string result_open = "<result>";
  std::string result_close = "</result>";
  std::string request_key = "Request:";
  std::string response_key = "Response:";
  /// When false, text outside the two blocks is tolerated.
  bool strict = true;

  /// Throws std::invalid_argument when tags are empty, equal, or nested in one another.
  void validate() const;
};

/// Which result lines a transcript must carry.
enum class GrammarMode {
  /// Request and Response lines both required.
  request_response,
  /// Response line optional and ignored.
  prompt_only,
};

inline GrammarMode mode_for(const GroundTruth& truth) {
  return truth.response_label ? GrammarMode::request_response : GrammarMode::prompt_only;
}

enum class FormatIssue {
  none,
  missing_think,
  unclosed_think,
  multiple_think,
  missing_result,
  unclosed_result,
  multiple_result,
  bad_order,
  text_outside_blocks,
  bad_result_line,
  duplicate_key,
  missing_request,
  missing_response,
  bad_label,
};

std::string_view to_string(FormatIssue issue);

struct ParsedOutput {
  bool compliant = false;
  FormatIssue issue = FormatIssue::none;
  std::string reasoning;
  Verdict verdict;
  std::size_t token_count = 0;
};

/// Total: never throws on any input; malformation shows up as compliant=false.
ParsedOutput parse_output(std::string_view text, const TranscriptGrammar& grammar, GrammarMode mode,
                          const TokenCounter& counter = whitespace_counter());

class FormatError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Builds the canonical SFT target. The Response line is emitted iff the verdict has one.
/// Throws FormatError if the reasoning contains a grammar tag or the verdict lacks a request label.
std::string render_target(std::string_view reasoning, const Verdict& verdict,
                          const TranscriptGrammar& grammar = {});

inline std::string render_target(std::string_view reasoning, const GroundTruth& truth,
                                 const TranscriptGrammar& grammar = {}) {
  return render_target(reasoning, to_verdict(truth), grammar);
}

}  // namespace guardrl
