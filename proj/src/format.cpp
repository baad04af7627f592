#include "guardrl/format.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <vector>

namespace guardrl {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool all_space(std::string_view s) { return std::all_of(s.begin(), s.end(), is_space); }

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

// Overlapping occurrences, so a tag hidden inside a longer run is still counted.
std::size_t occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

ParsedOutput fail(FormatIssue issue, std::size_t tokens) {
  ParsedOutput out;
  out.issue = issue;
  out.token_count = tokens;
  return out;
}

}  // namespace

std::optional<SafetyLabel> parse_label(std::string_view text) {
  if (iequals(text, "harmful")) return SafetyLabel::harmful;
  if (iequals(text, "unharmful")) return SafetyLabel::unharmful;
  return std::nullopt;
}

std::size_t count_whitespace_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = is_space(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

void TranscriptGrammar::validate() const {
  const std::array<std::string_view, 4> tags{think_open, think_close, result_open, result_close};
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].empty()) throw std::invalid_argument("grammar tags must be non-empty");
    for (std::size_t j = 0; j < tags.size(); ++j) {
      if (i != j && tags[j].find(tags[i]) != std::string_view::npos)
        throw std::invalid_argument("grammar tags must be distinct and not nested: " +
                                    std::string(tags[i]) + " / " + std::string(tags[j]));
    }
  }
  if (request_key.empty() || response_key.empty() || request_key == response_key)
    throw std::invalid_argument("grammar keys must be non-empty and distinct");
}

std::string_view to_string(FormatIssue issue) {
  switch (issue) {
    case FormatIssue::none: return "none";
    case FormatIssue::missing_think: return "missing-think";
    case FormatIssue::unclosed_think: return "unclosed-think";
    case FormatIssue::multiple_think: return "multiple-think";
    case FormatIssue::missing_result: return "missing-result";
    case FormatIssue::unclosed_result: return "unclosed-result";
    case FormatIssue::multiple_result: return "multiple-result";
    case FormatIssue::bad_order: return "bad-order";
    case FormatIssue::text_outside_blocks: return "text-outside-blocks";
    case FormatIssue::bad_result_line: return "bad-result-line";
    case FormatIssue::duplicate_key: return "duplicate-key";
    case FormatIssue::missing_request: return "missing-request";
    case FormatIssue::missing_response: return "missing-response";
    case FormatIssue::bad_label: return "bad-label";
  }
  return "unknown";
}

ParsedOutput parse_output(std::string_view text, const TranscriptGrammar& g, GrammarMode mode,
                          const TokenCounter& counter) {
  const std::size_t tokens = count_tokens(text, counter);
  const std::string_view s = trim(text);

  const auto n_to = occurrences(s, g.think_open);
  const auto n_tc = occurrences(s, g.think_close);
  const auto n_ro = occurrences(s, g.result_open);
  const auto n_rc = occurrences(s, g.result_close);
  if (n_to == 0) return fail(FormatIssue::missing_think, tokens);
  if (n_to > 1 || n_tc > 1) return fail(FormatIssue::multiple_think, tokens);
  if (n_tc == 0) return fail(FormatIssue::unclosed_think, tokens);
  if (n_ro == 0) return fail(FormatIssue::missing_result, tokens);
  if (n_ro > 1 || n_rc > 1) return fail(FormatIssue::multiple_result, tokens);
  if (n_rc == 0) return fail(FormatIssue::unclosed_result, tokens);

  const auto to = s.find(g.think_open);
  const auto tc = s.find(g.think_close);
  const auto ro = s.find(g.result_open);
  const auto rc = s.find(g.result_close);
  if (!(to + g.think_open.size() <= tc && tc + g.think_close.size() <= ro &&
        ro + g.result_open.size() <= rc))
    return fail(FormatIssue::bad_order, tokens);

  const auto between = s.substr(tc + g.think_close.size(), ro - tc - g.think_close.size());
  if (g.strict && (to != 0 || rc + g.result_close.size() != s.size() || !all_space(between)))
    return fail(FormatIssue::text_outside_blocks, tokens);

  const auto inner = s.substr(ro + g.result_open.size(), rc - ro - g.result_open.size());
  std::optional<std::string_view> request_value;
  std::optional<std::string_view> response_value;
  std::size_t start = 0;
  while (start <= inner.size()) {
    auto end = inner.find('\n', start);
    if (end == std::string_view::npos) end = inner.size();
    const auto line = trim(inner.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    std::optional<std::string_view>* slot = nullptr;
    std::size_t key_len = 0;
    if (line.size() >= g.request_key.size() &&
        iequals(line.substr(0, g.request_key.size()), g.request_key)) {
      slot = &request_value;
      key_len = g.request_key.size();
    } else if (line.size() >= g.response_key.size() &&
               iequals(line.substr(0, g.response_key.size()), g.response_key)) {
      slot = &response_value;
      key_len = g.response_key.size();
    } else {
      return fail(FormatIssue::bad_result_line, tokens);
    }
    if (slot->has_value()) return fail(FormatIssue::duplicate_key, tokens);
    *slot = trim(line.substr(key_len));
  }

  if (!request_value) return fail(FormatIssue::missing_request, tokens);
  ParsedOutput out;
  out.verdict.request = parse_label(*request_value);
  if (!out.verdict.request) return fail(FormatIssue::bad_label, tokens);
  if (mode == GrammarMode::request_response) {
    if (!response_value) return fail(FormatIssue::missing_response, tokens);
    out.verdict.response = parse_label(*response_value);
    if (!out.verdict.response) return fail(FormatIssue::bad_label, tokens);
  }

  out.compliant = true;
  out.reasoning = std::string(s.substr(to + g.think_open.size(), tc - to - g.think_open.size()));
  out.token_count = tokens;
  return out;
}

std::string render_target(std::string_view reasoning, const Verdict& verdict,
                          const TranscriptGrammar& g) {
  for (const auto* tag : {&g.think_open, &g.think_close, &g.result_open, &g.result_close}) {
    if (reasoning.find(*tag) != std::string_view::npos)
      throw FormatError("reasoning contains reserved tag " + *tag);
  }
  if (!verdict.request) throw FormatError("verdict has no request label");
  std::string out;
  out.reserve(reasoning.size() + 96);
  out += g.think_open;
  out += reasoning;
  out += g.think_close;
  out += g.result_open;
  out += g.request_key;
  out += ' ';
  out += to_string(*verdict.request);
  if (verdict.response) {
    out += '\n';
    out += g.response_key;
    out += ' ';
    out += to_string(*verdict.response);
  }
  out += g.result_close;
  return out;
}

}  // namespace guardrl
