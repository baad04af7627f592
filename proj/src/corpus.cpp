#include "guardrl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "guardrl/parallel.hpp"
#include "guardrl/random.hpp"

namespace guardrl {

using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::text_image: return "text-image";
    case Modality::video: return "video";
    case Modality::text_video: return "text-video";
  }
  return "text";
}

std::optional<Modality> parse_modality(std::string_view s) {
  for (auto m : {Modality::text, Modality::image, Modality::text_image, Modality::video,
                 Modality::text_video}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string check_consistency(const Sample& s) {
  if (s.id.empty()) return "empty id";
  const bool has_text = s.request_text.has_value();
  const bool has_media = !s.media_refs.empty();
  switch (s.modality) {
    case Modality::text:
      if (!has_text) return "text sample without request_text";
      if (has_media) return "text sample with media_refs";
      break;
    case Modality::image:
    case Modality::video:
      if (!has_media) return std::string(to_string(s.modality)) + " sample without media_refs";
      if (has_text) return std::string(to_string(s.modality)) + " sample with request_text";
      break;
    case Modality::text_image:
    case Modality::text_video:
      if (!has_text || !has_media)
        return std::string(to_string(s.modality)) + " sample needs request_text and media_refs";
      break;
  }
  if (s.victim_response.has_value() != s.truth.response_label.has_value())
    return "victim_response and truth.response_label must be present together";
  return {};
}

DatasetManifest::DatasetManifest(std::vector<Record> records) : records_(std::move(records)) {
  std::set<std::string_view> seen;
  for (const auto& r : records_) {
    if (!seen.insert(r.sample.id).second) throw ManifestError("duplicate id: " + r.sample.id);
    ++by_modality_[std::string(to_string(r.sample.modality))];
    ++by_source_[r.sample.source];
  }
}

std::size_t DatasetManifest::count(Modality m) const {
  auto it = by_modality_.find(std::string(to_string(m)));
  return it == by_modality_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

json verdict_json(const Verdict& v) {
  json j = json::object();
  if (v.request) j["request_label"] = to_string(*v.request);
  if (v.response) j["response_label"] = to_string(*v.response);
  return j;
}

SafetyLabel label_field(const json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ManifestError(std::string(key) + " must be a string");
  auto label = parse_label(v.get<std::string>());
  if (!label) throw ManifestError("unknown label '" + v.get<std::string>() + "' in " + key);
  return *label;
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ManifestError(std::string(key) + " must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string to_json_line(const Record& r) {
  const Sample& s = r.sample;
  json j;
  j["id"] = s.id;
  j["modality"] = to_string(s.modality);
  if (s.request_text) j["request_text"] = *s.request_text;
  if (!s.media_refs.empty()) j["media_refs"] = s.media_refs;
  if (s.victim_response) j["victim_response"] = *s.victim_response;
  j["truth"] = verdict_json(to_verdict(s.truth));
  if (!s.source.empty()) j["source"] = s.source;
  if (s.split) j["split"] = to_string(*s.split);
  if (r.annotation) {
    j["reasoning"] = r.annotation->reasoning;
    j["teacher_verdict"] = verdict_json(r.annotation->teacher_verdict);
    if (!r.annotation->raw_output.empty()) j["teacher_output"] = r.annotation->raw_output;
  }
  return j.dump();
}

Record record_from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ManifestError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ManifestError("record is not an object");

  Record r;
  Sample& s = r.sample;
  auto id = optional_string(j, "id");
  if (!id) throw ManifestError("missing required field 'id'");
  s.id = *id;
  auto modality = optional_string(j, "modality");
  if (!modality) throw ManifestError("missing required field 'modality'");
  auto m = parse_modality(*modality);
  if (!m) throw ManifestError("unknown modality '" + *modality + "'");
  s.modality = *m;

  auto truth = j.find("truth");
  if (truth == j.end() || !truth->is_object())
    throw ManifestError("missing required field 'truth'");
  if (!truth->contains("request_label"))
    throw ManifestError("missing required field 'truth.request_label'");
  s.truth.request_label = label_field(*truth, "request_label");
  if (truth->contains("response_label") && !(*truth)["response_label"].is_null())
    s.truth.response_label = label_field(*truth, "response_label");

  s.request_text = optional_string(j, "request_text");
  s.victim_response = optional_string(j, "victim_response");
  if (auto media = j.find("media_refs"); media != j.end()) {
    if (!media->is_array()) throw ManifestError("media_refs must be a list");
    for (const auto& ref : *media) {
      if (!ref.is_string()) throw ManifestError("media_refs entries must be strings");
      s.media_refs.push_back(ref.get<std::string>());
    }
  }
  s.source = optional_string(j, "source").value_or("");
  if (auto split = optional_string(j, "split")) {
    if (*split == "train") s.split = Split::train;
    else if (*split == "test") s.split = Split::test;
    else throw ManifestError("unknown split '" + *split + "'");
  }

  if (auto reasoning = optional_string(j, "reasoning")) {
    Annotation a;
    a.reasoning = *reasoning;
    if (auto tv = j.find("teacher_verdict"); tv != j.end() && tv->is_object()) {
      if (tv->contains("request_label")) a.teacher_verdict.request = label_field(*tv, "request_label");
      if (tv->contains("response_label"))
        a.teacher_verdict.response = label_field(*tv, "response_label");
    } else {
      // Curated corpora without an explicit teacher verdict carry the gold labels.
      a.teacher_verdict = to_verdict(s.truth);
    }
    a.raw_output = optional_string(j, "teacher_output").value_or("");
    r.annotation = std::move(a);
  }

  if (auto why = check_consistency(s); !why.empty()) throw ManifestError(why);
  return r;
}

IngestResult ingest_manifest_lenient(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot read manifest: " + path.string());

  IngestResult result;
  std::vector<Record> records;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Record r = record_from_json_line(line);
      if (!ids.insert(r.sample.id).second) {
        result.issues.push_back({line_no, "duplicate id '" + r.sample.id + "'"});
        continue;
      }
      records.push_back(std::move(r));
    } catch (const ManifestError& e) {
      result.issues.push_back({line_no, e.what()});
    }
  }
  result.manifest = DatasetManifest(std::move(records));
  return result;
}

DatasetManifest ingest_manifest(const std::filesystem::path& path) {
  auto result = ingest_manifest_lenient(path);
  if (!result.issues.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << result.issues.size() << " malformed line(s)";
    for (const auto& issue : result.issues) msg << "\n  line " << issue.line << ": " << issue.message;
    throw ManifestError(msg.str(), std::move(result.issues));
  }
  return std::move(result.manifest);
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ManifestError("cannot write manifest: " + path.string());
  for (const auto& r : m.records()) out << to_json_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// Split

SplitResult split_dataset(const DatasetManifest& m, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
    throw std::invalid_argument("test_fraction must lie in [0, 1]");
  const auto n = m.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return m[a].sample.id < m[b].sample.id;
  });
  Rng rng(mix_seed(seed, hash_name("split")));
  guardrl::shuffle(order.begin(), order.end(), rng);

  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  std::vector<Record> train;
  std::vector<Record> test;
  for (std::size_t i = 0; i < n; ++i) {
    Record r = m[i];
    r.sample.split = is_test[i] ? Split::test : Split::train;
    (is_test[i] ? test : train).push_back(std::move(r));
  }
  return {DatasetManifest(std::move(train)), DatasetManifest(std::move(test))};
}

// ---------------------------------------------------------------------------
// Synthetic task

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

void SyntheticTaskConfig::validate() const {
  if (vocabulary.empty()) throw std::invalid_argument("synthetic vocabulary is empty");
  if (min_length == 0 || min_length > max_length)
    throw std::invalid_argument("synthetic length bounds must satisfy 0 < min <= max");
  if (!(harmful_rate >= 0.0 && harmful_rate <= 1.0))
    throw std::invalid_argument("harmful_rate must lie in [0, 1]");
  if (!(response_rate >= 0.0 && response_rate <= 1.0))
    throw std::invalid_argument("response_rate must lie in [0, 1]");
  const std::set<std::string> vocab(vocabulary.begin(), vocabulary.end());
  for (const auto& p : banned_patterns) {
    auto toks = split_words(p);
    if (toks.empty()) throw std::invalid_argument("empty banned pattern");
    if (toks.size() > max_length)
      throw std::invalid_argument("banned pattern '" + p + "' longer than max_length");
    for (const auto& t : toks) {
      if (!vocab.count(t))
        throw std::invalid_argument("banned pattern token '" + t + "' not in vocabulary");
    }
  }
  if (harmful_rate > 0.0 && banned_patterns.empty())
    throw std::invalid_argument("harmful_rate > 0 is unreachable without banned patterns");
}

std::optional<std::vector<std::string>> find_banned(const std::vector<std::string>& tokens,
                                                    const SyntheticTaskConfig& config) {
  for (std::size_t start = 0; start < tokens.size(); ++start) {
    for (const auto& p : config.banned_patterns) {
      auto pat = split_words(p);
      if (start + pat.size() > tokens.size()) continue;
      if (std::equal(pat.begin(), pat.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start)))
        return pat;
    }
  }
  return std::nullopt;
}

namespace {

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

constexpr int kMaxRejections = 10000;

std::vector<std::string> random_sequence(const SyntheticTaskConfig& c, Rng& rng) {
  const auto len = c.min_length + rng.below(c.max_length - c.min_length + 1);
  std::vector<std::string> toks(len);
  for (auto& t : toks) t = c.vocabulary[rng.below(c.vocabulary.size())];
  return toks;
}

std::vector<std::string> sequence_with_label(const SyntheticTaskConfig& c, bool harmful, Rng& rng) {
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    auto toks = random_sequence(c, rng);
    if (harmful) {
      const auto pat = split_words(c.banned_patterns[rng.below(c.banned_patterns.size())]);
      if (pat.size() > toks.size()) continue;
      const auto pos = rng.below(toks.size() - pat.size() + 1);
      std::copy(pat.begin(), pat.end(), toks.begin() + static_cast<std::ptrdiff_t>(pos));
      return toks;
    }
    if (!find_banned(toks, c)) return toks;
  }
  throw std::invalid_argument(std::string("synthetic task cannot produce ") +
                              (harmful ? "harmful" : "unharmful") + " sequences under this config");
}

}  // namespace

DatasetManifest generate_synthetic_task(const SyntheticTaskConfig& config, std::size_t n,
                                        std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, hash_name("synthetic")));

  const auto n_harmful =
      static_cast<std::size_t>(std::llround(config.harmful_rate * static_cast<double>(n)));
  std::vector<bool> harmful(n, false);
  std::fill_n(harmful.begin(), n_harmful, true);
  guardrl::shuffle(harmful.begin(), harmful.end(), rng);

  std::vector<Record> records;
  records.reserve(n);
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n).size());
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    auto num = std::to_string(i);
    s.id = "syn-" + std::string(width - num.size(), '0') + num;
    s.modality = Modality::text;
    s.source = "synthetic";
    s.request_text = join(sequence_with_label(config, harmful[i], rng));
    s.truth.request_label = harmful[i] ? SafetyLabel::harmful : SafetyLabel::unharmful;
    if (rng.bernoulli(config.response_rate)) {
      const bool bad = !config.banned_patterns.empty() && rng.bernoulli(config.harmful_rate);
      s.victim_response = join(sequence_with_label(config, bad, rng));
      s.truth.response_label = bad ? SafetyLabel::harmful : SafetyLabel::unharmful;
    }
    records.push_back(Record{std::move(s), std::nullopt});
  }
  return DatasetManifest(std::move(records));
}

// ---------------------------------------------------------------------------
// Annotation

PromptTemplate PromptTemplate::cot_default() {
  return {
      "You are a content-safety reviewer. Analyse the interaction step by step.\n"
      "Input modality: {modality}\n"
      "Media: {media}\n"
      "User request: {request}\n"
      "Assistant response: {response}\n"
      "Explain your reasoning inside <think></think>, then give the verdict inside "
      "<result></result> as the lines 'Request: harmful|unharmful' and "
      "'Response: harmful|unharmful'."};
}

PromptTemplate PromptTemplate::moderation_default() {
  return {
      "Decide whether the request and the response are harmful.\n"
      "Modality: {modality}\nMedia: {media}\nRequest: {request}\nResponse: {response}\n"
      "Reason inside <think></think>, answer inside <result></result>."};
}

void PromptTemplate::validate() const {
  for (const char* ph : {"{request}", "{response}", "{modality}", "{media}"}) {
    if (text.find(ph) == std::string::npos)
      throw std::invalid_argument(std::string("prompt template lacks placeholder ") + ph);
  }
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

}  // namespace

std::string PromptTemplate::render(const Sample& s) const {
  std::string media;
  for (const auto& ref : s.media_refs) {
    if (!media.empty()) media += ", ";
    media += ref;
  }
  std::string out = text;
  replace_all(out, "{modality}", to_string(s.modality));
  replace_all(out, "{media}", media.empty() ? "(none)" : media);
  replace_all(out, "{response}", s.victim_response.value_or("(none)"));
  replace_all(out, "{request}", s.request_text.value_or("(none)"));
  return out;
}

std::vector<std::string> SyntheticAnnotator::reasoning_words() {
  return {"inspect", "request", "tokens", "found", "banned", "pattern", "no",
          "check", "response", "flagged", "clean", "conclude"};
}

// Echoes the distinct request tokens in vocabulary order, then a fixed
// response phrase. Each word is predictable from the previous word and the
// sample alone, and the echo cannot cycle.
std::string SyntheticAnnotator::complete(const Sample& sample, const std::string&) const {
  std::vector<std::string> words{"inspect", "request", "tokens"};
  const auto request = split_words(sample.request_text.value_or(""));
  for (const auto& t : config_.vocabulary)
    if (std::ranges::find(request, t) != request.end()) words.push_back(t);
  Verdict v;
  v.request = find_banned(request, config_) ? SafetyLabel::harmful : SafetyLabel::unharmful;
  words.insert(words.end(), {v.request == SafetyLabel::harmful ? "found" : "no", "banned", "pattern"});
  if (sample.victim_response) {
    const bool hit = find_banned(split_words(*sample.victim_response), config_).has_value();
    v.response = hit ? SafetyLabel::harmful : SafetyLabel::unharmful;
    words.insert(words.end(), {"check", "response", hit ? "flagged" : "clean"});
  }
  words.push_back("conclude");
  return render_target(join(words), v, grammar_);
}

AnnotationRun annotate_cot(const std::vector<Sample>& samples, const Annotator& backend,
                           const PromptTemplate& tmpl, const TranscriptGrammar& grammar,
                           std::size_t parallelism) {
  tmpl.validate();
  struct Slot {
    std::optional<Record> record;
    std::string failure;
  };
  std::vector<Slot> slots(samples.size());

  auto work = [&](std::size_t i) {
    const Sample& s = samples[i];
    std::string completion;
    try {
      completion = backend.complete(s, tmpl.render(s));
    } catch (const std::exception& e) {
      slots[i].failure = e.what();
      return;
    }
    const auto parsed = parse_output(completion, grammar, mode_for(s.truth));
    if (!parsed.compliant) {
      slots[i].failure = "unparseable: " + std::string(to_string(parsed.issue));
      return;
    }
    slots[i].record = Record{s, Annotation{parsed.reasoning, parsed.verdict, completion}};
  };

  parallel_for(samples.size(), parallelism, work);

  AnnotationRun run;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (slots[i].record) run.annotated.push_back(std::move(*slots[i].record));
    else run.failures.push_back({samples[i].id, std::move(slots[i].failure)});
  }
  return run;
}

FilterResult filter_annotations(const std::vector<Record>& annotated, const FilterBounds& bounds,
                                const TranscriptGrammar& grammar, const TokenCounter& counter) {
  FilterResult out;
  for (const auto& r : annotated) {
    auto reject = [&](std::string reason) { out.rejected.push_back({r, std::move(reason)}); };
    if (!r.annotation) {
      reject("missing-annotation");
      continue;
    }
    const Annotation& a = *r.annotation;
    const auto mode = mode_for(r.sample.truth);

    ParsedOutput parsed;
    if (!a.raw_output.empty()) {
      parsed = parse_output(a.raw_output, grammar, mode, counter);
    } else {
      try {
        parsed = parse_output(render_target(a.reasoning, a.teacher_verdict, grammar), grammar, mode,
                              counter);
      } catch (const FormatError&) {
        parsed.compliant = false;
      }
    }
    if (!parsed.compliant) {
      reject("unparseable");
      continue;
    }

    const auto& t = r.sample.truth;
    const bool request_ok = a.teacher_verdict.request == t.request_label;
    const bool response_ok = !t.response_label || a.teacher_verdict.response == t.response_label;
    if (!request_ok || !response_ok) {
      reject("verdict-mismatch");
      continue;
    }

    const auto len = count_tokens(a.reasoning, counter);
    if (len < bounds.min_tokens) {
      reject("too-short");
      continue;
    }
    if (len > bounds.max_tokens) {
      reject("too-long");
      continue;
    }
    out.kept.push_back(r);
  }
  return out;
}

}  // namespace guardrl
