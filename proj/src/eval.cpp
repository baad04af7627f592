#include "guardrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "guardrl/parallel.hpp"
#include "guardrl/random.hpp"

namespace guardrl {

using nlohmann::json;

std::string_view to_string(EvalTask t) {
  return t == EvalTask::prompt_harmfulness ? "prompt_harmfulness" : "response_harmfulness";
}

std::optional<EvalTask> parse_eval_task(std::string_view s) {
  if (s == "prompt_harmfulness") return EvalTask::prompt_harmfulness;
  if (s == "response_harmfulness") return EvalTask::response_harmfulness;
  return std::nullopt;
}

std::string_view to_string(UnparsedPolicy p) {
  switch (p) {
    case UnparsedPolicy::harmful: return "harmful";
    case UnparsedPolicy::unharmful: return "unharmful";
    case UnparsedPolicy::exclude: return "exclude";
  }
  return "harmful";
}

std::optional<UnparsedPolicy> parse_unparsed_policy(std::string_view s) {
  if (s == "harmful") return UnparsedPolicy::harmful;
  if (s == "unharmful") return UnparsedPolicy::unharmful;
  if (s == "exclude") return UnparsedPolicy::exclude;
  return std::nullopt;
}

void ConfusionCounts::add(SafetyLabel predicted, SafetyLabel truth) {
  const bool p = predicted == SafetyLabel::harmful;
  const bool t = truth == SafetyLabel::harmful;
  if (p && t) ++tp;
  else if (p) ++fp;
  else if (t) ++fn;
  else ++tn;
}

double ConfusionCounts::f1() const {
  const auto denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

ConfusionCounts f1_score(std::span<const SafetyLabel> predictions, std::span<const SafetyLabel> truths) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("f1_score: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " truths");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) c.add(predictions[i], truths[i]);
  return c;
}

double weighted_average(std::span<const WeightedF1> parts) {
  if (parts.empty()) throw std::invalid_argument("weighted_average of an empty list");
  double num = 0.0;
  double den = 0.0;
  for (const auto& p : parts) {
    if (p.sample_count == 0) throw std::invalid_argument("weighted_average: zero sample count");
    num += p.f1 * static_cast<double>(p.sample_count);
    den += static_cast<double>(p.sample_count);
  }
  return num / den;
}

SafetyLabel union_aggregate(std::span<const SafetyLabel> frame_verdicts) {
  if (frame_verdicts.empty()) throw std::invalid_argument("union_aggregate of an empty list");
  return std::ranges::any_of(frame_verdicts, [](SafetyLabel l) { return l == SafetyLabel::harmful; })
             ? SafetyLabel::harmful
             : SafetyLabel::unharmful;
}

std::vector<std::size_t> uniform_frame_indices(std::size_t n, std::size_t count) {
  std::vector<std::size_t> out;
  if (count == 0) return out;
  if (count >= n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) out.push_back((2 * i + 1) * n / (2 * count));
  return out;
}

namespace {

std::optional<SafetyLabel> task_label(const Verdict& v, EvalTask task) {
  return task == EvalTask::prompt_harmfulness ? v.request : v.response;
}

std::optional<SafetyLabel> task_truth(const GroundTruth& t, EvalTask task) {
  if (task == EvalTask::prompt_harmfulness) return t.request_label;
  return t.response_label;
}

bool is_video(Modality m) { return m == Modality::video || m == Modality::text_video; }

struct Outcome {
  std::optional<SafetyLabel> predicted;  // nullopt: excluded
  bool unparsed = false;
  std::optional<std::string> failure;
};

}  // namespace

EvalResult run_benchmark(const TranscriptSource& source, const BenchmarkSpec& spec,
                         const EvalOptions& options) {
  const auto grammar = source.grammar();
  const auto counter = source.counter();
  const auto& records = spec.manifest.records();
  for (const auto& r : records)
    if (!task_truth(r.sample.truth, spec.task))
      throw std::invalid_argument("benchmark " + spec.name + ": sample " + r.sample.id +
                                  " has no label for " + std::string(to_string(spec.task)));

  std::vector<Outcome> outcomes(records.size());

  // One backend call; nullopt when the output is unusable.
  auto query = [&](const Sample& s, std::span<const std::string> media, std::uint64_t seed,
                   Outcome& out) -> std::optional<SafetyLabel> {
    std::string text;
    try {
      text = source.generate(s, media, seed);
    } catch (const std::exception& e) {
      out.failure = e.what();
      return std::nullopt;
    }
    const auto parsed = parse_output(text, grammar, mode_for(s.truth), counter);
    if (!parsed.compliant) return std::nullopt;
    return task_label(parsed.verdict, spec.task);
  };

  auto fallback = [&]() -> std::optional<SafetyLabel> {
    switch (options.unparsed) {
      case UnparsedPolicy::harmful: return SafetyLabel::harmful;
      case UnparsedPolicy::unharmful: return SafetyLabel::unharmful;
      case UnparsedPolicy::exclude: return std::nullopt;
    }
    return std::nullopt;
  };

  auto work = [&](std::size_t i) {
    const Sample& s = records[i].sample;
    Outcome& out = outcomes[i];
    const std::uint64_t base = mix_seed(options.seed, hash_name(s.id));
    if (options.frame_union && is_video(s.modality) && !s.media_refs.empty()) {
      std::vector<SafetyLabel> frames;
      for (const auto f : uniform_frame_indices(s.media_refs.size(), options.frames)) {
        auto label = query(s, std::span(s.media_refs).subspan(f, 1), mix_seed(base, f), out);
        if (!label) {
          out.unparsed = true;
          label = fallback();
        }
        if (label) frames.push_back(*label);
      }
      if (!frames.empty()) out.predicted = union_aggregate(frames);
      return;
    }
    out.predicted = query(s, s.media_refs, base, out);
    if (!out.predicted) {
      out.unparsed = true;
      out.predicted = fallback();
    }
  };

  parallel_for(records.size(), options.parallelism, work);

  EvalResult result;
  result.name = spec.name;
  result.task = spec.task;
  result.sample_count = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.unparsed) ++result.unparsed;
    if (o.failure) result.failures.push_back({records[i].sample.id, *o.failure});
    if (!o.predicted) {
      ++result.excluded;
      continue;
    }
    result.counts.add(*o.predicted, *task_truth(records[i].sample.truth, spec.task));
  }
  result.f1 = result.counts.f1();
  return result;
}

BenchmarkScore to_score(const EvalResult& r) {
  return {r.name, r.f1, r.sample_count, r.unparsed};
}

const GroupAverage& AggregateReport::average(std::string_view grouping, std::string_view group) const {
  for (const auto& a : averages)
    if (a.grouping == grouping && a.group == group) return a;
  throw std::out_of_range("no average for " + std::string(grouping) + "/" + std::string(group));
}

namespace {

double group_average(const std::vector<BenchmarkScore>& benchmarks, const std::vector<std::string>& members) {
  std::vector<WeightedF1> parts;
  for (const auto& m : members) {
    const auto it = std::ranges::find(benchmarks, m, &BenchmarkScore::name);
    if (it == benchmarks.end()) throw std::invalid_argument("group member " + m + " has no score");
    parts.push_back({it->f1, it->sample_count});
  }
  return weighted_average(parts);
}

}  // namespace

AggregateReport build_report(std::span<const BenchmarkScore> scores, std::span<const Grouping> groupings) {
  AggregateReport report;
  report.benchmarks.assign(scores.begin(), scores.end());
  std::ranges::sort(report.benchmarks, {}, &BenchmarkScore::name);
  for (std::size_t i = 1; i < report.benchmarks.size(); ++i)
    if (report.benchmarks[i].name == report.benchmarks[i - 1].name)
      throw std::invalid_argument("duplicate benchmark " + report.benchmarks[i].name);

  for (const auto& g : groupings) {
    std::map<std::string, int> seen;
    for (const auto& [group, members] : g.groups) {
      if (members.empty()) throw std::invalid_argument("grouping " + g.name + ": group " + group + " is empty");
      for (const auto& m : members) {
        if (!std::ranges::count(report.benchmarks, m, &BenchmarkScore::name))
          throw std::invalid_argument("grouping " + g.name + ": unknown benchmark " + m);
        if (++seen[m] > 1) throw std::invalid_argument("grouping " + g.name + ": " + m + " is in two groups");
      }
    }
    for (const auto& b : report.benchmarks)
      if (!seen.count(b.name))
        throw std::invalid_argument("grouping " + g.name + ": benchmark " + b.name + " has no group");
    for (const auto& [group, members] : g.groups) {
      auto sorted = members;
      std::ranges::sort(sorted);
      report.averages.push_back({g.name, group, sorted, group_average(report.benchmarks, sorted)});
    }
  }
  return report;
}

std::string AggregateReport::to_json() const {
  json j;
  j["benchmarks"] = json::array();
  for (const auto& b : benchmarks)
    j["benchmarks"].push_back(
        {{"name", b.name}, {"f1", b.f1}, {"sample_count", b.sample_count}, {"unparsed", b.unparsed}});
  j["averages"] = json::array();
  for (const auto& a : averages)
    j["averages"].push_back(
        {{"grouping", a.grouping}, {"group", a.group}, {"members", a.members}, {"average", a.average}});
  return j.dump(2);
}

AggregateReport AggregateReport::from_json(std::string_view text) {
  const auto j = json::parse(text);
  AggregateReport r;
  for (const auto& b : j.at("benchmarks"))
    r.benchmarks.push_back({b.at("name").get<std::string>(), b.at("f1").get<double>(),
                            b.at("sample_count").get<std::size_t>(), b.value("unparsed", std::size_t{0})});
  for (const auto& a : j.at("averages"))
    r.averages.push_back({a.at("grouping").get<std::string>(), a.at("group").get<std::string>(),
                          a.at("members").get<std::vector<std::string>>(), a.at("average").get<double>()});
  return r;
}

bool AggregateReport::consistent() const {
  try {
    for (const auto& a : averages)
      if (group_average(benchmarks, a.members) != a.average) return false;
  } catch (const std::invalid_argument&) {
    return false;
  }
  return true;
}

std::string AggregateReport::to_table() const {
  std::size_t width = 9;
  for (const auto& b : benchmarks) width = std::max(width, b.name.size());
  for (const auto& a : averages) width = std::max(width, a.grouping.size() + a.group.size() + 11);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(static_cast<int>(width)) << "benchmark" << std::right << std::setw(10) << "f1"
     << std::setw(10) << "samples" << std::setw(10) << "unparsed" << '\n';
  for (const auto& b : benchmarks)
    os << std::left << std::setw(static_cast<int>(width)) << b.name << std::right << std::setw(10) << b.f1
       << std::setw(10) << b.sample_count << std::setw(10) << b.unparsed << '\n';
  for (const auto& a : averages)
    os << std::left << std::setw(static_cast<int>(width)) << ("average " + a.grouping + "/" + a.group)
       << std::right << std::setw(10) << a.average << '\n';
  return os.str();
}

std::vector<BenchmarkScore> PublishedFixture::scores_for(std::string_view table, std::string_view row) const {
  std::vector<BenchmarkScore> out;
  for (const auto& s : scores)
    if (s.table == table && s.row == row) out.push_back({s.name, s.f1, s.sample_count, 0});
  return out;
}

AggregateReport PublishedFixture::report_for(std::string_view table, std::string_view row) const {
  const auto it = groupings.find(std::string(table));
  if (it == groupings.end()) throw std::invalid_argument("fixture has no groupings for " + std::string(table));
  const auto s = scores_for(table, row);
  if (s.empty())
    throw std::invalid_argument("fixture has no scores for " + std::string(table) + "/" + std::string(row));
  return build_report(s, it->second);
}

PublishedFixture load_published_fixture(const std::filesystem::path& scores_jsonl,
                                        const std::filesystem::path& groups_json) {
  PublishedFixture f;
  std::ifstream in(scores_jsonl);
  if (!in) throw std::runtime_error("cannot read " + scores_jsonl.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      PublishedScore s;
      s.table = j.at("table").get<std::string>();
      s.row = j.at("row").get<std::string>();
      s.name = j.at("name").get<std::string>();
      const auto task = parse_eval_task(j.at("task").get<std::string>());
      if (!task) throw std::invalid_argument("bad task");
      s.task = *task;
      const auto m = parse_modality(j.at("modality").get<std::string>());
      if (!m) throw std::invalid_argument("bad modality");
      s.modality = *m;
      s.f1 = j.at("f1").get<double>();
      s.sample_count = j.at("sample_count").get<std::size_t>();
      f.scores.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(scores_jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }

  std::ifstream gin(groups_json);
  if (!gin) throw std::runtime_error("cannot read " + groups_json.string());
  const auto g = json::parse(gin);
  for (const auto& [table, list] : g.at("groupings").items()) {
    for (const auto& item : list) {
      Grouping grouping;
      grouping.name = item.at("name").get<std::string>();
      grouping.groups = item.at("groups").get<std::map<std::string, std::vector<std::string>>>();
      f.groupings[table].push_back(std::move(grouping));
    }
  }
  for (const auto& r : g.at("reported"))
    f.reported.push_back({r.at("table").get<std::string>(), r.at("row").get<std::string>(),
                          r.at("grouping").get<std::string>(), r.at("group").get<std::string>(),
                          r.at("value").get<double>(), r.at("tolerance").get<double>()});
  return f;
}

std::vector<AverageCheck> check_reported_averages(const PublishedFixture& fixture) {
  std::vector<AverageCheck> out;
  for (const auto& r : fixture.reported) {
    const auto report = fixture.report_for(r.table, r.row);
    const double v = report.average(r.grouping, r.group).average;
    out.push_back({r, v, std::abs(v - r.value) <= r.tolerance});
  }
  return out;
}

ProbeResult probe(const TranscriptSource& source, const DatasetManifest& manifest, std::size_t rollouts,
                  std::uint64_t seed, const RewardParams<double>& params, std::size_t parallelism) {
  if (manifest.empty()) throw std::invalid_argument("probe on an empty manifest");
  if (rollouts == 0) throw std::invalid_argument("probe needs at least one rollout");
  const auto grammar = source.grammar();
  const auto counter = source.counter();

  struct Row {
    std::size_t compliant = 0;
    double acc = 0, reward = 0, length = 0, failing_length = 0;
    std::size_t failing = 0;
  };
  std::vector<Row> rows(manifest.size());
  parallel_for(manifest.size(), parallelism, [&](std::size_t i) {
    const Sample& s = manifest[i].sample;
    Row& row = rows[i];
    for (std::size_t j = 0; j < rollouts; ++j) {
      const auto text = source.generate(s, s.media_refs, mix_seed(seed, hash_name(s.id), j));
      const auto parsed = parse_output(text, grammar, mode_for(s.truth), counter);
      const auto r = total_reward<double>(parsed, s.truth, params);
      const auto len = static_cast<double>(count_tokens(text, counter));
      row.compliant += parsed.compliant ? 1 : 0;
      row.acc += r.r_acc;
      row.reward += r.total;
      row.length += len;
      if (r.r_acc < 1.0) {
        ++row.failing;
        row.failing_length += len;
      }
    }
  });

  ProbeResult p;
  double acc = 0, reward = 0, length = 0, failing_length = 0;
  for (const auto& row : rows) {
    p.compliant += row.compliant;
    acc += row.acc;
    reward += row.reward;
    length += row.length;
    failing_length += row.failing_length;
    p.failing += row.failing;
  }
  const double n = static_cast<double>(manifest.size() * rollouts);
  p.samples = manifest.size() * rollouts;
  p.compliance_rate = static_cast<double>(p.compliant) / n;
  p.mean_accuracy = acc / n;
  p.mean_reward = reward / n;
  p.mean_length = length / n;
  p.mean_failing_length = p.failing ? failing_length / static_cast<double>(p.failing) : 0.0;
  return p;
}

}  // namespace guardrl
