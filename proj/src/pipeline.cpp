#include "guardrl/pipeline.hpp"

#include <fstream>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "guardrl/backend.hpp"
#include "guardrl/completion.hpp"
#include "guardrl/random.hpp"

namespace guardrl {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t stage_seed(const RunConfig& cfg, std::string_view stage) {
  return mix_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), hash_name(stage));
}

namespace {

std::size_t positive(const RunConfig& cfg, std::string_view key) {
  const auto v = cfg.get_int(key);
  if (v <= 0) throw ConfigError("config key " + std::string(key) + " must be > 0");
  return static_cast<std::size_t>(v);
}

std::size_t non_negative(const RunConfig& cfg, std::string_view key) {
  return static_cast<std::size_t>(cfg.get_uint(key));
}

// Rethrows module precondition failures as config errors.
template <typename T>
T validated(T value) {
  try {
    value.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return value;
}

json seeds(const RunConfig& cfg, std::string_view stage) {
  return {{"seed", cfg.get_int("seed")}, {"stage", stage}, {"stage_seed", stage_seed(cfg, stage)}};
}

std::string fingerprint(const RunConfig& cfg, std::string_view stage) {
  auto j = seeds(cfg, stage);
  j["config"] = json::parse(cfg.to_json());
  return j.dump();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write " + path.string());
  out << text;
  if (!out) throw StageError("write failed for " + path.string());
}

DatasetManifest read_stage_manifest(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path))
    throw StageError("missing " + path.string() + "; run `guardrl " + std::string(producer) + "` first");
  try {
    return ingest_manifest(path);
  } catch (const ManifestError& e) {
    throw StageError(e.what());
  }
}

Checkpoint read_checkpoint(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path))
    throw StageError("missing checkpoint " + path.string() + "; run `guardrl " + std::string(producer) +
                     "` first");
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw StageError("cannot load " + path.string() + ": " + e.what());
  }
}

}  // namespace

SyntheticTaskConfig synthetic_config(const RunConfig& cfg) {
  SyntheticTaskConfig c;
  c.vocabulary = cfg.get_list("synthetic.vocabulary");
  c.banned_patterns = cfg.get_list("synthetic.banned_patterns");
  c.min_length = non_negative(cfg, "synthetic.min_length");
  c.max_length = non_negative(cfg, "synthetic.max_length");
  c.harmful_rate = cfg.get_double("synthetic.harmful_rate");
  c.response_rate = cfg.get_double("synthetic.response_rate");
  return validated(c);
}

TranscriptGrammar grammar_config(const RunConfig& cfg) {
  TranscriptGrammar g;
  g.strict = cfg.get_bool("format.strict");
  return validated(g);
}

RewardParams<double> reward_config(const RunConfig& cfg) {
  return validated(RewardParams<double>{cfg.get_double("reward.alpha"), cfg.get_double("reward.sigma")});
}

GrpoConfig grpo_config(const RunConfig& cfg) {
  GrpoConfig c;
  c.group_size = non_negative(cfg, "grpo.group_size");
  c.clip_epsilon = cfg.get_double("grpo.clip_epsilon");
  c.kl_beta = cfg.get_double("grpo.kl_beta");
  c.learning_rate = cfg.get_double("grpo.learning_rate");
  c.rollout_batch = non_negative(cfg, "grpo.rollout_batch");
  c.actor_batch = non_negative(cfg, "grpo.actor_batch");
  c.std_floor = cfg.get_double("grpo.std_floor");
  c.iterations = non_negative(cfg, "grpo.iterations");
  c.inner_epochs = non_negative(cfg, "grpo.inner_epochs");
  c.temperature = cfg.get_double("grpo.temperature");
  return validated(c);
}

SftOptions sft_config(const RunConfig& cfg) {
  SftOptions o;
  o.epochs = non_negative(cfg, "sft.epochs");
  o.batch_size = positive(cfg, "sft.batch_size");
  o.learning_rate = cfg.get_double("sft.learning_rate");
  o.linear_decay = cfg.get_bool("sft.linear_decay");
  if (!(o.learning_rate > 0)) throw ConfigError("sft.learning_rate must be > 0");
  return o;
}

EvalOptions eval_config(const RunConfig& cfg) {
  EvalOptions o;
  const auto policy = parse_unparsed_policy(cfg.get_string("eval.unparsed"));
  if (!policy) throw ConfigError("eval.unparsed must be harmful, unharmful or exclude");
  o.unparsed = *policy;
  o.frame_union = cfg.get_bool("eval.frame_union");
  o.frames = positive(cfg, "eval.frames");
  o.parallelism = positive(cfg, "eval.parallelism");
  o.seed = stage_seed(cfg, "eval");
  return o;
}

EndpointConfig endpoint_config(const RunConfig& cfg) {
  EndpointConfig e;
  e.url = cfg.get_string("endpoint.url");
  if (e.url.empty()) throw ConfigError("endpoint.url is required for the endpoint backend");
  e.api_key_env = cfg.get_string("endpoint.api_key_env");
  e.timeout_ms = static_cast<int>(positive(cfg, "endpoint.timeout_ms"));
  e.max_attempts = static_cast<int>(positive(cfg, "endpoint.max_attempts"));
  e.initial_backoff_ms = static_cast<int>(non_negative(cfg, "endpoint.initial_backoff_ms"));
  e.backoff_multiplier = cfg.get_double("endpoint.backoff_multiplier");
  e.max_backoff_ms = static_cast<int>(non_negative(cfg, "endpoint.max_backoff_ms"));
  return e;
}

FilterBounds filter_config(const RunConfig& cfg) {
  FilterBounds b{non_negative(cfg, "curate.min_tokens"), non_negative(cfg, "curate.max_tokens")};
  if (b.min_tokens > b.max_tokens) throw ConfigError("curate.min_tokens exceeds curate.max_tokens");
  return b;
}

fs::path RunPaths::eval_report(std::string_view tag) const {
  return workdir / ("eval_" + std::string(tag) + "_report.json");
}
fs::path RunPaths::eval_results(std::string_view tag) const {
  return workdir / ("eval_" + std::string(tag) + "_results.jsonl");
}
fs::path RunPaths::eval_probe(std::string_view tag) const {
  return workdir / ("eval_" + std::string(tag) + "_probe.json");
}

RunPaths run_paths(const RunConfig& cfg) {
  const auto& w = cfg.get_string("workdir");
  if (w.empty()) throw ConfigError("workdir must not be empty");
  return RunPaths{w};
}

ToyCodec codec_for(const RunConfig& cfg) {
  return ToyCodec::for_synthetic(synthetic_config(cfg), grammar_config(cfg));
}

namespace {

std::vector<SftExample> sft_examples(const ToyCodec& codec, const DatasetManifest& records) {
  std::vector<SftExample> out;
  for (const auto& r : records.records()) {
    if (!r.annotation) continue;
    try {
      const auto target = render_target(r.annotation->reasoning, r.annotation->teacher_verdict, codec.grammar());
      out.push_back({codec.featurize(r.sample), codec.target_tokens(target)});
    } catch (const std::exception& e) {
      throw StageError("record " + r.sample.id + " does not fit the policy vocabulary: " + e.what());
    }
  }
  return out;
}

}  // namespace

double sft_loss(const ToyPolicy& policy, const ToyCodec& codec, const DatasetManifest& records) {
  const auto examples = sft_examples(codec, records);
  if (examples.empty()) throw StageError("no annotated records to score");
  double loss = 0.0;
  for (const auto& ex : examples) loss -= logprob(policy, ex.prompt, ex.target);
  return loss / static_cast<double>(examples.size());
}

CurateOutcome run_curate(const RunConfig& cfg, std::ostream& log) {
  const auto paths = run_paths(cfg);
  const auto synth = synthetic_config(cfg);
  const auto grammar = grammar_config(cfg);
  const auto bounds = filter_config(cfg);
  const auto test_fraction = cfg.get_double("curate.test_fraction");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("curate.test_fraction must be in [0, 1)");
  const auto seed = stage_seed(cfg, "curate");

  DatasetManifest input;
  const auto& source = cfg.get_string("curate.source");
  if (source == "synthetic") {
    input = generate_synthetic_task(synth, positive(cfg, "curate.synthetic_n"), seed);
  } else if (source == "manifest") {
    const fs::path in = cfg.get_string("curate.input");
    if (in.empty() || !fs::exists(in)) throw ConfigError("curate.input '" + in.string() + "' does not exist");
    try {
      input = ingest_manifest(in);
    } catch (const ManifestError& e) {
      throw StageError(e.what());
    }
  } else {
    throw ConfigError("curate.source must be synthetic or manifest");
  }

  std::unique_ptr<Annotator> annotator;
  const auto& kind = cfg.get_string("curate.annotator");
  if (kind == "synthetic") annotator = std::make_unique<SyntheticAnnotator>(synth, grammar);
  else if (kind == "endpoint") annotator = std::make_unique<EndpointAnnotator>(endpoint_config(cfg));
  else if (kind != "none") throw ConfigError("curate.annotator must be synthetic, endpoint or none");

  CurateOutcome out;
  out.input = input.size();
  std::vector<Record> annotated;
  std::vector<AnnotationFailure> failures;
  if (annotator) {
    std::vector<Sample> pending;
    for (const auto& r : input.records())
      if (r.annotation) annotated.push_back(r);
      else pending.push_back(r.sample);
    auto run = annotate_cot(pending, *annotator, PromptTemplate::cot_default(), grammar,
                            positive(cfg, "curate.parallelism"));
    annotated.insert(annotated.end(), run.annotated.begin(), run.annotated.end());
    failures = std::move(run.failures);
    // Keep manifest order regardless of which records were already annotated.
    std::map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < input.size(); ++i) order[input[i].sample.id] = i;
    std::ranges::sort(annotated, {}, [&](const Record& r) { return order.at(r.sample.id); });
  } else {
    annotated = input.records();
  }
  out.annotated = annotated.size();
  out.annotation_failures = failures.size();

  auto filtered = filter_annotations(annotated, bounds, grammar);
  out.kept = filtered.kept.size();
  out.rejected = filtered.rejected.size();
  if (filtered.kept.empty()) throw StageError("curation kept no records");
  auto split = split_dataset(DatasetManifest(std::move(filtered.kept)), test_fraction, seed);
  out.train = split.train.size();
  out.test = split.test.size();
  fs::create_directories(paths.workdir);
  write_manifest(split.train, paths.train());
  write_manifest(split.test, paths.test());

  auto summary = seeds(cfg, "curate");
  summary["input"] = out.input;
  summary["annotated"] = out.annotated;
  summary["kept"] = out.kept;
  summary["train"] = out.train;
  summary["test"] = out.test;
  summary["modality_counts"] = split.train.modality_counts();
  summary["source_counts"] = split.train.source_counts();
  std::map<std::string, std::size_t> reasons;
  for (const auto& r : filtered.rejected) ++reasons[r.reason];
  summary["rejections"] = reasons;
  summary["annotation_failures"] = json::array();
  for (const auto& f : failures) summary["annotation_failures"].push_back({{"id", f.id}, {"reason", f.reason}});
  write_text(paths.curation_summary(), summary.dump(2) + "\n");
  log << "curate: " << out.input << " input, " << out.kept << " kept, " << out.train << " train / " << out.test
      << " test -> " << paths.workdir.string() << "\n";
  return out;
}

SftOutcome run_sft(const RunConfig& cfg, std::ostream& log) {
  const auto paths = run_paths(cfg);
  const auto options = sft_config(cfg);
  const auto codec = codec_for(cfg);
  const auto embed_dim = positive(cfg, "policy.embed_dim");
  const auto max_len = positive(cfg, "policy.max_len");
  const auto init_scale = cfg.get_double("policy.init_scale");
  if (!(init_scale >= 0)) throw ConfigError("policy.init_scale must be >= 0");
  const auto seed = stage_seed(cfg, "sft");

  const auto train = read_stage_manifest(paths.train(), "curate");
  const auto examples = sft_examples(codec, train);
  if (examples.empty()) throw StageError("training manifest " + paths.train().string() + " has no annotated records");

  ToyPolicy policy(codec.shape(static_cast<Eigen::Index>(embed_dim), max_len));
  Rng rng(mix_seed(seed, hash_name("init")));
  policy.init_embedding(rng, init_scale);

  SftOutcome out;
  out.examples = examples.size();
  out.initial_loss = sft_loss(policy, codec, train);
  policy = train_sft(std::move(policy), examples, options, mix_seed(seed, hash_name("order")), &out.curve);
  out.final_loss = sft_loss(policy, codec, train);

  std::string lines = seeds(cfg, "sft").dump() + "\n";
  lines += json{{"epoch", "initial"}, {"loss", out.initial_loss}}.dump() + "\n";
  for (const auto& e : out.curve)
    lines += json{{"epoch", e.epoch}, {"mean_batch_loss", e.mean_loss}, {"steps", e.steps}}.dump() + "\n";
  lines += json{{"epoch", "final"}, {"loss", out.final_loss}}.dump() + "\n";
  fs::create_directories(paths.workdir);
  write_text(paths.sft_log(), lines);
  save_checkpoint({codec, policy, fingerprint(cfg, "sft")}, paths.sft_checkpoint());
  log << "sft: " << out.examples << " examples, loss " << out.initial_loss << " -> " << out.final_loss << "\n";
  return out;
}

MiningReport run_mine(const RunConfig& cfg, std::ostream& log) {
  const auto paths = run_paths(cfg);
  const auto k = positive(cfg, "mine.k");
  const auto temperature = cfg.get_double("mine.temperature");
  if (!(temperature > 0)) throw ConfigError("mine.temperature must be > 0");
  const auto parallelism = positive(cfg, "mine.parallelism");
  const auto ckpt = read_checkpoint(paths.sft_checkpoint(), "sft");
  const auto train = read_stage_manifest(paths.train(), "curate");

  PolicySource source(ckpt.policy, ckpt.codec, temperature);
  MiningResult result;
  try {
    result = mine_hard_samples(source, train, k, stage_seed(cfg, "mine"), parallelism);
  } catch (const std::invalid_argument& e) {
    throw StageError(std::string("mining failed: ") + e.what());
  }
  write_manifest(result.kept, paths.mined());
  write_text(paths.mining_report(), result.report.to_json_lines() + seeds(cfg, "mine").dump() + "\n");
  log << "mine: " << result.report.kept << " kept, " << result.report.all_correct << " all-correct, "
      << result.report.all_incorrect << " all-incorrect\n";
  return result.report;
}

GrpoOutcome run_grpo(const RunConfig& cfg, std::ostream& log) {
  const auto paths = run_paths(cfg);
  const auto config = grpo_config(cfg);
  const auto reward = reward_config(cfg);
  const bool wall = cfg.get_bool("grpo.log_wall_time");
  const auto ckpt = read_checkpoint(paths.sft_checkpoint(), "sft");
  const auto mined = read_stage_manifest(paths.mined(), "mine");
  if (mined.empty()) throw StageError("no hard samples in " + paths.mined().string() + "; nothing to train on");

  std::string lines = seeds(cfg, "grpo").dump() + "\n";
  const auto every = std::max<std::size_t>(1, config.iterations / 10);
  auto on_iteration = [&](const IterationLog& it) {
    lines += it.to_json_line(wall) + "\n";
    if (it.iter % every == 0 || it.iter + 1 == config.iterations)
      log << "grpo: iter " << it.iter << " reward " << it.mean_reward << " r_acc " << it.mean_racc << " len "
          << it.mean_len << "\n";
  };
  TrainResult result = [&] {
    try {
      return train_grpo(ckpt.policy, ckpt.codec, mined, config, reward, stage_seed(cfg, "grpo"), on_iteration);
    } catch (const std::exception& e) {
      throw StageError(std::string("grpo failed: ") + e.what());
    }
  }();
  write_text(paths.grpo_log(), lines);
  save_checkpoint({ckpt.codec, result.policy, fingerprint(cfg, "grpo")}, paths.grpo_checkpoint());
  return {mined.size(), std::move(result.log)};
}

namespace {

std::string eval_tag(const RunConfig& cfg) {
  if (cfg.get_bool("eval.aggregate_only")) return "published";
  if (cfg.get_string("eval.backend") == "endpoint") return "endpoint";
  const auto& which = cfg.get_string("eval.checkpoint");
  return which == "sft" || which == "grpo" ? which : "custom";
}

std::vector<BenchmarkSpec> heldout_benchmarks(const DatasetManifest& test) {
  std::vector<Record> with_response;
  for (const auto& r : test.records())
    if (r.sample.truth.response_label) with_response.push_back(r);
  std::vector<BenchmarkSpec> specs{{"heldout-prompt", EvalTask::prompt_harmfulness, test}};
  if (!with_response.empty())
    specs.push_back({"heldout-response", EvalTask::response_harmfulness, DatasetManifest(std::move(with_response))});
  return specs;
}

// {name, task, manifest, group?} per line; relative manifests resolve
// against the list's directory.
std::vector<std::pair<BenchmarkSpec, std::string>> listed_benchmarks(const fs::path& list) {
  std::ifstream in(list);
  if (!in) throw ConfigError("cannot read eval.benchmarks " + list.string());
  std::vector<std::pair<BenchmarkSpec, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line);
    const auto task = parse_eval_task(j.at("task").get<std::string>());
    if (!task) throw ConfigError("bad task in " + list.string() + ": " + line);
    fs::path m = j.at("manifest").get<std::string>();
    if (m.is_relative()) m = list.parent_path() / m;
    out.push_back({{j.at("name").get<std::string>(), *task, read_stage_manifest(m, "curate")},
                   j.value("group", std::string("All"))});
  }
  return out;
}

json result_json(const EvalResult& r) {
  json failures = json::array();
  for (const auto& f : r.failures) failures.push_back({{"id", f.id}, {"message", f.message}});
  return {{"name", r.name},       {"task", to_string(r.task)}, {"tp", r.counts.tp},
          {"fp", r.counts.fp},    {"fn", r.counts.fn},         {"tn", r.counts.tn},
          {"unparsed", r.unparsed}, {"excluded", r.excluded}, {"sample_count", r.sample_count},
          {"f1", r.f1},           {"failures", failures}};
}

json probe_json(const ProbeResult& p) {
  return {{"samples", p.samples},
          {"compliant", p.compliant},
          {"compliance_rate", p.compliance_rate},
          {"mean_accuracy", p.mean_accuracy},
          {"mean_reward", p.mean_reward},
          {"mean_length", p.mean_length},
          {"failing", p.failing},
          {"mean_failing_length", p.mean_failing_length}};
}

json reports_json(const std::map<std::string, AggregateReport>& reports) {
  json j = json::object();
  for (const auto& [name, r] : reports) j[name] = json::parse(r.to_json());
  return j;
}

}  // namespace

EvalOutcome run_eval(const RunConfig& cfg, std::ostream& log) {
  const auto paths = run_paths(cfg);
  EvalOutcome out;
  out.tag = eval_tag(cfg);
  auto header = seeds(cfg, "eval");

  if (cfg.get_bool("eval.aggregate_only")) {
    const fs::path scores = cfg.get_string("fixture.scores");
    const fs::path groups = cfg.get_string("fixture.groups");
    if (!fs::exists(scores)) throw ConfigError("fixture.scores '" + scores.string() + "' does not exist");
    if (!fs::exists(groups)) throw ConfigError("fixture.groups '" + groups.string() + "' does not exist");
    const auto fixture = load_published_fixture(scores, groups);
    std::set<std::pair<std::string, std::string>> models;
    for (const auto& s : fixture.scores) models.insert({s.table, s.row});
    for (const auto& [table, row] : models) out.reports[table + "/" + row] = fixture.report_for(table, row);
    out.checks = check_reported_averages(fixture);
    json checks = json::array();
    for (const auto& c : out.checks) {
      checks.push_back({{"table", c.reported.table},
                        {"row", c.reported.row},
                        {"grouping", c.reported.grouping},
                        {"group", c.reported.group},
                        {"reported", c.reported.value},
                        {"recomputed", c.recomputed},
                        {"tolerance", c.reported.tolerance},
                        {"within_tolerance", c.within_tolerance}});
      if (!c.within_tolerance)
        log << "eval: " << c.reported.table << "/" << c.reported.row << " " << c.reported.group
            << " recomputes to " << c.recomputed << " vs reported " << c.reported.value << "\n";
    }
    header["checks"] = checks;
  } else {
    const auto options = eval_config(cfg);
    std::unique_ptr<Checkpoint> ckpt;
    std::unique_ptr<TranscriptSource> source;
    if (cfg.get_string("eval.backend") == "endpoint") {
      source = std::make_unique<EndpointSource>(endpoint_config(cfg), PromptTemplate::moderation_default(),
                                                grammar_config(cfg));
    } else if (cfg.get_string("eval.backend") == "policy") {
      const auto& which = cfg.get_string("eval.checkpoint");
      const fs::path path = which == "sft"    ? paths.sft_checkpoint()
                            : which == "grpo" ? paths.grpo_checkpoint()
                                              : fs::path(which);
      ckpt = std::make_unique<Checkpoint>(read_checkpoint(path, which == "grpo" ? "grpo" : "sft"));
      source = std::make_unique<PolicySource>(ckpt->policy, ckpt->codec, 1.0);
    } else {
      throw ConfigError("eval.backend must be policy or endpoint");
    }

    std::vector<std::pair<BenchmarkSpec, std::string>> specs;
    const auto& list = cfg.get_string("eval.benchmarks");
    if (list.empty()) {
      const auto test = read_stage_manifest(paths.test(), "curate");
      for (auto& s : heldout_benchmarks(test)) specs.push_back({std::move(s), "All"});
      if (ckpt) {
        out.probe = probe(*source, test, positive(cfg, "eval.rollouts"), mix_seed(options.seed, hash_name("probe")),
                          reward_config(cfg), options.parallelism);
      }
    } else {
      specs = listed_benchmarks(list);
    }

    Grouping overall{"overall", {}};
    Grouping family{"family", {}};
    std::vector<BenchmarkScore> scores;
    for (const auto& [spec, group] : specs) {
      auto result = run_benchmark(*source, spec, options);
      overall.groups["All"].push_back(spec.name);
      family.groups[group].push_back(spec.name);
      scores.push_back(to_score(result));
      log << "eval: " << spec.name << " f1 " << result.f1 << " (" << result.unparsed << " unparsed of "
          << result.sample_count << ")\n";
      out.results.push_back(std::move(result));
    }
    std::vector<Grouping> groupings{overall};
    if (family.groups.size() > 1) groupings.push_back(family);
    out.reports["heldout"] = build_report(scores, groupings);

    std::string lines;
    for (const auto& r : out.results) lines += result_json(r).dump() + "\n";
    fs::create_directories(paths.workdir);
    write_text(paths.eval_results(out.tag), lines);
    if (out.probe) {
      auto p = probe_json(*out.probe);
      p.update(seeds(cfg, "eval"));
      write_text(paths.eval_probe(out.tag), p.dump(2) + "\n");
      log << "eval: compliance " << out.probe->compliance_rate << ", mean r_acc " << out.probe->mean_accuracy
          << ", failing length " << out.probe->mean_failing_length << "\n";
    }
  }

  header["reports"] = reports_json(out.reports);
  fs::create_directories(paths.workdir);
  write_text(paths.eval_report(out.tag), header.dump(2) + "\n");
  return out;
}

void run_report(const RunConfig& cfg, std::ostream& out) {
  const auto paths = run_paths(cfg);
  const auto tag = eval_tag(cfg);
  const auto path = paths.eval_report(tag);
  if (!fs::exists(path)) throw StageError("missing " + path.string() + "; run `guardrl eval` first");
  std::ifstream in(path);
  const auto j = json::parse(in);
  for (const auto& [name, report] : j.at("reports").items()) {
    const auto r = AggregateReport::from_json(report.dump());
    out << "== " << name << (r.consistent() ? "" : " (averages do not recompute)") << "\n" << r.to_table();
  }
  if (j.contains("checks")) {
    out << "== reported vs recomputed\n";
    for (const auto& c : j.at("checks")) {
      std::ostringstream line;
      line << "  " << c.at("table").get<std::string>() << "/" << c.at("row").get<std::string>() << " "
           << c.at("group").get<std::string>() << ": reported " << c.at("reported").get<double>()
           << ", recomputed " << c.at("recomputed").get<double>() << " (tol "
           << c.at("tolerance").get<double>() << ") " << (c.at("within_tolerance").get<bool>() ? "ok" : "MISS");
      out << line.str() << "\n";
    }
  }
}

}  // namespace guardrl
