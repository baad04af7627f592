#include "guardrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace guardrl {

using nlohmann::json;

namespace {

using K = KeyType;

const std::vector<KeySpec> kRegistry = {
    {"seed", K::integer, "7", "root seed; each stage derives its own seed from it"},
    {"workdir", K::string, "runs/default", "directory for every artifact of a run"},

    {"curate.source", K::string, "synthetic", "synthetic | manifest"},
    {"curate.input", K::string, "", "input manifest (JSONL) when curate.source=manifest"},
    {"curate.synthetic_n", K::integer, "2000", "number of synthetic samples to generate"},
    {"curate.annotator", K::string, "synthetic", "synthetic | endpoint | none (keep existing annotations)"},
    {"curate.test_fraction", K::number, "0.2", "held-out fraction of the curated records"},
    {"curate.min_tokens", K::integer, "10", "minimum reasoning length kept by the filter"},
    {"curate.max_tokens", K::integer, "4096", "maximum reasoning length kept by the filter"},
    {"curate.parallelism", K::integer, "1", "concurrent annotator calls"},

    {"synthetic.vocabulary", K::string, "a,b,c,d,e,f,g,h", "comma-separated task tokens"},
    {"synthetic.banned_patterns", K::string, "f g,c a,h b", "comma-separated banned token sequences"},
    {"synthetic.min_length", K::integer, "4", "minimum request/response length in tokens"},
    {"synthetic.max_length", K::integer, "10", "maximum request/response length in tokens"},
    {"synthetic.harmful_rate", K::number, "0.5", "fraction of harmful requests and responses"},
    {"synthetic.response_rate", K::number, "0.5", "fraction of samples carrying a victim response"},

    {"format.strict", K::boolean, "true", "reject any text outside the think and result blocks"},
    {"reward.alpha", K::number, "0.2", "maximum exploration bonus"},
    {"reward.sigma", K::number, "300", "length scale of the exploration bonus, in tokens"},

    {"policy.embed_dim", K::integer, "2", "prompt embedding width of the toy policy"},
    {"policy.max_len", K::integer, "64", "generation cap in tokens"},
    {"policy.init_scale", K::number, "0.1", "std of the random prompt-embedding init"},

    {"sft.epochs", K::integer, "3", "passes over the curated training set"},
    {"sft.batch_size", K::integer, "2", "examples per Adam step"},
    {"sft.learning_rate", K::number, "0.05", "initial Adam step size"},
    {"sft.linear_decay", K::boolean, "true", "decay the step size linearly to zero"},

    {"mine.k", K::integer, "8", "rollouts per training sample"},
    {"mine.temperature", K::number, "1", "sampling temperature for mining rollouts"},
    {"mine.parallelism", K::integer, "1", "samples mined concurrently"},

    {"grpo.group_size", K::integer, "16", "rollouts per prompt"},
    {"grpo.clip_epsilon", K::number, "0.2", "ratio clip half-width"},
    {"grpo.kl_beta", K::number, "0", "KL penalty weight against the initial policy"},
    {"grpo.learning_rate", K::number, "2e-06", "Adam step size"},
    {"grpo.rollout_batch", K::integer, "256", "prompts per iteration"},
    {"grpo.actor_batch", K::integer, "128", "prompts per policy update"},
    {"grpo.std_floor", K::number, "1e-06", "groups with reward std at or below this get zero advantage"},
    {"grpo.iterations", K::integer, "200", "rollout/update iterations"},
    {"grpo.inner_epochs", K::integer, "1", "update passes over each iteration's rollouts"},
    {"grpo.temperature", K::number, "1", "rollout sampling temperature"},
    {"grpo.log_wall_time", K::boolean, "false", "include wall-clock time in the training log"},

    {"eval.checkpoint", K::string, "grpo", "sft | grpo | path to a checkpoint"},
    {"eval.backend", K::string, "policy", "policy | endpoint"},
    {"eval.aggregate_only", K::boolean, "false", "score the published fixture instead of running a backend"},
    {"eval.unparsed", K::string, "harmful", "harmful | unharmful | exclude"},
    {"eval.frame_union", K::boolean, "false", "query video samples frame by frame and union the verdicts"},
    {"eval.frames", K::integer, "16", "frames per video in frame-union mode"},
    {"eval.rollouts", K::integer, "4", "sampled transcripts per held-out record for the policy probe"},
    {"eval.parallelism", K::integer, "1", "samples evaluated concurrently"},
    {"eval.benchmarks", K::string, "", "JSONL of {name, task, manifest}; empty uses the held-out split"},

    {"fixture.scores", K::string, "data/published_f1.jsonl", "published per-benchmark F1 fixture"},
    {"fixture.groups", K::string, "data/published_groups.json", "benchmark groupings and reported averages"},

    {"endpoint.url", K::string, "", "completion endpoint, http://host:port/path"},
    {"endpoint.api_key_env", K::string, "GUARDRL_API_KEY", "environment variable holding the bearer token"},
    {"endpoint.timeout_ms", K::integer, "30000", "per-attempt timeout"},
    {"endpoint.max_attempts", K::integer, "3", "attempts per request"},
    {"endpoint.initial_backoff_ms", K::integer, "200", "delay before the first retry"},
    {"endpoint.backoff_multiplier", K::number, "2", "delay growth per retry"},
    {"endpoint.max_backoff_ms", K::integer, "5000", "delay cap"},
};

std::string_view type_name(KeyType t) {
  switch (t) {
    case K::integer: return "int";
    case K::number: return "number";
    case K::boolean: return "bool";
    case K::string: return "string";
  }
  return "string";
}

// Canonical text for a value of the given type, or a ConfigError.
std::string canonical(const KeySpec& spec, std::string_view text) {
  auto bad = [&] {
    return ConfigError("config key " + spec.name + " expects " + std::string(type_name(spec.type)) +
                       ", got '" + std::string(text) + "'");
  };
  switch (spec.type) {
    case K::integer: {
      std::int64_t v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) throw bad();
      return std::to_string(v);
    }
    case K::number: {
      double v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) throw bad();
      return json(v).dump();
    }
    case K::boolean:
      if (text == "true" || text == "1") return "true";
      if (text == "false" || text == "0") return "false";
      throw bad();
    case K::string: return std::string(text);
  }
  throw bad();
}

std::string canonical(const KeySpec& spec, const json& value) {
  switch (spec.type) {
    case K::integer:
      if (!value.is_number_integer()) break;
      return std::to_string(value.get<std::int64_t>());
    case K::number:
      if (!value.is_number()) break;
      return json(value.get<double>()).dump();
    case K::boolean:
      if (!value.is_boolean()) break;
      return value.get<bool>() ? "true" : "false";
    case K::string:
      if (!value.is_string()) break;
      return value.get<std::string>();
  }
  throw ConfigError("config key " + spec.name + " expects " + std::string(type_name(spec.type)) + ", got " +
                    value.dump());
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [k, v] : j.items()) {
    const auto key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) flatten(v, key, out);
    else out.emplace_back(key, v);
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kRegistry) values_[k.name] = canonical(k, std::string_view(k.default_value));
}

const std::vector<KeySpec>& RunConfig::registry() { return kRegistry; }

const KeySpec& RunConfig::spec(std::string_view key) {
  const auto it = std::ranges::find(kRegistry, key, &KeySpec::name);
  if (it == kRegistry.end()) throw ConfigError("unknown config key " + std::string(key));
  return *it;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    merge_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void RunConfig::merge_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  // Validate everything before touching any value.
  std::vector<std::pair<std::string, std::string>> updates;
  for (const auto& [k, v] : flat) updates.emplace_back(k, canonical(spec(k), v));
  for (auto& [k, v] : updates) values_[k] = std::move(v);
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like key=value, got '" + std::string(assignment) + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& s = spec(key);
  values_[s.name] = canonical(s, value);
}

const KeySpec& RunConfig::checked(std::string_view key, KeyType expected) const {
  const auto& s = spec(key);
  if (s.type != expected)
    throw std::logic_error("config key " + s.name + " read as " + std::string(type_name(expected)));
  return s;
}

std::int64_t RunConfig::get_int(std::string_view key) const {
  checked(key, K::integer);
  return std::stoll(values_.find(key)->second);
}

std::uint64_t RunConfig::get_uint(std::string_view key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key " + std::string(key) + " must be >= 0");
  return static_cast<std::uint64_t>(v);
}

double RunConfig::get_double(std::string_view key) const {
  checked(key, K::number);
  return json::parse(values_.find(key)->second).get<double>();
}

bool RunConfig::get_bool(std::string_view key) const {
  checked(key, K::boolean);
  return values_.find(key)->second == "true";
}

const std::string& RunConfig::get_string(std::string_view key) const {
  checked(key, K::string);
  return values_.find(key)->second;
}

std::vector<std::string> RunConfig::get_list(std::string_view key) const {
  std::vector<std::string> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const auto& k : kRegistry) {
    const auto& v = values_.find(k.name)->second;
    if (k.type == K::string) j[k.name] = v;
    else j[k.name] = json::parse(v);
  }
  return j.dump();
}

std::string RunConfig::help_text() {
  std::size_t width = 0;
  for (const auto& k : kRegistry) width = std::max(width, k.name.size());
  std::ostringstream os;
  for (const auto& k : kRegistry) {
    os << "  " << k.name << std::string(width - k.name.size() + 2, ' ') << type_name(k.type)
       << std::string(8 - type_name(k.type).size(), ' ') << "default: "
       << (k.default_value.empty() ? "\"\"" : k.default_value) << "\n"
       << std::string(width + 4, ' ') << k.doc << "\n";
  }
  return os.str();
}

}  // namespace guardrl
