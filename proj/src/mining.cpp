#include "guardrl/mining.hpp"

#include <stdexcept>

#include <json.hpp>

#include "guardrl/parallel.hpp"
#include "guardrl/random.hpp"
#include "guardrl/reward.hpp"

namespace guardrl {

std::string_view to_string(MiningDecision d) {
  switch (d) {
    case MiningDecision::kept: return "kept";
    case MiningDecision::all_correct: return "all-correct";
    case MiningDecision::all_incorrect: return "all-incorrect";
  }
  return "kept";
}

MiningDecision classify_rollouts(std::size_t num_correct, std::size_t num_rollouts) {
  if (num_correct == 0) return MiningDecision::all_incorrect;
  if (num_correct >= num_rollouts) return MiningDecision::all_correct;
  return MiningDecision::kept;
}

std::string MiningReport::to_json_lines() const {
  std::string out;
  for (const auto& e : entries) {
    out += nlohmann::json{{"id", e.id},
                          {"num_rollouts", e.num_rollouts},
                          {"num_correct", e.num_correct},
                          {"decision", to_string(e.decision)}}
               .dump();
    out += '\n';
  }
  out += nlohmann::json{{"summary",
                         {{"kept", kept}, {"all_correct", all_correct}, {"all_incorrect", all_incorrect}}}}
             .dump();
  out += '\n';
  return out;
}

MiningResult mine_hard_samples(const TranscriptSource& source, const DatasetManifest& dataset,
                               std::size_t k, std::uint64_t seed, std::size_t parallelism) {
  if (k < 2) throw std::invalid_argument("mining needs k >= 2 rollouts per sample");
  if (dataset.empty()) throw std::invalid_argument("mining dataset is empty");

  const auto grammar = source.grammar();
  const auto counter = source.counter();
  std::vector<std::size_t> correct(dataset.size(), 0);

  auto work = [&](std::size_t i) {
    const Sample& s = dataset[i].sample;
    const auto mode = mode_for(s.truth);
    for (std::size_t j = 0; j < k; ++j) {
      const auto text = source.generate(s, s.media_refs, mix_seed(seed, hash_name(s.id), j));
      const auto parsed = parse_output(text, grammar, mode, counter);
      if (parsed.compliant && accuracy_reward<double>(parsed.verdict, s.truth) == 1.0) ++correct[i];
    }
  };

  parallel_for(dataset.size(), parallelism, work);

  MiningResult result;
  std::vector<Record> kept;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    MiningEntry e{dataset[i].sample.id, k, correct[i], classify_rollouts(correct[i], k)};
    switch (e.decision) {
      case MiningDecision::kept:
        ++result.report.kept;
        kept.push_back(dataset[i]);
        break;
      case MiningDecision::all_correct: ++result.report.all_correct; break;
      case MiningDecision::all_incorrect: ++result.report.all_incorrect; break;
    }
    result.report.entries.push_back(std::move(e));
  }
  result.kept = DatasetManifest(std::move(kept));
  return result;
}

}  // namespace guardrl
