#include "guardrl/backend.hpp"

#include "guardrl/random.hpp"

namespace guardrl {

std::string PolicySource::generate(const Sample& sample, std::span<const std::string>,
                                   std::uint64_t seed) const {
  Rng rng(seed);
  const auto traj = guardrl::sample(policy_, codec_.featurize(sample), temperature_, rng);
  return codec_.decode(traj.tokens);
}

TokenCounter PolicySource::counter() const {
  return [&codec = codec_](std::string_view text) { return codec.count(text); };
}

EndpointSource::EndpointSource(EndpointConfig config, PromptTemplate tmpl, TranscriptGrammar grammar)
    : client_(std::move(config)), template_(std::move(tmpl)), grammar_(std::move(grammar)) {
  template_.validate();
}

std::string EndpointSource::generate(const Sample& sample, std::span<const std::string> media,
                                     std::uint64_t) const {
  Sample shown = sample;
  shown.media_refs.assign(media.begin(), media.end());
  return external_policy_sample(client_, {template_.render(shown), shown.media_refs});
}

}  // namespace guardrl
