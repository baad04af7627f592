#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "guardrl/config.hpp"
#include "guardrl/pipeline.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guardrail reasoning pipeline: curate, sft, mine, grpo, eval, report"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Config keys (set in the --config JSON file or with --set key=value; flags win):\n" +
             guardrl::RunConfig::help_text() +
             "Backend secrets are read from the environment variable named by endpoint.api_key_env.\n"
             "Exit codes: 0 success, 2 config error, 3 stage failure.");

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "override a config key, key=value (repeatable)");
  for (const char* name : {"curate", "sft", "mine", "grpo", "eval", "report"}) app.add_subcommand(name);
  app.get_subcommand("curate")->description("generate or ingest, annotate, filter and split the corpus");
  app.get_subcommand("sft")->description("cold-start the toy policy on the curated transcripts");
  app.get_subcommand("mine")->description("keep training samples the SFT policy solves sometimes");
  app.get_subcommand("grpo")->description("group-relative policy optimization on the mined samples");
  app.get_subcommand("eval")->description("score a checkpoint or endpoint, or the published fixture");
  app.get_subcommand("report")->description("print a saved eval report as a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  guardrl::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
  } catch (const guardrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (stage == "curate") guardrl::run_curate(cfg, std::cerr);
    else if (stage == "sft") guardrl::run_sft(cfg, std::cerr);
    else if (stage == "mine") guardrl::run_mine(cfg, std::cerr);
    else if (stage == "grpo") guardrl::run_grpo(cfg, std::cerr);
    else if (stage == "eval") guardrl::run_eval(cfg, std::cerr);
    else guardrl::run_report(cfg, std::cout);
  } catch (const guardrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << stage << " failed: " << e.what() << "\n";
    return kStageFailure;
  }
  return 0;
}
