#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "guardrl/pipeline.hpp"
#include "test_util.hpp"

using namespace guardrl;
using guardrl::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = GUARDRL_SOURCE_DIR;

RunConfig small_config(const fs::path& workdir) {
  RunConfig cfg;
  cfg.merge_json(json{{"workdir", workdir.string()},
                      {"seed", 3},
                      {"curate", {{"synthetic_n", 200}}},
                      {"mine", {{"k", 4}}},
                      {"grpo",
                       {{"iterations", 3},
                        {"rollout_batch", 8},
                        {"actor_batch", 8},
                        {"group_size", 4},
                        {"learning_rate", 0.02}}},
                      {"eval", {{"rollouts", 2}}},
                      {"fixture",
                       {{"scores", (kSource / "data" / "published_f1.jsonl").string()},
                        {"groups", (kSource / "data" / "published_groups.json").string()}}}}
                     .dump());
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> json_lines(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

int cli(const std::string& args) {
  const auto cmd = std::string("\"") + GUARDRL_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// One full run shared by the tests that only inspect artifacts.
class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipeline");
    cfg_ = new RunConfig(small_config(dir_->path()));
    std::ostringstream log;
    curate_ = run_curate(*cfg_, log);
    sft_ = run_sft(*cfg_, log);
    mine_ = run_mine(*cfg_, log);
    grpo_ = run_grpo(*cfg_, log);
    eval_ = run_eval(*cfg_, log);
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete dir_;
  }
  static RunPaths paths() { return run_paths(*cfg_); }

  static TempDir* dir_;
  static RunConfig* cfg_;
  static CurateOutcome curate_;
  static SftOutcome sft_;
  static MiningReport mine_;
  static GrpoOutcome grpo_;
  static EvalOutcome eval_;
};

TempDir* PipelineRun::dir_ = nullptr;
RunConfig* PipelineRun::cfg_ = nullptr;
CurateOutcome PipelineRun::curate_;
SftOutcome PipelineRun::sft_;
MiningReport PipelineRun::mine_;
GrpoOutcome PipelineRun::grpo_;
EvalOutcome PipelineRun::eval_;

}  // namespace

TEST_F(PipelineRun, CurateTallies) {
  EXPECT_EQ(curate_.input, 200u);
  EXPECT_EQ(curate_.annotated + curate_.annotation_failures, curate_.input);
  EXPECT_EQ(curate_.kept + curate_.rejected, curate_.annotated);
  EXPECT_EQ(curate_.train + curate_.test, curate_.kept);
  EXPECT_GT(curate_.train, curate_.test);
  EXPECT_EQ(ingest_manifest(paths().train()).size(), curate_.train);
  EXPECT_EQ(ingest_manifest(paths().test()).size(), curate_.test);
  const auto summary = json::parse(slurp(paths().curation_summary()));
  EXPECT_EQ(summary.at("seed"), 3);
  const auto train = ingest_manifest(paths().train());
  for (const auto& r : train.records()) ASSERT_TRUE(r.annotation) << r.sample.id;
}

TEST_F(PipelineRun, SftReducesLossAndReloads) {
  EXPECT_EQ(sft_.examples, curate_.train);
  EXPECT_LT(sft_.final_loss, sft_.initial_loss);
  EXPECT_EQ(sft_.curve.size(), 3u);
  const auto ckpt = load_checkpoint(paths().sft_checkpoint());
  const auto train = ingest_manifest(paths().train());
  EXPECT_NEAR(sft_loss(ckpt.policy, ckpt.codec, train), sft_.final_loss, 1e-9);
  EXPECT_NE(ckpt.config_fingerprint.find("\"stage\":\"sft\""), std::string::npos);
}

TEST_F(PipelineRun, MiningArtifacts) {
  EXPECT_EQ(mine_.kept + mine_.all_correct + mine_.all_incorrect, curate_.train);
  EXPECT_EQ(ingest_manifest(paths().mined()).size(), mine_.kept);
  const auto lines = json_lines(paths().mining_report());
  EXPECT_EQ(lines.back().at("stage"), "mine");
}

TEST_F(PipelineRun, GrpoLog) {
  ASSERT_EQ(grpo_.log.size(), 3u);
  EXPECT_EQ(grpo_.prompts, mine_.kept);
  const auto lines = json_lines(paths().grpo_log());
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0].at("stage"), "grpo");
  EXPECT_EQ(lines[0].at("stage_seed"), stage_seed(*cfg_, "grpo"));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    EXPECT_EQ(lines[i].at("iter"), i - 1);
    EXPECT_EQ(lines[i].at("num_rollouts"), 32);
    EXPECT_FALSE(lines[i].contains("wall_ms"));
    EXPECT_EQ(lines[i].at("kl"), 0.0);
  }
  EXPECT_TRUE(fs::exists(paths().grpo_checkpoint()));
}

TEST_F(PipelineRun, EvalArtifacts) {
  EXPECT_EQ(eval_.tag, "grpo");
  ASSERT_EQ(eval_.results.size(), 2u);
  EXPECT_EQ(eval_.results[0].name, "heldout-prompt");
  EXPECT_EQ(eval_.results[0].sample_count, curate_.test);
  ASSERT_TRUE(eval_.probe);
  EXPECT_EQ(eval_.probe->samples, 2 * curate_.test);
  EXPECT_TRUE(fs::exists(paths().eval_probe("grpo")));
  EXPECT_EQ(json_lines(paths().eval_results("grpo")).size(), 2u);
  const auto report = json::parse(slurp(paths().eval_report("grpo")));
  EXPECT_TRUE(report.at("reports").contains("heldout"));

  std::ostringstream out;
  run_report(*cfg_, out);
  EXPECT_NE(out.str().find("== heldout"), std::string::npos);
  EXPECT_NE(out.str().find("heldout-prompt"), std::string::npos);
}

TEST_F(PipelineRun, SftCheckpointEval) {
  RunConfig cfg = *cfg_;
  cfg.set("eval.checkpoint", "sft");
  std::ostringstream log;
  const auto out = run_eval(cfg, log);
  EXPECT_EQ(out.tag, "sft");
  EXPECT_TRUE(fs::exists(paths().eval_report("sft")));
}

TEST_F(PipelineRun, KlPenaltyShowsInLog) {
  RunConfig cfg = *cfg_;
  cfg.set("grpo.kl_beta", "0.1");
  cfg.set("grpo.learning_rate", "0.1");
  std::ostringstream log;
  const auto out = run_grpo(cfg, log);
  EXPECT_EQ(out.log.front().kl, 0.0);
  double later = 0;
  for (std::size_t i = 1; i < out.log.size(); ++i) later += out.log[i].kl;
  EXPECT_GT(later, 0.0);
}

TEST_F(PipelineRun, CliReportMatchesLibrary) {
  const auto config = dir_->path() / "cli.json";
  std::ofstream(config) << cfg_->to_json();
  EXPECT_EQ(cli("report --config \"" + config.string() + "\""), 0);
}

TEST(Pipeline, CurateIsDeterministic) {
  TempDir a("curate_a");
  TempDir b("curate_b");
  std::ostringstream log;
  run_curate(small_config(a.path()), log);
  run_curate(small_config(b.path()), log);
  EXPECT_EQ(slurp(a.path() / "train.jsonl"), slurp(b.path() / "train.jsonl"));
  EXPECT_EQ(slurp(a.path() / "test.jsonl"), slurp(b.path() / "test.jsonl"));

  TempDir c("curate_c");
  auto other = small_config(c.path());
  other.set("seed", "4");
  run_curate(other, log);
  EXPECT_NE(slurp(a.path() / "train.jsonl"), slurp(c.path() / "train.jsonl"));
}

TEST(Pipeline, MissingUpstreamArtifact) {
  TempDir dir("missing");
  const auto cfg = small_config(dir.path());
  std::ostringstream log;
  EXPECT_THROW(run_sft(cfg, log), StageError);
  EXPECT_THROW(run_mine(cfg, log), StageError);
  EXPECT_THROW(run_grpo(cfg, log), StageError);
  EXPECT_THROW(run_eval(cfg, log), StageError);
  EXPECT_THROW(run_report(cfg, log), StageError);
  try {
    run_sft(cfg, log);
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("guardrl curate"), std::string::npos);
  }
}

TEST(Pipeline, BadSettingsAreConfigErrors) {
  TempDir dir("badcfg");
  std::ostringstream log;
  auto cfg = small_config(dir.path());
  cfg.set("curate.source", "manifest");
  EXPECT_THROW(run_curate(cfg, log), ConfigError);
  cfg.set("curate.input", (dir.path() / "nope.jsonl").string());
  EXPECT_THROW(run_curate(cfg, log), ConfigError);

  cfg = small_config(dir.path());
  cfg.set("curate.annotator", "oracle");
  EXPECT_THROW(run_curate(cfg, log), ConfigError);

  cfg = small_config(dir.path());
  cfg.set("curate.test_fraction", "1.5");
  EXPECT_THROW(run_curate(cfg, log), ConfigError);

  cfg = small_config(dir.path());
  cfg.set("grpo.group_size", "0");
  EXPECT_THROW(grpo_config(cfg), ConfigError);
  cfg = small_config(dir.path());
  cfg.set("endpoint.url", "");
  EXPECT_THROW(endpoint_config(cfg), ConfigError);
  cfg = small_config(dir.path());
  cfg.set("reward.sigma", "0");
  EXPECT_THROW(reward_config(cfg), ConfigError);
}

TEST(Pipeline, StageSeedsDiffer) {
  const RunConfig cfg;
  EXPECT_NE(stage_seed(cfg, "sft"), stage_seed(cfg, "grpo"));
  RunConfig other;
  other.set("seed", "8");
  EXPECT_NE(stage_seed(cfg, "sft"), stage_seed(other, "sft"));
}

TEST(Pipeline, AggregateOnlyReproducesPublishedAverages) {
  TempDir dir("aggregate");
  auto cfg = small_config(dir.path());
  cfg.set("eval.aggregate_only", "true");
  std::ostringstream log;
  const auto out = run_eval(cfg, log);
  EXPECT_EQ(out.tag, "published");
  ASSERT_FALSE(out.checks.empty());
  for (const auto& c : out.checks)
    EXPECT_TRUE(c.within_tolerance) << c.reported.table << "/" << c.reported.row << " " << c.reported.group;
  std::ostringstream table;
  run_report(cfg, table);
  EXPECT_NE(table.str().find("reported vs recomputed"), std::string::npos);
  EXPECT_EQ(table.str().find("MISS"), std::string::npos);

  cfg.set("fixture.scores", (dir.path() / "absent.jsonl").string());
  EXPECT_THROW(run_eval(cfg, log), ConfigError);
}

TEST(PipelineCli, ExitCodes) {
  TempDir dir("cli");
  const auto wd = "--set workdir=\"" + dir.path().string() + "\" ";
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("curate --set no.such.key=1"), 2);
  EXPECT_EQ(cli("curate --set seed=abc"), 2);
  EXPECT_EQ(cli("curate --config \"" + (dir.path() / "nope.json").string() + "\""), 2);
  EXPECT_EQ(cli("sft " + wd), 3);
  EXPECT_EQ(cli("curate " + wd + "--set curate.synthetic_n=60"), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "train.jsonl"));
  EXPECT_EQ(cli("mine " + wd), 3);
}
