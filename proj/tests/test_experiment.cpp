#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "adabn/checkpoint.hpp"
#include "adabn/errors.hpp"
#include "adabn/experiment.hpp"
#include "tempdir.hpp"

using namespace adabn;
using nlohmann::json;

namespace {

const std::filesystem::path kConfigs = ADABN_CONFIG_DIR;
const std::string kCli = ADABN_CLI_PATH;

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig small_config() {
  ExperimentConfig c = default_config();
  c.experiment_id = "small";
  c.generator.per_class = 120;
  c.generator.dim = 8;
  for (auto& d : c.domains)
    if (d.shift) d.shift->input_shift.resize(8);
  c.train.epochs = 15;
  c.analysis.sensitivity_batch_counts = {1, 4};
  c.analysis.sensitivity_trials = 3;
  return c;
}

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string capture(const std::string& args) {
  std::string out;
  FILE* pipe = popen((kCli + " " + args + " 2>/dev/null").c_str(), "r");
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  pclose(pipe);
  return out;
}

}  // namespace

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  EXPECT_EQ(config_to_json(load_config(kConfigs / "default.json")), config_to_json(default_config()));
  EXPECT_EQ(config_hash(load_config(kConfigs / "default.json")), config_hash(default_config()));
}

TEST(Config, JsonRoundTripIsStable) {
  for (const char* name : {"default.json", "multi_source.json"}) {
    const ExperimentConfig c = load_config(kConfigs / name);
    EXPECT_EQ(config_to_json(parse_config(config_to_json(c))), config_to_json(c)) << name;
  }
}

TEST(Config, UnknownKeysAreReportedByPath) {
  json j = config_to_json(default_config());
  j["bogus"] = 1;
  EXPECT_EQ(config_error(j), "/bogus: unknown key");
  j = config_to_json(default_config());
  j["train"]["learning_rate"] = 0.1;
  EXPECT_EQ(config_error(j), "/train/learning_rate: unknown key");
  j = config_to_json(default_config());
  j["domains"][1]["shift"]["wobble"] = true;
  EXPECT_EQ(config_error(j), "/domains/1/shift/wobble: unknown key");
}

TEST(Config, WrongTypesAreReportedByPath) {
  json j = config_to_json(default_config());
  j["train"]["base_lr"] = "fast";
  EXPECT_EQ(config_error(j), "/train/base_lr: expected a number");
  j = config_to_json(default_config());
  j["analysis"]["sensitivity_batch_counts"][2] = -4;
  EXPECT_EQ(config_error(j), "/analysis/sensitivity_batch_counts/2: expected a nonnegative integer");
  j = config_to_json(default_config());
  j["domains"] = json::array();
  EXPECT_EQ(config_error(j), "/domains: expected a non-empty array");
}

TEST(Config, HashDependsOnContent) {
  ExperimentConfig a = default_config(), b = default_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.epochs += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Pipeline, SmallRunWritesEveryArtifactAndPasses) {
  TempDir dir;
  const ExperimentConfig cfg = small_config();
  const PipelineResult r = run_pipeline(cfg, dir / "run", false);
  EXPECT_TRUE(r.assertion_failures.empty());
  for (const char* f : {"manifest.json", "results.csv", "report.jsonl", "divergence.csv", "sensitivity.csv",
                        "pilot_vectors.csv", "train_log.tsv", "model.ckpt", "adapted_target.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  }
  const std::string hash = config_hash(cfg);
  std::ifstream report(dir / "run" / "report.jsonl");
  for (std::string line; std::getline(report, line);) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec.at("config_hash"), hash);
    EXPECT_EQ(rec.at("seed"), cfg.seed);
  }
  EXPECT_THROW(run_pipeline(cfg, dir / "run", false), IoError);
}

TEST(Pipeline, RerunReproducesEveryNumber) {
  TempDir dir;
  const ExperimentConfig cfg = small_config();
  run_pipeline(cfg, dir / "a", false);
  run_pipeline(cfg, dir / "b", false);
  for (const char* f : {"results.csv", "report.jsonl", "divergence.csv", "sensitivity.csv", "model.ckpt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  std::ofstream(dir / "bad.json") << R"({"bogus": 1})";
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("repro --config " + (dir / "bad.json").string() + " --out " + (dir / "x").string()), 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.ckpt").string() + " --data " + (dir / "none.adset").string() +
                " --domain t"),
            3);
}

TEST(Cli, GenTrainAdaptEvalChain) {
  TempDir dir;
  const ExperimentConfig cfg = small_config();
  std::ofstream(dir / "cfg.json") << config_to_json(cfg).dump(2);
  const std::string c = " --config " + (dir / "cfg.json").string();
  const std::string data = (dir / "data").string(), out = (dir / "out").string();
  ASSERT_EQ(run("gen-data" + c + " --out " + data), 0);
  EXPECT_EQ(run("gen-data" + c + " --out " + data), 3);
  const std::string target = data + "/data/target.adset", source = data + "/data/source.adset";
  ASSERT_EQ(run("train" + c + " --data " + source + " --out " + out), 0);

  const std::string ckpt = out + "/model.ckpt";
  const std::string src_before = slurp(source), ckpt_before = slurp(ckpt);
  ASSERT_EQ(run("adapt --checkpoint " + ckpt + " --data " + source + " --domain source --out " + out), 0);
  EXPECT_EQ(slurp(source), src_before);
  EXPECT_EQ(slurp(ckpt), ckpt_before);

  const std::string eval_plain = capture("eval --checkpoint " + ckpt + " --data " + source + " --domain source");
  const std::string eval_again = capture("eval --checkpoint " + ckpt + " --data " + source + " --domain source");
  EXPECT_EQ(eval_plain, eval_again);
  const std::string eval_adapted =
      capture("eval --checkpoint " + out + "/adapted_source.ckpt --data " + source + " --domain source");
  const double plain = json::parse(eval_plain).at("accuracy"), adapted = json::parse(eval_adapted).at("accuracy");
  EXPECT_NEAR(adapted, plain, 0.02);
  EXPECT_EQ(json::parse(eval_plain).at("config_hash"), config_hash(cfg));

  ASSERT_EQ(run("adapt --checkpoint " + ckpt + " --data " + target + " --domain target --out " + out), 0);
  const auto before = load_checkpoint(ckpt), after = load_checkpoint(out + "/adapted_target.ckpt");
  EXPECT_EQ(diff_checkpoints(before, after), (std::vector<std::string>{"bank", "active_domain"}));
  EXPECT_EQ(run("describe-checkpoint --checkpoint " + out + "/adapted_target.ckpt"), 0);
}
