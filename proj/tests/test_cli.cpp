#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rispa/cli.hpp"

namespace fs = std::filesystem;
using namespace rispa;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("rispa_cli_" + name);
  fs::remove_all(d);
  return d;
}

const std::vector<std::string> kSmall{"--profiles", "200", "--targets", "200", "--epochs-fse", "5", "--epochs-ide", "3",
                                      "--batch",    "64"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, TrainIdeWithoutFseIsDependencyError) {
  const auto dir = fresh_dir("nofse");
  const auto r = run_cli({"train-ide", "--out", dir.string()});
  EXPECT_EQ(r.code, cli::kMissingDependency);
  EXPECT_NE(r.err.find("missing dependency: train-fse"), std::string::npos);
}

TEST(Cli, EvalWithoutModelsIsDependencyError) {
  const auto dir = fresh_dir("noeval");
  EXPECT_EQ(run_cli({"eval", "--out", dir.string()}).code, cli::kMissingDependency);
  EXPECT_EQ(run_cli({"train-fse", "--out", dir.string()}).code, cli::kMissingDependency);
}

TEST(Cli, ConfigErrorsNameTheKey) {
  const auto dir = fresh_dir("badcfg");
  fs::create_directories(dir);
  const auto scene = (dir / "scene.json").string();
  std::ofstream(scene) << R"({"frequency_hz": 1.1e10, "probes": []})";
  const auto r = run_cli({"collect", "--scene", scene, "--out", dir.string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("'probes'"), std::string::npos);

  const auto bad_lr = run_cli({"collect", "--lr-fse", "-1", "--out", dir.string()});
  EXPECT_EQ(bad_lr.code, cli::kConfig);
  EXPECT_NE(bad_lr.err.find("lr-fse"), std::string::npos);

  EXPECT_EQ(run_cli({"collect", "--preset", "huge"}).code, cli::kConfig);
  EXPECT_EQ(run_cli({"nonsense"}).code, cli::kConfig);
  EXPECT_EQ(run_cli({"adapt", "--out", dir.string()}).code, cli::kConfig);
  EXPECT_EQ(run_cli({"collect", "--scene", (dir / "missing.json").string()}).code, cli::kConfig);
}

TEST(Cli, StagesChainAndRecordProvenance) {
  const auto dir = fresh_dir("chain");
  const auto base = std::vector<std::string>{"--out", dir.string(), "--seed", "4"};
  for (const char* cmd : {"collect", "train-fse", "train-ide", "eval", "special-cases"}) {
    const auto r = run_cli(with(with({cmd}, base), kSmall));
    ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
  }
  for (const char* f : {"dataset.jsonl", "fse.json", "targets.jsonl", "ide.json", "quantizer.json", "eval.csv",
                        "summary.json", "special_cases.csv", "fse_history.csv", "ide_history.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  const auto manifest = read_json((dir / "manifest.json").string());
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 4u);
  const auto& eval = manifest.at("artifacts").at("eval.csv");
  EXPECT_EQ(eval.at("sha256").get<std::string>(), sha256_file((dir / "eval.csv").string()));
  EXPECT_EQ(eval.at("seed").get<std::uint64_t>(), 4u);
  EXPECT_EQ(eval.at("scene_digest").get<std::string>(), scene_digest(default_scene()));
  EXPECT_FALSE(eval.at("config_digest").get<std::string>().empty());
  const auto summary = read_json((dir / "summary.json").string());
  EXPECT_TRUE(summary.contains("deployment_gap_rms"));
  EXPECT_EQ(summary.at("seed").get<std::uint64_t>(), 4u);

  // A different scene needs --force.
  const auto obstacle = (dir / "obstacle.json").string();
  save_scene(default_obstacle_scene(), obstacle);
  const auto refused = run_cli(with({"eval", "--scene", obstacle}, with(base, kSmall)));
  EXPECT_EQ(refused.code, cli::kDigestMismatch);
  const auto forced = run_cli(with({"eval", "--force", "--scene", obstacle}, with(base, kSmall)));
  EXPECT_EQ(forced.code, 0) << forced.err;
}

TEST(Cli, CorruptDatasetIsDataError) {
  const auto dir = fresh_dir("corrupt");
  ASSERT_EQ(run_cli(with({"collect", "--out", dir.string()}, kSmall)).code, 0);
  std::ofstream(dir / "dataset.jsonl", std::ios::app) << "{not json\n";
  const auto r = run_cli(with({"train-fse", "--out", dir.string()}, kSmall));
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("dataset.jsonl:202"), std::string::npos) << r.err;
}

TEST(Cli, OutputDirFromEnvironment) {
  const auto dir = fresh_dir("env");
  ::setenv("RISPA_OUT", dir.string().c_str(), 1);
  const auto r = run_cli(with({"collect"}, kSmall));
  ::unsetenv("RISPA_OUT");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "dataset.jsonl"));
}

TEST(Cli, PipelineTwiceIsByteIdentical) {
  const auto a = fresh_dir("twice_a"), b = fresh_dir("twice_b");
  ASSERT_EQ(run_cli(with({"pipeline", "--seed", "7", "--out", a.string()}, kSmall)).code, 0);
  ASSERT_EQ(run_cli(with({"pipeline", "--seed", "7", "--out", b.string()}, kSmall)).code, 0);
  EXPECT_EQ(sha256_file((a / "eval.csv").string()), sha256_file((b / "eval.csv").string()));
  EXPECT_EQ(sha256_file((a / "fse.json").string()), sha256_file((b / "fse.json").string()));
}
