#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asc/ablation.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "asc_cli_test";

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ASC_CLI_PATH) + " " + args + " 2>" + (kWork / "stderr.txt").string();
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 256> buf{};
  while (fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small enough for a full pipeline in a few seconds.
const char* kTinyConfig = R"({
  "data_num_videos": 8, "data_video_seconds": 4, "data_min_speakers": 2,
  "split_val": 0.25, "split_test": 0.25,
  "clip_k": 3, "clip_tau": 0.12, "clip_crop": 16, "clip_mel_bands": 8,
  "encoder_widths": [4, 8], "encoder_blocks": 1,
  "ste_epochs": 1, "ste_batch": 4, "ste_val_stride": 3,
  "asc_L": 3, "asc_S": 2, "asc_T": 0.8, "asc_hidden": 8, "asc_mlp_hidden": 8,
  "asc_epochs": 1, "asc_lr": 0.001, "ablate_seeds": [0]
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(kWork / "tiny.json") << kTinyConfig;
  }
  static std::string cfg() { return "--config " + (kWork / "tiny.json").string(); }
  static std::string dir(const char* name) { return (kWork / name).string(); }
};

}  // namespace

TEST_F(Cli, GenDataIsByteIdenticalForASeed) {
  ASSERT_EQ(run("gen-data --seed 7 " + cfg() + " --data " + dir("g1")).code, 0);
  ASSERT_EQ(run("gen-data --seed 7 " + cfg() + " --data " + dir("g2")).code, 0);
  for (const char* f : {"manifest.json", "tracks.csv"}) {
    EXPECT_EQ(slurp(kWork / "g1" / f), slurp(kWork / "g2" / f)) << f;
  }
  ASSERT_EQ(run("gen-data --seed 8 " + cfg() + " --data " + dir("g3")).code, 0);
  EXPECT_NE(slurp(kWork / "g1" / "tracks.csv"), slurp(kWork / "g3" / "tracks.csv"));
}

TEST_F(Cli, PipelineEmitsMapInUnitInterval) {
  const std::string d = " --data " + dir("p"), r = " --run " + dir("p_run");
  ASSERT_EQ(run("gen-data " + cfg() + d).code, 0);
  ASSERT_EQ(run("train-ste " + cfg() + d + r).code, 0);
  ASSERT_EQ(run("embed" + d + r).code, 0);
  ASSERT_EQ(run("train-asc" + d + r).code, 0);
  Result e = run("eval" + d + r);
  ASSERT_EQ(e.code, 0);
  ASSERT_EQ(e.out.rfind("mAP ", 0), 0u) << e.out;
  const double map = std::stod(e.out.substr(4));
  EXPECT_GE(map, 0.0);
  EXPECT_LE(map, 1.0);

  auto j = nlohmann::json::parse(slurp(kWork / "p_run" / "eval.json"));
  EXPECT_NEAR(j["map"].get<double>(), map, 1e-15);
  for (const char* f : {"ste.ckpt", "asc.ckpt", "ste_metrics.csv", "asc_metrics.csv", "detections.csv", "splits.json",
                        "manifest_train-ste.json", "manifest_eval.json"}) {
    EXPECT_TRUE(fs::exists(kWork / "p_run" / f)) << f;
  }
  auto m = nlohmann::json::parse(slurp(kWork / "p_run" / "manifest_train-ste.json"));
  EXPECT_EQ(m["seed"], 0);
  EXPECT_FALSE(m["version"].get<std::string>().empty());
  EXPECT_EQ(m["config"]["ste_epochs"], 1);
  EXPECT_EQ(slurp(kWork / "p_run" / "ste_metrics.csv").rfind("epoch,split,loss,ap\n", 0), 0u);

  // A rerun with the saved configuration reproduces the metric trace.
  const std::string r2 = " --run " + dir("p_run2");
  ASSERT_EQ(run("train-ste " + cfg() + d + r2).code, 0);
  EXPECT_EQ(slurp(kWork / "p_run" / "ste_metrics.csv"), slurp(kWork / "p_run2" / "ste_metrics.csv"));

  // Attention export for the first test detection.
  auto splits = nlohmann::json::parse(slurp(kWork / "p_run" / "splits.json"));
  const std::string track = splits["test"][0];
  std::string time;
  {
    std::ifstream is(kWork / "p" / "tracks.csv");
    std::string line;
    while (std::getline(is, line)) {
      if (line.find(track) != std::string::npos) {
        time = line.substr(line.find(',') + 1);
        time = time.substr(0, time.find(','));
        break;
      }
    }
  }
  ASSERT_FALSE(time.empty());
  ASSERT_EQ(run("export-attention" + d + r + " --track " + track + " --time " + time + " --prefix " + dir("attn/x")).code, 0);
  EXPECT_TRUE(fs::exists(kWork / "attn" / "x.txt"));
  EXPECT_TRUE(fs::exists(kWork / "attn" / "x.ppm"));

  // Ablation table2: one row per arm, named as the runner names them.
  ASSERT_EQ(run("ablate --suite table2" + d + r).code, 0);
  std::ifstream csv(kWork / "p_run" / "ablation_table2.csv");
  auto rows = asc::read_ablation_csv(csv);
  std::vector<std::string> arms;
  for (const auto& row : rows) arms.push_back(row.arm);
  EXPECT_EQ(arms, (std::vector<std::string>{"no_context", "context_linear", "pairwise_only", "temporal_only", "full",
                                            "mlp_head"}));
}

TEST_F(Cli, HelpEnumeratesEveryKey) {
  Result h = run("train-asc --help");
  EXPECT_EQ(h.code, 0);
  for (const char* flag : {"--seed", "--data-num-videos", "--clip-tau", "--encoder-widths", "--ste-epochs", "--asc-arch",
                           "--asc-distortion", "--eval-metric", "--ablate-L-grid", "--ablate-clip-spacing"}) {
    EXPECT_NE(h.out.find(flag), std::string::npos) << flag;
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("gen-data --data-num-videos many --data " + dir("bad")).code, 1);
  std::ofstream(kWork / "unknown.json") << R"({"no_such_key": 1})";
  EXPECT_EQ(run("gen-data --config " + (kWork / "unknown.json").string() + " --data " + dir("bad")).code, 1);
  EXPECT_EQ(run("gen-data --asc-arch transformer --data " + dir("bad")).code, 1);
  EXPECT_EQ(run("train-asc --asc-arch transformer --run " + dir("bad_run")).code, 1);
  EXPECT_EQ(run("train-ste --data " + dir("missing") + " --run " + dir("missing_run")).code, 2);

  const std::string d = " --data " + dir("nan"), r = " --run " + dir("nan_run");
  ASSERT_EQ(run("gen-data " + cfg() + d).code, 0);
  EXPECT_EQ(run("train-ste " + cfg() + " --ste-lr 1e300" + d + r).code, 3);
}
