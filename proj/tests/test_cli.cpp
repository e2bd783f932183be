#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
CliRun cli(const std::string& args) {
  const std::string cmd = std::string(M2M_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string line_value(const std::string& text, const std::string& key) {
  const auto at = text.find(key);
  if (at == std::string::npos) return "";
  const auto end = text.find('\n', at);
  return text.substr(at + key.size(), end - at - key.size());
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("m2m_cli_" + std::string(testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  const CliRun bad = cli("simulate --no-such-flag");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("simulate --profiles nosuchmic --out " + at("x")).code, 2);
  EXPECT_EQ(cli("simulate --profiles ref").code, 2);  // --out missing
}

TEST_F(Cli, UnpairedTrainingOnOverlappingManifestsIsADataError) {
  ASSERT_EQ(cli("simulate --profiles lofi,ref --minutes 0.5 --mode paired --out " + at("paired")).code, 0);
  const CliRun r = cli("train-cyclegan --mode unpaired --domain-a " + at("paired/lofi") + " --domain-b " +
                    at("paired/ref") + " --out " + at("never.ckpt") + " --steps 1 --width 4 --batch 2");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("PairingViolation"), std::string::npos);
  EXPECT_FALSE(fs::exists(at("never.ckpt")));
  EXPECT_EQ(cli("train-cyclegan --mode paired --domain-a " + at("paired/lofi") + " --domain-b " + at("paired/ref") +
                " --out " + at("paired.ckpt") + " --steps 1 --width 4 --batch 2")
                .code,
            0);
}

TEST_F(Cli, TrainingTwiceIsBitIdenticalAndConfigFlagsOverride) {
  ASSERT_EQ(cli("simulate --profiles lofi,ref --minutes 1 --out " + at("unpaired")).code, 0);
  {
    std::ofstream cfg(at("train.json"));
    cfg << R"({"seed": 4, "train-cyclegan": {"width": 4, "batch": 2, "steps": 3}})";
  }
  const std::string common = "train-cyclegan --config " + at("train.json") + " --domain-a " + at("unpaired/lofi") +
                             " --domain-b " + at("unpaired/ref");
  const CliRun a = cli(common + " --out " + at("a.ckpt") + " --log " + at("a.csv"));
  const CliRun b = cli(common + " --out " + at("b.ckpt") + " --log " + at("b.csv"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(at("a.ckpt")), slurp(at("b.ckpt")));
  EXPECT_EQ(slurp(at("a.csv")), slurp(at("b.csv")));
  EXPECT_NE(a.out.find("steps 3"), std::string::npos);

  const CliRun c = cli(common + " --seed 5 --out " + at("c.ckpt"));
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(slurp(at("a.ckpt")), slurp(at("c.ckpt")));
  const CliRun d = cli(common + " --steps 2 --out " + at("d.ckpt"));
  EXPECT_NE(d.out.find("steps 2"), std::string::npos);

  {
    std::ofstream cfg(at("typo.json"));
    cfg << R"({"train-cyclegan": {"widht": 4}})";
  }
  EXPECT_EQ(cli("train-cyclegan --config " + at("typo.json")).code, 2);
  {
    std::ofstream cfg(at("broken.json"));
    cfg << "{ not json";
  }
  EXPECT_EQ(cli("train-cyclegan --config " + at("broken.json")).code, 2);
}

TEST_F(Cli, EvalUnmodifiedMatchesTrainKeywordValidation) {
  ASSERT_EQ(cli("simulate --kind keywords --per-class 5 --profiles ref,lofi --out " + at("kw_train")).code, 0);
  ASSERT_EQ(cli("simulate --kind keywords --per-class 3 --seed 2 --profiles ref,lofi --out " + at("kw_val")).code, 0);
  const CliRun train = cli("train-keyword --train-dir " + at("kw_train/ref") + " --val-dir " + at("kw_val/ref") +
                        " --mics ref --epochs 3 --out " + at("kw.ckpt"));
  ASSERT_EQ(train.code, 0) << train.out;
  const CliRun ev = cli("eval --pipeline unmodified --model " + at("kw.ckpt") + " --test-dir " + at("kw_val/ref"));
  ASSERT_EQ(ev.code, 0) << ev.out;
  const std::string reported = line_value(train.out, "validation accuracy: ");
  EXPECT_FALSE(reported.empty());
  EXPECT_EQ(reported, line_value(ev.out, "accuracy: "));

  EXPECT_EQ(cli("eval --pipeline sideways --model " + at("kw.ckpt") + " --test-dir " + at("kw_val/ref")).code, 2);
  EXPECT_EQ(cli("eval --pipeline mic2mic --model " + at("kw.ckpt") + " --test-dir " + at("kw_val/ref")).code, 2);
  EXPECT_EQ(cli("eval --model " + at("kw.ckpt") + " --test-dir " + at("empty_dir_missing")).code, 2);

  ASSERT_EQ(cli("calibrate --test-mic lofi --train-mic ref --out " + at("off.json")).code, 0);
  const CliRun cal = cli("eval --pipeline calibrated --offset " + at("off.json") + " --model " + at("kw.ckpt") +
                      " --test-dir " + at("kw_val/lofi") + " --aligned-dir " + at("kw_val/ref") + " --report " +
                      at("cal.json"));
  EXPECT_EQ(cal.code, 0) << cal.out;
  EXPECT_NE(cal.out.find("psnr_mean"), std::string::npos);
  EXPECT_TRUE(fs::exists(at("cal.json")));

  const CliRun decide = cli("pipeline --decide --keyword-model " + at("kw.ckpt") + " --deployment-mic lofi");
  EXPECT_EQ(decide.code, 0);
  EXPECT_NE(decide.out.find("lofi -> ref"), std::string::npos);
  EXPECT_NE(cli("pipeline --decide --keyword-model " + at("kw.ckpt") + " --deployment-mic ref").out.find("no translation"),
            std::string::npos);
}

TEST_F(Cli, BenchLatencyPrintsMedianAndP95) {
  const CliRun r = cli("bench-latency --seconds 2 --repeat 3 --width 4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("median_ms"), std::string::npos);
  EXPECT_NE(r.out.find("p95_ms"), std::string::npos);
  EXPECT_EQ(cli("bench-latency --seconds 0.5").code, 2);
}
