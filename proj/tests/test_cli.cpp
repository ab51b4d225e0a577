#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "darkforge/png_io.hpp"
#include "darkforge/synth_mcr.hpp"
#include "test_util.hpp"

using namespace darkforge;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string err;
};

CliRun cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(DARKFORGE_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  std::ifstream is(err);
  std::ostringstream os;
  os << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

const std::string kToy = " --base-channels 4 --depth 2 --steps 3 --crop 32 --log-every 0";

/// One tiny dataset shared by the tests of this binary.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    data_ = dir_->path() / "data";
    const CliRun r = cli("synth --out " + data_.string() + " --scenes 1 --width 128 --height 96 --seed 5", dir_->path());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path scratch() { return dir_->path(); }
  static test::TempDir* dir_;
  static fs::path data_;
};
test::TempDir* CliFixture::dir_ = nullptr;
fs::path CliFixture::data_;

}  // namespace

TEST(CliUsage, MissingOrUnknownSubcommand) {
  test::TempDir d("cli_usage");
  EXPECT_EQ(cli("", d.path()).code, 2);
  EXPECT_EQ(cli("frobnicate", d.path()).code, 2);
  EXPECT_EQ(cli("synth", d.path()).code, 2);
  EXPECT_EQ(cli("train --data x --out y --preset nope", d.path()).code, 2);
  EXPECT_EQ(cli("infer --model m --out o", d.path()).code, 2);
  EXPECT_EQ(cli("eval --pred p --out o", d.path()).code, 2);
}

TEST(CliUsage, HelpExitsZero) {
  test::TempDir d("cli_help");
  EXPECT_EQ(cli("--help", d.path()).code, 0);
  EXPECT_EQ(cli("train --help", d.path()).code, 0);
}

TEST(CliUsage, UnknownConfigKeyIsUsageError) {
  test::TempDir d("cli_cfg");
  std::ofstream(d / "c.json") << R"({"shot_gain": 100, "colour": 3})";
  const CliRun r = cli("synth --out " + (d / "o").string() + " --config " + (d / "c.json").string(), d.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("colour"), std::string::npos) << r.err;
}

TEST_F(CliFixture, SynthWritesDatasetAndManifest) {
  const Manifest m = read_manifest(data_);
  EXPECT_EQ(m.entries.size(), 8u);
  const nlohmann::json rm = read_json(data_ / "run_manifest.json");
  EXPECT_EQ(rm.at("command"), "synth");
  EXPECT_EQ(rm.at("seed"), 5);
  EXPECT_EQ(rm.at("config").at("width"), 128);
  EXPECT_TRUE(rm.contains("started_utc"));
  EXPECT_TRUE(rm.contains("versions"));
}

TEST_F(CliFixture, SynthIsDeterministic) {
  const fs::path again = scratch() / "again";
  ASSERT_EQ(cli("synth --out " + again.string() + " --scenes 1 --width 128 --height 96 --seed 5", scratch()).code, 0);
  for (const auto& e : fs::directory_iterator(data_)) {
    if (e.path().filename() == "run_manifest.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(again / e.path().filename())) << e.path().filename();
  }
}

TEST_F(CliFixture, SynthConfigFileAndFlagPrecedence) {
  std::ofstream(scratch() / "synth.json") << R"({"bit_depth": 16, "width": 64, "height": 64, "seed": 9})";
  const fs::path out = scratch() / "cfg";
  ASSERT_EQ(cli("synth --out " + out.string() + " --config " + (scratch() / "synth.json").string() + " --width 32",
                scratch())
                .code,
            0);
  const nlohmann::json cfg = read_json(out / "run_manifest.json").at("config");
  EXPECT_EQ(cfg.at("bit_depth"), 16);
  EXPECT_EQ(cfg.at("width"), 32);
  EXPECT_EQ(cfg.at("height"), 64);
}

TEST_F(CliFixture, TrainInferEval) {
  const fs::path run = scratch() / "run";
  CliRun r = cli("train --data " + data_.string() + " --out " + run.string() + kToy, scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(run / "model.dfck"));
  EXPECT_EQ(read_csv(run / "loss.csv").size(), 4u);
  EXPECT_EQ(read_json(run / "run_manifest.json").at("config").at("base_channels"), 4);

  const fs::path run2 = scratch() / "run2";
  ASSERT_EQ(cli("train --data " + data_.string() + " --out " + run2.string() + kToy, scratch()).code, 0);
  EXPECT_EQ(slurp(run / "model.dfck"), slurp(run2 / "model.dfck"));
  EXPECT_EQ(slurp(run / "loss.csv"), slurp(run2 / "loss.csv"));

  const fs::path pred = scratch() / "pred";
  r = cli("infer --model " + (run / "model.dfck").string() + " --data " + data_.string() + " --out " + pred.string(),
          scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  const PngImage rgb = read_png(pred / "scene000_e03_rgb.png");
  EXPECT_EQ(rgb.width, 128u);
  EXPECT_EQ(rgb.height, 96u);
  EXPECT_EQ(rgb.channels, 3u);
  const PngImage mono = read_png(pred / "scene000_e03_mono.png");
  EXPECT_EQ(mono.channels, 1u);
  EXPECT_EQ(mono.width, 128u);

  const fs::path same = scratch() / "eval_same";
  ASSERT_EQ(cli("eval --pred " + pred.string() + " --gt " + pred.string() + " --out " + same.string(), scratch()).code,
            0);
  const auto rows = read_csv(same / "metrics.csv");
  ASSERT_EQ(rows.size(), 16u + 2u);
  EXPECT_EQ(rows[0][1], "psnr_db");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(std::stod(rows[i][1]), 100.0);
    EXPECT_EQ(std::stod(rows[i][2]), 1.0);
  }

  const fs::path vs_gt = scratch() / "eval_gt";
  r = cli("eval --pred " + pred.string() + " --data " + data_.string() + " --out " + vs_gt.string() + " --eight-bit",
          scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto gt_rows = read_csv(vs_gt / "metrics.csv");
  ASSERT_EQ(gt_rows.size(), 18u);
  EXPECT_EQ(gt_rows[0].size(), 6u);
  EXPECT_LT(std::stod(gt_rows.back()[1]), 100.0);
}

TEST_F(CliFixture, InferOnSingleInputWithSidecarRatio) {
  const fs::path run = scratch() / "run_single";
  ASSERT_EQ(cli("train --data " + data_.string() + " --out " + run.string() + kToy + " --preset wo-ca", scratch()).code,
            0);
  const fs::path out = scratch() / "single";
  const CliRun r = cli("infer --model " + (run / "model.dfck").string() + " --input " +
                        (data_ / "scene000_e00.raw").string() + " --gt-exposure 0.375 --bit-depth 16 --out " +
                        out.string(),
                    scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_png(out / "scene000_e00_rgb.png").bit_depth, 16u);
  EXPECT_EQ(read_json(out / "run_manifest.json").at("command"), "infer");
}

TEST_F(CliFixture, TrainConfigFileAndBadValues) {
  std::ofstream(scratch() / "train.json") << R"({"preset": "l2", "base_channels": 4, "depth": 2, "steps": 2, "crop": 32})";
  const fs::path run = scratch() / "run_cfg";
  CliRun r = cli("train --data " + data_.string() + " --out " + run.string() + " --config " +
                  (scratch() / "train.json").string() + " --log-every 0",
              scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  const nlohmann::json cfg = read_json(run / "run_manifest.json").at("config");
  EXPECT_EQ(cfg.at("preset"), "l2");
  EXPECT_EQ(cfg.at("loss"), "L2");
  EXPECT_EQ(cfg.at("steps"), 2);

  r = cli("train --data " + data_.string() + " --out " + (scratch() / "bad").string() + " --base-channels 4 --depth 2 --steps 3 --crop 30 --log-every 0",
          scratch());
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliFixture, RuntimeErrorsExitOne) {
  EXPECT_EQ(cli("infer --model " + (scratch() / "missing.dfck").string() + " --data " + data_.string() + " --out " +
                    (scratch() / "x").string(),
                scratch())
                .code,
            1);
  EXPECT_EQ(cli("train --data " + (scratch() / "nowhere").string() + " --out " + (scratch() / "y").string(), scratch())
                .code,
            1);
}

TEST_F(CliFixture, AlignIdenticalReference) {
  const fs::path ref = data_ / "scene000_e07.raw";
  const fs::path out = scratch() / "aligned";
  const CliRun r = cli("align --ref-src " + ref.string() + " --ref-dst " + ref.string() + " --bracket '" +
                        (data_ / "scene000_e0*.raw").string() + "' --out " + out.string(),
                    scratch());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(out / "align_report.csv");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0][0], "file");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double ratio = std::stod(rows[i][3]);
    EXPECT_GE(ratio, 0.0);
    EXPECT_LE(ratio, 1.0);
  }
  EXPECT_EQ(slurp(out / "scene000_e05.raw"), slurp(data_ / "scene000_e05.raw"));

  EXPECT_EQ(cli("align --ref-src " + ref.string() + " --ref-dst " + ref.string() + " --bracket '" +
                    (scratch() / "none*.raw").string() + "' --out " + out.string(),
                scratch())
                .code,
            2);
}

TEST(CliGradcheck, ReportsAndTolerance) {
  test::TempDir d("cli_grad");
  const CliRun ok = cli("gradcheck --out " + (d / "g").string(), d.path());
  ASSERT_EQ(ok.code, 0) << ok.err;
  const auto rows = read_csv(d / "g" / "gradcheck.csv");
  ASSERT_GE(rows.size(), 21u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][3], "true") << rows[i][0];
    EXPECT_LT(std::stod(rows[i][1]), 1e-4) << rows[i][0];
  }
  EXPECT_TRUE(fs::exists(d / "g" / "run_manifest.json"));
  EXPECT_EQ(cli("gradcheck --tolerance 1e-300 --out " + (d / "h").string(), d.path()).code, 1);
}
