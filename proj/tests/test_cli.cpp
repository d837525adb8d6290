#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qsnet_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + std::to_string(rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

CmdResult run_cli(const TempDir& td, const std::string& args) {
  const fs::path out_f = td.path / "cmd_stdout.txt";
  const fs::path err_f = td.path / "cmd_stderr.txt";
  const std::string cmd = std::string(QSNET_CLI_PATH) + " " + args + " > " + out_f.string() +
                          " 2> " + err_f.string();
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = (rc != -1 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_f);
  r.err = slurp(err_f);
  return r;
}

std::string extract_line_value(const std::string& text, const std::string& prefix) {
  size_t pos = text.find(prefix);
  if (pos == std::string::npos) return "";
  pos += prefix.size();
  const size_t end = text.find('\n', pos);
  return text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

// Small dataset + tiny-model flags shared across tests.
const char* kTinyModel = "--channels 8 --groups 2 --units 1 --rates 1,2,3,4";

std::string gen_small(const TempDir& td, const std::string& name, const std::string& extra = "") {
  const std::string out = (td.path / name).string();
  const CmdResult r = run_cli(
      td, "gen-data --out " + out + " --n-train 2 --n-val 1 --n-test 1 --height 40 --width 40 "
          "--seed 7 " + extra);
  EXPECT_EQ(r.code, 0) << r.err;
  return out;
}

std::string train_tiny(const TempDir& td, const std::string& data, const std::string& name,
                       const std::string& extra = "") {
  const std::string out = (td.path / name).string();
  const CmdResult r = run_cli(
      td, "train --data " + data + " --out " + out + " " + kTinyModel +
          " --crop 16 --batch 1 --steps 6 --eval-interval 3 --seed 3 " + extra);
  EXPECT_EQ(r.code, 0) << r.err;
  return out;
}

}  // namespace

TEST(CliGenData, CountsAndRerunHashIdentical) {
  TempDir td;
  const std::string a = gen_small(td, "dsA");
  const std::string b = gen_small(td, "dsB");
  EXPECT_TRUE(fs::exists(fs::path(a) / "index.json"));
  // 4 files per sample, 4 samples total.
  EXPECT_EQ(std::distance(fs::directory_iterator(fs::path(a) / "train"), fs::directory_iterator{}),
            8);
  EXPECT_EQ(slurp(fs::path(a) / "index.json"), slurp(fs::path(b) / "index.json"));
  const CmdResult ra = run_cli(td, "gen-data --out " + a + " --n-train 2 --n-val 1 --n-test 1 "
                                   "--height 40 --width 40 --seed 7");
  const CmdResult rb = run_cli(td, "gen-data --out " + b + " --n-train 2 --n-val 1 --n-test 1 "
                                   "--height 40 --width 40 --seed 7");
  EXPECT_EQ(extract_line_value(ra.out, "index hash: "), extract_line_value(rb.out, "index hash: "));
  EXPECT_NE(extract_line_value(ra.out, "index hash: "), "");
}

TEST(CliGenData, EmptySplitWarnsButSucceeds) {
  TempDir td;
  const CmdResult r = run_cli(td, "gen-data --out " + (td.path / "ds0").string() +
                                  " --n-train 0 --n-val 1 --n-test 1 --height 40 --width 40");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning: empty train split"), std::string::npos);
}

TEST(CliGenData, BadFlagsExitTwo) {
  TempDir td;
  EXPECT_EQ(run_cli(td, "gen-data").code, 2);                          // missing required --out
  EXPECT_EQ(run_cli(td, "gen-data --out x --n-train -3").code, 2);     // negative count
  EXPECT_EQ(run_cli(td, "gen-data --out x --definitely-not-a-flag 1").code, 2);
  EXPECT_EQ(run_cli(td, "").code, 2);                                  // subcommand required
}

TEST(CliAnalyze, FractionPrintedAndCsvRowsMatch) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const std::string csv = (td.path / "sp.csv").string();
  const CmdResult r = run_cli(td, "analyze-sparsity --images " + ds +
                                  "/train --suffix _rainy.png --no-mixture --out-csv " + csv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("sparse fraction:"), std::string::npos);
  EXPECT_NE(r.out.find("(2 scored, 0 skipped)"), std::string::npos);
  std::ifstream f(csv);
  std::string line;
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  EXPECT_EQ(rows, 1 + 2);  // header + one row per scored image
}

TEST(CliAnalyze, SmallBinCountRejected) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const CmdResult r = run_cli(td, "analyze-sparsity --images " + ds + "/train --bins 8");
  EXPECT_EQ(r.code, 2);
}

TEST(CliTrain, RerunIsBitIdentical) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const std::string r1 = train_tiny(td, ds, "run1");
  const std::string r2 = train_tiny(td, ds, "run2");
  const std::string log1 = slurp(fs::path(r1) / "train_log.csv");
  EXPECT_FALSE(log1.empty());
  EXPECT_EQ(log1, slurp(fs::path(r2) / "train_log.csv"));
  EXPECT_EQ(slurp(fs::path(r1) / "checkpoint_final.bin"),
            slurp(fs::path(r2) / "checkpoint_final.bin"));
}

TEST(CliTrain, VariantV1ZeroesThreeWeightsInManifest) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const std::string run = train_tiny(td, ds, "run_v1", "--variant V1");
  const auto manifest = nlohmann::json::parse(slurp(fs::path(run) / "run_manifest.json"));
  const auto& w = manifest.at("loss_weights_effective");
  EXPECT_EQ(w.at("lambda_q").get<double>(), 0.0);
  EXPECT_EQ(w.at("lambda_d").get<double>(), 0.0);
  EXPECT_EQ(w.at("lambda_a").get<double>(), 0.0);
  EXPECT_GT(w.at("lambda_c").get<double>(), 0.0);
  EXPECT_EQ(manifest.at("train_config").at("variant").get<std::string>(), "V1");
}

TEST(CliEvalDerainStudies, EndToEndArtifacts) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const std::string run = train_tiny(td, ds, "run");
  const std::string ckpt = run + "/checkpoint_final.bin";
  const std::string rep = (td.path / "rep").string();

  const CmdResult ev = run_cli(td, "eval --data " + ds + " --checkpoint " + ckpt + " --out " +
                                   rep + " --split test --panels 1");
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("mean PSNR"), std::string::npos);
  EXPECT_TRUE(fs::exists(fs::path(rep) / "scores_test.csv"));
  EXPECT_TRUE(fs::exists(fs::path(rep) / "summary_test.json"));
  EXPECT_TRUE(fs::exists(fs::path(rep) / "panel_test_0000.png"));

  const std::string derained = (td.path / "derained.png").string();
  const CmdResult dr = run_cli(td, "derain --checkpoint " + ckpt + " --in " + ds +
                                   "/test/test_0000_rainy.png --out " + derained + " --gt " + ds +
                                   "/test/test_0000_bg.png");
  ASSERT_EQ(dr.code, 0) << dr.err;
  EXPECT_TRUE(fs::exists(derained));
  EXPECT_NE(dr.out.find("input PSNR"), std::string::npos);
  EXPECT_NE(dr.out.find("output PSNR"), std::string::npos);

  const std::string scales = (td.path / "scales.csv").string();
  const CmdResult sc = run_cli(td, "scale-study --data " + ds + " --checkpoint " + ckpt +
                                   " --out-csv " + scales);
  ASSERT_EQ(sc.code, 0) << sc.err;
  std::ifstream f(scales);
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "metric,C1,C2,C3,C4,C5,all");

  const std::string ab_csv = (td.path / "ablation.csv").string();
  const CmdResult ab = run_cli(td, "ablate --data " + ds + " --ckpt-v1 " + ckpt + " --ckpt-v2 " +
                                   ckpt + " --ckpt-v3 " + ckpt + " --ckpt-v4 " + ckpt + " --out " +
                                   ab_csv);
  ASSERT_EQ(ab.code, 0) << ab.err;
  std::ifstream af(ab_csv);
  std::string line;
  int rows = 0;
  while (std::getline(af, line)) ++rows;
  EXPECT_EQ(rows, 13);  // header + 4 variants x 3 splits

  const CmdResult be = run_cli(td, "bench --checkpoint " + ckpt +
                                   " --height 32 --width 32 --warmup 1 --runs 3");
  ASSERT_EQ(be.code, 0) << be.err;
  EXPECT_NE(be.out.find("sharing-on"), std::string::npos);
  EXPECT_NE(be.out.find("sharing-off"), std::string::npos);
}

TEST(CliErrors, MissingInputsNameTheKeyAndExitTwo) {
  TempDir td;
  const std::string ds = gen_small(td, "ds");
  const CmdResult ev = run_cli(td, "eval --data " + ds + " --checkpoint nope.bin --out x");
  EXPECT_EQ(ev.code, 2);
  EXPECT_NE(ev.err.find("--checkpoint"), std::string::npos);
  const CmdResult ab = run_cli(td, "ablate --data " + ds +
                                   " --ckpt-v1 a --ckpt-v2 b --ckpt-v3 c --ckpt-v4 d --out t.csv");
  EXPECT_EQ(ab.code, 2);
  EXPECT_NE(ab.err.find("--ckpt-v1"), std::string::npos);
  const CmdResult tr = run_cli(td, "train --data " + (td.path / "no_such").string() + " --out x");
  EXPECT_EQ(tr.code, 2);
  EXPECT_NE(tr.err.find("--data"), std::string::npos);
}

TEST(CliConfig, ThreeLayerPrecedence) {
  TempDir td;
  // Layer 1: defaults (seed 0). Layer 2: config file (seed 9, n-train 2).
  // Layer 3: explicit flags (seed 7) override the file.
  const fs::path cfg = td.path / "gen.cfg";
  std::ofstream(cfg) << "# generated config\nn-train = 2\nseed = 9\n";
  const std::string base = " --n-val 1 --n-test 1 --height 40 --width 40";
  const CmdResult from_cfg =
      run_cli(td, "gen-data --out " + (td.path / "c1").string() + base + " --config " + cfg.string());
  const CmdResult from_flags =
      run_cli(td, "gen-data --out " + (td.path / "c2").string() + base + " --n-train 2 --seed 9");
  const CmdResult overridden =
      run_cli(td, "gen-data --out " + (td.path / "c3").string() + base + " --config " +
                  cfg.string() + " --seed 7");
  const CmdResult defaults =
      run_cli(td, "gen-data --out " + (td.path / "c4").string() + base + " --n-train 2");
  ASSERT_EQ(from_cfg.code, 0) << from_cfg.err;
  const auto hash = [](const CmdResult& r) { return extract_line_value(r.out, "index hash: "); };
  EXPECT_EQ(hash(from_cfg), hash(from_flags));   // file overrides defaults
  EXPECT_NE(hash(from_cfg), hash(defaults));     // (seed 9 vs default 0)
  EXPECT_NE(hash(overridden), hash(from_cfg));   // flag overrides file
  const CmdResult same_as_override =
      run_cli(td, "gen-data --out " + (td.path / "c5").string() + base + " --n-train 2 --seed 7");
  EXPECT_EQ(hash(overridden), hash(same_as_override));
  const CmdResult missing =
      run_cli(td, "gen-data --out x" + base + " --config " + (td.path / "nope.cfg").string());
  EXPECT_EQ(missing.code, 2);
}
