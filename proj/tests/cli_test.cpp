// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "rawnet_cli.hpp"

namespace rawnet {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rawnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rawnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"eval", "--scores", "x", "--bogus"}).code, 2);
  EXPECT_EQ(cli({"train", "--data", "x"}).code, 2);
  EXPECT_EQ(cli({"inspect-filters", "--scale", "bark"}).code, 2);
}

TEST_F(CliTest, HelpDocumentsEveryFlag) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> subcommands{
      {"synth-data", {"--out", "--seed", "--train", "--dev", "--eval", "--attack", "--min-samples", "--max-samples"}},
      {"train", {"--data", "--out", "--preset", "--scale", "--epochs", "--batch-size", "--lr", "--seed",
                 "--val-fraction", "--random-crop", "--log", "--resume"}},
      {"score", {"--checkpoint", "--data", "--split", "--out", "--final"}},
      {"eval", {"--scores", "--tdcf", "--eer-method", "--polarity", "--format", "--expect-attack", "--out"}},
      {"baseline-train", {"--data", "--split", "--out", "--components", "--iterations", "--kmeans-iterations",
                          "--seed", "--n-filters", "--n-ceps"}},
      {"baseline-score", {"--model", "--data", "--split", "--out"}},
      {"fuse", {"--fit", "--model", "--apply", "--out", "--model-out", "--kind", "--c", "--iterations"}},
      {"inspect-filters", {"--scale", "--n-filters", "--kernel-len", "--points", "--out"}},
  };
  for (const auto& [sub, flags] : subcommands) {
    const auto r = cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
}

TEST_F(CliTest, RuntimeErrorsExitOneWithErrorClass) {
  auto r = cli({"eval", "--scores", path("missing.txt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: io_error: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  write_text_file(path("bad.txt"), "u1 - bonafide notanumber\n");
  r = cli({"eval", "--scores", path("bad.txt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: format_error: ", 0), 0u) << r.err;

  r = cli({"synth-data", "--out", path("c"), "--attack", "A17:whistle"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: value_error: ", 0), 0u) << r.err;
}

TEST_F(CliTest, InspectFiltersDumpsBandsAndResponses) {
  auto r = cli({"inspect-filters", "--scale", "inverse_mel", "--points", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::size_t band_rows = 0, response_rows = 0;
  int section = 0;
  while (std::getline(in, line)) {
    if (line.rfind("filter\tf_low_hz", 0) == 0) section = 1;
    else if (line.rfind("filter\t0.0", 0) == 0) section = 2;
    else if (!line.empty() && line[0] != '#') {
      if (section == 1) ++band_rows;
      if (section == 2) {
        ++response_rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5);
      }
    }
  }
  EXPECT_EQ(band_rows, 128u);
  EXPECT_EQ(response_rows, 128u);
  EXPECT_NE(r.out.find("inverse_mel"), std::string::npos);
}

TEST_F(CliTest, FullPipelineSmoke) {
  const auto corpus = path("corpus");
  auto r = cli({"synth-data", "--out", corpus, "--train", "30", "--dev", "10", "--eval", "12", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto protocol = read_text_file(fs::path(corpus) / "protocol.txt");

  // Same flags, same bytes.
  ASSERT_EQ(cli({"synth-data", "--out", path("corpus2"), "--train", "30", "--dev", "10", "--eval", "12", "--seed",
                 "3"}).code,
            0);
  EXPECT_EQ(read_text_file(fs::path(path("corpus2")) / "protocol.txt"), protocol);
  EXPECT_EQ(read_file_bytes(fs::path(corpus) / "wav" / "SYN_E_00001.wav"),
            read_file_bytes(fs::path(path("corpus2")) / "wav" / "SYN_E_00001.wav"));

  const auto ckpt = path("model.ckpt");
  r = cli({"train", "--data", corpus, "--out", ckpt, "--epochs", "3", "--batch-size", "8", "--lr", "1e-3", "--log",
           path("train_log.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch 3"), std::string::npos);
  const auto log = read_text_file(path("train_log.tsv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);

  // A resumed run with a larger budget continues after epoch 3.
  fs::copy_file(ckpt, path("resume.ckpt"));
  r = cli({"train", "--data", corpus, "--out", path("resume.ckpt"), "--epochs", "4", "--batch-size", "8", "--lr",
           "1e-3", "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resuming after epoch 3"), std::string::npos);
  EXPECT_EQ(r.out.find("epoch 3 "), std::string::npos);
  r = cli({"train", "--data", corpus, "--out", path("resume.ckpt"), "--epochs", "5", "--lr", "1e-3", "--resume"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("config hash mismatch"), std::string::npos) << r.err;

  for (const auto* split : {"dev", "eval"}) {
    r = cli({"score", "--checkpoint", ckpt, "--data", corpus, "--split", split, "--out",
             path(std::string("cm_") + split + ".txt")});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto cm_eval = parse_scores(read_text_file(path("cm_eval.txt")));
  EXPECT_EQ(cm_eval.size(), 24u);
  ASSERT_EQ(cli({"score", "--checkpoint", ckpt, "--data", corpus, "--out", path("cm_eval2.txt")}).code, 0);
  EXPECT_EQ(read_text_file(path("cm_eval2.txt")), read_text_file(path("cm_eval.txt")));

  r = cli({"eval", "--scores", path("cm_eval.txt"), "--tdcf", std::string(RAWNET_SOURCE_DIR) + "/config/tdcf_asvspoof2019.txt"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pooled EER"), std::string::npos);
  EXPECT_NE(r.out.find("pooled min t-DCF"), std::string::npos);
  EXPECT_NE(r.out.find("A17"), std::string::npos);

  r = cli({"baseline-train", "--data", corpus, "--out", path("baseline.txt"), "--components", "4", "--iterations",
           "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto* split : {"dev", "eval"}) {
    r = cli({"baseline-score", "--model", path("baseline.txt"), "--data", corpus, "--split", split, "--out",
             path(std::string("gmm_") + split + ".txt")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  r = cli({"fuse", "--fit", path("cm_dev.txt"), "--fit", path("gmm_dev.txt"), "--apply", path("cm_eval.txt"),
           "--apply", path("gmm_eval.txt"), "--out", path("fused_eval.txt"), "--model-out", path("fusion.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"fuse", "--model", path("fusion.txt"), "--apply", path("cm_eval.txt"), "--apply", path("gmm_eval.txt"),
           "--out", path("fused_again.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(path("fused_again.txt")), read_text_file(path("fused_eval.txt")));
  r = cli({"eval", "--scores", path("fused_eval.txt"), "--format", "tsv", "--out", path("fused_report.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(path("fused_report.tsv")).rfind("scope\tattack_id", 0), 0u);

  r = cli({"fuse", "--fit", path("cm_dev.txt"), "--fit", path("gmm_eval.txt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("misaligned"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace rawnet
