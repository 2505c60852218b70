#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sloclas/cli.hpp"
#include "test_util.hpp"

using namespace sloclas;
namespace fs = std::filesystem;

namespace {

Config small_config() {
  return Config::from_string(
      "classes = bells,horn,whistle\n"
      "samples_per_class = 4\n"
      "doa_step = 45\n"
      "doa_count = 8\n"
      "epochs = 2\n"
      "hidden = 16\n"
      "batch_size = 8\n");
}

struct Captured {
  std::ostringstream out, err;
  cli::Streams io() { return {out, err}; }
};

int run_binary(const std::string& args) {
  const std::string cmd = std::string(SLC_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Simulated data plus features shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir;
    Captured c;
    ASSERT_EQ(cli::cmd_simulate(small_config(), data(), c.io()), 0) << c.err.str();
    ASSERT_EQ(cli::cmd_features(small_config(), data() / "manifest.csv", feats(), c.io()), 0) << c.err.str();
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path data() { return dir_->path() / "data"; }
  static fs::path feats() { return dir_->path() / "feat"; }
  static fs::path root() { return dir_->path(); }

  static testutil::TempDir* dir_;
};

testutil::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Config, UnknownKeyIsConfigErrorNamingKey) {
  try {
    Config::from_string("seed = 3\nlearnig_rate = 0.1\n");
    FAIL() << "no throw";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
    EXPECT_NE(std::string(e.what()).find("learnig_rate"), std::string::npos);
  }
}

TEST(Config, DefaultsAndOverrides) {
  Config c = Config::from_string("# comment\nepochs = 7  # trailing\n");
  EXPECT_EQ(c.get_int("epochs"), 7);
  EXPECT_EQ(c.get_int("batch_size"), 32);
  EXPECT_EQ(c.get_double("eta_deg"), 5.0);
  EXPECT_EQ(c.get_double("lambda"), 0.99);
  c.set_override("epochs=9");
  EXPECT_EQ(c.get_int("epochs"), 9);
  EXPECT_FALSE(c.get_optional_double("snr_db"));
  EXPECT_ERRC(c.set_override("nonsense"), Errc::config);
}

TEST(Binary, InvalidConfigKeyExitsTwo) {
  testutil::TempDir dir;
  std::ofstream(dir / "bad.cfg") << "bogus_key = 1\n";
  EXPECT_EQ(run_binary("--config " + (dir / "bad.cfg").string() + " simulate --out " + (dir / "x").string()), 2);
  EXPECT_EQ(run_binary("--set bogus=1 simulate --out " + (dir / "x").string()), 2);
  EXPECT_EQ(run_binary("frobnicate"), 2);
}

TEST_F(CliPipeline, SimulateRowCountIsProduct) {
  const Manifest m = read_manifest(data() / "manifest.csv");
  EXPECT_EQ(m.rows.size(), 3u * 4u * 8u);
}

TEST_F(CliPipeline, SimulateIsDeterministic) {
  Captured c;
  ASSERT_EQ(cli::cmd_simulate(small_config(), root() / "again", c.io()), 0);
  EXPECT_EQ(file_digest(root() / "again" / "manifest.csv"), file_digest(data() / "manifest.csv"));
  EXPECT_EQ(file_digest(root() / "again" / "doa_046" / "horn_0003.wav"), file_digest(data() / "doa_046" / "horn_0003.wav"));
}

TEST_F(CliPipeline, FeaturesOneFilePerRowWithDim618) {
  const Manifest m = read_manifest(data() / "manifest.csv");
  for (const auto& r : m.rows) {
    const FeatureMatrix f = read_feature_file(feature_path(feats(), r));
    EXPECT_EQ(f.cols(), 618);
    EXPECT_EQ(f.rows(), 2);  // 255 ms clip, 170 ms segments, 85 ms hop
  }
}

TEST_F(CliPipeline, FeaturesReportCorruptAndMissingWavs) {
  const fs::path copy = root() / "broken";
  fs::create_directories(copy);
  fs::copy(data(), copy, fs::copy_options::recursive);
  std::ofstream(copy / "doa_001" / "bells_0001.wav", std::ios::trunc) << "garbage";
  fs::remove(copy / "doa_091" / "horn_0002.wav");
  Captured c;
  EXPECT_EQ(cli::cmd_features(small_config(), copy / "manifest.csv", root() / "broken_feat", c.io()), 1);
  EXPECT_NE(c.err.str().find("doa_001_bells_0001"), std::string::npos) << c.err.str();
  EXPECT_NE(c.err.str().find("doa_091_horn_0002"), std::string::npos) << c.err.str();
}

TEST_F(CliPipeline, TrainWritesLogAndConfigAndRefusesOverwrite) {
  Captured c;
  const fs::path model = root() / "models" / "m.slcm";
  ASSERT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), model, false, c.io()), 0) << c.err.str();
  std::ifstream log(model.string() + ".metrics.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch,train_loss,mae,acc_theta,acc_event");
  int lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  EXPECT_EQ(lines, 2);

  const Config saved = Config::load(model.string() + ".config");
  EXPECT_EQ(saved.get_string("classes"), "bells,horn,whistle");
  EXPECT_EQ(saved.get_int("hidden"), 16);
  EXPECT_EQ(saved.to_text(), small_config().to_text());

  Captured again;
  EXPECT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), model, false, again.io()), 3);
  EXPECT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), model, true, again.io()), 0);
}

TEST_F(CliPipeline, LambdaOneLogsEventAccuracyAsNotApplicable) {
  Config cfg = small_config();
  cfg.set("lambda", "1");
  Captured c;
  const fs::path model = root() / "doa_only.slcm";
  ASSERT_EQ(cli::cmd_train(cfg, data() / "manifest.csv", feats(), model, true, c.io()), 0) << c.err.str();
  std::ifstream log(model.string() + ".metrics.csv");
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) EXPECT_EQ(line.substr(line.rfind(',') + 1), "NA") << line;
}

TEST_F(CliPipeline, TrainTwiceGivesIdenticalCheckpoint) {
  Captured c;
  ASSERT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), root() / "a.slcm", true, c.io()), 0);
  ASSERT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), root() / "b.slcm", true, c.io()), 0);
  EXPECT_EQ(file_digest(root() / "a.slcm"), file_digest(root() / "b.slcm"));
}

TEST_F(CliPipeline, EvalDefaultsEtaToFiveAndWritesJson) {
  Captured c;
  const fs::path model = root() / "e.slcm";
  ASSERT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), model, true, c.io()), 0);
  ASSERT_EQ(cli::cmd_eval(small_config(), model, data() / "manifest.csv", feats(), std::nullopt, root() / "r.json", c.io()), 0)
      << c.err.str();
  std::ifstream in(root() / "r.json");
  const EvalReport r = report_from_json(nlohmann::json::parse(in));
  EXPECT_EQ(r.eta_deg, 5.0);
  EXPECT_EQ(r.num_samples, static_cast<long long>(read_manifest(data() / "manifest.csv").rows_in(Split::test).size()));
  EXPECT_NE(c.out.str().find("ACC_theta"), std::string::npos);
}

TEST_F(CliPipeline, EvalWithMismatchedClassCountIsShapeError) {
  ModelShape shape;
  shape.hidden = 8;
  shape.num_classes = 3;
  save_checkpoint(SlcModel::create(shape, 1), root() / "c3.slcm");
  Captured c;
  EXPECT_EQ(cli::cmd_eval(small_config(), root() / "c3.slcm", data() / "manifest.csv", feats(), 5.0, root() / "r3.json", c.io()), 1);
  EXPECT_NE(c.err.str().find("shape error"), std::string::npos) << c.err.str();
}

TEST_F(CliPipeline, PredictWritesPosteriorAndRejectsWrongChannelCount) {
  Captured c;
  const fs::path model = root() / "p.slcm";
  ASSERT_EQ(cli::cmd_train(small_config(), data() / "manifest.csv", feats(), model, true, c.io()), 0);
  const fs::path post = root() / "out.f32";
  ASSERT_EQ(cli::cmd_predict(small_config(), model, data() / "doa_091" / "bells_0001.wav", post, c.io()), 0) << c.err.str();
  EXPECT_EQ(fs::file_size(post), 360u * 4u);
  EXPECT_NE(c.out.str().find("doa_deg"), std::string::npos);
  EXPECT_NE(c.out.str().find("top3"), std::string::npos);

  AudioClip stereo(SampleMatrix::Constant(2, 12000, 0.1), 48000);
  write_wav(stereo, root() / "stereo.wav");
  Captured bad;
  EXPECT_EQ(cli::cmd_predict(small_config(), model, root() / "stereo.wav", std::nullopt, bad.io()), 1);
  EXPECT_NE(bad.err.str().find("channel-count"), std::string::npos) << bad.err.str();
}

TEST_F(CliPipeline, LockedOutputDirectoryIsRefused) {
  const fs::path out = root() / "locked";
  fs::create_directories(out);
  std::ofstream(out / ".slc.lock");
  Captured c;
  EXPECT_EQ(cli::cmd_features(small_config(), data() / "manifest.csv", out, c.io()), 1);
  EXPECT_NE(c.err.str().find("locked"), std::string::npos);
}

TEST_F(CliPipeline, BinaryEndToEnd) {
  const std::string m = (data() / "manifest.csv").string();
  const std::string model = (root() / "bin.slcm").string();
  const std::string sets = "--set classes=bells,horn,whistle --set epochs=1 --set hidden=8 --set batch_size=8 ";
  EXPECT_EQ(run_binary(sets + "train --manifest " + m + " --features " + feats().string() + " --out " + model), 0);
  EXPECT_EQ(run_binary(sets + "train --manifest " + m + " --features " + feats().string() + " --out " + model), 3);
  EXPECT_EQ(run_binary("eval --model " + model + " --manifest " + m + " --features " + feats().string()), 0);
  EXPECT_TRUE(fs::exists(model + ".report.json"));
  EXPECT_EQ(run_binary("predict --model " + model + " --wav " + (data() / "doa_001" / "horn_0001.wav").string()), 0);
}
