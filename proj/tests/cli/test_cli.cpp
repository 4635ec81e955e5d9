#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "agln/cli.hpp"
#include "json.hpp"
#include "../support/temp_dir.hpp"

using namespace agln;
using agln::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([synth]
train_damaged = 4
train_healthy = 4
test_damaged = 3
test_healthy = 3
[model]
base_channels = 4
residual_blocks = 1
disc_base_channels = 4
disc_layers = 2
[train]
checkpoint_every = 5
)";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::vector<std::string> argv{"agln"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::ostringstream out, err;
  const int code = run_command(argv, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json error_line(const std::string& err) {
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1) << err;
  return nlohmann::json::parse(err);
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  const auto cfg = parse_config_text("");
  EXPECT_EQ(cfg, RunConfig{});
  EXPECT_EQ(cfg.model.lambda, 10.0);
  EXPECT_EQ(cfg.data.unit, 256u);
  EXPECT_EQ(cfg.train.smooth_window, 300u);
  EXPECT_EQ(cfg.train.smooth_stride, 10u);
  EXPECT_EQ(cfg.detect.detect.eps_mode, EpsMode::peak_fraction);
  EXPECT_EQ(cfg.detect.detect.eps_value, 0.3);
}

TEST(Config, NegativeLambdaNamesKey) {
  try {
    parse_config_text("[model]\nlambda = -1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.lambda");
  }
}

TEST(Config, KeyOrderDoesNotChangeDigest) {
  const auto a = parse_config_text("[train]\nlr = 0.001\nseed = 4\n[model]\nlambda = 5\n");
  const auto b = parse_config_text("[model]\nlambda = 5.0\n[train]\nseed = 4\nlr = 1e-3\n");
  EXPECT_EQ(a, b);
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_NE(config_digest(a), config_digest(RunConfig{}));
  EXPECT_EQ(config_digest(a).size(), 64u);
}

TEST(Config, UnknownAndMalformedKeysNamed) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"[model]\nlamda = 1\n", "model.lamda"},
      {"[optim]\nlr = 1\n", "optim.lr"},
      {"[train]\niterations = many\n", "train.iterations"},
      {"[train]\niterations = -5\n", "train.iterations"},
      {"[train]\nlr = 0\n", "train.lr"},
      {"[detect]\neps = 0\n", "detect.eps"},
      {"[detect]\neps_mode = median\n", "detect.eps_mode"},
      {"[detect]\nclear_border = maybe\n", "detect.clear_border"},
      {"[synth]\npopout_max = 10\n", "synth.popout_max"},
      {"[synth]\nbase_gray = 1.5\n", "synth.base_gray"},
      {"[synth]\ntile_size = 66\n", "synth.tile_size"},
  };
  for (const auto& [text, key] : cases) {
    try {
      parse_config_text(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), key) << text;
    }
  }
}

TEST(Config, NormalizedFormRoundTrips) {
  auto cfg = parse_config_text("[detect]\nmin_area = 7\n[data]\ncorpus = /tmp/c\n");
  std::string ini;
  std::string section;
  std::istringstream lines(normalized_config(cfg));
  for (std::string line; std::getline(lines, line);) {
    const auto dot = line.find('.');
    if (line.substr(0, dot) != section) {
      section = line.substr(0, dot);
      ini += "[" + section + "]\n";
    }
    ini += line.substr(dot + 1) + "\n";
  }
  EXPECT_EQ(parse_config_text(ini), cfg);
}

TEST(Config, MinAreaScalesWithTileUnlessSet) {
  const auto def = parse_config_text("");
  EXPECT_EQ(def.detect.resolve(256).min_area, 30u);
  EXPECT_EQ(def.detect.resolve(64).min_area, 2u);
  const auto fixed = parse_config_text("[detect]\nmin_area = 9\n");
  EXPECT_EQ(fixed.detect.resolve(64).min_area, 9u);
  EXPECT_NE(config_digest(def), config_digest(fixed));
}

TEST(Cli, PrepareTilesOneLargeImage) {
  TempDir dir;
  fs::create_directories(dir / "damaged");
  RgbImage img(6000, 3000);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7 % 251);
  write_png(dir / "damaged" / "dam01.png", img);
  const auto r = run({"prepare", "--damaged", (dir / "damaged").string(), "--out", (dir / "prep").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(count_files(dir / "prep" / "tiles", ".png"), 253u);
  const auto manifest = read_manifest(dir / "prep" / "manifest.jsonl");
  ASSERT_EQ(manifest.size(), 253u);
  EXPECT_EQ(manifest.back().row, 10u);
  EXPECT_EQ(manifest.back().col, 22u);
  EXPECT_EQ(read_png(dir / "prep" / manifest[0].file).width, 256u);
  EXPECT_TRUE(fs::exists(dir / "prep" / "run_manifest.json"));
}

TEST(Cli, PrepareBalancesTwoDomains) {
  TempDir dir;
  fs::create_directories(dir / "d");
  fs::create_directories(dir / "h");
  write_png(dir / "d" / "a.png", RgbImage(64, 32));  // 2 tiles at unit 32
  write_png(dir / "h" / "b.png", RgbImage(96, 64));  // 6 tiles
  write(dir / "c.ini", "[data]\nunit = 32\n");
  const auto r = run({"prepare", "--config", (dir / "c.ini").string(), "--damaged", (dir / "d").string(), "--healthy",
                      (dir / "h").string(), "--out", (dir / "prep").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto ds = load_unpaired(dir / "prep" / "manifest.jsonl");
  EXPECT_EQ(ds.damaged.size(), 2u);
  EXPECT_EQ(ds.healthy.size(), 2u);
}

TEST(Cli, TrainZeroIterationsWritesInitialCheckpointOnly) {
  TempDir dir;
  write(dir / "c.ini", kTinyConfig);
  ASSERT_EQ(run({"synth", "--config", (dir / "c.ini").string(), "--out", (dir / "corpus").string()}).code, kExitOk);
  const auto r = run({"train", "--config", (dir / "c.ini").string(), "--data", (dir / "corpus").string(),
                      "--iterations", "0", "--out", (dir / "run").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run"))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir / "run").generic_string());
  std::sort(files.begin(), files.end());
  EXPECT_EQ(files, (std::vector<std::string>{"checkpoints/final.agln", "run_manifest.json"}));
  EXPECT_EQ(load_checkpoint(dir / "run" / "checkpoints" / "final.agln").iteration, 0u);
}

TEST(Cli, SynthTrainEvalPipeline) {
  TempDir dir;
  const auto cfg_path = (dir / "c.ini").string();
  write(cfg_path, kTinyConfig);
  ASSERT_EQ(run({"synth", "--config", cfg_path, "--out", (dir / "corpus").string()}).code, kExitOk);
  EXPECT_EQ(read_corpus_manifest(dir / "corpus").size(), 14u);

  const auto t = run({"train", "--config", cfg_path, "--data", (dir / "corpus").string(), "--iterations", "12",
                      "--out", (dir / "run").string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const auto log = LossLog::read_csv(dir / "run" / "loss.csv");
  EXPECT_EQ(log.size(), 12u);
  for (const char* f : {"loss_g", "loss_cyc", "loss_d_h", "loss_d_d"})
    EXPECT_TRUE(fs::exists(dir / "run" / (std::string(f) + "_smoothed.csv"))) << f;
  for (const char* c : {"ckpt_0000005.agln", "ckpt_0000010.agln", "final.agln"})
    EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / c)) << c;
  const auto rm = nlohmann::json::parse(slurp(dir / "run" / "run_manifest.json"));
  EXPECT_EQ(rm["command"], "train");
  auto effective = parse_config(cfg_path);  // digests cover flag overrides too
  set_config_value(effective, "data.corpus", (dir / "corpus").string());
  set_config_value(effective, "train.iterations", "12");
  EXPECT_EQ(rm["config_digest"], config_digest(effective));
  EXPECT_TRUE(rm["inputs"].contains(cfg_path));
  EXPECT_FALSE(fs::exists(dir / "run.lock"));
  EXPECT_FALSE(fs::exists(dir / "run.partial"));

  const auto ckpt = (dir / "run" / "checkpoints" / "final.agln").string();
  const auto e = run({"eval", "--config", cfg_path, "--data", (dir / "corpus").string(), "--checkpoint", ckpt,
                      "--out", (dir / "ev").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  const auto m = nlohmann::json::parse(slurp(dir / "ev" / "metrics.json"));
  EXPECT_GE(m["mean_iou_damaged"].get<double>(), 0.0);
  EXPECT_LE(m["healthy_fp_rate"].get<double>(), 1.0);
  EXPECT_EQ(m["n_tiles"], 6);

  // Re-running the same command reproduces the metrics file exactly.
  const auto e2 = run({"eval", "--config", cfg_path, "--data", (dir / "corpus").string(), "--checkpoint", ckpt,
                       "--out", (dir / "ev2").string()});
  ASSERT_EQ(e2.code, kExitOk);
  EXPECT_EQ(slurp(dir / "ev" / "metrics.json"), slurp(dir / "ev2" / "metrics.json"));

  const auto d = run({"detect", "--config", cfg_path, "--checkpoint", ckpt, "--input",
                      (dir / "corpus" / "testD").string(), "--eps-mode", "absolute", "--eps", "0.05", "--out",
                      (dir / "det").string()});
  ASSERT_EQ(d.code, kExitOk) << d.err;
  EXPECT_EQ(count_files(dir / "det", ".pgm"), 3u);
  EXPECT_EQ(count_files(dir / "det", ".png"), 9u);  // fake, mask, panel per tile
  const auto drm = nlohmann::json::parse(slurp(dir / "det" / "run_manifest.json"));
  EXPECT_NE(drm["config"].get<std::string>().find("detect.eps_mode=absolute"), std::string::npos);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  const auto cfg_path = (dir / "c.ini").string();
  write(cfg_path, kTinyConfig);
  ASSERT_EQ(run({"synth", "--config", cfg_path, "--out", (dir / "corpus").string()}).code, kExitOk);
  const auto corpus = (dir / "corpus").string();
  ASSERT_EQ(run({"train", "--config", cfg_path, "--data", corpus, "--iterations", "12", "--out", (dir / "a").string()})
                .code,
            kExitOk);
  ASSERT_EQ(run({"train", "--config", cfg_path, "--data", corpus, "--iterations", "12", "--resume",
                 (dir / "a" / "checkpoints" / "ckpt_0000005.agln").string(), "--out", (dir / "b").string()})
                .code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "a" / "checkpoints" / "final.agln"), slurp(dir / "b" / "checkpoints" / "final.agln"));
  const auto full = LossLog::read_csv(dir / "a" / "loss.csv").records();
  const auto tail = LossLog::read_csv(dir / "b" / "loss.csv").records();
  ASSERT_EQ(tail.size(), 7u);
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), full.begin() + 5));
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  write(dir / "bad.ini", "[model]\nlambda = -1\n");
  auto r = run({"train", "--config", (dir / "bad.ini").string(), "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_EQ(error_line(r.err)["key"], "model.lambda");

  r = run({"train", "--out", (dir / "x").string(), "--data", (dir / "nowhere").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_EQ(error_line(r.err)["error"], "data");

  r = run({"frobnicate"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_EQ(error_line(r.err)["error"], "usage");

  r = run({"eval", "--out", (dir / "x").string(), "--data", (dir / "nowhere").string(), "--checkpoint",
           (dir / "missing.agln").string()});
  EXPECT_EQ(r.code, kExitData);

  r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("synth"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "x"));
}

TEST(Cli, NonFiniteTrainingAbortsWithoutOutputs) {
  TempDir dir;
  write(dir / "c.ini", std::string(kTinyConfig) + "lr = 1e30\n");
  ASSERT_EQ(run({"synth", "--config", (dir / "c.ini").string(), "--out", (dir / "corpus").string()}).code, kExitOk);
  const auto r = run({"train", "--config", (dir / "c.ini").string(), "--data", (dir / "corpus").string(),
                      "--iterations", "50", "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, kExitTrainingAborted) << r.err;
  EXPECT_EQ(error_line(r.err)["error"], "training_aborted");
  EXPECT_FALSE(fs::exists(dir / "run"));
  EXPECT_FALSE(fs::exists(dir / "run.partial"));
  EXPECT_FALSE(fs::exists(dir / "run.lock"));
}

TEST(Cli, HeldLockRefusesAndLeavesOutputAlone) {
  TempDir dir;
  fs::create_directories(dir / "corpus");
  write(dir / "corpus" / "keep.txt", "x");
  write(dir / "corpus.lock", "1\n");
  const auto r = run({"synth", "--out", (dir / "corpus").string()});
  EXPECT_EQ(r.code, kExitBusy);
  EXPECT_EQ(slurp(dir / "corpus" / "keep.txt"), "x");
}

TEST(Cli, SeedFlagOverridesSynthSeed) {
  TempDir dir;
  write(dir / "c.ini", kTinyConfig);
  for (const char* s : {"1", "2"})
    ASSERT_EQ(run({"synth", "--config", (dir / "c.ini").string(), "--seed", s, "--out", (dir / s).string()}).code,
              kExitOk);
  EXPECT_NE(slurp(dir / "1" / "manifest.jsonl"), slurp(dir / "2" / "manifest.jsonl"));
  ASSERT_EQ(run({"synth", "--config", (dir / "c.ini").string(), "--seed", "1", "--out", (dir / "1b").string()}).code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "1" / "manifest.jsonl"), slurp(dir / "1b" / "manifest.jsonl"));
}
