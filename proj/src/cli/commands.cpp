#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "agln/cli.hpp"
#include "agln/dataprep.hpp"
#include "agln/digest.hpp"

namespace agln {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

class LockBusy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out.flush()) throw DataError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  auto p = out;
  if (!p.has_filename()) p = p.parent_path();
  p += suffix;
  return p;
}

// One command per output directory: <out>.lock is created exclusively and removed on exit.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& out) : path_(sibling(out, ".lock")) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw LockBusy("output " + out.string() + " is locked by " + path_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

// Outputs are built in <out>.partial and renamed over <out> only when the command succeeds.
class StagedOutput {
 public:
  explicit StagedOutput(const fs::path& out) : out_(out), stage_(sibling(out, ".partial")) {
    fs::remove_all(stage_);
  }
  ~StagedOutput() {
    if (committed_) return;
    std::error_code ec;
    fs::remove_all(stage_, ec);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  const fs::path& dir() const { return stage_; }
  void commit() {
    fs::remove_all(out_);
    fs::rename(stage_, out_);
    committed_ = true;
  }

 private:
  fs::path out_;
  fs::path stage_;
  bool committed_ = false;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_digest;
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::string started;
  std::vector<std::string> outputs;  // relative to the output directory

  void write(const fs::path& dir) const {
    ordered_json in = ordered_json::object();
    for (const auto& [p, d] : inputs) in[p] = d;
    const ordered_json j{{"command", command},      {"argv", argv},           {"config_digest", config_digest},
                         {"config", config_text},   {"inputs", in},           {"tool_version", kToolVersion},
                         {"started", started},      {"finished", utc_now()},  {"outputs", outputs}};
    write_file_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
  }
};

std::vector<std::string> relative_files(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string resume;
  std::optional<std::uint64_t> iterations;
  std::string data;
  std::string damaged;
  std::string healthy;
  std::string checkpoint;
  std::string input;
};

struct Context {
  RunConfig cfg;
  Options opt;
  RunManifest manifest;
  std::ostream& out;
};

std::size_t square_tile_size(const UnpairedDataset& ds) {
  if (ds.damaged.empty() || ds.healthy.empty()) throw DataError("training data needs tiles in both domains");
  const std::size_t s = ds.damaged.front().image.width;
  for (const auto* side : {&ds.damaged, &ds.healthy})
    for (const auto& t : *side)
      if (t.image.width != s || t.image.height != s) {
        throw DataError("tile " + t.record.file + " is not " + std::to_string(s) + "x" + std::to_string(s));
      }
  return s;
}

void run_synth(Context& ctx) {
  auto& cfg = ctx.cfg;
  if (ctx.opt.seed) cfg.synth.master_seed = *ctx.opt.seed;
  StagedOutput staged(ctx.opt.out);
  const auto entries = gen_corpus(cfg.synth, staged.dir());
  ctx.manifest.outputs = relative_files(staged.dir());
  ctx.manifest.outputs.push_back("run_manifest.json");
  ctx.manifest.config_digest = config_digest(cfg);
  ctx.manifest.config_text = normalized_config(cfg);
  ctx.manifest.write(staged.dir());
  staged.commit();
  ctx.out << "synth: " << entries.size() << " tiles -> " << ctx.opt.out << "\n";
}

void run_prepare(Context& ctx) {
  auto& cfg = ctx.cfg;
  if (ctx.opt.seed) cfg.data.seed = *ctx.opt.seed;
  if (!ctx.opt.damaged.empty()) cfg.data.damaged_dir = ctx.opt.damaged;
  if (!ctx.opt.healthy.empty()) cfg.data.healthy_dir = ctx.opt.healthy;
  if (cfg.data.damaged_dir.empty() && cfg.data.healthy_dir.empty()) {
    throw ConfigError("data.damaged_dir", "prepare needs data.damaged_dir and/or data.healthy_dir");
  }

  std::vector<DatasetTile> by_domain[2];
  for (const auto domain : {Domain::damaged, Domain::healthy}) {
    const auto& dir = domain == Domain::damaged ? cfg.data.damaged_dir : cfg.data.healthy_dir;
    if (dir.empty()) continue;
    for (const auto& path : list_pngs(dir)) {
      ctx.manifest.inputs.emplace_back(path.string(), file_digest(path));
      const auto img = read_png(path);
      const auto grid = grid_fit(img.width, img.height, cfg.data.unit);
      const auto fitted = resize_bilinear(img, grid.fitted_width, grid.fitted_height);
      auto tiles = tile(fitted, grid);
      const auto stem = path.stem().string();
      for (std::size_t i = 0; i < tiles.size(); ++i) {
        TileRecord rec;
        rec.source = stem;
        rec.row = i / grid.cols;
        rec.col = i % grid.cols;
        rec.domain = domain;
        rec.file = "tiles/" + domain_name(domain) + "/" + tile_file_name(stem, rec.row, rec.col);
        by_domain[static_cast<int>(domain)].push_back({std::move(tiles[i]), std::move(rec)});
      }
      ctx.out << "prepare: " << path.filename().string() << " -> " << grid.cols << "x" << grid.rows << " tiles\n";
    }
  }

  auto& d_tiles = by_domain[static_cast<int>(Domain::damaged)];
  auto& h_tiles = by_domain[static_cast<int>(Domain::healthy)];
  UnpairedDataset ds;
  if (!d_tiles.empty() && !h_tiles.empty()) {
    ds = assemble_unpaired(std::move(d_tiles), std::move(h_tiles), cfg.data.seed);
  } else {
    ds.damaged = std::move(d_tiles);  // single-domain run: keep every tile
    ds.healthy = std::move(h_tiles);
  }

  StagedOutput staged(ctx.opt.out);
  fs::create_directories(staged.dir());
  for (const auto* side : {&ds.damaged, &ds.healthy})
    for (const auto& t : *side) {
      fs::create_directories((staged.dir() / t.record.file).parent_path());
      write_png(staged.dir() / t.record.file, t.image);
    }
  write_manifest(staged.dir() / "manifest.jsonl", ds.manifest());
  ctx.manifest.outputs = relative_files(staged.dir());
  ctx.manifest.outputs.push_back("run_manifest.json");
  ctx.manifest.config_digest = config_digest(cfg);
  ctx.manifest.config_text = normalized_config(cfg);
  ctx.manifest.write(staged.dir());
  staged.commit();
  ctx.out << "prepare: " << ds.damaged.size() + ds.healthy.size() << " tiles -> " << ctx.opt.out << "\n";
}

// --data names either a prepared manifest file or a synthetic corpus directory.
void apply_data_flag(RunConfig& cfg, const std::string& data) {
  if (data.empty()) return;
  if (fs::is_directory(data)) {
    cfg.data.corpus = data;
    cfg.data.manifest.clear();
  } else {
    cfg.data.manifest = data;
  }
}

void run_train(Context& ctx) {
  auto& cfg = ctx.cfg;
  if (ctx.opt.seed) cfg.train.seed = *ctx.opt.seed;
  if (ctx.opt.iterations) cfg.train.iterations = *ctx.opt.iterations;
  apply_data_flag(cfg, ctx.opt.data);

  UnpairedDataset ds;
  if (!cfg.data.manifest.empty()) {
    ds = load_unpaired(cfg.data.manifest);
    ctx.manifest.inputs.emplace_back(cfg.data.manifest, file_digest(cfg.data.manifest));
  } else if (!cfg.data.corpus.empty()) {
    ds = corpus_dataset(cfg.data.corpus, "train");
    const auto m = fs::path(cfg.data.corpus) / "manifest.jsonl";
    ctx.manifest.inputs.emplace_back(m.string(), file_digest(m));
  } else {
    throw ConfigError("data.corpus", "train needs data.corpus or data.manifest (or --data)");
  }
  const std::size_t size = square_tile_size(ds);

  TrainState state;
  if (!ctx.opt.resume.empty()) {
    state = load_checkpoint(ctx.opt.resume);
    ctx.manifest.inputs.emplace_back(ctx.opt.resume, file_digest(ctx.opt.resume));
    if (state.gen_r.spec.image_size != size) {
      throw DataError("checkpoint expects " + std::to_string(state.gen_r.spec.image_size) + "-px tiles, data has " +
                      std::to_string(size));
    }
    if (state.iteration > cfg.train.iterations) {
      throw ConfigError("train.iterations", "below the resumed checkpoint's iteration " +
                                                std::to_string(state.iteration));
    }
  } else {
    state = init_train_state(cfg.generator_spec(size), cfg.discriminator_spec(), cfg.hyper(), cfg.train.seed);
  }

  StagedOutput staged(ctx.opt.out);
  fs::create_directories(staged.dir() / "checkpoints");
  TrainOptions topt;
  topt.iterations = cfg.train.iterations;
  topt.checkpoint_every = cfg.train.checkpoint_every;
  topt.checkpoint_dir = staged.dir() / "checkpoints";
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(std::move(state), ds, topt, [&](const LossRecord& r) {
    if (r.iter % 100 != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.out << "iter " << r.iter << " loss_g " << r.loss_g << " loss_cyc " << r.loss_cyc << " loss_d_h " << r.loss_d_h
            << " loss_d_d " << r.loss_d_d << " (" << secs << " s)\n"
            << std::flush;
  });

  if (!result.log.empty()) {
    result.log.write_csv(staged.dir() / "loss.csv");
    for (auto f : {LossField::loss_g, LossField::loss_cyc, LossField::loss_d_h, LossField::loss_d_d}) {
      write_smoothed_csv(staged.dir() / (field_name(f) + "_smoothed.csv"),
                         smooth_log(result.log, f, cfg.train.smooth_window, cfg.train.smooth_stride));
    }
  }
  ctx.manifest.outputs = relative_files(staged.dir());
  ctx.manifest.outputs.push_back("run_manifest.json");
  ctx.manifest.config_digest = config_digest(cfg);
  ctx.manifest.config_text = normalized_config(cfg);
  ctx.manifest.write(staged.dir());
  staged.commit();
  ctx.out << "train: iteration " << result.state.iteration << " -> " << ctx.opt.out << "\n";
}

Generator load_generator(Context& ctx) {
  if (ctx.opt.checkpoint.empty()) throw ConfigError("--checkpoint", "a trained checkpoint is required");
  ctx.manifest.inputs.emplace_back(ctx.opt.checkpoint, file_digest(ctx.opt.checkpoint));
  return load_checkpoint(ctx.opt.checkpoint).gen_r;
}

void run_detect(Context& ctx) {
  auto& cfg = ctx.cfg;
  const auto gen = load_generator(ctx);
  const std::size_t size = gen.spec.image_size;
  const auto dcfg = cfg.detect.resolve(size);
  if (ctx.opt.input.empty()) throw ConfigError("--input", "a tile file or directory is required");
  const std::vector<fs::path> inputs =
      fs::is_directory(ctx.opt.input) ? list_pngs(ctx.opt.input) : std::vector<fs::path>{ctx.opt.input};
  if (inputs.empty()) throw DataError("no .png tiles in " + ctx.opt.input);

  StagedOutput staged(ctx.opt.out);
  fs::create_directories(staged.dir());
  ordered_json summary = ordered_json::array();
  for (const auto& path : inputs) {
    ctx.manifest.inputs.emplace_back(path.string(), file_digest(path));
    const auto img = read_png(path);
    if (img.width != size || img.height != size) {
      throw DataError(path.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", generator expects " + std::to_string(size) + "x" + std::to_string(size));
    }
    const auto t = to_tensor(img);
    const auto result = detect(gen, t, dcfg);
    write_detection(staged.dir(), path.stem().string(), t, result);
    summary.push_back({{"file", path.filename().string()}, {"blobs", result.blobs.size()},
                       {"mask_pixels", result.mask.count()}});
    ctx.out << path.filename().string() << ": " << result.blobs.size() << " blob(s)\n";
  }
  write_file_atomic(staged.dir() / "detections.json", summary.dump(2) + "\n");
  ctx.manifest.outputs = relative_files(staged.dir());
  ctx.manifest.outputs.push_back("run_manifest.json");
  ctx.manifest.config_digest = config_digest(cfg);
  ctx.manifest.config_text = normalized_config(cfg);
  ctx.manifest.write(staged.dir());
  staged.commit();
}

void run_eval(Context& ctx) {
  auto& cfg = ctx.cfg;
  if (!ctx.opt.data.empty()) cfg.data.corpus = ctx.opt.data;
  if (cfg.data.corpus.empty()) throw ConfigError("data.corpus", "eval needs a synthetic corpus (data.corpus or --data)");
  const auto gen = load_generator(ctx);
  const auto m_path = fs::path(cfg.data.corpus) / "manifest.jsonl";
  ctx.manifest.inputs.emplace_back(m_path.string(), file_digest(m_path));
  const auto metrics = eval_detection(cfg.data.corpus, gen, cfg.detect.resolve(gen.spec.image_size));

  StagedOutput staged(ctx.opt.out);
  fs::create_directories(staged.dir());
  const auto digest = config_digest(cfg);
  write_metrics(staged.dir() / "metrics.json", metrics, digest);
  ctx.manifest.outputs = {"metrics.json", "run_manifest.json"};
  ctx.manifest.config_digest = digest;
  ctx.manifest.config_text = normalized_config(cfg);
  ctx.manifest.write(staged.dir());
  staged.commit();
  ctx.out << "eval: mean_iou_damaged " << metrics.mean_iou_damaged << " healthy_fp_rate " << metrics.healthy_fp_rate
          << " -> " << ctx.opt.out << "\n";
}

// One JSON object on one line, so scripts can parse the failure reason.
int report(std::ostream& err, int code, const std::string& kind, const std::string& message,
           const std::string& key = "") {
  ordered_json j{{"error", kind}, {"exit_code", code}};
  if (!key.empty()) j["key"] = key;
  j["message"] = message;
  err << j.dump() << "\n";
  return code;
}

}  // namespace

int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised concrete damage detection by reverse-aging GAN"};
  app.name("agln");
  app.require_subcommand(1);

  Options opt;
  std::optional<std::string> eps_mode, eps, min_area, octagon_r;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "INI config file (defaults apply when omitted)");
    sub->add_option("--out", opt.out, "Output directory (replaced atomically on success)")->required();
  };
  const auto add_detect_overrides = [&](CLI::App* sub) {
    sub->add_option("--eps-mode", eps_mode, "absolute | peak_fraction");
    sub->add_option("--eps", eps, "Noise threshold");
    sub->add_option("--min-area", min_area, "Smallest kept component in pixels, or 'auto'");
    sub->add_option("--octagon-r", octagon_r, "Octagon dilation radius");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic labelled corpus");
  add_common(synth);
  synth->add_option("--seed", opt.seed, "Master seed (overrides synth.seed)");

  auto* prepare = app.add_subcommand("prepare", "Tile source images into an unpaired dataset");
  add_common(prepare);
  prepare->add_option("--seed", opt.seed, "Subsampling seed (overrides data.seed)");
  prepare->add_option("--damaged", opt.damaged, "Directory of damaged images (overrides data.damaged_dir)");
  prepare->add_option("--healthy", opt.healthy, "Directory of healthy images (overrides data.healthy_dir)");

  auto* trainc = app.add_subcommand("train", "Train the reverse-aging GAN");
  add_common(trainc);
  trainc->add_option("--seed", opt.seed, "Training seed (overrides train.seed)");
  trainc->add_option("--resume", opt.resume, "Continue from this checkpoint");
  trainc->add_option("--iterations", opt.iterations, "Target iteration count (overrides train.iterations)");
  trainc->add_option("--data", opt.data, "Corpus directory or prepared manifest");

  auto* detectc = app.add_subcommand("detect", "Detect damage in tiles with a trained generator");
  add_common(detectc);
  detectc->add_option("--checkpoint", opt.checkpoint, "Trained checkpoint")->required();
  detectc->add_option("--input", opt.input, "Tile .png file or directory of tiles")->required();
  add_detect_overrides(detectc);

  auto* evalc = app.add_subcommand("eval", "Score detection on a corpus test split");
  add_common(evalc);
  evalc->add_option("--checkpoint", opt.checkpoint, "Trained checkpoint")->required();
  evalc->add_option("--data", opt.data, "Corpus directory (overrides data.corpus)");
  add_detect_overrides(evalc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, kExitConfig, "usage", e.what());
  }

  auto* sub = app.get_subcommands().front();
  try {
    Context ctx{opt.config.empty() ? RunConfig{} : parse_config(opt.config), opt, {}, out};
    for (const auto& [key, value] : {std::pair{"detect.eps_mode", eps_mode}, {"detect.eps", eps},
                                     {"detect.min_area", min_area}, {"detect.octagon_radius", octagon_r}}) {
      if (value) set_config_value(ctx.cfg, key, *value);
    }
    validate_config(ctx.cfg);
    if (!opt.config.empty()) ctx.manifest.inputs.emplace_back(opt.config, file_digest(opt.config));
    ctx.manifest.command = sub->get_name();
    for (int i = 0; i < argc; ++i) ctx.manifest.argv.emplace_back(argv[i]);
    ctx.manifest.started = utc_now();

    OutputLock lock(opt.out);
    const auto& name = sub->get_name();
    if (name == "synth") run_synth(ctx);
    else if (name == "prepare") run_prepare(ctx);
    else if (name == "train") run_train(ctx);
    else if (name == "detect") run_detect(ctx);
    else run_eval(ctx);
    return kExitOk;
  } catch (const ConfigError& e) {
    return report(err, kExitConfig, "config", e.what(), e.key());
  } catch (const LockBusy& e) {
    return report(err, kExitBusy, "busy", e.what());
  } catch (const TrainingAborted& e) {
    return report(err, kExitTrainingAborted, "training_aborted", e.what());
  } catch (const DataError& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const ImageIoError& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const CheckpointError& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const std::invalid_argument& e) {
    return report(err, kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return report(err, kExitInternal, "internal", e.what());
  }
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_command(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace agln
