#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "agln/dataprep.hpp"
#include "agln/detector.hpp"

namespace agln {

struct TextureParams {
  double base_gray = 0.55;
  double noise_amplitude = 0.06;
  double noise_scale = 8.0;  // lattice spacing in pixels
  double speckle_density = 0.01;
  // Isolated single-pixel air voids, darker than the surrounding paste by pore_depth.
  double pore_density = 0.003;
  double pore_depth = 0.4;

  void validate() const;
  bool operator==(const TextureParams&) const = default;
};

// Largest brightness change a single speckle can add on top of the smooth noise.
inline constexpr double kSpeckleContrast = 0.08;

enum class DamageKind { none, popout, exfoliation, sand_leak };

std::string damage_kind_name(DamageKind k);
DamageKind parse_damage_kind(const std::string& s);

struct AreaBounds {
  std::size_t min = 0;
  std::size_t max = 0;
  bool operator==(const AreaBounds&) const = default;
};

struct CorpusConfig {
  std::size_t tile_size = 64;
  std::size_t train_d = 200, train_h = 200, test_d = 50, test_h = 50;
  AreaBounds popout{40, 180};
  AreaBounds exfoliation{60, 260};
  AreaBounds sand_leak{30, 140};
  // Damage stays this many pixels away from the tile edge.
  std::size_t margin = 6;
  std::uint64_t master_seed = 0;
  TextureParams texture;

  void validate() const;
  const AreaBounds& bounds(DamageKind k) const;
  bool operator==(const CorpusConfig&) const = default;
};

struct LabeledTile {
  RgbImage image;
  BinaryMask truth;
  DamageKind kind = DamageKind::none;
};

RgbImage gen_texture(std::uint64_t seed, std::size_t size, const TextureParams& p);

// Paints one damage region; the truth mask is exactly the set of changed pixels.
LabeledTile inject_damage(const RgbImage& tile, DamageKind kind, std::uint64_t seed, const CorpusConfig& cfg);

struct CorpusEntry {
  std::string file;   // relative to the corpus root
  std::string split;  // trainD, trainH, testD, testH
  Domain domain = Domain::healthy;
  DamageKind kind = DamageKind::none;
  std::uint64_t seed = 0;
  std::string truth;  // relative path, empty for healthy tiles

  bool operator==(const CorpusEntry&) const = default;
};

inline const char* const kCorpusSplits[] = {"trainD", "trainH", "testD", "testH"};

// Writes <root>/{trainD,trainH,testD,testH}/*.png, <root>/truth/*.png and
// <root>/manifest.jsonl. The directory is staged next to `root` and renamed into place.
std::vector<CorpusEntry> gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& root);

std::vector<CorpusEntry> read_corpus_manifest(const std::filesystem::path& root);

// The train (or test) split as an unpaired dataset, in manifest order.
UnpairedDataset corpus_dataset(const std::filesystem::path& root, const std::string& phase);

struct TileEval {
  std::string file;
  Domain domain = Domain::healthy;
  DamageKind kind = DamageKind::none;
  double iou = 0.0;  // damaged tiles only
  std::size_t blobs = 0;
};

struct EvalMetrics {
  double mean_iou_damaged = 0.0;
  double healthy_fp_rate = 0.0;
  std::size_t n_tiles = 0;
  std::size_t n_damaged = 0;
  std::size_t n_healthy = 0;
  std::vector<TileEval> per_tile;
};

using MaskPredictor = std::function<BinaryMask(const CorpusEntry&, const Tensor<float>& tile)>;

// Scores predicted masks over the test split.
EvalMetrics evaluate_masks(const std::filesystem::path& root, const MaskPredictor& predict);
EvalMetrics eval_detection(const std::filesystem::path& root, const Generator& gen_r, const DetectConfig& cfg);

void write_metrics(const std::filesystem::path& path, const EvalMetrics& m, const std::string& config_digest);

}  // namespace agln
