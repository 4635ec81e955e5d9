#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agln/image.hpp"
#include "agln/models.hpp"

namespace agln {

// Row-major single-channel float map (gray levels or absolute differences).
struct GrayMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  GrayMap() = default;
  GrayMap(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  bool operator==(const GrayMap&) const = default;
};

using DiffMap = GrayMap;

struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h, bool fill = false) : width(w), height(h), bits(w * h, fill ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * width + c] = v ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

struct Blob {
  std::size_t area = 0;
  std::size_t min_row = 0, min_col = 0, max_row = 0, max_col = 0;
  double centroid_row = 0.0, centroid_col = 0.0;

  bool operator==(const Blob&) const = default;
};

enum class EpsMode { absolute, peak_fraction };

std::string eps_mode_name(EpsMode m);
EpsMode parse_eps_mode(const std::string& s);

struct DetectConfig {
  EpsMode eps_mode = EpsMode::peak_fraction;
  double eps_value = 0.3;
  std::size_t min_area = 30;
  std::size_t octagon_radius = 3;
  bool apply_clear_border = true;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const DetectConfig&) const = default;
};

// Default min_area of 30 px is stated for 256-px tiles; scale it by (tile/256)^2.
std::size_t scaled_min_area(std::size_t tile_size, std::size_t area_at_256 = 30);

// Step 1: the generator's healthy rendition of a (1,3,S,S) tile.
Tensor<float> predict_fake(const Generator& gen_r, const Tensor<float>& tile);

// Step 2: luminance of a (3,H,W) or (1,3,H,W) tensor with values in [0,1].
GrayMap to_gray(const Tensor<float>& rgb);
// Maps a [-1,1] tile to [0,1] and takes its luminance.
GrayMap tile_gray(const Tensor<float>& tile);

// Step 3: |(real - fake) - median(real - fake)|.
DiffMap center_abs_diff(const GrayMap& gray_real, const GrayMap& gray_fake);
double median(std::vector<double> values);

// Step 4.
BinaryMask threshold_mask(const DiffMap& diff, const DetectConfig& cfg);
// Step 5: drop 4-connected components smaller than min_area.
BinaryMask area_open(const BinaryMask& mask, std::size_t min_area);
// Step 6: dilation by {max(|dx|,|dy|) <= r, |dx|+|dy| <= floor(3r/2)}.
BinaryMask dilate_octagon(const BinaryMask& mask, std::size_t r);
std::vector<std::pair<int, int>> octagon_offsets(std::size_t r);
// Step 7: drop 8-connected components touching the border.
BinaryMask clear_border(const BinaryMask& mask);

// One blob per 8-connected component, ordered by (min_row, min_col).
std::vector<Blob> blob_stats(const BinaryMask& mask);

// |a & b| / |a | b|, 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& truth);

struct AnomalyResult {
  Tensor<float> fake;
  DiffMap diff;
  BinaryMask mask;
  std::vector<Blob> blobs;
};

// Steps 2-7 given an already generated fake.
AnomalyResult detect_from_fake(const Tensor<float>& tile, const Tensor<float>& fake, const DetectConfig& cfg);
// Steps 1-7.
AnomalyResult detect(const Generator& gen_r, const Tensor<float>& tile, const DetectConfig& cfg);

BinaryMask mask_from_gray(const GrayImage& img);
GrayImage mask_to_gray(const BinaryMask& mask);

// Writes <stem>_fake.png, <stem>_diff.pgm, <stem>_mask.png, <stem>_blobs.json and <stem>_panel.png.
std::vector<std::filesystem::path> write_detection(const std::filesystem::path& dir, const std::string& stem,
                                                   const Tensor<float>& tile, const AnomalyResult& result);

}  // namespace agln
