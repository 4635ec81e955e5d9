#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "agln/image.hpp"

namespace agln {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Largest unit-multiple grid that fits inside a width x height image.
struct TileGrid {
  std::size_t unit = 256;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::size_t fitted_width = 0;
  std::size_t fitted_height = 0;

  std::size_t tile_count() const { return cols * rows; }
  bool operator==(const TileGrid&) const = default;
};

TileGrid grid_fit(std::size_t width, std::size_t height, std::size_t unit);

// Half-pixel-centred bilinear resampling; identity when the size is unchanged.
RgbImage resize_bilinear(const RgbImage& img, std::size_t to_width, std::size_t to_height);

// Row-major unit x unit tiles that partition the fitted image exactly.
std::vector<RgbImage> tile(const RgbImage& img, const TileGrid& grid);

enum class Domain { damaged, healthy };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& s);

struct TileRecord {
  std::string file;    // path relative to the manifest's directory
  std::string source;  // source image stem
  std::size_t row = 0;
  std::size_t col = 0;
  Domain domain = Domain::damaged;
  std::uint64_t seed = 0;

  bool operator==(const TileRecord&) const = default;
};

struct DatasetTile {
  RgbImage image;
  TileRecord record;
};

// Two equally sized tile collections with no pixel-wise pairing between them.
struct UnpairedDataset {
  std::vector<DatasetTile> damaged;
  std::vector<DatasetTile> healthy;

  std::vector<TileRecord> manifest() const;
};

// Uniformly subsamples both domains (without replacement) to min(|d|, |h|) tiles, in a
// seed-determined order.
UnpairedDataset assemble_unpaired(std::vector<DatasetTile> d_tiles, std::vector<DatasetTile> h_tiles,
                                  std::uint64_t seed);

// JSON lines: {"file","source","row","col","domain","seed"} per tile.
void write_manifest(const std::filesystem::path& path, const std::vector<TileRecord>& records);
std::vector<TileRecord> read_manifest(const std::filesystem::path& path);

// Reloads the tiles listed in a manifest, in manifest order.
UnpairedDataset load_unpaired(const std::filesystem::path& manifest_path);

std::string tile_file_name(const std::string& source, std::size_t row, std::size_t col);

}  // namespace agln
