#include "agln/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

namespace agln {

TileGrid grid_fit(std::size_t width, std::size_t height, std::size_t unit) {
  if (unit < 1) throw DataError("grid_fit: unit must be >= 1");
  if (width < unit || height < unit) {
    throw DataError("grid_fit: image " + std::to_string(width) + "x" + std::to_string(height) +
                    " is smaller than unit " + std::to_string(unit));
  }
  TileGrid g;
  g.unit = unit;
  g.cols = width / unit;
  g.rows = height / unit;
  g.fitted_width = g.cols * unit;
  g.fitted_height = g.rows * unit;
  return g;
}

RgbImage resize_bilinear(const RgbImage& img, std::size_t to_width, std::size_t to_height) {
  if (to_width == 0 || to_height == 0) throw DataError("resize_bilinear: target dimensions must be >= 1");
  if (img.width == 0 || img.height == 0) throw DataError("resize_bilinear: empty source image");
  if (to_width == img.width && to_height == img.height) return img;

  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [](std::size_t src, std::size_t dst) {
    std::vector<Tap> out(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i) {
      const double pos = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      out[i] = {lo, std::min(lo + 1, src - 1), static_cast<float>(pos - static_cast<double>(lo))};
    }
    return out;
  };
  const auto xt = taps(img.width, to_width);
  const auto yt = taps(img.height, to_height);

  RgbImage out(to_width, to_height);
  for (std::size_t r = 0; r < to_height; ++r) {
    const Tap& ty = yt[r];
    for (std::size_t c = 0; c < to_width; ++c) {
      const Tap& tx = xt[c];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float top = img.at(ty.lo, tx.lo, ch) * (1.0f - tx.frac) + img.at(ty.lo, tx.hi, ch) * tx.frac;
        const float bottom = img.at(ty.hi, tx.lo, ch) * (1.0f - tx.frac) + img.at(ty.hi, tx.hi, ch) * tx.frac;
        const float v = top * (1.0f - ty.frac) + bottom * ty.frac;
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0f, 255.0f));
      }
    }
  }
  return out;
}

std::vector<RgbImage> tile(const RgbImage& img, const TileGrid& grid) {
  if (img.width != grid.fitted_width || img.height != grid.fitted_height) {
    throw DataError("tile: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    " does not match fitted grid " + std::to_string(grid.fitted_width) + "x" +
                    std::to_string(grid.fitted_height));
  }
  std::vector<RgbImage> tiles;
  tiles.reserve(grid.tile_count());
  const std::size_t u = grid.unit;
  for (std::size_t tr = 0; tr < grid.rows; ++tr) {
    for (std::size_t tc = 0; tc < grid.cols; ++tc) {
      RgbImage t(u, u);
      for (std::size_t r = 0; r < u; ++r) {
        const auto* src = &img.pixels[((tr * u + r) * img.width + tc * u) * 3];
        std::copy(src, src + u * 3, &t.pixels[r * u * 3]);
      }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

std::string domain_name(Domain d) { return d == Domain::damaged ? "damaged" : "healthy"; }

Domain parse_domain(const std::string& s) {
  if (s == "damaged") return Domain::damaged;
  if (s == "healthy") return Domain::healthy;
  throw DataError("unknown domain '" + s + "'");
}

std::string tile_file_name(const std::string& source, std::size_t row, std::size_t col) {
  return source + "_" + std::to_string(row) + "_" + std::to_string(col) + ".png";
}

std::vector<TileRecord> UnpairedDataset::manifest() const {
  std::vector<TileRecord> out;
  out.reserve(damaged.size() + healthy.size());
  for (const auto& t : damaged) out.push_back(t.record);
  for (const auto& t : healthy) out.push_back(t.record);
  return out;
}

UnpairedDataset assemble_unpaired(std::vector<DatasetTile> d_tiles, std::vector<DatasetTile> h_tiles,
                                  std::uint64_t seed) {
  if (d_tiles.empty()) throw DataError("assemble_unpaired: damaged domain is empty");
  if (h_tiles.empty()) throw DataError("assemble_unpaired: healthy domain is empty");
  const std::size_t m = std::min(d_tiles.size(), h_tiles.size());
  std::mt19937_64 rng(seed);
  auto pick = [&](std::vector<DatasetTile>& tiles, Domain domain) {
    std::vector<std::size_t> order(tiles.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<DatasetTile> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      DatasetTile t = std::move(tiles[order[i]]);
      t.record.domain = domain;
      t.record.seed = seed;
      out.push_back(std::move(t));
    }
    return out;
  };
  UnpairedDataset ds;
  ds.damaged = pick(d_tiles, Domain::damaged);
  ds.healthy = pick(h_tiles, Domain::healthy);
  return ds;
}

void write_manifest(const std::filesystem::path& path, const std::vector<TileRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    const nlohmann::ordered_json j{{"file", r.file},     {"source", r.source},
                                   {"row", r.row},       {"col", r.col},
                                   {"domain", domain_name(r.domain)}, {"seed", r.seed}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for manifest " + path.string());
}

std::vector<TileRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::vector<TileRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TileRecord r;
      r.file = j.at("file").get<std::string>();
      r.source = j.at("source").get<std::string>();
      r.row = j.at("row").get<std::size_t>();
      r.col = j.at("col").get<std::size_t>();
      r.domain = parse_domain(j.at("domain").get<std::string>());
      r.seed = j.value("seed", std::uint64_t{0});
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

UnpairedDataset load_unpaired(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  UnpairedDataset ds;
  for (auto& r : read_manifest(manifest_path)) {
    DatasetTile t{read_png(base / r.file), std::move(r)};
    (t.record.domain == Domain::damaged ? ds.damaged : ds.healthy).push_back(std::move(t));
  }
  if (ds.damaged.size() != ds.healthy.size()) {
    throw DataError("manifest " + manifest_path.string() + " is not balanced");
  }
  return ds;
}

}  // namespace agln
