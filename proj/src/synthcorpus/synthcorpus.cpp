#include "agln/synthcorpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace agln {
namespace {

// splitmix64 finaliser: decorrelates (master, stream, index) into independent seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return mix(mix(mix(seed) ^ stream) ^ index);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth lattice noise in [-1, 1] with the given spacing.
std::vector<double> value_noise(std::mt19937_64& rng, std::size_t size, double spacing) {
  const auto cells = static_cast<std::size_t>(std::ceil(static_cast<double>(size) / spacing)) + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice(cells * cells);
  for (auto& v : lattice) v = u(rng);
  std::vector<double> out(size * size);
  for (std::size_t r = 0; r < size; ++r) {
    const double fy = static_cast<double>(r) / spacing;
    const auto iy = static_cast<std::size_t>(fy);
    const double ty = smoothstep(fy - static_cast<double>(iy));
    for (std::size_t c = 0; c < size; ++c) {
      const double fx = static_cast<double>(c) / spacing;
      const auto ix = static_cast<std::size_t>(fx);
      const double tx = smoothstep(fx - static_cast<double>(ix));
      const double top = lattice[iy * cells + ix] * (1 - tx) + lattice[iy * cells + ix + 1] * tx;
      const double bottom = lattice[(iy + 1) * cells + ix] * (1 - tx) + lattice[(iy + 1) * cells + ix + 1] * tx;
      out[r * size + c] = top * (1 - ty) + bottom * ty;
    }
  }
  return out;
}

std::uint8_t to_level(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
double to_unit(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

using Shape2 = std::vector<std::pair<std::size_t, std::size_t>>;  // (row, col) pixels

// Point-in-polygon by ray casting.
bool inside(const std::vector<std::pair<double, double>>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

struct Region {
  Shape2 pixels;
  std::vector<std::uint8_t> inner;  // popout: 1 for the dark core, 0 for the rim
};

Region popout_region(std::mt19937_64& rng, double area, std::size_t size, std::size_t margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double q = 0.55 + 0.45 * u(rng);
  const double a = std::sqrt(area / (std::numbers::pi * q)), b = a * q;
  const double theta = std::numbers::pi * u(rng);
  const double lo = static_cast<double>(margin) + a, hi = static_cast<double>(size - margin) - a - 1.0;
  Region reg;
  if (hi < lo) return reg;
  const double cy = lo + (hi - lo) * u(rng), cx = lo + (hi - lo) * u(rng);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const double x1 = dx * ct + dy * st, y1 = -dx * st + dy * ct;
      const double rho = (x1 * x1) / (a * a) + (y1 * y1) / (b * b);
      if (rho <= 1.0) {
        reg.pixels.emplace_back(r, c);
        reg.inner.push_back(rho <= 0.55 ? 1 : 0);
      }
    }
  }
  return reg;
}

Region exfoliation_region(std::mt19937_64& rng, double area, std::size_t size, std::size_t margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> nverts(7, 11);
  const int k = nverts(rng);
  const double r0 = std::sqrt(area / std::numbers::pi);
  std::vector<double> radii(k);
  double rmax = 0.0;
  for (auto& rv : radii) {
    rv = r0 * (0.7 + 0.55 * u(rng));
    rmax = std::max(rmax, rv);
  }
  const double lo = static_cast<double>(margin) + rmax, hi = static_cast<double>(size - margin) - rmax - 1.0;
  Region reg;
  if (hi < lo) return reg;
  const double cy = lo + (hi - lo) * u(rng), cx = lo + (hi - lo) * u(rng);
  const double phase = 2.0 * std::numbers::pi * u(rng);
  std::vector<std::pair<double, double>> poly;
  for (int i = 0; i < k; ++i) {
    const double ang = phase + 2.0 * std::numbers::pi * (i + 0.3 * (u(rng) - 0.5)) / k;
    poly.emplace_back(cx + radii[i] * std::cos(ang), cy + radii[i] * std::sin(ang));
  }
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c)
      if (inside(poly, static_cast<double>(c), static_cast<double>(r))) reg.pixels.emplace_back(r, c);
  reg.inner.assign(reg.pixels.size(), 1);
  return reg;
}

Region sand_leak_region(std::mt19937_64& rng, double area, std::size_t size, std::size_t margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double width = 2.0 + 2.5 * u(rng);
  const double span = static_cast<double>(size - 2 * margin);
  const double length = std::min(area / (width + 1.0), span);
  const double sway = 1.5 * u(rng), period = 10.0 + 20.0 * u(rng), phase = 2.0 * std::numbers::pi * u(rng);
  const double x_lo = static_cast<double>(margin) + width / 2 + sway;
  const double x_hi = static_cast<double>(size - margin) - width / 2 - sway - 1.0;
  Region reg;
  if (x_hi < x_lo || length < 4.0) return reg;
  const double x0 = x_lo + (x_hi - x_lo) * u(rng);
  const double top = static_cast<double>(margin) + (span - length) * u(rng);
  for (std::size_t r = 0; r < size; ++r) {
    const double t = static_cast<double>(r) - top;
    if (t < 0.0 || t >= length) continue;
    const double xc = x0 + sway * std::sin(2.0 * std::numbers::pi * t / period + phase);
    for (std::size_t c = 0; c < size; ++c)
      if (std::abs(static_cast<double>(c) - xc) <= width / 2) reg.pixels.emplace_back(r, c);
  }
  reg.inner.assign(reg.pixels.size(), 1);
  return reg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return prefix + buf + ".png";
}

}  // namespace

void TextureParams::validate() const {
  if (!(base_gray >= 0.0 && base_gray <= 1.0)) throw std::invalid_argument("synth.base_gray must lie in [0,1]");
  if (!(noise_amplitude >= 0.0 && noise_amplitude <= 1.0)) {
    throw std::invalid_argument("synth.noise_amplitude must lie in [0,1]");
  }
  if (!(noise_scale > 0.0)) throw std::invalid_argument("synth.noise_scale must be > 0");
  if (!(speckle_density >= 0.0 && speckle_density <= 1.0)) {
    throw std::invalid_argument("synth.speckle_density must lie in [0,1]");
  }
  if (!(pore_density >= 0.0 && pore_density <= 1.0)) throw std::invalid_argument("synth.pore_density must lie in [0,1]");
  if (!(pore_depth >= 0.0 && pore_depth <= 1.0)) throw std::invalid_argument("synth.pore_depth must lie in [0,1]");
}

std::string damage_kind_name(DamageKind k) {
  switch (k) {
    case DamageKind::none: return "none";
    case DamageKind::popout: return "popout";
    case DamageKind::exfoliation: return "exfoliation";
    case DamageKind::sand_leak: return "sand_leak";
  }
  return "none";
}

DamageKind parse_damage_kind(const std::string& s) {
  for (auto k : {DamageKind::none, DamageKind::popout, DamageKind::exfoliation, DamageKind::sand_leak})
    if (damage_kind_name(k) == s) return k;
  throw DataError("unknown damage kind '" + s + "'");
}

void CorpusConfig::validate() const {
  if (tile_size < 16) throw std::invalid_argument("synth.tile_size must be >= 16");
  if (2 * margin >= tile_size) throw std::invalid_argument("synth.margin leaves no room inside the tile");
  const std::size_t area = tile_size * tile_size;
  for (const auto& [name, b] : {std::pair{"popout", popout}, {"exfoliation", exfoliation}, {"sand_leak", sand_leak}}) {
    if (b.min == 0 || b.min > b.max || b.max >= area) {
      throw std::invalid_argument(std::string("synth.") + name + " area bounds must satisfy 0 < min <= max < " +
                                  std::to_string(area));
    }
  }
  texture.validate();
}

const AreaBounds& CorpusConfig::bounds(DamageKind k) const {
  switch (k) {
    case DamageKind::popout: return popout;
    case DamageKind::exfoliation: return exfoliation;
    case DamageKind::sand_leak: return sand_leak;
    case DamageKind::none: break;
  }
  throw std::invalid_argument("no area bounds for damage kind none");
}

RgbImage gen_texture(std::uint64_t seed, std::size_t size, const TextureParams& p) {
  if (size < 16) throw std::invalid_argument("gen_texture: size must be >= 16");
  p.validate();
  std::mt19937_64 rng(seed);
  // Two octaves, normalised back into [-1, 1].
  const auto coarse = value_noise(rng, size, p.noise_scale);
  const auto fine = value_noise(rng, size, std::max(1.0, p.noise_scale / 2));
  std::bernoulli_distribution speckle(p.speckle_density);
  std::uniform_real_distribution<double> speck_value(-kSpeckleContrast, kSpeckleContrast);
  std::bernoulli_distribution pore(p.pore_density);
  std::vector<std::uint8_t> is_pore(size * size, 0);
  RgbImage img(size, size);
  for (std::size_t i = 0; i < size * size; ++i) {
    double v = p.base_gray + p.noise_amplitude * (coarse[i] + 0.5 * fine[i]) / 1.5;
    if (speckle(rng)) v += speck_value(rng);
    // Pores are single dark pixels; none touches another, even diagonally.
    const std::size_t r = i / size, c = i % size;
    const bool touches = (c > 0 && is_pore[i - 1]) ||
                         (r > 0 && (is_pore[i - size] || (c > 0 && is_pore[i - size - 1]) ||
                                    (c + 1 < size && is_pore[i - size + 1])));
    if (pore(rng) && !touches) {
      is_pore[i] = 1;
      v -= p.pore_depth;
    }
    const std::uint8_t level = to_level(v);
    for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[i * 3 + ch] = level;
  }
  return img;
}

LabeledTile inject_damage(const RgbImage& tile, DamageKind kind, std::uint64_t seed, const CorpusConfig& cfg) {
  if (kind == DamageKind::none) throw std::invalid_argument("inject_damage: kind must not be none");
  if (tile.width != tile.height) throw DataError("inject_damage: tile must be square");
  const std::size_t size = tile.width;
  const AreaBounds& b = cfg.bounds(kind);
  if (b.min == 0 || b.min > b.max || b.max >= size * size || 2 * cfg.margin >= size) {
    throw DataError("inject_damage: area bounds unsatisfiable for a " + std::to_string(size) + " px tile");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> target(static_cast<double>(b.min), static_cast<double>(b.max));

  Region reg;
  constexpr int kAttempts = 200;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const double area = target(rng);
    switch (kind) {
      case DamageKind::popout: reg = popout_region(rng, area, size, cfg.margin); break;
      case DamageKind::exfoliation: reg = exfoliation_region(rng, area, size, cfg.margin); break;
      default: reg = sand_leak_region(rng, area, size, cfg.margin); break;
    }
    if (reg.pixels.size() >= b.min && reg.pixels.size() <= b.max) break;
    reg.pixels.clear();
  }
  if (reg.pixels.empty()) {
    throw DataError("inject_damage: could not place " + damage_kind_name(kind) + " within area bounds [" +
                    std::to_string(b.min) + ", " + std::to_string(b.max) + "] on a " + std::to_string(size) +
                    " px tile");
  }

  LabeledTile out{tile, BinaryMask(size, size), kind};
  for (std::size_t i = 0; i < reg.pixels.size(); ++i) {
    const auto [r, c] = reg.pixels[i];
    std::array<double, 3> v{to_unit(tile.at(r, c, 0)), to_unit(tile.at(r, c, 1)), to_unit(tile.at(r, c, 2))};
    switch (kind) {
      case DamageKind::popout:
        if (reg.inner[i]) {
          for (auto& x : v) x = 0.25 * x + 0.02;
        } else {
          for (auto& x : v) x = x + 0.2;
        }
        break;
      case DamageKind::exfoliation:
        for (auto& x : v) x = 0.45 + 0.5 * x;
        break;
      default:
        v = {0.62 * v[0], 0.52 * v[1], 0.40 * v[2]};
        break;
    }
    std::array<std::uint8_t, 3> lv{to_level(v[0]), to_level(v[1]), to_level(v[2])};
    // Every painted pixel must differ so the truth mask is exactly the changed set.
    if (lv[0] == tile.at(r, c, 0) && lv[1] == tile.at(r, c, 1) && lv[2] == tile.at(r, c, 2)) {
      lv[0] = lv[0] == 0 ? 1 : static_cast<std::uint8_t>(lv[0] - 1);
    }
    for (std::size_t ch = 0; ch < 3; ++ch) out.image.at(r, c, ch) = lv[ch];
    out.truth.set(r, c);
  }
  return out;
}

std::vector<CorpusEntry> gen_corpus(const CorpusConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::path staging = root;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging / "truth");
  } catch (const fs::filesystem_error& e) {
    throw DataError(std::string("cannot create corpus directory: ") + e.what());
  }

  const std::size_t counts[] = {cfg.train_d, cfg.train_h, cfg.test_d, cfg.test_h};
  constexpr DamageKind kinds[] = {DamageKind::popout, DamageKind::exfoliation, DamageKind::sand_leak};
  std::vector<CorpusEntry> entries;
  std::string manifest;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string split = kCorpusSplits[s];
    const bool damaged = split.back() == 'D';
    fs::create_directories(staging / split);
    for (std::size_t i = 0; i < counts[s]; ++i) {
      CorpusEntry e;
      e.split = split;
      e.domain = damaged ? Domain::damaged : Domain::healthy;
      e.seed = derive(cfg.master_seed, s, i);
      e.file = split + "/" + numbered("tile_", i);
      RgbImage img = gen_texture(derive(e.seed, 0, 0), cfg.tile_size, cfg.texture);
      if (damaged) {
        e.kind = kinds[derive(e.seed, 1, 0) % 3];
        auto lab = inject_damage(img, e.kind, derive(e.seed, 2, 0), cfg);
        img = std::move(lab.image);
        e.truth = "truth/" + numbered(split + "_", i);
        write_png(staging / e.truth, mask_to_gray(lab.truth));
      }
      write_png(staging / e.file, img);
      const nlohmann::ordered_json j{{"file", e.file},
                                     {"source", split},
                                     {"row", 0},
                                     {"col", i},
                                     {"domain", domain_name(e.domain)},
                                     {"seed", e.seed},
                                     {"split", split},
                                     {"kind", damage_kind_name(e.kind)},
                                     {"truth", e.truth}};
      manifest += j.dump() + "\n";
      entries.push_back(std::move(e));
    }
  }
  write_text(staging / "manifest.jsonl", manifest);
  fs::remove_all(root, ec);
  fs::rename(staging, root);
  return entries;
}

std::vector<CorpusEntry> read_corpus_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus manifest " + path.string());
  std::vector<CorpusEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusEntry e;
      e.file = j.at("file").get<std::string>();
      e.split = j.at("split").get<std::string>();
      e.domain = parse_domain(j.at("domain").get<std::string>());
      e.kind = parse_damage_kind(j.at("kind").get<std::string>());
      e.seed = j.at("seed").get<std::uint64_t>();
      e.truth = j.at("truth").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

UnpairedDataset corpus_dataset(const std::filesystem::path& root, const std::string& phase) {
  if (phase != "train" && phase != "test") throw DataError("corpus phase must be 'train' or 'test'");
  std::vector<DatasetTile> d, h;
  std::size_t index = 0;
  for (const auto& e : read_corpus_manifest(root)) {
    if (e.split != phase + "D" && e.split != phase + "H") continue;
    DatasetTile t{read_png(root / e.file), {e.file, e.split, 0, index++, e.domain, e.seed}};
    (e.domain == Domain::damaged ? d : h).push_back(std::move(t));
  }
  UnpairedDataset ds;
  ds.damaged = std::move(d);
  ds.healthy = std::move(h);
  if (ds.damaged.empty() || ds.healthy.empty()) throw DataError("corpus " + phase + " split lacks a domain");
  return ds;
}

EvalMetrics evaluate_masks(const std::filesystem::path& root, const MaskPredictor& predict) {
  EvalMetrics m;
  double iou_sum = 0.0;
  std::size_t fp = 0;
  for (const auto& e : read_corpus_manifest(root)) {
    if (e.split != "testD" && e.split != "testH") continue;
    const Tensor<float> tile = to_tensor(read_png(root / e.file));
    const BinaryMask pred = predict(e, tile);
    TileEval te{e.file, e.domain, e.kind, 0.0, blob_stats(pred).size()};
    if (e.domain == Domain::damaged) {
      te.iou = iou(pred, mask_from_gray(read_png_gray(root / e.truth)));
      iou_sum += te.iou;
      ++m.n_damaged;
    } else {
      fp += te.blobs > 0 ? 1 : 0;
      ++m.n_healthy;
    }
    m.per_tile.push_back(std::move(te));
  }
  m.n_tiles = m.per_tile.size();
  if (m.n_tiles == 0) throw DataError("corpus test split is empty");
  m.mean_iou_damaged = m.n_damaged ? iou_sum / static_cast<double>(m.n_damaged) : 0.0;
  m.healthy_fp_rate = m.n_healthy ? static_cast<double>(fp) / static_cast<double>(m.n_healthy) : 0.0;
  return m;
}

EvalMetrics eval_detection(const std::filesystem::path& root, const Generator& gen_r, const DetectConfig& cfg) {
  cfg.validate();
  return evaluate_masks(root, [&](const CorpusEntry& e, const Tensor<float>& tile) {
    if (tile.dim(2) != gen_r.spec.image_size || tile.dim(3) != gen_r.spec.image_size) {
      throw DataError(e.file + ": tile size " + std::to_string(tile.dim(3)) + " does not match generator size " +
                      std::to_string(gen_r.spec.image_size));
    }
    return detect(gen_r, tile, cfg).mask;
  });
}

void write_metrics(const std::filesystem::path& path, const EvalMetrics& m, const std::string& config_digest) {
  nlohmann::ordered_json tiles = nlohmann::ordered_json::array();
  for (const auto& t : m.per_tile) {
    nlohmann::ordered_json j{{"file", t.file}, {"domain", domain_name(t.domain)}, {"kind", damage_kind_name(t.kind)}};
    if (t.domain == Domain::damaged) j["iou"] = t.iou;
    j["blobs"] = t.blobs;
    tiles.push_back(std::move(j));
  }
  const nlohmann::ordered_json j{{"mean_iou_damaged", m.mean_iou_damaged},
                                 {"healthy_fp_rate", m.healthy_fp_rate},
                                 {"n_tiles", m.n_tiles},
                                 {"n_damaged", m.n_damaged},
                                 {"n_healthy", m.n_healthy},
                                 {"config_digest", config_digest},
                                 {"per_tile", tiles}};
  auto tmp = path;
  tmp += ".tmp";
  write_text(tmp, j.dump(2) + "\n");
  std::filesystem::rename(tmp, path);
}

}  // namespace agln
