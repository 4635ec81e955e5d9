#include "agln/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace agln {
namespace {

constexpr double kWeightR = 0.2989;
constexpr double kWeightG = 0.5870;
constexpr double kWeightB = 0.1140;

void require_same_dims(std::size_t w1, std::size_t h1, std::size_t w2, std::size_t h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    throw ShapeError(std::string(what) + ": " + std::to_string(w1) + "x" + std::to_string(h1) + " vs " +
                     std::to_string(w2) + "x" + std::to_string(h2));
  }
}

// Connected-component labels (1-based, 0 = background) in row-major discovery order.
std::vector<std::uint32_t> label_components(const BinaryMask& mask, bool eight, std::uint32_t& n_labels) {
  const std::size_t w = mask.width, h = mask.height;
  std::vector<std::uint32_t> labels(w * h, 0);
  std::vector<std::size_t> stack;
  n_labels = 0;
  for (std::size_t start = 0; start < w * h; ++start) {
    if (!mask.bits[start] || labels[start]) continue;
    const std::uint32_t id = ++n_labels;
    labels[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const auto r = static_cast<std::ptrdiff_t>(p / w), c = static_cast<std::ptrdiff_t>(p % w);
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr) {
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0)) continue;
          const auto nr = r + dr, nc = c + dc;
          if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(h) || nc >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
          if (mask.bits[q] && !labels[q]) {
            labels[q] = id;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return labels;
}

}  // namespace

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

std::string eps_mode_name(EpsMode m) { return m == EpsMode::absolute ? "absolute" : "peak_fraction"; }

EpsMode parse_eps_mode(const std::string& s) {
  if (s == "absolute") return EpsMode::absolute;
  if (s == "peak_fraction") return EpsMode::peak_fraction;
  throw std::invalid_argument("eps_mode must be 'absolute' or 'peak_fraction', got '" + s + "'");
}

void DetectConfig::validate() const {
  if (!(eps_value > 0.0) || !std::isfinite(eps_value)) throw std::invalid_argument("detect.eps_value must be > 0");
}

std::size_t scaled_min_area(std::size_t tile_size, std::size_t area_at_256) {
  const double s = static_cast<double>(tile_size) / 256.0;
  return static_cast<std::size_t>(std::lround(static_cast<double>(area_at_256) * s * s));
}

Tensor<float> predict_fake(const Generator& gen_r, const Tensor<float>& tile) { return generator_forward(gen_r, tile); }

GrayMap to_gray(const Tensor<float>& rgb) {
  const bool batched = rgb.rank() == 4;
  if (!((rgb.rank() == 3 && rgb.dim(0) == 3) || (batched && rgb.dim(0) == 1 && rgb.dim(1) == 3))) {
    throw ShapeError("to_gray: expected (3,H,W) or (1,3,H,W), got " + shape_str(rgb.shape()));
  }
  const std::size_t h = rgb.dim(rgb.rank() - 2), w = rgb.dim(rgb.rank() - 1), plane = h * w;
  GrayMap out(w, h);
  const float* d = rgb.data();
  for (std::size_t i = 0; i < plane; ++i) {
    out.values[i] = kWeightR * d[i] + kWeightG * d[plane + i] + kWeightB * d[2 * plane + i];
  }
  return out;
}

GrayMap tile_gray(const Tensor<float>& tile) {
  Tensor<float> unit = tile;
  for (float& v : unit.values()) v = (v + 1.0f) * 0.5f;
  return to_gray(unit);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t n = values.size(), mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

DiffMap center_abs_diff(const GrayMap& gray_real, const GrayMap& gray_fake) {
  require_same_dims(gray_real.width, gray_real.height, gray_fake.width, gray_fake.height, "center_abs_diff");
  DiffMap out(gray_real.width, gray_real.height);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = gray_real.values[i] - gray_fake.values[i];
  if (out.values.empty()) return out;
  const double m = median(out.values);
  for (double& v : out.values) v = std::abs(v - m);
  return out;
}

BinaryMask threshold_mask(const DiffMap& diff, const DetectConfig& cfg) {
  BinaryMask out(diff.width, diff.height);
  double eps = cfg.eps_value;
  if (cfg.eps_mode == EpsMode::peak_fraction) {
    const double peak = diff.values.empty() ? 0.0 : *std::max_element(diff.values.begin(), diff.values.end());
    if (peak <= 0.0) return out;
    eps *= peak;
  }
  for (std::size_t i = 0; i < diff.values.size(); ++i) out.bits[i] = diff.values[i] > eps ? 1 : 0;
  return out;
}

BinaryMask area_open(const BinaryMask& mask, std::size_t min_area) {
  std::uint32_t n = 0;
  const auto labels = label_components(mask, false, n);
  std::vector<std::size_t> area(n + 1, 0);
  for (auto l : labels) ++area[l];
  BinaryMask out(mask.width, mask.height);
  for (std::size_t i = 0; i < labels.size(); ++i) out.bits[i] = labels[i] && area[labels[i]] >= min_area ? 1 : 0;
  return out;
}

std::vector<std::pair<int, int>> octagon_offsets(std::size_t r) {
  const int ri = static_cast<int>(r);
  const int cut = (3 * ri) / 2;
  std::vector<std::pair<int, int>> out;
  for (int dy = -ri; dy <= ri; ++dy)
    for (int dx = -ri; dx <= ri; ++dx)
      if (std::abs(dx) + std::abs(dy) <= cut) out.emplace_back(dy, dx);
  return out;
}

BinaryMask dilate_octagon(const BinaryMask& mask, std::size_t r) {
  if (r == 0) return mask;
  const auto se = octagon_offsets(r);
  BinaryMask out(mask.width, mask.height);
  const auto h = static_cast<int>(mask.height), w = static_cast<int>(mask.width);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      for (const auto& [dy, dx] : se) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= 0 && nx >= 0 && ny < h && nx < w) out.set(ny, nx);
      }
    }
  }
  return out;
}

BinaryMask clear_border(const BinaryMask& mask) {
  std::uint32_t n = 0;
  const auto labels = label_components(mask, true, n);
  std::vector<std::uint8_t> touches(n + 1, 0);
  const std::size_t w = mask.width, h = mask.height;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) touches[labels[r * w + c]] = 1;
    }
  }
  BinaryMask out(w, h);
  for (std::size_t i = 0; i < labels.size(); ++i) out.bits[i] = labels[i] && !touches[labels[i]] ? 1 : 0;
  return out;
}

std::vector<Blob> blob_stats(const BinaryMask& mask) {
  std::uint32_t n = 0;
  const auto labels = label_components(mask, true, n);
  std::vector<Blob> blobs(n);
  std::vector<double> sum_r(n, 0.0), sum_c(n, 0.0);
  std::vector<std::uint8_t> seen(n, 0);
  for (std::size_t r = 0; r < mask.height; ++r) {
    for (std::size_t c = 0; c < mask.width; ++c) {
      const auto l = labels[r * mask.width + c];
      if (!l) continue;
      Blob& b = blobs[l - 1];
      if (!seen[l - 1]) {
        seen[l - 1] = 1;
        b.min_row = b.max_row = r;
        b.min_col = b.max_col = c;
      }
      ++b.area;
      b.min_row = std::min(b.min_row, r);
      b.max_row = std::max(b.max_row, r);
      b.min_col = std::min(b.min_col, c);
      b.max_col = std::max(b.max_col, c);
      sum_r[l - 1] += static_cast<double>(r);
      sum_c[l - 1] += static_cast<double>(c);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    blobs[i].centroid_row = sum_r[i] / static_cast<double>(blobs[i].area);
    blobs[i].centroid_col = sum_c[i] / static_cast<double>(blobs[i].area);
  }
  std::stable_sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) {
    return a.min_row != b.min_row ? a.min_row < b.min_row : a.min_col < b.min_col;
  });
  return blobs;
}

double iou(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_dims(pred.width, pred.height, truth.width, truth.height, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    inter += pred.bits[i] & truth.bits[i];
    uni += pred.bits[i] | truth.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

AnomalyResult detect_from_fake(const Tensor<float>& tile, const Tensor<float>& fake, const DetectConfig& cfg) {
  cfg.validate();
  if (tile.shape() != fake.shape()) {
    throw ShapeError("detect: tile " + shape_str(tile.shape()) + " vs fake " + shape_str(fake.shape()));
  }
  AnomalyResult res;
  res.fake = fake;
  res.diff = center_abs_diff(tile_gray(tile), tile_gray(fake));
  BinaryMask m = threshold_mask(res.diff, cfg);
  m = area_open(m, cfg.min_area);
  m = dilate_octagon(m, cfg.octagon_radius);
  if (cfg.apply_clear_border) m = clear_border(m);
  res.blobs = blob_stats(m);
  res.mask = std::move(m);
  return res;
}

AnomalyResult detect(const Generator& gen_r, const Tensor<float>& tile, const DetectConfig& cfg) {
  return detect_from_fake(tile, predict_fake(gen_r, tile), cfg);
}

BinaryMask mask_from_gray(const GrayImage& img) {
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.bits[i] = img.pixels[i] >= 128 ? 1 : 0;
  return m;
}

GrayImage mask_to_gray(const BinaryMask& mask) {
  GrayImage g{mask.width, mask.height, std::vector<std::uint8_t>(mask.bits.size())};
  for (std::size_t i = 0; i < mask.bits.size(); ++i) g.pixels[i] = mask.bits[i] ? 255 : 0;
  return g;
}

std::vector<std::filesystem::path> write_detection(const std::filesystem::path& dir, const std::string& stem,
                                                   const Tensor<float>& tile, const AnomalyResult& result) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  const RgbImage real = from_tensor(tile);
  const RgbImage fake = from_tensor(result.fake);
  written.push_back(dir / (stem + "_fake.png"));
  write_png(written.back(), fake);

  // Scale so the largest difference maps to full range; the factor goes in the header.
  const auto& dv = result.diff.values;
  const double peak = dv.empty() ? 0.0 : *std::max_element(dv.begin(), dv.end());
  const double scale = peak > 0.0 ? 65535.0 / peak : 1.0;
  std::vector<std::uint16_t> samples(dv.size());
  for (std::size_t i = 0; i < dv.size(); ++i) {
    samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(dv[i] * scale, 0.0, 65535.0)));
  }
  char comment[64];
  std::snprintf(comment, sizeof comment, "scale=%.17g", scale);
  written.push_back(dir / (stem + "_diff.pgm"));
  write_pgm16(written.back(), result.diff.width, result.diff.height, samples, comment);

  written.push_back(dir / (stem + "_mask.png"));
  write_png(written.back(), mask_to_gray(result.mask));

  nlohmann::ordered_json blobs = nlohmann::ordered_json::array();
  for (const auto& b : result.blobs) {
    blobs.push_back({{"area", b.area},
                     {"bbox", {b.min_row, b.min_col, b.max_row, b.max_col}},
                     {"centroid", {b.centroid_row, b.centroid_col}}});
  }
  written.push_back(dir / (stem + "_blobs.json"));
  {
    std::ofstream out(written.back());
    out << blobs.dump(2) << '\n';
    if (!out) throw ImageIoError("write failed for " + written.back().string());
  }

  // real | fake | mask, separated by 2-px white gutters.
  constexpr std::size_t kGutter = 2;
  const std::size_t w = real.width, h = real.height;
  RgbImage panel(3 * w + 2 * kGutter, h, 255);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        panel.at(r, c, ch) = real.at(r, c, ch);
        panel.at(r, w + kGutter + c, ch) = fake.at(r, c, ch);
        panel.at(r, 2 * (w + kGutter) + c, ch) = result.mask.at(r, c) ? 255 : 0;
      }
    }
  }
  written.push_back(dir / (stem + "_panel.png"));
  write_png(written.back(), panel);
  return written;
}

}  // namespace agln
