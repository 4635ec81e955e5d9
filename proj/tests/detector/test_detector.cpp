#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "agln/detector.hpp"
#include "../support/morphology_oracles.hpp"
#include "../support/temp_dir.hpp"

using namespace agln;
using agln::testing::random_mask;

namespace {

BinaryMask mask_of(std::size_t w, std::size_t h, std::initializer_list<std::pair<int, int>> on) {
  BinaryMask m(w, h);
  for (auto [r, c] : on) m.set(r, c);
  return m;
}

GrayMap row(std::vector<double> v) {
  GrayMap g(v.size(), 1);
  g.values = std::move(v);
  return g;
}

Tensor<float> random_tile(std::size_t s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(Shape{1, 3, s, s});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && !b.bits[i]) return false;
  return true;
}

}  // namespace

TEST(ToGray, WeightsOnPrimaries) {
  Tensor<float> white(Shape{3, 1, 1}, 1.0f);
  EXPECT_NEAR(to_gray(white).values[0], 0.9999, 1e-12);
  Tensor<float> green(Shape{3, 1, 1}, 0.0f);
  green[1] = 1.0f;
  EXPECT_NEAR(to_gray(green).values[0], 0.5870, 1e-12);
  Tensor<float> gray(Shape{1, 3, 1, 1}, 0.5f);
  EXPECT_NEAR(to_gray(gray).values[0], 0.5 * 0.9999, 1e-12);
}

TEST(ToGray, WrongChannelCountRejected) {
  EXPECT_THROW(to_gray(Tensor<float>(Shape{4, 2, 2})), ShapeError);
  EXPECT_THROW(to_gray(Tensor<float>(Shape{1, 1, 2, 2})), ShapeError);
}

TEST(CenterAbsDiff, IdenticalInputsGiveZeros) {
  const auto g = row({0.1, 0.5, 0.9, 0.3});
  for (double v : center_abs_diff(g, g).values) EXPECT_EQ(v, 0.0);
}

TEST(CenterAbsDiff, HandExample) {
  const auto out = center_abs_diff(row({0.1, 0.2, 0.3, 0.4, 0.9}), row({0, 0, 0, 0, 0}));
  const double want[] = {0.2, 0.1, 0.0, 0.1, 0.6};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(out.values[i], want[i], 1e-15);
}

TEST(CenterAbsDiff, EvenCountUsesMeanOfMiddlePair) {
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_EQ(median({7.0}), 7.0);
}

TEST(CenterAbsDiff, GlobalBiasCancels) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayMap a(9, 7), b(9, 7);
  for (auto& v : a.values) v = u(rng);
  for (auto& v : b.values) v = u(rng);
  GrayMap shifted = b;
  for (auto& v : shifted.values) v += 0.125;  // exact in binary
  const auto d0 = center_abs_diff(a, b), d1 = center_abs_diff(a, shifted);
  for (std::size_t i = 0; i < d0.values.size(); ++i) EXPECT_NEAR(d0.values[i], d1.values[i], 1e-12);
}

TEST(CenterAbsDiff, DimensionMismatchRejected) {
  EXPECT_THROW(center_abs_diff(GrayMap(2, 2), GrayMap(2, 3)), ShapeError);
}

TEST(Threshold, AbsoluteMode) {
  DetectConfig cfg;
  cfg.eps_mode = EpsMode::absolute;
  cfg.eps_value = 0.25;
  const auto m = threshold_mask(row({0.2, 0.1, 0, 0.1, 0.6}), cfg);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 0, 0, 0, 1}));
}

TEST(Threshold, PeakFractionMode) {
  DetectConfig cfg;
  cfg.eps_mode = EpsMode::peak_fraction;
  cfg.eps_value = 0.5;
  const auto m = threshold_mask(row({0.2, 0.31, 0.3, 0.1, 0.6}), cfg);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 1, 0, 0, 1}));
}

TEST(Threshold, AllZeroDiffGivesEmptyMask) {
  for (auto mode : {EpsMode::absolute, EpsMode::peak_fraction}) {
    DetectConfig cfg;
    cfg.eps_mode = mode;
    EXPECT_TRUE(threshold_mask(GrayMap(5, 5), cfg).empty());
  }
}

TEST(Threshold, LargerEpsGivesSubset) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayMap d(16, 16);
  for (auto& v : d.values) v = u(rng);
  DetectConfig lo, hi;
  lo.eps_mode = hi.eps_mode = EpsMode::absolute;
  lo.eps_value = 0.3;
  hi.eps_value = 0.6;
  EXPECT_TRUE(subset(threshold_mask(d, hi), threshold_mask(d, lo)));
}

TEST(AreaOpen, DropsSmallComponents) {
  // Sizes 2 and 4.
  const auto m = mask_of(6, 3, {{0, 0}, {0, 1}, {2, 2}, {2, 3}, {2, 4}, {2, 5}});
  EXPECT_EQ(area_open(m, 3), mask_of(6, 3, {{2, 2}, {2, 3}, {2, 4}, {2, 5}}));
}

TEST(AreaOpen, DiagonalIsNotFourConnected) {
  EXPECT_TRUE(area_open(mask_of(2, 2, {{0, 0}, {1, 1}}), 2).empty());
}

TEST(AreaOpen, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto m = random_mask(rng, 32);
    const std::size_t k = rng() % 8;
    const auto got = area_open(m, k);
    ASSERT_EQ(got, agln::testing::area_open_oracle(m, k)) << "mask " << i;
    EXPECT_TRUE(subset(got, m));
    EXPECT_EQ(area_open(got, k), got);
  }
}

TEST(Dilate, RadiusZeroIsIdentity) {
  std::mt19937_64 rng(4);
  const auto m = random_mask(rng);
  EXPECT_EQ(dilate_octagon(m, 0), m);
}

TEST(Dilate, RadiusOneIsPlus) {
  const auto out = dilate_octagon(mask_of(3, 3, {{1, 1}}), 1);
  EXPECT_EQ(out, mask_of(3, 3, {{0, 1}, {1, 0}, {1, 1}, {1, 2}, {2, 1}}));
}

TEST(Dilate, StructuringElementSizes) {
  // r=3: 7x7 square minus corners where |dx|+|dy| > 4 -> 49 - 4*3 = 37.
  EXPECT_EQ(octagon_offsets(3).size(), 37u);
  EXPECT_EQ(octagon_offsets(2).size(), 21u);
}

TEST(Dilate, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto m = random_mask(rng);
    const std::size_t r = rng() % 5;
    const auto got = dilate_octagon(m, r);
    ASSERT_EQ(got, agln::testing::dilate_oracle(m, static_cast<int>(r))) << "mask " << i;
    EXPECT_TRUE(subset(m, got));
  }
}

TEST(ClearBorder, KeepsInteriorOnly) {
  const auto m = mask_of(6, 6, {{0, 2}, {1, 2}, {3, 3}, {3, 4}});
  EXPECT_EQ(clear_border(m), mask_of(6, 6, {{3, 3}, {3, 4}}));
}

TEST(ClearBorder, DiagonalLinkToBorderCounts) {
  EXPECT_TRUE(clear_border(mask_of(5, 5, {{0, 0}, {1, 1}, {2, 2}})).empty());
}

TEST(ClearBorder, FullMaskBecomesEmpty) { EXPECT_TRUE(clear_border(BinaryMask(7, 5, true)).empty()); }

TEST(ClearBorder, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto m = random_mask(rng);
    const auto got = clear_border(m);
    ASSERT_EQ(got, agln::testing::clear_border_oracle(m)) << "mask " << i;
    EXPECT_TRUE(subset(got, m));
    EXPECT_EQ(clear_border(got), got);
  }
}

TEST(Blobs, EmptyMask) { EXPECT_TRUE(blob_stats(BinaryMask(4, 4)).empty()); }

TEST(Blobs, SquareAtOrigin) {
  const auto blobs = blob_stats(mask_of(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
  ASSERT_EQ(blobs.size(), 1u);
  EXPECT_EQ(blobs[0].area, 4u);
  EXPECT_EQ(blobs[0].min_row, 0u);
  EXPECT_EQ(blobs[0].max_row, 1u);
  EXPECT_EQ(blobs[0].max_col, 1u);
  EXPECT_EQ(blobs[0].centroid_row, 0.5);
  EXPECT_EQ(blobs[0].centroid_col, 0.5);
}

TEST(Blobs, OrderedByTopLeft) {
  const auto blobs = blob_stats(mask_of(8, 8, {{0, 6}, {1, 0}, {0, 3}, {5, 5}}));
  ASSERT_EQ(blobs.size(), 4u);
  EXPECT_EQ(blobs[0].min_col, 3u);
  EXPECT_EQ(blobs[1].min_col, 6u);
  EXPECT_EQ(blobs[2].min_row, 1u);
  EXPECT_EQ(blobs[3].min_row, 5u);
}

TEST(Blobs, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto m = random_mask(rng);
    const auto got = blob_stats(m);
    ASSERT_EQ(got, agln::testing::blob_stats_oracle(m)) << "mask " << i;
    std::size_t total = 0;
    for (const auto& b : got) {
      total += b.area;
      EXPECT_GE(b.centroid_row, static_cast<double>(b.min_row));
      EXPECT_LE(b.centroid_row, static_cast<double>(b.max_row));
      EXPECT_GE(b.centroid_col, static_cast<double>(b.min_col));
      EXPECT_LE(b.centroid_col, static_cast<double>(b.max_col));
    }
    EXPECT_EQ(total, m.count());
  }
}

TEST(Iou, Conventions) {
  const auto a = mask_of(4, 1, {{0, 0}, {0, 1}});
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, mask_of(4, 1, {{0, 2}, {0, 3}})), 0.0);
  EXPECT_EQ(iou(mask_of(4, 1, {{0, 0}}), a), 0.5);
  EXPECT_EQ(iou(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
  EXPECT_THROW(iou(BinaryMask(3, 3), BinaryMask(3, 2)), ShapeError);
}

TEST(Detect, IdentityFakeYieldsEmptyMask) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_tile(32, rng);
    for (double eps : {1e-6, 0.01, 0.3, 2.0}) {
      for (auto mode : {EpsMode::absolute, EpsMode::peak_fraction}) {
        DetectConfig cfg;
        cfg.eps_mode = mode;
        cfg.eps_value = eps;
        const auto res = detect_from_fake(t, t, cfg);
        EXPECT_TRUE(res.mask.empty());
        EXPECT_TRUE(res.blobs.empty());
      }
    }
  }
}

TEST(Detect, StepOrderMatters) {
  // Two 2-pixel fragments 3 px apart: area_open(3) first removes both; dilating first
  // merges them into one component that survives.
  const auto m = mask_of(16, 16, {{7, 4}, {7, 5}, {7, 9}, {7, 10}});
  const auto in_order = dilate_octagon(area_open(m, 3), 2);
  const auto swapped = area_open(dilate_octagon(m, 2), 3);
  EXPECT_TRUE(in_order.empty());
  EXPECT_FALSE(swapped.empty());

  // The pipeline itself must follow the first order.
  Tensor<float> real(Shape{1, 3, 16, 16}, 0.0f), fake = real;
  for (auto [r, c] : {std::pair{7, 4}, {7, 5}, {7, 9}, {7, 10}})
    for (int ch = 0; ch < 3; ++ch) real.at(0, ch, r, c) = 1.0f;
  DetectConfig cfg;
  cfg.eps_mode = EpsMode::absolute;
  cfg.eps_value = 0.1;
  cfg.min_area = 3;
  cfg.octagon_radius = 2;
  EXPECT_TRUE(detect_from_fake(real, fake, cfg).mask.empty());
}

TEST(Detect, FindsPlantedDefect) {
  Tensor<float> real(Shape{1, 3, 32, 32}, 0.0f), fake = real;
  for (int r = 12; r < 18; ++r)
    for (int c = 10; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch) real.at(0, ch, r, c) = -0.8f;
  DetectConfig cfg;
  cfg.min_area = 4;
  const auto res = detect_from_fake(real, fake, cfg);
  ASSERT_EQ(res.blobs.size(), 1u);
  EXPECT_EQ(res.blobs[0].centroid_row, 14.5);
  EXPECT_EQ(res.blobs[0].centroid_col, 12.5);
}

TEST(Detect, ClearBorderCanBeSkipped) {
  Tensor<float> real(Shape{1, 3, 16, 16}, 0.0f), fake = real;
  for (int r = 0; r < 4; ++r)
    for (int ch = 0; ch < 3; ++ch) real.at(0, ch, r, 0) = 1.0f;
  DetectConfig cfg;
  cfg.min_area = 1;
  EXPECT_TRUE(detect_from_fake(real, fake, cfg).mask.empty());
  cfg.apply_clear_border = false;
  EXPECT_FALSE(detect_from_fake(real, fake, cfg).mask.empty());
}

TEST(Detect, GeneratorPathShapesAndDeterminism) {
  const auto gen = build_generator(GeneratorSpec{3, 4, 1, 16}, 1);
  std::mt19937_64 rng(9);
  const auto t = random_tile(16, rng);
  const auto fake = predict_fake(gen, t);
  EXPECT_EQ(fake.shape(), t.shape());
  for (float v : fake.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(predict_fake(gen, t), fake);
  EXPECT_THROW(predict_fake(gen, random_tile(32, rng)), ShapeError);
  const auto a = detect(gen, t, DetectConfig{});
  const auto b = detect(gen, t, DetectConfig{});
  EXPECT_EQ(a.mask, b.mask);
  for (double v : a.diff.values) EXPECT_GE(v, 0.0);
}

TEST(Detect, InvalidEpsRejected) {
  DetectConfig cfg;
  cfg.eps_value = 0.0;
  Tensor<float> t(Shape{1, 3, 4, 4});
  EXPECT_THROW(detect_from_fake(t, t, cfg), std::invalid_argument);
}

TEST(Detect, MinAreaScaling) {
  EXPECT_EQ(scaled_min_area(256), 30u);
  EXPECT_EQ(scaled_min_area(512), 120u);
  EXPECT_EQ(scaled_min_area(64), 2u);
}

TEST(Detect, WritesAllArtifacts) {
  agln::testing::TempDir dir;
  Tensor<float> real(Shape{1, 3, 16, 16}, 0.0f), fake = real;
  for (int r = 6; r < 9; ++r)
    for (int c = 6; c < 9; ++c) real.at(0, 0, r, c) = 1.0f;
  DetectConfig cfg;
  cfg.min_area = 1;
  const auto res = detect_from_fake(real, fake, cfg);
  const auto files = write_detection(dir.path(), "t0", real, res);
  ASSERT_EQ(files.size(), 5u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
  EXPECT_EQ(mask_from_gray(read_png_gray(dir / "t0_mask.png")), res.mask);
  std::size_t w = 0, h = 0;
  const auto diff = read_pgm16(dir / "t0_diff.pgm", w, h);
  EXPECT_EQ(w, 16u);
  EXPECT_EQ(*std::max_element(diff.begin(), diff.end()), 65535);
  const auto panel = read_png(dir / "t0_panel.png");
  EXPECT_EQ(panel.width, 3u * 16u + 4u);
  std::ifstream blobs(dir / "t0_blobs.json");
  std::string text((std::istreambuf_iterator<char>(blobs)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("\"area\""), std::string::npos);
}
