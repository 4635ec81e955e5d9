#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "agln/losses.hpp"
#include "agln/models.hpp"
#include "../support/oracles.hpp"

using namespace agln;
using agln::testing::random_tensor;

namespace {

// Layer-by-layer count Cout*Cin*k^2 + Cout of the generator stack.
std::size_t generator_count_oracle(std::size_t in, std::size_t c, std::size_t blocks) {
  struct L {
    std::size_t cout, cin, k;
  };
  std::vector<L> layers{{c, in, 7}, {2 * c, c, 3}, {4 * c, 2 * c, 3}};
  for (std::size_t i = 0; i < 2 * blocks; ++i) layers.push_back({4 * c, 4 * c, 3});
  layers.push_back({2 * c, 4 * c, 3});
  layers.push_back({c, 2 * c, 3});
  layers.push_back({in, c, 7});
  std::size_t n = 0;
  for (const auto& l : layers) n += l.cout * l.cin * l.k * l.k + l.cout;
  return n;
}

// Spatial extent through the critic: stride-2 4x4 pad-1 layers, then two stride-1 4x4 pad-1 layers.
std::size_t disc_extent_oracle(std::size_t extent, std::size_t n_layers) {
  for (std::size_t i = 0; i < n_layers; ++i) extent = (extent + 2 - 4) / 2 + 1;
  for (int i = 0; i < 2; ++i) extent = extent + 2 - 4 + 1;
  return extent;
}

}  // namespace

TEST(Generator, SameSeedGivesIdenticalParameters) {
  const GeneratorSpec spec{3, 8, 2, 16};
  EXPECT_EQ(build_generator(spec, 7).params, build_generator(spec, 7).params);
  EXPECT_FALSE(build_generator(spec, 7).params == build_generator(spec, 8).params);
}

TEST(Generator, ParameterCountMatchesLayerOracle) {
  const auto gen = build_generator(GeneratorSpec{3, 8, 2, 64}, 0);
  EXPECT_EQ(gen.params.parameter_count(), generator_count_oracle(3, 8, 2));
  EXPECT_EQ(gen.params.parameter_count(), 50947u);
}

TEST(Generator, InitialisationStatistics) {
  const auto gen = build_generator(GeneratorSpec{3, 16, 2, 16}, 3);
  const auto& w = gen.params.at("res0.conv1.w");
  double mean = 0.0, sq = 0.0;
  for (float v : w.values()) {
    mean += v;
    sq += static_cast<double>(v) * v;
  }
  mean /= w.size();
  const double std = std::sqrt(sq / w.size() - mean * mean);
  EXPECT_NEAR(mean, 0.0, 2e-3);
  EXPECT_NEAR(std, 0.02, 1e-3);
  for (float v : gen.params.at("res0.conv1.b").values()) EXPECT_EQ(v, 0.f);
}

TEST(Generator, ReferenceSpecPreservesShape) {
  const auto gen = build_generator(GeneratorSpec{3, 64, 6, 64}, 1);
  std::mt19937_64 rng(1);
  const auto y = generator_forward(gen, random_tensor<float>({1, 3, 64, 64}, rng));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
}

TEST(Generator, PreservesShapeAcrossTileSizes) {
  std::mt19937_64 rng(2);
  for (std::size_t s : {64u, 128u}) {
    const auto gen = build_generator(GeneratorSpec{3, 8, 2, s}, 1);
    const auto y = generator_forward(gen, random_tensor<float>({2, 3, s, s}, rng));
    EXPECT_EQ(y.shape(), (Shape{2, 3, s, s}));
  }
}

TEST(Generator, OutputsStayInTanhRange) {
  const auto gen = build_generator(GeneratorSpec{3, 2, 1, 8}, 4);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto y = generator_forward(gen, random_tensor<float>({1, 3, 8, 8}, rng));
    for (float v : y.values()) ASSERT_TRUE(v >= -1.f && v <= 1.f) << v;
  }
}

TEST(Generator, ZeroInputGivesFiniteBoundedOutput) {
  const auto gen = build_generator(GeneratorSpec{3, 16, 2, 32}, 5);
  const auto y = generator_forward(gen, Tensor<float>(Shape{1, 3, 32, 32}));
  for (float v : y.values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_LT(std::abs(v), 1.f);
  }
}

TEST(Generator, RejectsMismatchedInput) {
  const auto gen = build_generator(GeneratorSpec{3, 4, 1, 16}, 0);
  EXPECT_THROW(generator_forward(gen, Tensor<float>(Shape{1, 3, 32, 32})), ShapeError);
  EXPECT_THROW(generator_forward(gen, Tensor<float>(Shape{1, 1, 16, 16})), ShapeError);
}

TEST(Generator, RejectsInvalidSpec) {
  EXPECT_THROW(build_generator(GeneratorSpec{3, 8, 2, 30}, 0), SpecError);
  EXPECT_THROW(build_generator(GeneratorSpec{3, 8, 0, 32}, 0), SpecError);
  EXPECT_THROW(build_generator(GeneratorSpec{3, 0, 2, 32}, 0), SpecError);
}

TEST(Discriminator, SameSeedGivesIdenticalParameters) {
  const DiscriminatorSpec spec{3, 8, 3};
  EXPECT_EQ(build_discriminator(spec, 9).params, build_discriminator(spec, 9).params);
}

TEST(Discriminator, EmitsPatchLogitMap) {
  const auto disc = build_discriminator(DiscriminatorSpec{3, 8, 3}, 0);
  std::mt19937_64 rng(6);
  const auto y = discriminator_forward(disc, random_tensor<float>({1, 3, 64, 64}, rng));
  ASSERT_EQ(y.rank(), 4u);
  EXPECT_EQ(y.dim(1), 1u);
  EXPECT_GT(y.dim(2), 1u);
  EXPECT_GT(y.dim(3), 1u);
}

TEST(Discriminator, ExtentFollowsLayerRecurrence) {
  std::mt19937_64 rng(7);
  for (std::size_t n_layers : {1u, 2u, 3u}) {
    for (std::size_t s : {64u, 70u}) {
      const auto disc = build_discriminator(DiscriminatorSpec{3, 4, n_layers}, 0);
      const auto y = discriminator_forward(disc, random_tensor<float>({2, 3, s, s}, rng));
      EXPECT_EQ(y.shape(), (Shape{2, 1, disc_extent_oracle(s, n_layers), disc_extent_oracle(s, n_layers)}));
    }
  }
  EXPECT_EQ(disc_extent_oracle(70, 3), 6u);
}

TEST(Discriminator, RejectsWrongChannels) {
  const auto disc = build_discriminator(DiscriminatorSpec{3, 4, 3}, 0);
  EXPECT_THROW(discriminator_forward(disc, Tensor<float>(Shape{1, 1, 64, 64})), ShapeError);
}

TEST(Objective, EveryNetworkReceivesGradient) {
  const GeneratorSpec gs{3, 4, 1, 16};
  const DiscriminatorSpec ds{3, 4, 2};
  const auto r = build_generator(gs, 1), a = build_generator(gs, 2);
  const auto cd = build_discriminator(ds, 3), ch = build_discriminator(ds, 4);
  std::mt19937_64 rng(8);
  const auto d = random_tensor<float>({1, 3, 16, 16}, rng);
  const auto h = random_tensor<float>({1, 3, 16, 16}, rng);

  auto nonzero = [](const Tensor<float>& t) {
    for (float v : t.values())
      if (v != 0.f) return true;
    return false;
  };
  auto any_nonzero = [&](const BoundParams& p, const GradientMap<float>& g) {
    for (const auto& [name, v] : p.vars())
      if (nonzero(g.at(v))) return true;
    return false;
  };

  {
    Graph<float> g;
    BoundParams pr(g, r.params, true), pa(g, a.params, true), pcd(g, cd.params, false), pch(g, ch.params, false);
    auto dv = g.constant(d), hv = g.constant(h);
    auto fake_h = generator_forward(gs, pr, dv);
    auto fake_d = generator_forward(gs, pa, hv);
    auto cyc = cycle_loss(dv, generator_forward(gs, pa, fake_h), hv, generator_forward(gs, pr, fake_d));
    auto loss = full_objective(adv_loss_generator(discriminator_forward(ds, pch, fake_h)),
                               adv_loss_generator(discriminator_forward(ds, pcd, fake_d)), cyc, 10.0);
    const auto grads = g.backward(loss);
    EXPECT_TRUE(any_nonzero(pr, grads));
    EXPECT_TRUE(any_nonzero(pa, grads));
  }
  for (const Discriminator* disc : {&cd, &ch}) {
    Graph<float> g;
    BoundParams p(g, disc->params, true);
    auto loss = adv_loss_discriminator(discriminator_forward(ds, p, g.constant(h)),
                                       discriminator_forward(ds, p, g.constant(d)));
    EXPECT_TRUE(any_nonzero(p, g.backward(loss)));
  }
}
