#include <gtest/gtest.h>

#include <torch/torch.h>

#include "agsynth/model.hpp"
#include "architecture_tables.hpp"

using namespace agsynth;

namespace {

GeneratorConfig tiny_generator(std::int64_t size = 16, std::int64_t base = 4, std::int64_t n_y = 3) {
  GeneratorConfig cfg;
  cfg.image_size = size;
  cfg.base_channels = base;
  cfg.latent_channels = base * 16;
  cfg.num_residual_blocks = 2;
  cfg.num_attributes = n_y;
  return cfg;
}

torch::Tensor random_images(std::int64_t b, std::int64_t c, std::int64_t size, std::uint64_t seed) {
  auto gen = make_cpu_generator(seed);
  return torch::rand({b, c, size, size}, gen) * 2 - 1;
}

// Independent oracle: out[b, c, h*r + i, w*r + j] = in[b, c*r*r + i*r + j, h, w].
torch::Tensor depth_to_space_oracle(const torch::Tensor& in, std::int64_t r) {
  const auto B = in.size(0), C = in.size(1) / (r * r), H = in.size(2), W = in.size(3);
  auto out = torch::empty({B, C, H * r, W * r}, in.options());
  auto src = in.accessor<float, 4>();
  auto dst = out.accessor<float, 4>();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w)
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < r; ++j)
              dst[b][c][h * r + i][w * r + j] = src[b][c * r * r + i * r + j][h][w];
  return out;
}

}  // namespace

TEST(Architecture, GeneratorMatchesTableAtDefaults) {
  torch::NoGradGuard no_grad;
  GeneratorConfig cfg;
  Generator g(cfg, 1);
  auto x = random_images(1, 3, 128, 2);
  auto y = torch::zeros({1, cfg.num_attributes});
  const auto err = agsynth::testing::compare_rows(g->trace(x, x, y),
                                                 agsynth::testing::generator_table(128, 8));
  EXPECT_EQ(err, "");
}

TEST(Architecture, DiscriminatorMatchesTableAtDefaults) {
  torch::NoGradGuard no_grad;
  DiscriminatorConfig cfg;
  Discriminator d(cfg, 1);
  const auto err = agsynth::testing::compare_rows(d->trace(random_images(1, 6, 128, 3)),
                                                 agsynth::testing::discriminator_table(128, 8));
  EXPECT_EQ(err, "");
}

TEST(Generator, EncodeDefaultShape) {
  torch::NoGradGuard no_grad;
  Generator g(GeneratorConfig{}, 1);
  auto z = g->encode(random_images(8, 6, 128, 4));
  EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{8, 1024, 8, 8}));
}

TEST(Generator, EncodeToyShape) {
  torch::NoGradGuard no_grad;
  Generator g(tiny_generator(16, 4), 1);
  EXPECT_EQ(g->encode(random_images(1, 6, 16, 5)).sizes(), (std::vector<std::int64_t>{1, 64, 1, 1}));
}

TEST(Generator, FirstConvParameterCount) {
  Generator g(GeneratorConfig{}, 1);
  auto& conv = g->encoder_blocks().front()->conv;
  EXPECT_EQ(count_parameters(*conv), 6 * 64 * 7 * 7 + 64);
  EXPECT_EQ(count_parameters(*conv), 18880);
}

TEST(Generator, DecodeShapesFromLatent) {
  torch::NoGradGuard no_grad;
  GeneratorConfig cfg;
  cfg.num_attributes = 5;
  Generator g(cfg, 1);
  auto z = torch::randn({2, 1024, 8, 8});
  auto out = g->decode(z, torch::zeros({2, 5}));
  EXPECT_EQ(out.image.sizes(), (std::vector<std::int64_t>{2, 3, 128, 128}));
  EXPECT_EQ(out.side.sizes(), (std::vector<std::int64_t>{2, 3, 128, 128}));
}

TEST(Generator, ZeroHeadsGiveZeroOutput) {
  torch::NoGradGuard no_grad;
  Generator g(tiny_generator(), 1);
  g->image_head->weight.zero_();
  g->image_head->bias.zero_();
  g->side_head->weight.zero_();
  g->side_head->bias.zero_();
  auto out = g->decode(torch::zeros({2, 64, 1, 1}), torch::zeros({2, 3}));
  EXPECT_TRUE(torch::equal(out.image, torch::zeros_like(out.image)));
  EXPECT_TRUE(torch::equal(out.side, torch::zeros_like(out.side)));
}

TEST(DepthToSpace, DocumentedInterleaving) {
  // Channels {a, b, c, d} of one pixel become the 2x2 block [[a, b], [c, d]].
  auto in = torch::arange(16, torch::kFloat32).reshape({1, 4, 2, 2});
  auto out = depth_to_space(in, 2);
  ASSERT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 1, 4, 4}));
  auto expected = torch::tensor({0.F, 4.F, 1.F, 5.F, 8.F, 12.F, 9.F, 13.F,
                                 2.F, 6.F, 3.F, 7.F, 10.F, 14.F, 11.F, 15.F})
                      .reshape({1, 1, 4, 4});
  EXPECT_TRUE(torch::equal(out, expected));
}

TEST(DepthToSpace, MatchesBruteForceOracle) {
  auto gen = make_cpu_generator(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto in = torch::randn({2, 12, 3, 5}, gen);
    EXPECT_TRUE(torch::equal(depth_to_space(in, 2), depth_to_space_oracle(in, 2)));
  }
}

TEST(Generator, DeterministicAndBounded) {
  torch::NoGradGuard no_grad;
  Generator g(tiny_generator(), 7);
  auto x = random_images(3, 3, 16, 1) * 50;
  auto s = random_images(3, 3, 16, 2) * 50;
  auto y = torch::eye(3);
  auto a = g->generate(x, s, y);
  auto b = g->generate(x, s, y);
  EXPECT_TRUE(torch::equal(a.image, b.image));
  EXPECT_TRUE(torch::equal(a.side, b.side));
  EXPECT_LE(a.image.abs().max().item<float>(), 1.0F);
  EXPECT_LE(a.side.abs().max().item<float>(), 1.0F);
  EXPECT_EQ(g->encode(g->concat_inputs(a.image, a.side)).sizes(),
            g->encode(g->concat_inputs(x, s)).sizes());
}

TEST(Generator, AttributeChangesOutput) {
  torch::NoGradGuard no_grad;
  Generator g(tiny_generator(), 3);
  auto z = g->encode(g->concat_inputs(random_images(1, 3, 16, 1), random_images(1, 3, 16, 2)));
  auto a = g->decode(z, torch::tensor({{1.F, 0.F, 0.F}}));
  auto b = g->decode(z, torch::tensor({{0.F, 1.F, 0.F}}));
  EXPECT_GT((a.image - b.image).abs().max().item<float>(), 0.0F);
}

TEST(Generator, ShapeErrorsNameTheDimension) {
  Generator g(tiny_generator(), 1);
  try {
    g->encode(torch::zeros({1, 5, 16, 16}));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
  try {
    g->encode(torch::zeros({1, 6, 16, 32}));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  EXPECT_THROW(g->decode(torch::zeros({1, 64, 1, 1}), torch::zeros({1, 4})), ConfigError);
}

TEST(GeneratorConfig, RejectsSizesNotDivisibleBy16) {
  auto cfg = tiny_generator();
  cfg.image_size = 24;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_generator();
  cfg.latent_channels = 63;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Discriminator, DefaultOutputShapes) {
  torch::NoGradGuard no_grad;
  DiscriminatorConfig cfg;
  cfg.num_attributes = 6;
  Discriminator d(cfg, 1);
  auto out = d->discriminate(random_images(8, 3, 128, 1), random_images(8, 3, 128, 2));
  EXPECT_EQ(out.src_map.sizes(), (std::vector<std::int64_t>{8, 1, 2, 2}));
  EXPECT_EQ(out.cls_logits.sizes(), (std::vector<std::int64_t>{8, 6}));
}

TEST(Discriminator, FcInputFeatures) {
  DiscriminatorConfig cfg;
  EXPECT_EQ(cfg.fc_in_features(), 2 * 2 * 2048);
  Discriminator d(cfg, 1);
  EXPECT_EQ(d->cls_head->weight.size(1), 8192);
}

TEST(Discriminator, NotScaleInvariant) {
  torch::NoGradGuard no_grad;
  Discriminator d(DiscriminatorConfig::toy(4), 1);
  auto in = random_images(2, 6, 32, 9);
  EXPECT_FALSE(torch::allclose(d->forward(in).src_map, d->forward(in * 2).src_map));
}

TEST(Discriminator, ToyConfigGivesTwoByTwoMap) {
  torch::NoGradGuard no_grad;
  Discriminator d(DiscriminatorConfig::toy(4), 1);
  auto out = d->forward(random_images(3, 6, 32, 1));
  EXPECT_EQ(out.src_map.sizes(), (std::vector<std::int64_t>{3, 1, 2, 2}));
  auto bad = DiscriminatorConfig::toy(4);
  bad.image_size = 24;
  EXPECT_THROW(bad.validate(), ConfigError);
}
