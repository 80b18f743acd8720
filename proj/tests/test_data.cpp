#include <gtest/gtest.h>

#include <torch/torch.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "agsynth/data.hpp"
#include "agsynth/toy.hpp"
#include "heatmap_oracle.hpp"

using namespace agsynth;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::path(::testing::TempDir()) / ("agsynth_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

using agsynth::testing::brute_force_heatmap;
using agsynth::testing::random_landmarks;

DatasetManifest small_toy(const std::string& name, std::int64_t n = 16, std::uint64_t seed = 3,
                          bool refinement = false) {
  ToyDatasetOptions o;
  o.num_samples = n;
  o.seed = seed;
  o.refinement = refinement;
  return generate_toy_dataset(fresh_dir(name), o);
}

}  // namespace

TEST(Heatmap, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(1, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t size = trial % 2 == 0 ? 32 : 24;
    const HeatmapSpec spec{trial % 3 == 0 ? 0.5 : 1.7};
    const auto lms = random_landmarks(rng, size, count(rng));
    const auto hm = render_heatmap(lms, size, spec);
    const auto oracle = brute_force_heatmap(lms, size, spec.sigma);
    ASSERT_EQ(hm.image.sizes(), (std::vector<std::int64_t>{3, size, size}));
    for (int ch = 0; ch < 3; ++ch) {
      const double err = (hm.image[ch].to(torch::kFloat64) - oracle).abs().max().item<double>();
      ASSERT_LE(err, 1e-6) << "trial " << trial << " channel " << ch;
    }
  }
}

TEST(Heatmap, PeakAtLandmarkPixelAndRadialDecrease) {
  const auto hm = render_heatmap({{3.0, 4.0}}, 8, HeatmapSpec{1.0});
  const auto img = hm.image[0];
  EXPECT_FLOAT_EQ(img[4][3].item<float>(), 1.0F);
  EXPECT_LT(img[4][4].item<float>(), 1.0F);
  EXPECT_LT(img[4][5].item<float>(), img[4][4].item<float>());
  EXPECT_LT(img[4][6].item<float>(), img[4][5].item<float>());
  EXPECT_LE(hm.image.max().item<float>(), 1.0F);
}

TEST(Heatmap, OneOnlyAtLandmarkPixels) {
  const LandmarkSet lms{{2.0, 5.0}, {10.0, 1.0}};
  const auto img = render_heatmap(lms, 16, HeatmapSpec{0.5}).image[0];
  EXPECT_EQ((img == 1.0F).sum().item<std::int64_t>(), 2);
  EXPECT_EQ(img[5][2].item<float>(), 1.0F);
  EXPECT_EQ(img[1][10].item<float>(), 1.0F);
}

TEST(Heatmap, EmptySetIsBackgroundWithFlag) {
  const auto hm = render_heatmap({}, 8, HeatmapSpec{});
  EXPECT_TRUE(hm.empty);
  EXPECT_TRUE(torch::equal(hm.image, torch::full({3, 8, 8}, -1.0F)));
}

TEST(Heatmap, TwoLandmarksArePixelwiseMax) {
  const Landmark a{2.5, 3.0}, b{4.0, 4.25};
  const HeatmapSpec spec{1.2};
  auto both = render_heatmap({a, b}, 12, spec).image;
  auto max_of = torch::maximum(render_heatmap({a}, 12, spec).image, render_heatmap({b}, 12, spec).image);
  EXPECT_TRUE(torch::equal(both, max_of));
}

TEST(Heatmap, OutOfFrameLandmarksAreClampedAndCounted) {
  const auto hm = render_heatmap({{-3.0, 2.0}, {5.0, 40.0}, {1.0, 1.0}}, 8, HeatmapSpec{0.5});
  EXPECT_EQ(hm.clamped, 2);
  EXPECT_EQ(hm.image[0][2][0].item<float>(), 1.0F);
  EXPECT_EQ(hm.image[0][7][5].item<float>(), 1.0F);
  EXPECT_THROW(render_heatmap({{NAN, 1.0}}, 8, HeatmapSpec{}), ValidationError);
}

TEST(Heatmap, SigmaScalesWithSizeAndMustBePositive) {
  EXPECT_DOUBLE_EQ(HeatmapSpec::for_image_size(128).sigma, 2.0);
  EXPECT_DOUBLE_EQ(HeatmapSpec::for_image_size(32).sigma, 0.5);
  EXPECT_THROW(render_heatmap({}, 8, HeatmapSpec{0.0}), ConfigError);
}

TEST(Flip, RenderCommutesWithFlipExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coord(0.0, 31.0);
  for (int trial = 0; trial < 50; ++trial) {
    LandmarkSet lms;
    for (int k = 0; k < 5; ++k) lms.push_back({coord(rng), coord(rng)});
    const HeatmapSpec spec{trial % 2 == 0 ? 0.5 : 2.0};
    auto flipped_render = flip_horizontal(render_heatmap(lms, 32, spec).image);
    auto render_flipped = render_heatmap(flip_landmarks(lms, 32), 32, spec).image;
    ASSERT_TRUE(torch::equal(flipped_render, render_flipped)) << "trial " << trial;
  }
}

TEST(Flip, LandmarkMirroringAndInvolution) {
  EXPECT_EQ(flip_landmarks({{0.0, 7.0}}, 128).front(), (Landmark{127.0, 7.0}));
  auto x = torch::rand({3, 4, 6});
  auto s = torch::rand({3, 4, 6});
  const LandmarkSet lms{{1.25, 2.0}, {4.0, 0.5}};
  auto once = apply_flip(x, s, lms, true);
  auto twice = apply_flip(once.x, once.s, once.landmarks, true);
  EXPECT_TRUE(torch::equal(twice.x, x));
  EXPECT_TRUE(torch::equal(twice.s, s));
  EXPECT_EQ(twice.landmarks, lms);
  EXPECT_FALSE(torch::equal(once.x, x));
  auto kept = apply_flip(x, s, lms, false);
  EXPECT_TRUE(torch::equal(kept.x, x));
}

TEST(Flip, DecisionIsSharedAndFair) {
  std::mt19937_64 rng(8);
  auto x = torch::arange(6, torch::kFloat32).reshape({1, 1, 6});
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    auto r = augment_flip(x, x * 2, {{1.0, 0.0}}, rng);
    EXPECT_TRUE(torch::equal(r.s, r.x * 2));
    EXPECT_EQ(r.landmarks.front().x, r.flipped ? 4.0 : 1.0);
    flips += r.flipped ? 1 : 0;
  }
  EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
}

TEST(Attributes, EncodeOneHotAndOrderIndependent) {
  const Vocabulary v({"anger", "disgust", "fear", "happiness", "sadness", "surprise", "contempt", "neutral"});
  auto y = encode_attributes({"happiness"}, v);
  auto expected = torch::zeros({8});
  expected[3] = 1.0F;
  EXPECT_TRUE(torch::equal(y, expected));
  EXPECT_TRUE(torch::equal(encode_attributes({}, v), torch::zeros({8})));
  EXPECT_TRUE(torch::equal(encode_attributes({"fear", "neutral"}, v), encode_attributes({"neutral", "fear"}, v)));
  try {
    encode_attributes({"joy"}, v);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("joy"), std::string::npos);
  }
}

TEST(Attributes, VocabularyRejectsDuplicates) {
  EXPECT_THROW(Vocabulary({"a", "b", "a"}), ValidationError);
  EXPECT_THROW(Vocabulary({"a", ""}), ValidationError);
}

TEST(TargetSampling, PermutationProperties) {
  std::mt19937_64 rng(1);
  auto single = torch::tensor({{0.F, 1.F, 0.F}});
  EXPECT_TRUE(torch::equal(sample_target_attributes(single, rng), single));
  auto labels = torch::eye(5).index_select(0, torch::tensor({0, 2, 2, 4, 1, 3, 0, 4}));
  for (int i = 0; i < 20; ++i) {
    auto t = sample_target_attributes(labels, rng);
    EXPECT_TRUE(torch::equal(t.sum(0), labels.sum(0)));
  }
  EXPECT_THROW(sample_target_attributes(torch::zeros({0, 3}), rng), ValidationError);
}

TEST(TargetSampling, AllSixPermutationsEquallyLikely) {
  std::mt19937_64 rng(77);
  auto labels = torch::eye(3);
  std::map<std::array<std::int64_t, 3>, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto idx = sample_target_attributes(labels, rng).argmax(1);
    counts[{idx[0].item<std::int64_t>(), idx[1].item<std::int64_t>(), idx[2].item<std::int64_t>()}]++;
  }
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [perm, n] : counts) EXPECT_NEAR(n / double(draws), 1.0 / 6.0, 0.02);
}

TEST(ImageRange, EightBitEndpoints) {
  cv::Mat img(1, 2, CV_8UC3);
  img.at<cv::Vec3b>(0, 0) = {255, 255, 255};
  img.at<cv::Vec3b>(0, 1) = {0, 0, 0};
  auto t = rgb_to_tensor(img);
  EXPECT_FLOAT_EQ(t[0][0][0].item<float>(), 1.0F);
  EXPECT_FLOAT_EQ(t[2][0][1].item<float>(), -1.0F);
  EXPECT_EQ(to_8bit(1.0), 255);
  EXPECT_EQ(to_8bit(-1.0), 0);
  EXPECT_EQ(to_8bit(3.0), 255);
}

TEST(ToyData, MouthGeometryEncodesExpression) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t expr = trial % 4;
    const auto face = draw_toy_face(rng, expr, 32);
    ASSERT_EQ(face.landmarks.size(), 5u);
    const auto& left = face.landmarks[2];
    const auto& right = face.landmarks[3];
    const auto& mid = face.landmarks[4];
    if (expr == 1) {
      EXPECT_GT(mid.y, left.y);
      EXPECT_GT(mid.y, right.y);
    } else if (expr == 2) {
      EXPECT_LT(mid.y, left.y);
      EXPECT_LT(mid.y, right.y);
    } else {
      EXPECT_EQ(mid.y, left.y);
    }
    EXPECT_LT(face.landmarks[0].x, face.landmarks[1].x);
  }
}

TEST(ToyData, GrayFaceSharesGeometry) {
  std::mt19937_64 rng(4);
  const auto face = draw_toy_face(rng, 1, 32);
  cv::Mat channels[3];
  cv::split(face.gray, channels);
  EXPECT_EQ(cv::countNonZero(channels[0] != channels[1]), 0);
  EXPECT_EQ(cv::countNonZero(channels[1] != channels[2]), 0);
  // Anti-aliasing blends linearly, so luminance agrees up to rounding.
  cv::Mat luminance, diff;
  cv::cvtColor(face.color, luminance, cv::COLOR_RGB2GRAY);
  cv::absdiff(luminance, channels[0], diff);
  double worst = 0.0;
  cv::minMaxLoc(diff, nullptr, &worst);
  EXPECT_LE(worst, 2.0);
}

TEST(ToyData, SameSeedSameFiles) {
  const auto a = small_toy("seed_a", 12, 3);
  const auto b = small_toy("seed_b", 12, 3);
  const auto c = small_toy("seed_c", 12, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(slurp(a.entries[i].image_path), slurp(b.entries[i].image_path));
    EXPECT_EQ(slurp(a.entries[i].landmark_path), slurp(b.entries[i].landmark_path));
  }
  EXPECT_EQ(slurp(a.root / "labels.tsv"), slurp(b.root / "labels.tsv"));
  EXPECT_NE(slurp(a.entries[0].image_path), slurp(c.entries[0].image_path));
}

TEST(ToyData, LayoutRoundTripsThroughLoader) {
  const auto written = small_toy("layout", 10);
  const auto loaded = load_manifest(written.root);
  EXPECT_EQ(loaded.vocabulary, written.vocabulary);
  EXPECT_EQ(loaded.side_mode, SideMode::kHeatmap);
  ASSERT_EQ(loaded.size(), 10u);
  EXPECT_EQ(loaded.entries[5].labels, (std::vector<std::string>{"happy"}));
  EXPECT_EQ(read_landmarks(loaded.entries[0].landmark_path).size(), 5u);

  const auto refine = small_toy("layout_refine", 4, 3, true);
  EXPECT_EQ(load_manifest(refine.root).side_mode, SideMode::kImage);
  EXPECT_THROW(generate_toy_dataset(fresh_dir("bad"), ToyDatasetOptions{10, 5}), ConfigError);
}

TEST(LoadBatch, DefaultShapesAndRange) {
  const auto m = small_toy("batch", 8);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  const auto b = load_batch(m, idx, 128, 11);
  EXPECT_EQ(b.x.sizes(), (std::vector<std::int64_t>{8, 3, 128, 128}));
  EXPECT_EQ(b.s.sizes(), (std::vector<std::int64_t>{8, 3, 128, 128}));
  EXPECT_EQ(b.y_original.sizes(), (std::vector<std::int64_t>{8, 4}));
  EXPECT_LE(b.x.abs().max().item<float>(), 1.0F);
  EXPECT_LE(b.s.abs().max().item<float>(), 1.0F);
  EXPECT_TRUE(torch::equal(b.y_target.sum(0), b.y_original.sum(0)));
}

TEST(LoadBatch, SameSeedBitIdentical) {
  const auto m = small_toy("determinism", 12);
  std::vector<std::size_t> idx{3, 7, 1, 10, 0, 5};
  const auto a = load_batch(m, idx, 32, 99);
  const auto b = load_batch(m, idx, 32, 99);
  EXPECT_TRUE(torch::equal(a.x, b.x));
  EXPECT_TRUE(torch::equal(a.s, b.s));
  EXPECT_TRUE(torch::equal(a.y_target, b.y_target));
  bool any_diff = false;
  for (std::uint64_t seed = 100; seed < 110 && !any_diff; ++seed) {
    const auto c = load_batch(m, idx, 32, seed);
    any_diff = !torch::equal(a.x, c.x) || !torch::equal(a.y_target, c.y_target);
  }
  EXPECT_TRUE(any_diff);
}

TEST(LoadBatch, DataSourceMatchesLoadBatch) {
  const auto m = small_toy("source", 12);
  DataSource src(m, 32);
  std::vector<std::size_t> idx{2, 9, 4};
  const auto a = src.batch(idx, 5);
  const auto b = load_batch(m, idx, 32, 5);
  EXPECT_TRUE(torch::equal(a.x, b.x));
  EXPECT_TRUE(torch::equal(a.s, b.s));
  EXPECT_TRUE(torch::equal(a.y_target, b.y_target));
}

TEST(LoadBatch, RescaledLandmarksFollowPixelCenters) {
  EXPECT_DOUBLE_EQ(rescale_coordinate(0.0, 4.0), 1.5);
  EXPECT_DOUBLE_EQ(rescale_coordinate(31.0, 4.0), 125.5);
  EXPECT_DOUBLE_EQ(rescale_coordinate(7.0, 1.0), 7.0);
}

TEST(Ingestion, ErrorsNameTheFile) {
  const auto m = small_toy("errors", 4);
  auto expect_ingestion = [](const fs::path& root, const std::string& fragment) {
    try {
      load_manifest(root);
      FAIL() << "expected IngestionError for " << fragment;
    } catch (const IngestionError& e) {
      EXPECT_NE(e.path().find(fragment), std::string::npos) << e.what();
    }
  };
  fs::remove(m.entries[1].landmark_path);
  expect_ingestion(m.root, "toy_000001.txt");

  const auto m2 = small_toy("errors_label", 4);
  {
    std::ofstream out(m2.root / "labels.tsv", std::ios::app);
    out << "toy_000000\tecstatic\n";
  }
  expect_ingestion(m2.root, "labels.tsv");

  const auto m3 = small_toy("errors_image", 4);
  {
    std::ofstream out(m3.entries[2].image_path, std::ios::trunc);
    out << "not a png";
  }
  const auto loaded = load_manifest(m3.root);
  EXPECT_THROW(DataSource(loaded, 32), IngestionError);

  const auto m4 = small_toy("errors_landmark", 4);
  {
    std::ofstream out(m4.entries[0].landmark_path, std::ios::app);
    out << "12 oops\n";
  }
  EXPECT_THROW(DataSource(load_manifest(m4.root), 32), IngestionError);
  expect_ingestion(fresh_dir("errors_empty"), "vocabulary.txt");
}
