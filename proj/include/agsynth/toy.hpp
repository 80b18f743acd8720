#pragma once

// Procedural toy faces: an ellipse head whose tone, size and position carry
// identity, two eyes, and a mouth whose shape carries the expression.

#include <opencv2/imgproc.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "agsynth/data.hpp"
#include "agsynth/image_io.hpp"

namespace agsynth {

inline const std::array<std::string, 4>& toy_expressions() {
  static const std::array<std::string, 4> names{"neutral", "happy", "sad", "surprised"};
  return names;
}

struct ToyDatasetOptions {
  std::int64_t num_samples = 2000;
  std::int64_t num_attributes = 4;
  std::int64_t image_size = 32;
  std::uint64_t seed = 0;
  // Write gray flat-shaded faces to images/ and the colored originals to side/.
  bool refinement = false;
};

struct ToyFace {
  cv::Mat color;  // RGB
  cv::Mat gray;   // RGB, flat gray shading of the same geometry
  LandmarkSet landmarks;  // left eye, right eye, left mouth corner, right mouth corner, mouth center
  std::int64_t expression = 0;
};

namespace detail {

constexpr int kDrawShift = 4;
constexpr double kDrawScale = 16.0;

inline cv::Point draw_point(double x, double y) {
  return {static_cast<int>(std::lround(x * kDrawScale)), static_cast<int>(std::lround(y * kDrawScale))};
}

inline int draw_length(double v) { return static_cast<int>(std::lround(v * kDrawScale)); }

inline cv::Scalar gray_of(const cv::Scalar& rgb) {
  const double l = std::round(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
  return {l, l, l};
}

}  // namespace detail

template <typename Rng>
ToyFace draw_toy_face(Rng& rng, std::int64_t expression, std::int64_t size) {
  using detail::draw_length;
  using detail::draw_point;
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double u = static_cast<double>(size) / 32.0;
  const double center = static_cast<double>(size) / 2.0;

  const cv::Scalar background(40, 40, 40);
  const cv::Scalar eye_color(20, 20, 20);
  const cv::Scalar mouth_color(120, 20, 60);

  const double cx = center + uniform(-2.0, 2.0) * u;
  const double cy = center + uniform(-2.0, 2.0) * u;
  const double ax = uniform(10.0, 13.0) * u;
  const double ay = uniform(12.0, 14.5) * u;
  const double tone = uniform(0.45, 1.0);
  const cv::Scalar skin(std::round(250 * tone), std::round(205 * tone), std::round(170 * tone));
  const double eye_dx = uniform(4.0, 6.0) * u;
  const double eye_y = cy - 3.0 * u;
  const double mouth_y = cy + 6.0 * u;
  const double half_width = uniform(4.0, 5.5) * u;
  const double bend = 3.0 * u;
  const double o_radius = 2.5 * u;
  const int stroke = std::max(1, static_cast<int>(std::lround(u)));

  std::vector<std::pair<double, double>> mouth;
  Landmark left{cx - half_width, mouth_y}, right{cx + half_width, mouth_y}, mid{cx, mouth_y};
  switch (expression) {
    case 0:
      mouth = {{left.x, left.y}, {right.x, right.y}};
      break;
    case 1:
    case 2: {
      const double dir = expression == 1 ? 1.0 : -1.0;  // rows grow downward
      mid.y = mouth_y + dir * bend;
      mouth = {{left.x, left.y},
               {cx - half_width / 2, mouth_y + dir * bend * 0.75},
               {mid.x, mid.y},
               {cx + half_width / 2, mouth_y + dir * bend * 0.75},
               {right.x, right.y}};
      break;
    }
    default:
      left = {cx - o_radius, mouth_y};
      right = {cx + o_radius, mouth_y};
      break;
  }

  auto paint = [&](cv::Mat& img, bool gray) {
    auto col = [gray](const cv::Scalar& c) { return gray ? detail::gray_of(c) : c; };
    img = cv::Mat(static_cast<int>(size), static_cast<int>(size), CV_8UC3, col(background));
    cv::ellipse(img, draw_point(cx, cy), cv::Size(draw_length(ax), draw_length(ay)), 0, 0, 360,
                col(skin), cv::FILLED, cv::LINE_AA, detail::kDrawShift);
    for (double side : {-1.0, 1.0}) {
      cv::circle(img, draw_point(cx + side * eye_dx, eye_y), draw_length(1.5 * u), col(eye_color),
                 cv::FILLED, cv::LINE_AA, detail::kDrawShift);
    }
    if (expression >= 3) {
      cv::circle(img, draw_point(cx, mouth_y), draw_length(o_radius), col(mouth_color), stroke,
                 cv::LINE_AA, detail::kDrawShift);
    } else {
      std::vector<cv::Point> pts;
      for (const auto& [x, y] : mouth) pts.push_back(draw_point(x, y));
      cv::polylines(img, pts, false, col(mouth_color), stroke, cv::LINE_AA, detail::kDrawShift);
    }
  };

  ToyFace face;
  face.expression = expression;
  paint(face.color, false);
  paint(face.gray, true);
  face.landmarks = {{cx - eye_dx, eye_y}, {cx + eye_dx, eye_y}, left, right, mid};
  return face;
}

/// Writes a toy dataset in the standard directory layout and returns its
/// manifest. Sample i has expression i mod num_attributes. Deterministic in
/// the options.
inline DatasetManifest generate_toy_dataset(const fs::path& root, const ToyDatasetOptions& opts) {
  if (opts.num_attributes < 1 || opts.num_attributes > 4) {
    throw ConfigError("toy datasets support 1 to 4 expression archetypes");
  }
  if (opts.num_samples < 1) throw ConfigError("toy dataset needs at least one sample");
  if (opts.image_size < 16) throw ConfigError("toy image_size must be at least 16");

  const auto& expressions = toy_expressions();
  DatasetManifest m;
  m.root = root;
  m.vocabulary = Vocabulary({expressions.begin(), expressions.begin() + opts.num_attributes});
  m.side_mode = opts.refinement ? SideMode::kImage : SideMode::kHeatmap;

  std::mt19937_64 rng(opts.seed);
  for (std::int64_t i = 0; i < opts.num_samples; ++i) {
    const std::int64_t expression = i % opts.num_attributes;
    auto face = draw_toy_face(rng, expression, opts.image_size);
    char name[32];
    std::snprintf(name, sizeof(name), "toy_%06lld", static_cast<long long>(i));
    ManifestEntry e;
    e.name = name;
    e.labels = {expressions[static_cast<std::size_t>(expression)]};
    e.image_path = root / "images" / (e.name + ".png");
    if (opts.refinement) {
      e.side_image_path = root / "side" / (e.name + ".png");
      write_rgb_png(e.image_path, face.gray);
      write_rgb_png(e.side_image_path, face.color);
    } else {
      e.landmark_path = root / "landmarks" / (e.name + ".txt");
      write_rgb_png(e.image_path, face.color);
      write_landmarks(e.landmark_path, face.landmarks);
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest_index(m);
  return m;
}

}  // namespace agsynth
