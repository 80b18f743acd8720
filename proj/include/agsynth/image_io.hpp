#pragma once

// 8-bit RGB <-> [-1, 1] float tensor conversion and PNG I/O.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "agsynth/errors.hpp"

namespace agsynth {

/// Reads an image as 8-bit RGB (HxWx3). Throws IngestionError on failure.
inline cv::Mat read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IngestionError(path.string(), "unreadable image");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

inline void write_rgb_png(const std::filesystem::path& path, const cv::Mat& rgb) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

inline cv::Mat resize_rgb(const cv::Mat& rgb, std::int64_t size) {
  if (rgb.rows == size && rgb.cols == size) return rgb.clone();
  cv::Mat out;
  const bool shrinking = rgb.rows > size || rgb.cols > size;
  cv::resize(rgb, out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

/// 8-bit value v maps to v / 127.5 - 1, so 0 -> -1 and 255 -> 1.
inline torch::Tensor rgb_to_tensor(const cv::Mat& rgb) {
  CV_Assert(rgb.type() == CV_8UC3 && rgb.isContinuous());
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(rgb.ptr<std::uint8_t>()),
                              {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

/// Float value v maps to clamp(round((v + 1) * 127.5), 0, 255).
inline std::uint8_t to_8bit(double v) {
  const double scaled = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

inline cv::Mat tensor_to_rgb(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "expected a (3, H, W) image tensor");
  auto t = chw.detach().to(torch::kFloat64).contiguous();
  const auto h = static_cast<int>(t.size(1));
  const auto w = static_cast<int>(t.size(2));
  auto acc = t.accessor<double, 3>();
  cv::Mat out(h, w, CV_8UC3);
  for (int r = 0; r < h; ++r) {
    auto* row = out.ptr<cv::Vec3b>(r);
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < 3; ++k) row[c][k] = to_8bit(acc[k][r][c]);
    }
  }
  return out;
}

}  // namespace agsynth
