#pragma once

// Inference: attribute-transfer grids and realism refinement.

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "agsynth/data.hpp"
#include "agsynth/errors.hpp"
#include "agsynth/image_io.hpp"
#include "agsynth/model.hpp"
#include "agsynth/training.hpp"

namespace agsynth {

/// Frozen networks restored from a training checkpoint.
struct InferenceModel {
  TrainConfig config;
  Vocabulary vocabulary;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};

  std::int64_t image_size() const { return config.image_size; }
};

inline InferenceModel load_inference_model(const std::filesystem::path& path) {
  auto dict = Trainer::read_checkpoint_dict(path);
  auto get = [&](const std::string& k) {
    auto it = dict.find(k);
    if (it == dict.end()) throw CheckpointError(path.string() + ": missing key '" + k + "'");
    return it->value();
  };
  if (get("meta.format").item<std::int64_t>() != kCheckpointFormat) {
    throw CheckpointError(path.string() + ": unsupported checkpoint format");
  }
  InferenceModel m;
  try {
    m.config = train_config_from_json(nlohmann::json::parse(detail::tensor_string(get("meta.config"))));
    m.vocabulary = Vocabulary(nlohmann::json::parse(detail::tensor_string(get("meta.vocabulary")))
                                  .get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt metadata: " + e.what());
  }
  m.generator = Generator(m.config.generator, 0);
  m.discriminator = Discriminator(m.config.discriminator, 0);
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& prefix, torch::nn::Module& module) {
    for (auto& item : module.named_parameters()) {
      auto value = get(prefix + "." + item.key());
      if (value.sizes() != item.value().sizes()) {
        throw CheckpointError(path.string() + ": shape mismatch for " + prefix + "." + item.key());
      }
      item.value().copy_(value);
    }
  };
  restore("generator", *m.generator);
  restore("discriminator", *m.discriminator);
  m.generator->eval();
  m.discriminator->eval();
  return m;
}

/// Expands "all" to the full vocabulary and checks every name against it.
inline std::vector<std::string> resolve_attributes(const std::vector<std::string>& requested,
                                                   const Vocabulary& vocabulary) {
  if (requested.empty()) throw ValidationError("no target attributes requested");
  if (requested.size() == 1 && requested.front() == "all") return vocabulary.names();
  for (const auto& name : requested) {
    if (!vocabulary.find(name)) {
      throw ValidationError("attribute '" + name + "' is not in the checkpoint vocabulary");
    }
  }
  return requested;
}

inline torch::Tensor one_hot(std::int64_t index, std::int64_t n) {
  auto y = torch::zeros({1, n});
  y[0][index] = 1.0F;
  return y;
}

inline constexpr int kGridSeparator = 2;

/// Tiles equally sized RGB images left to right with a white 2-pixel gap.
inline cv::Mat tile_row(const std::vector<cv::Mat>& cells) {
  if (cells.empty()) throw ValidationError("empty grid");
  const int h = cells.front().rows;
  const int w = cells.front().cols;
  const int n = static_cast<int>(cells.size());
  cv::Mat grid(h, n * w + (n - 1) * kGridSeparator, CV_8UC3, cv::Scalar(255, 255, 255));
  for (int i = 0; i < n; ++i) {
    cells[static_cast<std::size_t>(i)].copyTo(grid(cv::Rect(i * (w + kGridSeparator), 0, w, h)));
  }
  return grid;
}

struct SynthesisRequest {
  std::filesystem::path checkpoint_path;
  std::filesystem::path input_image_path;
  std::filesystem::path landmark_path;    // heatmap-mode checkpoints
  std::filesystem::path side_image_path;  // side-image checkpoints
  std::vector<std::string> target_attributes{"all"};
  std::filesystem::path output_path;
};

struct SynthesisResult {
  std::vector<std::string> attributes;  // one per output column after the input
  std::vector<double> mean_abs_diff;    // per column, |x' - x| averaged over [-1, 1] pixels
  std::int64_t clamped_landmarks = 0;
};

/// Loads x and the side input at the model resolution as (1, 3, size, size).
inline std::pair<torch::Tensor, torch::Tensor> load_inputs(const InferenceModel& m,
                                                           const std::filesystem::path& image,
                                                           const std::filesystem::path& landmarks,
                                                           const std::filesystem::path& side,
                                                           std::int64_t* clamped = nullptr) {
  const auto size = m.image_size();
  const cv::Mat rgb = read_rgb(image);
  auto x = rgb_to_tensor(resize_rgb(rgb, size)).unsqueeze(0);
  if (m.config.refinement) {
    if (side.empty()) throw ConfigError("this checkpoint needs a side image");
    return {x, rgb_to_tensor(resize_rgb(read_rgb(side), size)).unsqueeze(0)};
  }
  if (landmarks.empty()) throw ConfigError("this checkpoint needs a landmark file");
  LandmarkSet lms;
  const double sx = static_cast<double>(size) / rgb.cols;
  const double sy = static_cast<double>(size) / rgb.rows;
  for (const auto& lm : read_landmarks(landmarks)) {
    lms.push_back({rescale_coordinate(lm.x, sx), rescale_coordinate(lm.y, sy)});
  }
  auto hm = render_heatmap(lms, size, HeatmapSpec::for_image_size(size));
  if (clamped != nullptr) *clamped = hm.clamped;
  return {x, hm.image.unsqueeze(0)};
}

inline SynthesisResult synthesize_grid(const InferenceModel& model, const SynthesisRequest& req) {
  SynthesisResult result;
  result.attributes = resolve_attributes(req.target_attributes, model.vocabulary);
  auto [x, s] = load_inputs(model, req.input_image_path, req.landmark_path, req.side_image_path,
                            &result.clamped_landmarks);
  torch::NoGradGuard no_grad;
  auto gen = model.generator;
  auto z = gen->encode(gen->concat_inputs(x, s));
  std::vector<cv::Mat> cells{tensor_to_rgb(x[0])};
  for (const auto& name : result.attributes) {
    auto out = gen->decode(z, one_hot(model.vocabulary.index_of(name), model.vocabulary.size()));
    result.mean_abs_diff.push_back((out.image - x).abs().mean().item<double>());
    cells.push_back(tensor_to_rgb(out.image[0]));
  }
  write_rgb_png(req.output_path, tile_row(cells));
  return result;
}

inline SynthesisResult synthesize_grid(const SynthesisRequest& req) {
  return synthesize_grid(load_inference_model(req.checkpoint_path), req);
}

/// Euclidean distance between the mean RGB colors of two images, in 8-bit units.
inline double palette_distance(const cv::Mat& a, const cv::Mat& b) {
  const cv::Scalar ma = cv::mean(a);
  const cv::Scalar mb = cv::mean(b);
  double acc = 0.0;
  for (int k = 0; k < 3; ++k) acc += (ma[k] - mb[k]) * (ma[k] - mb[k]);
  return std::sqrt(acc);
}

struct RefinementRequest {
  std::filesystem::path checkpoint_path;
  std::filesystem::path synthetic_frontal_path;  // x
  std::filesystem::path real_side_image_path;    // s
  std::optional<std::string> target_attribute;
  std::filesystem::path output_path;
};

struct RefinementResult {
  std::string attribute;
  bool attribute_inferred = false;
  double palette_distance_to_side = 0.0;
  double palette_distance_to_input = 0.0;
  std::filesystem::path metadata_path;
};

/// Without a target attribute, the critic's classifier picks the attribute of
/// the (x, s) pair so refinement leaves the expression alone.
inline RefinementResult refine(const InferenceModel& model, const RefinementRequest& req) {
  if (!model.config.refinement) {
    throw ConfigError("checkpoint was not trained for refinement (side input is a heatmap)");
  }
  const auto size = model.image_size();
  const cv::Mat x_rgb = resize_rgb(read_rgb(req.synthetic_frontal_path), size);
  const cv::Mat s_rgb = resize_rgb(read_rgb(req.real_side_image_path), size);
  auto x = rgb_to_tensor(x_rgb).unsqueeze(0);
  auto s = rgb_to_tensor(s_rgb).unsqueeze(0);

  torch::NoGradGuard no_grad;
  auto gen = model.generator;
  auto critic = model.discriminator;
  RefinementResult result;
  std::int64_t index = 0;
  if (req.target_attribute) {
    index = model.vocabulary.index_of(*req.target_attribute);
  } else {
    index = critic->discriminate(x, s).cls_logits.argmax(1).item<std::int64_t>();
    result.attribute_inferred = true;
  }
  result.attribute = model.vocabulary.name(index);
  auto out = gen->generate(x, s, one_hot(index, model.vocabulary.size()));
  const cv::Mat refined = tensor_to_rgb(out.image[0]);
  write_rgb_png(req.output_path, refined);

  result.palette_distance_to_side = palette_distance(refined, s_rgb);
  result.palette_distance_to_input = palette_distance(refined, x_rgb);
  result.metadata_path = req.output_path;
  result.metadata_path += ".json";
  nlohmann::ordered_json meta;
  meta["checkpoint"] = req.checkpoint_path.string();
  meta["synthetic_frontal"] = req.synthetic_frontal_path.string();
  meta["real_side_image"] = req.real_side_image_path.string();
  meta["attribute"] = result.attribute;
  meta["attribute_source"] = result.attribute_inferred ? "inferred" : "requested";
  meta["image_size"] = size;
  meta["palette_distance_to_side"] = result.palette_distance_to_side;
  meta["palette_distance_to_input"] = result.palette_distance_to_input;
  std::ofstream out_meta(result.metadata_path);
  if (!out_meta) throw IoError("cannot write " + result.metadata_path.string());
  out_meta << meta.dump(2) << '\n';
  return result;
}

inline RefinementResult refine(const RefinementRequest& req) {
  return refine(load_inference_model(req.checkpoint_path), req);
}

}  // namespace agsynth
