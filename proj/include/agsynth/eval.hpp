#pragma once

// Evaluation harness: oracle attribute classifier, attribute accuracy of
// generated images, and the synthetic-augmentation sweep.

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "agsynth/data.hpp"
#include "agsynth/errors.hpp"
#include "agsynth/image_io.hpp"
#include "agsynth/model.hpp"
#include "agsynth/synthesis.hpp"

namespace agsynth {

/// The critic's hidden stack on the image alone, global average pooling and
/// an m-way linear head.
class OracleClassifierImpl : public torch::nn::Module {
 public:
  OracleClassifierImpl(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.input_channels = 3;
    cfg_.validate();
    hidden = register_module("hidden", CriticStack(cfg_.input_channels, cfg_.base_channels,
                                                   cfg_.num_layers, cfg_.leaky_slope));
    head = register_module("head", torch::nn::Linear(cfg_.top_channels(), cfg_.num_attributes));
    auto gen = make_cpu_generator(seed);
    initialize_weights(*this, cfg_.init_std, gen);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    detail::check_image_batch(x, 3, cfg_.image_size, "classifier input");
    return head(hidden(x).mean({2, 3}));
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  CriticStack hidden{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  DiscriminatorConfig cfg_;
};
TORCH_MODULE(OracleClassifier);

struct OracleOptions {
  std::int64_t epochs = 20;
  double lr = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::int64_t batch_size = 8;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

/// Images with single-class labels, in memory.
struct LabeledImages {
  torch::Tensor images;  // (N, 3, size, size)
  torch::Tensor labels;  // (N) int64 class indices

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

inline LabeledImages concat(const LabeledImages& a, const LabeledImages& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  return {torch::cat({a.images, b.images}), torch::cat({a.labels, b.labels})};
}

/// Held-out split of a labeled dataset. Entries are ordered by name before the
/// seeded shuffle, so the split ignores manifest order.
struct DatasetSplit {
  std::vector<std::size_t> train;  // indices into the DataSource
  std::vector<std::size_t> test;
};

inline std::int64_t single_label(const Sample& s, std::size_t i) {
  auto nz = s.attributes.nonzero();
  if (nz.size(0) != 1) {
    throw ValidationError("sample " + std::to_string(i) + " must carry exactly one attribute");
  }
  return nz[0][0].item<std::int64_t>();
}

inline DatasetSplit split_dataset(const DataSource& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  const auto& entries = data.manifest().entries;
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].name < entries[b].name; });
  std::mt19937_64 rng(derive_seed(seed, 0x5350));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(order.size())));
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  if (split.train.empty() || split.test.empty()) {
    throw ValidationError("dataset too small for a train/test split");
  }
  return split;
}

inline LabeledImages gather(const DataSource& data, const std::vector<std::size_t>& indices) {
  std::vector<torch::Tensor> xs;
  std::vector<std::int64_t> ys;
  for (auto i : indices) {
    const auto& s = data.sample(i);
    xs.push_back(s.image);
    ys.push_back(single_label(s, i));
  }
  return {torch::stack(xs), torch::tensor(ys, torch::kInt64)};
}

inline torch::Tensor predict(OracleClassifier& clf, const torch::Tensor& images,
                             std::int64_t batch_size = 64) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    out.push_back(clf->forward(images.slice(0, i, std::min(i + batch_size, images.size(0)))).argmax(1));
  }
  return torch::cat(out);
}

inline double accuracy(OracleClassifier& clf, const LabeledImages& data) {
  if (data.size() == 0) throw ValidationError("accuracy on an empty set");
  return predict(clf, data.images).eq(data.labels).to(torch::kFloat64).mean().item<double>();
}

/// Trains a fresh classifier with cross-entropy and Adam; deterministic in
/// (train data, config, options).
inline OracleClassifier fit_oracle(const LabeledImages& train, const DiscriminatorConfig& cfg,
                                   const OracleOptions& opts) {
  if (train.size() == 0) throw ValidationError("empty classifier training set");
  const auto classes = std::get<0>(at::_unique(train.labels));
  if (classes.size(0) < 2) throw ValidationError("classifier training needs at least two classes");
  for (std::int64_t k = 0; k < cfg.num_attributes; ++k) {
    if (!train.labels.eq(k).any().item<bool>()) {
      throw ValidationError("class " + std::to_string(k) + " is absent from the training split");
    }
  }
  OracleClassifier clf(cfg, derive_seed(opts.seed, 0x4f52));
  torch::optim::Adam opt(clf->parameters(), torch::optim::AdamOptions(opts.lr)
                                                .betas({opts.adam_beta1, opts.adam_beta2}));
  std::mt19937_64 rng(derive_seed(opts.seed, 0x4f53));
  std::vector<std::int64_t> order(static_cast<std::size_t>(train.size()));
  for (std::int64_t e = 0; e < opts.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::int64_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(opts.batch_size)) {
      const auto end = std::min(order.size(), i + static_cast<std::size_t>(opts.batch_size));
      auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + static_cast<std::ptrdiff_t>(i),
                                                         order.begin() + static_cast<std::ptrdiff_t>(end)),
                               torch::kInt64);
      auto loss = torch::nn::functional::cross_entropy(clf->forward(train.images.index_select(0, idx)),
                                                       train.labels.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  clf->eval();
  return clf;
}

inline DiscriminatorConfig oracle_config(const DiscriminatorConfig& critic) {
  auto cfg = critic;
  cfg.input_channels = 3;
  return cfg;
}

struct OracleResult {
  OracleClassifier classifier{nullptr};
  double test_accuracy = 0.0;
  DatasetSplit split;
};

inline OracleResult train_oracle_classifier(const DataSource& data, const DiscriminatorConfig& cfg,
                                            const OracleOptions& opts) {
  if (data.manifest().vocabulary.size() != cfg.num_attributes) {
    throw ValidationError("classifier head size differs from the dataset vocabulary");
  }
  if (data.manifest().vocabulary.size() < 2) {
    throw ValidationError("a single-class dataset cannot train a classifier");
  }
  OracleResult r;
  r.split = split_dataset(data, opts.train_fraction, opts.seed);
  r.classifier = fit_oracle(gather(data, r.split.train), oracle_config(cfg), opts);
  r.test_accuracy = accuracy(r.classifier, gather(data, r.split.test));
  return r;
}

struct FakeAccuracy {
  double accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // [target][predicted]
  std::int64_t scored = 0;
};

inline void check_compatible(const InferenceModel& model, const DataSource& data) {
  if (!(model.vocabulary == data.manifest().vocabulary)) {
    throw ValidationError("checkpoint vocabulary differs from the dataset vocabulary");
  }
  if (model.image_size() != data.image_size()) {
    throw ValidationError("checkpoint image_size differs from the dataset image_size");
  }
  if (model.config.refinement != (data.manifest().side_mode == SideMode::kImage)) {
    throw ValidationError("checkpoint and dataset disagree on the side-input kind");
  }
}

/// Translates every test sample to every attribute and scores whether the
/// oracle recognizes the target.
inline FakeAccuracy fake_attribute_accuracy(const InferenceModel& model, OracleClassifier& clf,
                                            const DataSource& data,
                                            const std::vector<std::size_t>& test,
                                            std::int64_t batch_size = 32) {
  check_compatible(model, data);
  if (test.empty()) throw ValidationError("no test samples");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const auto m = model.vocabulary.size();
  FakeAccuracy r;
  r.confusion.assign(static_cast<std::size_t>(m), std::vector<std::int64_t>(static_cast<std::size_t>(m), 0));
  torch::NoGradGuard no_grad;
  auto gen = model.generator;
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < test.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(test.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<torch::Tensor> xs, ss;
    for (auto j = i; j < end; ++j) {
      const auto& smp = data.sample(test[j]);
      xs.push_back(smp.image);
      ss.push_back(data.side_input(smp, smp.landmarks));
    }
    auto x = torch::stack(xs);
    auto z = gen->encode(gen->concat_inputs(x, torch::stack(ss)));
    for (std::int64_t k = 0; k < m; ++k) {
      auto y = torch::zeros({x.size(0), m});
      y.select(1, k).fill_(1.0F);
      auto pred = predict(clf, gen->decode(z, y).image);
      auto acc = pred.accessor<std::int64_t, 1>();
      for (std::int64_t b = 0; b < pred.size(0); ++b) {
        ++r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(acc[b])];
        correct += acc[b] == k ? 1 : 0;
        ++r.scored;
      }
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.scored);
  return r;
}

/// `per_class` generated images of every attribute from random training
/// sources; deterministic in `seed`.
inline LabeledImages synthesize_labeled(const InferenceModel& model, const DataSource& data,
                                        const std::vector<std::size_t>& sources,
                                        std::int64_t per_class, std::uint64_t seed,
                                        std::int64_t batch_size = 32) {
  check_compatible(model, data);
  if (per_class == 0) return {};
  if (sources.empty()) throw ValidationError("no source samples to synthesize from");
  const auto m = model.vocabulary.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sources.size() - 1);
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  torch::NoGradGuard no_grad;
  auto gen = model.generator;
  for (std::int64_t k = 0; k < m; ++k) {
    for (std::int64_t done = 0; done < per_class; done += batch_size) {
      const auto n = std::min(batch_size, per_class - done);
      std::vector<torch::Tensor> xs, ss;
      for (std::int64_t b = 0; b < n; ++b) {
        const auto& smp = data.sample(sources[pick(rng)]);
        xs.push_back(smp.image);
        ss.push_back(data.side_input(smp, smp.landmarks));
      }
      auto y = torch::zeros({n, m});
      y.select(1, k).fill_(1.0F);
      images.push_back(gen->generate(torch::stack(xs), torch::stack(ss), y).image);
      labels.insert(labels.end(), static_cast<std::size_t>(n), k);
    }
  }
  return {torch::cat(images), torch::tensor(labels, torch::kInt64)};
}

struct SweepPoint {
  std::int64_t num_synthetic = 0;  // per class
  double accuracy = 0.0;
};

/// For each count, a fresh oracle trained on the real training split plus
/// `count` synthetic images per class, scored on the real test split. The
/// classifier seed is shared across points, so count 0 is exactly the
/// standalone oracle run.
inline std::vector<SweepPoint> augmentation_sweep(const InferenceModel& model, const DataSource& data,
                                                  const std::vector<std::int64_t>& counts,
                                                  const OracleOptions& opts) {
  if (!std::is_sorted(counts.begin(), counts.end())) throw ConfigError("sweep counts must be ascending");
  if (!counts.empty() && counts.front() < 0) throw ConfigError("sweep counts must be non-negative");
  check_compatible(model, data);
  const auto split = split_dataset(data, opts.train_fraction, opts.seed);
  const auto real_train = gather(data, split.train);
  const auto real_test = gather(data, split.test);
  const auto cfg = oracle_config(model.config.discriminator);
  std::vector<SweepPoint> curve;
  for (auto count : counts) {
    auto synthetic = synthesize_labeled(model, data, split.train, count,
                                        derive_seed(opts.seed, 0x5357, static_cast<std::uint64_t>(count)));
    auto clf = fit_oracle(concat(real_train, synthetic), cfg, opts);
    curve.push_back({count, accuracy(clf, real_test)});
  }
  return curve;
}

struct EvalReport {
  std::vector<std::string> vocabulary;
  double real_test_accuracy = 0.0;
  double fake_attribute_accuracy = 0.0;
  std::vector<SweepPoint> augmentation_curve;
  std::vector<std::vector<std::int64_t>> per_class_confusion;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["vocabulary"] = vocabulary;
    j["real_test_accuracy"] = real_test_accuracy;
    j["fake_attribute_accuracy"] = fake_attribute_accuracy;
    auto curve = nlohmann::ordered_json::array();
    for (const auto& p : augmentation_curve) {
      curve.push_back({{"num_synthetic", p.num_synthetic}, {"accuracy", p.accuracy}});
    }
    j["augmentation_curve"] = curve;
    j["per_class_confusion"] = per_class_confusion;
    return j;
  }
};

inline void write_report(const EvalReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << report.to_json().dump(2) << '\n';
}

/// Accuracy against synthetic images per class, 640x480 RGB.
inline cv::Mat plot_augmentation_curve(const std::vector<SweepPoint>& curve) {
  const int w = 640, h = 480, left = 80, right = 30, top = 40, bottom = 70;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar ink(0, 0, 0), grid(220, 220, 220), line(200, 60, 30);
  const int pw = w - left - right, ph = h - top - bottom;
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, ink, 1);
  cv::putText(img, "accuracy vs. synthetic images per class", {left, 25}, cv::FONT_HERSHEY_SIMPLEX,
              0.6, ink, 1, cv::LINE_AA);
  cv::putText(img, "synthetic images per class", {left + pw / 2 - 110, h - 15},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, ink, 1, cv::LINE_AA);
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    const int y = top + ph - static_cast<int>(std::lround(v * ph));
    if (i > 0 && i < 5) cv::line(img, {left + 1, y}, {left + pw - 1, y}, grid, 1);
    char label[16];
    std::snprintf(label, sizeof(label), "%.1f", v);
    cv::putText(img, label, {left - 40, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1, cv::LINE_AA);
  }
  if (curve.empty()) return img;
  const double max_count = std::max<double>(1.0, static_cast<double>(curve.back().num_synthetic));
  std::vector<cv::Point> pts;
  for (const auto& p : curve) {
    const int x = left + static_cast<int>(std::lround(p.num_synthetic / max_count * pw));
    const int y = top + ph - static_cast<int>(std::lround(std::clamp(p.accuracy, 0.0, 1.0) * ph));
    pts.push_back({x, y});
    const auto tick = std::to_string(p.num_synthetic);
    cv::putText(img, tick, {x - 4 * static_cast<int>(tick.size()), top + ph + 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1, cv::LINE_AA);
  }
  cv::polylines(img, pts, false, line, 2, cv::LINE_AA);
  for (const auto& p : pts) cv::circle(img, p, 4, line, cv::FILLED, cv::LINE_AA);
  return img;
}

inline void write_plot(const std::vector<SweepPoint>& curve, const std::filesystem::path& path) {
  write_rgb_png(path, plot_augmentation_curve(curve));
}

}  // namespace agsynth
