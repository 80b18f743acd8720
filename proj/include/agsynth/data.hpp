#pragma once

// Dataset ingestion: manifests, landmark heatmaps, attribute encoding,
// flip augmentation, target-attribute sampling, and batch assembly.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "agsynth/errors.hpp"
#include "agsynth/image_io.hpp"

namespace agsynth {

namespace fs = std::filesystem;

/// Pixel coordinates: x is the column, y the row; pixel (r, c) sits at (c, r).
struct Landmark {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Landmark&, const Landmark&) = default;
};
using LandmarkSet = std::vector<Landmark>;

struct HeatmapSpec {
  static constexpr double kAmplitude = 1.0;
  static constexpr double kBackground = -1.0;

  double sigma = 2.0;

  /// 2 px at 128x128, i.e. size / 64.
  static HeatmapSpec for_image_size(std::int64_t size) {
    return HeatmapSpec{static_cast<double>(size) / 64.0};
  }

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("heatmap sigma must be > 0");
  }
};

struct Heatmap {
  torch::Tensor image;        // (3, size, size) in [-1, 1]
  bool empty = false;         // no landmarks: all background
  std::int64_t clamped = 0;   // landmarks moved into the frame
};

namespace detail {

// Landmarks are snapped to a 2^-16 px grid so that mirrored coordinates and
// pixel offsets are exact in double precision.
inline double snap_coordinate(double v) {
  constexpr double kGrid = 65536.0;
  return std::nearbyint(v * kGrid) / kGrid;
}

}  // namespace detail

/// H(p) = max_k exp(-|p - l_k|^2 / (2 sigma^2)), emitted as 2H - 1 and
/// replicated to three channels. Out-of-frame landmarks are clamped.
inline Heatmap render_heatmap(const LandmarkSet& landmarks, std::int64_t size,
                              const HeatmapSpec& spec) {
  spec.validate();
  if (size <= 0) throw ConfigError("heatmap size must be positive");
  Heatmap out;
  out.empty = landmarks.empty();

  std::vector<double> field(static_cast<std::size_t>(size * size), 0.0);
  const double inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
  // exp(-18) < 2e-8: contributions beyond 6 sigma are below float resolution.
  const double radius = 6.0 * spec.sigma;
  const double hi = static_cast<double>(size - 1);
  std::vector<double> gx, gy;

  for (const auto& lm : landmarks) {
    double x = lm.x, y = lm.y;
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw ValidationError("landmark coordinates must be finite");
    }
    if (x < 0.0 || x > hi || y < 0.0 || y > hi) {
      ++out.clamped;
      x = std::clamp(x, 0.0, hi);
      y = std::clamp(y, 0.0, hi);
    }
    x = detail::snap_coordinate(x);
    y = detail::snap_coordinate(y);
    const auto c0 = static_cast<std::int64_t>(std::max(0.0, std::ceil(x - radius)));
    const auto c1 = static_cast<std::int64_t>(std::min(hi, std::floor(x + radius)));
    const auto r0 = static_cast<std::int64_t>(std::max(0.0, std::ceil(y - radius)));
    const auto r1 = static_cast<std::int64_t>(std::min(hi, std::floor(y + radius)));
    gx.assign(static_cast<std::size_t>(c1 - c0 + 1), 0.0);
    gy.assign(static_cast<std::size_t>(r1 - r0 + 1), 0.0);
    for (auto c = c0; c <= c1; ++c) {
      const double d = static_cast<double>(c) - x;
      gx[static_cast<std::size_t>(c - c0)] = std::exp(-d * d * inv_two_var);
    }
    for (auto r = r0; r <= r1; ++r) {
      const double d = static_cast<double>(r) - y;
      gy[static_cast<std::size_t>(r - r0)] = std::exp(-d * d * inv_two_var);
    }
    for (auto r = r0; r <= r1; ++r) {
      double* row = field.data() + r * size;
      const double wy = gy[static_cast<std::size_t>(r - r0)];
      for (auto c = c0; c <= c1; ++c) {
        row[c] = std::max(row[c], wy * gx[static_cast<std::size_t>(c - c0)]);
      }
    }
  }

  auto plane = torch::empty({size, size}, torch::kFloat32);
  auto* dst = plane.data_ptr<float>();
  for (std::size_t i = 0; i < field.size(); ++i) {
    dst[i] = static_cast<float>(2.0 * HeatmapSpec::kAmplitude * field[i] + HeatmapSpec::kBackground);
  }
  out.image = plane.unsqueeze(0).expand({3, size, size}).contiguous();
  return out;
}

// ---------------------------------------------------------------------------
// Attributes

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw ValidationError("empty attribute name in vocabulary");
      if (!index_.emplace(names_[i], static_cast<std::int64_t>(i)).second) {
        throw ValidationError("duplicate attribute '" + names_[i] + "' in vocabulary");
      }
    }
  }

  std::int64_t size() const { return static_cast<std::int64_t>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::int64_t i) const { return names_.at(static_cast<std::size_t>(i)); }

  std::optional<std::int64_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::int64_t index_of(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ValidationError("unknown attribute '" + name + "'");
    return *i;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::int64_t> index_;
};

/// Binary vector of length n_y with a 1 at each labeled index.
inline torch::Tensor encode_attributes(const std::vector<std::string>& labels,
                                       const Vocabulary& vocabulary) {
  auto y = torch::zeros({vocabulary.size()}, torch::kFloat32);
  for (const auto& label : labels) y[vocabulary.index_of(label)] = 1.0f;
  return y;
}

/// Uniformly random permutation of the batch's label rows.
template <typename Rng>
torch::Tensor sample_target_attributes(const torch::Tensor& batch_labels, Rng& rng) {
  if (batch_labels.dim() != 2 || batch_labels.size(0) == 0) {
    throw ValidationError("sample_target_attributes needs a nonempty (batch, n_y) tensor");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(batch_labels.size(0)));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return batch_labels.index_select(0, torch::tensor(order, torch::kInt64));
}

// ---------------------------------------------------------------------------
// Flip augmentation

struct FlipResult {
  torch::Tensor x;
  torch::Tensor s;
  LandmarkSet landmarks;
  bool flipped = false;
};

inline LandmarkSet flip_landmarks(const LandmarkSet& landmarks, std::int64_t width) {
  LandmarkSet out = landmarks;
  for (auto& lm : out) lm.x = static_cast<double>(width - 1) - lm.x;
  return out;
}

/// Mirrors images along their last (width) dimension.
inline torch::Tensor flip_horizontal(const torch::Tensor& img) { return img.flip({-1}); }

inline FlipResult apply_flip(const torch::Tensor& x, const torch::Tensor& s,
                             const LandmarkSet& landmarks, bool flip) {
  if (!flip) return {x, s, landmarks, false};
  const auto width = x.size(-1);
  return {flip_horizontal(x), s.defined() ? flip_horizontal(s) : s,
          flip_landmarks(landmarks, width), true};
}

/// With probability 0.5 mirrors x, s and the landmarks together.
template <typename Rng>
FlipResult augment_flip(const torch::Tensor& x, const torch::Tensor& s,
                        const LandmarkSet& landmarks, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  return apply_flip(x, s, landmarks, coin(rng));
}

// ---------------------------------------------------------------------------
// Manifest / directory layout:
//   images/<name>.png, landmarks/<name>.txt, labels.tsv, vocabulary.txt
// A refinement dataset has side/<name>.png (real side images) instead of
// landmarks/.

enum class SideMode { kHeatmap, kImage };

struct ManifestEntry {
  std::string name;
  fs::path image_path;
  fs::path landmark_path;
  fs::path side_image_path;
  std::vector<std::string> labels;
};

struct DatasetManifest {
  fs::path root;
  Vocabulary vocabulary;
  SideMode side_mode = SideMode::kHeatmap;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
};

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    if (!field.empty()) fields.push_back(field);
  }
  return fields;
}

/// Landmark file: one "x y" pair per line in original-image pixel coordinates.
inline LandmarkSet read_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string(), "cannot open landmark file");
  LandmarkSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Landmark lm;
    if (!(ls >> lm.x >> lm.y)) {
      throw IngestionError(path.string(), "malformed landmark on line " + std::to_string(lineno));
    }
    out.push_back(lm);
  }
  return out;
}

inline void write_landmarks(const fs::path& path, const LandmarkSet& landmarks) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (const auto& lm : landmarks) out << lm.x << ' ' << lm.y << '\n';
}

inline Vocabulary read_vocabulary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(path.string(), "cannot open vocabulary");
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty()) throw IngestionError(path.string(), "empty vocabulary");
  return Vocabulary(std::move(names));
}

inline DatasetManifest load_manifest(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  m.vocabulary = read_vocabulary(root / "vocabulary.txt");
  m.side_mode = fs::is_directory(root / "side") ? SideMode::kImage : SideMode::kHeatmap;

  const auto labels_path = root / "labels.tsv";
  std::ifstream in(labels_path);
  if (!in) throw IngestionError(labels_path.string(), "cannot open labels");
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_tabs(line);
    if (fields.empty()) continue;
    ManifestEntry e;
    e.name = fields.front();
    e.labels.assign(fields.begin() + 1, fields.end());
    for (const auto& label : e.labels) {
      if (!m.vocabulary.find(label)) {
        throw IngestionError(labels_path.string(),
                             "label '" + label + "' of '" + e.name + "' is not in the vocabulary");
      }
    }
    e.image_path = root / "images" / (e.name + ".png");
    if (!fs::exists(e.image_path)) throw IngestionError(e.image_path.string(), "missing image");
    if (m.side_mode == SideMode::kImage) {
      e.side_image_path = root / "side" / (e.name + ".png");
      if (!fs::exists(e.side_image_path)) {
        throw IngestionError(e.side_image_path.string(), "missing side image");
      }
    } else {
      e.landmark_path = root / "landmarks" / (e.name + ".txt");
      if (!fs::exists(e.landmark_path)) {
        throw IngestionError(e.landmark_path.string(), "missing landmark file");
      }
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw IngestionError(labels_path.string(), "manifest has no entries");
  return m;
}

inline void write_manifest_index(const DatasetManifest& m) {
  fs::create_directories(m.root);
  {
    std::ofstream out(m.root / "vocabulary.txt");
    for (const auto& n : m.vocabulary.names()) out << n << '\n';
  }
  std::ofstream out(m.root / "labels.tsv");
  if (!out) throw IoError("cannot write " + (m.root / "labels.tsv").string());
  for (const auto& e : m.entries) {
    out << e.name;
    for (const auto& l : e.labels) out << '\t' << l;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Decoded samples and batches

struct Sample {
  torch::Tensor image;       // (3, size, size) in [-1, 1]
  torch::Tensor side_image;  // refinement datasets only
  LandmarkSet landmarks;     // resized coordinates
  torch::Tensor attributes;  // (n_y)
  std::int64_t clamped_landmarks = 0;
};

struct Batch {
  torch::Tensor x;           // (B, 3, size, size)
  torch::Tensor s;           // (B, 3, size, size)
  torch::Tensor y_original;  // (B, n_y)
  torch::Tensor y_target;    // (B, n_y)
  std::vector<std::size_t> indices;

  std::int64_t size() const { return x.defined() ? x.size(0) : 0; }
};

struct BatchOptions {
  bool flip = true;
  bool sample_targets = true;
};

/// Resized coordinate for a pixel-center convention: (v + 0.5) * scale - 0.5.
inline double rescale_coordinate(double v, double scale) { return (v + 0.5) * scale - 0.5; }

inline Sample load_sample(const DatasetManifest& m, const ManifestEntry& e, std::int64_t size) {
  Sample s;
  const cv::Mat rgb = read_rgb(e.image_path);
  s.image = rgb_to_tensor(resize_rgb(rgb, size));
  if (m.side_mode == SideMode::kImage) {
    s.side_image = rgb_to_tensor(resize_rgb(read_rgb(e.side_image_path), size));
  } else {
    const double sx = static_cast<double>(size) / rgb.cols;
    const double sy = static_cast<double>(size) / rgb.rows;
    for (const auto& lm : read_landmarks(e.landmark_path)) {
      s.landmarks.push_back({rescale_coordinate(lm.x, sx), rescale_coordinate(lm.y, sy)});
    }
  }
  s.attributes = encode_attributes(e.labels, m.vocabulary);
  return s;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Decoded dataset held in memory. Every batch derives all of its randomness
/// from a single batch seed.
class DataSource {
 public:
  DataSource(const DatasetManifest& manifest, std::int64_t image_size)
      : manifest_(manifest), image_size_(image_size), spec_(HeatmapSpec::for_image_size(image_size)) {
    samples_.reserve(manifest_.entries.size());
    for (const auto& e : manifest_.entries) samples_.push_back(load_sample(manifest_, e, image_size));
  }

  std::size_t size() const { return samples_.size(); }
  std::int64_t image_size() const { return image_size_; }
  const DatasetManifest& manifest() const { return manifest_; }
  const Sample& sample(std::size_t i) const { return samples_.at(i); }
  const HeatmapSpec& heatmap_spec() const { return spec_; }

  /// Side input of sample i: its landmark heatmap, or its side image.
  torch::Tensor side_input(const Sample& s, const LandmarkSet& landmarks) const {
    if (manifest_.side_mode == SideMode::kImage) return s.side_image;
    return render_heatmap(landmarks, image_size_, spec_).image;
  }

  Batch batch(std::span<const std::size_t> indices, std::uint64_t batch_seed,
              const BatchOptions& opts = {}) const {
    if (indices.empty()) throw ValidationError("empty batch");
    std::mt19937_64 rng(batch_seed);
    std::vector<torch::Tensor> xs, ss, ys;
    for (auto i : indices) {
      if (i >= samples_.size()) {
        throw ValidationError("sample index " + std::to_string(i) + " out of range");
      }
      const auto& smp = samples_[i];
      std::bernoulli_distribution coin(0.5);
      const bool flip = opts.flip && coin(rng);
      auto f = apply_flip(smp.image, smp.side_image, smp.landmarks, flip);
      xs.push_back(f.x);
      ss.push_back(manifest_.side_mode == SideMode::kImage
                       ? f.s
                       : render_heatmap(f.landmarks, image_size_, spec_).image);
      ys.push_back(smp.attributes);
    }
    Batch b;
    b.x = torch::stack(xs);
    b.s = torch::stack(ss);
    b.y_original = torch::stack(ys);
    b.y_target = opts.sample_targets ? sample_target_attributes(b.y_original, rng)
                                     : b.y_original.clone();
    b.indices.assign(indices.begin(), indices.end());
    return b;
  }

 private:
  DatasetManifest manifest_;
  std::int64_t image_size_;
  HeatmapSpec spec_;
  std::vector<Sample> samples_;
};

/// Loads, resizes and assembles the given entries; deterministic in
/// (manifest, indices, seed).
inline Batch load_batch(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                        std::int64_t image_size, std::uint64_t seed,
                        const BatchOptions& opts = {}) {
  DatasetManifest subset = manifest;
  subset.entries.clear();
  for (auto i : indices) {
    if (i >= manifest.entries.size()) {
      throw ValidationError("manifest index " + std::to_string(i) + " out of range");
    }
    subset.entries.push_back(manifest.entries[i]);
  }
  DataSource source(subset, image_size);
  std::vector<std::size_t> local(indices.size());
  std::iota(local.begin(), local.end(), std::size_t{0});
  auto b = source.batch(local, seed, opts);
  b.indices.assign(indices.begin(), indices.end());
  return b;
}

}  // namespace agsynth
