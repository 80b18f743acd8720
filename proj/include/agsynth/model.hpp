#pragma once

// Generator (encoder / residual bottleneck / sub-pixel decoder with image and
// side heads) and the patch critic with an auxiliary attribute classifier.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "agsynth/errors.hpp"

namespace agsynth {

struct GeneratorConfig {
  static constexpr std::int64_t kDownsampleFactor = 16;
  static constexpr std::int64_t kNumDownsamples = 4;
  static constexpr std::int64_t kInputChannels = 6;
  static constexpr std::int64_t kOutputChannels = 3;

  std::int64_t image_size = 128;
  std::int64_t base_channels = 64;
  std::int64_t latent_channels = 1024;
  std::int64_t num_residual_blocks = 6;
  std::int64_t num_attributes = 8;
  double init_std = 0.02;

  std::int64_t latent_size() const { return image_size / kDownsampleFactor; }

  void validate() const {
    if (image_size <= 0 || image_size % kDownsampleFactor != 0) {
      throw ConfigError("generator image_size=" + std::to_string(image_size) +
                        " must be a positive multiple of 16");
    }
    if (base_channels <= 0) {
      throw ConfigError("generator base_channels must be positive");
    }
    if (latent_channels != base_channels * kDownsampleFactor) {
      throw ConfigError("generator latent_channels=" + std::to_string(latent_channels) +
                        " must equal 16 * base_channels=" + std::to_string(base_channels * 16));
    }
    if (num_residual_blocks < 0) {
      throw ConfigError("generator num_residual_blocks must be non-negative");
    }
    if (num_attributes <= 0) {
      throw ConfigError("generator num_attributes must be positive");
    }
    if (!(init_std > 0.0)) {
      throw ConfigError("generator init_std must be positive");
    }
  }

  // 32x32 images with an 8-channel ladder (8 -> 128 latent channels).
  static GeneratorConfig toy(std::int64_t num_attributes) {
    GeneratorConfig cfg;
    cfg.image_size = 32;
    cfg.base_channels = 8;
    cfg.latent_channels = 128;
    cfg.num_attributes = num_attributes;
    return cfg;
  }
};

struct DiscriminatorConfig {
  std::int64_t image_size = 128;
  std::int64_t base_channels = 64;
  std::int64_t num_layers = 6;
  std::int64_t num_attributes = 8;
  std::int64_t input_channels = 6;
  double leaky_slope = 0.01;
  double init_std = 0.02;

  std::int64_t output_size() const { return image_size >> num_layers; }
  std::int64_t hidden_channels(std::int64_t layer) const { return base_channels << layer; }
  std::int64_t top_channels() const { return hidden_channels(num_layers - 1); }
  std::int64_t fc_in_features() const { return output_size() * output_size() * top_channels(); }

  void validate() const {
    if (num_layers < 1 || num_layers > 16) {
      throw ConfigError("discriminator num_layers must be in [1, 16]");
    }
    const std::int64_t factor = std::int64_t{1} << num_layers;
    if (image_size <= 0 || image_size % factor != 0) {
      throw ConfigError("discriminator image_size=" + std::to_string(image_size) +
                        " must be a positive multiple of 2^num_layers=" + std::to_string(factor));
    }
    if (base_channels <= 0 || input_channels <= 0) {
      throw ConfigError("discriminator channel counts must be positive");
    }
    if (num_attributes <= 0) {
      throw ConfigError("discriminator num_attributes must be positive");
    }
    if (leaky_slope < 0.0 || !(init_std > 0.0)) {
      throw ConfigError("discriminator leaky_slope must be >= 0 and init_std > 0");
    }
  }

  // Four hidden layers: a 32x32 input yields a 2x2 patch map, the same map
  // size the default config produces at 128x128.
  static DiscriminatorConfig toy(std::int64_t num_attributes) {
    DiscriminatorConfig cfg;
    cfg.image_size = 32;
    cfg.base_channels = 8;
    cfg.num_layers = 4;
    cfg.num_attributes = num_attributes;
    return cfg;
  }
};

struct GeneratorOutput {
  torch::Tensor image;
  torch::Tensor side;
};

struct DiscriminatorOutput {
  torch::Tensor src_map;     // (batch, 1, h / 2^L, w / 2^L), raw critic scores
  torch::Tensor cls_logits;  // (batch, m), pre-sigmoid
};

// One executed layer: shapes are (C, H, W) of a single sample. For sub-pixel
// layers `stride` is the upscale factor; for the FC head kernel/stride/padding are 0.
struct LayerTrace {
  std::string part;
  std::string layer;
  std::vector<std::int64_t> input_shape;
  std::vector<std::int64_t> output_shape;
  std::int64_t kernel = 0;
  std::int64_t stride = 0;
  std::int64_t padding = 0;
};

// Sub-pixel rearrangement:
//   out[b, c, h*r + i, w*r + j] = in[b, c*r*r + i*r + j, h, w]
inline torch::Tensor depth_to_space(const torch::Tensor& x, std::int64_t factor) {
  return torch::pixel_shuffle(x, factor);
}

inline void initialize_weights(torch::nn::Module& module, double stddev, torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  auto init = [&](torch::nn::Module& m) {
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      conv->weight.normal_(0.0, stddev, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* fc = m.as<torch::nn::Linear>()) {
      fc->weight.normal_(0.0, stddev, gen);
      if (fc->bias.defined()) fc->bias.zero_();
    }
  };
  // include_self would need a shared_ptr-owned root, which constructors lack.
  init(module);
  for (auto& child : module.modules(/*include_self=*/false)) init(*child);
}

inline torch::Generator make_cpu_generator(std::uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

inline std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

namespace detail {

inline std::vector<std::int64_t> sample_shape(const torch::Tensor& t) {
  auto sizes = t.sizes().vec();
  sizes.erase(sizes.begin());
  return sizes;
}

inline torch::nn::Conv2d make_conv(std::int64_t in, std::int64_t out, std::int64_t kernel,
                                   std::int64_t stride, std::int64_t padding) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

inline torch::nn::InstanceNorm2d make_instance_norm(std::int64_t channels) {
  return torch::nn::InstanceNorm2d(
      torch::nn::InstanceNorm2dOptions(channels).affine(true).eps(1e-5).track_running_stats(false));
}

inline void check_image_batch(const torch::Tensor& t, std::int64_t channels, std::int64_t size,
                              const std::string& what) {
  if (t.dim() != 4) {
    throw ConfigError(what + ": expected rank-4 (batch, channel, height, width), got rank " +
                      std::to_string(t.dim()));
  }
  if (t.size(1) != channels) {
    throw ConfigError(what + ": channel dimension is " + std::to_string(t.size(1)) +
                      ", expected " + std::to_string(channels));
  }
  if (t.size(2) != size) {
    throw ConfigError(what + ": height is " + std::to_string(t.size(2)) + ", expected " +
                      std::to_string(size));
  }
  if (t.size(3) != size) {
    throw ConfigError(what + ": width is " + std::to_string(t.size(3)) + ", expected " +
                      std::to_string(size));
  }
}

}  // namespace detail

/// Conv -> instance norm -> ReLU.
class ConvNormReluImpl : public torch::nn::Module {
 public:
  ConvNormReluImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                   std::int64_t padding)
      : kernel_(kernel), stride_(stride), padding_(padding) {
    conv = register_module("conv", detail::make_conv(in, out, kernel, stride, padding));
    norm = register_module("norm", detail::make_instance_norm(out));
  }

  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(norm(conv(x))); }

  std::int64_t kernel() const { return kernel_; }
  std::int64_t stride() const { return stride_; }
  std::int64_t padding() const { return padding_; }

  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};

 private:
  std::int64_t kernel_, stride_, padding_;
};
TORCH_MODULE(ConvNormRelu);

/// Two 3x3 conv+IN stages (ReLU between) with an identity skip.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(std::int64_t channels) {
    conv1 = register_module("conv1", detail::make_conv(channels, channels, 3, 1, 1));
    norm1 = register_module("norm1", detail::make_instance_norm(channels));
    conv2 = register_module("conv2", detail::make_conv(channels, channels, 3, 1, 1));
    norm2 = register_module("norm2", detail::make_instance_norm(channels));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = torch::relu(norm1(conv1(x)));
    return x + norm2(conv2(h));
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// x2 upsampling: 3x3 conv to 4*out channels, depth-to-space, IN, ReLU.
class SubPixelConvImpl : public torch::nn::Module {
 public:
  static constexpr std::int64_t kUpscale = 2;

  SubPixelConvImpl(std::int64_t in, std::int64_t out) {
    conv = register_module("conv",
                           detail::make_conv(in, out * kUpscale * kUpscale, 3, 1, 1));
    norm = register_module("norm", detail::make_instance_norm(out));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    return torch::relu(norm(depth_to_space(conv(x), kUpscale)));
  }

  torch::nn::Conv2d conv{nullptr};
  torch::nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(SubPixelConv);

class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    encoder_ = register_module("encoder", torch::nn::ModuleList());
    bottleneck_ = register_module("bottleneck", torch::nn::ModuleList());
    decoder_ = register_module("decoder", torch::nn::ModuleList());

    std::int64_t ch = cfg_.base_channels;
    encoder_blocks_.push_back(ConvNormRelu(GeneratorConfig::kInputChannels, ch, 7, 1, 3));
    for (std::int64_t i = 0; i < GeneratorConfig::kNumDownsamples; ++i) {
      encoder_blocks_.push_back(ConvNormRelu(ch, ch * 2, 4, 2, 1));
      ch *= 2;
    }
    for (auto& b : encoder_blocks_) encoder_->push_back(b);

    for (std::int64_t i = 0; i < cfg_.num_residual_blocks; ++i) {
      residual_blocks_.push_back(ResidualBlock(ch));
      bottleneck_->push_back(residual_blocks_.back());
    }

    std::int64_t in = ch + cfg_.num_attributes;
    for (std::int64_t i = 0; i < GeneratorConfig::kNumDownsamples; ++i) {
      decoder_blocks_.push_back(SubPixelConv(in, ch / 2));
      decoder_->push_back(decoder_blocks_.back());
      ch /= 2;
      in = ch;
    }
    image_head = register_module(
        "image_head", detail::make_conv(ch, GeneratorConfig::kOutputChannels, 7, 1, 3));
    side_head = register_module(
        "side_head", detail::make_conv(ch, GeneratorConfig::kOutputChannels, 7, 1, 3));

    auto gen = make_cpu_generator(seed);
    initialize_weights(*this, cfg_.init_std, gen);
  }

  const GeneratorConfig& config() const { return cfg_; }

  /// (B, 6, h, w) -> (B, n, h/16, w/16)
  torch::Tensor encode(const torch::Tensor& x_and_s) {
    detail::check_image_batch(x_and_s, GeneratorConfig::kInputChannels, cfg_.image_size,
                              "encode input");
    auto h = x_and_s;
    for (auto& b : encoder_blocks_) h = b(h);
    for (auto& b : residual_blocks_) h = b(h);
    return h;
  }

  GeneratorOutput decode(const torch::Tensor& z, const torch::Tensor& y) {
    check_latent(z);
    check_attributes(y, z.size(0));
    auto h = torch::cat({z, broadcast_attributes(y, z)}, 1);
    for (auto& b : decoder_blocks_) h = b(h);
    return {torch::tanh(image_head(h)), torch::tanh(side_head(h))};
  }

  GeneratorOutput generate(const torch::Tensor& x, const torch::Tensor& s, const torch::Tensor& y) {
    return decode(encode(concat_inputs(x, s)), y);
  }

  torch::Tensor concat_inputs(const torch::Tensor& x, const torch::Tensor& s) const {
    detail::check_image_batch(x, 3, cfg_.image_size, "generator image input");
    detail::check_image_batch(s, 3, cfg_.image_size, "generator side input");
    if (x.size(0) != s.size(0)) {
      throw ConfigError("generator inputs disagree on batch size");
    }
    return torch::cat({x, s}, 1);
  }

  /// Runs one forward pass recording every layer's geometry.
  std::vector<LayerTrace> trace(const torch::Tensor& x, const torch::Tensor& s,
                                const torch::Tensor& y) {
    std::vector<LayerTrace> rows;
    auto h = concat_inputs(x, s);
    for (auto& b : encoder_blocks_) {
      auto out = b(h);
      rows.push_back({"encoder", "Conv+IN+ReLU", detail::sample_shape(h), detail::sample_shape(out),
                      b->kernel(), b->stride(), b->padding()});
      h = out;
    }
    for (auto& b : residual_blocks_) {
      auto out = b(h);
      rows.push_back({"bottleneck", "RB:Conv+IN+ReLU", detail::sample_shape(h),
                      detail::sample_shape(out), 3, 1, 1});
      h = out;
    }
    h = torch::cat({h, broadcast_attributes(y, h)}, 1);
    for (auto& b : decoder_blocks_) {
      auto out = b(h);
      rows.push_back({"decoder", "Sub-Pixel Conv+IN+ReLU", detail::sample_shape(h),
                      detail::sample_shape(out), 3, SubPixelConvImpl::kUpscale, 1});
      h = out;
    }
    auto img = torch::tanh(image_head(h));
    rows.push_back({"output", "Image output:Conv+Tanh", detail::sample_shape(h),
                    detail::sample_shape(img), 7, 1, 3});
    auto side = torch::tanh(side_head(h));
    rows.push_back({"output", "Side output:Conv+Tanh", detail::sample_shape(h),
                    detail::sample_shape(side), 7, 1, 3});
    return rows;
  }

  const std::vector<ConvNormRelu>& encoder_blocks() const { return encoder_blocks_; }
  const std::vector<SubPixelConv>& decoder_blocks() const { return decoder_blocks_; }

  torch::nn::Conv2d image_head{nullptr};
  torch::nn::Conv2d side_head{nullptr};

 private:
  static torch::Tensor broadcast_attributes(const torch::Tensor& y, const torch::Tensor& z) {
    return y.to(z.dtype()).view({y.size(0), y.size(1), 1, 1}).expand({-1, -1, z.size(2), z.size(3)});
  }

  void check_latent(const torch::Tensor& z) const {
    if (z.dim() != 4) throw ConfigError("latent must be rank-4");
    if (z.size(1) != cfg_.latent_channels) {
      throw ConfigError("latent channel dimension is " + std::to_string(z.size(1)) +
                        ", expected " + std::to_string(cfg_.latent_channels));
    }
    if (z.size(2) != cfg_.latent_size() || z.size(3) != cfg_.latent_size()) {
      throw ConfigError("latent spatial size is " + std::to_string(z.size(2)) + "x" +
                        std::to_string(z.size(3)) + ", expected " +
                        std::to_string(cfg_.latent_size()));
    }
  }

  void check_attributes(const torch::Tensor& y, std::int64_t batch) const {
    if (y.dim() != 2 || y.size(1) != cfg_.num_attributes) {
      throw ConfigError("attribute vector length must be n_y=" +
                        std::to_string(cfg_.num_attributes));
    }
    if (y.size(0) != batch) {
      throw ConfigError("attribute batch size " + std::to_string(y.size(0)) +
                        " does not match latent batch size " + std::to_string(batch));
    }
  }

  GeneratorConfig cfg_;
  torch::nn::ModuleList encoder_{nullptr}, bottleneck_{nullptr}, decoder_{nullptr};
  std::vector<ConvNormRelu> encoder_blocks_;
  std::vector<ResidualBlock> residual_blocks_;
  std::vector<SubPixelConv> decoder_blocks_;
};
TORCH_MODULE(Generator);

/// Stride-2 4x4 convolutions with leaky ReLU and no normalization.
class CriticStackImpl : public torch::nn::Module {
 public:
  CriticStackImpl(std::int64_t input_channels, std::int64_t base_channels, std::int64_t num_layers,
                  double leaky_slope)
      : leaky_slope_(leaky_slope) {
    layers_ = register_module("layers", torch::nn::ModuleList());
    std::int64_t in = input_channels;
    for (std::int64_t i = 0; i < num_layers; ++i) {
      const std::int64_t out = base_channels << i;
      convs_.push_back(detail::make_conv(in, out, 4, 2, 1));
      layers_->push_back(convs_.back());
      in = out;
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = x;
    for (auto& c : convs_) h = activation(c(h));
    return h;
  }

  std::vector<LayerTrace> trace(torch::Tensor& h) {
    std::vector<LayerTrace> rows;
    for (auto& c : convs_) {
      auto out = activation(c(h));
      rows.push_back({"hidden", "Conv+Leaky ReLU", detail::sample_shape(h),
                      detail::sample_shape(out), 4, 2, 1});
      h = out;
    }
    return rows;
  }

  double leaky_slope() const { return leaky_slope_; }

 private:
  torch::Tensor activation(const torch::Tensor& x) const {
    return torch::leaky_relu(x, leaky_slope_);
  }

  double leaky_slope_;
  torch::nn::ModuleList layers_{nullptr};
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(CriticStack);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    hidden = register_module("hidden", CriticStack(cfg_.input_channels, cfg_.base_channels,
                                                   cfg_.num_layers, cfg_.leaky_slope));
    src_head = register_module("src_head", detail::make_conv(cfg_.top_channels(), 1, 3, 1, 1));
    cls_head = register_module("cls_head",
                               torch::nn::Linear(cfg_.fc_in_features(), cfg_.num_attributes));
    auto gen = make_cpu_generator(seed);
    initialize_weights(*this, cfg_.init_std, gen);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  DiscriminatorOutput forward(const torch::Tensor& input) {
    detail::check_image_batch(input, cfg_.input_channels, cfg_.image_size, "discriminator input");
    auto h = hidden(input);
    return {src_head(h), cls_head(h.flatten(1))};
  }

  DiscriminatorOutput discriminate(const torch::Tensor& x, const torch::Tensor& s) {
    return forward(torch::cat({x, s}, 1));
  }

  std::vector<LayerTrace> trace(const torch::Tensor& input) {
    detail::check_image_batch(input, cfg_.input_channels, cfg_.image_size, "discriminator input");
    auto h = input;
    auto rows = hidden->trace(h);
    auto src = src_head(h);
    rows.push_back({"output", "Output Layer:Conv", detail::sample_shape(h),
                    detail::sample_shape(src), 3, 1, 1});
    auto cls = cls_head(h.flatten(1));
    rows.push_back({"output", "Output Layer:FC", detail::sample_shape(h),
                    detail::sample_shape(cls), 0, 0, 0});
    return rows;
  }

  CriticStack hidden{nullptr};
  torch::nn::Conv2d src_head{nullptr};
  torch::nn::Linear cls_head{nullptr};

 private:
  DiscriminatorConfig cfg_;
};
TORCH_MODULE(Discriminator);

}  // namespace agsynth
