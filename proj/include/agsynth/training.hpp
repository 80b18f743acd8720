#pragma once

// Min-max training engine: configuration, learning-rate schedule, critic and
// generator update steps, the epoch loop, metrics and checkpoints.

#include <torch/serialize.h>
#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "agsynth/data.hpp"
#include "agsynth/errors.hpp"
#include "agsynth/losses.hpp"
#include "agsynth/model.hpp"

namespace agsynth {

struct TrainConfig {
  double lr_base = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t batch_size = 8;
  std::int64_t image_size = 128;
  std::int64_t total_epochs = 200;
  std::int64_t decay_start_epoch = 100;
  std::int64_t n_critic = 5;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 0;  // critic steps between checkpoints; 0 = epoch ends only
  std::int64_t max_generator_steps = 0;  // 0 = run every epoch
  bool flip = true;
  // Realism refinement: the side input is a real image and the critic's real
  // pair is (s, s).
  bool refinement = false;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  void validate() const {
    if (!(lr_base > 0.0)) throw ConfigError("lr_base must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps >= 0.0)) throw ConfigError("adam_eps must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
    if (!(decay_start_epoch >= 0 && decay_start_epoch < total_epochs)) {
      throw ConfigError("decay_start_epoch must satisfy 0 <= decay_start_epoch < total_epochs");
    }
    if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
    if (checkpoint_interval < 0 || max_generator_steps < 0) {
      throw ConfigError("checkpoint_interval and max_generator_steps must be non-negative");
    }
    weights.validate();
    generator.validate();
    discriminator.validate();
    if (generator.image_size != image_size || discriminator.image_size != image_size) {
      throw ConfigError("image_size must agree across train, generator and discriminator configs");
    }
    if (generator.num_attributes != discriminator.num_attributes) {
      throw ConfigError("generator and discriminator disagree on the number of attributes");
    }
    if (discriminator.input_channels != 6) {
      throw ConfigError("the training critic takes the 6-channel (image, side) input");
    }
  }

  /// 32x32 desk-scale recipe: 2000 generator steps over 2000 samples.
  static TrainConfig toy(std::int64_t num_attributes) {
    TrainConfig cfg;
    cfg.image_size = 32;
    cfg.total_epochs = 40;
    cfg.decay_start_epoch = 20;
    cfg.max_generator_steps = 2000;
    cfg.generator = GeneratorConfig::toy(num_attributes);
    cfg.discriminator = DiscriminatorConfig::toy(num_attributes);
    // With 8 base channels a 0.02 init leaves the critic's classifier head
    // near zero for hundreds of steps.
    cfg.discriminator.init_std = 0.1;
    return cfg;
  }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr_base"] = c.lr_base;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["batch_size"] = c.batch_size;
  j["image_size"] = c.image_size;
  j["total_epochs"] = c.total_epochs;
  j["decay_start_epoch"] = c.decay_start_epoch;
  j["n_critic"] = c.n_critic;
  j["seed"] = c.seed;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["max_generator_steps"] = c.max_generator_steps;
  j["flip"] = c.flip;
  j["refinement"] = c.refinement;
  j["weights"] = {{"lambda_bi", c.weights.lambda_bi},
                  {"lambda_id", c.weights.lambda_id},
                  {"lambda_cls", c.weights.lambda_cls},
                  {"lambda_gp", c.weights.lambda_gp}};
  j["generator"] = {{"image_size", c.generator.image_size},
                    {"base_channels", c.generator.base_channels},
                    {"latent_channels", c.generator.latent_channels},
                    {"num_residual_blocks", c.generator.num_residual_blocks},
                    {"num_attributes", c.generator.num_attributes},
                    {"init_std", c.generator.init_std}};
  j["discriminator"] = {{"image_size", c.discriminator.image_size},
                        {"base_channels", c.discriminator.base_channels},
                        {"num_layers", c.discriminator.num_layers},
                        {"num_attributes", c.discriminator.num_attributes},
                        {"input_channels", c.discriminator.input_channels},
                        {"leaky_slope", c.discriminator.leaky_slope},
                        {"init_std", c.discriminator.init_std}};
  return j;
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
      throw ConfigError("unknown config key '" + where + k + "'");
    }
  }
}

}  // namespace detail

/// Keys absent from `j` keep their values from `base`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  using detail::read_key;
  detail::reject_unknown(j,
                         {"lr_base", "adam_beta1", "adam_beta2", "adam_eps", "batch_size",
                          "image_size", "total_epochs", "decay_start_epoch", "n_critic", "seed",
                          "checkpoint_interval", "max_generator_steps", "flip", "refinement",
                          "weights", "generator", "discriminator"},
                         "");
  TrainConfig c = std::move(base);
  read_key(j, "lr_base", c.lr_base);
  read_key(j, "adam_beta1", c.adam_beta1);
  read_key(j, "adam_beta2", c.adam_beta2);
  read_key(j, "adam_eps", c.adam_eps);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "image_size", c.image_size);
  read_key(j, "total_epochs", c.total_epochs);
  read_key(j, "decay_start_epoch", c.decay_start_epoch);
  read_key(j, "n_critic", c.n_critic);
  read_key(j, "seed", c.seed);
  read_key(j, "checkpoint_interval", c.checkpoint_interval);
  read_key(j, "max_generator_steps", c.max_generator_steps);
  read_key(j, "flip", c.flip);
  read_key(j, "refinement", c.refinement);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    detail::reject_unknown(w, {"lambda_bi", "lambda_id", "lambda_cls", "lambda_gp"}, "weights.");
    read_key(w, "lambda_bi", c.weights.lambda_bi);
    read_key(w, "lambda_id", c.weights.lambda_id);
    read_key(w, "lambda_cls", c.weights.lambda_cls);
    read_key(w, "lambda_gp", c.weights.lambda_gp);
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    detail::reject_unknown(g, {"image_size", "base_channels", "latent_channels",
                               "num_residual_blocks", "num_attributes", "init_std"},
                           "generator.");
    read_key(g, "image_size", c.generator.image_size);
    read_key(g, "base_channels", c.generator.base_channels);
    read_key(g, "latent_channels", c.generator.latent_channels);
    read_key(g, "num_residual_blocks", c.generator.num_residual_blocks);
    read_key(g, "num_attributes", c.generator.num_attributes);
    read_key(g, "init_std", c.generator.init_std);
  }
  if (j.contains("discriminator")) {
    const auto& d = j.at("discriminator");
    detail::reject_unknown(d, {"image_size", "base_channels", "num_layers", "num_attributes",
                               "input_channels", "leaky_slope", "init_std"},
                           "discriminator.");
    read_key(d, "image_size", c.discriminator.image_size);
    read_key(d, "base_channels", c.discriminator.base_channels);
    read_key(d, "num_layers", c.discriminator.num_layers);
    read_key(d, "num_attributes", c.discriminator.num_attributes);
    read_key(d, "input_channels", c.discriminator.input_channels);
    read_key(d, "leaky_slope", c.discriminator.leaky_slope);
    read_key(d, "init_std", c.discriminator.init_std);
  }
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j, std::move(base));
}

/// lr_base before decay_start_epoch, then linear decay reaching 0 at total_epochs.
inline double lr_schedule(std::int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.total_epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(cfg.total_epochs) + "]");
  }
  if (epoch < cfg.decay_start_epoch) return cfg.lr_base;
  return cfg.lr_base * static_cast<double>(cfg.total_epochs - epoch) /
         static_cast<double>(cfg.total_epochs - cfg.decay_start_epoch);
}

struct TrainCounters {
  std::int64_t d_steps = 0;
  std::int64_t g_steps = 0;
  std::int64_t epoch = 0;
  std::int64_t batch_in_epoch = 0;  // next batch to draw within `epoch`

  std::int64_t step() const { return d_steps + g_steps; }
};

struct FitOptions {
  std::filesystem::path metrics_path;    // empty: no metrics file
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::int64_t stop_after_d_steps = 0;   // 0: no early stop
  std::function<void(const std::string& phase, const LossReport&, const TrainCounters&)> on_step;
};

struct FitSummary {
  TrainCounters counters;
  std::optional<LossReport> last_d;
  std::optional<LossReport> last_g;
};

namespace detail {

/// Disables gradient tracking for a module's parameters for one scope.
class FreezeParameters {
 public:
  explicit FreezeParameters(torch::nn::Module& m) : params_(m.parameters()) {
    for (auto& p : params_) p.set_requires_grad(false);
  }
  ~FreezeParameters() {
    for (auto& p : params_) p.set_requires_grad(true);
  }
  FreezeParameters(const FreezeParameters&) = delete;
  FreezeParameters& operator=(const FreezeParameters&) = delete;

 private:
  std::vector<torch::Tensor> params_;
};

inline torch::Tensor string_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<std::int64_t>(s.size())}, torch::kUInt8);
  std::copy(s.begin(), s.end(), t.data_ptr<std::uint8_t>());
  return t;
}

inline std::string tensor_string(const torch::Tensor& t) {
  auto c = t.contiguous();
  const auto* p = c.data_ptr<std::uint8_t>();
  return std::string(p, p + c.numel());
}

}  // namespace detail

/// A differentiable objective and the scalar values of its parts.
struct Objective {
  torch::Tensor total;
  LossParts parts;
};

/// Critic objective adv_loss_d + lambda_cls * cls_loss_real on one batch. The
/// critic's real pair is (x, s), or (s, s) in refinement mode where s is a
/// real photograph.
inline Objective discriminator_objective(Generator& generator, Discriminator& discriminator,
                                         const Batch& batch, const LossWeights& w,
                                         torch::Generator& gp_rng, bool refinement,
                                         std::int64_t step = -1) {
  GeneratorOutput fake;
  {
    torch::NoGradGuard no_grad;
    fake = generator->generate(batch.x, batch.s, batch.y_target);
  }
  auto real_in = refinement ? torch::cat({batch.s, batch.s}, 1) : torch::cat({batch.x, batch.s}, 1);
  auto fake_in = torch::cat({fake.image, fake.side}, 1);
  auto out_real = discriminator->forward(real_in);
  auto out_fake = discriminator->forward(fake_in);
  auto critic = [&discriminator](const torch::Tensor& t) { return discriminator->forward(t).src_map; };
  auto gp = gradient_penalty(critic, real_in, fake_in, gp_rng, step);
  auto adv = adv_loss_d(out_real.src_map, out_fake.src_map, gp, w);
  auto cls = cls_loss_real(out_real.cls_logits, batch.y_original);

  Objective obj;
  obj.total = adv + w.lambda_cls * cls;
  obj.parts.adv_d = adv.item<double>();
  obj.parts.gp = gp.item<double>();
  obj.parts.cls_real = cls.item<double>();
  return obj;
}

/// Generator objective adv_loss_g + lambda_bi * L_bi + lambda_cls * L_cls_fake
/// + lambda_id * L_id on one batch.
inline Objective generator_objective(Generator& generator, Discriminator& discriminator,
                                     const Batch& batch, const LossWeights& w) {
  auto z = generator->encode(generator->concat_inputs(batch.x, batch.s));
  auto fake = generator->decode(z, batch.y_target);
  auto out_fake = discriminator->forward(torch::cat({fake.image, fake.side}, 1));
  auto adv = adv_loss_g(out_fake.src_map);
  auto cls = cls_loss_fake(out_fake.cls_logits, batch.y_target);

  auto z_fake = generator->encode(generator->concat_inputs(fake.image, fake.side));
  auto cycle = generator->decode(z_fake, batch.y_original);
  auto same = generator->decode(z, batch.y_original);
  auto bi = bidirectional_loss(batch.x, batch.s, cycle.image, cycle.side, z, z_fake);
  auto id = identity_loss(batch.x, same.image);

  Objective obj;
  obj.total = adv + w.lambda_bi * bi + w.lambda_cls * cls + w.lambda_id * id;
  obj.parts.adv_g = adv.item<double>();
  obj.parts.cls_fake = cls.item<double>();
  obj.parts.bidirectional = bi.item<double>();
  obj.parts.identity = id.item<double>();
  return obj;
}

/// Checkpoint archive (torch pickle of a string -> tensor dict). Keys:
///   generator.<param>, discriminator.<param>
///   optim.generator.<param>.{exp_avg,exp_avg_sq,step}
///   optim.discriminator.<param>.{exp_avg,exp_avg_sq,step}
///   state.{d_steps,g_steps,epoch,batch_in_epoch}   (int64 scalars)
///   rng.gp                                         (uint8 CPU generator state)
///   meta.config, meta.vocabulary                   (uint8 UTF-8 JSON text)
///   meta.format                                    (int64 scalar, currently 1)
inline constexpr std::int64_t kCheckpointFormat = 1;

class Trainer {
 public:
  Trainer(TrainConfig cfg, Vocabulary vocabulary)
      : cfg_(std::move(cfg)),
        vocabulary_(std::move(vocabulary)),
        generator_(nullptr),
        discriminator_(nullptr),
        gp_rng_(make_cpu_generator(derive_seed(cfg_.seed, 0x6770))) {
    cfg_.validate();
    if (vocabulary_.size() != cfg_.generator.num_attributes) {
      throw ConfigError("vocabulary has " + std::to_string(vocabulary_.size()) +
                        " attributes but the model expects " +
                        std::to_string(cfg_.generator.num_attributes));
    }
    generator_ = Generator(cfg_.generator, derive_seed(cfg_.seed, 1));
    discriminator_ = Discriminator(cfg_.discriminator, derive_seed(cfg_.seed, 2));
    const auto opts = torch::optim::AdamOptions(cfg_.lr_base)
                          .betas({cfg_.adam_beta1, cfg_.adam_beta2})
                          .eps(cfg_.adam_eps)
                          .weight_decay(0.0);
    g_opt_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), opts);
    d_opt_ = std::make_unique<torch::optim::Adam>(discriminator_->parameters(), opts);
    set_learning_rate(lr_schedule(0, cfg_));
  }

  const TrainConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocabulary_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  const TrainCounters& counters() const { return counters_; }
  double learning_rate() const { return lr_; }
  torch::Generator& gp_rng() { return gp_rng_; }

  void set_learning_rate(double lr) {
    lr_ = lr;
    for (auto* opt : {g_opt_.get(), d_opt_.get()}) {
      for (auto& group : opt->param_groups()) group.options().set_lr(lr);
    }
  }

  /// One critic update against adv_loss_d + lambda_cls * cls_loss_real. The
  /// generator runs without gradients and its parameters are not touched.
  LossReport train_step_d(const Batch& batch) {
    const auto step = counters_.step();
    auto obj = discriminator_objective(generator_, discriminator_, batch, cfg_.weights, gp_rng_,
                                       cfg_.refinement, step);
    auto report = total_losses(obj.parts, cfg_.weights, step);
    d_opt_->zero_grad();
    obj.total.backward();
    d_opt_->step();
    ++counters_.d_steps;
    return report;
  }

  /// One generator update against
  /// adv_loss_g + lambda_bi * L_bi + lambda_cls * L_cls_fake + lambda_id * L_id.
  LossReport train_step_g(const Batch& batch) {
    const auto step = counters_.step();
    detail::FreezeParameters frozen(*discriminator_);
    auto obj = generator_objective(generator_, discriminator_, batch, cfg_.weights);
    auto report = total_losses(obj.parts, cfg_.weights, step);
    g_opt_->zero_grad();
    obj.total.backward();
    g_opt_->step();
    ++counters_.g_steps;
    return report;
  }

  /// Deterministic data order for `epoch`.
  std::vector<std::size_t> epoch_order(std::size_t n, std::int64_t epoch) const {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg_.seed, 0x5348, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  std::uint64_t batch_seed(std::int64_t epoch, std::int64_t batch) const {
    return derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch) + 1,
                       static_cast<std::uint64_t>(batch));
  }

  /// Epochs of shuffled batches; every batch feeds one critic step and every
  /// n_critic-th batch additionally feeds one generator step. Resumes from
  /// the current counters.
  FitSummary fit(const DataSource& data, const FitOptions& opts = {}) {
    if (data.size() == 0) throw ValidationError("cannot fit on an empty dataset");
    if (data.image_size() != cfg_.image_size) {
      throw ConfigError("data image_size does not match the training config");
    }
    if (!(data.manifest().vocabulary == vocabulary_)) {
      throw ValidationError("dataset vocabulary differs from the trainer's vocabulary");
    }
    const bool image_side = data.manifest().side_mode == SideMode::kImage;
    if (image_side != cfg_.refinement) {
      throw ConfigError(cfg_.refinement ? "refinement training needs a dataset with side images"
                                        : "a side-image dataset needs refinement mode");
    }
    const auto per_epoch = static_cast<std::int64_t>(data.size()) / cfg_.batch_size;
    if (per_epoch < 1) throw ValidationError("dataset smaller than one batch");

    std::ofstream metrics;
    if (!opts.metrics_path.empty()) {
      if (opts.metrics_path.has_parent_path()) {
        std::filesystem::create_directories(opts.metrics_path.parent_path());
      }
      metrics.open(opts.metrics_path, std::ios::app);
      if (!metrics) throw IoError("cannot open metrics file " + opts.metrics_path.string());
    }

    FitSummary summary;
    auto emit = [&](const std::string& phase, const LossReport& r) {
      if (metrics.is_open()) metrics << metrics_record(phase, r).dump() << '\n';
      if (opts.on_step) opts.on_step(phase, r, counters_);
    };
    auto done = [&] {
      return (cfg_.max_generator_steps > 0 && counters_.g_steps >= cfg_.max_generator_steps) ||
             (opts.stop_after_d_steps > 0 && counters_.d_steps >= opts.stop_after_d_steps);
    };

    const BatchOptions batch_opts{cfg_.flip, true};
    while (counters_.epoch < cfg_.total_epochs && !done()) {
      set_learning_rate(lr_schedule(counters_.epoch, cfg_));
      const auto order = epoch_order(data.size(), counters_.epoch);
      while (counters_.batch_in_epoch < per_epoch && !done()) {
        const auto b = counters_.batch_in_epoch;
        std::span<const std::size_t> idx(order.data() + b * cfg_.batch_size,
                                         static_cast<std::size_t>(cfg_.batch_size));
        const auto batch = data.batch(idx, batch_seed(counters_.epoch, b), batch_opts);
        summary.last_d = train_step_d(batch);
        emit("d", *summary.last_d);
        if (counters_.d_steps % cfg_.n_critic == 0) {
          summary.last_g = train_step_g(batch);
          emit("g", *summary.last_g);
        }
        ++counters_.batch_in_epoch;
        if (cfg_.checkpoint_interval > 0 && counters_.d_steps % cfg_.checkpoint_interval == 0) {
          write_checkpoint_to(opts.checkpoint_dir);
        }
      }
      if (counters_.batch_in_epoch >= per_epoch) {
        ++counters_.epoch;
        counters_.batch_in_epoch = 0;
        write_checkpoint_to(opts.checkpoint_dir);
      }
    }
    write_checkpoint_to(opts.checkpoint_dir);
    summary.counters = counters_;
    return summary;
  }

  /// One JSON record: phase, step, d_steps, g_steps, epoch, lr, then the
  /// LossReport fields in their documented order.
  nlohmann::ordered_json metrics_record(const std::string& phase, const LossReport& r) const {
    nlohmann::ordered_json j;
    j["phase"] = phase;
    j["step"] = counters_.step();
    j["d_steps"] = counters_.d_steps;
    j["g_steps"] = counters_.g_steps;
    j["epoch"] = counters_.epoch;
    j["lr"] = lr_;
    const auto parts = r.to_json();
    for (const auto& [k, v] : parts.items()) j[k] = v;
    return j;
  }

  // --- checkpoints ---------------------------------------------------------

  void save_checkpoint(const std::filesystem::path& path) {
    c10::Dict<std::string, torch::Tensor> dict;
    auto put = [&dict](const std::string& k, const torch::Tensor& t) {
      dict.insert(k, t.detach().clone());
    };
    save_module("generator", *generator_, *g_opt_, put);
    save_module("discriminator", *discriminator_, *d_opt_, put);
    put("state.d_steps", torch::tensor(counters_.d_steps, torch::kInt64));
    put("state.g_steps", torch::tensor(counters_.g_steps, torch::kInt64));
    put("state.epoch", torch::tensor(counters_.epoch, torch::kInt64));
    put("state.batch_in_epoch", torch::tensor(counters_.batch_in_epoch, torch::kInt64));
    put("rng.gp", gp_rng_.get_state());
    put("meta.config", detail::string_tensor(to_json(cfg_).dump()));
    put("meta.vocabulary", detail::string_tensor(nlohmann::json(vocabulary_.names()).dump()));
    put("meta.format", torch::tensor(kCheckpointFormat, torch::kInt64));

    const auto bytes = torch::pickle_save(dict);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw IoError("cannot write checkpoint " + tmp);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw IoError("short write on checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static Trainer load_checkpoint(const std::filesystem::path& path) {
    auto dict = read_checkpoint_dict(path);
    auto get = [&dict, &path](const std::string& k) {
      auto it = dict.find(k);
      if (it == dict.end()) throw CheckpointError(path.string() + ": missing key '" + k + "'");
      return it->value();
    };
    if (get("meta.format").item<std::int64_t>() != kCheckpointFormat) {
      throw CheckpointError(path.string() + ": unsupported checkpoint format");
    }
    TrainConfig cfg;
    std::vector<std::string> vocab;
    try {
      cfg = train_config_from_json(nlohmann::json::parse(detail::tensor_string(get("meta.config"))));
      vocab = nlohmann::json::parse(detail::tensor_string(get("meta.vocabulary")))
                  .get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(path.string() + ": corrupt metadata: " + e.what());
    }
    Trainer t(cfg, Vocabulary(std::move(vocab)));
    load_module("generator", *t.generator_, *t.g_opt_, get);
    load_module("discriminator", *t.discriminator_, *t.d_opt_, get);
    t.counters_.d_steps = get("state.d_steps").item<std::int64_t>();
    t.counters_.g_steps = get("state.g_steps").item<std::int64_t>();
    t.counters_.epoch = get("state.epoch").item<std::int64_t>();
    t.counters_.batch_in_epoch = get("state.batch_in_epoch").item<std::int64_t>();
    t.gp_rng_.set_state(get("rng.gp"));
    t.set_learning_rate(lr_schedule(std::min(t.counters_.epoch, cfg.total_epochs), cfg));
    return t;
  }

  static c10::Dict<std::string, torch::Tensor> read_checkpoint_dict(
      const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      auto value = torch::pickle_load(bytes);
      c10::Dict<std::string, torch::Tensor> dict;
      for (const auto& kv : value.toGenericDict()) {
        dict.insert(kv.key().toStringRef(), kv.value().toTensor());
      }
      return dict;
    } catch (const c10::Error& e) {
      throw CheckpointError("unreadable checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
  }

 private:
  void write_checkpoint_to(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    save_checkpoint(dir / "latest.ckpt");
  }

  template <typename Put>
  static void save_module(const std::string& prefix, torch::nn::Module& module,
                          torch::optim::Adam& opt, Put&& put) {
    auto& state = opt.state();
    for (const auto& item : module.named_parameters()) {
      put(prefix + "." + item.key(), item.value());
      auto it = state.find(item.value().unsafeGetTensorImpl());
      if (it == state.end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      const auto base = "optim." + prefix + "." + item.key();
      put(base + ".exp_avg", s.exp_avg());
      put(base + ".exp_avg_sq", s.exp_avg_sq());
      put(base + ".step", torch::tensor(s.step(), torch::kInt64));
    }
  }

  template <typename Get>
  static void load_module(const std::string& prefix, torch::nn::Module& module,
                          torch::optim::Adam& opt, Get&& get) {
    torch::NoGradGuard no_grad;
    auto& state = opt.state();
    for (auto& item : module.named_parameters()) {
      auto value = get(prefix + "." + item.key());
      if (value.sizes() != item.value().sizes()) {
        throw CheckpointError("shape mismatch for " + prefix + "." + item.key());
      }
      item.value().copy_(value);
      const auto base = "optim." + prefix + "." + item.key();
      auto s = std::make_unique<torch::optim::AdamParamState>();
      try {
        s->exp_avg(get(base + ".exp_avg").clone());
        s->exp_avg_sq(get(base + ".exp_avg_sq").clone());
        s->step(get(base + ".step").template item<std::int64_t>());
      } catch (const CheckpointError&) {
        continue;  // parameter never stepped
      }
      state[item.value().unsafeGetTensorImpl()] = std::move(s);
    }
  }

  TrainConfig cfg_;
  Vocabulary vocabulary_;
  Generator generator_;
  Discriminator discriminator_;
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
  torch::Generator gp_rng_;
  TrainCounters counters_;
  double lr_ = 0.0;
};

}  // namespace agsynth
