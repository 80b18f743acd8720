#pragma once

// Objective terms: Wasserstein critic loss with gradient penalty, attribute
// classification (real / fake), identity and bidirectional L1 terms, and the
// weighted generator / discriminator totals.

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>

#include "agsynth/errors.hpp"

namespace agsynth {

struct LossWeights {
  double lambda_bi = 10.0;
  double lambda_id = 10.0;
  double lambda_cls = 1.0;
  double lambda_gp = 10.0;

  void validate() const {
    for (double w : {lambda_bi, lambda_id, lambda_cls, lambda_gp}) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ConfigError("loss weights must be finite and non-negative");
      }
    }
  }
};

// Scalar values of every term. adv_d already contains lambda_gp * gp.
struct LossParts {
  double adv_d = 0.0;
  double adv_g = 0.0;
  double gp = 0.0;
  double cls_real = 0.0;
  double cls_fake = 0.0;
  double identity = 0.0;
  double bidirectional = 0.0;
};

struct LossReport {
  double adv_d = 0.0;
  double adv_g = 0.0;
  double gp = 0.0;
  double cls_real = 0.0;
  double cls_fake = 0.0;
  double identity = 0.0;
  double bidirectional = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;

  /// Fields in fixed order: adv_d, adv_g, gp, cls_real, cls_fake, identity,
  /// bidirectional, total_g, total_d.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["adv_d"] = adv_d;
    j["adv_g"] = adv_g;
    j["gp"] = gp;
    j["cls_real"] = cls_real;
    j["cls_fake"] = cls_fake;
    j["identity"] = identity;
    j["bidirectional"] = bidirectional;
    j["total_g"] = total_g;
    j["total_d"] = total_d;
    return j;
  }

  std::string breakdown() const { return to_json().dump(); }
};

inline LossReport total_losses(const LossParts& p, const LossWeights& w, std::int64_t step = -1) {
  LossReport r;
  r.adv_d = p.adv_d;
  r.adv_g = p.adv_g;
  r.gp = p.gp;
  r.cls_real = p.cls_real;
  r.cls_fake = p.cls_fake;
  r.identity = p.identity;
  r.bidirectional = p.bidirectional;
  r.total_g = p.adv_g + w.lambda_bi * p.bidirectional + w.lambda_cls * p.cls_fake +
              w.lambda_id * p.identity;
  r.total_d = p.adv_d + w.lambda_cls * p.cls_real;
  if (!std::isfinite(r.total_g) || !std::isfinite(r.total_d)) {
    throw NumericalError(step, "non-finite loss total " + r.breakdown());
  }
  return r;
}

namespace detail {

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b,
                               const std::string& what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ValidationError(os.str());
  }
}

inline torch::Tensor mean_abs_diff(const torch::Tensor& a, const torch::Tensor& b,
                                   const std::string& what) {
  require_same_shape(a, b, what);
  return (a - b).abs().mean();
}

}  // namespace detail

/// Maps a batch of critic inputs to raw scores of shape (batch, ...).
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Penalty mean_b (||d/dx mean_patch critic(x~_b)||_2 - 1)^2 at
/// x~ = eps * real + (1 - eps) * fake, one eps per sample. The returned value
/// stays differentiable with respect to the critic's parameters.
inline torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                                      const torch::Tensor& fake, const torch::Tensor& epsilon,
                                      std::int64_t step = -1) {
  detail::require_same_shape(real, fake, "gradient_penalty");
  const auto batch = real.size(0);
  if (epsilon.numel() != batch) {
    throw ValidationError("gradient_penalty: need one interpolation weight per sample");
  }
  std::vector<std::int64_t> bshape(static_cast<std::size_t>(real.dim()), 1);
  bshape[0] = batch;
  auto eps = epsilon.to(real.dtype()).reshape(bshape);
  auto interp = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(true);

  auto scores = critic(interp);
  auto per_sample = scores.reshape({batch, -1}).mean(1);

  torch::Tensor grad;
  if (per_sample.requires_grad()) {
    grad = torch::autograd::grad({per_sample.sum()}, {interp}, /*grad_outputs=*/{},
                                 /*retain_graph=*/true, /*create_graph=*/true,
                                 /*allow_unused=*/true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(interp);
  if (!torch::isfinite(grad).all().item<bool>()) {
    throw NumericalError(step, "non-finite critic gradient in gradient penalty");
  }
  auto norms = grad.reshape({batch, -1}).norm(2, 1);
  return (norms - 1).pow(2).mean();
}

inline torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                                      const torch::Tensor& fake, torch::Generator& gen,
                                      std::int64_t step = -1) {
  auto eps = torch::rand({real.size(0)}, gen, torch::TensorOptions().dtype(real.dtype()));
  return gradient_penalty(critic, real, fake, eps, step);
}

/// Discriminator side of the adversarial objective:
/// -mean(D_src(real)) + mean(D_src(fake)) + lambda_gp * gp.
inline torch::Tensor adv_loss_d(const torch::Tensor& real_src, const torch::Tensor& fake_src,
                                const torch::Tensor& gp, const LossWeights& w) {
  return -real_src.mean() + fake_src.mean() + w.lambda_gp * gp;
}

inline torch::Tensor adv_loss_g(const torch::Tensor& fake_src) { return -fake_src.mean(); }

/// Sum over attributes of the binary cross-entropy, averaged over the batch.
/// Computed from logits, never from materialized probabilities.
inline torch::Tensor attribute_bce(const torch::Tensor& logits, const torch::Tensor& labels) {
  detail::require_same_shape(logits, labels, "attribute classification");
  if (!((labels == 0) | (labels == 1)).all().item<bool>()) {
    throw ValidationError("attribute labels must be 0 or 1");
  }
  auto target = labels.to(logits.dtype());
  auto per_element = torch::binary_cross_entropy_with_logits(
      logits, target, /*weight=*/{}, /*pos_weight=*/{}, at::Reduction::None);
  return per_element.sum() / logits.size(0);
}

inline torch::Tensor cls_loss_real(const torch::Tensor& logits, const torch::Tensor& y_original) {
  return attribute_bce(logits, y_original);
}

inline torch::Tensor cls_loss_fake(const torch::Tensor& logits_on_fake,
                                   const torch::Tensor& y_target) {
  return attribute_bce(logits_on_fake, y_target);
}

/// Mean absolute error between x and its reconstruction under the original
/// attributes (image head only).
inline torch::Tensor identity_loss(const torch::Tensor& x, const torch::Tensor& recon) {
  return detail::mean_abs_diff(x, recon, "identity_loss");
}

/// Image-level cycle term for both heads plus the latent consistency term.
inline torch::Tensor bidirectional_loss(const torch::Tensor& x, const torch::Tensor& s,
                                        const torch::Tensor& x_hat, const torch::Tensor& s_hat,
                                        const torch::Tensor& z, const torch::Tensor& z_of_fake) {
  return detail::mean_abs_diff(x, x_hat, "bidirectional_loss image") +
         detail::mean_abs_diff(s, s_hat, "bidirectional_loss side") +
         detail::mean_abs_diff(z, z_of_fake, "bidirectional_loss latent");
}

}  // namespace agsynth
