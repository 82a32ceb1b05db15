#pragma once

#include <array>
#include <string>

#include <torch/torch.h>

#include "docsynth/config.hpp"
#include "docsynth/generator.hpp"

namespace docsynth {
namespace losses {

/// Discriminator side of the GAN objective, negated for minimization:
/// -[E log D(x) + E log(1 - D(y))] with D = sigmoid(logit). Computed with
/// softplus so extreme logits stay finite.
torch::Tensor gan_disc(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

/// Non-saturating generator loss -E log D(y).
torch::Tensor gan_gen(const torch::Tensor& fake_logits);

torch::Tensor hinge_disc(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor hinge_gen(const torch::Tensor& fake_logits);

/// Mean over objects of KL(N(mu, sigma^2) || N(0, I)), summed over latent dims.
torch::Tensor kl(const torch::Tensor& mu, const torch::Tensor& logvar);
inline torch::Tensor kl(const PosteriorParams& p) { return kl(p.mu, p.logvar); }

/// Mean absolute error.
torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b);

/// Softmax cross-entropy averaged over objects.
torch::Tensor aux_class(const torch::Tensor& logits, const torch::Tensor& labels);

}  // namespace losses

/// The six generator-side terms, as differentiable scalars.
struct LossTerms {
    torch::Tensor gan_img, gan_obj, ac_obj, kl, l1_img, l1_obj;

    std::array<torch::Tensor, 6> as_array() const { return {gan_img, gan_obj, ac_obj, kl, l1_img, l1_obj}; }
};

inline constexpr std::array<const char*, 6> kLossTermNames = {"gan_img", "gan_obj", "ac_obj",
                                                              "kl",      "l1_img",  "l1_obj"};

struct LossBreakdown {
    double gan_img = 0.0;
    double gan_obj = 0.0;
    double ac_obj = 0.0;
    double kl = 0.0;
    double l1_img = 0.0;
    double l1_obj = 0.0;
    double total = 0.0;
    LossWeights weights;

    std::array<double, 6> terms() const { return {gan_img, gan_obj, ac_obj, kl, l1_img, l1_obj}; }
    bool finite() const;
    bool operator==(const LossBreakdown&) const = default;
};

/// total = sum_i lambda_i * term_i, accumulated in double in term order.
LossBreakdown total_generator_loss(const std::array<double, 6>& terms, const LossWeights& weights);

/// Differentiable weighted sum of `terms`.
torch::Tensor weighted_total(const LossTerms& terms, const LossWeights& weights);

}  // namespace docsynth
