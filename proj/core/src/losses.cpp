#include "docsynth/losses.hpp"

#include <cmath>

namespace F = torch::nn::functional;

namespace docsynth {
namespace losses {

// -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(y)) = softplus(y)
torch::Tensor gan_disc(const torch::Tensor& real_logits, const torch::Tensor& fake_logits)
{
    return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

torch::Tensor gan_gen(const torch::Tensor& fake_logits)
{
    return F::softplus(-fake_logits).mean();
}

torch::Tensor hinge_disc(const torch::Tensor& real_logits, const torch::Tensor& fake_logits)
{
    return torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
}

torch::Tensor hinge_gen(const torch::Tensor& fake_logits)
{
    return -fake_logits.mean();
}

torch::Tensor kl(const torch::Tensor& mu, const torch::Tensor& logvar)
{
    auto per_dim = mu.pow(2) + logvar.exp() - 1.0 - logvar;
    return 0.5 * per_dim.sum(-1).mean();
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b)
{
    TORCH_CHECK(a.sizes() == b.sizes(), "l1 operands must have the same shape");
    return (a - b).abs().mean();
}

torch::Tensor aux_class(const torch::Tensor& logits, const torch::Tensor& labels)
{
    return F::cross_entropy(logits, labels);
}

}  // namespace losses

bool LossBreakdown::finite() const
{
    for (double t : terms())
        if (!std::isfinite(t)) return false;
    return std::isfinite(total);
}

LossBreakdown total_generator_loss(const std::array<double, 6>& terms, const LossWeights& weights)
{
    LossBreakdown out;
    out.gan_img = terms[0];
    out.gan_obj = terms[1];
    out.ac_obj = terms[2];
    out.kl = terms[3];
    out.l1_img = terms[4];
    out.l1_obj = terms[5];
    out.weights = weights;
    const auto w = weights.as_array();
    double total = 0.0;
    for (size_t i = 0; i < terms.size(); ++i) total += w[i] * terms[i];
    out.total = total;
    return out;
}

torch::Tensor weighted_total(const LossTerms& terms, const LossWeights& weights)
{
    const auto w = weights.as_array();
    const auto t = terms.as_array();
    torch::Tensor total;
    for (size_t i = 0; i < t.size(); ++i) {
        if (w[i] == 0.0 || !t[i].defined()) continue;
        auto part = w[i] * t[i];
        total = total.defined() ? total + part : part;
    }
    if (!total.defined()) {
        // Nothing weighted: a zero that still participates in autograd.
        for (const auto& term : t)
            if (term.defined()) return term * 0.0;
        return torch::zeros({});
    }
    return total;
}

}  // namespace docsynth
