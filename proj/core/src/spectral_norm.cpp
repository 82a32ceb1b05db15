#include "docsynth/spectral_norm.hpp"

#include <cmath>

namespace F = torch::nn::functional;

namespace docsynth {

namespace {

torch::Tensor normalize(const torch::Tensor& x)
{
    return F::normalize(x, F::NormalizeFuncOptions().dim(0).eps(1e-12));
}

}  // namespace

SpectralLayerImpl::SpectralLayerImpl(const LayerOptions& options) : options_(options)
{
    TORCH_CHECK(options_.in > 0 && options_.out > 0, "layer channel counts must be positive");
    std::vector<int64_t> shape;
    switch (options_.kind) {
    case LayerKind::Linear: shape = {options_.out, options_.in}; break;
    case LayerKind::Conv2d: shape = {options_.out, options_.in, options_.kernel, options_.kernel}; break;
    case LayerKind::ConvTranspose2d: shape = {options_.in, options_.out, options_.kernel, options_.kernel}; break;
    }
    weight = register_parameter("weight", torch::empty(shape));
    torch::nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
    if (options_.bias) {
        const auto fan_in = std::get<0>(torch::nn::init::_calculate_fan_in_and_fan_out(weight));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        bias = register_parameter("bias", torch::empty({options_.out}).uniform_(-bound, bound));
    }

    if (options_.spectral) {
        const auto w = weight_matrix();
        u_ = register_buffer("sn_u", normalize(torch::randn({w.size(0)})));
        v_ = register_buffer("sn_v", normalize(torch::randn({w.size(1)})));
        power_iteration(options_.warmup_iterations);
    }
}

torch::Tensor SpectralLayerImpl::weight_matrix() const
{
    if (options_.kind == LayerKind::ConvTranspose2d) return weight.transpose(0, 1).reshape({options_.out, -1});
    return weight.reshape({weight.size(0), -1});
}

void SpectralLayerImpl::power_iteration(int steps)
{
    if (!options_.spectral) return;
    torch::NoGradGuard no_grad;
    const auto w = weight_matrix().detach();
    for (int i = 0; i < steps; ++i) {
        v_.copy_(normalize(torch::mv(w.t(), u_)));
        u_.copy_(normalize(torch::mv(w, v_)));
    }
}

torch::Tensor SpectralLayerImpl::sigma_estimate() const
{
    // Clones keep autograd's saved copies intact when a later forward updates u, v in place.
    return torch::dot(u_.clone(), torch::mv(weight_matrix(), v_.clone()));
}

torch::Tensor SpectralLayerImpl::normalized_weight() const
{
    if (!options_.spectral) return weight;
    return weight / sigma_estimate();
}

torch::Tensor SpectralLayerImpl::forward(const torch::Tensor& x)
{
    if (options_.spectral && is_training()) power_iteration(1);
    const auto w = normalized_weight();
    const auto b = options_.bias ? bias : torch::Tensor();
    switch (options_.kind) {
    case LayerKind::Linear: return F::linear(x, w, b);
    case LayerKind::Conv2d:
        return F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).stride(options_.stride).padding(options_.padding));
    case LayerKind::ConvTranspose2d:
        return F::conv_transpose2d(
            x, w, F::ConvTranspose2dFuncOptions().bias(b).stride(options_.stride).padding(options_.padding));
    }
    return x;
}

std::vector<SpectralLayer> spectral_layers(torch::nn::Module& module)
{
    std::vector<SpectralLayer> out;
    for (const auto& m : module.modules(/*include_self=*/true)) {
        if (auto layer = std::dynamic_pointer_cast<SpectralLayerImpl>(m); layer && layer->spectral())
            out.emplace_back(layer);
    }
    return out;
}

}  // namespace docsynth
