#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace docsynth {

enum class LayerKind { Linear, Conv2d, ConvTranspose2d };

struct LayerOptions {
    LayerKind kind = LayerKind::Conv2d;
    int64_t in = 0;
    int64_t out = 0;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t padding = 1;
    bool bias = true;
    bool spectral = true;
    /// Power iterations run once at construction so the first forward already
    /// divides by a converged estimate of the largest singular value.
    int warmup_iterations = 30;
};

/// Linear / conv / transposed-conv layer whose weight is divided by its
/// largest singular value (estimated by power iteration) on every forward.
/// In training mode each forward advances the power iteration by one step;
/// in eval mode the stored singular vectors are used as is.
///
/// With `spectral = false` it is a plain layer with PyTorch-default init.
class SpectralLayerImpl : public torch::nn::Module {
public:
    explicit SpectralLayerImpl(const LayerOptions& options);

    torch::Tensor forward(const torch::Tensor& x);

    /// The weight the next eval-mode forward would use.
    torch::Tensor normalized_weight() const;
    /// Current estimate u^T W v of the raw weight's largest singular value.
    torch::Tensor sigma_estimate() const;

    /// Raw weight viewed as a [rows, cols] matrix (output dimension first).
    torch::Tensor weight_matrix() const;
    void power_iteration(int steps);

    const LayerOptions& options() const { return options_; }
    bool spectral() const { return options_.spectral; }

    torch::Tensor weight;
    torch::Tensor bias;

private:
    LayerOptions options_;
    torch::Tensor u_;
    torch::Tensor v_;
};
TORCH_MODULE(SpectralLayer);

inline SpectralLayer make_conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
                               bool spectral, bool bias = true)
{
    return SpectralLayer(LayerOptions{LayerKind::Conv2d, in, out, kernel, stride, padding, bias, spectral});
}

inline SpectralLayer make_deconv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
                                 bool spectral, bool bias = true)
{
    return SpectralLayer(LayerOptions{LayerKind::ConvTranspose2d, in, out, kernel, stride, padding, bias, spectral});
}

inline SpectralLayer make_linear(int64_t in, int64_t out, bool spectral, bool bias = true)
{
    return SpectralLayer(LayerOptions{LayerKind::Linear, in, out, 1, 1, 0, bias, spectral});
}

/// Every SpectralLayer with normalization enabled found under `module`.
std::vector<SpectralLayer> spectral_layers(torch::nn::Module& module);

}  // namespace docsynth
