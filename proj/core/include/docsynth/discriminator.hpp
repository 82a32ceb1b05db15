#pragma once

#include <vector>

#include <torch/torch.h>

#include "docsynth/config.hpp"
#include "docsynth/spectral_norm.hpp"

namespace docsynth {

struct DiscOutput {
    torch::Tensor realness;      // [N] logits
    torch::Tensor class_logits;  // [N, |O|]; undefined for the image discriminator
};

/// Unconditional image discriminator: spectrally-normalized conv stack down
/// to 8x8, global sum pooling, linear realness head.
class ImageDiscriminatorImpl : public torch::nn::Module {
public:
    explicit ImageDiscriminatorImpl(const ModelConfig& config);
    /// images [B, 3, S, S] -> logits [B]
    torch::Tensor forward(const torch::Tensor& images);

private:
    std::vector<SpectralLayer> convs_;
    SpectralLayer head_{nullptr};
};
TORCH_MODULE(ImageDiscriminator);

/// Object discriminator with a shared trunk, a realness head and an auxiliary
/// classifier over the object categories.
class ObjectDiscriminatorImpl : public torch::nn::Module {
public:
    explicit ObjectDiscriminatorImpl(const ModelConfig& config);
    /// crops [N, 3, M, M]
    DiscOutput forward(const torch::Tensor& crops);

private:
    std::vector<SpectralLayer> convs_;
    SpectralLayer realness_{nullptr};
    SpectralLayer classifier_{nullptr};
};
TORCH_MODULE(ObjectDiscriminator);

class DiscriminatorBundleImpl : public torch::nn::Module {
public:
    explicit DiscriminatorBundleImpl(const ModelConfig& config);

    ImageDiscriminator image{nullptr};
    ObjectDiscriminator object{nullptr};
};
TORCH_MODULE(DiscriminatorBundle);

}  // namespace docsynth
