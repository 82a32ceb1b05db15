#include "docsynth/discriminator.hpp"

#include <algorithm>
#include <cmath>

namespace F = torch::nn::functional;

namespace docsynth {

namespace {

// Conv stack: a stride-1 stem followed by stride-2 convs until `final_size`.
int64_t build_trunk(torch::nn::Module& owner, std::vector<SpectralLayer>& convs, int64_t input_size,
                    int64_t final_size, int64_t width, int64_t max_width)
{
    int64_t channels = width;
    convs.push_back(make_conv(3, channels, 3, 1, 1, true));
    for (int64_t size = input_size; size > final_size; size /= 2) {
        const int64_t next = std::min(channels * 2, max_width);
        convs.push_back(make_conv(channels, next, 4, 2, 1, true));
        channels = next;
    }
    for (size_t i = 0; i < convs.size(); ++i) owner.register_module("conv" + std::to_string(i), convs[i]);
    return channels;
}

torch::Tensor run_trunk(std::vector<SpectralLayer>& convs, torch::Tensor x)
{
    for (auto& conv : convs) x = torch::leaky_relu(conv(x), 0.2);
    return x.sum({2, 3});
}

}  // namespace

ImageDiscriminatorImpl::ImageDiscriminatorImpl(const ModelConfig& config)
{
    const int64_t w = config.image_disc_width;
    const int64_t channels = build_trunk(*this, convs_, config.image_size, 8, w, 8 * w);
    head_ = register_module("head", make_linear(channels, 1, true));
}

torch::Tensor ImageDiscriminatorImpl::forward(const torch::Tensor& images)
{
    return head_(run_trunk(convs_, images)).squeeze(1);
}

ObjectDiscriminatorImpl::ObjectDiscriminatorImpl(const ModelConfig& config)
{
    const int64_t w = config.object_disc_width;
    const int64_t channels = build_trunk(*this, convs_, config.crop_size(), 4, w, 4 * w);
    realness_ = register_module("realness", make_linear(channels, 1, true));
    classifier_ = register_module("classifier", make_linear(channels, config.num_classes, true));
}

DiscOutput ObjectDiscriminatorImpl::forward(const torch::Tensor& crops)
{
    auto features = run_trunk(convs_, crops);
    return {realness_(features).squeeze(1), classifier_(features)};
}

DiscriminatorBundleImpl::DiscriminatorBundleImpl(const ModelConfig& config)
{
    image = register_module("image", ImageDiscriminator(config));
    object = register_module("object", ObjectDiscriminator(config));
}

}  // namespace docsynth
