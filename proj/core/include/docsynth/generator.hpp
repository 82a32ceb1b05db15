#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <torch/torch.h>

#include "docsynth/config.hpp"
#include "docsynth/layout.hpp"
#include "docsynth/spectral_norm.hpp"

namespace docsynth {

/// A batch of layouts flattened object-wise. Objects of image b occupy a
/// contiguous run, in layout order.
struct LayoutBatch {
    int image_size = 0;
    torch::Tensor labels;      // [N] int64
    torch::Tensor obj_to_img;  // [N] int64
    std::vector<int64_t> counts;      // objects per image
    std::vector<int64_t> owner;       // same as obj_to_img, host side
    std::vector<PixelRect> rects;     // pixel boxes at image_size

    int64_t batch_size() const { return static_cast<int64_t>(counts.size()); }
    int64_t num_objects() const { return static_cast<int64_t>(rects.size()); }
    int64_t max_count() const;
};

LayoutBatch make_layout_batch(std::span<const Layout> layouts, int image_size);
LayoutBatch make_layout_batch(const Layout& layout, int image_size);

/// Mean and log-variance of the per-object latent posterior.
struct PosteriorParams {
    torch::Tensor mu;      // [N, d_z]
    torch::Tensor logvar;  // [N, d_z]
};

enum class LatentSource { Prior, Posterior };

struct LatentCode {
    torch::Tensor z;  // [d_z]
    LatentSource source = LatentSource::Prior;
};

/// z = mu + exp(logvar / 2) * eps; differentiable in mu and logvar.
torch::Tensor reparameterize(const PosteriorParams& params, const torch::Tensor& eps);

/// [C, S, S] map: concat(e, z) broadcast inside the pixel box of `bbox`, zero elsewhere.
torch::Tensor compose_object_feature_map(const torch::Tensor& embedding, const torch::Tensor& z, const BBox& bbox,
                                         int canvas_size);
/// Batched form over a LayoutBatch: [N, d_e + d_z, S, S].
torch::Tensor compose_object_feature_maps(const torch::Tensor& embeddings, const torch::Tensor& z,
                                          const LayoutBatch& batch);

// ---------------------------------------------------------------------------

/// Batch normalization whose per-channel scale and shift are affine functions
/// of a conditioning vector (the label embedding).
class ConditionalBatchNormImpl : public torch::nn::Module {
public:
    ConditionalBatchNormImpl(int64_t channels, int64_t cond_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

private:
    torch::nn::BatchNorm2d norm_{nullptr};
    torch::nn::Linear gamma_{nullptr};
    torch::nn::Linear beta_{nullptr};
};
TORCH_MODULE(ConditionalBatchNorm);

/// Object predictor: crop + label embedding -> posterior over the object's latent.
class ObjectEncoderImpl : public torch::nn::Module {
public:
    explicit ObjectEncoderImpl(const ModelConfig& config);
    /// crops [N, 3, M, M], label embeddings [N, d_e]
    PosteriorParams forward(const torch::Tensor& crops, const torch::Tensor& embeddings);

private:
    std::vector<torch::nn::Conv2d> convs_;
    std::vector<ConditionalBatchNorm> norms_;
    torch::nn::Linear fc1_{nullptr};
    torch::nn::Linear fc2_{nullptr};
    int64_t latent_dim_;
};
TORCH_MODULE(ObjectEncoder);

/// Global layout encoder: three stride-2 conv blocks, S -> S/8.
class LayoutEncoderImpl : public torch::nn::Module {
public:
    explicit LayoutEncoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& maps);

private:
    torch::nn::Sequential body_;
};
TORCH_MODULE(LayoutEncoder);

class ConvLstmCellImpl : public torch::nn::Module {
public:
    ConvLstmCellImpl(int64_t in_channels, int64_t hidden_channels, int64_t kernel, bool spectral);
    /// Returns (h, c).
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                    const torch::Tensor& c);

private:
    SpectralLayer gates_{nullptr};
    int64_t hidden_;
};
TORCH_MODULE(ConvLstmCell);

/// Stacked convolutional LSTM over a padded object sequence.
class ConvLstmImpl : public torch::nn::Module {
public:
    ConvLstmImpl(int64_t channels, int layers, int64_t kernel, bool spectral);
    /// seq [T, B, C, H, W], mask [T, B] (bool). State starts at zero and is
    /// frozen for masked steps; returns the top layer's final hidden state.
    torch::Tensor forward(const torch::Tensor& seq, const torch::Tensor& mask);
    int layers() const { return static_cast<int>(cells_.size()); }

private:
    std::vector<ConvLstmCell> cells_;
    int64_t channels_;
};
TORCH_MODULE(ConvLstm);

/// Ablation baseline: flattened maps through a standard LSTM cell, final
/// state projected back to C_h x S' x S'.
class VanillaLstmReasonerImpl : public torch::nn::Module {
public:
    VanillaLstmReasonerImpl(int64_t channels, int64_t spatial, int64_t hidden);
    torch::Tensor forward(const torch::Tensor& seq, const torch::Tensor& mask);

private:
    torch::nn::LSTMCell cell_{nullptr};
    torch::nn::Linear project_{nullptr};
    int64_t channels_;
    int64_t spatial_;
};
TORCH_MODULE(VanillaLstmReasoner);

/// Image decoder: three stride-2 transposed-conv blocks S' -> S, tanh output.
class ImageDecoderImpl : public torch::nn::Module {
public:
    explicit ImageDecoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& h);

private:
    torch::nn::Sequential body_;
};
TORCH_MODULE(ImageDecoder);

/// Maps (layout, per-object latents) to an image.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const ModelConfig& config);

    torch::Tensor embed(const torch::Tensor& labels);
    torch::Tensor compose(const torch::Tensor& embeddings, const torch::Tensor& z, const LayoutBatch& batch);
    torch::Tensor encode_layout(const torch::Tensor& maps);
    /// encoded [N, C_h, S', S'] in batch order -> h [B, C_h, S', S']
    torch::Tensor spatial_reason(const torch::Tensor& encoded, const LayoutBatch& batch);
    torch::Tensor decode(const torch::Tensor& h);

    /// z [N, d_z] -> images [B, 3, S, S]
    torch::Tensor forward(const LayoutBatch& batch, const torch::Tensor& z);

    const ModelConfig& config() const { return config_; }
    torch::nn::Embedding embedding() const { return embedding_; }

private:
    ModelConfig config_;
    torch::nn::Embedding embedding_{nullptr};
    LayoutEncoder layout_encoder_{nullptr};
    ConvLstm conv_lstm_{nullptr};
    VanillaLstmReasoner vanilla_lstm_{nullptr};
    ImageDecoder decoder_{nullptr};
};
TORCH_MODULE(Generator);

/// Everything the generator optimizer owns: G plus the two object predictors
/// E (real crops) and E' (generated crops).
class GeneratorBundleImpl : public torch::nn::Module {
public:
    explicit GeneratorBundleImpl(const ModelConfig& config);

    Generator generator{nullptr};
    ObjectEncoder encoder{nullptr};
    ObjectEncoder encoder_gen{nullptr};

    /// E applied to real crops, conditioned on the labels' embeddings.
    PosteriorParams encode_objects(const torch::Tensor& crops, const torch::Tensor& labels);
    /// E' applied to generated crops.
    PosteriorParams encode_generated(const torch::Tensor& crops, const torch::Tensor& labels);
};
TORCH_MODULE(GeneratorBundle);

class LatentCountError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Single-layout generation; requires one latent per object. Returns [3, S, S].
torch::Tensor generate(Generator& generator, const Layout& layout, std::span<const LatentCode> latents);

/// n i.i.d. N(0, 1) latents of dimension `dim` drawn from `rng`.
std::vector<LatentCode> sample_prior(int64_t n, int64_t dim, at::Generator& rng);

}  // namespace docsynth
