#include "docsynth/generator.hpp"

#include <algorithm>
#include <cmath>

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace docsynth {

int64_t LayoutBatch::max_count() const
{
    return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

LayoutBatch make_layout_batch(std::span<const Layout> layouts, int image_size)
{
    LayoutBatch batch;
    batch.image_size = image_size;
    std::vector<int64_t> labels;
    for (size_t b = 0; b < layouts.size(); ++b) {
        const auto& layout = layouts[b];
        batch.counts.push_back(layout.size());
        for (const auto& obj : layout.objects) {
            labels.push_back(obj.label);
            batch.owner.push_back(static_cast<int64_t>(b));
            batch.rects.push_back(to_pixels(obj.bbox, image_size));
        }
    }
    batch.labels = torch::tensor(labels, torch::kInt64);
    batch.obj_to_img = torch::tensor(batch.owner, torch::kInt64);
    return batch;
}

LayoutBatch make_layout_batch(const Layout& layout, int image_size)
{
    return make_layout_batch(std::span<const Layout>(&layout, 1), image_size);
}

torch::Tensor reparameterize(const PosteriorParams& params, const torch::Tensor& eps)
{
    return params.mu + torch::exp(0.5 * params.logvar) * eps;
}

torch::Tensor compose_object_feature_map(const torch::Tensor& embedding, const torch::Tensor& z, const BBox& bbox,
                                         int canvas_size)
{
    TORCH_CHECK(embedding.dim() == 1 && z.dim() == 1, "embedding and latent must be vectors");
    const auto r = to_pixels(bbox, canvas_size);
    auto mask = torch::zeros({1, canvas_size, canvas_size}, embedding.options());
    mask.index_put_({Slice(), Slice(r.y0, r.y1), Slice(r.x0, r.x1)}, 1.0);
    return torch::cat({embedding, z}).view({-1, 1, 1}) * mask;
}

torch::Tensor compose_object_feature_maps(const torch::Tensor& embeddings, const torch::Tensor& z,
                                          const LayoutBatch& batch)
{
    const int64_t n = batch.num_objects();
    const int64_t s = batch.image_size;
    TORCH_CHECK(embeddings.size(0) == n && z.size(0) == n, "one embedding and one latent per object required");
    auto mask = torch::zeros({n, 1, s, s}, embeddings.options());
    for (int64_t i = 0; i < n; ++i) {
        const auto& r = batch.rects[static_cast<size_t>(i)];
        mask.index_put_({i, Slice(), Slice(r.y0, r.y1), Slice(r.x0, r.x1)}, 1.0);
    }
    return torch::cat({embeddings, z}, 1).view({n, -1, 1, 1}) * mask;
}

// ---------------------------------------------------------------------------

ConditionalBatchNormImpl::ConditionalBatchNormImpl(int64_t channels, int64_t cond_dim)
{
    norm_ = register_module("norm", nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).affine(false)));
    gamma_ = register_module("gamma", nn::Linear(cond_dim, channels));
    beta_ = register_module("beta", nn::Linear(cond_dim, channels));
}

torch::Tensor ConditionalBatchNormImpl::forward(const torch::Tensor& x, const torch::Tensor& cond)
{
    const auto n = x.size(0);
    auto gamma = 1.0 + gamma_(cond).view({n, -1, 1, 1});
    auto beta = beta_(cond).view({n, -1, 1, 1});
    return gamma * norm_(x) + beta;
}

ObjectEncoderImpl::ObjectEncoderImpl(const ModelConfig& config) : latent_dim_(config.latent_dim)
{
    const int64_t crop = config.crop_size();
    const int64_t width = config.object_encoder_width;
    const int downsamples = static_cast<int>(std::log2(static_cast<double>(crop))) - 1;  // ends at 2x2

    int64_t channels = width;
    convs_.push_back(nn::Conv2d(nn::Conv2dOptions(3, channels, 3).padding(1)));
    norms_.push_back(ConditionalBatchNorm(channels, config.embed_dim));
    for (int i = 0; i < downsamples; ++i) {
        const int64_t next = std::min(channels * 2, width * 4);
        convs_.push_back(nn::Conv2d(nn::Conv2dOptions(channels, next, 3).stride(2).padding(1)));
        norms_.push_back(ConditionalBatchNorm(next, config.embed_dim));
        channels = next;
    }
    for (size_t i = 0; i < convs_.size(); ++i) {
        register_module("conv" + std::to_string(i), convs_[i]);
        register_module("cbn" + std::to_string(i), norms_[i]);
    }
    fc1_ = register_module("fc1", nn::Linear(channels * 2 * 2, config.object_encoder_hidden));
    fc2_ = register_module("fc2", nn::Linear(config.object_encoder_hidden, 2 * config.latent_dim));
}

PosteriorParams ObjectEncoderImpl::forward(const torch::Tensor& crops, const torch::Tensor& embeddings)
{
    auto x = crops;
    for (size_t i = 0; i < convs_.size(); ++i) x = torch::leaky_relu(norms_[i](convs_[i](x), embeddings), 0.2);
    x = torch::leaky_relu(fc1_(x.flatten(1)), 0.2);
    auto stats = fc2_(x);
    if (!torch::isfinite(stats).all().item<bool>())
        throw std::runtime_error("object encoder produced non-finite activations");
    auto parts = stats.split(latent_dim_, 1);
    return {parts[0], parts[1]};
}

LayoutEncoderImpl::LayoutEncoderImpl(const ModelConfig& config)
{
    const bool sn = config.generator_spectral_norm;
    const int64_t w = config.layout_encoder_width;
    const int64_t ch = config.hidden_channels;
    body_->push_back(make_conv(config.object_channels(), w, 3, 2, 1, sn));
    body_->push_back(nn::BatchNorm2d(w));
    body_->push_back(nn::ReLU());
    body_->push_back(make_conv(w, 2 * w, 3, 2, 1, sn));
    body_->push_back(nn::BatchNorm2d(2 * w));
    body_->push_back(nn::ReLU());
    body_->push_back(make_conv(2 * w, ch, 3, 2, 1, sn));
    body_->push_back(nn::BatchNorm2d(ch));
    body_->push_back(nn::ReLU());
    register_module("body", body_);
}

torch::Tensor LayoutEncoderImpl::forward(const torch::Tensor& maps)
{
    return body_->forward(maps);
}

ConvLstmCellImpl::ConvLstmCellImpl(int64_t in_channels, int64_t hidden_channels, int64_t kernel, bool spectral)
    : hidden_(hidden_channels)
{
    gates_ = register_module("gates",
                             make_conv(in_channels + hidden_channels, 4 * hidden_channels, kernel, 1, kernel / 2, spectral));
}

std::pair<torch::Tensor, torch::Tensor> ConvLstmCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                                  const torch::Tensor& c)
{
    auto g = gates_(torch::cat({x, h}, 1)).chunk(4, 1);
    auto input = torch::sigmoid(g[0]);
    auto forget = torch::sigmoid(g[1]);
    auto output = torch::sigmoid(g[2]);
    auto cand = torch::tanh(g[3]);
    auto c_next = forget * c + input * cand;
    auto h_next = output * torch::tanh(c_next);
    return {h_next, c_next};
}

ConvLstmImpl::ConvLstmImpl(int64_t channels, int layers, int64_t kernel, bool spectral) : channels_(channels)
{
    for (int l = 0; l < layers; ++l)
        cells_.push_back(register_module("cell" + std::to_string(l), ConvLstmCell(channels, channels, kernel, spectral)));
}

torch::Tensor ConvLstmImpl::forward(const torch::Tensor& seq, const torch::Tensor& mask)
{
    TORCH_CHECK(seq.dim() == 5, "conv-LSTM expects [T, B, C, H, W]");
    const auto steps = seq.size(0);
    const auto b = seq.size(1);
    auto zeros = torch::zeros({b, channels_, seq.size(3), seq.size(4)}, seq.options());
    std::vector<torch::Tensor> h(cells_.size(), zeros), c(cells_.size(), zeros);
    for (int64_t t = 0; t < steps; ++t) {
        auto x = seq[t];
        auto m = mask[t].view({b, 1, 1, 1});
        for (size_t l = 0; l < cells_.size(); ++l) {
            auto [hn, cn] = cells_[l](x, h[l], c[l]);
            h[l] = torch::where(m, hn, h[l]);
            c[l] = torch::where(m, cn, c[l]);
            x = h[l];
        }
    }
    return h.back();
}

VanillaLstmReasonerImpl::VanillaLstmReasonerImpl(int64_t channels, int64_t spatial, int64_t hidden)
    : channels_(channels), spatial_(spatial)
{
    const int64_t flat = channels * spatial * spatial;
    cell_ = register_module("cell", nn::LSTMCell(flat, hidden));
    project_ = register_module("project", nn::Linear(hidden, flat));
}

torch::Tensor VanillaLstmReasonerImpl::forward(const torch::Tensor& seq, const torch::Tensor& mask)
{
    const auto steps = seq.size(0);
    const auto b = seq.size(1);
    auto h = torch::zeros({b, cell_->options.hidden_size()}, seq.options());
    auto c = torch::zeros_like(h);
    for (int64_t t = 0; t < steps; ++t) {
        auto m = mask[t].view({b, 1});
        auto [hn, cn] = cell_(seq[t].flatten(1), std::make_tuple(h, c));
        h = torch::where(m, hn, h);
        c = torch::where(m, cn, c);
    }
    return project_(h).view({b, channels_, spatial_, spatial_});
}

ImageDecoderImpl::ImageDecoderImpl(const ModelConfig& config)
{
    const bool sn = config.generator_spectral_norm;
    int64_t ch = config.hidden_channels;
    for (int i = 0; i < 3; ++i) {
        body_->push_back(make_deconv(ch, ch / 2, 4, 2, 1, sn));
        body_->push_back(nn::BatchNorm2d(ch / 2));
        body_->push_back(nn::ReLU());
        ch /= 2;
    }
    body_->push_back(make_conv(ch, 3, 3, 1, 1, sn));
    body_->push_back(nn::Tanh());
    register_module("body", body_);
}

torch::Tensor ImageDecoderImpl::forward(const torch::Tensor& h)
{
    return body_->forward(h);
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const ModelConfig& config) : config_(config)
{
    config_.validate();
    embedding_ = register_module("embedding", nn::Embedding(config.num_classes, config.embed_dim));
    layout_encoder_ = register_module("layout_encoder", LayoutEncoder(config));
    switch (config.backbone) {
    case ReasoningBackbone::ConvLstm:
        conv_lstm_ = register_module("conv_lstm", ConvLstm(config.hidden_channels, config.lstm_layers,
                                                           config.lstm_kernel, config.generator_spectral_norm));
        break;
    case ReasoningBackbone::VanillaLstm:
        vanilla_lstm_ = register_module("vanilla_lstm", VanillaLstmReasoner(config.hidden_channels, config.hidden_size(),
                                                                            config.vanilla_lstm_hidden));
        break;
    case ReasoningBackbone::None: break;
    }
    decoder_ = register_module("decoder", ImageDecoder(config));
}

torch::Tensor GeneratorImpl::embed(const torch::Tensor& labels)
{
    return embedding_(labels);
}

torch::Tensor GeneratorImpl::compose(const torch::Tensor& embeddings, const torch::Tensor& z, const LayoutBatch& batch)
{
    return compose_object_feature_maps(embeddings, z, batch);
}

torch::Tensor GeneratorImpl::encode_layout(const torch::Tensor& maps)
{
    return layout_encoder_(maps);
}

torch::Tensor GeneratorImpl::spatial_reason(const torch::Tensor& encoded, const LayoutBatch& batch)
{
    const int64_t n = batch.num_objects();
    const int64_t b = batch.batch_size();
    TORCH_CHECK(encoded.size(0) == n, "encoded maps must match the layout batch");
    TORCH_CHECK(n > 0, "spatial reasoning needs at least one object");

    if (config_.backbone == ReasoningBackbone::None) {
        auto out = torch::zeros({b, encoded.size(1), encoded.size(2), encoded.size(3)}, encoded.options());
        return out.index_add(0, batch.obj_to_img, encoded);
    }

    // Pad into [T, B, ...]; index n selects an appended zero map.
    const int64_t steps = batch.max_count();
    std::vector<int64_t> index(static_cast<size_t>(steps * b), n);
    std::vector<uint8_t> valid(static_cast<size_t>(steps * b), 0);
    int64_t offset = 0;
    for (int64_t img = 0; img < b; ++img) {
        for (int64_t t = 0; t < batch.counts[static_cast<size_t>(img)]; ++t) {
            index[static_cast<size_t>(t * b + img)] = offset + t;
            valid[static_cast<size_t>(t * b + img)] = 1;
        }
        offset += batch.counts[static_cast<size_t>(img)];
    }
    auto padded = torch::cat({encoded, torch::zeros_like(encoded[0]).unsqueeze(0)}, 0);
    auto seq = padded.index_select(0, torch::tensor(index, torch::kInt64))
                   .view({steps, b, encoded.size(1), encoded.size(2), encoded.size(3)});
    auto mask = torch::tensor(valid, torch::kUInt8).to(torch::kBool).view({steps, b});

    if (config_.backbone == ReasoningBackbone::VanillaLstm) return vanilla_lstm_(seq, mask);
    return conv_lstm_(seq, mask);
}

torch::Tensor GeneratorImpl::decode(const torch::Tensor& h)
{
    return decoder_(h);
}

torch::Tensor GeneratorImpl::forward(const LayoutBatch& batch, const torch::Tensor& z)
{
    TORCH_CHECK(z.dim() == 2 && z.size(0) == batch.num_objects() && z.size(1) == config_.latent_dim,
                "expected latents of shape [num_objects, latent_dim]");
    auto maps = compose(embed(batch.labels), z, batch);
    return decode(spatial_reason(encode_layout(maps), batch));
}

GeneratorBundleImpl::GeneratorBundleImpl(const ModelConfig& config)
{
    generator = register_module("generator", Generator(config));
    encoder = register_module("encoder", ObjectEncoder(config));
    encoder_gen = register_module("encoder_gen", ObjectEncoder(config));
}

PosteriorParams GeneratorBundleImpl::encode_objects(const torch::Tensor& crops, const torch::Tensor& labels)
{
    return encoder(crops, generator->embed(labels));
}

PosteriorParams GeneratorBundleImpl::encode_generated(const torch::Tensor& crops, const torch::Tensor& labels)
{
    return encoder_gen(crops, generator->embed(labels));
}

torch::Tensor generate(Generator& generator, const Layout& layout, std::span<const LatentCode> latents)
{
    if (static_cast<int64_t>(latents.size()) != layout.size())
        throw LatentCountError("layout has " + std::to_string(layout.size()) + " objects but " +
                               std::to_string(latents.size()) + " latents were given");
    if (latents.empty()) throw LatentCountError("cannot generate an empty layout");
    std::vector<torch::Tensor> zs;
    zs.reserve(latents.size());
    for (const auto& l : latents) zs.push_back(l.z.reshape({-1}));
    auto batch = make_layout_batch(layout, generator->config().image_size);
    return generator->forward(batch, torch::stack(zs))[0];
}

std::vector<LatentCode> sample_prior(int64_t n, int64_t dim, at::Generator& rng)
{
    auto z = torch::randn({n, dim}, rng);
    std::vector<LatentCode> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.push_back({z[i].clone(), LatentSource::Prior});
    return out;
}

}  // namespace docsynth
