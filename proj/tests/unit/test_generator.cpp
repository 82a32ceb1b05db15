#include <random>

#include <ATen/CPUGeneratorImpl.h>
#include <gtest/gtest.h>

#include "docsynth/generator.hpp"
#include "helpers.hpp"

using namespace docsynth;
using test::make_layout;

namespace {

ModelConfig tiny(int size = 64)
{
    torch::manual_seed(7);
    return ModelConfig::desk(size);
}

std::vector<LatentCode> prior(int64_t n, int64_t dim, uint64_t seed)
{
    auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
    return sample_prior(n, dim, rng);
}

}  // namespace

TEST(Embedding, DeterministicDistinctAndShaped)
{
    torch::manual_seed(1);
    Generator g(ModelConfig::full(64));
    auto e = g->embed(torch::tensor({0, 0, 1}, torch::kInt64));
    EXPECT_TRUE(torch::equal(e[0], e[1]));
    EXPECT_GT((e[0] - e[2]).abs().sum().item<double>(), 0.0);
    EXPECT_EQ(g->embedding()->weight.sizes(), (std::vector<int64_t>{5, 64}));
    EXPECT_ANY_THROW(g->embed(torch::tensor({5}, torch::kInt64)));
}

TEST(ObjectEncoder, ShapesUnderDefaults)
{
    torch::manual_seed(2);
    auto cfg = ModelConfig::full(128);
    GeneratorBundle b(cfg);
    b->eval();
    auto crops = torch::rand({3, 3, cfg.crop_size(), cfg.crop_size()}) * 2 - 1;
    auto p = b->encode_objects(crops, torch::tensor({0, 1, 4}, torch::kInt64));
    EXPECT_EQ(p.mu.sizes(), (std::vector<int64_t>{3, 64}));
    EXPECT_EQ(p.logvar.sizes(), (std::vector<int64_t>{3, 64}));
}

TEST(ObjectEncoder, EvalDeterministicAndLabelConditioned)
{
    auto cfg = tiny();
    GeneratorBundle b(cfg);
    // Non-trivial conditioning weights so the label reaches every channel.
    {
        torch::NoGradGuard ng;
        for (auto& p : b->encoder->named_parameters())
            if (p.key().find("gamma") != std::string::npos || p.key().find("beta") != std::string::npos)
                p.value().normal_(0, 0.2);
    }
    b->eval();
    auto crop = (torch::rand({1, 3, cfg.crop_size(), cfg.crop_size()}) * 2 - 1).repeat({2, 1, 1, 1});
    auto labels = torch::tensor({0, 4}, torch::kInt64);  // text vs figure
    auto p1 = b->encode_objects(crop, labels);
    auto p2 = b->encode_objects(crop, labels);
    EXPECT_TRUE(torch::equal(p1.mu, p2.mu));
    EXPECT_GT((p1.mu[0] - p1.mu[1]).abs().max().item<double>(), 0.0);
}

TEST(ObjectEncoder, NonFiniteInputIsHardError)
{
    auto cfg = tiny();
    GeneratorBundle b(cfg);
    b->eval();
    auto crop = torch::full({1, 3, cfg.crop_size(), cfg.crop_size()}, std::nan(""));
    EXPECT_THROW(b->encode_objects(crop, torch::tensor({0}, torch::kInt64)), std::runtime_error);
}

TEST(Reparameterize, CollapsedVarianceReturnsMean)
{
    PosteriorParams p{torch::tensor({1.5, -2.0}), torch::full({2}, -60.0)};
    auto z = reparameterize(p, torch::tensor({3.0, -4.0}));
    EXPECT_TRUE(torch::allclose(z, p.mu, 0, 1e-12));
}

TEST(Reparameterize, UnitCase)
{
    PosteriorParams p{torch::zeros({1}), torch::zeros({1})};
    EXPECT_DOUBLE_EQ(reparameterize(p, torch::ones({1})).item<double>(), 1.0);
}

TEST(Reparameterize, MonteCarloMoments)
{
    auto rng = at::make_generator<at::CPUGeneratorImpl>(99);
    const int64_t n = 100000;
    PosteriorParams p{torch::full({n}, 2.0, torch::kFloat64), torch::full({n}, std::log(9.0), torch::kFloat64)};
    auto z = reparameterize(p, torch::randn({n}, rng, torch::kFloat64));
    EXPECT_NEAR(z.mean().item<double>(), 2.0, 0.1);
    EXPECT_NEAR(z.var().item<double>(), 9.0, 0.45);
}

TEST(Reparameterize, GradientFlowsToParams)
{
    PosteriorParams p{torch::zeros({3}, torch::requires_grad()), torch::zeros({3}, torch::requires_grad())};
    auto eps = torch::tensor({0.5, -1.0, 2.0});
    reparameterize(p, eps).sum().backward();
    EXPECT_TRUE(torch::allclose(p.mu.grad(), torch::ones({3})));
    EXPECT_TRUE(torch::allclose(p.logvar.grad(), 0.5 * eps));
}

TEST(Compose, FullCanvasBroadcastsEverywhere)
{
    auto e = torch::randn({4}), z = torch::randn({3});
    auto m = compose_object_feature_map(e, z, {0, 0, 1, 1}, 8);
    auto v = torch::cat({e, z}).view({7, 1, 1}).expand({7, 8, 8});
    EXPECT_TRUE(torch::equal(m, v));
}

TEST(Compose, QuarterBoxSupport)
{
    auto e = torch::ones({2}), z = torch::ones({2});
    auto m = compose_object_feature_map(e, z, {0, 0, 0.5, 0.5}, 8);
    auto support = (m.abs().sum(0) > 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_EQ(support[y][x].item<bool>(), y < 4 && x < 4);
}

TEST(Compose, TranslationShiftsMap)
{
    auto e = torch::randn({3}), z = torch::randn({2});
    const BBox b{0, 0, 0.5, 0.25};
    auto m = compose_object_feature_map(e, z, b, 8);
    auto moved = compose_object_feature_map(e, z, b.translated(0.25, 0.25), 8);
    auto shifted = torch::roll(m, {2, 2}, {1, 2});
    EXPECT_TRUE(torch::equal(moved, shifted));
}

TEST(Compose, BatchedMatchesSingle)
{
    std::mt19937 rng(4);
    std::vector<Layout> layouts = {test::random_layout(rng, 3, 64), test::random_layout(rng, 1, 64)};
    auto batch = make_layout_batch(layouts, 16);
    auto e = torch::randn({4, 5}), z = torch::randn({4, 2});
    auto maps = compose_object_feature_maps(e, z, batch);
    int64_t i = 0;
    for (const auto& l : layouts)
        for (const auto& o : l.objects) {
            EXPECT_TRUE(torch::equal(maps[i], compose_object_feature_map(e[i], z[i], o.bbox, 16)));
            ++i;
        }
    EXPECT_EQ(batch.owner, (std::vector<int64_t>{0, 0, 0, 1}));
}

TEST(LayoutEncoder, DownsamplesByEight)
{
    torch::manual_seed(3);
    auto cfg = ModelConfig::full(128);
    cfg.embed_dim = 68;  // 132 input channels
    LayoutEncoder c(cfg);
    c->eval();
    auto out = c(torch::randn({3, 132, 128, 128}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 512, 16, 16}));
}

TEST(LayoutEncoder, ZeroInputFiniteAndScaleMatters)
{
    auto cfg = tiny();
    LayoutEncoder c(cfg);
    c->eval();
    auto zero = c(torch::zeros({2, cfg.object_channels(), 64, 64}));
    EXPECT_TRUE(torch::isfinite(zero).all().item<bool>());
    auto x = torch::randn({2, cfg.object_channels(), 64, 64});
    EXPECT_FALSE(torch::allclose(c(x), c(2 * x)));
}

TEST(SpatialReason, ShapesAndOrderSensitivity)
{
    auto cfg = tiny();
    Generator g(cfg);
    g->eval();
    const auto s = cfg.hidden_size();
    auto one = make_layout_batch(make_layout({{0, {0, 0, 1, 1}}}), 64);
    auto h1 = g->spatial_reason(torch::randn({1, cfg.hidden_channels, s, s}), one);
    EXPECT_EQ(h1.sizes(), (std::vector<int64_t>{1, cfg.hidden_channels, s, s}));

    auto zeros = g->spatial_reason(torch::zeros({1, cfg.hidden_channels, s, s}), one);
    EXPECT_TRUE(torch::isfinite(zeros).all().item<bool>());

    auto two = make_layout_batch(make_layout({{0, {0, 0, 1, 0.5}}, {1, {0, 0.5, 1, 1}}}), 64);
    auto enc = torch::randn({2, cfg.hidden_channels, s, s});
    auto a = g->spatial_reason(enc, two);
    auto b = g->spatial_reason(enc.flip(0), two);
    EXPECT_GT((a - b).abs().max().item<double>(), 0.0);
}

TEST(SpatialReason, PaddingDoesNotLeakAcrossImages)
{
    auto cfg = tiny();
    Generator g(cfg);
    g->eval();
    const auto s = cfg.hidden_size();
    Layout big = make_layout({{0, {0, 0, 1, 0.3}}, {1, {0, 0.3, 1, 0.6}}, {2, {0, 0.6, 1, 1}}});
    Layout small = make_layout({{3, {0, 0, 1, 1}}});
    auto enc_big = torch::randn({3, cfg.hidden_channels, s, s});
    auto enc_small = torch::randn({1, cfg.hidden_channels, s, s});
    std::vector<Layout> both = {big, small};
    auto joint = g->spatial_reason(torch::cat({enc_big, enc_small}), make_layout_batch(both, 64));
    auto alone = g->spatial_reason(enc_small, make_layout_batch(small, 64));
    EXPECT_TRUE(torch::allclose(joint[1], alone[0], 1e-5, 1e-6));
}

TEST(SpatialReason, AllBackbonesAndDepths)
{
    for (auto backbone : {ReasoningBackbone::None, ReasoningBackbone::VanillaLstm, ReasoningBackbone::ConvLstm})
        for (int k : {1, 2, 3}) {
            auto cfg = tiny();
            cfg.backbone = backbone;
            cfg.lstm_layers = k;
            Generator g(cfg);
            g->eval();
            auto batch = make_layout_batch(make_layout({{0, {0, 0, 1, 0.5}}, {2, {0, 0.5, 1, 1}}}), 64);
            auto img = g->forward(batch, torch::randn({2, cfg.latent_dim}));
            EXPECT_EQ(img.sizes(), (std::vector<int64_t>{1, 3, 64, 64}));
            EXPECT_TRUE(torch::isfinite(img).all().item<bool>());
        }
}

TEST(Decoder, BoundedDeterministicLipschitz)
{
    auto cfg = tiny();
    ImageDecoder k(cfg);
    k->eval();
    auto h = torch::randn({2, cfg.hidden_channels, cfg.hidden_size(), cfg.hidden_size()}) * 10;
    auto a = k(h);
    EXPECT_EQ(a.sizes(), (std::vector<int64_t>{2, 3, 64, 64}));
    EXPECT_LE(a.abs().max().item<double>(), 1.0);
    EXPECT_TRUE(torch::equal(a, k(h)));

    auto base = torch::randn({1, cfg.hidden_channels, cfg.hidden_size(), cfg.hidden_size()});
    auto dir = torch::randn_like(base);
    auto out0 = k(base);
    const double d1 = (k(base + 1e-3 * dir) - out0).abs().max().item<double>();
    const double d2 = (k(base + 2e-3 * dir) - out0).abs().max().item<double>();
    EXPECT_GT(d1, 0.0);
    EXPECT_LT(d1, 1e-1);
    EXPECT_NEAR(d2 / d1, 2.0, 0.3);
}

TEST(Generate, ContractAtFullResolution)
{
    auto cfg = tiny(128);
    Generator g(cfg);
    g->eval();
    auto layout = make_layout({{0, {0.1, 0.1, 0.9, 0.3}}, {3, {0.1, 0.35, 0.9, 0.7}}, {4, {0.1, 0.75, 0.5, 0.95}}}, 128);
    auto z = prior(3, cfg.latent_dim, 5);
    auto img = generate(g, layout, z);
    EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 128, 128}));
    EXPECT_LE(img.abs().max().item<double>(), 1.0);
    EXPECT_TRUE(torch::equal(img, generate(g, layout, prior(3, cfg.latent_dim, 5))));
    auto other = generate(g, layout, prior(3, cfg.latent_dim, 6));
    EXPECT_GT((img - other).abs().mean().item<double>(), 0.0);
}

TEST(Generate, EveryObjectCount)
{
    auto cfg = tiny();
    Generator g(cfg);
    g->eval();
    std::mt19937 rng(8);
    for (int n = 1; n <= kDefaultMaxObjects; ++n) {
        auto img = generate(g, test::random_layout(rng, n, 64), prior(n, cfg.latent_dim, n));
        EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 64, 64}));
        EXPECT_LE(img.abs().max().item<double>(), 1.0);
    }
}

TEST(Generate, LatentCountMismatch)
{
    auto cfg = tiny();
    Generator g(cfg);
    auto layout = make_layout({{0, {0, 0, 1, 1}}, {1, {0, 0, 0.5, 0.5}}});
    EXPECT_THROW(generate(g, layout, prior(1, cfg.latent_dim, 0)), LatentCountError);
}

TEST(Generate, GradientReachesLatents)
{
    auto cfg = tiny();
    Generator g(cfg);
    g->eval();
    auto batch = make_layout_batch(make_layout({{0, {0, 0, 1, 0.5}}, {1, {0, 0.5, 1, 1}}}), 64);
    auto z = torch::randn({2, cfg.latent_dim}, torch::requires_grad());
    g->forward(batch, z).sum().backward();
    EXPECT_GT(z.grad().abs().sum().item<double>(), 0.0);
}

TEST(GeneratorBundle, SeparateObjectEncoders)
{
    auto cfg = tiny();
    GeneratorBundle b(cfg);
    auto e = b->encoder->parameters();
    auto e2 = b->encoder_gen->parameters();
    ASSERT_EQ(e.size(), e2.size());
    for (size_t i = 0; i < e.size(); ++i) EXPECT_NE(e[i].data_ptr(), e2[i].data_ptr());
    // One shared label embedding.
    size_t embeddings = 0;
    for (const auto& p : b->named_parameters())
        if (p.key().find("embedding") != std::string::npos) ++embeddings;
    EXPECT_EQ(embeddings, 1u);
}
