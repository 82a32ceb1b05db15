#include <random>

#include <benchmark/benchmark.h>

#include "docsynth/evaluator.hpp"
#include "docsynth/generator.hpp"
#include "docsynth/layout.hpp"

using namespace docsynth;

namespace {

Layout random_layout(std::mt19937& rng, int n, int canvas)
{
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int64_t> label(0, 4);
    Layout l;
    l.canvas_size = canvas;
    for (int i = 0; i < n; ++i) {
        const double x0 = u(rng) * 0.8, y0 = u(rng) * 0.8;
        l.objects.push_back({label(rng), {x0, y0, x0 + 0.05 + u(rng) * (0.95 - x0), y0 + 0.05 + u(rng) * (0.95 - y0)}});
    }
    return l;
}

void BM_ToPixels(benchmark::State& state)
{
    std::mt19937 rng(1);
    auto l = random_layout(rng, 64, 128);
    for (auto _ : state)
        for (const auto& o : l.objects) benchmark::DoNotOptimize(to_pixels(o.bbox, 128));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ToPixels);

void BM_ComposeFeatureMaps(benchmark::State& state)
{
    torch::set_num_threads(1);
    std::mt19937 rng(2);
    const int s = static_cast<int>(state.range(0));
    auto batch = make_layout_batch(random_layout(rng, 8, s), s);
    auto e = torch::randn({8, 64}), z = torch::randn({8, 64});
    for (auto _ : state) benchmark::DoNotOptimize(compose_object_feature_maps(e, z, batch));
}
BENCHMARK(BM_ComposeFeatureMaps)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_GeneratorForward(benchmark::State& state)
{
    torch::set_num_threads(1);
    torch::NoGradGuard ng;
    torch::manual_seed(0);
    auto cfg = ModelConfig::desk(64);
    Generator g(cfg);
    g->eval();
    std::mt19937 rng(3);
    const int n = static_cast<int>(state.range(0));
    auto batch = make_layout_batch(random_layout(rng, n, 64), 64);
    auto z = torch::randn({n, cfg.latent_dim});
    for (auto _ : state) benchmark::DoNotOptimize(g->forward(batch, z));
}
BENCHMARK(BM_GeneratorForward)->Arg(1)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Fid(benchmark::State& state)
{
    const auto d = state.range(0);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    auto sample = [&] {
        Eigen::MatrixXd m(2000, d);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
        return make_feature_set(m);
    };
    auto a = sample(), b = sample();
    for (auto _ : state) benchmark::DoNotOptimize(fid(a, b));
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(112)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
