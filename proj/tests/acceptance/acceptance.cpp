// Runs each acceptance criterion and prints one PASS/FAIL line per criterion.
// Optional arguments select criteria by name.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <ATen/CPUGeneratorImpl.h>

#include "docsynth/data.hpp"
#include "docsynth/evaluator.hpp"
#include "docsynth/generator.hpp"
#include "docsynth/losses.hpp"
#include "docsynth/spectral_norm.hpp"
#include "docsynth/trainer.hpp"

namespace fs = std::filesystem;
using namespace docsynth;

namespace {

const fs::path kFixtures = DOCSYNTH_FIXTURES;
const CategoryVocab vocab = CategoryVocab::publaynet();

struct Check {
    bool ok = true;
    std::ostringstream detail;

    void expect(bool cond, const std::string& what)
    {
        if (!cond) {
            ok = false;
            detail << " [failed: " << what << "]";
        }
    }
};

fs::path scratch(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("docsynth_acceptance_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<Sample> fixture(const std::string& name, int size = 64)
{
    IngestFilters f;
    f.canvas_size = size;
    return load_samples(open_dataset_dir(kFixtures / name, vocab, f), size);
}

TrainConfig desk(int batch, int64_t iterations)
{
    TrainConfig c;
    c.preset = "desk";
    c.model = ModelConfig::desk(64);
    c.batch_size = batch;
    c.iterations = iterations;
    c.checkpoint_every = iterations;
    return c;
}

torch::Tensor d64(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

// ---------------------------------------------------------------------------

Check loss_arithmetic()
{
    Check c;
    const double ln2 = std::log(2.0);
    const double logit_half = std::log(0.5 / 0.5);
    const double disc = losses::gan_disc(d64({logit_half}), d64({logit_half})).item<double>();
    const double gen = losses::gan_gen(d64({logit_half})).item<double>();
    const double kl = losses::kl(d64({1.0}), d64({0.0})).item<double>();
    const double ce = losses::aux_class(torch::zeros({1, 5}, torch::kFloat64), torch::tensor({2})).item<double>();
    const double total = total_generator_loss({1, 1, 1, 1, 1, 1}, LossWeights{}).total;

    // KL(N(0, 4) || N(0, 1)) by midpoint quadrature on log densities.
    auto log_normal = [](double x, double s) { return -0.5 * x * x / (s * s) - std::log(s * std::sqrt(2 * M_PI)); };
    double quad = 0;
    const int steps = 300000;
    const double lo = -30, dx = 60.0 / steps;
    for (int i = 0; i < steps; ++i) {
        const double x = lo + (i + 0.5) * dx;
        const double lq = log_normal(x, 2.0);
        quad += std::exp(lq) * (lq - log_normal(x, 1.0)) * dx;
    }
    const double kl_wide = losses::kl(d64({0.0}), d64({std::log(4.0)})).item<double>();

    c.expect(std::abs(disc - 2 * ln2) <= 1e-6, "disc(0.5, 0.5) = 2 ln 2");
    c.expect(std::abs(gen - ln2) <= 1e-6, "gen(0.5) = ln 2");
    c.expect(std::abs(kl - 0.5) <= 1e-6, "KL(mu=1, sigma=1) = 0.5");
    c.expect(std::abs(kl_wide - quad) <= 1e-4, "KL quadrature");
    c.expect(std::abs(ce - std::log(5.0)) <= 1e-6, "uniform CE = ln 5");
    c.expect(total == 12.01, "unit-term total = 12.01 exactly");
    c.detail << std::setprecision(10) << "disc=" << disc << " gen=" << gen << " kl=" << kl << " kl(sigma=2)=" << kl_wide
             << " quad=" << quad << " ce=" << ce << " total=" << std::setprecision(17) << total;
    return c;
}

// Worst |analytic - fd| / (|fd| + 1e-8) over the entries of x.
template <typename F>
double gradient_error(F fn, torch::Tensor x, double h = 1e-6)
{
    x = x.detach().to(torch::kFloat64).requires_grad_(true);
    fn(x).backward();
    const auto g = x.grad().detach().reshape(-1).clone();
    const auto flat = x.detach().reshape(-1);
    double worst = 0;
    for (int64_t i = 0; i < flat.numel(); ++i) {
        auto xp = flat.clone(), xm = flat.clone();
        xp[i] += h;
        xm[i] -= h;
        torch::NoGradGuard ng;
        const double fd = (fn(xp.view(x.sizes())).template item<double>() - fn(xm.view(x.sizes())).template item<double>()) / (2 * h);
        const double an = g[i].item<double>();
        worst = std::max(worst, std::abs(an - fd) / (std::abs(fd) + 1e-8));
    }
    return worst;
}

Check gradient_suite()
{
    Check c;
    torch::manual_seed(11);
    const double rtol = 1e-2;
    auto other = torch::randn({8}, torch::kFloat64);
    auto mu = torch::randn({2, 8}, torch::kFloat64), lv = torch::randn({2, 8}, torch::kFloat64) * 0.5;
    auto labels = torch::tensor({1, 3});
    std::vector<std::pair<std::string, double>> errors = {
        {"gan_disc/real", gradient_error([&](const torch::Tensor& x) { return losses::gan_disc(x, other); }, torch::randn({8}))},
        {"gan_disc/fake", gradient_error([&](const torch::Tensor& x) { return losses::gan_disc(other, x); }, torch::randn({8}))},
        {"gan_gen", gradient_error([](const torch::Tensor& x) { return losses::gan_gen(x); }, torch::randn({8}))},
        {"hinge_disc", gradient_error([&](const torch::Tensor& x) { return losses::hinge_disc(x, other * 3); }, torch::randn({8}) * 0.3 + 3)},
        {"hinge_gen", gradient_error([](const torch::Tensor& x) { return losses::hinge_gen(x); }, torch::randn({8}))},
        {"kl/mu", gradient_error([&](const torch::Tensor& x) { return losses::kl(x, lv); }, torch::randn({2, 8}))},
        {"kl/logvar", gradient_error([&](const torch::Tensor& x) { return losses::kl(mu, x); }, torch::randn({2, 8}))},
        {"l1", gradient_error([&](const torch::Tensor& x) { return losses::l1(x, other); }, torch::randn({8}))},
        {"aux_class", gradient_error([&](const torch::Tensor& x) { return losses::aux_class(x, labels); }, torch::randn({2, 5}))},
    };

    // z -> image through the whole generator, float64, eval mode, projected on a fixed direction.
    // The projection sums ~12k pixels, so a larger step keeps cancellation below the smallest components.
    auto cfg = ModelConfig::desk(64);
    Generator g(cfg);
    g->to(torch::kFloat64);
    g->eval();
    Layout layout;
    layout.canvas_size = 64;
    layout.objects = {{1, {0.1, 0.05, 0.9, 0.2}}, {4, {0.2, 0.3, 0.8, 0.9}}};
    auto batch = make_layout_batch(layout, 64);
    auto w = torch::randn({1, 3, 64, 64}, torch::kFloat64);
    errors.emplace_back("z->image", gradient_error([&](const torch::Tensor& z) { return (g->forward(batch, z) * w).sum(); },
                                                   torch::randn({2, cfg.latent_dim}), 1e-4));

    for (const auto& [name, err] : errors) {
        c.expect(err <= rtol, name);
        c.detail << name << "=" << std::scientific << std::setprecision(1) << err << " ";
    }
    return c;
}

Check composition_suite()
{
    Check c;
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> count(1, kDefaultMaxObjects);
    std::uniform_int_distribution<int64_t> label(0, 4);
    const int s = 64;
    int64_t objects = 0, translated = 0, bad_support = 0, bad_shift = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Layout l;
        l.canvas_size = s;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            double x0 = u(rng) * 0.8, y0 = u(rng) * 0.8;
            l.objects.push_back({label(rng), {x0, y0, x0 + 0.01 + u(rng) * (1 - x0 - 0.01), y0 + 0.01 + u(rng) * (1 - y0 - 0.01)}});
        }
        auto batch = make_layout_batch(l, s);
        auto e = torch::randn({n, 3}), z = torch::randn({n, 2});
        auto maps = compose_object_feature_maps(e, z, batch);
        for (int i = 0; i < n; ++i, ++objects) {
            const auto r = batch.rects[i];
            auto inside = torch::zeros({s, s}, torch::kBool);
            inside.index_put_({torch::indexing::Slice(r.y0, r.y1), torch::indexing::Slice(r.x0, r.x1)}, true);
            auto outside_energy = maps[i].abs().sum(0).masked_select(inside.logical_not()).sum().item<double>();
            auto vec = torch::cat({e[i], z[i]}).view({-1, 1});
            auto inside_ok = torch::equal(maps[i].reshape({5, -1}).index({torch::indexing::Slice(), inside.reshape(-1)}),
                                          vec.expand({5, inside.sum().item<int64_t>()}));
            if (outside_energy != 0.0 || !inside_ok) ++bad_support;

            // Integer-pixel translation that keeps the box on the canvas.
            const auto& b = l.objects[i].bbox;
            const int max_dx = static_cast<int>(std::floor((1 - b.x1) * s)), max_dy = static_cast<int>(std::floor((1 - b.y1) * s));
            if (max_dx < 1 && max_dy < 1) continue;
            const int dx = std::uniform_int_distribution<int>(0, std::max(0, max_dx))(rng);
            const int dy = std::uniform_int_distribution<int>(0, std::max(0, max_dy))(rng);
            auto moved = compose_object_feature_map(e[i], z[i], b.translated(double(dx) / s, double(dy) / s), s);
            ++translated;
            if (!torch::equal(moved, torch::roll(maps[i], {dy, dx}, {1, 2}))) ++bad_shift;
        }
    }
    c.expect(bad_support == 0, "zero outside bbox");
    c.expect(bad_shift == 0, "translation equivariance");
    c.detail << "layouts=1000 objects=" << objects << " support_failures=" << bad_support << " translated=" << translated
             << " shift_failures=" << bad_shift;
    return c;
}

Eigen::MatrixXd gaussian(int64_t n, int64_t d, uint64_t seed, double shift0 = 0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) m(i, j) = nd(rng) + (j == 0 ? shift0 : 0.0);
    return m;
}

Check fid_oracle()
{
    Check c;
    auto a = make_feature_set(gaussian(10000, 4, 1));
    auto b = make_feature_set(gaussian(10000, 4, 2, 1.0));
    const double self = fid(a, a);
    const double shifted = fid(a, b);
    const double asym = std::abs(fid(a, b) - fid(b, a));
    c.expect(std::abs(self) <= 1e-6, "fid(A, A) = 0");
    c.expect(std::abs(shifted - 1.0) <= 0.1, "shifted Gaussian = 1");
    c.expect(asym <= 1e-6, "symmetry");
    c.detail << std::setprecision(6) << "fid(A,A)=" << self << " fid(N(0,I),N(e1,I))=" << shifted << " |asym|=" << asym;
    return c;
}

constexpr int64_t kOverfitIterations = 1000;

Check overfit_run()
{
    Check c;
    auto data = fixture("pages16");
    auto cfg = desk(16, kOverfitIterations);
    cfg.lambdas = LossWeights::from_array({0, 0, 0, 1, 1, 1});
    TrainLoopOptions opts;
    opts.out_dir = scratch("overfit");
    auto result = train_loop(cfg, vocab, data, opts);
    std::vector<double> l1;
    for (const auto& b : result.losses) l1.push_back(b.l1_img);

    double tail = 0;
    for (size_t i = l1.size() - 50; i < l1.size(); ++i) tail += l1[i] / 50;
    std::vector<double> windows;
    for (size_t w = 0; w + 200 <= l1.size(); w += 200) {
        double m = 0;
        for (size_t i = w; i < w + 200; ++i) m += l1[i] / 200;
        windows.push_back(m);
    }
    bool monotone = true;
    for (size_t i = 1; i < windows.size(); ++i) monotone = monotone && windows[i] < windows[i - 1];
    size_t first_below = 0;
    for (size_t i = 0; i < l1.size(); ++i)
        if (l1[i] < 0.15) {
            first_below = i + 1;
            break;
        }
    c.expect(static_cast<int64_t>(l1.size()) == kOverfitIterations, "iteration count");
    c.expect(tail < 0.15, "mean l1_img over the last 50 iterations < 0.15");
    c.expect(monotone, "200-step window means decrease");
    c.detail << std::setprecision(4) << "iters=" << l1.size() << " first<0.15 at " << first_below << " last50_mean=" << tail
             << " final=" << l1.back() << " windows=";
    for (double w : windows) c.detail << w << " ";
    return c;
}

Check ablation_matrix(fs::path& spectral_source)
{
    Check c;
    auto data = fixture("pages16");
    struct Row {
        std::string name;
        ReasoningBackbone backbone;
        int k;
    };
    const std::vector<Row> rows = {{"none", ReasoningBackbone::None, 1},
                                   {"vanilla", ReasoningBackbone::VanillaLstm, 1},
                                   {"convlstm_k1", ReasoningBackbone::ConvLstm, 1},
                                   {"convlstm_k2", ReasoningBackbone::ConvLstm, 2},
                                   {"convlstm_k3", ReasoningBackbone::ConvLstm, 3}};
    const auto root = scratch("ablation");
    for (const auto& row : rows) {
        auto cfg = desk(8, 100);
        cfg.seed = 7;
        cfg.model.backbone = row.backbone;
        cfg.model.lstm_layers = row.k;
        TrainLoopOptions opts;
        opts.out_dir = root / row.name;
        bool finite = true;
        size_t rows_written = 0;
        try {
            auto r = train_loop(cfg, vocab, data, opts);
            rows_written = r.losses.size();
            for (const auto& b : r.losses) finite = finite && b.finite();
        } catch (const std::exception& e) {
            finite = false;
            c.detail << row.name << " threw: " << e.what() << " ";
        }
        std::ifstream m(opts.out_dir / "manifest.json");
        bool manifest_ok = false;
        if (m) {
            auto j = nlohmann::json::parse(m, nullptr, false);
            manifest_ok = !j.is_discarded() && train_config_from_json(j.at("config")) == cfg;
        }
        c.expect(rows_written == 100 && finite, row.name + " 100 finite iterations");
        c.expect(manifest_ok, row.name + " manifest");
        c.detail << row.name << ":" << rows_written << (finite ? " finite" : " NON-FINITE") << (manifest_ok ? " manifest" : "")
                 << "; ";
    }
    spectral_source = root / "convlstm_k3" / "latest.ckpt";
    return c;
}

Check determinism_resume()
{
    Check c;
    auto data = fixture("pages16");
    auto cfg = desk(4, 51);
    cfg.seed = 99;
    cfg.checkpoint_every = 50;
    const auto root = scratch("resume");

    TrainLoopOptions straight;
    straight.out_dir = root / "straight";
    auto full = train_loop(cfg, vocab, data, straight);

    TrainLoopOptions first;
    first.out_dir = root / "rerun";
    first.stop_after = 50;
    auto rerun = train_loop(cfg, vocab, data, first);

    bool same_stream = rerun.losses.size() == 50;
    for (size_t i = 0; same_stream && i < 50; ++i) same_stream = rerun.losses[i] == full.losses[i];

    TrainLoopOptions second;
    second.out_dir = root / "rerun";
    second.resume_from = root / "rerun" / "checkpoint_000050.ckpt";
    auto resumed = train_loop(cfg, vocab, data, second);
    const bool same_next = resumed.losses.size() == 1 && resumed.losses[0] == full.losses[50];

    c.expect(same_stream, "50-step seeded rerun identical");
    c.expect(same_next, "resume at 50 reproduces step 51");
    c.detail << std::setprecision(17) << "step51 total uninterrupted=" << full.losses[50].total
             << " resumed=" << (resumed.losses.empty() ? NAN : resumed.losses[0].total);
    return c;
}

double power_sigma(const torch::Tensor& m)
{
    auto w = m.detach().to(torch::kFloat64);
    auto v = torch::ones({w.size(1)}, torch::kFloat64) / std::sqrt(static_cast<double>(w.size(1)));
    for (int i = 0; i < 1000; ++i) {
        v = torch::mv(w.t(), torch::mv(w, v));
        v = v / v.norm();
    }
    return torch::mv(w, v).norm().item<double>();
}

Check spectral_invariant(const fs::path& checkpoint)
{
    Check c;
    auto ckpt = read_checkpoint(checkpoint);
    auto cfg = train_config_from_json(ckpt.meta.at("config"));
    Trainer t(cfg, vocab);
    t.restore(ckpt);
    c.expect(t.iteration() == 100, "checkpoint after 100 updates");
    int layers = 0;
    double lo = 1e9, hi = -1e9;
    for (auto* module : {static_cast<torch::nn::Module*>(t.discriminators()->image.get()),
                         static_cast<torch::nn::Module*>(t.discriminators()->object.get())}) {
        for (auto& layer : spectral_layers(*module)) {
            const double s = power_sigma(layer->weight_matrix() / layer->sigma_estimate());
            lo = std::min(lo, s);
            hi = std::max(hi, s);
            ++layers;
        }
    }
    c.expect(layers > 0, "normalized layers found");
    c.expect(lo >= 0.95 && hi <= 1.05, "sigma_max in [0.95, 1.05]");
    c.detail << "iteration=" << t.iteration() << " layers=" << layers << std::setprecision(5) << " sigma range [" << lo
             << ", " << hi << "]";
    return c;
}

}  // namespace

int main(int argc, char** argv)
{
    torch::set_num_threads(1);
    std::vector<std::string> only(argv + 1, argv + argc);
    fs::path spectral_source;
    std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
        {"loss_arithmetic", loss_arithmetic},
        {"gradient_suite", gradient_suite},
        {"composition_suite", composition_suite},
        {"fid_oracle", fid_oracle},
        {"overfit_run", overfit_run},
        {"ablation_matrix", [&] { return ablation_matrix(spectral_source); }},
        {"determinism_resume", determinism_resume},
        {"spectral_norm_invariant",
         [&] {
             if (spectral_source.empty()) {
                 fs::path src;
                 auto r = ablation_matrix(src);
                 if (!r.ok) return r;
                 spectral_source = src;
             }
             return spectral_invariant(spectral_source);
         }},
    };
    int failures = 0;
    for (auto& [name, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Check result;
        try {
            result = fn();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail << "exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !result.ok;
        std::cout << (result.ok ? "PASS " : "FAIL ") << name << " (" << std::fixed << std::setprecision(1) << secs
                  << " s) " << std::defaultfloat << result.detail.str() << std::endl;
    }
    fs::remove_all(fs::temp_directory_path() / ("docsynth_acceptance_" + std::to_string(::getpid())));
    return failures == 0 ? 0 : 1;
}
