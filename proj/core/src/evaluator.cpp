#include "docsynth/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <Eigen/Eigenvalues>
#include <torch/script.h>

#include "docsynth/checkpoint.hpp"
#include "docsynth/data.hpp"
#include "docsynth/sampler.hpp"

namespace F = torch::nn::functional;
using json = nlohmann::json;

namespace docsynth {

// ---------------------------------------------------------------------------
// Extractors

RandomConvExtractor::RandomConvExtractor(uint64_t seed, std::vector<int64_t> widths) : seed_(seed)
{
    auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
    int64_t in = 3;
    for (int64_t out : widths) {
        const double scale = std::sqrt(2.0 / static_cast<double>(in * 16));
        weights_.push_back(torch::randn({out, in, 4, 4}, rng) * scale);
        biases_.push_back(torch::randn({out}, rng) * 0.1);
        in = out;
    }
}

std::string RandomConvExtractor::id() const
{
    return "random:" + std::to_string(seed_);
}

std::vector<torch::Tensor> RandomConvExtractor::layers(const torch::Tensor& images)
{
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    auto x = images.to(torch::kFloat32);
    for (size_t i = 0; i < weights_.size(); ++i) {
        x = torch::relu(F::conv2d(x, weights_[i], F::Conv2dFuncOptions().bias(biases_[i]).stride(2).padding(1)));
        out.push_back(x);
    }
    return out;
}

torch::Tensor RandomConvExtractor::pooled(const torch::Tensor& images)
{
    std::vector<torch::Tensor> means;
    for (const auto& l : layers(images)) means.push_back(l.mean({2, 3}));
    return torch::cat(means, 1);
}

struct TorchScriptExtractor::Impl {
    torch::jit::Module module;
};

TorchScriptExtractor::TorchScriptExtractor(const std::string& asset, const std::filesystem::path& asset_dir,
                                           int input_size)
    : impl_(std::make_unique<Impl>()), asset_(asset), input_size_(input_size)
{
    const auto path = asset_dir / (asset + ".pt");
    if (!std::filesystem::exists(path)) throw MissingAssetError(asset, path);
    try {
        impl_->module = torch::jit::load(path.string());
    } catch (const c10::Error& e) {
        throw EvalError("cannot load feature extractor asset '" + asset + "': " + e.what_without_backtrace());
    }
    impl_->module.eval();
}

TorchScriptExtractor::~TorchScriptExtractor() = default;

torch::Tensor TorchScriptExtractor::pooled(const torch::Tensor& images)
{
    torch::NoGradGuard no_grad;
    auto x = images.to(torch::kFloat32);
    if (x.size(2) != input_size_ || x.size(3) != input_size_) x = resize_bilinear(x, input_size_, input_size_);
    return impl_->module.forward({x}).toTensor().flatten(1);
}

std::vector<torch::Tensor> TorchScriptExtractor::layers(const torch::Tensor& images)
{
    auto f = pooled(images);
    return {f.unsqueeze(-1).unsqueeze(-1)};
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id, const std::filesystem::path& asset_dir)
{
    if (id == "random") return std::make_unique<RandomConvExtractor>(0);
    if (id.rfind("random:", 0) == 0) return std::make_unique<RandomConvExtractor>(std::stoull(id.substr(7)));
    return std::make_unique<TorchScriptExtractor>(id, asset_dir);
}

// ---------------------------------------------------------------------------
// Features and FID

FeatureSet make_feature_set(Eigen::MatrixXd features, std::string extractor)
{
    FeatureSet fs;
    fs.shrinkage = features.rows() <= features.cols();
    fs.features = std::move(features);
    fs.extractor = std::move(extractor);
    return fs;
}

FeatureSet extract_features(const torch::Tensor& images, FeatureExtractor& extractor, int64_t batch_size)
{
    TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "expected images shaped [N, 3, H, W]");
    if (images.numel() > 0 && (images.min().item<double>() < -1.0 - 1e-6 || images.max().item<double>() > 1.0 + 1e-6))
        throw EvalError("images must lie in [-1, 1]");
    std::vector<torch::Tensor> chunks;
    for (int64_t i = 0; i < images.size(0); i += batch_size)
        chunks.push_back(extractor.pooled(images.slice(0, i, std::min(i + batch_size, images.size(0)))));
    auto f = torch::cat(chunks).to(torch::kFloat64).contiguous();
    // Tensor memory is row-major.
    Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        f.data_ptr<double>(), f.size(0), f.size(1));
    return make_feature_set(std::move(m), extractor.id());
}

namespace {

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Gaussian fit(const FeatureSet& fs)
{
    const auto& x = fs.features;
    Gaussian g;
    g.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
    const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
    g.cov = (centered.transpose() * centered) / denom;
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    if (fs.shrinkage) g.cov += kCovarianceShrinkage * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    return g;
}

double condition_number(const Eigen::MatrixXd& m)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const auto ev = es.eigenvalues().cwiseAbs();
    return ev.maxCoeff() / std::max(ev.minCoeff(), 1e-300);
}

[[noreturn]] void fail(const std::string& what, const Gaussian& a, const Gaussian& b)
{
    std::ostringstream os;
    os << "matrix square root failed (" << what << "); condition numbers: real " << condition_number(a.cov)
       << ", fake " << condition_number(b.cov);
    throw FidError(os.str());
}

}  // namespace

double fid(const FeatureSet& real, const FeatureSet& fake)
{
    if (real.dim() != fake.dim())
        throw EvalError("feature dimensions differ: " + std::to_string(real.dim()) + " vs " + std::to_string(fake.dim()));
    if (real.count() == 0 || fake.count() == 0) throw EvalError("fid needs non-empty feature sets");
    const auto a = fit(real);
    const auto b = fit(fake);

    // sqrt(S1) by eigendecomposition, then Tr (S1 S2)^(1/2) = Tr (sqrt(S1) S2 sqrt(S1))^(1/2),
    // whose argument is symmetric positive semi-definite.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(a.cov);
    if (es1.info() != Eigen::Success) fail("eigendecomposition of the real covariance", a, b);
    const Eigen::VectorXd root = es1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd sqrt1 = es1.eigenvectors() * root.asDiagonal() * es1.eigenvectors().transpose();
    Eigen::MatrixXd m = sqrt1 * b.cov * sqrt1;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(m, Eigen::EigenvaluesOnly);
    if (es2.info() != Eigen::Success) fail("eigendecomposition of the covariance product", a, b);
    const auto& ev = es2.eigenvalues();
    const double tol = 1e-6 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -tol) fail("covariance product has eigenvalue " + std::to_string(ev.minCoeff()), a, b);

    const double trace_sqrt = ev.cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    if (value < 0.0) {
        if (value > -1e-6) return 0.0;
        fail("negative distance " + std::to_string(value), a, b);
    }
    return value;
}

// ---------------------------------------------------------------------------
// Diversity

double perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor)
{
    TORCH_CHECK(a.sizes() == b.sizes(), "pair images must have the same shape");
    const auto fa = extractor.layers(a.unsqueeze(0));
    const auto fb = extractor.layers(b.unsqueeze(0));
    double total = 0.0;
    for (size_t l = 0; l < fa.size(); ++l) {
        auto na = fa[l] / (fa[l].pow(2).sum(1, true).sqrt() + 1e-10);
        auto nb = fb[l] / (fb[l].pow(2).sum(1, true).sqrt() + 1e-10);
        total += (na - nb).pow(2).sum(1).mean().item<double>();
    }
    return total;
}

DiversityStats diversity_score(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& pairs,
                               FeatureExtractor& extractor)
{
    if (pairs.empty()) throw EvalError("diversity needs at least one image pair");
    std::vector<double> d;
    for (const auto& [a, b] : pairs) d.push_back(perceptual_distance(a, b, extractor));
    DiversityStats s;
    s.pairs = static_cast<int64_t>(d.size());
    s.mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(d.size()));
    return s;
}

// ---------------------------------------------------------------------------

json MetricReport::to_json() const
{
    json div = nullptr;
    if (diversity.pairs > 0)
        div = {{"mean", diversity.mean}, {"std", diversity.stddev}, {"pairs", diversity.pairs}};
    return {{"fid", fid},
            {"fid_real_vs_real", fid_real_vs_real},
            {"diversity", div},
            {"counts",
             {{"n_layouts", n_layouts}, {"samples_per_layout", samples_per_layout}, {"generated", generated}, {"real", real}}},
            {"shrinkage", shrinkage},
            {"extractor", extractor},
            {"checkpoint", checkpoint},
            {"iteration", iteration},
            {"seed", seed}};
}

MetricReport eval_run(const EvalOptions& options)
{
    if (options.n_layouts < 1) throw EvalError("n_layouts must be positive");
    if (options.samples_per_layout < 1) throw EvalError("samples_per_layout must be positive");
    auto snapshot = load_model_snapshot(options.checkpoint);
    const auto& cfg = snapshot.config;
    const auto data_dir = options.data_dir.empty() ? std::filesystem::path(cfg.data_dir) : options.data_dir;
    if (data_dir.empty()) throw EvalError("no dataset given and the checkpoint does not record one");

    IngestFilters filters;
    filters.max_objects = cfg.max_objects;
    filters.canvas_size = cfg.model.image_size;
    auto index = open_dataset_dir(data_dir, snapshot.vocab, filters);
    if (index.size() < options.n_layouts)
        throw EvalError("dataset has " + std::to_string(index.size()) + " pages, fewer than the " +
                        std::to_string(options.n_layouts) + " requested layouts");
    index.records.resize(static_cast<size_t>(options.n_layouts));
    const auto real_samples = load_samples(index, cfg.model.image_size);
    if (real_samples.size() < 2) throw EvalError("need at least two readable real pages");

    auto extractor = make_extractor(options.extractor, options.asset_dir);

    std::vector<torch::Tensor> real_images;
    for (const auto& s : real_samples) real_images.push_back(s.image);
    const auto real = torch::stack(real_images);

    auto generator = snapshot.model->generator;
    std::vector<torch::Tensor> fakes;
    std::vector<std::pair<torch::Tensor, torch::Tensor>> pairs;
    for (size_t li = 0; li < real_samples.size(); ++li) {
        const auto layout_seed = sample_seed(options.seed, static_cast<int64_t>(li));
        const size_t first = fakes.size();
        for (int64_t j = 0; j < options.samples_per_layout; ++j)
            fakes.push_back(render_layout(generator, real_samples[li].layout, sample_seed(layout_seed, j)));
        for (size_t p = first; p < fakes.size(); ++p)
            for (size_t q = p + 1; q < fakes.size(); ++q) pairs.emplace_back(fakes[p], fakes[q]);
    }
    const auto fake = torch::stack(fakes);

    const auto real_features = extract_features(real, *extractor);
    const auto fake_features = extract_features(fake, *extractor);

    std::vector<Eigen::Index> perm(static_cast<size_t>(real_features.count()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(options.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto half = static_cast<Eigen::Index>(perm.size() / 2);
    Eigen::MatrixXd first(half, real_features.dim()), second(static_cast<Eigen::Index>(perm.size()) - half, real_features.dim());
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(perm.size()); ++i) {
        if (i < half)
            first.row(i) = real_features.features.row(perm[static_cast<size_t>(i)]);
        else
            second.row(i - half) = real_features.features.row(perm[static_cast<size_t>(i)]);
    }
    const auto split_a = make_feature_set(std::move(first), real_features.extractor);
    const auto split_b = make_feature_set(std::move(second), real_features.extractor);

    MetricReport report;
    report.fid = fid(real_features, fake_features);
    report.fid_real_vs_real = fid(split_a, split_b);
    if (!pairs.empty()) report.diversity = diversity_score(pairs, *extractor);
    report.n_layouts = static_cast<int64_t>(real_samples.size());
    report.samples_per_layout = options.samples_per_layout;
    report.generated = static_cast<int64_t>(fakes.size());
    report.real = static_cast<int64_t>(real_samples.size());
    report.shrinkage = real_features.shrinkage || fake_features.shrinkage || split_a.shrinkage || split_b.shrinkage;
    report.extractor = extractor->id();
    report.checkpoint = checkpoint_id(options.checkpoint);
    report.iteration = snapshot.iteration;
    report.seed = options.seed;

    if (!options.report_path.empty()) {
        if (options.report_path.has_parent_path()) std::filesystem::create_directories(options.report_path.parent_path());
        std::ofstream out(options.report_path);
        if (!out) throw EvalError("cannot write report " + options.report_path.string());
        out << report.to_json().dump(2) << '\n';
    }
    return report;
}

}  // namespace docsynth
