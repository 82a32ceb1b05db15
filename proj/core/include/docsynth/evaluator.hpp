#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace docsynth {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A weights asset could not be found; `asset()` names it.
class MissingAssetError : public EvalError {
public:
    MissingAssetError(std::string asset, const std::filesystem::path& where)
        : EvalError("feature extractor asset '" + asset + "' not found (looked for " + where.string() + ")"),
          asset_(std::move(asset))
    {
    }
    const std::string& asset() const { return asset_; }

private:
    std::string asset_;
};

/// The matrix square root in the Frechet distance did not converge.
class FidError : public EvalError {
public:
    using EvalError::EvalError;
};

/// A frozen network mapping images in [-1, 1] to features.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    /// [N, 3, H, W] -> [N, d]
    virtual torch::Tensor pooled(const torch::Tensor& images) = 0;
    /// Spatial activations of several layers, each [N, C_l, H_l, W_l].
    virtual std::vector<torch::Tensor> layers(const torch::Tensor& images) = 0;
};

/// Small conv stack with seeded random weights. Stands in for pretrained
/// networks where no weights are available.
class RandomConvExtractor : public FeatureExtractor {
public:
    explicit RandomConvExtractor(uint64_t seed = 0, std::vector<int64_t> widths = {16, 32, 64});
    std::string id() const override;
    torch::Tensor pooled(const torch::Tensor& images) override;
    std::vector<torch::Tensor> layers(const torch::Tensor& images) override;

private:
    uint64_t seed_;
    std::vector<torch::Tensor> weights_;
    std::vector<torch::Tensor> biases_;
};

/// TorchScript module loaded from <asset_dir>/<asset>.pt. forward(x) must
/// return [N, d] (or [N, d, 1, 1]); images are resized to `input_size` first.
class TorchScriptExtractor : public FeatureExtractor {
public:
    TorchScriptExtractor(const std::string& asset, const std::filesystem::path& asset_dir, int input_size = 299);
    ~TorchScriptExtractor() override;
    std::string id() const override { return asset_; }
    torch::Tensor pooled(const torch::Tensor& images) override;
    std::vector<torch::Tensor> layers(const torch::Tensor& images) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string asset_;
    int input_size_;
};

/// Conventional FID network: Inception-v3 pool features.
inline constexpr const char* kDefaultExtractorAsset = "inception_v3_pool3";

/// "random" or "random:<seed>" gives a RandomConvExtractor; anything else is
/// an asset id resolved in `asset_dir`.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& id, const std::filesystem::path& asset_dir);

struct FeatureSet {
    Eigen::MatrixXd features;  // N x d
    std::string extractor;
    /// N <= d: covariance is rank deficient and gets shrinkage.
    bool shrinkage = false;

    int64_t count() const { return features.rows(); }
    int64_t dim() const { return features.cols(); }
};

FeatureSet make_feature_set(Eigen::MatrixXd features, std::string extractor = "");

/// images [N, 3, H, W] in [-1, 1].
FeatureSet extract_features(const torch::Tensor& images, FeatureExtractor& extractor, int64_t batch_size = 32);

inline constexpr double kCovarianceShrinkage = 1e-6;

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).
double fid(const FeatureSet& real, const FeatureSet& fake);

/// Channel-normalized feature distance summed over layers, one image pair.
double perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor);

struct DiversityStats {
    double mean = 0.0;
    double stddev = 0.0;
    int64_t pairs = 0;
};

/// Pairs of [3, H, W] images generated from the same layout.
DiversityStats diversity_score(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& pairs,
                               FeatureExtractor& extractor);

struct MetricReport {
    double fid = 0.0;
    double fid_real_vs_real = 0.0;  // random 50/50 split of the real slice
    DiversityStats diversity;
    int64_t n_layouts = 0;
    int64_t samples_per_layout = 0;
    int64_t generated = 0;
    int64_t real = 0;
    bool shrinkage = false;
    std::string extractor;
    std::string checkpoint;
    int64_t iteration = 0;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path data_dir;  // empty: the checkpoint's training data
    int64_t n_layouts = 8;
    int64_t samples_per_layout = 2;
    uint64_t seed = 0;
    std::string extractor = "random";
    std::filesystem::path asset_dir = "assets";
    std::filesystem::path report_path;  // written when non-empty
};

/// Generates samples_per_layout images for each of the first n_layouts
/// dataset pages and scores them against the real pages.
MetricReport eval_run(const EvalOptions& options);

}  // namespace docsynth
