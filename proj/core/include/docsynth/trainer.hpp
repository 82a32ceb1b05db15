#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "docsynth/checkpoint.hpp"
#include "docsynth/config.hpp"
#include "docsynth/data.hpp"
#include "docsynth/discriminator.hpp"
#include "docsynth/generator.hpp"
#include "docsynth/losses.hpp"

namespace docsynth {

/// A loss term evaluated to NaN or infinity. `what()` carries a dump of the
/// offending term and the step's other values.
class NonFiniteLossError : public std::runtime_error {
public:
    NonFiniteLossError(std::string term, const std::string& dump)
        : std::runtime_error("non-finite loss term '" + term + "': " + dump), term_(std::move(term))
    {
    }
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

struct TrainBatch {
    torch::Tensor images;  // [B, 3, S, S]
    LayoutBatch layouts;
};

TrainBatch collate(std::span<const Sample> data, std::span<const size_t> indices, int image_size);

/// Intermediate tensors shared by the discriminator and generator updates.
struct ForwardPass {
    torch::Tensor crops_real;    // crops of I
    PosteriorParams posterior;   // E on crops_real
    torch::Tensor z_crop;        // posterior sample
    torch::Tensor z_prior;       // N(0, I) sample
    torch::Tensor reconstructed; // I' = G(L, z_crop)
    torch::Tensor generated;     // I~ = G(L, z_prior)
    torch::Tensor crops_generated;
    torch::Tensor crops_reconstructed;  // only when needed by the configuration
    torch::Tensor z_regressed;   // mean of E' on crops_generated
};

struct DiscLosses {
    double gan_img = 0.0;
    double gan_obj = 0.0;
    double ac_real = 0.0;
    double total = 0.0;
};

struct StepResult {
    LossBreakdown generator;
    DiscLosses discriminator;
};

/// Per-step RNG seed derived from (run seed, iteration).
uint64_t step_seed(uint64_t seed, int64_t iteration);

/// Dataset indices for 1-based `iteration`: consecutive slices of per-epoch
/// permutations seeded by (seed, epoch).
std::vector<size_t> batch_indices(uint64_t seed, int64_t iteration, size_t dataset_size, int batch_size);

class Trainer {
public:
    Trainer(TrainConfig config, CategoryVocab vocab);

    const TrainConfig& config() const { return config_; }
    const CategoryVocab& vocab() const { return vocab_; }
    /// Completed optimizer steps.
    int64_t iteration() const { return iteration_; }

    GeneratorBundle& generator() { return generator_; }
    DiscriminatorBundle& discriminators() { return discriminators_; }
    torch::optim::Adam& generator_optimizer() { return *opt_g_; }
    torch::optim::Adam& discriminator_optimizer() { return *opt_d_; }

    ForwardPass forward(const TrainBatch& batch, at::Generator& rng);
    /// One update of D_img and D_obj; touches only discriminator parameters.
    DiscLosses discriminator_step(const TrainBatch& batch, const ForwardPass& pass);
    /// One update of G, E and E'; touches only generator-side parameters.
    LossBreakdown generator_step(const TrainBatch& batch, const ForwardPass& pass);

    /// forward -> D step -> G step, with randomness from step_seed(seed, iteration + 1).
    StepResult train_step(const TrainBatch& batch);

    Checkpoint to_checkpoint() const;
    void save(const std::filesystem::path& path) const;
    /// Throws ConfigMismatchError if the checkpoint's model config or vocabulary differ.
    void restore(const Checkpoint& ckpt);
    void load(const std::filesystem::path& path) { restore(read_checkpoint(path)); }

private:
    TrainConfig config_;
    CategoryVocab vocab_;
    GeneratorBundle generator_{nullptr};
    DiscriminatorBundle discriminators_{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    int64_t iteration_ = 0;
};

struct TrainLoopOptions {
    std::filesystem::path out_dir = "run";
    /// Continue from this checkpoint (its iteration count is kept).
    std::optional<std::filesystem::path> resume_from;
    /// Stop after this many total iterations instead of config.iterations (-1: no override).
    int64_t stop_after = -1;
    std::function<void(int64_t, const StepResult&)> on_step;
};

struct TrainLoopResult {
    std::vector<LossBreakdown> losses;  // rows produced by this invocation
    int64_t final_iteration = 0;
    std::filesystem::path last_checkpoint;
};

/// Runs the configured number of iterations, writing losses.csv,
/// manifest.json, checkpoint_<iter>.ckpt and latest.ckpt into out_dir.
TrainLoopResult train_loop(const TrainConfig& config, const CategoryVocab& vocab, std::span<const Sample> data,
                           const TrainLoopOptions& options = {});

std::string loss_csv_header();
std::string loss_csv_row(int64_t iteration, const LossBreakdown& b);

/// Resolved configuration + vocabulary, written next to checkpoints.
nlohmann::json run_manifest(const TrainConfig& config, const CategoryVocab& vocab);

}  // namespace docsynth
