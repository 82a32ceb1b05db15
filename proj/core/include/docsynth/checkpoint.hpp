#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "docsynth/config.hpp"
#include "docsynth/generator.hpp"
#include "docsynth/layout.hpp"

namespace docsynth {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The stored configuration does not match the one the caller expects.
class ConfigMismatchError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// Named tensors plus a JSON metadata block.
///
/// On-disk layout (little endian):
///   8 bytes   magic "DSYNCKPT"
///   u32       format version
///   u64       header length in bytes
///   header    UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
///   payload   raw tensor bytes, concatenated in name order
///
/// Tensors are written contiguous and in name order, so equal contents give
/// equal bytes.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;
};

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every parameter and buffer of `module` under `prefix.`.
void export_module(const std::string& prefix, const torch::nn::Module& module, Checkpoint& ckpt);
/// Restores parameters and buffers in place. Missing tensors or shape
/// mismatches raise CheckpointError.
void import_module(const std::string& prefix, torch::nn::Module& module, const Checkpoint& ckpt);

void export_adam(const std::string& prefix, const torch::nn::Module& owner, const torch::optim::Adam& optimizer,
                 Checkpoint& ckpt);
void import_adam(const std::string& prefix, const torch::nn::Module& owner, torch::optim::Adam& optimizer,
                 const Checkpoint& ckpt);

/// Field-by-field comparison; empty when equal.
std::vector<std::string> config_differences(const ModelConfig& expected, const ModelConfig& stored);

/// A frozen generator loaded for inference.
struct ModelSnapshot {
    TrainConfig config;
    CategoryVocab vocab = CategoryVocab::publaynet();
    GeneratorBundle model{nullptr};
    int64_t iteration = 0;
    std::filesystem::path source;
};

/// Loads the generator side of a training checkpoint in eval mode.
ModelSnapshot load_model_snapshot(const std::filesystem::path& path);

}  // namespace docsynth
