#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "docsynth/checkpoint.hpp"
#include "docsynth/generator.hpp"
#include "docsynth/layout.hpp"

namespace docsynth {

class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The request layout (or the result of an edit) failed validation.
class InvalidLayoutError : public SamplerError {
public:
    explicit InvalidLayoutError(ValidationReport report)
        : SamplerError("invalid layout: " + report.summary()), report_(std::move(report))
    {
    }
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

/// The request names a checkpoint that is not loaded, or a reload path is missing.
class NotFoundError : public SamplerError {
public:
    using SamplerError::SamplerError;
};

inline constexpr int kMaxSamplesPerRequest = 64;

struct GenerationRequest {
    Layout layout;
    int num_samples = 1;
    std::optional<uint64_t> seed;
    std::string checkpoint;  // empty: whatever is active
};

struct GeneratedImage {
    torch::Tensor image;        // [3, S, S] in [-1, 1]
    std::vector<uint8_t> png;
    uint64_t seed = 0;          // regenerates this image with render_layout
};

struct GenerationResult {
    std::vector<GeneratedImage> images;
    Layout layout;              // canonically ordered, as generated
    std::string checkpoint;
    int64_t iteration = 0;
    uint64_t seed = 0;          // request-level seed the per-image seeds derive from
};

/// Seed of the index-th image of a request.
uint64_t sample_seed(uint64_t request_seed, int64_t index);

/// One image from prior latents drawn with `seed`. The layout must already be
/// canonically ordered. Runs without autograd.
torch::Tensor render_layout(Generator& generator, const Layout& layout, uint64_t seed);

enum class EditKind { Add, Remove, Move, Relabel };

/// `index` addresses the base layout's objects in the order given.
struct LayoutEdit {
    EditKind kind = EditKind::Add;
    int64_t index = -1;
    ObjectSpec object;          // Add
    double dx = 0.0, dy = 0.0;  // Move
    int64_t label = 0;          // Relabel
};

/// Applies the edit and returns the canonically ordered result. Throws
/// InvalidLayoutError if the result does not validate and std::out_of_range
/// for a bad index.
Layout apply_edit(const Layout& base, const LayoutEdit& edit, const CategoryVocab& vocab,
                  int max_objects = kDefaultMaxObjects);

struct ExportManifest {
    int64_t layouts = 0;
    int64_t images = 0;
    uint64_t seed = 0;
    nlohmann::json entries = nlohmann::json::array();  // file, layout index, image seed
    nlohmann::json to_json() const;
};

/// Inference engine over one active checkpoint. Requests share an immutable
/// snapshot; reload() swaps it in atomically and waits for in-flight requests.
class SamplerEngine {
public:
    explicit SamplerEngine(ModelSnapshot snapshot);
    static SamplerEngine from_checkpoint(const std::filesystem::path& path);

    GenerationResult generate(const GenerationRequest& request) const;
    GenerationResult edit_and_generate(const Layout& base, const LayoutEdit& edit,
                                       const GenerationRequest& params) const;

    /// images/<n>.png, annotations.json (COCO) and manifest.json under out_dir.
    ExportManifest export_dataset(std::span<const Layout> layouts, int samples_per_layout, uint64_t seed,
                                  const std::filesystem::path& out_dir) const;

    void reload(const std::filesystem::path& path);

    std::string checkpoint_id() const;
    int64_t iteration() const;
    int image_size() const;
    CategoryVocab vocab() const;
    int max_objects() const;

private:
    struct State {
        ModelSnapshot snapshot;
        std::string id;
    };
    std::shared_ptr<const State> acquire() const;
    GenerationResult run(const State& state, const Layout& canonical, int num_samples,
                         std::optional<uint64_t> seed) const;

    mutable std::shared_mutex mutex_;
    std::shared_ptr<const State> state_;
};

/// Checkpoint id reported by the service: the file name.
std::string checkpoint_id(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// HTTP front end
// ---------------------------------------------------------------------------

struct HttpReply {
    int status = 200;
    nlohmann::json body;
};

/// Transport-independent request handling, shared by the server and tests.
HttpReply handle_request(SamplerEngine& engine, const std::string& method, const std::string& path,
                         const std::string& body);

nlohmann::json result_to_json(const GenerationResult& result, const CategoryVocab& vocab);
LayoutEdit edit_from_json(const nlohmann::json& j, const CategoryVocab& vocab);

class SamplerServer {
public:
    explicit SamplerServer(SamplerEngine& engine);
    ~SamplerServer();
    SamplerServer(const SamplerServer&) = delete;
    SamplerServer& operator=(const SamplerServer&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace docsynth
