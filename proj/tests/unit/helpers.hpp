#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "docsynth/config.hpp"
#include "docsynth/data.hpp"
#include "docsynth/layout.hpp"

namespace docsynth::test {

inline std::filesystem::path fixtures() { return DOCSYNTH_FIXTURES; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("docsynth_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

/// Small training setup used across the trainer, sampler and cli tests.
inline TrainConfig desk_config(int image_size = 64)
{
    TrainConfig c;
    c.preset = "desk";
    c.model = ModelConfig::desk(image_size);
    c.batch_size = 4;
    c.iterations = 10;
    c.checkpoint_every = 5;
    c.seed = 1234;
    return c;
}

inline std::vector<Sample> fixture_samples(const std::string& name, int image_size = 64)
{
    IngestFilters filters;
    filters.canvas_size = image_size;
    auto index = open_dataset_dir(fixtures() / name, CategoryVocab::publaynet(), filters);
    return load_samples(index, image_size);
}

inline Layout make_layout(std::initializer_list<ObjectSpec> objects, int canvas = 64)
{
    Layout l;
    l.objects = objects;
    l.canvas_size = canvas;
    return l;
}

/// Uniform random valid layout with n objects on a canvas.
inline Layout random_layout(std::mt19937& rng, int n, int canvas, int64_t classes = 5)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int64_t> lab(0, classes - 1);
    Layout l;
    l.canvas_size = canvas;
    for (int i = 0; i < n; ++i) {
        double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
        if (a > b) std::swap(a, b);
        if (c > d) std::swap(c, d);
        b = std::max(b, a + 0.02);
        d = std::max(d, c + 0.02);
        if (b > 1.0) { a -= b - 1.0; b = 1.0; }
        if (d > 1.0) { c -= d - 1.0; d = 1.0; }
        l.objects.push_back({lab(rng), {a, c, b, d}});
    }
    return l;
}

}  // namespace docsynth::test
