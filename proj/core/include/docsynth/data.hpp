#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "docsynth/layout.hpp"

namespace docsynth {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for unreadable or undecodable image files.
class ImageError : public DataError {
public:
    using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Image helpers. Images are float tensors shaped [3, H, W] with values in
// [-1, 1]; channel order is RGB.
// ---------------------------------------------------------------------------

/// Decodes any format OpenCV understands; result is [3, H, W] in [0, 255].
torch::Tensor read_image_rgb(const std::filesystem::path& path);

/// Bilinear resize (half-pixel centers, no antialiasing) of [C, H, W] or [B, C, H, W].
torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t height, int64_t width);

/// [3, S, S] in [-1, 1] -> lossless PNG bytes.
std::vector<uint8_t> encode_png(const torch::Tensor& image);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

// ---------------------------------------------------------------------------
// Dataset index
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::filesystem::path image_path;
    Layout layout;  // canonically ordered
    int64_t source_id = 0;
    int width = 0;
    int height = 0;
};

struct IngestFilters {
    int max_objects = kDefaultMaxObjects;
    int canvas_size = 128;
    std::string split = "train";
};

struct IngestStats {
    int64_t raw_images = 0;
    int64_t kept = 0;
    int64_t dropped_empty = 0;
    int64_t dropped_too_many = 0;
    int64_t dropped_unknown_category = 0;  // also the warning count
    int64_t dropped_invalid = 0;
    int64_t unknown_category_annotations = 0;
};

struct DatasetIndex {
    std::vector<DatasetRecord> records;
    std::string split;
    CategoryVocab vocab = CategoryVocab::publaynet();
    IngestStats stats;

    int64_t size() const { return static_cast<int64_t>(records.size()); }
};

/// Reads a COCO-style annotation file. bbox [x, y, w, h] in pixels becomes
/// normalized corner form. Pages without objects, with more than
/// `max_objects`, or with categories outside `vocab` are dropped and counted.
/// Throws DataError if the file cannot be read or parsed.
DatasetIndex ingest_coco(const std::filesystem::path& annotation_file, const std::filesystem::path& image_root,
                         const CategoryVocab& vocab, const IngestFilters& filters = {});

/// A dataset directory holds annotations.json and the page images, either in
/// images/ or next to the annotation file.
DatasetIndex open_dataset_dir(const std::filesystem::path& dir, const CategoryVocab& vocab,
                              const IngestFilters& filters = {});

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

struct Sample {
    torch::Tensor image;  // [3, S, S] in [-1, 1]
    Layout layout;
};

/// Throws ImageError for unreadable images.
Sample load_sample(const DatasetRecord& record, int image_size);

struct LoadReport {
    int64_t loaded = 0;
    std::vector<std::pair<std::filesystem::path, std::string>> skipped;
};

/// Loads every record, skipping (and reporting) images that fail to decode.
std::vector<Sample> load_samples(const DatasetIndex& index, int image_size, LoadReport* report = nullptr);

/// One M x M bilinear crop per object, in layout order: [n, 3, M, M].
torch::Tensor crop_objects(const torch::Tensor& image, const Layout& layout, int64_t crop_size);

/// Batched, differentiable variant: crops `rects[i]` out of images[obj_to_img[i]].
torch::Tensor crop_rects(const torch::Tensor& images, std::span<const PixelRect> rects,
                         std::span<const int64_t> obj_to_img, int64_t crop_size);

}  // namespace docsynth
