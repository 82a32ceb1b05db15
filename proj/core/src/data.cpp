#include "docsynth/data.hpp"

#include <fstream>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace F = torch::nn::functional;
using json = nlohmann::json;

namespace docsynth {

torch::Tensor read_image_rgb(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw ImageError("image file not found: " + path.string());
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw ImageError("cannot decode image: " + path.string());

    auto hwc = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, {static_cast<int64_t>(bgr.step[0]), 3, 1},
                                torch::kUInt8);
    // BGR -> RGB, HWC -> CHW; flip copies out of the cv::Mat buffer.
    return hwc.flip(2).permute({2, 0, 1}).to(torch::kFloat32).contiguous();
}

torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t height, int64_t width)
{
    const bool batched = image.dim() == 4;
    auto x = batched ? image : image.unsqueeze(0);
    if (x.size(2) != height || x.size(3) != width) {
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{height, width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    }
    return batched ? x : x.squeeze(0);
}

std::vector<uint8_t> encode_png(const torch::Tensor& image)
{
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "encode_png expects a [3, H, W] tensor");
    auto bytes = ((image.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5)
                     .round()
                     .to(torch::kUInt8)
                     .flip(0)
                     .permute({1, 2, 0})
                     .contiguous();
    cv::Mat bgr(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3, bytes.data_ptr());
    std::vector<uint8_t> out;
    if (!cv::imencode(".png", bgr, out)) throw ImageError("PNG encoding failed");
    return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image)
{
    auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

DatasetIndex ingest_coco(const std::filesystem::path& annotation_file, const std::filesystem::path& image_root,
                         const CategoryVocab& vocab, const IngestFilters& filters)
{
    std::ifstream in(annotation_file);
    if (!in) throw DataError("cannot open annotation file " + annotation_file.string());
    json doc = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError("annotation file is not valid JSON: " + annotation_file.string());

    DatasetIndex index;
    index.split = filters.split;
    index.vocab = vocab;

    try {
        // COCO category id -> vocab id, or -1 when outside the vocabulary.
        std::unordered_map<int64_t, int64_t> category_map;
        for (const auto& c : doc.at("categories")) {
            const auto name = c.at("name").get<std::string>();
            category_map[c.at("id").get<int64_t>()] = vocab.contains(name) ? vocab.id(name) : -1;
        }

        struct Pending {
            std::filesystem::path path;
            int width = 0;
            int height = 0;
            std::vector<ObjectSpec> objects;
            bool unknown = false;
        };
        std::map<int64_t, Pending> pages;  // ordered by image id
        for (const auto& im : doc.at("images")) {
            Pending p;
            p.path = image_root / im.at("file_name").get<std::string>();
            p.width = im.at("width").get<int>();
            p.height = im.at("height").get<int>();
            pages.emplace(im.at("id").get<int64_t>(), std::move(p));
        }
        index.stats.raw_images = static_cast<int64_t>(pages.size());

        for (const auto& ann : doc.at("annotations")) {
            auto it = pages.find(ann.at("image_id").get<int64_t>());
            if (it == pages.end()) continue;
            auto& page = it->second;
            auto cat = category_map.find(ann.at("category_id").get<int64_t>());
            if (cat == category_map.end() || cat->second < 0) {
                page.unknown = true;
                ++index.stats.unknown_category_annotations;
                continue;
            }
            const auto& b = ann.at("bbox");
            const double x = b.at(0).get<double>(), y = b.at(1).get<double>();
            const double w = b.at(2).get<double>(), h = b.at(3).get<double>();
            const double W = page.width, H = page.height;
            BBox box{std::clamp(x / W, 0.0, 1.0), std::clamp(y / H, 0.0, 1.0), std::clamp((x + w) / W, 0.0, 1.0),
                     std::clamp((y + h) / H, 0.0, 1.0)};
            page.objects.push_back({cat->second, box});
        }

        for (auto& [id, page] : pages) {
            if (page.unknown) {
                ++index.stats.dropped_unknown_category;
                continue;
            }
            if (page.objects.empty()) {
                ++index.stats.dropped_empty;
                continue;
            }
            if (static_cast<int>(page.objects.size()) > filters.max_objects) {
                ++index.stats.dropped_too_many;
                continue;
            }
            Layout layout{std::move(page.objects), filters.canvas_size};
            if (!validate_layout(layout, vocab, filters.max_objects).ok()) {
                ++index.stats.dropped_invalid;
                continue;
            }
            index.records.push_back({page.path, canonical_order(layout, vocab, filters.max_objects), id, page.width,
                                     page.height});
        }
    } catch (const json::exception& e) {
        throw DataError("malformed COCO annotations in " + annotation_file.string() + ": " + e.what());
    }
    index.stats.kept = index.size();
    return index;
}

Sample load_sample(const DatasetRecord& record, int image_size)
{
    auto rgb = read_image_rgb(record.image_path);
    auto resized = resize_bilinear(rgb, image_size, image_size);
    Sample s;
    s.image = (resized / 127.5 - 1.0).clamp(-1.0, 1.0);
    s.layout = record.layout;
    s.layout.canvas_size = image_size;
    return s;
}

std::vector<Sample> load_samples(const DatasetIndex& index, int image_size, LoadReport* report)
{
    std::vector<Sample> out;
    out.reserve(index.records.size());
    for (const auto& rec : index.records) {
        try {
            out.push_back(load_sample(rec, image_size));
        } catch (const ImageError& e) {
            if (report) report->skipped.emplace_back(rec.image_path, e.what());
        }
    }
    if (report) report->loaded = static_cast<int64_t>(out.size());
    return out;
}

torch::Tensor crop_rects(const torch::Tensor& images, std::span<const PixelRect> rects,
                         std::span<const int64_t> obj_to_img, int64_t crop_size)
{
    using torch::indexing::Slice;
    TORCH_CHECK(images.dim() == 4, "crop_rects expects [B, C, H, W] images");
    TORCH_CHECK(rects.size() == obj_to_img.size(), "one image index per rectangle required");
    std::vector<torch::Tensor> crops;
    crops.reserve(rects.size());
    for (size_t i = 0; i < rects.size(); ++i) {
        const auto& r = rects[i];
        auto region = images.index({obj_to_img[i], Slice(), Slice(r.y0, r.y1), Slice(r.x0, r.x1)});
        crops.push_back(resize_bilinear(region.unsqueeze(0), crop_size, crop_size));
    }
    if (crops.empty()) return torch::empty({0, images.size(1), crop_size, crop_size}, images.options());
    return torch::cat(crops, 0);
}

torch::Tensor crop_objects(const torch::Tensor& image, const Layout& layout, int64_t crop_size)
{
    TORCH_CHECK(image.dim() == 3 && image.size(1) == image.size(2), "crop_objects expects a square [C, S, S] image");
    const int size = static_cast<int>(image.size(1));
    std::vector<PixelRect> rects;
    std::vector<int64_t> owner(layout.objects.size(), 0);
    for (const auto& obj : layout.objects) rects.push_back(to_pixels(obj.bbox, size));
    return crop_rects(image.unsqueeze(0), rects, owner, crop_size);
}

DatasetIndex open_dataset_dir(const std::filesystem::path& dir, const CategoryVocab& vocab,
                              const IngestFilters& filters)
{
    const auto annotations = dir / "annotations.json";
    if (!std::filesystem::exists(annotations)) throw DataError("no annotations.json in " + dir.string());
    const auto images = dir / "images";
    return ingest_coco(annotations, std::filesystem::is_directory(images) ? images : dir, vocab, filters);
}

}  // namespace docsynth
