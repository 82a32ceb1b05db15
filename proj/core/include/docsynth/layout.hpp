#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace docsynth {

/// Thrown when a layout, vocabulary or layout file cannot be used as given.
class LayoutError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ordered set of document object categories. Ids are contiguous from 0.
class CategoryVocab {
public:
    explicit CategoryVocab(std::vector<std::string> names);

    /// text, title, list, table, figure
    static CategoryVocab publaynet();

    int64_t size() const { return static_cast<int64_t>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int64_t id) const;

    /// Index of `name`; throws LayoutError if absent.
    int64_t id(std::string_view name) const;
    bool contains(std::string_view name) const;

    bool operator==(const CategoryVocab&) const = default;

private:
    std::vector<std::string> names_;
};

/// Normalized corner-form box: (x0, y0) top-left, (x1, y1) bottom-right.
struct BBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    BBox translated(double dx, double dy) const { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }

    bool operator==(const BBox&) const = default;
};

struct ObjectSpec {
    int64_t label = 0;
    BBox bbox;

    bool operator==(const ObjectSpec&) const = default;
};

inline constexpr int kDefaultMaxObjects = 10;

/// Label id given to category names the vocabulary does not know; validation
/// reports it as UnknownLabel.
inline constexpr int64_t kUnknownLabel = -1;

struct Layout {
    std::vector<ObjectSpec> objects;
    int canvas_size = 128;

    int64_t size() const { return static_cast<int64_t>(objects.size()); }
    bool operator==(const Layout&) const = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;
    /// Rounding produced an empty extent and the rectangle was widened to one pixel.
    bool expanded = false;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Projects a normalized box onto an S x S lattice. Never returns an empty rectangle.
PixelRect to_pixels(const BBox& bbox, int canvas_size);

enum class Violation {
    EmptyLayout,
    TooManyObjects,
    BadCanvasSize,
    UnknownLabel,
    NonFiniteCoordinate,
    OutOfCanvas,
    DegenerateBox,
};

std::string_view to_string(Violation v);

struct ValidationIssue {
    Violation kind;
    int64_t object_index = -1;  // -1 for layout-level issues
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    bool ok() const { return issues.empty(); }
    bool has(Violation kind) const;
    std::string summary() const;
};

/// Collects every violated invariant. Never throws.
ValidationReport validate_layout(const Layout& layout, const CategoryVocab& vocab,
                                 int max_objects = kDefaultMaxObjects);

/// Stable reading order: (y0, x0), then label id, then original index.
/// Throws LayoutError on an invalid layout.
Layout canonical_order(const Layout& layout, const CategoryVocab& vocab,
                       int max_objects = kDefaultMaxObjects);

// Layout files: {"canvas_size": int, "objects": [{"label": str, "bbox": [x0,y0,x1,y1]}]}
// Unknown label names parse to kUnknownLabel.
std::string layout_to_json(const Layout& layout, const CategoryVocab& vocab, int indent = -1);
Layout layout_from_json(std::string_view text, const CategoryVocab& vocab);
Layout load_layout(const std::filesystem::path& path, const CategoryVocab& vocab);
void save_layout(const std::filesystem::path& path, const Layout& layout, const CategoryVocab& vocab);

}  // namespace docsynth
