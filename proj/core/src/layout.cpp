#include "docsynth/layout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "docsynth/json.hpp"

namespace docsynth {

using json = nlohmann::json;

CategoryVocab::CategoryVocab(std::vector<std::string> names) : names_(std::move(names))
{
    if (names_.empty()) throw LayoutError("category vocabulary must not be empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) throw LayoutError("category names must be non-empty");
        if (!seen.insert(n).second) throw LayoutError("duplicate category name '" + n + "'");
    }
}

CategoryVocab CategoryVocab::publaynet()
{
    return CategoryVocab({"text", "title", "list", "table", "figure"});
}

const std::string& CategoryVocab::name(int64_t id) const
{
    if (id < 0 || id >= size())
        throw LayoutError("category id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(size()));
    return names_[static_cast<size_t>(id)];
}

int64_t CategoryVocab::id(std::string_view name) const
{
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw LayoutError("unknown category '" + std::string(name) + "'");
    return std::distance(names_.begin(), it);
}

bool CategoryVocab::contains(std::string_view name) const
{
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

namespace {

// Rounds [lo, hi) to pixel indices; an empty span becomes one pixel wide,
// pulled back inside the canvas when it would start at S.
std::pair<int, int> project_span(double lo, double hi, int size, bool& expanded)
{
    int a = static_cast<int>(std::lround(lo * size));
    int b = static_cast<int>(std::lround(hi * size));
    a = std::clamp(a, 0, size);
    b = std::clamp(b, 0, size);
    if (b <= a) {
        expanded = true;
        if (a >= size) a = size - 1;
        b = a + 1;
    }
    return {a, b};
}

}  // namespace

PixelRect to_pixels(const BBox& bbox, int canvas_size)
{
    if (canvas_size <= 0) throw LayoutError("canvas size must be positive");
    PixelRect r;
    std::tie(r.x0, r.x1) = project_span(bbox.x0, bbox.x1, canvas_size, r.expanded);
    std::tie(r.y0, r.y1) = project_span(bbox.y0, bbox.y1, canvas_size, r.expanded);
    return r;
}

std::string_view to_string(Violation v)
{
    switch (v) {
    case Violation::EmptyLayout: return "empty_layout";
    case Violation::TooManyObjects: return "too_many_objects";
    case Violation::BadCanvasSize: return "bad_canvas_size";
    case Violation::UnknownLabel: return "unknown_label";
    case Violation::NonFiniteCoordinate: return "non_finite_coordinate";
    case Violation::OutOfCanvas: return "out_of_canvas";
    case Violation::DegenerateBox: return "degenerate_box";
    }
    return "unknown";
}

bool ValidationReport::has(Violation kind) const
{
    return std::any_of(issues.begin(), issues.end(), [&](const auto& i) { return i.kind == kind; });
}

std::string ValidationReport::summary() const
{
    std::ostringstream os;
    for (size_t i = 0; i < issues.size(); ++i) {
        if (i) os << "; ";
        os << to_string(issues[i].kind);
        if (issues[i].object_index >= 0) os << " (object " << issues[i].object_index << ")";
        os << ": " << issues[i].message;
    }
    return os.str();
}

ValidationReport validate_layout(const Layout& layout, const CategoryVocab& vocab, int max_objects)
{
    ValidationReport report;
    auto add = [&](Violation kind, int64_t index, std::string msg) {
        report.issues.push_back({kind, index, std::move(msg)});
    };

    if (layout.canvas_size != 64 && layout.canvas_size != 128)
        add(Violation::BadCanvasSize, -1,
            "canvas_size " + std::to_string(layout.canvas_size) + " is not 64 or 128");
    if (layout.objects.empty()) add(Violation::EmptyLayout, -1, "layout has no objects");
    if (layout.size() > max_objects)
        add(Violation::TooManyObjects, -1,
            std::to_string(layout.size()) + " objects exceed the limit of " + std::to_string(max_objects));

    for (int64_t i = 0; i < layout.size(); ++i) {
        const auto& obj = layout.objects[static_cast<size_t>(i)];
        if (obj.label < 0 || obj.label >= vocab.size())
            add(Violation::UnknownLabel, i,
                obj.label == kUnknownLabel ? std::string("label is not a known category")
                                           : "label id " + std::to_string(obj.label) + " not in vocabulary of size " +
                                                 std::to_string(vocab.size()));

        const auto& b = obj.bbox;
        if (!std::isfinite(b.x0) || !std::isfinite(b.y0) || !std::isfinite(b.x1) || !std::isfinite(b.y1)) {
            add(Violation::NonFiniteCoordinate, i, "bbox has a non-finite coordinate");
            continue;
        }
        if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > 1.0 || b.y1 > 1.0)
            add(Violation::OutOfCanvas, i, "bbox extends outside [0,1]");
        if (!(b.x0 < b.x1) || !(b.y0 < b.y1)) add(Violation::DegenerateBox, i, "bbox has zero or negative extent");
    }
    return report;
}

Layout canonical_order(const Layout& layout, const CategoryVocab& vocab, int max_objects)
{
    auto report = validate_layout(layout, vocab, max_objects);
    if (!report.ok()) throw LayoutError("invalid layout: " + report.summary());

    std::vector<size_t> order(layout.objects.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& oa = layout.objects[a];
        const auto& ob = layout.objects[b];
        if (oa.bbox.y0 != ob.bbox.y0) return oa.bbox.y0 < ob.bbox.y0;
        if (oa.bbox.x0 != ob.bbox.x0) return oa.bbox.x0 < ob.bbox.x0;
        return oa.label < ob.label;
    });

    Layout out;
    out.canvas_size = layout.canvas_size;
    out.objects.reserve(order.size());
    for (size_t idx : order) out.objects.push_back(layout.objects[idx]);
    return out;
}

json layout_to_json_value(const Layout& layout, const CategoryVocab& vocab)
{
    json objects = json::array();
    for (const auto& obj : layout.objects) {
        objects.push_back({{"label", vocab.name(obj.label)},
                           {"bbox", {obj.bbox.x0, obj.bbox.y0, obj.bbox.x1, obj.bbox.y1}}});
    }
    return {{"canvas_size", layout.canvas_size}, {"objects", std::move(objects)}};
}

Layout layout_from_json_value(const json& j, const CategoryVocab& vocab)
{
    try {
        Layout layout;
        layout.canvas_size = j.at("canvas_size").get<int>();
        for (const auto& o : j.at("objects")) {
            const auto& box = o.at("bbox");
            if (!box.is_array() || box.size() != 4) throw LayoutError("bbox must be an array of 4 numbers");
            ObjectSpec spec;
            const auto name = o.at("label").get<std::string>();
            spec.label = vocab.contains(name) ? vocab.id(name) : kUnknownLabel;
            spec.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
            layout.objects.push_back(spec);
        }
        return layout;
    } catch (const json::exception& e) {
        throw LayoutError(std::string("malformed layout document: ") + e.what());
    }
}

std::string layout_to_json(const Layout& layout, const CategoryVocab& vocab, int indent)
{
    return layout_to_json_value(layout, vocab).dump(indent);
}

Layout layout_from_json(std::string_view text, const CategoryVocab& vocab)
{
    json j = json::parse(text.begin(), text.end(), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw LayoutError("layout document is not valid JSON");
    return layout_from_json_value(j, vocab);
}

Layout load_layout(const std::filesystem::path& path, const CategoryVocab& vocab)
{
    std::ifstream in(path);
    if (!in) throw LayoutError("cannot open layout file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return layout_from_json(ss.str(), vocab);
}

void save_layout(const std::filesystem::path& path, const Layout& layout, const CategoryVocab& vocab)
{
    std::ofstream out(path);
    if (!out) throw LayoutError("cannot write layout file " + path.string());
    out << layout_to_json(layout, vocab, 2) << '\n';
}

}  // namespace docsynth

namespace docsynth {

nlohmann::json validation_to_json(const ValidationReport& report)
{
    json out = json::array();
    for (const auto& issue : report.issues) {
        json item = {{"kind", std::string(to_string(issue.kind))}, {"message", issue.message}};
        if (issue.object_index >= 0) item["object"] = issue.object_index;
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace docsynth
