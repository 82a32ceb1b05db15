#include "docsynth/sampler.hpp"

#include <fstream>
#include <mutex>
#include <random>

#include <ATen/CPUGeneratorImpl.h>
#include <httplib.h>

#include "docsynth/data.hpp"
#include "docsynth/json.hpp"

using json = nlohmann::json;

namespace docsynth {

namespace {

uint64_t mix(uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Layout validated(const Layout& layout, const CategoryVocab& vocab, int max_objects)
{
    auto report = validate_layout(layout, vocab, max_objects);
    if (!report.ok()) throw InvalidLayoutError(std::move(report));
    return canonical_order(layout, vocab, max_objects);
}

}  // namespace

uint64_t sample_seed(uint64_t request_seed, int64_t index)
{
    return mix(request_seed ^ mix(static_cast<uint64_t>(index) + 1));
}

torch::Tensor render_layout(Generator& generator, const Layout& layout, uint64_t seed)
{
    torch::NoGradGuard no_grad;
    auto rng = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto latents = sample_prior(layout.size(), generator->config().latent_dim, rng);
    return generate(generator, layout, latents);
}

Layout apply_edit(const Layout& base, const LayoutEdit& edit, const CategoryVocab& vocab, int max_objects)
{
    Layout out = base;
    auto at = [&](int64_t i) -> ObjectSpec& {
        if (i < 0 || i >= out.size())
            throw std::out_of_range("edit index " + std::to_string(i) + " outside layout of " +
                                    std::to_string(out.size()) + " objects");
        return out.objects[static_cast<size_t>(i)];
    };
    switch (edit.kind) {
    case EditKind::Add: out.objects.push_back(edit.object); break;
    case EditKind::Remove:
        at(edit.index);
        out.objects.erase(out.objects.begin() + edit.index);
        break;
    case EditKind::Move: {
        auto& obj = at(edit.index);
        obj.bbox = obj.bbox.translated(edit.dx, edit.dy);
        break;
    }
    case EditKind::Relabel: at(edit.index).label = edit.label; break;
    }
    return validated(out, vocab, max_objects);
}

json ExportManifest::to_json() const
{
    return {{"layouts", layouts}, {"images", images}, {"seed", seed}, {"entries", entries}};
}

std::string checkpoint_id(const std::filesystem::path& path)
{
    return path.filename().string();
}

SamplerEngine::SamplerEngine(ModelSnapshot snapshot)
{
    auto id = docsynth::checkpoint_id(snapshot.source);
    snapshot.model->eval();
    state_ = std::make_shared<const State>(State{std::move(snapshot), std::move(id)});
}

SamplerEngine SamplerEngine::from_checkpoint(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
    return SamplerEngine(load_model_snapshot(path));
}

std::shared_ptr<const SamplerEngine::State> SamplerEngine::acquire() const
{
    std::shared_lock lock(mutex_);
    return state_;
}

void SamplerEngine::reload(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
    auto snapshot = load_model_snapshot(path);
    snapshot.model->eval();
    auto next = std::make_shared<const State>(State{std::move(snapshot), docsynth::checkpoint_id(path)});
    std::unique_lock lock(mutex_);
    state_ = std::move(next);
}

std::string SamplerEngine::checkpoint_id() const { return acquire()->id; }
int64_t SamplerEngine::iteration() const { return acquire()->snapshot.iteration; }
int SamplerEngine::image_size() const { return acquire()->snapshot.config.model.image_size; }
CategoryVocab SamplerEngine::vocab() const { return acquire()->snapshot.vocab; }
int SamplerEngine::max_objects() const { return acquire()->snapshot.config.max_objects; }

GenerationResult SamplerEngine::run(const State& state, const Layout& canonical, int num_samples,
                                    std::optional<uint64_t> seed) const
{
    if (num_samples < 1 || num_samples > kMaxSamplesPerRequest)
        throw SamplerError("num_samples must be in [1, " + std::to_string(kMaxSamplesPerRequest) + "], got " +
                           std::to_string(num_samples));
    GenerationResult result;
    result.layout = canonical;
    result.checkpoint = state.id;
    result.iteration = state.snapshot.iteration;
    result.seed = seed ? *seed : std::random_device{}();
    auto generator = state.snapshot.model->generator;
    for (int i = 0; i < num_samples; ++i) {
        GeneratedImage img;
        img.seed = sample_seed(result.seed, i);
        img.image = render_layout(generator, canonical, img.seed);
        img.png = encode_png(img.image);
        result.images.push_back(std::move(img));
    }
    return result;
}

GenerationResult SamplerEngine::generate(const GenerationRequest& request) const
{
    // Holding the shared lock for the whole request lets reload() wait for it.
    std::shared_lock lock(mutex_);
    const auto& state = *state_;
    if (!request.checkpoint.empty() && request.checkpoint != state.id &&
        request.checkpoint != state.snapshot.source.string())
        throw NotFoundError("checkpoint '" + request.checkpoint + "' is not loaded (active: " + state.id + ")");
    const auto canonical = validated(request.layout, state.snapshot.vocab, state.snapshot.config.max_objects);
    return run(state, canonical, request.num_samples, request.seed);
}

GenerationResult SamplerEngine::edit_and_generate(const Layout& base, const LayoutEdit& edit,
                                                  const GenerationRequest& params) const
{
    GenerationRequest request = params;
    {
        std::shared_lock lock(mutex_);
        request.layout = apply_edit(base, edit, state_->snapshot.vocab, state_->snapshot.config.max_objects);
    }
    return generate(request);
}

ExportManifest SamplerEngine::export_dataset(std::span<const Layout> layouts, int samples_per_layout, uint64_t seed,
                                             const std::filesystem::path& out_dir) const
{
    std::shared_lock lock(mutex_);
    const auto& state = *state_;
    const auto& vocab = state.snapshot.vocab;
    const int size = state.snapshot.config.model.image_size;
    std::filesystem::create_directories(out_dir / "images");

    json images = json::array();
    json annotations = json::array();
    json categories = json::array();
    for (int64_t c = 0; c < vocab.size(); ++c) categories.push_back({{"id", c + 1}, {"name", vocab.name(c)}});

    ExportManifest manifest;
    manifest.seed = seed;
    manifest.layouts = static_cast<int64_t>(layouts.size());
    int64_t image_id = 0;
    int64_t ann_id = 0;
    for (size_t li = 0; li < layouts.size(); ++li) {
        const auto canonical = validated(layouts[li], vocab, state.snapshot.config.max_objects);
        const auto result = run(state, canonical, samples_per_layout, sample_seed(seed, static_cast<int64_t>(li)));
        for (size_t si = 0; si < result.images.size(); ++si) {
            ++image_id;
            char name[64];
            std::snprintf(name, sizeof name, "%05zu_%02zu.png", li, si);
            std::ofstream(out_dir / "images" / name, std::ios::binary)
                .write(reinterpret_cast<const char*>(result.images[si].png.data()),
                       static_cast<std::streamsize>(result.images[si].png.size()));
            images.push_back({{"id", image_id}, {"file_name", name}, {"width", size}, {"height", size}});
            for (const auto& obj : canonical.objects) {
                const auto& b = obj.bbox;
                const double w = b.width() * size, h = b.height() * size;
                annotations.push_back({{"id", ++ann_id},
                                       {"image_id", image_id},
                                       {"category_id", obj.label + 1},
                                       {"bbox", {b.x0 * size, b.y0 * size, w, h}},
                                       {"area", w * h},
                                       {"iscrowd", 0}});
            }
            manifest.entries.push_back(
                {{"file", name}, {"layout", li}, {"seed", result.images[si].seed}, {"image_id", image_id}});
        }
    }
    manifest.images = image_id;

    std::ofstream(out_dir / "annotations.json")
        << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}.dump(1) << '\n';
    json m = manifest.to_json();
    m["checkpoint"] = state.id;
    m["iteration"] = state.snapshot.iteration;
    m["samples_per_layout"] = samples_per_layout;
    std::ofstream(out_dir / "manifest.json") << m.dump(2) << '\n';
    return manifest;
}

// ---------------------------------------------------------------------------

json result_to_json(const GenerationResult& result, const CategoryVocab& vocab)
{
    json images = json::array();
    for (const auto& img : result.images) {
        const std::string raw(img.png.begin(), img.png.end());
        images.push_back({{"png_base64", httplib::detail::base64_encode(raw)}, {"seed", img.seed}});
    }
    return {{"images", images},
            {"layout", layout_to_json_value(result.layout, vocab)},
            {"checkpoint", result.checkpoint},
            {"iteration", result.iteration},
            {"seed", result.seed}};
}

LayoutEdit edit_from_json(const json& j, const CategoryVocab& vocab)
{
    LayoutEdit edit;
    const auto op = j.at("op").get<std::string>();
    auto label_of = [&](const json& v) { return vocab.contains(v.get<std::string>()) ? vocab.id(v.get<std::string>()) : kUnknownLabel; };
    if (op == "add") {
        edit.kind = EditKind::Add;
        const auto& o = j.at("object");
        const auto& b = o.at("bbox");
        if (!b.is_array() || b.size() != 4) throw SamplerError("bbox must be an array of 4 numbers");
        edit.object = {label_of(o.at("label")), {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}};
    } else if (op == "remove") {
        edit.kind = EditKind::Remove;
        edit.index = j.at("index").get<int64_t>();
    } else if (op == "move") {
        edit.kind = EditKind::Move;
        edit.index = j.at("index").get<int64_t>();
        edit.dx = j.value("dx", 0.0);
        edit.dy = j.value("dy", 0.0);
    } else if (op == "relabel") {
        edit.kind = EditKind::Relabel;
        edit.index = j.at("index").get<int64_t>();
        edit.label = label_of(j.at("label"));
    } else {
        throw SamplerError("unknown edit op '" + op + "'");
    }
    return edit;
}

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message)
{
    return {status, {{"error", code}, {"message", message}}};
}

GenerationRequest request_from_json(const json& j, const CategoryVocab& vocab)
{
    GenerationRequest r;
    r.layout = layout_from_json_value(j.at("layout"), vocab);
    r.num_samples = j.value("num_samples", 1);
    if (j.contains("seed") && !j.at("seed").is_null()) r.seed = j.at("seed").get<uint64_t>();
    r.checkpoint = j.value("checkpoint", std::string());
    return r;
}

}  // namespace

HttpReply handle_request(SamplerEngine& engine, const std::string& method, const std::string& path,
                         const std::string& body)
{
    try {
        if (method == "GET" && path == "/v1/health")
            return {200, {{"status", "ok"}, {"checkpoint", engine.checkpoint_id()}, {"iteration", engine.iteration()}}};
        if (method == "GET" && path == "/v1/categories") {
            const auto vocab = engine.vocab();
            json cats = json::array();
            for (int64_t i = 0; i < vocab.size(); ++i) cats.push_back({{"id", i}, {"name", vocab.name(i)}});
            return {200, {{"categories", cats}, {"image_size", engine.image_size()}, {"max_objects", engine.max_objects()}}};
        }
        const bool known = path == "/v1/generate" || path == "/v1/edit-generate" || path == "/v1/checkpoint";
        if (!known) return error_reply(404, "not_found", "no route for " + path);
        if (method != "POST") return error_reply(405, "method_not_allowed", method + " " + path);

        const json j = json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return error_reply(400, "bad_request", "body must be a JSON object");

        if (path == "/v1/checkpoint") {
            engine.reload(j.at("path").get<std::string>());
            return {200, {{"status", "ok"}, {"checkpoint", engine.checkpoint_id()}, {"iteration", engine.iteration()}}};
        }
        const auto vocab = engine.vocab();
        auto request = request_from_json(j, vocab);
        GenerationResult result = path == "/v1/generate"
                                      ? engine.generate(request)
                                      : engine.edit_and_generate(request.layout, edit_from_json(j.at("edit"), vocab), request);
        return {200, result_to_json(result, vocab)};
    } catch (const InvalidLayoutError& e) {
        return {422, {{"error", "invalid_layout"}, {"message", e.what()}, {"violations", validation_to_json(e.report())}}};
    } catch (const NotFoundError& e) {
        return error_reply(404, "not_found", e.what());
    } catch (const CheckpointError& e) {
        return error_reply(400, "bad_checkpoint", e.what());
    } catch (const SamplerError& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const LayoutError& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const json::exception& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const std::out_of_range& e) {
        return error_reply(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_reply(500, "internal", e.what());
    }
}

struct SamplerServer::Impl {
    SamplerEngine& engine;
    httplib::Server server;

    explicit Impl(SamplerEngine& e) : engine(e)
    {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            auto reply = handle_request(engine, req.method, req.path, req.body);
            res.status = reply.status;
            res.set_content(reply.body.dump(), "application/json");
        };
        server.Get(R"(/v1/.*)", handler);
        server.Post(R"(/v1/.*)", handler);
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
        server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
    }
};

SamplerServer::SamplerServer(SamplerEngine& engine) : impl_(std::make_unique<Impl>(engine)) {}
SamplerServer::~SamplerServer() { stop(); }

int SamplerServer::bind(const std::string& host, int port)
{
    if (port == 0) return impl_->server.bind_to_any_port(host);
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool SamplerServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void SamplerServer::stop() { impl_->server.stop(); }
void SamplerServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace docsynth
