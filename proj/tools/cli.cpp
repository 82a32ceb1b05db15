#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "docsynth/config.hpp"
#include "docsynth/data.hpp"
#include "docsynth/evaluator.hpp"
#include "docsynth/json.hpp"
#include "docsynth/sampler.hpp"
#include "docsynth/trainer.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace docsynth::cli {

namespace {

/// A usage or validation problem (exit 1), as opposed to a runtime failure.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                    const json& resolved)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << json{{"command", command}, {"argv", argv}, {"resolved", resolved}}.dump(2) << '\n';
}

json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw UsageError(path.string() + " is not valid JSON");
    return j;
}

struct TrainArgs {
    std::string config_file;
    std::optional<std::string> data, out, preset, backbone, resume;
    std::optional<int> image_size, batch_size, k, max_objects;
    std::optional<int64_t> iters, checkpoint_every;
    std::optional<uint64_t> seed;
    std::optional<double> lr;
    std::array<std::optional<double>, 6> lambda;
};

/// default < config file < flags
TrainConfig resolve_train_config(const TrainArgs& a)
{
    TrainConfig config;
    if (!a.config_file.empty()) merge_json(config, read_json_file(a.config_file));

    json overlay = json::object();
    json model = json::object();
    if (a.preset) overlay["preset"] = *a.preset;
    if (a.image_size) model["image_size"] = *a.image_size;
    if (a.backbone) model["backbone"] = *a.backbone;
    if (a.k) model["lstm_layers"] = *a.k;
    if (!model.empty()) overlay["model"] = model;
    if (a.batch_size) overlay["batch_size"] = *a.batch_size;
    if (a.iters) overlay["iterations"] = *a.iters;
    if (a.seed) overlay["seed"] = *a.seed;
    if (a.max_objects) overlay["max_objects"] = *a.max_objects;
    if (a.checkpoint_every) overlay["checkpoint_every"] = *a.checkpoint_every;
    if (a.lr) overlay["lr_g"] = overlay["lr_d"] = *a.lr;
    if (a.data) overlay["data_dir"] = *a.data;
    if (a.out) overlay["out_dir"] = *a.out;
    if (std::any_of(a.lambda.begin(), a.lambda.end(), [](const auto& l) { return l.has_value(); })) {
        auto w = config.lambdas.as_array();
        for (size_t i = 0; i < 6; ++i)
            if (a.lambda[i]) w[i] = *a.lambda[i];
        overlay["lambdas"] = w;
    }
    merge_json(config, overlay);
    config.validate();
    return config;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out)
{
    const auto config = resolve_train_config(a);
    if (config.data_dir.empty()) throw UsageError("train needs --data (or data_dir in the config file)");
    const auto vocab = CategoryVocab::publaynet();
    IngestFilters filters;
    filters.max_objects = config.max_objects;
    filters.canvas_size = config.model.image_size;
    const auto index = open_dataset_dir(config.data_dir, vocab, filters);
    LoadReport report;
    const auto samples = load_samples(index, config.model.image_size, &report);
    for (const auto& [path, why] : report.skipped) out << "skipped " << path.string() << ": " << why << '\n';
    if (samples.empty()) throw std::runtime_error("no usable training pages in " + config.data_dir);
    out << "training on " << samples.size() << " pages (" << index.stats.raw_images << " in the annotation file)\n";

    TrainLoopOptions options;
    options.out_dir = config.out_dir;
    if (a.resume) options.resume_from = fs::path(*a.resume);
    const auto every = std::max<int64_t>(1, config.iterations / 20);
    options.on_step = [&](int64_t it, const StepResult& step) {
        if (it % every == 0 || it == config.iterations)
            out << "iter " << it << " total " << step.generator.total << " l1_img " << step.generator.l1_img << '\n';
    };
    const auto result = train_loop(config, vocab, samples, options);
    // train_loop writes the bare config manifest; add the invocation.
    write_manifest(fs::path(config.out_dir) / "manifest.json", "train", argv, run_manifest(config, vocab));
    out << "finished at iteration " << result.final_iteration << ", checkpoint " << result.last_checkpoint.string()
        << '\n';
    return kOk;
}

struct EvalArgs {
    EvalOptions options;
    std::string manifest;
};

int cmd_eval(EvalArgs a, const std::vector<std::string>& argv, std::ostream& out)
{
    if (a.options.report_path.empty()) a.options.report_path = "metrics.json";
    const auto report = eval_run(a.options);
    const fs::path manifest = a.manifest.empty() ? a.options.report_path.parent_path() / "eval_manifest.json"
                                                 : fs::path(a.manifest);
    write_manifest(manifest, "eval", argv,
                   {{"checkpoint", a.options.checkpoint.string()},
                    {"data_dir", a.options.data_dir.string()},
                    {"n_layouts", a.options.n_layouts},
                    {"samples_per_layout", a.options.samples_per_layout},
                    {"seed", a.options.seed},
                    {"extractor", a.options.extractor},
                    {"asset_dir", a.options.asset_dir.string()},
                    {"report", a.options.report_path.string()}});
    out << report.to_json().dump(2) << '\n';
    return kOk;
}

struct GenerateArgs {
    std::string checkpoint, layout, out = "samples";
    int samples = 3;
    std::optional<uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out)
{
    const auto engine = SamplerEngine::from_checkpoint(a.checkpoint);
    const auto vocab = engine.vocab();
    GenerationRequest request;
    try {
        request.layout = load_layout(a.layout, vocab);
    } catch (const LayoutError& e) {
        throw UsageError(e.what());
    }
    request.num_samples = a.samples;
    request.seed = a.seed;
    const auto result = engine.generate(request);
    fs::create_directories(a.out);
    json images = json::array();
    for (size_t i = 0; i < result.images.size(); ++i) {
        const auto name = "sample_" + std::to_string(i) + ".png";
        std::ofstream(fs::path(a.out) / name, std::ios::binary)
            .write(reinterpret_cast<const char*>(result.images[i].png.data()),
                   static_cast<std::streamsize>(result.images[i].png.size()));
        images.push_back({{"file", name}, {"seed", result.images[i].seed}});
        out << (fs::path(a.out) / name).string() << " seed " << result.images[i].seed << '\n';
    }
    write_manifest(fs::path(a.out) / "manifest.json", "generate", argv,
                   {{"checkpoint", result.checkpoint},
                    {"iteration", result.iteration},
                    {"seed", result.seed},
                    {"layout", layout_to_json_value(result.layout, vocab)},
                    {"images", images}});
    return kOk;
}

struct ExportArgs {
    std::string checkpoint, layouts, data, out = "export";
    int samples = 2;
    int64_t n_layouts = -1;
    uint64_t seed = 0;
};

int cmd_export(const ExportArgs& a, const std::vector<std::string>& argv, std::ostream& out)
{
    const auto engine = SamplerEngine::from_checkpoint(a.checkpoint);
    const auto vocab = engine.vocab();
    std::vector<Layout> layouts;
    if (!a.layouts.empty()) {
        std::vector<fs::path> files;
        if (fs::is_directory(a.layouts)) {
            for (const auto& e : fs::directory_iterator(a.layouts))
                if (e.path().extension() == ".json") files.push_back(e.path());
            std::sort(files.begin(), files.end());
        } else {
            files.emplace_back(a.layouts);
        }
        for (const auto& f : files) layouts.push_back(load_layout(f, vocab));
    } else if (!a.data.empty()) {
        IngestFilters filters;
        filters.max_objects = engine.max_objects();
        filters.canvas_size = engine.image_size();
        for (const auto& r : open_dataset_dir(a.data, vocab, filters).records) layouts.push_back(r.layout);
    } else {
        throw UsageError("export needs --layouts or --data");
    }
    if (a.n_layouts >= 0 && static_cast<int64_t>(layouts.size()) > a.n_layouts) layouts.resize(static_cast<size_t>(a.n_layouts));
    if (layouts.empty()) throw UsageError("no layouts to export");

    const auto manifest = engine.export_dataset(layouts, a.samples, a.seed, a.out);
    // export_dataset's manifest.json lists the images; the invocation goes next to it.
    write_manifest(fs::path(a.out) / "run_manifest.json", "export", argv,
                   {{"checkpoint", engine.checkpoint_id()},
                    {"layouts", manifest.layouts},
                    {"samples_per_layout", a.samples},
                    {"seed", a.seed}});
    out << "exported " << manifest.images << " images from " << manifest.layouts << " layouts to " << a.out << '\n';
    return kOk;
}

std::atomic<SamplerServer*> g_server{nullptr};

extern "C" void on_signal(int)
{
    if (auto* s = g_server.load()) s->stop();
}

struct ServeArgs {
    std::string checkpoint, host = "127.0.0.1", manifest;
    int port = 8080;
};

int cmd_serve(const ServeArgs& a, const std::vector<std::string>& argv, std::ostream& out)
{
    auto engine = SamplerEngine::from_checkpoint(a.checkpoint);
    SamplerServer server(engine);
    const int port = server.bind(a.host, a.port);
    if (port < 0) throw std::runtime_error("cannot bind " + a.host + ":" + std::to_string(a.port));
    if (!a.manifest.empty())
        write_manifest(a.manifest, "serve", argv, {{"checkpoint", a.checkpoint}, {"host", a.host}, {"port", port}});
    out << "serving " << engine.checkpoint_id() << " on http://" << a.host << ':' << port << std::endl;
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.listen_after_bind();
    g_server = nullptr;
    return kOk;
}

struct ValidateArgs {
    std::string layout, manifest;
    int max_objects = kDefaultMaxObjects;
};

int cmd_validate(const ValidateArgs& a, const std::vector<std::string>& argv, std::ostream& out)
{
    const auto vocab = CategoryVocab::publaynet();
    Layout layout;
    try {
        layout = load_layout(a.layout, vocab);
    } catch (const LayoutError& e) {
        throw UsageError(e.what());
    }
    const auto report = validate_layout(layout, vocab, a.max_objects);
    if (!a.manifest.empty())
        write_manifest(a.manifest, "validate", argv,
                       {{"layout", a.layout}, {"max_objects", a.max_objects}, {"violations", validation_to_json(report)}});
    if (report.ok()) {
        out << a.layout << ": ok (" << layout.size() << " objects)\n";
        return kOk;
    }
    out << a.layout << ": " << report.issues.size() << " violation(s)\n"
        << validation_to_json(report).dump(2) << '\n';
    return kInvalid;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Layout-conditioned document image synthesis", "docsynth"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model on a COCO-style dataset directory");
    t->add_option("--config", train.config_file, "JSON file with TrainConfig fields")->check(CLI::ExistingFile);
    t->add_option("--data", train.data, "Dataset directory (annotations.json + images/)");
    t->add_option("--out", train.out, "Run directory");
    t->add_option("--preset", train.preset, "Width preset")->check(CLI::IsMember({"full", "desk"}));
    t->add_option("--image-size", train.image_size)->check(CLI::IsMember({64, 128}));
    t->add_option("--batch-size", train.batch_size);
    t->add_option("--iters", train.iters);
    for (size_t i = 0; i < 6; ++i) t->add_option("--lambda" + std::to_string(i + 1), train.lambda[i]);
    t->add_option("--backbone", train.backbone)->check(CLI::IsMember({"none", "vanilla", "convlstm"}));
    t->add_option("--k", train.k, "conv-LSTM layers")->check(CLI::IsMember({1, 2, 3}));
    t->add_option("--seed", train.seed);
    t->add_option("--lr", train.lr);
    t->add_option("--max-objects", train.max_objects);
    t->add_option("--checkpoint-every", train.checkpoint_every);
    t->add_option("--resume", train.resume, "Checkpoint to continue from");

    EvalArgs eval;
    std::string eval_ckpt, eval_data, eval_report, eval_assets = "assets";
    auto* e = app.add_subcommand("eval", "FID and diversity of a checkpoint");
    e->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
    e->add_option("--data", eval_data, "Dataset directory; defaults to the one recorded at training time");
    e->add_option("--n-layouts", eval.options.n_layouts);
    e->add_option("--samples", eval.options.samples_per_layout, "Samples per layout");
    e->add_option("--seed", eval.options.seed);
    e->add_option("--extractor", eval.options.extractor, "'random[:seed]' or an asset id");
    e->add_option("--asset-dir", eval_assets);
    e->add_option("--report", eval_report, "MetricReport path (default metrics.json)");
    e->add_option("--manifest", eval.manifest);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Sample images for one layout");
    g->add_option("--checkpoint", gen.checkpoint)->required();
    g->add_option("--layout", gen.layout)->required()->check(CLI::ExistingFile);
    g->add_option("--samples", gen.samples);
    g->add_option("--seed", gen.seed);
    g->add_option("--out", gen.out);

    ExportArgs exp;
    auto* x = app.add_subcommand("export", "Write a synthetic dataset with COCO annotations");
    x->add_option("--checkpoint", exp.checkpoint)->required();
    x->add_option("--layouts", exp.layouts, "Layout JSON file or directory of them");
    x->add_option("--data", exp.data, "Take layouts from a dataset directory");
    x->add_option("--n-layouts", exp.n_layouts);
    x->add_option("--samples", exp.samples, "Samples per layout");
    x->add_option("--seed", exp.seed);
    x->add_option("--out", exp.out);

    ServeArgs serve;
    auto* s = app.add_subcommand("serve", "HTTP sampling service");
    s->add_option("--checkpoint", serve.checkpoint)->required();
    s->add_option("--host", serve.host);
    s->add_option("--port", serve.port);
    s->add_option("--manifest", serve.manifest);

    ValidateArgs val;
    auto* v = app.add_subcommand("validate", "Check a layout file");
    v->add_option("--layout", val.layout)->required()->check(CLI::ExistingFile);
    v->add_option("--max-objects", val.max_objects);
    v->add_option("--manifest", val.manifest);

    std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& pe) {
        err << pe.what() << "\n\n" << app.help();
        return kInvalid;
    }

    try {
        if (t->parsed()) return cmd_train(train, argv, out);
        if (e->parsed()) {
            eval.options.checkpoint = eval_ckpt;
            eval.options.data_dir = eval_data;
            eval.options.report_path = eval_report;
            eval.options.asset_dir = eval_assets;
            return cmd_eval(eval, argv, out);
        }
        if (g->parsed()) return cmd_generate(gen, argv, out);
        if (x->parsed()) return cmd_export(exp, argv, out);
        if (s->parsed()) return cmd_serve(serve, argv, out);
        if (v->parsed()) return cmd_validate(val, argv, out);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << '\n';
        return kInvalid;
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << '\n';
        return kInvalid;
    } catch (const InvalidLayoutError& ex) {
        err << ex.what() << '\n';
        return kInvalid;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kRuntime;
    }
    return kInvalid;
}

int run(int argc, char** argv)
{
    return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace docsynth::cli
