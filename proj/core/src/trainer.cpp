#include "docsynth/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

using json = nlohmann::json;

namespace docsynth {

namespace {

uint64_t splitmix64(uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double scalar(const torch::Tensor& t)
{
    return t.defined() ? t.item<double>() : 0.0;
}

std::string dump_terms(const std::array<double, 6>& terms, int64_t iteration)
{
    std::ostringstream os;
    os << "iteration " << iteration << " {";
    for (size_t i = 0; i < terms.size(); ++i) os << (i ? ", " : "") << kLossTermNames[i] << "=" << terms[i];
    os << "}";
    return os.str();
}

}  // namespace

uint64_t step_seed(uint64_t seed, int64_t iteration)
{
    return splitmix64(splitmix64(seed) ^ static_cast<uint64_t>(iteration));
}

std::vector<size_t> batch_indices(uint64_t seed, int64_t iteration, size_t dataset_size, int batch_size)
{
    if (dataset_size == 0) throw std::invalid_argument("cannot draw batches from an empty dataset");
    std::vector<size_t> out;
    out.reserve(static_cast<size_t>(batch_size));
    int64_t cached_epoch = -1;
    std::vector<size_t> perm(dataset_size);
    const auto n = static_cast<int64_t>(dataset_size);
    for (int j = 0; j < batch_size; ++j) {
        const int64_t position = (iteration - 1) * batch_size + j;
        const int64_t epoch = position / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), size_t{0});
            std::mt19937_64 rng(splitmix64(seed ^ 0x5bd1e995ULL) + static_cast<uint64_t>(epoch));
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<size_t>(position % n)]);
    }
    return out;
}

TrainBatch collate(std::span<const Sample> data, std::span<const size_t> indices, int image_size)
{
    std::vector<torch::Tensor> images;
    std::vector<Layout> layouts;
    for (size_t idx : indices) {
        const auto& s = data[idx];
        TORCH_CHECK(s.image.size(1) == image_size && s.image.size(2) == image_size, "sample size mismatch");
        images.push_back(s.image);
        layouts.push_back(s.layout);
    }
    return {torch::stack(images), make_layout_batch(layouts, image_size)};
}

Trainer::Trainer(TrainConfig config, CategoryVocab vocab) : config_(std::move(config)), vocab_(std::move(vocab))
{
    config_.model.num_classes = vocab_.size();
    config_.validate();
    torch::manual_seed(config_.seed);
    generator_ = GeneratorBundle(config_.model);
    discriminators_ = DiscriminatorBundle(config_.model);
    const auto betas = std::make_tuple(config_.beta1, config_.beta2);
    opt_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(),
                                                  torch::optim::AdamOptions(config_.lr_g).betas(betas));
    opt_d_ = std::make_unique<torch::optim::Adam>(discriminators_->parameters(),
                                                  torch::optim::AdamOptions(config_.lr_d).betas(betas));
}

ForwardPass Trainer::forward(const TrainBatch& batch, at::Generator& rng)
{
    const auto& layouts = batch.layouts;
    const auto m = config_.model.crop_size();
    generator_->train();

    ForwardPass p;
    p.crops_real = crop_rects(batch.images, layouts.rects, layouts.owner, m);
    p.posterior = generator_->encode_objects(p.crops_real, layouts.labels);
    p.z_crop = reparameterize(p.posterior, torch::randn(p.posterior.mu.sizes(), rng));
    p.z_prior = torch::randn({layouts.num_objects(), config_.model.latent_dim}, rng);

    p.reconstructed = generator_->generator(layouts, p.z_crop);
    p.generated = generator_->generator(layouts, p.z_prior);

    p.crops_generated = crop_rects(p.generated, layouts.rects, layouts.owner, m);
    if (config_.object_reconstruction == ObjectReconstruction::Pixel || config_.object_disc_on_reconstruction)
        p.crops_reconstructed = crop_rects(p.reconstructed, layouts.rects, layouts.owner, m);
    p.z_regressed = generator_->encode_generated(p.crops_generated, layouts.labels).mu;
    return p;
}

DiscLosses Trainer::discriminator_step(const TrainBatch& batch, const ForwardPass& p)
{
    auto disc_loss = config_.gan_mode == GanMode::Hinge ? losses::hinge_disc : losses::gan_disc;
    discriminators_->train();
    opt_d_->zero_grad();

    auto real_img = discriminators_->image(batch.images);
    auto fake_img = discriminators_->image(torch::cat({p.reconstructed.detach(), p.generated.detach()}));
    auto gan_img = disc_loss(real_img, fake_img);

    auto real_obj = discriminators_->object(p.crops_real.detach());
    auto fake_crops = p.crops_generated.detach();
    if (config_.object_disc_on_reconstruction) fake_crops = torch::cat({fake_crops, p.crops_reconstructed.detach()});
    auto fake_obj = discriminators_->object(fake_crops);
    auto gan_obj = disc_loss(real_obj.realness, fake_obj.realness);
    auto ac_real = losses::aux_class(real_obj.class_logits, batch.layouts.labels);

    auto total = gan_img + gan_obj + ac_real;
    DiscLosses out{scalar(gan_img), scalar(gan_obj), scalar(ac_real), scalar(total)};
    if (!std::isfinite(out.total)) {
        const std::string term = !std::isfinite(out.gan_img) ? "d_gan_img" : !std::isfinite(out.gan_obj) ? "d_gan_obj" : "d_ac_real";
        std::ostringstream os;
        os << "iteration " << iteration_ + 1 << " {d_gan_img=" << out.gan_img << ", d_gan_obj=" << out.gan_obj
           << ", d_ac_real=" << out.ac_real << "}";
        throw NonFiniteLossError(term, os.str());
    }
    total.backward();
    opt_d_->step();
    return out;
}

LossBreakdown Trainer::generator_step(const TrainBatch& batch, const ForwardPass& p)
{
    const auto& w = config_.lambdas;
    auto gen_loss = config_.gan_mode == GanMode::Hinge ? losses::hinge_gen : losses::gan_gen;
    // Discriminators only score here; eval mode keeps their power-iteration state fixed.
    discriminators_->eval();
    opt_g_->zero_grad();

    LossTerms terms;
    if (w.gan_img != 0.0)
        terms.gan_img = gen_loss(discriminators_->image(torch::cat({p.reconstructed, p.generated})));
    if (w.gan_obj != 0.0 || w.ac_obj != 0.0) {
        auto obj = discriminators_->object(p.crops_generated);
        terms.gan_obj = gen_loss(obj.realness);
        terms.ac_obj = losses::aux_class(obj.class_logits, batch.layouts.labels);
        if (config_.object_disc_on_reconstruction) {
            auto rec = discriminators_->object(p.crops_reconstructed);
            terms.gan_obj = 0.5 * (terms.gan_obj + gen_loss(rec.realness));
            terms.ac_obj = 0.5 * (terms.ac_obj + losses::aux_class(rec.class_logits, batch.layouts.labels));
        }
    }
    terms.kl = losses::kl(p.posterior);
    terms.l1_img = losses::l1(p.reconstructed, batch.images);
    terms.l1_obj = config_.object_reconstruction == ObjectReconstruction::Latent
                       ? losses::l1(p.z_regressed, p.z_prior)
                       : losses::l1(p.crops_reconstructed, p.crops_real);

    std::array<double, 6> values{};
    const auto t = terms.as_array();
    for (size_t i = 0; i < t.size(); ++i) values[i] = scalar(t[i]);
    auto breakdown = total_generator_loss(values, w);
    for (size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) throw NonFiniteLossError(kLossTermNames[i], dump_terms(values, iteration_ + 1));

    weighted_total(terms, w).backward();
    opt_g_->step();
    discriminators_->train();
    return breakdown;
}

StepResult Trainer::train_step(const TrainBatch& batch)
{
    auto rng = at::make_generator<at::CPUGeneratorImpl>(step_seed(config_.seed, iteration_ + 1));
    auto pass = forward(batch, rng);
    StepResult result;
    // With every adversarial weight at zero the discriminators cannot influence G.
    if (config_.lambdas.adversarial()) result.discriminator = discriminator_step(batch, pass);
    result.generator = generator_step(batch, pass);
    ++iteration_;
    return result;
}

Checkpoint Trainer::to_checkpoint() const
{
    Checkpoint ckpt;
    ckpt.meta["format"] = "docsynth";
    ckpt.meta["iteration"] = iteration_;
    ckpt.meta["config"] = to_json_value(config_);
    ckpt.meta["vocab"] = vocab_.names();
    export_module("generator", *generator_, ckpt);
    export_module("discriminator", *discriminators_, ckpt);
    export_adam("optim_g", *generator_, *opt_g_, ckpt);
    export_adam("optim_d", *discriminators_, *opt_d_, ckpt);
    return ckpt;
}

void Trainer::save(const std::filesystem::path& path) const
{
    write_checkpoint(path, to_checkpoint());
}

void Trainer::restore(const Checkpoint& ckpt)
{
    ModelConfig stored;
    std::vector<std::string> names;
    try {
        stored = train_config_from_json(ckpt.meta.at("config")).model;
        names = ckpt.meta.at("vocab").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    auto diffs = config_differences(config_.model, stored);
    if (names != vocab_.names()) diffs.push_back("vocab differs");
    if (!diffs.empty()) {
        std::string msg = "checkpoint does not match the configured model:";
        for (const auto& d : diffs) msg += "\n  " + d;
        throw ConfigMismatchError(msg);
    }
    import_module("generator", *generator_, ckpt);
    import_module("discriminator", *discriminators_, ckpt);
    import_adam("optim_g", *generator_, *opt_g_, ckpt);
    import_adam("optim_d", *discriminators_, *opt_d_, ckpt);
    iteration_ = ckpt.meta.value("iteration", int64_t{0});
}

std::string loss_csv_header()
{
    return "iteration,gan_img,gan_obj,ac_obj,kl,l1_img,l1_obj,total";
}

std::string loss_csv_row(int64_t iteration, const LossBreakdown& b)
{
    std::ostringstream os;
    os << std::setprecision(17) << iteration;
    for (double t : b.terms()) os << ',' << t;
    os << ',' << b.total;
    return os.str();
}

json run_manifest(const TrainConfig& config, const CategoryVocab& vocab)
{
    return {{"config", to_json_value(config)}, {"vocab", vocab.names()}};
}

namespace {

// Keeps the header and rows with iteration <= last; used when resuming.
void truncate_log(const std::filesystem::path& path, int64_t last)
{
    std::ifstream in(path);
    if (!in) return;
    std::vector<std::string> kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (kept.empty()) {
            kept.push_back(line);
            continue;
        }
        if (std::stoll(line.substr(0, line.find(','))) <= last) kept.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
}

}  // namespace

TrainLoopResult train_loop(const TrainConfig& config, const CategoryVocab& vocab, std::span<const Sample> data,
                           const TrainLoopOptions& options)
{
    if (data.empty()) throw std::invalid_argument("training dataset is empty");
    Trainer trainer(config, vocab);
    const auto& cfg = trainer.config();
    std::filesystem::create_directories(options.out_dir);

    const auto log_path = options.out_dir / "losses.csv";
    if (options.resume_from) {
        trainer.load(*options.resume_from);
        truncate_log(log_path, trainer.iteration());
    }
    {
        std::ofstream manifest(options.out_dir / "manifest.json", std::ios::trunc);
        manifest << run_manifest(cfg, vocab).dump(2) << '\n';
    }
    const bool fresh_log = !std::filesystem::exists(log_path) || trainer.iteration() == 0;
    std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
    if (fresh_log) log << loss_csv_header() << '\n';

    const int64_t end = options.stop_after >= 0 ? std::min(options.stop_after, cfg.iterations) : cfg.iterations;
    TrainLoopResult result;
    auto checkpoint = [&](int64_t it) {
        std::ostringstream name;
        name << "checkpoint_" << std::setw(6) << std::setfill('0') << it << ".ckpt";
        const auto ckpt = trainer.to_checkpoint();
        write_checkpoint(options.out_dir / name.str(), ckpt);
        write_checkpoint(options.out_dir / "latest.ckpt", ckpt);
        result.last_checkpoint = options.out_dir / name.str();
    };

    while (trainer.iteration() < end) {
        const int64_t it = trainer.iteration() + 1;
        const auto idx = batch_indices(cfg.seed, it, data.size(), cfg.batch_size);
        auto batch = collate(data, idx, cfg.model.image_size);
        auto step = trainer.train_step(batch);
        result.losses.push_back(step.generator);
        log << loss_csv_row(it, step.generator) << '\n';
        log.flush();
        if (options.on_step) options.on_step(it, step);
        if (it % cfg.checkpoint_every == 0) checkpoint(it);
    }
    if (result.last_checkpoint.empty() || trainer.iteration() % cfg.checkpoint_every != 0) checkpoint(trainer.iteration());
    result.final_iteration = trainer.iteration();
    return result;
}

}  // namespace docsynth
