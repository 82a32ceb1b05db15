#include "docsynth/config.hpp"

using json = nlohmann::json;

namespace docsynth {

std::string_view to_string(ReasoningBackbone b)
{
    switch (b) {
    case ReasoningBackbone::None: return "none";
    case ReasoningBackbone::VanillaLstm: return "vanilla";
    case ReasoningBackbone::ConvLstm: return "convlstm";
    }
    return "convlstm";
}

ReasoningBackbone parse_backbone(std::string_view name)
{
    if (name == "none") return ReasoningBackbone::None;
    if (name == "vanilla" || name == "vanilla_lstm") return ReasoningBackbone::VanillaLstm;
    if (name == "convlstm" || name == "conv_lstm") return ReasoningBackbone::ConvLstm;
    throw ConfigError("unknown reasoning backbone '" + std::string(name) + "' (expected none, vanilla or convlstm)");
}

ModelConfig ModelConfig::full(int image_size)
{
    ModelConfig c;
    c.image_size = image_size;
    c.hidden_channels = image_size == 64 ? 256 : 512;
    return c;
}

ModelConfig ModelConfig::desk(int image_size)
{
    ModelConfig c;
    c.image_size = image_size;
    c.embed_dim = 16;
    c.latent_dim = 16;
    c.object_encoder_width = 16;
    c.object_encoder_hidden = 64;
    c.layout_encoder_width = 32;
    c.hidden_channels = 64;
    c.vanilla_lstm_hidden = 64;
    c.image_disc_width = 16;
    c.object_disc_width = 16;
    return c;
}

ModelConfig ModelConfig::preset(std::string_view name, int image_size)
{
    if (name == "full") return full(image_size);
    if (name == "desk") return desk(image_size);
    throw ConfigError("unknown model preset '" + std::string(name) + "' (expected full or desk)");
}

void ModelConfig::validate() const
{
    if (image_size != 64 && image_size != 128) throw ConfigError("image_size must be 64 or 128");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (embed_dim < 1 || latent_dim < 1) throw ConfigError("embed_dim and latent_dim must be positive");
    if (object_encoder_width < 1 || object_encoder_hidden < 1 || layout_encoder_width < 1)
        throw ConfigError("encoder widths must be positive");
    if (hidden_channels < 8 || hidden_channels % 8 != 0)
        throw ConfigError("hidden_channels must be a positive multiple of 8");
    if (lstm_layers < 1) throw ConfigError("lstm_layers must be >= 1");
    if (lstm_kernel < 1 || lstm_kernel % 2 == 0) throw ConfigError("lstm_kernel must be odd");
    if (vanilla_lstm_hidden < 1) throw ConfigError("vanilla_lstm_hidden must be positive");
    if (image_disc_width < 1 || object_disc_width < 1) throw ConfigError("discriminator widths must be positive");
}

LossWeights LossWeights::from_array(const std::array<double, 6>& w)
{
    return {w[0], w[1], w[2], w[3], w[4], w[5]};
}

void TrainConfig::validate() const
{
    model.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (lr_g <= 0.0 || lr_d <= 0.0) throw ConfigError("learning rates must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
    if (max_objects < 1) throw ConfigError("max_objects must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    for (double w : lambdas.as_array())
        if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

json to_json_value(const ModelConfig& c)
{
    return {
        {"image_size", c.image_size},
        {"num_classes", c.num_classes},
        {"embed_dim", c.embed_dim},
        {"latent_dim", c.latent_dim},
        {"object_encoder_width", c.object_encoder_width},
        {"object_encoder_hidden", c.object_encoder_hidden},
        {"layout_encoder_width", c.layout_encoder_width},
        {"hidden_channels", c.hidden_channels},
        {"backbone", std::string(to_string(c.backbone))},
        {"lstm_layers", c.lstm_layers},
        {"lstm_kernel", c.lstm_kernel},
        {"vanilla_lstm_hidden", c.vanilla_lstm_hidden},
        {"image_disc_width", c.image_disc_width},
        {"object_disc_width", c.object_disc_width},
        {"generator_spectral_norm", c.generator_spectral_norm},
    };
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& field)
{
    if (auto it = j.find(key); it != j.end()) {
        try {
            field = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config field '") + key + "': " + e.what());
        }
    }
}

}  // namespace

void merge_json(ModelConfig& c, const json& j)
{
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    take(j, "image_size", c.image_size);
    take(j, "num_classes", c.num_classes);
    take(j, "embed_dim", c.embed_dim);
    take(j, "latent_dim", c.latent_dim);
    take(j, "object_encoder_width", c.object_encoder_width);
    take(j, "object_encoder_hidden", c.object_encoder_hidden);
    take(j, "layout_encoder_width", c.layout_encoder_width);
    take(j, "hidden_channels", c.hidden_channels);
    if (auto it = j.find("backbone"); it != j.end()) c.backbone = parse_backbone(it->get<std::string>());
    take(j, "lstm_layers", c.lstm_layers);
    take(j, "lstm_kernel", c.lstm_kernel);
    take(j, "vanilla_lstm_hidden", c.vanilla_lstm_hidden);
    take(j, "image_disc_width", c.image_disc_width);
    take(j, "object_disc_width", c.object_disc_width);
    take(j, "generator_spectral_norm", c.generator_spectral_norm);
}

ModelConfig model_config_from_json(const json& j)
{
    ModelConfig c;
    merge_json(c, j);
    return c;
}

json to_json_value(const TrainConfig& c)
{
    const auto w = c.lambdas.as_array();
    return {
        {"preset", c.preset},
        {"model", to_json_value(c.model)},
        {"batch_size", c.batch_size},
        {"iterations", c.iterations},
        {"lambdas", w},
        {"lr_g", c.lr_g},
        {"lr_d", c.lr_d},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"seed", c.seed},
        {"max_objects", c.max_objects},
        {"checkpoint_every", c.checkpoint_every},
        {"object_reconstruction", c.object_reconstruction == ObjectReconstruction::Latent ? "latent" : "pixel"},
        {"gan_mode", c.gan_mode == GanMode::NonSaturating ? "nonsaturating" : "hinge"},
        {"object_disc_on_reconstruction", c.object_disc_on_reconstruction},
        {"data_dir", c.data_dir},
        {"out_dir", c.out_dir},
    };
}

void merge_json(TrainConfig& c, const json& j)
{
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    // A preset or image size change re-derives the widths before explicit model keys apply.
    std::string preset = c.preset;
    int image_size = c.model.image_size;
    take(j, "preset", preset);
    if (auto it = j.find("model"); it != j.end() && it->contains("image_size"))
        image_size = it->at("image_size").get<int>();
    if (preset != c.preset || image_size != c.model.image_size) {
        const auto classes = c.model.num_classes;
        const auto backbone = c.model.backbone;
        const auto layers = c.model.lstm_layers;
        c.model = ModelConfig::preset(preset, image_size);
        c.model.num_classes = classes;
        c.model.backbone = backbone;
        c.model.lstm_layers = layers;
        c.preset = preset;
    }
    if (auto it = j.find("model"); it != j.end()) merge_json(c.model, *it);

    take(j, "batch_size", c.batch_size);
    take(j, "iterations", c.iterations);
    if (auto it = j.find("lambdas"); it != j.end()) {
        if (!it->is_array() || it->size() != 6) throw ConfigError("lambdas must be an array of 6 numbers");
        c.lambdas = LossWeights::from_array(it->get<std::array<double, 6>>());
    }
    take(j, "lr_g", c.lr_g);
    take(j, "lr_d", c.lr_d);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "seed", c.seed);
    take(j, "max_objects", c.max_objects);
    take(j, "checkpoint_every", c.checkpoint_every);
    if (auto it = j.find("object_reconstruction"); it != j.end()) {
        const auto v = it->get<std::string>();
        if (v == "latent") c.object_reconstruction = ObjectReconstruction::Latent;
        else if (v == "pixel") c.object_reconstruction = ObjectReconstruction::Pixel;
        else throw ConfigError("object_reconstruction must be 'latent' or 'pixel'");
    }
    if (auto it = j.find("gan_mode"); it != j.end()) {
        const auto v = it->get<std::string>();
        if (v == "nonsaturating") c.gan_mode = GanMode::NonSaturating;
        else if (v == "hinge") c.gan_mode = GanMode::Hinge;
        else throw ConfigError("gan_mode must be 'nonsaturating' or 'hinge'");
    }
    take(j, "object_disc_on_reconstruction", c.object_disc_on_reconstruction);
    take(j, "data_dir", c.data_dir);
    take(j, "out_dir", c.out_dir);
}

TrainConfig train_config_from_json(const json& j)
{
    TrainConfig c;
    merge_json(c, j);
    return c;
}

}  // namespace docsynth
