#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "docsynth/layout.hpp"

namespace docsynth {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ReasoningBackbone { None, VanillaLstm, ConvLstm };

std::string_view to_string(ReasoningBackbone b);
ReasoningBackbone parse_backbone(std::string_view name);

/// Network shapes. Channel widths are ours; only the backbone depth k and the
/// image sizes come from the reference model.
struct ModelConfig {
    int image_size = 128;
    int64_t num_classes = 5;
    int64_t embed_dim = 64;   // d_e
    int64_t latent_dim = 64;  // d_z

    int64_t object_encoder_width = 64;
    int64_t object_encoder_hidden = 256;

    int64_t layout_encoder_width = 128;
    int64_t hidden_channels = 512;  // C_h

    ReasoningBackbone backbone = ReasoningBackbone::ConvLstm;
    int lstm_layers = 3;  // k
    int lstm_kernel = 3;
    int64_t vanilla_lstm_hidden = 256;

    int64_t image_disc_width = 64;
    int64_t object_disc_width = 64;
    bool generator_spectral_norm = false;

    int64_t crop_size() const { return image_size / 4; }   // M
    int64_t hidden_size() const { return image_size / 8; } // S'
    int64_t object_channels() const { return embed_dim + latent_dim; }

    /// Full-size widths: C_h = 256 at 64 px, 512 at 128 px.
    static ModelConfig full(int image_size);
    /// Narrow widths for CPU desk runs and tests.
    static ModelConfig desk(int image_size);
    static ModelConfig preset(std::string_view name, int image_size);

    /// Throws ConfigError describing the first inconsistent field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// λ1..λ6 in the order image GAN, object GAN, auxiliary class, KL, image L1, object L1.
struct LossWeights {
    double gan_img = 0.01;
    double gan_obj = 1.0;
    double ac_obj = 8.0;
    double kl = 1.0;
    double l1_img = 1.0;
    double l1_obj = 1.0;

    std::array<double, 6> as_array() const { return {gan_img, gan_obj, ac_obj, kl, l1_img, l1_obj}; }
    static LossWeights from_array(const std::array<double, 6>& w);
    bool adversarial() const { return gan_img != 0.0 || gan_obj != 0.0 || ac_obj != 0.0; }

    bool operator==(const LossWeights&) const = default;
};

enum class ObjectReconstruction { Latent, Pixel };
enum class GanMode { NonSaturating, Hinge };

struct TrainConfig {
    std::string preset = "full";
    ModelConfig model = ModelConfig::full(128);
    int batch_size = 16;
    int64_t iterations = 300000;
    LossWeights lambdas;
    double lr_g = 1e-4;
    double lr_d = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    uint64_t seed = 0;
    int max_objects = kDefaultMaxObjects;
    int64_t checkpoint_every = 10000;

    ObjectReconstruction object_reconstruction = ObjectReconstruction::Latent;
    GanMode gan_mode = GanMode::NonSaturating;
    /// Also show crops of the reconstruction I' to the object discriminator.
    bool object_disc_on_reconstruction = false;

    std::string data_dir;
    std::string out_dir = "run";

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json_value(const ModelConfig& c);
nlohmann::json to_json_value(const TrainConfig& c);

/// Overwrites only the fields present in `j`.
void merge_json(ModelConfig& c, const nlohmann::json& j);
void merge_json(TrainConfig& c, const nlohmann::json& j);

ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace docsynth
