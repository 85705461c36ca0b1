#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bcq/errors.hpp"

namespace bcq {

struct StageConfig {
    std::string optimizer; // "adam" or "adamw"
    double lr = 1e-3;
    double lr_gamma = 0.5; // multiplicative decay applied every lr_step epochs
    int lr_step = 10;
    int epochs = 10;
    int batch_size = 16;
    double weight_decay = 0.0; // adamw only
    double clip_norm = 1.0;    // global gradient norm ceiling, <= 0 disables
};

// Every hyperparameter of the model family in one record. Two presets are
// built in: "tiny" (desk-scale, used by the tests) and "reference-large"
// (the full-size layout; instantiating it is only needed for parameter
// accounting and FLOP reports).
struct ModelConfig {
    std::string preset = "tiny";

    // shared embedding space
    int embed_dim = 32;

    // input geometry
    int resolution = 64;
    int text_max_len = 28;
    int vocab_size = 512;

    // text encoder
    int text_embed_factor = 8; // small factorised embedding width
    int text_hidden = 32;
    int text_bottleneck = 16;
    int text_layers = 2;
    int text_heads = 4;

    // image encoder: {stem, ib_stage1, ib_stage2, hybrid1, hybrid2, hybrid3}
    std::vector<int> image_channels = {8, 12, 16, 24, 32, 32};
    int ib_blocks_per_stage = 2;
    int ib_expansion = 4;
    int image_heads = 4;
    // transformer layers inside the three hybrid blocks
    std::vector<int> hybrid_layers = {2, 4, 3};

    std::array<double, 3> norm_mean = {0.481, 0.458, 0.408};
    std::array<double, 3> norm_std = {0.269, 0.261, 0.276};

    // fusion
    int fusion_heads = 8;
    std::string qgcam_variant = "standard"; // standard | token_balance | visual_query

    // decoder
    int decoder_layers = 4;
    int decoder_dim = 96;
    int decoder_heads = 4;
    double unfreeze_ratio = 0.5;
    int max_new_tokens = 8;

    // alignment
    int teacher_dim = 16;
    double temperature = 0.07;
    double alpha = 0.5;
    double beta = 0.5;
    double lambda1 = 1.0;
    double lambda2 = 1.0;

    uint64_t seed = 42;

    StageConfig stage1{"adam", 1e-3, 0.5, 10, 16, 16, 0.0, 1.0};
    StageConfig stage2{"adamw", 1.5e-3, 0.5, 20, 40, 8, 0.01, 1.0};

    static ModelConfig preset_tiny();
    static ModelConfig preset_reference_large();
    static ModelConfig named_preset(const std::string& name);

    // Parse from JSON text. A "preset" key selects the base; any other keys
    // override individual fields. Unknown keys raise ConfigError.
    static ModelConfig from_json_text(const std::string& text);
    static ModelConfig load(const std::string& path);

    std::string to_json_text() const;

    // throws ConfigError naming the offending field
    void validate() const;

    // side length of the final image feature map
    int grid_size() const;
    // visual token count N
    int patch_count() const { return grid_size() * grid_size(); }
    // decoder sequence length N + text_max_len
    int seq_len() const { return patch_count() + text_max_len; }
};

} // namespace bcq
