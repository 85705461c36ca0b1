#include "bcq/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bcq {

using nlohmann::json;
using nlohmann::ordered_json;

ModelConfig ModelConfig::preset_tiny() {
    ModelConfig c;
    c.preset = "tiny";
    return c; // struct defaults are the tiny preset
}

ModelConfig ModelConfig::preset_reference_large() {
    ModelConfig c;
    c.preset = "reference-large";
    c.embed_dim = 512;
    c.resolution = 224;
    c.text_max_len = 77;
    c.vocab_size = 30522;
    c.text_embed_factor = 128;
    c.text_hidden = 768;
    c.text_bottleneck = 192;
    c.text_layers = 24;
    c.text_heads = 12;
    c.image_channels = {32, 64, 128, 256, 320, 384};
    c.ib_blocks_per_stage = 2;
    c.ib_expansion = 4;
    c.image_heads = 8;
    c.fusion_heads = 8;
    c.decoder_layers = 4;
    c.decoder_dim = 128;
    c.decoder_heads = 4;
    c.unfreeze_ratio = 0.5;
    c.max_new_tokens = 16;
    c.teacher_dim = 512;
    c.stage1 = StageConfig{"adam", 1e-5, 0.5, 10, 64, 32, 0.0, 1.0};
    c.stage2 = StageConfig{"adamw", 1e-4, 0.1, 5, 15, 32, 0.01, 1.0};
    return c;
}

ModelConfig ModelConfig::named_preset(const std::string& name) {
    if (name == "tiny") return preset_tiny();
    if (name == "reference-large") return preset_reference_large();
    throw ConfigError("preset: unknown preset \"" + name + "\"");
}

namespace {

void apply_stage(StageConfig& s, const json& j, const std::string& which) {
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "optimizer")
                s.optimizer = value.get<std::string>();
            else if (key == "lr")
                s.lr = value.get<double>();
            else if (key == "lr_gamma")
                s.lr_gamma = value.get<double>();
            else if (key == "lr_step")
                s.lr_step = value.get<int>();
            else if (key == "epochs")
                s.epochs = value.get<int>();
            else if (key == "batch_size")
                s.batch_size = value.get<int>();
            else if (key == "weight_decay")
                s.weight_decay = value.get<double>();
            else if (key == "clip_norm")
                s.clip_norm = value.get<double>();
            else
                throw ConfigError("unknown field: " + which + "." + key);
        } catch (const json::exception&) {
            throw ConfigError(which + "." + key + ": wrong type");
        }
    }
}

template <typename V>
V get_field(const json& value, const std::string& key) {
    try {
        return value.get<V>();
    } catch (const json::exception&) {
        throw ConfigError(key + ": wrong type");
    }
}

} // namespace

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("top level must be an object");
    ModelConfig c = j.contains("preset")
                        ? named_preset(get_field<std::string>(j["preset"], "preset"))
                        : preset_tiny();
    for (const auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        if (key == "embed_dim")
            c.embed_dim = get_field<int>(value, key);
        else if (key == "resolution")
            c.resolution = get_field<int>(value, key);
        else if (key == "text_max_len")
            c.text_max_len = get_field<int>(value, key);
        else if (key == "vocab_size")
            c.vocab_size = get_field<int>(value, key);
        else if (key == "text_embed_factor")
            c.text_embed_factor = get_field<int>(value, key);
        else if (key == "text_hidden")
            c.text_hidden = get_field<int>(value, key);
        else if (key == "text_bottleneck")
            c.text_bottleneck = get_field<int>(value, key);
        else if (key == "text_layers")
            c.text_layers = get_field<int>(value, key);
        else if (key == "text_heads")
            c.text_heads = get_field<int>(value, key);
        else if (key == "image_channels")
            c.image_channels = get_field<std::vector<int>>(value, key);
        else if (key == "ib_blocks_per_stage")
            c.ib_blocks_per_stage = get_field<int>(value, key);
        else if (key == "ib_expansion")
            c.ib_expansion = get_field<int>(value, key);
        else if (key == "image_heads")
            c.image_heads = get_field<int>(value, key);
        else if (key == "hybrid_layers")
            c.hybrid_layers = get_field<std::vector<int>>(value, key);
        else if (key == "norm_mean")
            c.norm_mean = get_field<std::array<double, 3>>(value, key);
        else if (key == "norm_std")
            c.norm_std = get_field<std::array<double, 3>>(value, key);
        else if (key == "fusion_heads")
            c.fusion_heads = get_field<int>(value, key);
        else if (key == "qgcam_variant")
            c.qgcam_variant = get_field<std::string>(value, key);
        else if (key == "decoder_layers")
            c.decoder_layers = get_field<int>(value, key);
        else if (key == "decoder_dim")
            c.decoder_dim = get_field<int>(value, key);
        else if (key == "decoder_heads")
            c.decoder_heads = get_field<int>(value, key);
        else if (key == "unfreeze_ratio")
            c.unfreeze_ratio = get_field<double>(value, key);
        else if (key == "max_new_tokens")
            c.max_new_tokens = get_field<int>(value, key);
        else if (key == "teacher_dim")
            c.teacher_dim = get_field<int>(value, key);
        else if (key == "temperature")
            c.temperature = get_field<double>(value, key);
        else if (key == "alpha")
            c.alpha = get_field<double>(value, key);
        else if (key == "beta")
            c.beta = get_field<double>(value, key);
        else if (key == "lambda1")
            c.lambda1 = get_field<double>(value, key);
        else if (key == "lambda2")
            c.lambda2 = get_field<double>(value, key);
        else if (key == "seed")
            c.seed = get_field<uint64_t>(value, key);
        else if (key == "stage1") {
            if (!value.is_object()) throw ConfigError("stage1: must be an object");
            apply_stage(c.stage1, value, "stage1");
        } else if (key == "stage2") {
            if (!value.is_object()) throw ConfigError("stage2: must be an object");
            apply_stage(c.stage2, value, "stage2");
        } else {
            throw ConfigError("unknown field: " + key);
        }
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

std::string ModelConfig::to_json_text() const {
    ordered_json j;
    j["preset"] = preset;
    j["embed_dim"] = embed_dim;
    j["resolution"] = resolution;
    j["text_max_len"] = text_max_len;
    j["vocab_size"] = vocab_size;
    j["text_embed_factor"] = text_embed_factor;
    j["text_hidden"] = text_hidden;
    j["text_bottleneck"] = text_bottleneck;
    j["text_layers"] = text_layers;
    j["text_heads"] = text_heads;
    j["image_channels"] = image_channels;
    j["ib_blocks_per_stage"] = ib_blocks_per_stage;
    j["ib_expansion"] = ib_expansion;
    j["image_heads"] = image_heads;
    j["hybrid_layers"] = hybrid_layers;
    j["norm_mean"] = norm_mean;
    j["norm_std"] = norm_std;
    j["fusion_heads"] = fusion_heads;
    j["qgcam_variant"] = qgcam_variant;
    j["decoder_layers"] = decoder_layers;
    j["decoder_dim"] = decoder_dim;
    j["decoder_heads"] = decoder_heads;
    j["unfreeze_ratio"] = unfreeze_ratio;
    j["max_new_tokens"] = max_new_tokens;
    j["teacher_dim"] = teacher_dim;
    j["temperature"] = temperature;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["lambda1"] = lambda1;
    j["lambda2"] = lambda2;
    j["seed"] = seed;
    for (auto [name, s] : {std::pair<const char*, const StageConfig*>{"stage1", &stage1},
                           {"stage2", &stage2}}) {
        ordered_json sj;
        sj["optimizer"] = s->optimizer;
        sj["lr"] = s->lr;
        sj["lr_gamma"] = s->lr_gamma;
        sj["lr_step"] = s->lr_step;
        sj["epochs"] = s->epochs;
        sj["batch_size"] = s->batch_size;
        sj["weight_decay"] = s->weight_decay;
        sj["clip_norm"] = s->clip_norm;
        j[name] = std::move(sj);
    }
    return j.dump(2) + "\n";
}

namespace {

void expect(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

void validate_stage(const StageConfig& s, const std::string& which) {
    expect(s.optimizer == "adam" || s.optimizer == "adamw",
           which + ".optimizer: must be \"adam\" or \"adamw\", got \"" + s.optimizer + "\"");
    expect(s.lr > 0, which + ".lr: must be positive");
    expect(s.lr_gamma > 0 && s.lr_gamma <= 1, which + ".lr_gamma: must be in (0, 1]");
    expect(s.lr_step >= 1, which + ".lr_step: must be >= 1");
    expect(s.epochs >= 1, which + ".epochs: must be >= 1");
    expect(s.batch_size >= 1, which + ".batch_size: must be >= 1");
    expect(s.weight_decay >= 0, which + ".weight_decay: must be >= 0");
}

} // namespace

void ModelConfig::validate() const {
    expect(embed_dim >= 1, "embed_dim: must be >= 1");
    expect(fusion_heads >= 1, "fusion_heads: must be >= 1");
    expect(embed_dim % fusion_heads == 0,
           "embed_dim (" + std::to_string(embed_dim) + ") must be divisible by fusion_heads (" +
               std::to_string(fusion_heads) + ")");
    expect(resolution >= 16 && resolution <= 1024, "resolution: must be in [16, 1024]");
    expect(text_max_len >= 4 && text_max_len <= 4096, "text_max_len: must be in [4, 4096]");
    expect(vocab_size >= 8, "vocab_size: must be >= 8");
    expect(text_embed_factor >= 1, "text_embed_factor: must be >= 1");
    expect(text_hidden >= 2, "text_hidden: must be >= 2");
    expect(text_bottleneck >= 1, "text_bottleneck: must be >= 1");
    expect(text_bottleneck < text_hidden,
           "text_bottleneck (" + std::to_string(text_bottleneck) +
               ") must be smaller than text_hidden (" + std::to_string(text_hidden) + ")");
    expect(text_layers >= 1, "text_layers: must be >= 1");
    expect(text_heads >= 1, "text_heads: must be >= 1");
    expect(text_bottleneck % text_heads == 0,
           "text_bottleneck (" + std::to_string(text_bottleneck) +
               ") must be divisible by text_heads (" + std::to_string(text_heads) + ")");
    expect(image_channels.size() == 6,
           "image_channels: must list 6 widths {stem, ib1, ib2, hybrid1, hybrid2, hybrid3}");
    for (size_t i = 0; i < image_channels.size(); ++i)
        expect(image_channels[i] >= 1,
               "image_channels[" + std::to_string(i) + "]: must be >= 1");
    for (size_t i = 3; i < 6; ++i) {
        expect(image_channels[i] % 2 == 0,
               "image_channels[" + std::to_string(i) + "]: hybrid width must be even");
        expect((image_channels[i] / 2) % image_heads == 0,
               "image_channels[" + std::to_string(i) + "]: half width " +
                   std::to_string(image_channels[i] / 2) + " must be divisible by image_heads (" +
                   std::to_string(image_heads) + ")");
    }
    expect(ib_blocks_per_stage >= 1, "ib_blocks_per_stage: must be >= 1");
    expect(ib_expansion >= 1, "ib_expansion: must be >= 1");
    expect(image_heads >= 1, "image_heads: must be >= 1");
    expect(hybrid_layers == std::vector<int>({2, 4, 3}),
           "hybrid_layers: must be [2, 4, 3]");
    for (int i = 0; i < 3; ++i)
        expect(norm_std[static_cast<size_t>(i)] > 0, "norm_std: components must be positive");
    expect(qgcam_variant == "standard" || qgcam_variant == "token_balance" ||
               qgcam_variant == "visual_query",
           "qgcam_variant: must be standard, token_balance or visual_query; got \"" +
               qgcam_variant + "\"");
    expect(decoder_layers >= 1, "decoder_layers: must be >= 1");
    expect(decoder_dim >= 2, "decoder_dim: must be >= 2");
    expect(decoder_heads >= 1, "decoder_heads: must be >= 1");
    expect(decoder_dim % decoder_heads == 0,
           "decoder_dim (" + std::to_string(decoder_dim) +
               ") must be divisible by decoder_heads (" + std::to_string(decoder_heads) + ")");
    expect(unfreeze_ratio >= 0.0 && unfreeze_ratio <= 1.0,
           "unfreeze_ratio: must be in [0, 1]");
    expect(max_new_tokens >= 1, "max_new_tokens: must be >= 1");
    expect(teacher_dim >= 1, "teacher_dim: must be >= 1");
    expect(temperature > 0, "temperature: must be positive");
    expect(alpha > 0, "alpha: must be positive");
    expect(beta > 0, "beta: must be positive");
    expect(lambda1 >= 0, "lambda1: must be >= 0");
    expect(lambda2 >= 0, "lambda2: must be >= 0");
    validate_stage(stage1, "stage1");
    validate_stage(stage2, "stage2");
}

int ModelConfig::grid_size() const {
    int s = resolution;
    // stem /2, two inverted-bottleneck stages /2 each, hybrid strides 2,2,1
    for (int i = 0; i < 5; ++i) s = (s + 1) / 2;
    return s;
}

} // namespace bcq
