#include <doctest.h>

#include <string>

#include "bcq/config.hpp"
#include "bcq/errors.hpp"

using namespace bcq;

TEST_SUITE("config") {

TEST_CASE("tiny preset values") {
    ModelConfig c = ModelConfig::named_preset("tiny");
    CHECK(c.embed_dim == 32);
    CHECK(c.resolution == 64);
    CHECK(c.text_max_len == 28);
    CHECK(c.vocab_size == 512);
    CHECK(c.text_hidden == 32);
    CHECK(c.text_bottleneck == 16);
    CHECK(c.text_layers == 2);
    CHECK(c.image_channels == std::vector<int>({8, 12, 16, 24, 32, 32}));
    CHECK(c.hybrid_layers == std::vector<int>({2, 4, 3}));
    CHECK(c.fusion_heads == 8);
    CHECK(c.decoder_dim == 96);
    CHECK(c.decoder_layers == 4);
    CHECK(c.teacher_dim == 16);
    CHECK(c.temperature == doctest::Approx(0.07));
    CHECK(c.alpha == doctest::Approx(0.5));
    CHECK(c.beta == doctest::Approx(0.5));
    CHECK(c.lambda1 == doctest::Approx(1.0));
    CHECK(c.lambda2 == doctest::Approx(1.0));
    CHECK(c.seed == 42);
    CHECK(c.stage1.optimizer == "adam");
    CHECK(c.stage2.optimizer == "adamw");
    CHECK(c.stage2.weight_decay == doctest::Approx(0.01));
    c.validate();
}

TEST_CASE("reference-large preset values") {
    ModelConfig c = ModelConfig::named_preset("reference-large");
    CHECK(c.embed_dim == 512);
    CHECK(c.resolution == 224);
    CHECK(c.text_max_len == 77);
    CHECK(c.vocab_size == 30522);
    CHECK(c.text_hidden == 768);
    CHECK(c.text_bottleneck == 192);
    CHECK(c.text_layers == 24);
    CHECK(c.text_heads == 12);
    CHECK(c.image_channels == std::vector<int>({32, 64, 128, 256, 320, 384}));
    CHECK(c.hybrid_layers == std::vector<int>({2, 4, 3}));
    CHECK(c.teacher_dim == 512);
    c.validate();
}

TEST_CASE("unknown preset raises") {
    CHECK_THROWS_AS(ModelConfig::named_preset("huge"), ConfigError);
}

TEST_CASE("grid size follows the five downsampling steps") {
    ModelConfig c;
    c.resolution = 64;
    CHECK(c.grid_size() == 2);
    CHECK(c.patch_count() == 4);
    c.resolution = 224;
    CHECK(c.grid_size() == 7);
    CHECK(c.patch_count() == 49);
    c.resolution = 336;
    CHECK(c.grid_size() == 11);
    CHECK(c.patch_count() == 121);
    c.text_max_len = 77;
    CHECK(c.seq_len() == 121 + 77);
}

TEST_CASE("json overrides on top of a preset") {
    ModelConfig c = ModelConfig::from_json_text(
        R"({"preset": "tiny", "embed_dim": 64, "seed": 7,
            "stage1": {"lr": 0.002, "epochs": 3}})");
    CHECK(c.embed_dim == 64);
    CHECK(c.seed == 7);
    CHECK(c.stage1.lr == doctest::Approx(0.002));
    CHECK(c.stage1.epochs == 3);
    // untouched fields keep preset values
    CHECK(c.stage1.optimizer == "adam");
    CHECK(c.resolution == 64);
}

TEST_CASE("bare object defaults to tiny") {
    ModelConfig c = ModelConfig::from_json_text("{}");
    CHECK(c.preset == "tiny");
    CHECK(c.embed_dim == 32);
}

TEST_CASE("json round trip preserves every field") {
    ModelConfig c = ModelConfig::named_preset("reference-large");
    c.qgcam_variant = "visual_query";
    c.unfreeze_ratio = 0.25;
    ModelConfig d = ModelConfig::from_json_text(c.to_json_text());
    CHECK(d.to_json_text() == c.to_json_text());
    CHECK(d.qgcam_variant == "visual_query");
    CHECK(d.unfreeze_ratio == doctest::Approx(0.25));
}

TEST_CASE("unknown fields and wrong types are rejected") {
    CHECK_THROWS_WITH_AS(ModelConfig::from_json_text(R"({"embedd_dim": 16})"),
                         "config: unknown field: embedd_dim", ConfigError);
    CHECK_THROWS_WITH_AS(ModelConfig::from_json_text(R"({"embed_dim": "big"})"),
                         "config: embed_dim: wrong type", ConfigError);
    CHECK_THROWS_WITH_AS(ModelConfig::from_json_text(R"({"stage1": {"lr": "fast"}})"),
                         "config: stage1.lr: wrong type", ConfigError);
    CHECK_THROWS_WITH_AS(ModelConfig::from_json_text(R"({"stage2": {"momentum": 0.9}})"),
                         "config: unknown field: stage2.momentum", ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_json_text("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_json_text("not json"), ConfigError);
}

TEST_CASE("validation errors name the offending field") {
    ModelConfig c;

    SUBCASE("head divisibility") {
        c.embed_dim = 10;
        CHECK_THROWS_WITH_AS(c.validate(),
                             "config: embed_dim (10) must be divisible by fusion_heads (8)",
                             ConfigError);
    }
    SUBCASE("bottleneck must shrink") {
        c.text_bottleneck = 32;
        CHECK_THROWS_WITH_AS(c.validate(),
                             "config: text_bottleneck (32) must be smaller than text_hidden (32)",
                             ConfigError);
    }
    SUBCASE("bottleneck head divisibility") {
        c.text_bottleneck = 14;
        CHECK_THROWS_WITH_AS(
            c.validate(),
            "config: text_bottleneck (14) must be divisible by text_heads (4)", ConfigError);
    }
    SUBCASE("resolution range") {
        c.resolution = 8;
        CHECK_THROWS_WITH_AS(c.validate(), "config: resolution: must be in [16, 1024]",
                             ConfigError);
    }
    SUBCASE("channel list length") {
        c.image_channels = {8, 12, 16};
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("hybrid widths must suit heads") {
        c.image_channels = {8, 12, 16, 24, 30, 32};
        CHECK_THROWS_WITH_AS(c.validate(),
                             "config: image_channels[4]: half width 15 must be divisible by "
                             "image_heads (4)",
                             ConfigError);
    }
    SUBCASE("variant name") {
        c.qgcam_variant = "fancy";
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("unfreeze ratio range") {
        c.unfreeze_ratio = 1.5;
        CHECK_THROWS_WITH_AS(c.validate(), "config: unfreeze_ratio: must be in [0, 1]",
                             ConfigError);
    }
    SUBCASE("temperature positive") {
        c.temperature = 0.0;
        CHECK_THROWS_WITH_AS(c.validate(), "config: temperature: must be positive", ConfigError);
    }
    SUBCASE("stage optimizer") {
        c.stage1.optimizer = "sgd";
        CHECK_THROWS_WITH_AS(
            c.validate(),
            "config: stage1.optimizer: must be \"adam\" or \"adamw\", got \"sgd\"", ConfigError);
    }
    SUBCASE("stage epochs") {
        c.stage2.epochs = 0;
        CHECK_THROWS_WITH_AS(c.validate(), "config: stage2.epochs: must be >= 1", ConfigError);
    }
}

TEST_CASE("shipped config files select their presets") {
    ModelConfig tiny = ModelConfig::load("configs/tiny.json");
    CHECK(tiny.preset == "tiny");
    CHECK(tiny.embed_dim == 32);
    ModelConfig large = ModelConfig::load("configs/reference-large.json");
    CHECK(large.preset == "reference-large");
    CHECK(large.embed_dim == 512);
    CHECK_THROWS_AS(ModelConfig::load("configs/no_such_file.json"), ConfigError);
}

} // TEST_SUITE
