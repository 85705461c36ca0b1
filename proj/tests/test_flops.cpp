#include <doctest.h>

#include <json.hpp>

#include "bcq/flops.hpp"

using namespace bcq;

TEST_SUITE("flops") {

TEST_CASE("primitive cost formulas") {
    CHECK(linear_flops(3, 4, 5, true) == 2u * 3 * 4 * 5 + 3u * 5);
    CHECK(linear_flops(3, 4, 5, false) == 2u * 3 * 4 * 5);
    CHECK(attention_flops(2, 3, 4, 8) == 4u * 2 * 3 * 4 * 8);
    CHECK(conv_flops(1, 3, 5, 3, 4, 4, true) == 2u * 5 * 3 * 9 * 16 + 5u * 16);
    CHECK(conv_flops(2, 3, 5, 3, 4, 4, false) == 2u * 2 * 5 * 3 * 9 * 16);
    CHECK(depthwise_flops(1, 6, 3, 4, 4, false) == 2u * 6 * 9 * 16);
    CHECK(depthwise_flops(1, 6, 3, 4, 4, true) == 2u * 6 * 9 * 16 + 6u * 16);

    CHECK(conv_out_side(224, 3, 2, 1) == 112);
    CHECK(conv_out_side(7, 3, 2, 1) == 4);
    CHECK(conv_out_side(11, 3, 1, 1) == 11);
    CHECK(conv_out_side(64, 3, 2, 1) == 32);
}

TEST_CASE("pre-norm layer cost decomposes into its pieces") {
    uint64_t want = 4 * linear_flops(5, 8, 8, true) + attention_flops(1, 5, 5, 8) +
                    linear_flops(5, 8, 32, true) + linear_flops(5, 32, 8, true);
    CHECK(pre_norm_layer_flops(5, 8) == want);
    CHECK(want == 8840);
}

TEST_CASE("instrumented kernels agree with the analytic walk exactly") {
    ModelConfig cfg = ModelConfig::preset_tiny();
    auto analytic = analytic_flops(cfg);
    auto measured = measured_flops(cfg);
    CHECK(analytic.text_encoder == measured.text_encoder);
    CHECK(analytic.image_encoder == measured.image_encoder);
    CHECK(analytic.qgcam == measured.qgcam);
    CHECK(analytic.decoder == measured.decoder);
    CHECK(analytic.total() ==
          analytic.text_encoder + analytic.image_encoder + analytic.qgcam + analytic.decoder);
    CHECK(analytic.total() > 0);
}

TEST_CASE("every fusion variant stays in agreement") {
    for (const char* v : {"standard", "token_balance", "visual_query"}) {
        CAPTURE(v);
        ModelConfig cfg = ModelConfig::preset_tiny();
        cfg.qgcam_variant = v;
        auto analytic = analytic_flops(cfg);
        auto measured = measured_flops(cfg);
        CHECK(analytic.qgcam == measured.qgcam);
        CHECK(analytic.total() == measured.total());
    }
    ModelConfig std_cfg = ModelConfig::preset_tiny();
    ModelConfig vq_cfg = ModelConfig::preset_tiny();
    vq_cfg.qgcam_variant = "visual_query";
    CHECK(analytic_flops(vq_cfg).qgcam > analytic_flops(std_cfg).qgcam);
}

TEST_CASE("cost scales with resolution and depth") {
    ModelConfig small = ModelConfig::preset_tiny();
    ModelConfig big = ModelConfig::preset_tiny();
    big.resolution = 224;
    CHECK(analytic_flops(big).image_encoder > analytic_flops(small).image_encoder);
    CHECK(analytic_flops(big).qgcam > analytic_flops(small).qgcam); // more patches to fuse

    ModelConfig deep = ModelConfig::preset_tiny();
    deep.decoder_layers = small.decoder_layers + 2;
    CHECK(analytic_flops(deep).decoder > analytic_flops(small).decoder);
}

TEST_CASE("efficiency report json") {
    ModelConfig cfg = ModelConfig::preset_tiny();
    auto analytic = analytic_flops(cfg);
    auto measured = measured_flops(cfg);
    auto j = nlohmann::json::parse(flops_json(analytic, measured));
    CHECK(j["match"] == true);
    CHECK(j["analytic"]["total"] == analytic.total());
    CHECK(j["measured"]["text_encoder"] == measured.text_encoder);

    FlopBreakdown off = measured;
    off.decoder += 1;
    auto j2 = nlohmann::json::parse(flops_json(analytic, off));
    CHECK(j2["match"] == false);
}

} // TEST_SUITE
