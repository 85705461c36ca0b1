#pragma once

#include <string>
#include <vector>

#include "bcq/alignment.hpp"
#include "bcq/config.hpp"
#include "bcq/decoder.hpp"
#include "bcq/gradcheck.hpp"
#include "bcq/image_encoder.hpp"
#include "bcq/qgcam.hpp"
#include "bcq/text_encoder.hpp"

// Ready-made gradient checks for each module, shared by the gradcheck CLI
// subcommand and the acceptance tests. All run in double precision on small
// dedicated configurations.

namespace bcq::checks {

// small enough for finite differences, large enough to exercise every path
inline ModelConfig small_cfg() {
    ModelConfig c;
    c.embed_dim = 16;
    c.resolution = 48; // 4 patch tokens
    c.text_max_len = 8;
    c.vocab_size = 64;
    c.text_embed_factor = 4;
    c.text_hidden = 16;
    c.text_bottleneck = 8;
    c.text_layers = 1;
    c.text_heads = 2;
    c.image_channels = {4, 6, 8, 8, 8, 8};
    c.ib_blocks_per_stage = 1;
    c.ib_expansion = 2;
    c.image_heads = 2;
    c.hybrid_layers = {1, 1, 1};
    c.fusion_heads = 4;
    c.decoder_layers = 1;
    c.decoder_dim = 16;
    c.decoder_heads = 2;
    c.teacher_dim = 8;
    c.seed = 7;
    return c;
}

// single patch token variant for whole-pipeline losses
inline ModelConfig tiny_pipeline_cfg() {
    ModelConfig c = small_cfg();
    c.resolution = 32; // 1 patch token
    return c;
}

inline GradCheckReport text_check(double tol) {
    ModelConfig cfg = small_cfg();
    ParamStore<double> ps;
    text_enc::init(ps, cfg, cfg.seed);
    int64_t B = 2, S = cfg.text_max_len;
    std::vector<int64_t> ids = {2, 9, 17, 30, 5, 3, 0, 0, 2, 41, 8, 8, 23, 11, 6, 3};
    std::vector<uint8_t> mask = {1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    Rng pr(derive_seed(cfg.seed, "probe/text"));
    Tensor<double> p1 = randn<double>({B, S, cfg.embed_dim}, pr);
    Tensor<double> p2 = randn<double>({B, cfg.embed_dim}, pr);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto out = text_enc::forward(b, cfg, ids, mask, B);
        return tp.add(tp.dot(out.tokens, tp.leaf(p1)), tp.dot(out.pooled, tp.leaf(p2)));
    };
    return check_gradients(ps, make_loss, "text_encoder", tol, 25);
}

inline GradCheckReport image_check(double tol) {
    ModelConfig cfg = small_cfg();
    ParamStore<double> ps;
    img_enc::init(ps, cfg, cfg.seed);
    Rng ir(derive_seed(cfg.seed, "probe/image_in"));
    Tensor<double> img = randn<double>({1, 3, cfg.resolution, cfg.resolution}, ir);
    Rng pr(derive_seed(cfg.seed, "probe/image"));
    Tensor<double> p1 = randn<double>({1, cfg.patch_count(), cfg.embed_dim}, pr);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto out = img_enc::forward(b, cfg, tp.leaf(img));
        return tp.dot(out.tokens, tp.leaf(p1));
    };
    return check_gradients(ps, make_loss, "image_encoder", tol, 6);
}

// joint contrastive + distillation loss through both encoders and the
// teacher projection heads, every parameter sampled lightly
inline GradCheckReport alignment_check(double tol) {
    ModelConfig cfg = tiny_pipeline_cfg();
    ParamStore<double> ps;
    text_enc::init(ps, cfg, cfg.seed);
    img_enc::init(ps, cfg, cfg.seed);
    align::init(ps, cfg, cfg.seed);
    int64_t B = 2;
    Rng ir(derive_seed(cfg.seed, "probe/align_img"));
    Tensor<double> img = randn<double>({B, 3, cfg.resolution, cfg.resolution}, ir);
    std::vector<int64_t> ids = {2, 9, 17, 30, 5, 3, 0, 0, 2, 41, 8, 8, 23, 11, 6, 3};
    std::vector<uint8_t> mask = {1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
    Rng tr(derive_seed(cfg.seed, "probe/align_teacher"));
    Tensor<double> t_img = randn<double>({B, cfg.teacher_dim}, tr);
    Tensor<double> t_txt = randn<double>({B, cfg.teacher_dim}, tr);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto io = img_enc::forward(b, cfg, tp.leaf(img));
        int img_pooled = tp.masked_mean_tokens(io.tokens);
        auto to = text_enc::forward(b, cfg, ids, mask, B);
        auto lo = align::loss(b, cfg, img_pooled, to.pooled, t_img, t_txt);
        return lo.total;
    };
    return check_gradients(ps, make_loss, "alignment", tol, 3);
}

inline GradCheckReport qgcam_check(const std::string& variant, double tol,
                                   const std::string& corrupt_tensor = std::string(),
                                   double corrupt_delta = 0.0) {
    ModelConfig cfg = small_cfg();
    cfg.qgcam_variant = variant;
    ParamStore<double> ps;
    qgcam::init(ps, cfg, cfg.seed);
    int64_t B = 2, N = 4, T = cfg.text_max_len, d = cfg.embed_dim;
    Rng ir(derive_seed(cfg.seed, "probe/qgcam_in"));
    Tensor<double> img = randn<double>({B, N, d}, ir);
    Tensor<double> txt = randn<double>({B, T, d}, ir);
    std::vector<uint8_t> mask(static_cast<size_t>(B * T), 1);
    mask[6] = 0;
    mask[7] = 0;
    mask[15] = 0;
    Rng pr(derive_seed(cfg.seed, "probe/qgcam"));
    Tensor<double> p1 = randn<double>({B, N, cfg.decoder_dim}, pr);
    Tensor<double> p2 = randn<double>({B, N, 1}, pr);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto out = qgcam::forward(b, cfg, tp.leaf(img), tp.leaf(txt), mask);
        return tp.add(tp.dot(out.adapted, tp.leaf(p1)), tp.dot(out.gate, tp.leaf(p2)));
    };
    return check_gradients(ps, make_loss, "qgcam_" + variant, tol, 25, corrupt_tensor,
                           corrupt_delta);
}

inline GradCheckReport decoder_check(double tol) {
    ModelConfig cfg = small_cfg();
    ParamStore<double> ps;
    dec::init(ps, cfg, cfg.seed);
    int64_t B = 2, N = cfg.patch_count(), T = cfg.text_max_len;
    Rng ir(derive_seed(cfg.seed, "probe/decoder_in"));
    Tensor<double> pseudo = randn<double>({B, N, cfg.decoder_dim}, ir);
    std::vector<dec::TextStream> streams;
    streams.push_back(dec::make_stream({9, 17}, {30}, T, 0, 2, 3));
    streams.push_back(dec::make_stream({41, 8, 23}, {11}, T, 0, 2, 3));
    std::vector<int64_t> ids;
    for (const auto& s : streams) ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    auto sup = dec::make_supervision(streams, N, T, 0);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto out = dec::forward(b, cfg, tp.leaf(pseudo), ids, B, T);
        return tp.cross_entropy_masked(out.logits, sup.labels, sup.mask);
    };
    return check_gradients(ps, make_loss, "decoder", tol, 12);
}

// image -> encoders -> fusion -> decoder -> masked generation loss, end to
// end with every module trainable
inline GradCheckReport pipeline_check(double tol) {
    ModelConfig cfg = tiny_pipeline_cfg();
    ParamStore<double> ps;
    text_enc::init(ps, cfg, cfg.seed);
    img_enc::init(ps, cfg, cfg.seed);
    qgcam::init(ps, cfg, cfg.seed);
    dec::init(ps, cfg, cfg.seed);
    int64_t B = 2, N = cfg.patch_count(), T = cfg.text_max_len;
    Rng ir(derive_seed(cfg.seed, "probe/pipeline_img"));
    Tensor<double> img = randn<double>({B, 3, cfg.resolution, cfg.resolution}, ir);
    std::vector<int64_t> q_ids = {2, 9, 17, 3, 0, 0, 0, 0, 2, 41, 8, 23, 3, 0, 0, 0};
    std::vector<uint8_t> q_mask = {1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0};
    std::vector<dec::TextStream> streams;
    streams.push_back(dec::make_stream({9, 17}, {30}, T, 0, 2, 3));
    streams.push_back(dec::make_stream({41, 8, 23}, {11}, T, 0, 2, 3));
    std::vector<int64_t> ids;
    for (const auto& s : streams) ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    auto sup = dec::make_supervision(streams, N, T, 0);
    auto make_loss = [&](Binder<double>& b) {
        auto& tp = b.tape();
        auto io = img_enc::forward(b, cfg, tp.leaf(img));
        auto to = text_enc::forward(b, cfg, q_ids, q_mask, B);
        auto qo = qgcam::forward(b, cfg, io.tokens, to.tokens, q_mask);
        auto dco = dec::forward(b, cfg, qo.adapted, ids, B, T);
        return tp.cross_entropy_masked(dco.logits, sup.labels, sup.mask);
    };
    return check_gradients(ps, make_loss, "pipeline", tol, 2);
}

inline std::vector<GradCheckReport> run_component(const std::string& component, double tol) {
    std::vector<GradCheckReport> out;
    bool all = component == "all";
    if (all || component == "text_encoder") out.push_back(text_check(tol));
    if (all || component == "image_encoder") out.push_back(image_check(tol));
    if (all || component == "alignment") out.push_back(alignment_check(tol));
    if (all || component == "qgcam") {
        out.push_back(qgcam_check("standard", tol));
        out.push_back(qgcam_check("token_balance", tol));
        out.push_back(qgcam_check("visual_query", tol));
    }
    if (all || component == "decoder") out.push_back(decoder_check(tol));
    if (all || component == "pipeline") out.push_back(pipeline_check(tol));
    if (out.empty()) throw ConfigError("unknown gradcheck component: " + component);
    return out;
}

} // namespace bcq::checks
