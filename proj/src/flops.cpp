#include "bcq/flops.hpp"

#include <fstream>

#include <json.hpp>

#include "bcq/decoder.hpp"
#include "bcq/errors.hpp"
#include "bcq/image_encoder.hpp"
#include "bcq/kernels.hpp"
#include "bcq/qgcam.hpp"
#include "bcq/text_encoder.hpp"

namespace bcq {

using nlohmann::ordered_json;

uint64_t linear_flops(int64_t rows, int64_t in, int64_t out, bool bias) {
    uint64_t f = static_cast<uint64_t>(2) * rows * in * out;
    if (bias) f += static_cast<uint64_t>(rows) * out;
    return f;
}

uint64_t attention_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t d) {
    return static_cast<uint64_t>(4) * B * Tq * Tk * d;
}

uint64_t conv_flops(int64_t B, int64_t ci, int64_t co, int64_t k, int64_t ho, int64_t wo,
                    bool bias) {
    uint64_t f = static_cast<uint64_t>(2) * B * co * ci * k * k * ho * wo;
    if (bias) f += static_cast<uint64_t>(B) * co * ho * wo;
    return f;
}

uint64_t depthwise_flops(int64_t B, int64_t c, int64_t k, int64_t ho, int64_t wo, bool bias) {
    uint64_t f = static_cast<uint64_t>(2) * B * c * k * k * ho * wo;
    if (bias) f += static_cast<uint64_t>(B) * c * ho * wo;
    return f;
}

int64_t conv_out_side(int64_t side, int64_t k, int64_t stride, int64_t pad) {
    return (side + 2 * pad - k) / stride + 1;
}

uint64_t pre_norm_layer_flops(int64_t tokens, int64_t width) {
    uint64_t f = 4 * linear_flops(tokens, width, width, true); // q, k, v, o
    f += attention_flops(1, tokens, tokens, width);
    f += linear_flops(tokens, width, 4 * width, true);
    f += linear_flops(tokens, 4 * width, width, true);
    return f;
}

namespace {

uint64_t text_flops(const ModelConfig& cfg) {
    int64_t S = cfg.text_max_len;
    int64_t h = cfg.text_hidden, bn = cfg.text_bottleneck;
    uint64_t f = linear_flops(S, cfg.text_embed_factor, h, false);
    for (int i = 0; i < cfg.text_layers; ++i) {
        f += linear_flops(S, h, bn, true); // down
        f += 4 * linear_flops(S, bn, bn, true);
        f += attention_flops(1, S, S, bn);
        f += linear_flops(S, bn, 4 * bn, true);
        f += linear_flops(S, 4 * bn, bn, true);
        f += linear_flops(S, bn, h, true); // up
    }
    f += linear_flops(S, h, cfg.embed_dim, true); // proj
    return f;
}

uint64_t image_flops(const ModelConfig& cfg) {
    const auto& ch = cfg.image_channels;
    int64_t side = cfg.resolution;
    uint64_t f = 0;
    side = conv_out_side(side, 3, 2, 1);
    f += conv_flops(1, 3, ch[0], 3, side, side, true); // stem
    int64_t c = ch[0];
    for (int stage = 0; stage < 2; ++stage) {
        int64_t cout = ch[static_cast<size_t>(1 + stage)];
        for (int blk = 0; blk < cfg.ib_blocks_per_stage; ++blk) {
            int64_t stride = blk == 0 ? 2 : 1;
            int64_t mid = cfg.ib_expansion * c;
            f += conv_flops(1, c, mid, 1, side, side, true); // expand
            int64_t oside = conv_out_side(side, 3, stride, 1);
            f += depthwise_flops(1, mid, 3, oside, oside, true);
            f += conv_flops(1, mid, cout, 1, oside, oside, true); // project
            side = oside;
            c = cout;
        }
    }
    int64_t strides[3] = {2, 2, 1};
    for (int i = 0; i < 3; ++i) {
        int64_t cblk = ch[static_cast<size_t>(3 + i)];
        int64_t ctok = cblk / 2;
        int64_t oside = conv_out_side(side, 3, strides[i], 1);
        f += conv_flops(1, c, cblk, 3, oside, oside, true); // local
        f += conv_flops(1, cblk, ctok, 1, oside, oside, true); // reduce
        int64_t n = oside * oside;
        for (int l = 0; l < cfg.hybrid_layers[static_cast<size_t>(i)]; ++l)
            f += pre_norm_layer_flops(n, ctok);
        f += conv_flops(1, cblk + ctok, cblk, 1, oside, oside, true); // fuse
        side = oside;
        c = cblk;
    }
    f += conv_flops(1, c, cfg.embed_dim, 1, side, side, true); // head
    return f;
}

uint64_t qgcam_flops(const ModelConfig& cfg) {
    int64_t N = cfg.patch_count(), Tt = cfg.text_max_len, d = cfg.embed_dim;
    uint64_t f = 0;
    // cross attention: queries from patches, keys/values from text
    f += linear_flops(N, d, d, true);      // q
    f += 2 * linear_flops(Tt, d, d, true); // k, v
    f += attention_flops(1, N, Tt, d);
    f += linear_flops(N, d, d, true); // o
    f += linear_flops(1, d, d, true); // pool_proj on the pooled sentence vector
    f += linear_flops(N, 2 * d, d, true); // gate1
    f += linear_flops(N, d, 1, true);     // gate2
    f += linear_flops(N, d, 4 * d, true);
    f += linear_flops(N, 4 * d, d, true);
    if (cfg.qgcam_variant == "visual_query") {
        f += linear_flops(N, d, d, true);
        f += 2 * linear_flops(N + Tt, d, d, true);
        f += attention_flops(1, N, N + Tt, d);
        f += linear_flops(N, d, d, true);
    }
    f += linear_flops(N, d, cfg.decoder_dim, true); // adapter
    return f;
}

uint64_t decoder_flops(const ModelConfig& cfg) {
    int64_t S = cfg.seq_len(), dd = cfg.decoder_dim;
    uint64_t f = 0;
    for (int i = 0; i < cfg.decoder_layers; ++i) f += pre_norm_layer_flops(S, dd);
    f += linear_flops(S, dd, cfg.vocab_size, true); // head
    return f;
}

} // namespace

FlopBreakdown analytic_flops(const ModelConfig& cfg) {
    FlopBreakdown b;
    b.text_encoder = text_flops(cfg);
    b.image_encoder = image_flops(cfg);
    b.qgcam = qgcam_flops(cfg);
    b.decoder = decoder_flops(cfg);
    return b;
}

FlopBreakdown measured_flops(const ModelConfig& cfg) {
    ParamStore<float> ps;
    uint64_t seed = cfg.seed;
    text_enc::init(ps, cfg, seed);
    img_enc::init(ps, cfg, seed);
    qgcam::init(ps, cfg, seed);
    dec::init(ps, cfg, seed);

    Tape<float> tp;
    Binder<float> b(tp, ps, false);

    int64_t T = cfg.text_max_len;
    std::vector<int64_t> ids(static_cast<size_t>(T), 1);
    std::vector<uint8_t> mask(static_cast<size_t>(T), 1);
    Rng rng(cfg.seed);
    int image = tp.leaf(randn<float>({1, 3, cfg.resolution, cfg.resolution}, rng));

    FlopBreakdown out;
    kern::flops_reset();
    auto te = text_enc::forward(b, cfg, ids, mask, 1);
    out.text_encoder = kern::flops_count();

    kern::flops_reset();
    auto ie = img_enc::forward(b, cfg, image);
    out.image_encoder = kern::flops_count();

    kern::flops_reset();
    auto qo = qgcam::forward(b, cfg, ie.tokens, te.tokens, mask);
    out.qgcam = kern::flops_count();

    kern::flops_reset();
    auto dco = dec::forward(b, cfg, qo.adapted, ids, 1, T);
    (void)dco;
    out.decoder = kern::flops_count();
    kern::flops_reset();
    return out;
}

std::string flops_json(const FlopBreakdown& analytic, const FlopBreakdown& measured) {
    auto block = [](const FlopBreakdown& f) {
        ordered_json j;
        j["text_encoder"] = f.text_encoder;
        j["image_encoder"] = f.image_encoder;
        j["qgcam"] = f.qgcam;
        j["decoder"] = f.decoder;
        j["total"] = f.total();
        return j;
    };
    ordered_json j;
    j["analytic"] = block(analytic);
    j["measured"] = block(measured);
    j["match"] = analytic.text_encoder == measured.text_encoder &&
                 analytic.image_encoder == measured.image_encoder &&
                 analytic.qgcam == measured.qgcam && analytic.decoder == measured.decoder;
    return j.dump(2) + "\n";
}

void save_flops_json(const FlopBreakdown& analytic, const FlopBreakdown& measured,
                     const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f << flops_json(analytic, measured);
}

} // namespace bcq
