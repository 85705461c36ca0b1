#pragma once

#include "bcq/config.hpp"
#include "bcq/layers.hpp"

// Hybrid convolutional / transformer image encoder.
//
//   stem:      3x3 conv, stride 2
//   stage 1,2: inverted-bottleneck conv blocks, first block of each stage
//              strides 2 (expand 1x1 -> depthwise 3x3 -> project 1x1)
//   hybrid 1..3: conv-wrapped transformer blocks with 2, 4 and 3 layers and
//              strides 2, 2, 1: a local 3x3 conv, a 1x1 reduction to half
//              width, transformer layers over the flattened map with learned
//              position embeddings, then a 1x1 fusion conv over the
//              concatenated local and attended features
//   head:      1x1 conv to the shared embedding dim, flattened to tokens
//
// 3x3 stride-2 convs with padding 1 round odd sizes up, so a 224 input
// yields a 7x7 map (49 tokens) and 336 yields 11x11 (121 tokens).

namespace bcq::img_enc {

struct Geometry {
    int64_t stem, ib1, ib2, h1, h2, h3; // side lengths after each part
};

inline Geometry geometry(int resolution) {
    auto half = [](int64_t s) { return (s + 1) / 2; };
    Geometry g{};
    g.stem = half(resolution);
    g.ib1 = half(g.stem);
    g.ib2 = half(g.ib1);
    g.h1 = half(g.ib2);
    g.h2 = half(g.h1);
    g.h3 = g.h2;
    return g;
}

template <typename T>
void init(ParamStore<T>& ps, const ModelConfig& cfg, uint64_t seed) {
    const auto& ch = cfg.image_channels;
    Geometry g = geometry(cfg.resolution);
    add_conv(ps, "image/stem", ch[0], 3, 3, seed);
    int64_t c = ch[0];
    for (int stage = 0; stage < 2; ++stage) {
        int64_t cout = ch[static_cast<size_t>(1 + stage)];
        for (int blk = 0; blk < cfg.ib_blocks_per_stage; ++blk) {
            std::string p = "image/ib" + std::to_string(stage + 1) + "_" + std::to_string(blk);
            int64_t mid = cfg.ib_expansion * c;
            add_conv(ps, p + ".expand", mid, c, 1, seed);
            add_depthwise(ps, p + ".dw", mid, 3, seed);
            add_conv(ps, p + ".project", cout, mid, 1, seed);
            c = cout;
        }
    }
    int64_t sides[3] = {g.h1, g.h2, g.h3};
    for (int i = 0; i < 3; ++i) {
        std::string p = "image/hybrid" + std::to_string(i + 1);
        int64_t cblk = ch[static_cast<size_t>(3 + i)];
        int64_t ctok = cblk / 2;
        add_conv(ps, p + ".local", cblk, c, 3, seed);
        add_conv(ps, p + ".reduce", ctok, cblk, 1, seed);
        add_table(ps, p + ".pos", sides[i] * sides[i], ctok, seed);
        for (int l = 0; l < cfg.hybrid_layers[static_cast<size_t>(i)]; ++l)
            add_pre_norm_layer(ps, p + ".layer" + std::to_string(l), ctok, seed);
        add_conv(ps, p + ".fuse", cblk, cblk + ctok, 1, seed);
        c = cblk;
    }
    add_conv(ps, "image/head", cfg.embed_dim, c, 1, seed);
}

struct Out {
    int tokens = -1;    // [B, N, embed_dim]
    int prehybrid = -1; // [B, C, H, W] map entering hybrid block 1
    std::vector<int> attn;
};

template <typename T>
int ib_block_fwd(Binder<T>& b, const std::string& p, int x, int64_t stride, bool residual) {
    auto& tp = b.tape();
    int e = tp.silu(conv_fwd(b, p + ".expand", x, 1, 0));
    int d = tp.silu(depthwise_fwd(b, p + ".dw", e, stride, 1));
    int pr = conv_fwd(b, p + ".project", d, 1, 0);
    return residual ? tp.add(x, pr) : pr;
}

template <typename T>
Out forward(Binder<T>& b, const ModelConfig& cfg, int images) {
    auto& tp = b.tape();
    const auto& iv = tp.val(images);
    check(iv.ndim() == 4 && iv.dim(1) == 3, "image forward: [B,3,H,W] input required");
    Out o;
    int x = tp.silu(conv_fwd(b, "image/stem", images, 2, 1));
    int64_t c = cfg.image_channels[0];
    for (int stage = 0; stage < 2; ++stage) {
        int64_t cout = cfg.image_channels[static_cast<size_t>(1 + stage)];
        for (int blk = 0; blk < cfg.ib_blocks_per_stage; ++blk) {
            std::string p = "image/ib" + std::to_string(stage + 1) + "_" + std::to_string(blk);
            int64_t stride = blk == 0 ? 2 : 1;
            x = ib_block_fwd(b, p, x, stride, stride == 1 && c == cout);
            c = cout;
        }
    }
    o.prehybrid = x;
    int64_t strides[3] = {2, 2, 1};
    for (int i = 0; i < 3; ++i) {
        std::string p = "image/hybrid" + std::to_string(i + 1);
        int64_t cblk = cfg.image_channels[static_cast<size_t>(3 + i)];
        int64_t ctok = cblk / 2;
        int local = tp.silu(conv_fwd(b, p + ".local", x, strides[i], 1));
        const auto& lv = tp.val(local);
        int64_t H = lv.dim(2), W = lv.dim(3);
        int red = conv_fwd(b, p + ".reduce", local, 1, 0);
        int tok = tp.add_rowvec(tp.nchw_to_tokens(red), b(p + ".pos"));
        for (int l = 0; l < cfg.hybrid_layers[static_cast<size_t>(i)]; ++l) {
            LayerNodes ln =
                pre_norm_layer_fwd(b, p + ".layer" + std::to_string(l), tok, cfg.image_heads);
            tok = ln.out;
            o.attn.push_back(ln.attn);
        }
        int tmap = tp.tokens_to_nchw(tok, H, W);
        x = conv_fwd(b, p + ".fuse", tp.concat_channels(local, tmap), 1, 0);
        (void)ctok;
    }
    o.tokens = tp.nchw_to_tokens(conv_fwd(b, "image/head", x, 1, 0));
    return o;
}

} // namespace bcq::img_enc
