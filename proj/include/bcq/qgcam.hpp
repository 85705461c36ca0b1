#pragma once

#include "bcq/config.hpp"
#include "bcq/layers.hpp"

// Q-Gated Cross-Modal Attention. Visual patch features query the text token
// features through multi-head cross-attention; a learned gate decides per
// patch how much attended text to mix back in:
//
//   F_att   = CrossAttn(Q = F_I, K = V = F_T)            (masked text)
//   gamma   = sigmoid(MLP([F_I ; proj(mean_masked(F_T))]))
//   F_mod   = F_I + gamma * F_att
//   F_fused = LN(F_mod + FFN(F_mod))
//   adapted = Adapter(F_fused)                           (decoder width)
//
// Variants:
//   token_balance: F_I is first rescaled per item so its mean token norm
//     matches the text's (masked) mean token norm; the scaled features
//     replace F_I everywhere above.
//   visual_query: an extra residual attention block after the LN, with the
//     fused tokens as queries and [fused tokens ; text tokens] as keys and
//     values.

namespace bcq::qgcam {

template <typename T>
void init(ParamStore<T>& ps, const ModelConfig& cfg, uint64_t seed) {
    int64_t d = cfg.embed_dim;
    add_attention(ps, "qgcam/attn", d, seed);
    add_linear(ps, "qgcam/pool_proj", d, d, seed);
    add_linear(ps, "qgcam/gate1", 2 * d, d, seed);
    // zero-initialised gate head starts the gate at exactly 0.5
    add_linear(ps, "qgcam/gate2", d, 1, seed, true, true);
    add_ffn(ps, "qgcam/ffn", d, 4 * d, seed);
    add_layernorm(ps, "qgcam/ln", d);
    add_linear(ps, "qgcam/adapter", d, cfg.decoder_dim, seed);
    if (cfg.qgcam_variant == "visual_query") add_attention(ps, "qgcam/vq", d, seed);
}

struct Out {
    int fused = -1;   // [B, N, d]
    int adapted = -1; // [B, N, decoder_dim]
    int gate = -1;    // [B, N, 1]
    int attn = -1;    // cross-attention node
    int vq_attn = -1; // visual_query attention node, if any
};

template <typename T>
Out forward(Binder<T>& b, const ModelConfig& cfg, int img_tokens, int txt_tokens,
            const std::vector<uint8_t>& txt_mask) {
    auto& tp = b.tape();
    const auto& iv = tp.val(img_tokens);
    const auto& tv = tp.val(txt_tokens);
    check(iv.ndim() == 3 && tv.ndim() == 3 && iv.dim(2) == cfg.embed_dim &&
              tv.dim(2) == cfg.embed_dim && iv.dim(0) == tv.dim(0),
          "qgcam: bad token shapes");
    check(static_cast<int64_t>(txt_mask.size()) == tv.dim(0) * tv.dim(1),
          "qgcam: text mask size mismatch");
    int64_t B = iv.dim(0), N = iv.dim(1);
    Out o;

    int fi = img_tokens;
    if (cfg.qgcam_variant == "token_balance") {
        int img_scale = tp.masked_mean_cols(tp.row_norms(img_tokens));
        int txt_scale = tp.masked_mean_cols(tp.row_norms(txt_tokens), txt_mask);
        fi = tp.scale_tokens(img_tokens, tp.div_vec(txt_scale, img_scale));
    }

    AttnNodes at = attention_fwd(b, "qgcam/attn", fi, txt_tokens, cfg.fusion_heads, txt_mask);
    o.attn = at.probs;

    int pooled = tp.masked_mean_tokens(txt_tokens, txt_mask);
    int pool_b = tp.broadcast_tokens(linear_fwd(b, "qgcam/pool_proj", pooled), N);
    int gate_in = tp.concat_feat(fi, pool_b);
    o.gate = tp.sigmoid(linear_fwd(b, "qgcam/gate2", tp.gelu(linear_fwd(b, "qgcam/gate1", gate_in))));

    int f_mod = tp.add(fi, tp.gate_mul(at.out, o.gate));
    int fused = layernorm_fwd(b, "qgcam/ln", tp.add(f_mod, ffn_fwd(b, "qgcam/ffn", f_mod)));

    if (cfg.qgcam_variant == "visual_query") {
        int kv = tp.concat_tokens(fused, txt_tokens);
        // key mask per batch item: [ones(N) ; text mask]
        int64_t Tt = tp.val(txt_tokens).dim(1);
        std::vector<uint8_t> kv_mask(static_cast<size_t>(B * (N + Tt)));
        for (int64_t bb = 0; bb < B; ++bb) {
            for (int64_t i = 0; i < N; ++i) kv_mask[static_cast<size_t>(bb * (N + Tt) + i)] = 1;
            for (int64_t i = 0; i < Tt; ++i)
                kv_mask[static_cast<size_t>(bb * (N + Tt) + N + i)] =
                    txt_mask[static_cast<size_t>(bb * Tt + i)];
        }
        AttnNodes vq =
            attention_fwd(b, "qgcam/vq", fused, kv, cfg.fusion_heads, std::move(kv_mask));
        o.vq_attn = vq.probs;
        fused = tp.add(fused, vq.out);
    }

    o.fused = fused;
    o.adapted = linear_fwd(b, "qgcam/adapter", fused);
    return o;
}

} // namespace bcq::qgcam
