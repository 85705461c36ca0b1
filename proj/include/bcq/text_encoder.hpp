#pragma once

#include "bcq/config.hpp"
#include "bcq/layers.hpp"

// Bottleneck text transformer with a factorised embedding. Tokens are
// embedded into a small width, expanded to the hidden width, and each layer
// squeezes the stream through a narrow bottleneck:
//
//   y = LN_out(x + Up(FFN(SelfAttn(Down(LN_in(x))))))
//
// where attention and the FFN run at the bottleneck width. Token features
// are projected to the shared embedding dim; the pooled sentence embedding
// is the mean of the projected features over unmasked positions.

namespace bcq::text_enc {

template <typename T>
void init(ParamStore<T>& ps, const ModelConfig& cfg, uint64_t seed) {
    add_table(ps, "text/embed", cfg.vocab_size, cfg.text_embed_factor, seed);
    add_linear(ps, "text/factor", cfg.text_embed_factor, cfg.text_hidden, seed, false);
    add_table(ps, "text/pos", cfg.text_max_len, cfg.text_hidden, seed);
    for (int i = 0; i < cfg.text_layers; ++i) {
        std::string p = "text/layer" + std::to_string(i);
        add_layernorm(ps, p + ".ln_in", cfg.text_hidden);
        add_linear(ps, p + ".down", cfg.text_hidden, cfg.text_bottleneck, seed);
        add_attention(ps, p + ".attn", cfg.text_bottleneck, seed);
        add_ffn(ps, p + ".ffn", cfg.text_bottleneck, 4 * cfg.text_bottleneck, seed);
        add_linear(ps, p + ".up", cfg.text_bottleneck, cfg.text_hidden, seed);
        add_layernorm(ps, p + ".ln_out", cfg.text_hidden);
    }
    add_linear(ps, "text/proj", cfg.text_hidden, cfg.embed_dim, seed);
}

struct Out {
    int tokens = -1; // [B, T, embed_dim]
    int pooled = -1; // [B, embed_dim]
    std::vector<int> attn; // attention nodes, one per layer
};

template <typename T>
Out forward(Binder<T>& b, const ModelConfig& cfg, const std::vector<int64_t>& ids,
            const std::vector<uint8_t>& mask, int64_t B) {
    auto& tp = b.tape();
    int64_t S = static_cast<int64_t>(ids.size()) / B;
    check(B * S == static_cast<int64_t>(ids.size()) && ids.size() == mask.size(),
          "text forward: ids/mask size mismatch");
    check(S <= cfg.text_max_len, "text forward: sequence longer than text_max_len");
    Out o;
    int x = tp.embed(b("text/embed"), ids, B, S);
    x = linear_fwd(b, "text/factor", x);
    x = tp.add_rowvec(x, b("text/pos"));
    for (int i = 0; i < cfg.text_layers; ++i) {
        std::string p = "text/layer" + std::to_string(i);
        int a = layernorm_fwd(b, p + ".ln_in", x);
        int dn = linear_fwd(b, p + ".down", a);
        AttnNodes at = attention_fwd(b, p + ".attn", dn, dn, cfg.text_heads, mask);
        o.attn.push_back(at.probs);
        int f = ffn_fwd(b, p + ".ffn", at.out);
        int up = linear_fwd(b, p + ".up", f);
        x = layernorm_fwd(b, p + ".ln_out", tp.add(x, up));
    }
    o.tokens = linear_fwd(b, "text/proj", x);
    o.pooled = tp.masked_mean_tokens(o.tokens, mask);
    return o;
}

} // namespace bcq::text_enc
