#pragma once

#include <cmath>

#include "bcq/config.hpp"
#include "bcq/layers.hpp"

// Miniature causal transformer decoder. The input sequence is the adapted
// visual pseudo tokens followed by embedded text tokens; pre-norm layers with
// causal self-attention, a final layer norm and a vocabulary head produce
// next-token logits. The generation loss is cross entropy over response
// positions only: position t is supervised when token t+1 belongs to the
// response, and its label is exactly that next token.

namespace bcq::dec {

template <typename T>
void init(ParamStore<T>& ps, const ModelConfig& cfg, uint64_t seed) {
    add_table(ps, "decoder/embed", cfg.vocab_size, cfg.decoder_dim, seed);
    add_table(ps, "decoder/pos", cfg.seq_len(), cfg.decoder_dim, seed);
    for (int i = 0; i < cfg.decoder_layers; ++i)
        add_pre_norm_layer(ps, "decoder/layer" + std::to_string(i), cfg.decoder_dim, seed);
    add_layernorm(ps, "decoder/ln_f", cfg.decoder_dim);
    add_linear(ps, "decoder/head", cfg.decoder_dim, cfg.vocab_size, seed);
}

struct Out {
    int logits = -1; // [B, N + T, vocab]
    std::vector<int> attn;
};

// pseudo: [B, N, decoder_dim]; text_ids: B * T token ids
template <typename T>
Out forward(Binder<T>& b, const ModelConfig& cfg, int pseudo, const std::vector<int64_t>& text_ids,
            int64_t B, int64_t Tt) {
    auto& tp = b.tape();
    const auto& pv = tp.val(pseudo);
    check(pv.ndim() == 3 && pv.dim(0) == B && pv.dim(2) == cfg.decoder_dim,
          "decoder: bad pseudo token shape");
    check(static_cast<int64_t>(text_ids.size()) == B * Tt, "decoder: text id count mismatch");
    check(pv.dim(1) + Tt <= cfg.seq_len(), "decoder: sequence exceeds position table");
    Out o;
    int temb = tp.embed(b("decoder/embed"), text_ids, B, Tt);
    int x = tp.add_rowvec(tp.concat_tokens(pseudo, temb), b("decoder/pos"));
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        LayerNodes ln = pre_norm_layer_fwd(b, "decoder/layer" + std::to_string(i), x,
                                           cfg.decoder_heads, {}, true);
        x = ln.out;
        o.attn.push_back(ln.attn);
    }
    x = layernorm_fwd(b, "decoder/ln_f", x);
    o.logits = linear_fwd(b, "decoder/head", x);
    return o;
}

// Builds the decoder text stream for one (question, answer) pair:
// instruction [BOS, question words, EOS] then response [answer words, EOS],
// padded with PAD to max_len.
struct TextStream {
    std::vector<int64_t> ids;
    int64_t inst_len = 0; // instruction token count
    int64_t resp_len = 0; // response token count (including trailing EOS)
};

inline TextStream make_stream(const std::vector<int64_t>& question_words,
                              const std::vector<int64_t>& answer_words, int64_t max_len,
                              int64_t pad, int64_t bos, int64_t eos) {
    TextStream s;
    s.ids.push_back(bos);
    for (auto id : question_words) s.ids.push_back(id);
    s.ids.push_back(eos);
    s.inst_len = static_cast<int64_t>(s.ids.size());
    for (auto id : answer_words) s.ids.push_back(id);
    s.ids.push_back(eos);
    s.resp_len = static_cast<int64_t>(s.ids.size()) - s.inst_len;
    check(static_cast<int64_t>(s.ids.size()) <= max_len,
          "decoder stream: question + answer exceed text_max_len");
    while (static_cast<int64_t>(s.ids.size()) < max_len) s.ids.push_back(pad);
    return s;
}

// Labels and supervision mask over the concatenated [pseudo ; text] sequence:
// label[t] = token at t+1, supervised only where that token is part of the
// response. Unsupervised label slots hold pad_id.
struct Supervision {
    std::vector<int64_t> labels; // B * S
    std::vector<uint8_t> mask;   // B * S
};

inline Supervision make_supervision(const std::vector<TextStream>& streams, int64_t n_patches,
                                    int64_t text_len, int64_t pad_id) {
    int64_t S = n_patches + text_len;
    Supervision sup;
    sup.labels.assign(static_cast<size_t>(streams.size()) * static_cast<size_t>(S), pad_id);
    sup.mask.assign(sup.labels.size(), 0);
    for (size_t b = 0; b < streams.size(); ++b) {
        const TextStream& st = streams[b];
        int64_t resp_begin = n_patches + st.inst_len; // first response position
        for (int64_t t = resp_begin - 1; t < resp_begin + st.resp_len - 1; ++t) {
            int64_t next = t + 1 - n_patches; // index into the text stream
            sup.labels[b * static_cast<size_t>(S) + static_cast<size_t>(t)] =
                st.ids[static_cast<size_t>(next)];
            sup.mask[b * static_cast<size_t>(S) + static_cast<size_t>(t)] = 1;
        }
    }
    return sup;
}

// Order in which decoder tensors become trainable as unfreeze_ratio grows,
// from the output side down: head, final norm, top layers first, then the
// position table and token embedding last.
inline std::vector<std::string> unfreeze_order(const ModelConfig& cfg) {
    std::vector<std::string> names = {"decoder/head.w", "decoder/head.b", "decoder/ln_f.g",
                                      "decoder/ln_f.b"};
    for (int i = cfg.decoder_layers - 1; i >= 0; --i) {
        std::string p = "decoder/layer" + std::to_string(i);
        for (const char* s :
             {".attn.q.w", ".attn.q.b", ".attn.k.w", ".attn.k.b", ".attn.v.w", ".attn.v.b",
              ".attn.o.w", ".attn.o.b", ".ffn.w1.w", ".ffn.w1.b", ".ffn.w2.w", ".ffn.w2.b",
              ".ln1.g", ".ln1.b", ".ln2.g", ".ln2.b"})
            names.push_back(p + s);
    }
    names.push_back("decoder/pos");
    names.push_back("decoder/embed");
    return names;
}

// Fractional unfreezing at element granularity: exactly
// ceil(ratio * total decoder elements) elements become trainable, assigned to
// whole tensors in unfreeze_order until the budget runs out (the tensor on
// the boundary is split). Ratios r1 <= r2 give nested trainable sets.
template <typename T>
void set_unfreeze_ratio(ParamStore<T>& ps, const ModelConfig& cfg, double ratio) {
    check(ratio >= 0.0 && ratio <= 1.0, "unfreeze ratio must be in [0, 1]");
    auto order = unfreeze_order(cfg);
    int64_t total = 0;
    for (const auto& name : order) total += ps[name].numel();
    int64_t budget = static_cast<int64_t>(std::ceil(ratio * static_cast<double>(total)));
    for (const auto& name : order) {
        auto& e = ps.entry(name);
        int64_t take = std::min(budget, e.value.numel());
        e.trainable_prefix = take;
        budget -= take;
    }
}

template <typename T>
int64_t decoder_total_elements(const ParamStore<T>& ps, const ModelConfig& cfg) {
    auto order = unfreeze_order(cfg);
    int64_t total = 0;
    for (const auto& name : order) total += ps[name].numel();
    return total;
}

template <typename T>
int64_t decoder_trainable_elements(const ParamStore<T>& ps, const ModelConfig& cfg) {
    auto order = unfreeze_order(cfg);
    int64_t n = 0;
    for (const auto& name : order) n += ps.entry(name).trainable_prefix;
    return n;
}

} // namespace bcq::dec
