#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bcq/params.hpp"
#include "bcq/rng.hpp"
#include "bcq/tape.hpp"

namespace bcq {

// Connects a ParamStore to one Tape. Each parameter gets exactly one tape
// node per forward pass no matter how often a module asks for it, so its
// gradient accumulates in one place. Frozen entries (trainable_prefix == 0)
// are bound without gradient tracking.
template <typename T>
class Binder {
  public:
    using Entry = typename ParamStore<T>::Entry;

    Binder(Tape<T>& tape, ParamStore<T>& ps, bool grads = true)
        : tape_(tape), ps_(ps), grads_(grads) {}

    Tape<T>& tape() { return tape_; }
    ParamStore<T>& store() { return ps_; }

    int operator()(const std::string& name) {
        Entry& e = ps_.entry(name);
        auto it = cache_.find(&e);
        if (it != cache_.end()) return it->second;
        int id = tape_.param(&e.value, grads_ && e.trainable_prefix > 0);
        cache_.emplace(&e, id);
        bound_.push_back({&e, id});
        return id;
    }

    const std::vector<std::pair<Entry*, int>>& bound() const { return bound_; }

  private:
    Tape<T>& tape_;
    ParamStore<T>& ps_;
    bool grads_;
    std::unordered_map<Entry*, int> cache_;
    std::vector<std::pair<Entry*, int>> bound_;
};

// ---- parameter initialisers ----
// Every tensor is seeded from (master seed, its own name), so values do not
// depend on creation order.

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out,
                uint64_t seed, bool bias = true, bool zero_init = false) {
    Rng rw(derive_seed(seed, prefix + ".w"));
    double std = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    ps.add(prefix + ".w", randn<T>({in, out}, rw, std));
    if (bias) ps.add(prefix + ".b", Tensor<T>({out}));
}

template <typename T>
int linear_fwd(Binder<T>& b, const std::string& prefix, int x) {
    int bias = b.store().has(prefix + ".b") ? b(prefix + ".b") : -1;
    return b.tape().linear(x, b(prefix + ".w"), bias);
}

template <typename T>
void add_layernorm(ParamStore<T>& ps, const std::string& prefix, int64_t dim) {
    ps.add(prefix + ".g", Tensor<T>({dim}, T(1)));
    ps.add(prefix + ".b", Tensor<T>({dim}));
}

template <typename T>
int layernorm_fwd(Binder<T>& b, const std::string& prefix, int x) {
    return b.tape().layernorm(x, b(prefix + ".g"), b(prefix + ".b"));
}

template <typename T>
void add_attention(ParamStore<T>& ps, const std::string& prefix, int64_t width, uint64_t seed) {
    add_linear(ps, prefix + ".q", width, width, seed);
    add_linear(ps, prefix + ".k", width, width, seed);
    add_linear(ps, prefix + ".v", width, width, seed);
    add_linear(ps, prefix + ".o", width, width, seed);
}

struct AttnNodes {
    int out = -1;
    int probs = -1; // attention node, for reading normalised weights
};

// self- or cross-attention with separate query and key/value sources
template <typename T>
AttnNodes attention_fwd(Binder<T>& b, const std::string& prefix, int q_src, int kv_src,
                        int64_t heads, std::vector<uint8_t> key_mask = {}, bool causal = false) {
    auto& tp = b.tape();
    int q = linear_fwd(b, prefix + ".q", q_src);
    int k = linear_fwd(b, prefix + ".k", kv_src);
    int v = linear_fwd(b, prefix + ".v", kv_src);
    int att = tp.attention(q, k, v, heads, std::move(key_mask), causal);
    int out = linear_fwd(b, prefix + ".o", att);
    return {out, att};
}

template <typename T>
void add_ffn(ParamStore<T>& ps, const std::string& prefix, int64_t width, int64_t hidden,
             uint64_t seed) {
    add_linear(ps, prefix + ".w1", width, hidden, seed);
    add_linear(ps, prefix + ".w2", hidden, width, seed);
}

template <typename T>
int ffn_fwd(Binder<T>& b, const std::string& prefix, int x) {
    auto& tp = b.tape();
    return linear_fwd(b, prefix + ".w2", tp.gelu(linear_fwd(b, prefix + ".w1", x)));
}

// standard pre-norm transformer layer: x + attn(ln1(x)); then x + ffn(ln2(x))
template <typename T>
void add_pre_norm_layer(ParamStore<T>& ps, const std::string& prefix, int64_t width,
                        uint64_t seed) {
    add_layernorm(ps, prefix + ".ln1", width);
    add_attention(ps, prefix + ".attn", width, seed);
    add_layernorm(ps, prefix + ".ln2", width);
    add_ffn(ps, prefix + ".ffn", width, 4 * width, seed);
}

struct LayerNodes {
    int out = -1;
    int attn = -1;
};

template <typename T>
LayerNodes pre_norm_layer_fwd(Binder<T>& b, const std::string& prefix, int x, int64_t heads,
                              std::vector<uint8_t> key_mask = {}, bool causal = false) {
    auto& tp = b.tape();
    int a = layernorm_fwd(b, prefix + ".ln1", x);
    AttnNodes at = attention_fwd(b, prefix + ".attn", a, a, heads, std::move(key_mask), causal);
    int h = tp.add(x, at.out);
    int f = ffn_fwd(b, prefix + ".ffn", layernorm_fwd(b, prefix + ".ln2", h));
    return {tp.add(h, f), at.probs};
}

template <typename T>
void add_conv(ParamStore<T>& ps, const std::string& prefix, int64_t co, int64_t ci, int64_t k,
              uint64_t seed) {
    Rng rw(derive_seed(seed, prefix + ".w"));
    double std = std::sqrt(2.0 / static_cast<double>(ci * k * k));
    ps.add(prefix + ".w", randn<T>({co, ci, k, k}, rw, std));
    ps.add(prefix + ".b", Tensor<T>({co}));
}

template <typename T>
int conv_fwd(Binder<T>& b, const std::string& prefix, int x, int64_t stride, int64_t pad) {
    return b.tape().conv2d(x, b(prefix + ".w"), b(prefix + ".b"), stride, pad);
}

template <typename T>
void add_depthwise(ParamStore<T>& ps, const std::string& prefix, int64_t c, int64_t k,
                   uint64_t seed) {
    Rng rw(derive_seed(seed, prefix + ".w"));
    double std = std::sqrt(2.0 / static_cast<double>(k * k));
    ps.add(prefix + ".w", randn<T>({c, k, k}, rw, std));
    ps.add(prefix + ".b", Tensor<T>({c}));
}

template <typename T>
int depthwise_fwd(Binder<T>& b, const std::string& prefix, int x, int64_t stride, int64_t pad) {
    return b.tape().depthwise2d(x, b(prefix + ".w"), b(prefix + ".b"), stride, pad);
}

template <typename T>
void add_table(ParamStore<T>& ps, const std::string& name, int64_t rows, int64_t cols,
               uint64_t seed, double std = 0.02) {
    Rng rw(derive_seed(seed, name));
    ps.add(name, randn<T>({rows, cols}, rw, std));
}

} // namespace bcq
