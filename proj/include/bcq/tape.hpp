#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "bcq/kernels.hpp"
#include "bcq/tensor.hpp"

// Reverse-mode autodiff on a flat tape. Every op runs its forward immediately
// and records a closure for the backward sweep. Templated on the scalar type
// so the same graph code runs in float for training and in double for
// finite-difference verification.

namespace bcq {

template <typename T>
class Tape {
  public:
    struct Node {
        Tensor<T> val;                  // owned output (unused for external leaves)
        const Tensor<T>* ext = nullptr; // external storage (parameters)
        Tensor<T> grad;                 // lazily allocated
        bool needs_grad = false;
        std::function<void(Tape&)> back;
        std::vector<Tensor<T>> aux;     // saved activations for backward
    };

    std::vector<Node> nodes;

    const Tensor<T>& val(int id) const {
        const Node& n = nodes[static_cast<size_t>(id)];
        return n.ext ? *n.ext : n.val;
    }

    // grad tensor, allocated on first touch
    Tensor<T>& grad(int id) {
        Node& n = nodes[static_cast<size_t>(id)];
        if (n.grad.v.empty()) {
            n.grad.shape = val(id).shape;
            n.grad.v.assign(static_cast<size_t>(val(id).numel()), T(0));
        }
        return n.grad;
    }

    bool grad_touched(int id) const { return !nodes[static_cast<size_t>(id)].grad.v.empty(); }
    bool needs_grad(int id) const { return nodes[static_cast<size_t>(id)].needs_grad; }

    int leaf(Tensor<T> value, bool needs = false) {
        Node n;
        n.val = std::move(value);
        n.needs_grad = needs;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    // external leaf; caller keeps the tensor alive for the tape's lifetime
    int param(const Tensor<T>* value, bool needs = true) {
        Node n;
        n.ext = value;
        n.needs_grad = needs;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    void backward(int root) {
        check(val(root).numel() == 1, "backward root must be scalar");
        grad(root).v[0] = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes[static_cast<size_t>(i)];
            if (n.back && n.needs_grad && !n.grad.v.empty()) n.back(*this);
        }
    }

    // ---- elementwise and structural ops ----

    int add(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
        return record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
        });
    }

    int add_scaled(int a, int b, T ca, T cb) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "add_scaled: shape mismatch");
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = ca * out[i] + cb * bv[i];
        return record(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += ca * g[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += cb * g[i];
            }
        });
    }

    int scale(int a, T c) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x *= c;
        return record(std::move(out), {a}, [a, c](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (!t.needs_grad(a)) return;
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    int mul(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "mul: shape mismatch");
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
        return record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& av2 = t.val(a);
            const auto& bv2 = t.val(b);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }

    int sigmoid(int a) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x = T(1) / (T(1) + std::exp(-x));
        return record(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(self);
            const auto& y = t.val(self);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
        });
    }

    int silu(int a) {
        Tensor<T> out = val(a);
        for (auto& x : out.v) x = x / (T(1) + std::exp(-x));
        return record(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(self);
            const auto& xv = t.val(a);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) {
                T s = T(1) / (T(1) + std::exp(-xv[i]));
                ga[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
            }
        });
    }

    int gelu(int a) {
        // tanh approximation; smooth everywhere
        constexpr double kk = 0.7978845608028654; // sqrt(2/pi)
        constexpr double cc = 0.044715;
        Tensor<T> out = val(a);
        for (auto& x : out.v) {
            double xd = static_cast<double>(x);
            double u = kk * (xd + cc * xd * xd * xd);
            x = static_cast<T>(0.5 * xd * (1.0 + std::tanh(u)));
        }
        return record(std::move(out), {a}, [a](Tape& t, int self) {
            if (!t.needs_grad(a)) return;
            const auto& g = t.grad(self);
            const auto& xv = t.val(a);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) {
                double xd = static_cast<double>(xv[i]);
                double u = kk * (xd + cc * xd * xd * xd);
                double th = std::tanh(u);
                double d = 0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * kk * (1.0 + 3.0 * cc * xd * xd);
                ga[i] += g[i] * static_cast<T>(d);
            }
        });
    }

    // ---- linear algebra ----

    // x [..., in] * w [in, out] (+ b [out]) -> [..., out]
    int linear(int x, int w, int b = -1) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        check(wv.ndim() == 2, "linear: weight must be 2d");
        int64_t in = wv.dim(0), out_dim = wv.dim(1);
        check(xv.last_dim() == in, "linear: input width " + std::to_string(xv.last_dim()) +
                                       " vs weight rows " + std::to_string(in));
        int64_t rows = xv.rows();
        std::vector<int64_t> oshape = xv.shape;
        oshape.back() = out_dim;
        Tensor<T> out(oshape);
        kern::gemm_nn(xv.data(), wv.data(), out.data(), rows, in, out_dim);
        if (b >= 0) {
            const auto& bv = val(b);
            check(bv.numel() == out_dim, "linear: bias size mismatch");
            kern::add_bias_rows(out.data(), bv.data(), rows, out_dim);
        }
        return record(std::move(out), {x, w, b}, [x, w, b, rows, in, out_dim](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& xv2 = t.val(x);
            const auto& wv2 = t.val(w);
            if (t.needs_grad(x))
                kern::gemm_nt(g.data(), wv2.data(), t.grad(x).data(), rows, out_dim, in, true);
            if (t.needs_grad(w))
                kern::gemm_tn(xv2.data(), g.data(), t.grad(w).data(), in, rows, out_dim, true);
            if (b >= 0 && t.needs_grad(b))
                kern::bias_grad(g.data(), t.grad(b).data(), rows, out_dim);
        });
    }

    // similarity matrix a [M,d] * b [N,d]^T -> [M,N]
    int simmat(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(1), "simmat: bad shapes");
        int64_t M = av.dim(0), N = bv.dim(0), d = av.dim(1);
        Tensor<T> out({M, N});
        kern::gemm_nt(av.data(), bv.data(), out.data(), M, d, N);
        return record(std::move(out), {a, b}, [a, b, M, N, d](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a))
                kern::gemm_nn(g.data(), t.val(b).data(), t.grad(a).data(), M, N, d, true);
            if (t.needs_grad(b))
                kern::gemm_tn(g.data(), t.val(a).data(), t.grad(b).data(), N, M, d, true);
        });
    }

    // table [V,e], ids flattened [B*S] -> [B,S,e]
    int embed(int table, const std::vector<int64_t>& ids, int64_t B, int64_t S) {
        const auto& tv = val(table);
        check(tv.ndim() == 2, "embed: table must be 2d");
        check(static_cast<int64_t>(ids.size()) == B * S, "embed: ids size mismatch");
        int64_t V = tv.dim(0), e = tv.dim(1);
        Tensor<T> out({B, S, e});
        for (int64_t r = 0; r < B * S; ++r) {
            int64_t id = ids[static_cast<size_t>(r)];
            check(id >= 0 && id < V, "embed: id out of range");
            const T* src = tv.data() + id * e;
            T* dst = out.data() + r * e;
            for (int64_t j = 0; j < e; ++j) dst[j] = src[j];
        }
        return record(std::move(out), {table}, [table, ids, e](Tape& t, int self) {
            if (!t.needs_grad(table)) return;
            const auto& g = t.grad(self);
            auto& gt = t.grad(table);
            int64_t R = g.numel() / e;
            for (int64_t r = 0; r < R; ++r) {
                T* dst = gt.data() + ids[static_cast<size_t>(r)] * e;
                const T* src = g.data() + r * e;
                for (int64_t j = 0; j < e; ++j) dst[j] += src[j];
            }
        });
    }

    // x [B,S,D] + first S rows of p [P,D], broadcast over batch
    int add_rowvec(int x, int p) {
        const auto& xv = val(x);
        const auto& pv = val(p);
        check(xv.ndim() == 3 && pv.ndim() == 2, "add_rowvec: needs [B,S,D] and [P,D]");
        int64_t B = xv.dim(0), S = xv.dim(1), D = xv.dim(2);
        check(pv.dim(0) >= S && pv.dim(1) == D, "add_rowvec: table too small");
        Tensor<T> out = xv;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < S; ++s) {
                T* row = out.data() + (b * S + s) * D;
                const T* pr = pv.data() + s * D;
                for (int64_t j = 0; j < D; ++j) row[j] += pr[j];
            }
        return record(std::move(out), {x, p}, [x, p, B, S, D](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            }
            if (t.needs_grad(p)) {
                auto& gp = t.grad(p);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t s = 0; s < S; ++s) {
                        const T* row = g.data() + (b * S + s) * D;
                        T* pr = gp.data() + s * D;
                        for (int64_t j = 0; j < D; ++j) pr[j] += row[j];
                    }
            }
        });
    }

    int layernorm(int x, int gamma, int beta, T eps = T(1e-5)) {
        const auto& xv = val(x);
        const auto& gv = val(gamma);
        const auto& bv = val(beta);
        int64_t D = xv.last_dim();
        check(gv.numel() == D && bv.numel() == D, "layernorm: gamma/beta size mismatch");
        int64_t R = xv.rows();
        Tensor<T> out(xv.shape);
        Tensor<T> xhat(xv.shape);
        Tensor<T> inv_std({R});
        for (int64_t r = 0; r < R; ++r) {
            const T* row = xv.data() + r * D;
            T mean = T(0);
            for (int64_t j = 0; j < D; ++j) mean += row[j];
            mean /= static_cast<T>(D);
            T var = T(0);
            for (int64_t j = 0; j < D; ++j) {
                T dx = row[j] - mean;
                var += dx * dx;
            }
            var /= static_cast<T>(D);
            T inv = T(1) / std::sqrt(var + eps);
            inv_std[r] = inv;
            for (int64_t j = 0; j < D; ++j) {
                T xh = (row[j] - mean) * inv;
                xhat[r * D + j] = xh;
                out[r * D + j] = xh * gv[j] + bv[j];
            }
        }
        int self = record(std::move(out), {x, gamma, beta},
                          [x, gamma, beta, R, D](Tape& t, int self2) {
            const auto& g = t.grad(self2);
            const auto& xh = t.nodes[static_cast<size_t>(self2)].aux[0];
            const auto& inv = t.nodes[static_cast<size_t>(self2)].aux[1];
            const auto& gv2 = t.val(gamma);
            if (t.needs_grad(gamma)) {
                auto& gg = t.grad(gamma);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t j = 0; j < D; ++j) gg[j] += g[r * D + j] * xh[r * D + j];
            }
            if (t.needs_grad(beta)) {
                auto& gb = t.grad(beta);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t j = 0; j < D; ++j) gb[j] += g[r * D + j];
            }
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (int64_t r = 0; r < R; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (int64_t j = 0; j < D; ++j) {
                        T dxh = g[r * D + j] * gv2[j];
                        m1 += dxh;
                        m2 += dxh * xh[r * D + j];
                    }
                    m1 /= static_cast<T>(D);
                    m2 /= static_cast<T>(D);
                    for (int64_t j = 0; j < D; ++j) {
                        T dxh = g[r * D + j] * gv2[j];
                        gx[r * D + j] += (dxh - m1 - xh[r * D + j] * m2) * inv[r];
                    }
                }
            }
        });
        nodes.back().aux.push_back(std::move(xhat));
        nodes.back().aux.push_back(std::move(inv_std));
        return self;
    }

    // fused multi-head attention. q [B,Tq,d], k/v [B,Tk,d].
    // key_mask: B*Tk bytes, 0 = masked out. causal requires Tq == Tk.
    int attention(int q, int k, int v, int64_t heads, std::vector<uint8_t> key_mask = {},
                  bool causal = false) {
        const auto& qv = val(q);
        const auto& kv = val(k);
        const auto& vv = val(v);
        check(qv.ndim() == 3 && kv.ndim() == 3 && vv.ndim() == 3, "attention: 3d inputs required");
        int64_t B = qv.dim(0), Tq = qv.dim(1), d = qv.dim(2);
        int64_t Tk = kv.dim(1);
        check(kv.dim(0) == B && vv.dim(0) == B && vv.dim(1) == Tk && kv.dim(2) == d &&
                  vv.dim(2) == d,
              "attention: k/v shape mismatch");
        check(d % heads == 0, "attention: width not divisible by heads");
        check(key_mask.empty() || static_cast<int64_t>(key_mask.size()) == B * Tk,
              "attention: mask size mismatch");
        check(!causal || Tq == Tk, "attention: causal needs Tq == Tk");
        int64_t dh = d / heads;
        T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
        Tensor<T> out({B, Tq, d});
        Tensor<T> probs({B, heads, Tq, Tk});
        std::vector<T> Qh(static_cast<size_t>(Tq * dh)), Kh(static_cast<size_t>(Tk * dh)),
            Vh(static_cast<size_t>(Tk * dh)), S(static_cast<size_t>(Tq * Tk)),
            C(static_cast<size_t>(Tq * dh));
        const T neg_inf = -std::numeric_limits<T>::infinity();
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
                pack_head(qv, b, h, Tq, d, dh, Qh.data());
                pack_head(kv, b, h, Tk, d, dh, Kh.data());
                pack_head(vv, b, h, Tk, d, dh, Vh.data());
                kern::gemm_nt(Qh.data(), Kh.data(), S.data(), Tq, dh, Tk);
                for (int64_t i = 0; i < Tq; ++i) {
                    T* srow = S.data() + i * Tk;
                    for (int64_t j = 0; j < Tk; ++j) {
                        srow[j] *= scale;
                        bool masked = false;
                        if (!key_mask.empty() && !key_mask[static_cast<size_t>(b * Tk + j)])
                            masked = true;
                        if (causal && j > i) masked = true;
                        if (masked) srow[j] = neg_inf;
                    }
                    softmax_row(srow, Tk);
                }
                kern::gemm_nn(S.data(), Vh.data(), C.data(), Tq, Tk, dh);
                T* pb = probs.data() + ((b * heads + h) * Tq) * Tk;
                for (int64_t i = 0; i < Tq * Tk; ++i) pb[i] = S[static_cast<size_t>(i)];
                unpack_head(C.data(), b, h, Tq, d, dh, out);
            }
        }
        int self = record(std::move(out), {q, k, v},
                          [q, k, v, B, heads, Tq, Tk, d, dh, scale](Tape& t, int self2) {
            const auto& g = t.grad(self2);
            const auto& probs2 = t.nodes[static_cast<size_t>(self2)].aux[0];
            const auto& kv2 = t.val(k);
            const auto& vv2 = t.val(v);
            const auto& qv2 = t.val(q);
            bool nq = t.needs_grad(q), nk = t.needs_grad(k), nv = t.needs_grad(v);
            std::vector<T> Qh(static_cast<size_t>(Tq * dh)), Kh(static_cast<size_t>(Tk * dh)),
                Vh(static_cast<size_t>(Tk * dh)), dC(static_cast<size_t>(Tq * dh)),
                dP(static_cast<size_t>(Tq * Tk)), dS(static_cast<size_t>(Tq * Tk)),
                dQh(static_cast<size_t>(Tq * dh)), dKh(static_cast<size_t>(Tk * dh)),
                dVh(static_cast<size_t>(Tk * dh));
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t h = 0; h < heads; ++h) {
                    pack_head(qv2, b, h, Tq, d, dh, Qh.data());
                    pack_head(kv2, b, h, Tk, d, dh, Kh.data());
                    pack_head(vv2, b, h, Tk, d, dh, Vh.data());
                    pack_head(g, b, h, Tq, d, dh, dC.data());
                    const T* P = probs2.data() + ((b * heads + h) * Tq) * Tk;
                    if (nq || nk) {
                        kern::gemm_nt(dC.data(), Vh.data(), dP.data(), Tq, dh, Tk);
                        for (int64_t i = 0; i < Tq; ++i) {
                            const T* prow = P + i * Tk;
                            const T* dprow = dP.data() + i * Tk;
                            T dot = T(0);
                            for (int64_t j = 0; j < Tk; ++j) dot += prow[j] * dprow[j];
                            T* dsrow = dS.data() + i * Tk;
                            for (int64_t j = 0; j < Tk; ++j)
                                dsrow[j] = prow[j] * (dprow[j] - dot) * scale;
                        }
                    }
                    if (nq) {
                        kern::gemm_nn(dS.data(), Kh.data(), dQh.data(), Tq, Tk, dh);
                        accum_head(dQh.data(), b, h, Tq, d, dh, t.grad(q));
                    }
                    if (nk) {
                        kern::gemm_tn(dS.data(), Qh.data(), dKh.data(), Tk, Tq, dh);
                        accum_head(dKh.data(), b, h, Tk, d, dh, t.grad(k));
                    }
                    if (nv) {
                        kern::gemm_tn(P, dC.data(), dVh.data(), Tk, Tq, dh);
                        accum_head(dVh.data(), b, h, Tk, d, dh, t.grad(v));
                    }
                }
            }
        });
        nodes.back().aux.push_back(std::move(probs));
        return self;
    }

    // attention probabilities of node id (aux of an attention op), [B,H,Tq,Tk]
    const Tensor<T>& attn_probs(int id) const { return nodes[static_cast<size_t>(id)].aux[0]; }

    // ---- convolution ----

    // x [B,Ci,H,W], w [Co,Ci,kh,kw], b [Co] or -1
    int conv2d(int x, int w, int b, int64_t stride, int64_t pad) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        check(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: bad ranks");
        check(xv.dim(1) == wv.dim(1), "conv2d: channel mismatch");
        auto d = kern::conv_dims(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2),
                                 wv.dim(3), stride, pad);
        check(d.Ho > 0 && d.Wo > 0, "conv2d: empty output");
        const T* bias = nullptr;
        if (b >= 0) {
            check(val(b).numel() == d.Co, "conv2d: bias size mismatch");
            bias = val(b).data();
        }
        Tensor<T> out({d.B, d.Co, d.Ho, d.Wo});
        kern::conv2d(xv.data(), wv.data(), bias, out.data(), d);
        return record(std::move(out), {x, w, b}, [x, w, b, d](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(x)) kern::conv2d_dx(g.data(), t.val(w).data(), t.grad(x).data(), d);
            if (t.needs_grad(w)) kern::conv2d_dw(t.val(x).data(), g.data(), t.grad(w).data(), d);
            if (b >= 0 && t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t bb = 0; bb < d.B; ++bb)
                    for (int64_t co = 0; co < d.Co; ++co) {
                        const T* base = g.data() + (bb * d.Co + co) * d.Ho * d.Wo;
                        T s = T(0);
                        for (int64_t i = 0; i < d.Ho * d.Wo; ++i) s += base[i];
                        gb[co] += s;
                    }
            }
        });
    }

    // x [B,C,H,W], w [C,kh,kw], b [C] or -1
    int depthwise2d(int x, int w, int b, int64_t stride, int64_t pad) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        check(xv.ndim() == 4 && wv.ndim() == 3, "depthwise2d: bad ranks");
        check(xv.dim(1) == wv.dim(0), "depthwise2d: channel mismatch");
        auto d = kern::conv_dims(xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), xv.dim(1), wv.dim(1),
                                 wv.dim(2), stride, pad);
        check(d.Ho > 0 && d.Wo > 0, "depthwise2d: empty output");
        const T* bias = nullptr;
        if (b >= 0) {
            check(val(b).numel() == d.Ci, "depthwise2d: bias size mismatch");
            bias = val(b).data();
        }
        Tensor<T> out({d.B, d.Ci, d.Ho, d.Wo});
        kern::depthwise2d(xv.data(), wv.data(), bias, out.data(), d);
        return record(std::move(out), {x, w, b}, [x, w, b, d](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(x))
                kern::depthwise2d_dx(g.data(), t.val(w).data(), t.grad(x).data(), d);
            if (t.needs_grad(w))
                kern::depthwise2d_dw(t.val(x).data(), g.data(), t.grad(w).data(), d);
            if (b >= 0 && t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t bb = 0; bb < d.B; ++bb)
                    for (int64_t c = 0; c < d.Ci; ++c) {
                        const T* base = g.data() + (bb * d.Ci + c) * d.Ho * d.Wo;
                        T s = T(0);
                        for (int64_t i = 0; i < d.Ho * d.Wo; ++i) s += base[i];
                        gb[c] += s;
                    }
            }
        });
    }

    // [B,C,H,W] -> [B,H*W,C]
    int nchw_to_tokens(int x) {
        const auto& xv = val(x);
        check(xv.ndim() == 4, "nchw_to_tokens: rank 4 required");
        int64_t B = xv.dim(0), Cc = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        Tensor<T> out({B, H * W, Cc});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < Cc; ++c)
                for (int64_t i = 0; i < H * W; ++i)
                    out[(b * H * W + i) * Cc + c] = xv[(b * Cc + c) * H * W + i];
        return record(std::move(out), {x}, [x, B, Cc, H, W](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < Cc; ++c)
                    for (int64_t i = 0; i < H * W; ++i)
                        gx[(b * Cc + c) * H * W + i] += g[(b * H * W + i) * Cc + c];
        });
    }

    // [B,N,C] -> [B,C,H,W] with N == H*W
    int tokens_to_nchw(int x, int64_t H, int64_t W) {
        const auto& xv = val(x);
        check(xv.ndim() == 3 && xv.dim(1) == H * W, "tokens_to_nchw: token count mismatch");
        int64_t B = xv.dim(0), Cc = xv.dim(2);
        Tensor<T> out({B, Cc, H, W});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < Cc; ++c)
                for (int64_t i = 0; i < H * W; ++i)
                    out[(b * Cc + c) * H * W + i] = xv[(b * H * W + i) * Cc + c];
        return record(std::move(out), {x}, [x, B, Cc, H, W](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < Cc; ++c)
                    for (int64_t i = 0; i < H * W; ++i)
                        gx[(b * H * W + i) * Cc + c] += g[(b * Cc + c) * H * W + i];
        });
    }

    int concat_channels(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.ndim() == 4 && bv.ndim() == 4 && av.dim(0) == bv.dim(0) &&
                  av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
              "concat_channels: shape mismatch");
        int64_t B = av.dim(0), C1 = av.dim(1), C2 = bv.dim(1), HW = av.dim(2) * av.dim(3);
        Tensor<T> out({B, C1 + C2, av.dim(2), av.dim(3)});
        for (int64_t bb = 0; bb < B; ++bb) {
            T* dst = out.data() + bb * (C1 + C2) * HW;
            const T* s1 = av.data() + bb * C1 * HW;
            const T* s2 = bv.data() + bb * C2 * HW;
            for (int64_t i = 0; i < C1 * HW; ++i) dst[i] = s1[i];
            for (int64_t i = 0; i < C2 * HW; ++i) dst[C1 * HW + i] = s2[i];
        }
        return record(std::move(out), {a, b}, [a, b, B, C1, C2, HW](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t bb = 0; bb < B; ++bb) {
                    const T* src = g.data() + bb * (C1 + C2) * HW;
                    T* dst = ga.data() + bb * C1 * HW;
                    for (int64_t i = 0; i < C1 * HW; ++i) dst[i] += src[i];
                }
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t bb = 0; bb < B; ++bb) {
                    const T* src = g.data() + bb * (C1 + C2) * HW + C1 * HW;
                    T* dst = gb.data() + bb * C2 * HW;
                    for (int64_t i = 0; i < C2 * HW; ++i) dst[i] += src[i];
                }
            }
        });
    }

    // ---- token-level structure ----

    // concat along feature dim: [B,N,Da] + [B,N,Db] -> [B,N,Da+Db]
    int concat_feat(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.ndim() == 3 && bv.ndim() == 3 && av.dim(0) == bv.dim(0) && av.dim(1) == bv.dim(1),
              "concat_feat: shape mismatch");
        int64_t R = av.dim(0) * av.dim(1), Da = av.dim(2), Db = bv.dim(2);
        Tensor<T> out({av.dim(0), av.dim(1), Da + Db});
        for (int64_t r = 0; r < R; ++r) {
            T* dst = out.data() + r * (Da + Db);
            const T* s1 = av.data() + r * Da;
            const T* s2 = bv.data() + r * Db;
            for (int64_t j = 0; j < Da; ++j) dst[j] = s1[j];
            for (int64_t j = 0; j < Db; ++j) dst[Da + j] = s2[j];
        }
        return record(std::move(out), {a, b}, [a, b, R, Da, Db](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t j = 0; j < Da; ++j) ga[r * Da + j] += g[r * (Da + Db) + j];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t j = 0; j < Db; ++j) gb[r * Db + j] += g[r * (Da + Db) + Da + j];
            }
        });
    }

    // concat along token dim: [B,Ta,D] + [B,Tb,D] -> [B,Ta+Tb,D]
    int concat_tokens(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.ndim() == 3 && bv.ndim() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2),
              "concat_tokens: shape mismatch");
        int64_t B = av.dim(0), Ta = av.dim(1), Tb = bv.dim(1), D = av.dim(2);
        Tensor<T> out({B, Ta + Tb, D});
        for (int64_t bb = 0; bb < B; ++bb) {
            T* dst = out.data() + bb * (Ta + Tb) * D;
            const T* s1 = av.data() + bb * Ta * D;
            const T* s2 = bv.data() + bb * Tb * D;
            for (int64_t i = 0; i < Ta * D; ++i) dst[i] = s1[i];
            for (int64_t i = 0; i < Tb * D; ++i) dst[Ta * D + i] = s2[i];
        }
        return record(std::move(out), {a, b}, [a, b, B, Ta, Tb, D](Tape& t, int self) {
            const auto& g = t.grad(self);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t bb = 0; bb < B; ++bb) {
                    const T* src = g.data() + bb * (Ta + Tb) * D;
                    T* dst = ga.data() + bb * Ta * D;
                    for (int64_t i = 0; i < Ta * D; ++i) dst[i] += src[i];
                }
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t bb = 0; bb < B; ++bb) {
                    const T* src = g.data() + bb * (Ta + Tb) * D + Ta * D;
                    T* dst = gb.data() + bb * Tb * D;
                    for (int64_t i = 0; i < Tb * D; ++i) dst[i] += src[i];
                }
            }
        });
    }

    // masked mean over tokens: x [B,S,D], mask B*S bytes (empty = all) -> [B,D]
    int masked_mean_tokens(int x, std::vector<uint8_t> mask = {}) {
        const auto& xv = val(x);
        check(xv.ndim() == 3, "masked_mean_tokens: rank 3 required");
        int64_t B = xv.dim(0), S = xv.dim(1), D = xv.dim(2);
        check(mask.empty() || static_cast<int64_t>(mask.size()) == B * S,
              "masked_mean_tokens: mask size mismatch");
        Tensor<T> out({B, D});
        std::vector<T> inv_count(static_cast<size_t>(B), T(0));
        for (int64_t b = 0; b < B; ++b) {
            int64_t cnt = 0;
            for (int64_t s = 0; s < S; ++s) {
                if (!mask.empty() && !mask[static_cast<size_t>(b * S + s)]) continue;
                ++cnt;
                const T* row = xv.data() + (b * S + s) * D;
                T* dst = out.data() + b * D;
                for (int64_t j = 0; j < D; ++j) dst[j] += row[j];
            }
            if (cnt > 0) {
                T inv = T(1) / static_cast<T>(cnt);
                inv_count[static_cast<size_t>(b)] = inv;
                T* dst = out.data() + b * D;
                for (int64_t j = 0; j < D; ++j) dst[j] *= inv;
            }
        }
        return record(std::move(out), {x},
                      [x, B, S, D, mask, inv_count](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b) {
                T inv = inv_count[static_cast<size_t>(b)];
                if (inv == T(0)) continue;
                for (int64_t s = 0; s < S; ++s) {
                    if (!mask.empty() && !mask[static_cast<size_t>(b * S + s)]) continue;
                    T* dst = gx.data() + (b * S + s) * D;
                    const T* src = g.data() + b * D;
                    for (int64_t j = 0; j < D; ++j) dst[j] += src[j] * inv;
                }
            }
        });
    }

    // [B,D] -> [B,N,D]
    int broadcast_tokens(int x, int64_t N) {
        const auto& xv = val(x);
        check(xv.ndim() == 2, "broadcast_tokens: rank 2 required");
        int64_t B = xv.dim(0), D = xv.dim(1);
        Tensor<T> out({B, N, D});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t n = 0; n < N; ++n) {
                const T* src = xv.data() + b * D;
                T* dst = out.data() + (b * N + n) * D;
                for (int64_t j = 0; j < D; ++j) dst[j] = src[j];
            }
        return record(std::move(out), {x}, [x, B, N, D](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = g.data() + (b * N + n) * D;
                    T* dst = gx.data() + b * D;
                    for (int64_t j = 0; j < D; ++j) dst[j] += src[j];
                }
        });
    }

    // x [B,N,D] * gate [B,N,1]
    int gate_mul(int x, int g) {
        const auto& xv = val(x);
        const auto& gv = val(g);
        check(xv.ndim() == 3 && gv.ndim() == 3 && gv.dim(2) == 1 && gv.dim(0) == xv.dim(0) &&
                  gv.dim(1) == xv.dim(1),
              "gate_mul: shape mismatch");
        int64_t R = xv.dim(0) * xv.dim(1), D = xv.dim(2);
        Tensor<T> out = xv;
        for (int64_t r = 0; r < R; ++r) {
            T gg = gv[r];
            T* row = out.data() + r * D;
            for (int64_t j = 0; j < D; ++j) row[j] *= gg;
        }
        return record(std::move(out), {x, g}, [x, g, R, D](Tape& t, int self) {
            const auto& gr = t.grad(self);
            const auto& xv2 = t.val(x);
            const auto& gv2 = t.val(g);
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (int64_t r = 0; r < R; ++r) {
                    T gg = gv2[r];
                    for (int64_t j = 0; j < D; ++j) gx[r * D + j] += gr[r * D + j] * gg;
                }
            }
            if (t.needs_grad(g)) {
                auto& ggr = t.grad(g);
                for (int64_t r = 0; r < R; ++r) {
                    T s = T(0);
                    for (int64_t j = 0; j < D; ++j) s += gr[r * D + j] * xv2[r * D + j];
                    ggr[r] += s;
                }
            }
        });
    }

    // per-token L2 norms: [B,S,D] -> [B,S]
    int row_norms(int x) {
        const auto& xv = val(x);
        check(xv.ndim() == 3, "row_norms: rank 3 required");
        int64_t R = xv.dim(0) * xv.dim(1), D = xv.dim(2);
        Tensor<T> out({xv.dim(0), xv.dim(1)});
        for (int64_t r = 0; r < R; ++r) {
            const T* row = xv.data() + r * D;
            T s = T(0);
            for (int64_t j = 0; j < D; ++j) s += row[j] * row[j];
            out[r] = std::sqrt(s);
        }
        return record(std::move(out), {x}, [x, R, D](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            const auto& y = t.val(self);
            const auto& xv2 = t.val(x);
            auto& gx = t.grad(x);
            for (int64_t r = 0; r < R; ++r) {
                T n = y[r];
                if (n <= T(1e-12)) continue;
                T c = g[r] / n;
                for (int64_t j = 0; j < D; ++j) gx[r * D + j] += c * xv2[r * D + j];
            }
        });
    }

    // masked mean over dim 1: x [B,S], mask B*S bytes (empty = all) -> [B]
    int masked_mean_cols(int x, std::vector<uint8_t> mask = {}) {
        const auto& xv = val(x);
        check(xv.ndim() == 2, "masked_mean_cols: rank 2 required");
        int64_t B = xv.dim(0), S = xv.dim(1);
        check(mask.empty() || static_cast<int64_t>(mask.size()) == B * S,
              "masked_mean_cols: mask size mismatch");
        Tensor<T> out({B});
        std::vector<T> inv_count(static_cast<size_t>(B), T(0));
        for (int64_t b = 0; b < B; ++b) {
            int64_t cnt = 0;
            T s = T(0);
            for (int64_t j = 0; j < S; ++j) {
                if (!mask.empty() && !mask[static_cast<size_t>(b * S + j)]) continue;
                ++cnt;
                s += xv[b * S + j];
            }
            if (cnt > 0) {
                T inv = T(1) / static_cast<T>(cnt);
                inv_count[static_cast<size_t>(b)] = inv;
                out[b] = s * inv;
            }
        }
        return record(std::move(out), {x}, [x, B, S, mask, inv_count](Tape& t, int self) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self);
            auto& gx = t.grad(x);
            for (int64_t b = 0; b < B; ++b) {
                T inv = inv_count[static_cast<size_t>(b)];
                if (inv == T(0)) continue;
                for (int64_t j = 0; j < S; ++j) {
                    if (!mask.empty() && !mask[static_cast<size_t>(b * S + j)]) continue;
                    gx[b * S + j] += g[b] * inv;
                }
            }
        });
    }

    // elementwise a / b on vectors [B]
    int div_vec(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "div_vec: shape mismatch");
        Tensor<T> out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
        return record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& y = t.val(self);
            const auto& bv2 = t.val(b);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / bv2[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * y[i] / bv2[i];
            }
        });
    }

    // x [B,N,D] scaled per batch item by s [B]
    int scale_tokens(int x, int s) {
        const auto& xv = val(x);
        const auto& sv = val(s);
        check(xv.ndim() == 3 && sv.ndim() == 1 && sv.dim(0) == xv.dim(0),
              "scale_tokens: shape mismatch");
        int64_t B = xv.dim(0), ND = xv.dim(1) * xv.dim(2);
        Tensor<T> out = xv;
        for (int64_t b = 0; b < B; ++b) {
            T c = sv[b];
            T* row = out.data() + b * ND;
            for (int64_t i = 0; i < ND; ++i) row[i] *= c;
        }
        return record(std::move(out), {x, s}, [x, s, B, ND](Tape& t, int self) {
            const auto& g = t.grad(self);
            const auto& xv2 = t.val(x);
            const auto& sv2 = t.val(s);
            if (t.needs_grad(x)) {
                auto& gx = t.grad(x);
                for (int64_t b = 0; b < B; ++b) {
                    T c = sv2[b];
                    for (int64_t i = 0; i < ND; ++i) gx[b * ND + i] += g[b * ND + i] * c;
                }
            }
            if (t.needs_grad(s)) {
                auto& gs = t.grad(s);
                for (int64_t b = 0; b < B; ++b) {
                    T acc = T(0);
                    for (int64_t i = 0; i < ND; ++i) acc += g[b * ND + i] * xv2[b * ND + i];
                    gs[b] += acc;
                }
            }
        });
    }

    // ---- normalisation and losses ----

    // row-wise L2 normalisation of [R,D]; zero rows stay zero
    int l2norm_rows(int x) {
        const auto& xv = val(x);
        check(xv.ndim() == 2, "l2norm_rows: rank 2 required");
        int64_t R = xv.dim(0), D = xv.dim(1);
        Tensor<T> out(xv.shape);
        Tensor<T> inv_norm({R});
        for (int64_t r = 0; r < R; ++r) {
            const T* row = xv.data() + r * D;
            T s = T(0);
            for (int64_t j = 0; j < D; ++j) s += row[j] * row[j];
            T n = std::sqrt(s);
            T inv = n > T(1e-12) ? T(1) / n : T(0);
            inv_norm[r] = inv;
            for (int64_t j = 0; j < D; ++j) out[r * D + j] = row[j] * inv;
        }
        int self = record(std::move(out), {x}, [x, R, D](Tape& t, int self2) {
            if (!t.needs_grad(x)) return;
            const auto& g = t.grad(self2);
            const auto& y = t.val(self2);
            const auto& inv = t.nodes[static_cast<size_t>(self2)].aux[0];
            auto& gx = t.grad(x);
            for (int64_t r = 0; r < R; ++r) {
                T dot = T(0);
                for (int64_t j = 0; j < D; ++j) dot += g[r * D + j] * y[r * D + j];
                for (int64_t j = 0; j < D; ++j)
                    gx[r * D + j] += inv[r] * (g[r * D + j] - y[r * D + j] * dot);
            }
        });
        nodes.back().aux.push_back(std::move(inv_norm));
        return self;
    }

    // mean cross entropy over rows of logits [R,C]
    int cross_entropy_rows(int logits, const std::vector<int64_t>& labels) {
        const auto& lv = val(logits);
        check(lv.ndim() == 2, "cross_entropy_rows: rank 2 required");
        int64_t R = lv.dim(0), C = lv.dim(1);
        check(static_cast<int64_t>(labels.size()) == R, "cross_entropy_rows: label count");
        Tensor<T> dlog(lv.shape); // (softmax - onehot) / R
        double loss = 0.0;
        for (int64_t r = 0; r < R; ++r) {
            const T* row = lv.data() + r * C;
            int64_t lab = labels[static_cast<size_t>(r)];
            check(lab >= 0 && lab < C, "cross_entropy_rows: label out of range");
            double m = row[0];
            for (int64_t j = 1; j < C; ++j) m = std::max(m, static_cast<double>(row[j]));
            double z = 0.0;
            for (int64_t j = 0; j < C; ++j) z += std::exp(static_cast<double>(row[j]) - m);
            loss += -(static_cast<double>(row[lab]) - m - std::log(z));
            for (int64_t j = 0; j < C; ++j) {
                double p = std::exp(static_cast<double>(row[j]) - m) / z;
                dlog[r * C + j] =
                    static_cast<T>((p - (j == lab ? 1.0 : 0.0)) / static_cast<double>(R));
            }
        }
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(R)));
        int self = record(std::move(out), {logits}, [logits](Tape& t, int self2) {
            if (!t.needs_grad(logits)) return;
            T gy = t.grad(self2).v[0];
            const auto& dl = t.nodes[static_cast<size_t>(self2)].aux[0];
            auto& gl = t.grad(logits);
            for (int64_t i = 0; i < dl.numel(); ++i) gl[i] += gy * dl[i];
        });
        nodes.back().aux.push_back(std::move(dlog));
        return self;
    }

    // mean cross entropy over supervised positions of logits [B,S,V].
    // labels and sup flattened to B*S; positions with sup == 0 are ignored.
    int cross_entropy_masked(int logits, const std::vector<int64_t>& labels,
                             const std::vector<uint8_t>& sup) {
        const auto& lv = val(logits);
        check(lv.ndim() == 3, "cross_entropy_masked: rank 3 required");
        int64_t R = lv.dim(0) * lv.dim(1), V = lv.dim(2);
        check(static_cast<int64_t>(labels.size()) == R && labels.size() == sup.size(),
              "cross_entropy_masked: label/mask size mismatch");
        int64_t M = 0;
        for (auto m : sup)
            if (m) ++M;
        check(M > 0, "cross_entropy_masked: no supervised positions");
        Tensor<T> dlog({R, V});
        double loss = 0.0;
        for (int64_t r = 0; r < R; ++r) {
            if (!sup[static_cast<size_t>(r)]) continue;
            const T* row = lv.data() + r * V;
            int64_t lab = labels[static_cast<size_t>(r)];
            check(lab >= 0 && lab < V, "cross_entropy_masked: label out of range");
            double m = row[0];
            for (int64_t j = 1; j < V; ++j) m = std::max(m, static_cast<double>(row[j]));
            double z = 0.0;
            for (int64_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - m);
            loss += -(static_cast<double>(row[lab]) - m - std::log(z));
            for (int64_t j = 0; j < V; ++j) {
                double p = std::exp(static_cast<double>(row[j]) - m) / z;
                dlog[r * V + j] =
                    static_cast<T>((p - (j == lab ? 1.0 : 0.0)) / static_cast<double>(M));
            }
        }
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(M)));
        int self = record(std::move(out), {logits}, [logits](Tape& t, int self2) {
            if (!t.needs_grad(logits)) return;
            T gy = t.grad(self2).v[0];
            const auto& dl = t.nodes[static_cast<size_t>(self2)].aux[0];
            auto& gl = t.grad(logits);
            for (int64_t i = 0; i < dl.numel(); ++i) gl[i] += gy * dl[i];
        });
        nodes.back().aux.push_back(std::move(dlog));
        return self;
    }

    // mean squared error over all elements
    int mse(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "mse: shape mismatch");
        int64_t N = av.numel();
        double s = 0.0;
        for (int64_t i = 0; i < N; ++i) {
            double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
            s += d * d;
        }
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(N)));
        return record(std::move(out), {a, b}, [a, b, N](Tape& t, int self) {
            T gy = t.grad(self).v[0];
            const auto& av2 = t.val(a);
            const auto& bv2 = t.val(b);
            T c = gy * T(2) / static_cast<T>(N);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < N; ++i) ga[i] += c * (av2[i] - bv2[i]);
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < N; ++i) gb[i] -= c * (av2[i] - bv2[i]);
            }
        });
    }

    // scalar probe sum(a * b); handy for reducing any tensor to a scalar
    int dot(int a, int b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        check(av.same_shape(bv), "dot: shape mismatch");
        double s = 0.0;
        for (int64_t i = 0; i < av.numel(); ++i)
            s += static_cast<double>(av[i]) * static_cast<double>(bv[i]);
        Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
        return record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
            T gy = t.grad(self).v[0];
            const auto& av2 = t.val(a);
            const auto& bv2 = t.val(b);
            if (t.needs_grad(a)) {
                auto& ga = t.grad(a);
                for (int64_t i = 0; i < av2.numel(); ++i) ga[i] += gy * bv2[i];
            }
            if (t.needs_grad(b)) {
                auto& gb = t.grad(b);
                for (int64_t i = 0; i < bv2.numel(); ++i) gb[i] += gy * av2[i];
            }
        });
    }

  private:
    static void softmax_row(T* row, int64_t n) {
        T m = row[0];
        for (int64_t j = 1; j < n; ++j) m = std::max(m, row[j]);
        if (!(m > -std::numeric_limits<T>::infinity())) {
            // fully masked row: emit zeros
            for (int64_t j = 0; j < n; ++j) row[j] = T(0);
            return;
        }
        T z = T(0);
        for (int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - m);
            z += row[j];
        }
        T inv = T(1) / z;
        for (int64_t j = 0; j < n; ++j) row[j] *= inv;
    }

    static void pack_head(const Tensor<T>& x, int64_t b, int64_t h, int64_t Tn, int64_t d,
                          int64_t dh, T* dst) {
        for (int64_t i = 0; i < Tn; ++i) {
            const T* src = x.data() + (b * Tn + i) * d + h * dh;
            for (int64_t j = 0; j < dh; ++j) dst[i * dh + j] = src[j];
        }
    }

    static void unpack_head(const T* src, int64_t b, int64_t h, int64_t Tn, int64_t d, int64_t dh,
                            Tensor<T>& out) {
        for (int64_t i = 0; i < Tn; ++i) {
            T* dst = out.data() + (b * Tn + i) * d + h * dh;
            for (int64_t j = 0; j < dh; ++j) dst[j] = src[i * dh + j];
        }
    }

    static void accum_head(const T* src, int64_t b, int64_t h, int64_t Tn, int64_t d, int64_t dh,
                           Tensor<T>& out) {
        for (int64_t i = 0; i < Tn; ++i) {
            T* dst = out.data() + (b * Tn + i) * d + h * dh;
            for (int64_t j = 0; j < dh; ++j) dst[j] += src[i * dh + j];
        }
    }

    int record(Tensor<T> out, std::initializer_list<int> parents,
               std::function<void(Tape&, int)> back) {
        Node n;
        n.val = std::move(out);
        for (int p : parents)
            if (p >= 0 && nodes[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
        nodes.push_back(std::move(n));
        int self = static_cast<int>(nodes.size()) - 1;
        if (nodes.back().needs_grad)
            nodes.back().back = [self, back](Tape& t) { back(t, self); };
        return self;
    }
};

} // namespace bcq
