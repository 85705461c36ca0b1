#pragma once

#include <cstdint>

#include "bcq/tensor.hpp"

// Dense math kernels. Every public entry point dispatches to one of two
// backends: a plain serial reference and an OpenMP version. Both accumulate
// each output element in the same order, so results are bitwise identical
// regardless of backend or thread count; the parallel loops only split
// independent output elements across threads.
//
// The dispatch layer also tallies multiply-accumulate work (2*m*k*n per gemm,
// analogous formulas for convolutions, plus bias adds). Elementwise ops,
// normalisations, softmax and gathers are defined to cost zero. Backward-only
// kernels (conv2d_dx etc.) are not tallied; the counter is meant for forward
// passes.

namespace bcq::kern {

enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);
const char* backend_name(Backend b);

void flops_reset();
uint64_t flops_count();
void flops_add(uint64_t n);

namespace detail {

template <typename T>
void gemm_nn_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nn_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s = acc ? c[i * n + j] : T(0);
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] = s;
        }
    }
}

template <typename T>
void gemm_nt_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s = acc ? c[i * n + j] : T(0);
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] = s;
        }
    }
}

template <typename T>
void gemm_tn_serial(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (int64_t p = 0; p < k; ++p) {
            T av = a[p * m + i];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_tn_omp(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!acc)
            for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (int64_t p = 0; p < k; ++p) {
            T av = a[p * m + i];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void add_bias_rows_serial(T* x, const T* b, int64_t rows, int64_t n) {
    for (int64_t i = 0; i < rows; ++i) {
        T* row = x + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += b[j];
    }
}

template <typename T>
void add_bias_rows_omp(T* x, const T* b, int64_t rows, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) {
        T* row = x + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += b[j];
    }
}

struct ConvDims {
    int64_t B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo;
};

inline ConvDims conv_dims(int64_t B, int64_t Ci, int64_t H, int64_t W, int64_t Co, int64_t kh,
                          int64_t kw, int64_t stride, int64_t pad) {
    ConvDims d{B, Ci, H, W, Co, kh, kw, stride, pad, 0, 0};
    d.Ho = (H + 2 * pad - kh) / stride + 1;
    d.Wo = (W + 2 * pad - kw) / stride + 1;
    return d;
}

template <typename T>
void conv2d_one(const T* x, const T* w, const T* bias, T* y, const ConvDims& d, int64_t b,
                int64_t co) {
    const T* wbase = w + co * d.Ci * d.kh * d.kw;
    for (int64_t ho = 0; ho < d.Ho; ++ho) {
        for (int64_t wo = 0; wo < d.Wo; ++wo) {
            T s = bias ? bias[co] : T(0);
            int64_t h0 = ho * d.stride - d.pad;
            int64_t w0 = wo * d.stride - d.pad;
            for (int64_t ci = 0; ci < d.Ci; ++ci) {
                const T* xc = x + (b * d.Ci + ci) * d.H * d.W;
                const T* wc = wbase + ci * d.kh * d.kw;
                for (int64_t r = 0; r < d.kh; ++r) {
                    int64_t h = h0 + r;
                    if (h < 0 || h >= d.H) continue;
                    for (int64_t q = 0; q < d.kw; ++q) {
                        int64_t ww = w0 + q;
                        if (ww < 0 || ww >= d.W) continue;
                        s += xc[h * d.W + ww] * wc[r * d.kw + q];
                    }
                }
            }
            y[((b * d.Co + co) * d.Ho + ho) * d.Wo + wo] = s;
        }
    }
}

template <typename T>
void conv2d_serial(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    for (int64_t bc = 0; bc < d.B * d.Co; ++bc) conv2d_one(x, w, bias, y, d, bc / d.Co, bc % d.Co);
}

template <typename T>
void conv2d_omp(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < d.B * d.Co; ++bc) conv2d_one(x, w, bias, y, d, bc / d.Co, bc % d.Co);
}

// gather-form input gradient: race-free under output parallelism
template <typename T>
void conv2d_dx_one(const T* dy, const T* w, T* dx, const ConvDims& d, int64_t b, int64_t ci) {
    for (int64_t h = 0; h < d.H; ++h) {
        for (int64_t ww = 0; ww < d.W; ++ww) {
            T s = T(0);
            for (int64_t co = 0; co < d.Co; ++co) {
                const T* wc = w + (co * d.Ci + ci) * d.kh * d.kw;
                const T* dyc = dy + (b * d.Co + co) * d.Ho * d.Wo;
                for (int64_t r = 0; r < d.kh; ++r) {
                    int64_t num = h + d.pad - r;
                    if (num < 0 || num % d.stride) continue;
                    int64_t ho = num / d.stride;
                    if (ho >= d.Ho) continue;
                    for (int64_t q = 0; q < d.kw; ++q) {
                        int64_t numw = ww + d.pad - q;
                        if (numw < 0 || numw % d.stride) continue;
                        int64_t wo = numw / d.stride;
                        if (wo >= d.Wo) continue;
                        s += wc[r * d.kw + q] * dyc[ho * d.Wo + wo];
                    }
                }
            }
            dx[(b * d.Ci + ci) * d.H * d.W + h * d.W + ww] += s;
        }
    }
}

template <typename T>
void conv2d_dx_serial(const T* dy, const T* w, T* dx, const ConvDims& d) {
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc) conv2d_dx_one(dy, w, dx, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void conv2d_dx_omp(const T* dy, const T* w, T* dx, const ConvDims& d) {
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc) conv2d_dx_one(dy, w, dx, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void conv2d_dw_one(const T* x, const T* dy, T* dw, const ConvDims& d, int64_t idx) {
    int64_t q = idx % d.kw;
    int64_t r = (idx / d.kw) % d.kh;
    int64_t ci = (idx / (d.kw * d.kh)) % d.Ci;
    int64_t co = idx / (d.kw * d.kh * d.Ci);
    T s = T(0);
    for (int64_t b = 0; b < d.B; ++b) {
        const T* xc = x + (b * d.Ci + ci) * d.H * d.W;
        const T* dyc = dy + (b * d.Co + co) * d.Ho * d.Wo;
        for (int64_t ho = 0; ho < d.Ho; ++ho) {
            int64_t h = ho * d.stride - d.pad + r;
            if (h < 0 || h >= d.H) continue;
            for (int64_t wo = 0; wo < d.Wo; ++wo) {
                int64_t ww = wo * d.stride - d.pad + q;
                if (ww < 0 || ww >= d.W) continue;
                s += xc[h * d.W + ww] * dyc[ho * d.Wo + wo];
            }
        }
    }
    dw[idx] += s;
}

template <typename T>
void conv2d_dw_serial(const T* x, const T* dy, T* dw, const ConvDims& d) {
    int64_t total = d.Co * d.Ci * d.kh * d.kw;
    for (int64_t i = 0; i < total; ++i) conv2d_dw_one(x, dy, dw, d, i);
}

template <typename T>
void conv2d_dw_omp(const T* x, const T* dy, T* dw, const ConvDims& d) {
    int64_t total = d.Co * d.Ci * d.kh * d.kw;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < total; ++i) conv2d_dw_one(x, dy, dw, d, i);
}

template <typename T>
void depthwise2d_one(const T* x, const T* w, const T* bias, T* y, const ConvDims& d, int64_t b,
                     int64_t c) {
    const T* wc = w + c * d.kh * d.kw;
    const T* xc = x + (b * d.Ci + c) * d.H * d.W;
    for (int64_t ho = 0; ho < d.Ho; ++ho) {
        for (int64_t wo = 0; wo < d.Wo; ++wo) {
            T s = bias ? bias[c] : T(0);
            int64_t h0 = ho * d.stride - d.pad;
            int64_t w0 = wo * d.stride - d.pad;
            for (int64_t r = 0; r < d.kh; ++r) {
                int64_t h = h0 + r;
                if (h < 0 || h >= d.H) continue;
                for (int64_t q = 0; q < d.kw; ++q) {
                    int64_t ww = w0 + q;
                    if (ww < 0 || ww >= d.W) continue;
                    s += xc[h * d.W + ww] * wc[r * d.kw + q];
                }
            }
            y[((b * d.Ci + c) * d.Ho + ho) * d.Wo + wo] = s;
        }
    }
}

template <typename T>
void depthwise2d_serial(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc)
        depthwise2d_one(x, w, bias, y, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void depthwise2d_omp(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc)
        depthwise2d_one(x, w, bias, y, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void depthwise2d_dx_one(const T* dy, const T* w, T* dx, const ConvDims& d, int64_t b, int64_t c) {
    const T* wc = w + c * d.kh * d.kw;
    const T* dyc = dy + (b * d.Ci + c) * d.Ho * d.Wo;
    for (int64_t h = 0; h < d.H; ++h) {
        for (int64_t ww = 0; ww < d.W; ++ww) {
            T s = T(0);
            for (int64_t r = 0; r < d.kh; ++r) {
                int64_t num = h + d.pad - r;
                if (num < 0 || num % d.stride) continue;
                int64_t ho = num / d.stride;
                if (ho >= d.Ho) continue;
                for (int64_t q = 0; q < d.kw; ++q) {
                    int64_t numw = ww + d.pad - q;
                    if (numw < 0 || numw % d.stride) continue;
                    int64_t wo = numw / d.stride;
                    if (wo >= d.Wo) continue;
                    s += wc[r * d.kw + q] * dyc[ho * d.Wo + wo];
                }
            }
            dx[(b * d.Ci + c) * d.H * d.W + h * d.W + ww] += s;
        }
    }
}

template <typename T>
void depthwise2d_dx_serial(const T* dy, const T* w, T* dx, const ConvDims& d) {
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc)
        depthwise2d_dx_one(dy, w, dx, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void depthwise2d_dx_omp(const T* dy, const T* w, T* dx, const ConvDims& d) {
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < d.B * d.Ci; ++bc)
        depthwise2d_dx_one(dy, w, dx, d, bc / d.Ci, bc % d.Ci);
}

template <typename T>
void depthwise2d_dw_one(const T* x, const T* dy, T* dw, const ConvDims& d, int64_t idx) {
    int64_t q = idx % d.kw;
    int64_t r = (idx / d.kw) % d.kh;
    int64_t c = idx / (d.kw * d.kh);
    T s = T(0);
    for (int64_t b = 0; b < d.B; ++b) {
        const T* xc = x + (b * d.Ci + c) * d.H * d.W;
        const T* dyc = dy + (b * d.Ci + c) * d.Ho * d.Wo;
        for (int64_t ho = 0; ho < d.Ho; ++ho) {
            int64_t h = ho * d.stride - d.pad + r;
            if (h < 0 || h >= d.H) continue;
            for (int64_t wo = 0; wo < d.Wo; ++wo) {
                int64_t ww = wo * d.stride - d.pad + q;
                if (ww < 0 || ww >= d.W) continue;
                s += xc[h * d.W + ww] * dyc[ho * d.Wo + wo];
            }
        }
    }
    dw[idx] += s;
}

template <typename T>
void depthwise2d_dw_serial(const T* x, const T* dy, T* dw, const ConvDims& d) {
    int64_t total = d.Ci * d.kh * d.kw;
    for (int64_t i = 0; i < total; ++i) depthwise2d_dw_one(x, dy, dw, d, i);
}

template <typename T>
void depthwise2d_dw_omp(const T* x, const T* dy, T* dw, const ConvDims& d) {
    int64_t total = d.Ci * d.kh * d.kw;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < total; ++i) depthwise2d_dw_one(x, dy, dw, d, i);
}

} // namespace detail

// c[m,n] = a[m,k] * b[k,n]  (+= when acc)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
    flops_add(static_cast<uint64_t>(2) * m * k * n);
    if (backend() == Backend::parallel)
        detail::gemm_nn_omp(a, b, c, m, k, n, acc);
    else
        detail::gemm_nn_serial(a, b, c, m, k, n, acc);
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
    flops_add(static_cast<uint64_t>(2) * m * k * n);
    if (backend() == Backend::parallel)
        detail::gemm_nt_omp(a, b, c, m, k, n, acc);
    else
        detail::gemm_nt_serial(a, b, c, m, k, n, acc);
}

// c[m,n] = a[k,m]^T * b[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc = false) {
    flops_add(static_cast<uint64_t>(2) * m * k * n);
    if (backend() == Backend::parallel)
        detail::gemm_tn_omp(a, b, c, m, k, n, acc);
    else
        detail::gemm_tn_serial(a, b, c, m, k, n, acc);
}

template <typename T>
void add_bias_rows(T* x, const T* b, int64_t rows, int64_t n) {
    flops_add(static_cast<uint64_t>(rows) * n);
    if (backend() == Backend::parallel)
        detail::add_bias_rows_omp(x, b, rows, n);
    else
        detail::add_bias_rows_serial(x, b, rows, n);
}

// db[n] += column sums of dy[rows,n]; backward only, untallied
template <typename T>
void bias_grad(const T* dy, T* db, int64_t rows, int64_t n) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
}

using detail::ConvDims;
using detail::conv_dims;

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    uint64_t mac = static_cast<uint64_t>(2) * d.B * d.Co * d.Ci * d.kh * d.kw * d.Ho * d.Wo;
    if (bias) mac += static_cast<uint64_t>(d.B) * d.Co * d.Ho * d.Wo;
    flops_add(mac);
    if (backend() == Backend::parallel)
        detail::conv2d_omp(x, w, bias, y, d);
    else
        detail::conv2d_serial(x, w, bias, y, d);
}

template <typename T>
void conv2d_dx(const T* dy, const T* w, T* dx, const ConvDims& d) {
    if (backend() == Backend::parallel)
        detail::conv2d_dx_omp(dy, w, dx, d);
    else
        detail::conv2d_dx_serial(dy, w, dx, d);
}

template <typename T>
void conv2d_dw(const T* x, const T* dy, T* dw, const ConvDims& d) {
    if (backend() == Backend::parallel)
        detail::conv2d_dw_omp(x, dy, dw, d);
    else
        detail::conv2d_dw_serial(x, dy, dw, d);
}

template <typename T>
void depthwise2d(const T* x, const T* w, const T* bias, T* y, const ConvDims& d) {
    uint64_t mac = static_cast<uint64_t>(2) * d.B * d.Ci * d.kh * d.kw * d.Ho * d.Wo;
    if (bias) mac += static_cast<uint64_t>(d.B) * d.Ci * d.Ho * d.Wo;
    flops_add(mac);
    if (backend() == Backend::parallel)
        detail::depthwise2d_omp(x, w, bias, y, d);
    else
        detail::depthwise2d_serial(x, w, bias, y, d);
}

template <typename T>
void depthwise2d_dx(const T* dy, const T* w, T* dx, const ConvDims& d) {
    if (backend() == Backend::parallel)
        detail::depthwise2d_dx_omp(dy, w, dx, d);
    else
        detail::depthwise2d_dx_serial(dy, w, dx, d);
}

template <typename T>
void depthwise2d_dw(const T* x, const T* dy, T* dw, const ConvDims& d) {
    if (backend() == Backend::parallel)
        detail::depthwise2d_dw_omp(x, dy, dw, d);
    else
        detail::depthwise2d_dw_serial(x, dy, dw, d);
}

// RAII backend switch for tests and benchmarks
struct BackendGuard {
    Backend prev;
    explicit BackendGuard(Backend b) : prev(backend()) { set_backend(b); }
    ~BackendGuard() { set_backend(prev); }
};

} // namespace bcq::kern
