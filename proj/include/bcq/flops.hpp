#pragma once

#include <cstdint>
#include <string>

#include "bcq/config.hpp"

// Forward-pass FLOP accounting for one sample (batch 1, full text length).
// analytic_flops walks the architecture with the same formulas the kernel
// dispatchers charge at runtime; measured_flops runs the real modules with
// the instrumented kernels. The two must agree exactly.

namespace bcq {

struct FlopBreakdown {
    uint64_t text_encoder = 0;
    uint64_t image_encoder = 0;
    uint64_t qgcam = 0;
    uint64_t decoder = 0;
    uint64_t total() const { return text_encoder + image_encoder + qgcam + decoder; }
};

// matrix product [rows,in] x [in,out], plus one add per output when biased
uint64_t linear_flops(int64_t rows, int64_t in, int64_t out, bool bias);

// scores and context gemms over all heads: 4 * B * Tq * Tk * d
uint64_t attention_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t d);

uint64_t conv_flops(int64_t B, int64_t ci, int64_t co, int64_t k, int64_t ho, int64_t wo,
                    bool bias);
uint64_t depthwise_flops(int64_t B, int64_t c, int64_t k, int64_t ho, int64_t wo, bool bias);

// output side length of a square convolution
int64_t conv_out_side(int64_t side, int64_t k, int64_t stride, int64_t pad);

// one pre-norm transformer layer over `tokens` positions at `width`
uint64_t pre_norm_layer_flops(int64_t tokens, int64_t width);

FlopBreakdown analytic_flops(const ModelConfig& cfg);
FlopBreakdown measured_flops(const ModelConfig& cfg);

std::string flops_json(const FlopBreakdown& analytic, const FlopBreakdown& measured);
void save_flops_json(const FlopBreakdown& analytic, const FlopBreakdown& measured,
                     const std::string& path);

} // namespace bcq
