#include "bcq/kernels.hpp"

namespace bcq::kern {

namespace {
Backend g_backend = Backend::parallel;
uint64_t g_flops = 0;
} // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

const char* backend_name(Backend b) {
    return b == Backend::parallel ? "openmp" : "serial";
}

void flops_reset() { g_flops = 0; }
uint64_t flops_count() { return g_flops; }
void flops_add(uint64_t n) { g_flops += n; }

} // namespace bcq::kern
