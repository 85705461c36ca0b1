#include "bcq/teacher.hpp"

#include <cmath>

#include "bcq/errors.hpp"
#include "bcq/kernels.hpp"
#include "bcq/rng.hpp"

namespace bcq {

namespace {

constexpr uint64_t kTeacherSeed = 1729;

void silu_inplace(Tensor<float>& x) {
    for (auto& v : x.v) v = v / (1.0f + std::exp(-v));
}

std::vector<float> head(const Tensor<float>& w, const Tensor<float>& b,
                        const std::vector<float>& x) {
    int64_t in = w.dim(0), out = w.dim(1);
    std::vector<float> y(static_cast<size_t>(out));
    for (int64_t j = 0; j < out; ++j) {
        float s = b[j];
        for (int64_t i = 0; i < in; ++i) s += x[static_cast<size_t>(i)] * w[i * out + j];
        y[static_cast<size_t>(j)] = s;
    }
    return y;
}

} // namespace

Teacher make_teacher(int64_t vocab_size, int64_t dim) {
    Teacher t;
    t.dim = dim;
    Rng r1(derive_seed(kTeacherSeed, "teacher/conv1"));
    t.conv1_w = randn<float>({16, 3, 5, 5}, r1, std::sqrt(2.0 / (3 * 5 * 5)));
    t.conv1_b = Tensor<float>({16});
    Rng r2(derive_seed(kTeacherSeed, "teacher/conv2"));
    t.conv2_w = randn<float>({32, 16, 3, 3}, r2, std::sqrt(2.0 / (16 * 3 * 3)));
    t.conv2_b = Tensor<float>({32});
    Rng r3(derive_seed(kTeacherSeed, "teacher/img_head"));
    t.img_head_w = randn<float>({32, dim}, r3, 1.0 / std::sqrt(32.0));
    t.img_head_b = Tensor<float>({dim});
    Rng r4(derive_seed(kTeacherSeed, "teacher/embed"));
    t.embed = randn<float>({vocab_size, 32}, r4, 1.0);
    Rng r5(derive_seed(kTeacherSeed, "teacher/txt_head"));
    t.txt_head_w = randn<float>({32, dim}, r5, 1.0 / std::sqrt(32.0));
    t.txt_head_b = Tensor<float>({dim});
    return t;
}

std::vector<float> teacher_image_embed(const Teacher& t, const Tensor<float>& chw) {
    check(chw.ndim() == 3 && chw.dim(0) == 3, "teacher: [3,H,W] image required");
    int64_t H = chw.dim(1), W = chw.dim(2);
    auto d1 = kern::conv_dims(1, 3, H, W, 16, 5, 5, 4, 2);
    Tensor<float> y1({1, 16, d1.Ho, d1.Wo});
    kern::conv2d(chw.data(), t.conv1_w.data(), t.conv1_b.data(), y1.data(), d1);
    silu_inplace(y1);
    auto d2 = kern::conv_dims(1, 16, d1.Ho, d1.Wo, 32, 3, 3, 4, 1);
    Tensor<float> y2({1, 32, d2.Ho, d2.Wo});
    kern::conv2d(y1.data(), t.conv2_w.data(), t.conv2_b.data(), y2.data(), d2);
    silu_inplace(y2);
    std::vector<float> pooled(32, 0.0f);
    int64_t hw = d2.Ho * d2.Wo;
    for (int64_t c = 0; c < 32; ++c) {
        float s = 0.0f;
        for (int64_t i = 0; i < hw; ++i) s += y2[c * hw + i];
        pooled[static_cast<size_t>(c)] = s / static_cast<float>(hw);
    }
    return head(t.img_head_w, t.img_head_b, pooled);
}

std::vector<float> teacher_text_embed(const Teacher& t, const std::vector<int64_t>& ids,
                                      const std::vector<uint8_t>& mask) {
    check(ids.size() == mask.size() && !ids.empty(), "teacher: ids/mask size mismatch");
    std::vector<float> pooled(32, 0.0f);
    int64_t kept = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (!mask[i]) continue;
        check(ids[i] >= 0 && ids[i] < t.embed.dim(0), "teacher: token id out of range");
        for (int64_t c = 0; c < 32; ++c)
            pooled[static_cast<size_t>(c)] += t.embed[ids[i] * 32 + c];
        ++kept;
    }
    check(kept > 0, "teacher: empty mask");
    for (auto& v : pooled) v /= static_cast<float>(kept);
    return head(t.txt_head_w, t.txt_head_b, pooled);
}

} // namespace bcq
