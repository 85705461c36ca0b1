#pragma once

#include <cstdint>
#include <vector>

#include "bcq/tensor.hpp"

// Tiny fixed-weight teacher that supplies distillation targets. Its weights
// come from a constant seed, never train, and do not depend on the student
// configuration beyond vocabulary size and output width. Images pass through
// two strided convolutions and global average pooling; text is the masked
// mean of a random embedding table. Both end in a linear head to `dim`.

namespace bcq {

struct Teacher {
    int64_t dim = 0;
    Tensor<float> conv1_w, conv1_b; // [16,3,5,5], stride 4, pad 2
    Tensor<float> conv2_w, conv2_b; // [32,16,3,3], stride 4, pad 1
    Tensor<float> img_head_w, img_head_b; // [32,dim]
    Tensor<float> embed;                  // [vocab,32]
    Tensor<float> txt_head_w, txt_head_b; // [32,dim]
};

Teacher make_teacher(int64_t vocab_size, int64_t dim);

// [3,H,W] preprocessed image -> [dim]
std::vector<float> teacher_image_embed(const Teacher& t, const Tensor<float>& chw);

// token ids + validity mask -> [dim]
std::vector<float> teacher_text_embed(const Teacher& t, const std::vector<int64_t>& ids,
                                      const std::vector<uint8_t>& mask);

} // namespace bcq
