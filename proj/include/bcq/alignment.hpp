#pragma once

#include "bcq/config.hpp"
#include "bcq/layers.hpp"

// Joint contrastive + distillation objective over pooled image and text
// embeddings.
//
//   contrastive = (ce(I*T'/tau, diag) + ce(T*I'/tau, diag)) / alpha
//   distill     = (mse(I, proj(teacher_img)) + mse(T, proj(teacher_txt))) / beta
//   total       = lambda1 * contrastive + lambda2 * distill
//
// with I, T and the projected teacher embeddings all row-normalised and the
// cross entropies averaged over the batch. Teacher embeddings come in as
// plain tensors; the two projection heads that lift them into the shared
// space are the only trainable parameters here.

namespace bcq::align {

template <typename T>
void init(ParamStore<T>& ps, const ModelConfig& cfg, uint64_t seed) {
    add_linear(ps, "align/img_head", cfg.teacher_dim, cfg.embed_dim, seed);
    add_linear(ps, "align/txt_head", cfg.teacher_dim, cfg.embed_dim, seed);
}

struct Out {
    int total = -1;
    int contrast = -1;
    int distill = -1;
    int img_norm = -1; // [B, d] row-normalised image embeddings
    int txt_norm = -1;
};

template <typename T>
int contrastive_from_normed(Tape<T>& tp, int img_norm, int txt_norm, double tau, double alpha) {
    int64_t B = tp.val(img_norm).dim(0);
    std::vector<int64_t> labels(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) labels[static_cast<size_t>(i)] = i;
    T inv_tau = static_cast<T>(1.0 / tau);
    int ce_i = tp.cross_entropy_rows(tp.scale(tp.simmat(img_norm, txt_norm), inv_tau), labels);
    int ce_t = tp.cross_entropy_rows(tp.scale(tp.simmat(txt_norm, img_norm), inv_tau), labels);
    T inv_a = static_cast<T>(1.0 / alpha);
    return tp.add_scaled(ce_i, ce_t, inv_a, inv_a);
}

template <typename T>
Out loss(Binder<T>& b, const ModelConfig& cfg, int img_pooled, int txt_pooled,
         const Tensor<T>& teacher_img, const Tensor<T>& teacher_txt) {
    auto& tp = b.tape();
    const auto& iv = tp.val(img_pooled);
    check(iv.ndim() == 2 && iv.dim(1) == cfg.embed_dim, "alignment: bad image embedding shape");
    check(teacher_img.ndim() == 2 && teacher_img.dim(1) == cfg.teacher_dim &&
              teacher_img.dim(0) == iv.dim(0),
          "alignment: bad teacher image shape");
    Out o;
    o.img_norm = tp.l2norm_rows(img_pooled);
    o.txt_norm = tp.l2norm_rows(txt_pooled);
    o.contrast = contrastive_from_normed(tp, o.img_norm, o.txt_norm, cfg.temperature, cfg.alpha);
    int t_img = tp.l2norm_rows(linear_fwd(b, "align/img_head", tp.leaf(teacher_img)));
    int t_txt = tp.l2norm_rows(linear_fwd(b, "align/txt_head", tp.leaf(teacher_txt)));
    int mse_i = tp.mse(o.img_norm, t_img);
    int mse_t = tp.mse(o.txt_norm, t_txt);
    T inv_b = static_cast<T>(1.0 / cfg.beta);
    o.distill = tp.add_scaled(mse_i, mse_t, inv_b, inv_b);
    o.total = tp.add_scaled(o.contrast, o.distill, static_cast<T>(cfg.lambda1),
                            static_cast<T>(cfg.lambda2));
    return o;
}

// standalone contrastive loss on raw (unnormalised) embedding batches
template <typename T>
T contrastive_value(const Tensor<T>& img, const Tensor<T>& txt, double tau, double alpha) {
    Tape<T> tp;
    int i = tp.l2norm_rows(tp.leaf(img));
    int t = tp.l2norm_rows(tp.leaf(txt));
    return tp.val(contrastive_from_normed(tp, i, t, tau, alpha)).v[0];
}

// standalone distillation loss: both sides row-normalised, mse averaged over
// batch * dim, the two modality terms summed and divided by beta.
// Teacher embeddings here are already projected into the shared space.
template <typename T>
T distill_value(const Tensor<T>& img, const Tensor<T>& txt, const Tensor<T>& teacher_img_proj,
                const Tensor<T>& teacher_txt_proj, double beta) {
    Tape<T> tp;
    int mi = tp.mse(tp.l2norm_rows(tp.leaf(img)), tp.l2norm_rows(tp.leaf(teacher_img_proj)));
    int mt = tp.mse(tp.l2norm_rows(tp.leaf(txt)), tp.l2norm_rows(tp.leaf(teacher_txt_proj)));
    T inv_b = static_cast<T>(1.0 / beta);
    return tp.val(tp.add_scaled(mi, mt, inv_b, inv_b)).v[0];
}

} // namespace bcq::align
