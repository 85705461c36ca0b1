#include "bcq/train.hpp"

#include <cmath>
#include <numeric>

#include "bcq/alignment.hpp"
#include "bcq/archive.hpp"
#include "bcq/errors.hpp"
#include "bcq/image_encoder.hpp"
#include "bcq/optim.hpp"
#include "bcq/qgcam.hpp"
#include "bcq/teacher.hpp"
#include "bcq/text_encoder.hpp"

namespace bcq {

namespace {

Tensor<float> image_batch(const TrainSetup& s, const std::vector<int64_t>& scenes) {
    const auto& first = s.items[static_cast<size_t>(scenes[0])].image;
    int64_t B = static_cast<int64_t>(scenes.size());
    Tensor<float> out({B, first.dim(0), first.dim(1), first.dim(2)});
    int64_t per = first.numel();
    for (int64_t i = 0; i < B; ++i) {
        const auto& img = s.items[static_cast<size_t>(scenes[static_cast<size_t>(i)])].image;
        std::copy(img.v.begin(), img.v.end(), out.v.begin() + i * per);
    }
    return out;
}

struct TokenBatch {
    std::vector<int64_t> ids;
    std::vector<uint8_t> mask;
};

TokenBatch caption_batch(const TrainSetup& s, const std::vector<int64_t>& scenes) {
    TokenBatch tb;
    for (int64_t sc : scenes) {
        const auto& row = s.items[static_cast<size_t>(sc)].caption;
        tb.ids.insert(tb.ids.end(), row.ids.begin(), row.ids.end());
        tb.mask.insert(tb.mask.end(), row.mask.begin(), row.mask.end());
    }
    return tb;
}

Tensor<float> teacher_batch(const TrainSetup& s, const std::vector<int64_t>& scenes, bool image) {
    int64_t B = static_cast<int64_t>(scenes.size());
    int64_t dt = static_cast<int64_t>(s.items[0].teacher_img.size());
    Tensor<float> out({B, dt});
    for (int64_t i = 0; i < B; ++i) {
        const auto& it = s.items[static_cast<size_t>(scenes[static_cast<size_t>(i)])];
        const auto& src = image ? it.teacher_img : it.teacher_txt;
        std::copy(src.begin(), src.end(), out.v.begin() + i * dt);
    }
    return out;
}

std::vector<GradItem<float>> collect_grads(Tape<float>& tp, Binder<float>& b) {
    std::vector<GradItem<float>> items;
    for (const auto& [entry, node] : b.bound()) {
        if (entry->trainable_prefix <= 0) continue;
        items.push_back({entry, &tp.grad(node)});
    }
    return items;
}

// shuffled batch index lists for one epoch; a trailing partial batch is
// dropped unless it is the only one
std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch, uint64_t seed) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<int64_t>> out;
    if (n < batch) {
        out.push_back(order);
        return out;
    }
    for (int64_t at = 0; at + batch <= n; at += batch)
        out.emplace_back(order.begin() + at, order.begin() + at + batch);
    return out;
}

// frozen-encoder token features, reused across stage-2 epochs
struct CachedTokens {
    std::vector<Tensor<float>> scene_tokens; // per scene [N, d]
    std::vector<Tensor<float>> question_tokens; // per vqa example [T, d]
    int64_t n_patches = 0;
};

CachedTokens cache_tokens(ParamStore<float>& ps, const ModelConfig& cfg,
                          const TrainSetup& setup) {
    CachedTokens c;
    for (const auto& item : setup.items) {
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        Tensor<float> img = item.image;
        img.shape.insert(img.shape.begin(), 1);
        auto out = img_enc::forward(b, cfg, tp.leaf(std::move(img)));
        const auto& tok = tp.val(out.tokens);
        c.scene_tokens.push_back(Tensor<float>::from({tok.dim(1), tok.dim(2)}, tok.v));
        c.n_patches = tok.dim(1);
    }
    for (const auto& ex : setup.vqa) {
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        auto out = text_enc::forward(b, cfg, ex.question.ids, ex.question.mask, 1);
        const auto& tok = tp.val(out.tokens);
        c.question_tokens.push_back(Tensor<float>::from({tok.dim(1), tok.dim(2)}, tok.v));
    }
    return c;
}

Tensor<float> stack_rows(const std::vector<Tensor<float>>& mats,
                         const std::vector<int64_t>& idx) {
    const auto& first = mats[static_cast<size_t>(idx[0])];
    int64_t B = static_cast<int64_t>(idx.size());
    Tensor<float> out({B, first.dim(0), first.dim(1)});
    int64_t per = first.numel();
    for (int64_t i = 0; i < B; ++i) {
        const auto& m = mats[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        std::copy(m.v.begin(), m.v.end(), out.v.begin() + i * per);
    }
    return out;
}

// forward loss of one stage-2 batch over cached tokens; fills streams/sup
struct Stage2Batch {
    int loss = -1;
    int64_t supervised = 0;
};

Stage2Batch stage2_forward(Binder<float>& b, const ModelConfig& cfg, const TrainSetup& setup,
                           const CachedTokens& cache, const std::vector<int64_t>& vqa_idx,
                           const std::vector<int64_t>& scene_override) {
    auto& tp = b.tape();
    int64_t B = static_cast<int64_t>(vqa_idx.size());
    int64_t T = cfg.text_max_len;
    std::vector<int64_t> scenes(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) {
        int64_t v = vqa_idx[static_cast<size_t>(i)];
        scenes[static_cast<size_t>(i)] = scene_override.empty()
                                             ? setup.vqa[static_cast<size_t>(v)].scene
                                             : scene_override[static_cast<size_t>(i)];
    }
    int img = tp.leaf(stack_rows(cache.scene_tokens, scenes));
    int txt = tp.leaf(stack_rows(cache.question_tokens, vqa_idx));
    std::vector<uint8_t> txt_mask;
    std::vector<int64_t> stream_ids;
    std::vector<dec::TextStream> streams;
    for (int64_t v : vqa_idx) {
        const auto& ex = setup.vqa[static_cast<size_t>(v)];
        txt_mask.insert(txt_mask.end(), ex.question.mask.begin(), ex.question.mask.end());
        stream_ids.insert(stream_ids.end(), ex.stream.ids.begin(), ex.stream.ids.end());
        streams.push_back(ex.stream);
    }
    auto q = qgcam::forward(b, cfg, img, txt, txt_mask);
    auto d = dec::forward(b, cfg, q.adapted, stream_ids, B, T);
    auto sup = dec::make_supervision(streams, cache.n_patches, T, Vocab::PAD);
    Stage2Batch out;
    out.loss = tp.cross_entropy_masked(d.logits, sup.labels, sup.mask);
    for (uint8_t m : sup.mask) out.supervised += m;
    return out;
}

void require_finite(double loss, int stage, int epoch) {
    if (!std::isfinite(loss))
        throw DivergenceError("stage " + std::to_string(stage) + " epoch " +
                              std::to_string(epoch) + ": non-finite loss");
}

} // namespace

TrainSetup prepare(const ModelConfig& cfg, const SynthDataset& ds, const Vocab& vocab) {
    check(ds.size() > 0, "prepare: empty dataset");
    Teacher teacher = make_teacher(cfg.vocab_size, cfg.teacher_dim);
    TrainSetup s;
    for (int64_t i = 0; i < ds.size(); ++i) {
        PreparedItem item;
        item.image = preprocess_image(ds.images[static_cast<size_t>(i)], ds.resolution,
                                      ds.resolution, cfg);
        item.caption = vocab.tokenize(ds.captions[static_cast<size_t>(i)], cfg.text_max_len);
        item.teacher_img = teacher_image_embed(teacher, item.image);
        item.teacher_txt = teacher_text_embed(teacher, item.caption.ids, item.caption.mask);
        s.items.push_back(std::move(item));
    }
    for (const auto& ex : ds.vqa) {
        PreparedVqa v;
        v.scene = ex.scene_index;
        v.question = vocab.tokenize(ex.question, cfg.text_max_len);
        v.stream = dec::make_stream(vocab.encode_words(ex.question),
                                    vocab.encode_words(ex.answer), cfg.text_max_len, Vocab::PAD,
                                    Vocab::BOS, Vocab::EOS);
        v.question_text = ex.question;
        v.answer_text = ex.answer;
        v.kind = ex.kind;
        s.vqa.push_back(std::move(v));
    }
    return s;
}

void init_breezeclip(ParamStore<float>& ps, const ModelConfig& cfg) {
    text_enc::init(ps, cfg, cfg.seed);
    img_enc::init(ps, cfg, cfg.seed);
    align::init(ps, cfg, cfg.seed);
}

void init_fusion_decoder(ParamStore<float>& ps, const ModelConfig& cfg) {
    qgcam::init(ps, cfg, cfg.seed);
    dec::init(ps, cfg, cfg.seed);
}

void save_params(const ParamStore<float>& ps, const std::string& path,
                 const std::string& prefix) {
    TensorArchive ar;
    for (size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.at(i);
        if (!prefix.empty() && e.name.rfind(prefix, 0) != 0) continue;
        ar.put_f32(e.name, e.value);
    }
    ar.save(path);
}

void load_params(ParamStore<float>& ps, const std::string& path) {
    TensorArchive ar = TensorArchive::load(path);
    for (const auto& name : ar.names()) {
        if (!ps.has(name)) throw ArchiveError("checkpoint tensor not in model: " + name);
        Tensor<float> t = ar.get_f32(name);
        Tensor<float>& dst = ps[name];
        if (!dst.same_shape(t))
            throw ArchiveError("checkpoint shape mismatch for " + name + ": archive " +
                               t.shape_str() + " vs model " + dst.shape_str());
        dst = std::move(t);
    }
}

Embeds embed_dataset(ParamStore<float>& ps, const ModelConfig& cfg, const TrainSetup& setup) {
    int64_t n = static_cast<int64_t>(setup.items.size());
    Embeds e;
    e.img = Tensor<float>({n, cfg.embed_dim});
    e.txt = Tensor<float>({n, cfg.embed_dim});
    const int64_t kChunk = 16;
    for (int64_t at = 0; at < n; at += kChunk) {
        std::vector<int64_t> idx;
        for (int64_t i = at; i < std::min(n, at + kChunk); ++i) idx.push_back(i);
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        auto io = img_enc::forward(b, cfg, tp.leaf(image_batch(setup, idx)));
        int img_pooled = tp.masked_mean_tokens(io.tokens);
        TokenBatch tb = caption_batch(setup, idx);
        auto to = text_enc::forward(b, cfg, tb.ids, tb.mask, static_cast<int64_t>(idx.size()));
        const auto& iv = tp.val(img_pooled);
        const auto& tv = tp.val(to.pooled);
        for (size_t r = 0; r < idx.size(); ++r) {
            int64_t row = idx[r];
            for (int64_t c = 0; c < cfg.embed_dim; ++c) {
                e.img.at2(row, c) = iv.at2(static_cast<int64_t>(r), c);
                e.txt.at2(row, c) = tv.at2(static_cast<int64_t>(r), c);
            }
        }
    }
    return e;
}

std::vector<EpochRecord> train_stage1(ParamStore<float>& ps, const ModelConfig& cfg,
                                      const TrainSetup& setup, const std::string& out_dir) {
    const StageConfig& st = cfg.stage1;
    int64_t n = static_cast<int64_t>(setup.items.size());
    check(n >= 2, "stage 1 needs at least two scenes");
    check(st.batch_size >= 2, "stage 1 batch size must be at least 2");
    Adam<float> opt = Adam<float>::from_stage(st);
    std::vector<EpochRecord> records;
    for (int epoch = 0; epoch < st.epochs; ++epoch) {
        double lr = step_lr(st.lr, st.lr_gamma, st.lr_step, epoch);
        auto batches = epoch_batches(n, st.batch_size,
                                     derive_seed(cfg.seed, "stage1/epoch" + std::to_string(epoch)));
        double loss_sum = 0.0;
        int64_t loss_den = 0;
        for (const auto& batch : batches) {
            Tape<float> tp;
            Binder<float> b(tp, ps, true);
            auto io = img_enc::forward(b, cfg, tp.leaf(image_batch(setup, batch)));
            int img_pooled = tp.masked_mean_tokens(io.tokens);
            TokenBatch tb = caption_batch(setup, batch);
            auto to = text_enc::forward(b, cfg, tb.ids, tb.mask,
                                        static_cast<int64_t>(batch.size()));
            auto lo = align::loss(b, cfg, img_pooled, to.pooled,
                                  teacher_batch(setup, batch, true),
                                  teacher_batch(setup, batch, false));
            double loss = tp.val(lo.total)[0];
            require_finite(loss, 1, epoch);
            loss_sum += loss * static_cast<double>(batch.size());
            loss_den += static_cast<int64_t>(batch.size());
            tp.backward(lo.total);
            auto grads = collect_grads(tp, b);
            clip_global_norm(grads, st.clip_norm);
            opt.step(grads, lr);
        }
        Embeds emb = embed_dataset(ps, cfg, setup);
        CosineStats cs = cosine_metrics(emb.img, emb.txt);
        EpochRecord rec;
        rec.stage = 1;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(loss_den);
        rec.pos_mean = cs.pos_mean;
        rec.neg_mean = cs.neg_mean;
        rec.gap = cs.gap;
        rec.lr = lr;
        records.push_back(rec);
    }
    if (!out_dir.empty()) {
        save_params(ps, out_dir + "/stage1_final.bcqt");
        save_metrics(records, out_dir + "/metrics_stage1.json");
    }
    return records;
}

std::vector<EpochRecord> train_stage2(ParamStore<float>& ps, const ModelConfig& cfg,
                                      const TrainSetup& setup, const std::string& out_dir) {
    const StageConfig& st = cfg.stage2;
    int64_t n = static_cast<int64_t>(setup.vqa.size());
    check(n >= 1, "stage 2 needs vqa examples");
    ps.freeze_prefix("text/");
    ps.freeze_prefix("image/");
    ps.freeze_prefix("align/");
    dec::set_unfreeze_ratio(ps, cfg, cfg.unfreeze_ratio);

    CachedTokens cache = cache_tokens(ps, cfg, setup);
    Embeds emb = embed_dataset(ps, cfg, setup);
    CosineStats cs = cosine_metrics(emb.img, emb.txt);

    Adam<float> opt = Adam<float>::from_stage(st);
    std::vector<EpochRecord> records;
    for (int epoch = 0; epoch < st.epochs; ++epoch) {
        double lr = step_lr(st.lr, st.lr_gamma, st.lr_step, epoch);
        auto batches = epoch_batches(n, st.batch_size,
                                     derive_seed(cfg.seed, "stage2/epoch" + std::to_string(epoch)));
        double loss_sum = 0.0;
        int64_t sup_den = 0;
        for (const auto& batch : batches) {
            Tape<float> tp;
            Binder<float> b(tp, ps, true);
            Stage2Batch sb = stage2_forward(b, cfg, setup, cache, batch, {});
            double loss = tp.val(sb.loss)[0];
            require_finite(loss, 2, epoch);
            loss_sum += loss * static_cast<double>(sb.supervised);
            sup_den += sb.supervised;
            tp.backward(sb.loss);
            auto grads = collect_grads(tp, b);
            clip_global_norm(grads, st.clip_norm);
            opt.step(grads, lr);
        }
        EpochRecord rec;
        rec.stage = 2;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(sup_den);
        rec.pos_mean = cs.pos_mean;
        rec.neg_mean = cs.neg_mean;
        rec.gap = cs.gap;
        rec.lr = lr;
        records.push_back(rec);
    }
    if (!out_dir.empty()) {
        save_params(ps, out_dir + "/stage2_final.bcqt");
        save_metrics(records, out_dir + "/metrics_stage2.json");
    }
    return records;
}

double generation_loss(ParamStore<float>& ps, const ModelConfig& cfg, const TrainSetup& setup,
                       const std::vector<int64_t>& vqa_idx,
                       const std::vector<int64_t>& scene_override) {
    check(!vqa_idx.empty(), "generation_loss: no examples");
    check(scene_override.empty() || scene_override.size() == vqa_idx.size(),
          "generation_loss: override size mismatch");
    CachedTokens cache = cache_tokens(ps, cfg, setup);
    const int64_t kChunk = 16;
    double total = 0.0;
    int64_t den = 0;
    for (size_t at = 0; at < vqa_idx.size(); at += kChunk) {
        size_t end = std::min(vqa_idx.size(), at + kChunk);
        std::vector<int64_t> idx(vqa_idx.begin() + static_cast<int64_t>(at),
                                 vqa_idx.begin() + static_cast<int64_t>(end));
        std::vector<int64_t> over;
        if (!scene_override.empty())
            over.assign(scene_override.begin() + static_cast<int64_t>(at),
                        scene_override.begin() + static_cast<int64_t>(end));
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        Stage2Batch sb = stage2_forward(b, cfg, setup, cache, idx, over);
        total += tp.val(sb.loss)[0] * static_cast<double>(sb.supervised);
        den += sb.supervised;
    }
    return total / static_cast<double>(den);
}

std::string generate_answer(ParamStore<float>& ps, const ModelConfig& cfg, const Vocab& vocab,
                            const Tensor<float>& image, const std::string& question,
                            int max_new_tokens) {
    check(image.ndim() == 3 && image.dim(0) == 3, "generate: [3,H,W] image required");
    TokenRow q = vocab.tokenize(question, cfg.text_max_len);

    Tensor<float> adapted;
    {
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        Tensor<float> img = image;
        img.shape.insert(img.shape.begin(), 1);
        auto io = img_enc::forward(b, cfg, tp.leaf(std::move(img)));
        auto to = text_enc::forward(b, cfg, q.ids, q.mask, 1);
        auto qo = qgcam::forward(b, cfg, io.tokens, to.tokens, q.mask);
        adapted = tp.val(qo.adapted);
    }
    int64_t N = adapted.dim(1);

    std::vector<int64_t> ids;
    ids.push_back(Vocab::BOS);
    for (int64_t w : vocab.encode_words(question)) ids.push_back(w);
    ids.push_back(Vocab::EOS);

    std::vector<int64_t> generated;
    for (int step = 0; step < max_new_tokens; ++step) {
        int64_t Tt = static_cast<int64_t>(ids.size());
        if (Tt >= cfg.text_max_len) break;
        Tape<float> tp;
        Binder<float> b(tp, ps, false);
        auto out = dec::forward(b, cfg, tp.leaf(adapted), ids, 1, Tt);
        const auto& logits = tp.val(out.logits);
        int64_t V = logits.dim(2);
        int64_t row = N + Tt - 1;
        int64_t best = 0;
        float best_v = logits.at3(0, row, 0);
        for (int64_t v = 1; v < V; ++v) {
            float x = logits.at3(0, row, v);
            if (x > best_v) {
                best_v = x;
                best = v;
            }
        }
        if (best == Vocab::EOS) break;
        ids.push_back(best);
        generated.push_back(best);
    }
    return vocab.decode(generated);
}

} // namespace bcq
