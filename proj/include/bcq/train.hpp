#pragma once

#include <string>
#include <vector>

#include "bcq/config.hpp"
#include "bcq/data.hpp"
#include "bcq/decoder.hpp"
#include "bcq/metrics.hpp"
#include "bcq/params.hpp"

// Two-stage training driver.
//
// Stage 1 aligns the dual encoder: image and text embeddings of matched
// caption pairs are pulled together with the contrastive loss while both are
// distilled toward fixed teacher embeddings.
//
// Stage 2 freezes the dual encoder, fuses the modalities and trains the
// decoder on masked answer generation. Because the encoders are frozen,
// their token features are computed once per dataset and cached; only the
// fusion block and the decoder's unfrozen share see gradients.

namespace bcq {

struct PreparedItem {
    Tensor<float> image;        // [3, res, res] normalised
    TokenRow caption;           // padded to text_max_len
    std::vector<float> teacher_img; // [teacher_dim]
    std::vector<float> teacher_txt;
};

struct PreparedVqa {
    int64_t scene = 0;
    TokenRow question;      // padded to text_max_len, for the text encoder
    dec::TextStream stream; // decoder token stream with supervision spans
    std::string question_text, answer_text, kind;
};

struct TrainSetup {
    std::vector<PreparedItem> items;
    std::vector<PreparedVqa> vqa;
};

TrainSetup prepare(const ModelConfig& cfg, const SynthDataset& ds, const Vocab& vocab);

// text + image encoders and the alignment heads, seeded from cfg.seed
void init_breezeclip(ParamStore<float>& ps, const ModelConfig& cfg);
// fusion block + decoder
void init_fusion_decoder(ParamStore<float>& ps, const ModelConfig& cfg);

// Write entries (optionally only those under prefix) to a tensor archive.
void save_params(const ParamStore<float>& ps, const std::string& path,
                 const std::string& prefix = "");
// Copy every archive entry into the store; unknown names or shape
// mismatches raise ArchiveError. Store entries absent from the archive are
// left alone, so a stage-1 checkpoint loads into a full model.
void load_params(ParamStore<float>& ps, const std::string& path);

struct Embeds {
    Tensor<float> img, txt; // [n, embed_dim] pooled, unnormalised
};

// pooled embeddings of every dataset item, gradients off
Embeds embed_dataset(ParamStore<float>& ps, const ModelConfig& cfg, const TrainSetup& setup);

// Returns one record per epoch. When out_dir is nonempty, writes
// stage{1,2}_final.bcqt and metrics_stage{1,2}.json there.
std::vector<EpochRecord> train_stage1(ParamStore<float>& ps, const ModelConfig& cfg,
                                      const TrainSetup& setup, const std::string& out_dir);
std::vector<EpochRecord> train_stage2(ParamStore<float>& ps, const ModelConfig& cfg,
                                      const TrainSetup& setup, const std::string& out_dir);

// Mean masked-generation loss over the given vqa examples. scene_override,
// when nonempty, substitutes the image of vqa example i with the image of
// scene scene_override[i] (used to probe that answers depend on the image).
double generation_loss(ParamStore<float>& ps, const ModelConfig& cfg, const TrainSetup& setup,
                       const std::vector<int64_t>& vqa_idx,
                       const std::vector<int64_t>& scene_override = {});

// greedy decoding; stops at EOS or after max_new_tokens
std::string generate_answer(ParamStore<float>& ps, const ModelConfig& cfg, const Vocab& vocab,
                            const Tensor<float>& image, const std::string& question,
                            int max_new_tokens);

} // namespace bcq
