#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcq/archive.hpp"
#include "bcq/config.hpp"
#include "bcq/rng.hpp"
#include "bcq/tensor.hpp"

namespace bcq {

// ---- synthetic scenes ----

struct SceneObject {
    int id = 0;
    std::string category; // shape name, unique within a scene
    std::string color;
    int row = 0, col = 0; // cell on the placement grid
};

struct SceneRelation {
    int subject = 0, object = 0; // object ids
    std::string predicate;       // "left of", "right of", "above", "below"
};

struct Scene {
    int64_t id = 0;
    std::vector<SceneObject> objects;
    std::vector<SceneRelation> relations;
};

struct QaPair {
    std::string question;
    std::string answer;
    std::string kind; // "color", "spatial", "count"
};

// grid the objects are placed on
constexpr int kGridCells = 4;

const std::vector<std::string>& color_names();
const std::vector<std::string>& category_names();

// "the {color} {category}"
std::string object_phrase(const SceneObject& o);

// Standalone phrases for objects not mentioned by any relation, then one
// clause per relation; clauses are sorted by their rendered text and joined
// with "; ", so the output depends only on scene content, not on the order
// objects or relations are stored in.
std::string render_caption(const Scene& scene);

std::string opposite_predicate(const std::string& p);

// deterministic in (seed, index)
Scene make_scene(uint64_t seed, int64_t index);

std::vector<QaPair> scene_questions(const Scene& scene, uint64_t seed);

// flat 8-bit RGB raster, row-major, resolution x resolution x 3
std::vector<uint8_t> render_scene_image(const Scene& scene, int resolution);

// ---- datasets ----

struct VqaExample {
    int64_t scene_index = 0;
    std::string question, answer, kind;
};

struct SynthDataset {
    int resolution = 0;
    std::vector<Scene> scenes;
    std::vector<std::string> captions;
    std::vector<std::vector<uint8_t>> images; // per scene, H*W*3 bytes
    std::vector<VqaExample> vqa;              // flattened (scene, question) pairs

    int64_t size() const { return static_cast<int64_t>(scenes.size()); }
};

SynthDataset build_synth_dataset(int64_t n_scenes, int resolution, uint64_t seed);

// all caption/question/answer strings, for vocabulary building
std::vector<std::string> dataset_corpus(const SynthDataset& ds);

// items.jsonl (one scene per line) + images archive with "image/{id}" entries
void save_dataset(const SynthDataset& ds, const std::string& dir);

// inverse of save_dataset
SynthDataset load_dataset(const std::string& dir);

// ---- vocabulary and tokenizer ----

struct TokenRow {
    std::vector<int64_t> ids;
    std::vector<uint8_t> mask; // 1 = real token, 0 = padding
};

class Vocab {
  public:
    static constexpr int64_t PAD = 0, UNK = 1, BOS = 2, EOS = 3;

    // ranked by frequency (descending), ties broken lexicographically,
    // truncated to max_size including the four specials
    static Vocab build(const std::vector<std::string>& corpus, int max_size);

    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    const std::string& token(int64_t id) const { return tokens_[static_cast<size_t>(id)]; }
    int64_t lookup(const std::string& w) const; // UNK when absent

    // lowercase and split on non-alphanumeric characters
    static std::vector<std::string> split_words(const std::string& text);

    std::vector<int64_t> encode_words(const std::string& text) const;

    // BOS + words + EOS, truncated to max_len keeping the final EOS,
    // padded with PAD
    TokenRow tokenize(const std::string& text, int max_len) const;

    std::string decode(const std::vector<int64_t>& ids) const; // skips specials

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> index_;
    void rebuild_index();
};

// ---- image preprocessing ----

// bilinear resample of an H x W x C float image to out_h x out_w
Tensor<float> bilinear_resize(const Tensor<float>& img, int64_t out_h, int64_t out_w);

// bytes (H*W*3, values 0..255) -> normalized [3, res, res] CHW float
Tensor<float> preprocess_image(const std::vector<uint8_t>& rgb, int64_t h, int64_t w,
                               const ModelConfig& cfg);

} // namespace bcq
