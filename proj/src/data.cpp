#include "bcq/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

namespace bcq {

using nlohmann::ordered_json;

const std::vector<std::string>& color_names() {
    static const std::vector<std::string> v = {"red",    "green",  "blue",
                                               "yellow", "purple", "orange"};
    return v;
}

const std::vector<std::string>& category_names() {
    static const std::vector<std::string> v = {"circle", "square", "triangle", "cross"};
    return v;
}

std::string object_phrase(const SceneObject& o) { return "the " + o.color + " " + o.category; }

std::string opposite_predicate(const std::string& p) {
    if (p == "left of") return "right of";
    if (p == "right of") return "left of";
    if (p == "above") return "below";
    if (p == "below") return "above";
    throw Error("unknown predicate: " + p);
}

std::string render_caption(const Scene& scene) {
    std::vector<bool> in_relation(scene.objects.size(), false);
    std::map<int, size_t> by_id;
    for (size_t i = 0; i < scene.objects.size(); ++i) by_id[scene.objects[i].id] = i;
    for (const auto& r : scene.relations) {
        in_relation[by_id.at(r.subject)] = true;
        in_relation[by_id.at(r.object)] = true;
    }
    std::vector<std::string> clauses;
    for (size_t i = 0; i < scene.objects.size(); ++i)
        if (!in_relation[i]) clauses.push_back(object_phrase(scene.objects[i]));
    for (const auto& r : scene.relations) {
        const auto& s = scene.objects[by_id.at(r.subject)];
        const auto& o = scene.objects[by_id.at(r.object)];
        clauses.push_back(object_phrase(s) + " is " + r.predicate + " " + object_phrase(o));
    }
    std::sort(clauses.begin(), clauses.end());
    std::string out;
    for (size_t i = 0; i < clauses.size(); ++i) {
        if (i) out += "; ";
        out += clauses[i];
    }
    return out;
}

namespace {

// dominant-axis predicate for two distinct cells, empty when tied (diagonal)
std::string cell_predicate(const SceneObject& a, const SceneObject& b) {
    int dr = b.row - a.row, dc = b.col - a.col;
    if (std::abs(dc) > std::abs(dr)) return dc > 0 ? "left of" : "right of";
    if (std::abs(dr) > std::abs(dc)) return dr > 0 ? "above" : "below";
    return "";
}

const char* count_word(size_t n) {
    static const char* words[] = {"zero", "one", "two", "three", "four", "five"};
    return words[n];
}

} // namespace

Scene make_scene(uint64_t seed, int64_t index) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(index)));
    Scene scene;
    scene.id = index;
    const auto& cats = category_names();
    const auto& cols = color_names();
    for (int attempt = 0; attempt < 100; ++attempt) {
        scene.objects.clear();
        scene.relations.clear();
        int n = 2 + static_cast<int>(rng.below(2));
        std::vector<size_t> cat_idx(cats.size());
        for (size_t i = 0; i < cat_idx.size(); ++i) cat_idx[i] = i;
        rng.shuffle(cat_idx.begin(), cat_idx.end());
        std::vector<int> cells(kGridCells * kGridCells);
        for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
        rng.shuffle(cells.begin(), cells.end());
        for (int i = 0; i < n; ++i) {
            SceneObject o;
            o.id = i;
            o.category = cats[cat_idx[static_cast<size_t>(i)]];
            o.color = cols[rng.below(cols.size())];
            o.row = cells[static_cast<size_t>(i)] / kGridCells;
            o.col = cells[static_cast<size_t>(i)] % kGridCells;
            scene.objects.push_back(o);
        }
        // one relation per object pair whose displacement has a dominant axis,
        // capped at two relations to keep captions short
        for (int i = 0; i < n && scene.relations.size() < 2; ++i) {
            for (int j = i + 1; j < n && scene.relations.size() < 2; ++j) {
                std::string pred = cell_predicate(scene.objects[static_cast<size_t>(i)],
                                                  scene.objects[static_cast<size_t>(j)]);
                if (pred.empty()) continue;
                scene.relations.push_back({i, j, pred});
            }
        }
        if (!scene.relations.empty()) return scene;
    }
    throw Error("scene generation failed to place objects");
}

std::vector<QaPair> scene_questions(const Scene& scene, uint64_t seed) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(scene.id) * 2 + 1));
    std::vector<QaPair> out;
    out.push_back({"how many shapes are in the image", count_word(scene.objects.size()), "count"});
    std::vector<const SceneObject*> objs;
    for (const auto& o : scene.objects) objs.push_back(&o);
    std::sort(objs.begin(), objs.end(),
              [](const SceneObject* a, const SceneObject* b) { return a->category < b->category; });
    for (const auto* o : objs)
        out.push_back({"what color is the " + o->category, o->color, "color"});
    std::map<int, const SceneObject*> by_id;
    for (const auto& o : scene.objects) by_id[o.id] = &o;
    for (const auto& r : scene.relations) {
        const auto& s = *by_id.at(r.subject);
        const auto& o = *by_id.at(r.object);
        out.push_back({"is the " + s.category + " " + r.predicate + " the " + o.category, "yes",
                       "spatial"});
        // a provably false variant: either swap the roles or negate the predicate
        if (rng.below(2) == 0)
            out.push_back({"is the " + o.category + " " + r.predicate + " the " + s.category,
                           "no", "spatial"});
        else
            out.push_back({"is the " + s.category + " " + opposite_predicate(r.predicate) +
                               " the " + o.category,
                           "no", "spatial"});
    }
    return out;
}

namespace {

struct Rgb {
    uint8_t r, g, b;
};

Rgb color_rgb(const std::string& name) {
    if (name == "red") return {220, 40, 40};
    if (name == "green") return {40, 200, 60};
    if (name == "blue") return {40, 80, 230};
    if (name == "yellow") return {235, 220, 50};
    if (name == "purple") return {160, 60, 200};
    if (name == "orange") return {240, 140, 40};
    throw Error("unknown color: " + name);
}

bool inside_shape(const std::string& category, double nx, double ny) {
    // nx, ny in [-1, 1] within the object's bounding box
    if (category == "circle") return nx * nx + ny * ny <= 1.0;
    if (category == "square") return std::abs(nx) <= 0.85 && std::abs(ny) <= 0.85;
    if (category == "triangle") {
        // upward triangle: apex at top
        if (ny < -1.0 || ny > 1.0) return false;
        double half = (ny + 1.0) * 0.5; // width grows towards the base
        return std::abs(nx) <= half;
    }
    if (category == "cross") return std::abs(nx) <= 0.3 || std::abs(ny) <= 0.3;
    throw Error("unknown category: " + category);
}

} // namespace

std::vector<uint8_t> render_scene_image(const Scene& scene, int resolution) {
    const uint8_t bg[3] = {25, 28, 32};
    std::vector<uint8_t> img(static_cast<size_t>(resolution) * resolution * 3);
    for (int64_t i = 0; i < resolution * static_cast<int64_t>(resolution); ++i) {
        img[static_cast<size_t>(i * 3 + 0)] = bg[0];
        img[static_cast<size_t>(i * 3 + 1)] = bg[1];
        img[static_cast<size_t>(i * 3 + 2)] = bg[2];
    }
    double cell = static_cast<double>(resolution) / kGridCells;
    for (const auto& o : scene.objects) {
        Rgb c = color_rgb(o.color);
        double cx = (o.col + 0.5) * cell;
        double cy = (o.row + 0.5) * cell;
        double radius = 0.42 * cell;
        int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
        int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(cx + radius)));
        int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
        int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(cy + radius)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                double nx = (x + 0.5 - cx) / radius;
                double ny = (y + 0.5 - cy) / radius;
                if (nx < -1 || nx > 1 || ny < -1 || ny > 1) continue;
                if (!inside_shape(o.category, nx, ny)) continue;
                size_t p = (static_cast<size_t>(y) * static_cast<size_t>(resolution) +
                            static_cast<size_t>(x)) *
                           3;
                img[p + 0] = c.r;
                img[p + 1] = c.g;
                img[p + 2] = c.b;
            }
        }
    }
    return img;
}

SynthDataset build_synth_dataset(int64_t n_scenes, int resolution, uint64_t seed) {
    SynthDataset ds;
    ds.resolution = resolution;
    for (int64_t i = 0; i < n_scenes; ++i) {
        Scene s = make_scene(seed, i);
        ds.captions.push_back(render_caption(s));
        ds.images.push_back(render_scene_image(s, resolution));
        auto qs = scene_questions(s, seed);
        for (auto& q : qs) ds.vqa.push_back({i, q.question, q.answer, q.kind});
        ds.scenes.push_back(std::move(s));
    }
    return ds;
}

std::vector<std::string> dataset_corpus(const SynthDataset& ds) {
    std::vector<std::string> out;
    for (const auto& c : ds.captions) out.push_back(c);
    for (const auto& v : ds.vqa) {
        out.push_back(v.question);
        out.push_back(v.answer);
    }
    return out;
}

void save_dataset(const SynthDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream jf(dir + "/items.jsonl", std::ios::trunc);
    if (!jf) throw Error("cannot write " + dir + "/items.jsonl");
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const Scene& s = ds.scenes[i];
        ordered_json j;
        j["id"] = s.id;
        j["caption"] = ds.captions[i];
        j["objects"] = ordered_json::array();
        for (const auto& o : s.objects) {
            ordered_json oj;
            oj["id"] = o.id;
            oj["category"] = o.category;
            oj["color"] = o.color;
            oj["row"] = o.row;
            oj["col"] = o.col;
            j["objects"].push_back(std::move(oj));
        }
        j["relations"] = ordered_json::array();
        for (const auto& r : s.relations) {
            ordered_json rj;
            rj["subject"] = r.subject;
            rj["object"] = r.object;
            rj["predicate"] = r.predicate;
            j["relations"].push_back(std::move(rj));
        }
        j["qa"] = ordered_json::array();
        for (const auto& v : ds.vqa) {
            if (v.scene_index != s.id) continue;
            ordered_json qj;
            qj["question"] = v.question;
            qj["answer"] = v.answer;
            qj["kind"] = v.kind;
            j["qa"].push_back(std::move(qj));
        }
        jf << j.dump() << "\n";
    }
    TensorArchive arc;
    char name[32];
    for (size_t i = 0; i < ds.images.size(); ++i) {
        Tensor<float> t({ds.resolution, ds.resolution, 3});
        for (int64_t k = 0; k < t.numel(); ++k) t[k] = static_cast<float>(ds.images[i][static_cast<size_t>(k)]);
        std::snprintf(name, sizeof(name), "image/%06zu", i);
        arc.put_f32(name, t);
    }
    arc.save(dir + "/images.bcqt");
}

SynthDataset load_dataset(const std::string& dir) {
    std::ifstream jf(dir + "/items.jsonl");
    if (!jf) throw Error("cannot read " + dir + "/items.jsonl");
    SynthDataset ds;
    std::string line;
    while (std::getline(jf, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        Scene s;
        s.id = j.at("id").get<int64_t>();
        for (const auto& oj : j.at("objects")) {
            SceneObject o;
            o.id = oj.at("id").get<int>();
            o.category = oj.at("category").get<std::string>();
            o.color = oj.at("color").get<std::string>();
            o.row = oj.at("row").get<int>();
            o.col = oj.at("col").get<int>();
            s.objects.push_back(std::move(o));
        }
        for (const auto& rj : j.at("relations")) {
            SceneRelation r;
            r.subject = rj.at("subject").get<int>();
            r.object = rj.at("object").get<int>();
            r.predicate = rj.at("predicate").get<std::string>();
            s.relations.push_back(std::move(r));
        }
        for (const auto& qj : j.at("qa")) {
            VqaExample v;
            v.scene_index = s.id;
            v.question = qj.at("question").get<std::string>();
            v.answer = qj.at("answer").get<std::string>();
            v.kind = qj.at("kind").get<std::string>();
            ds.vqa.push_back(std::move(v));
        }
        ds.captions.push_back(j.at("caption").get<std::string>());
        ds.scenes.push_back(std::move(s));
    }
    if (ds.scenes.empty()) throw Error(dir + "/items.jsonl holds no scenes");
    TensorArchive arc = TensorArchive::load(dir + "/images.bcqt");
    char name[32];
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        std::snprintf(name, sizeof(name), "image/%06zu", i);
        Tensor<float> t = arc.get_f32(name);
        if (t.ndim() != 3 || t.dim(2) != 3 || t.dim(0) != t.dim(1))
            throw ArchiveError(std::string(name) + ": expected square [H,W,3] image");
        if (i == 0) ds.resolution = static_cast<int>(t.dim(0));
        std::vector<uint8_t> bytes(static_cast<size_t>(t.numel()));
        for (int64_t k = 0; k < t.numel(); ++k)
            bytes[static_cast<size_t>(k)] = static_cast<uint8_t>(t[k]);
        ds.images.push_back(std::move(bytes));
    }
    return ds;
}

// ---- vocabulary ----

std::vector<std::string> Vocab::split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur += static_cast<char>(std::tolower(u));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int max_size) {
    if (max_size < 8) throw VocabError("vocabulary size must be at least 8");
    std::map<std::string, int64_t> freq;
    for (const auto& text : corpus)
        for (const auto& w : split_words(text)) ++freq[w];
    if (freq.empty()) throw VocabError("empty corpus");
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    v.tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
    for (const auto& [word, n] : ranked) {
        if (static_cast<int>(v.tokens_.size()) >= max_size) break;
        v.tokens_.push_back(word);
    }
    v.rebuild_index();
    return v;
}

void Vocab::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int64_t>(i);
}

int64_t Vocab::lookup(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? UNK : it->second;
}

std::vector<int64_t> Vocab::encode_words(const std::string& text) const {
    std::vector<int64_t> out;
    for (const auto& w : split_words(text)) out.push_back(lookup(w));
    return out;
}

TokenRow Vocab::tokenize(const std::string& text, int max_len) const {
    if (max_len < 2) throw VocabError("max_len must fit BOS and EOS");
    std::vector<int64_t> words = encode_words(text);
    if (static_cast<int>(words.size()) > max_len - 2)
        words.resize(static_cast<size_t>(max_len - 2));
    TokenRow row;
    row.ids.push_back(BOS);
    for (auto id : words) row.ids.push_back(id);
    row.ids.push_back(EOS);
    row.mask.assign(row.ids.size(), 1);
    while (static_cast<int>(row.ids.size()) < max_len) {
        row.ids.push_back(PAD);
        row.mask.push_back(0);
    }
    return row;
}

std::string Vocab::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (auto id : ids) {
        if (id == PAD || id == BOS || id == EOS || id == UNK) continue;
        if (id < 0 || id >= size()) continue;
        if (!out.empty()) out += ' ';
        out += tokens_[static_cast<size_t>(id)];
    }
    return out;
}

void Vocab::save(const std::string& path) const {
    ordered_json j;
    j["tokens"] = tokens_;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw VocabError("cannot write " + path);
    f << j.dump(2) << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw VocabError("cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw VocabError(std::string("parse failed: ") + e.what());
    }
    Vocab v;
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.tokens_.size() < 4 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>" ||
        v.tokens_[2] != "<bos>" || v.tokens_[3] != "<eos>")
        throw VocabError("special tokens missing or out of order in " + path);
    v.rebuild_index();
    return v;
}

// ---- preprocessing ----

Tensor<float> bilinear_resize(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
    check(img.ndim() == 3, "bilinear_resize: H x W x C input required");
    int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    if (h == out_h && w == out_w) return img;
    Tensor<float> out({out_h, out_w, c});
    for (int64_t y = 0; y < out_h; ++y) {
        double sy = (y + 0.5) * static_cast<double>(h) / static_cast<double>(out_h) - 0.5;
        double fy = std::floor(sy);
        int64_t y0 = static_cast<int64_t>(fy);
        double wy = sy - fy;
        int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1);
        int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
        for (int64_t x = 0; x < out_w; ++x) {
            double sx = (x + 0.5) * static_cast<double>(w) / static_cast<double>(out_w) - 0.5;
            double fx = std::floor(sx);
            int64_t x0 = static_cast<int64_t>(fx);
            double wx = sx - fx;
            int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1);
            int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
            for (int64_t ch = 0; ch < c; ++ch) {
                double v00 = img[(y0c * w + x0c) * c + ch];
                double v01 = img[(y0c * w + x1c) * c + ch];
                double v10 = img[(y1c * w + x0c) * c + ch];
                double v11 = img[(y1c * w + x1c) * c + ch];
                double top = v00 * (1 - wx) + v01 * wx;
                double bot = v10 * (1 - wx) + v11 * wx;
                out[(y * out_w + x) * c + ch] = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Tensor<float> preprocess_image(const std::vector<uint8_t>& rgb, int64_t h, int64_t w,
                               const ModelConfig& cfg) {
    check(static_cast<int64_t>(rgb.size()) == h * w * 3, "preprocess_image: byte count mismatch");
    Tensor<float> hwc({h, w, 3});
    for (int64_t i = 0; i < hwc.numel(); ++i) hwc[i] = static_cast<float>(rgb[static_cast<size_t>(i)]);
    Tensor<float> sized = bilinear_resize(hwc, cfg.resolution, cfg.resolution);
    int64_t res = cfg.resolution;
    Tensor<float> out({3, res, res});
    for (int64_t c = 0; c < 3; ++c) {
        float mean = static_cast<float>(cfg.norm_mean[static_cast<size_t>(c)]);
        float stdv = static_cast<float>(cfg.norm_std[static_cast<size_t>(c)]);
        for (int64_t y = 0; y < res; ++y)
            for (int64_t x = 0; x < res; ++x)
                out[(c * res + y) * res + x] =
                    (sized[(y * res + x) * 3 + c] / 255.0f - mean) / stdv;
    }
    return out;
}

} // namespace bcq
