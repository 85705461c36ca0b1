#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bcq/checks.hpp"
#include "bcq/config.hpp"
#include "bcq/data.hpp"
#include "bcq/errors.hpp"
#include "bcq/flops.hpp"
#include "bcq/kernels.hpp"
#include "bcq/metrics.hpp"
#include "bcq/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonOpts {
    std::string config_path;
    int64_t seed = -1; // -1 keeps the config's seed
};

bcq::ModelConfig load_config(const CommonOpts& o, const std::string& fallback_path = "") {
    std::string path = !o.config_path.empty() ? o.config_path : fallback_path;
    bcq::ModelConfig cfg = path.empty() ? bcq::ModelConfig() : bcq::ModelConfig::load(path);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw bcq::Error("cannot write " + path);
    f << text;
}

// config.json and vocab.json that live next to a checkpoint
std::string sibling(const std::string& checkpoint, const char* name) {
    return (fs::path(checkpoint).parent_path() / name).string();
}

void init_model_for(const bcq::TensorArchive& ar, bcq::ParamStore<float>& ps,
                    const bcq::ModelConfig& cfg) {
    bcq::init_breezeclip(ps, cfg);
    for (const auto& n : ar.names())
        if (n.rfind("qgcam/", 0) == 0 || n.rfind("decoder/", 0) == 0) {
            bcq::init_fusion_decoder(ps, cfg);
            break;
        }
}

int do_synth_data(const CommonOpts& common, const std::string& out, int64_t n) {
    bcq::ModelConfig cfg = load_config(common);
    bcq::SynthDataset ds = bcq::build_synth_dataset(n, cfg.resolution, cfg.seed);
    fs::create_directories(out);
    bcq::save_dataset(ds, out);
    bcq::Vocab vocab = bcq::Vocab::build(bcq::dataset_corpus(ds), cfg.vocab_size);
    vocab.save(out + "/vocab.json");
    std::cout << "wrote " << ds.size() << " scenes, " << ds.vqa.size() << " qa pairs, vocab "
              << vocab.size() << " to " << out << "\n";
    return 0;
}

int do_pretrain(const CommonOpts& common, const std::string& data, const std::string& out) {
    bcq::ModelConfig cfg = load_config(common);
    bcq::SynthDataset ds = bcq::load_dataset(data);
    bcq::Vocab vocab = bcq::Vocab::load(data + "/vocab.json");
    bcq::TrainSetup setup = bcq::prepare(cfg, ds, vocab);
    bcq::ParamStore<float> ps;
    bcq::init_breezeclip(ps, cfg);
    fs::create_directories(out);
    auto records = bcq::train_stage1(ps, cfg, setup, out);
    write_text(out + "/config.json", cfg.to_json_text());
    vocab.save(out + "/vocab.json");
    const auto& last = records.back();
    std::cout << "stage 1 done: epochs " << records.size() << ", final loss " << last.loss
              << ", cosine gap " << last.gap << "\n";
    return 0;
}

int do_finetune(const CommonOpts& common, const std::string& data,
                const std::string& checkpoint, const std::string& out) {
    bcq::ModelConfig cfg = load_config(common, sibling(checkpoint, "config.json"));
    bcq::SynthDataset ds = bcq::load_dataset(data);
    bcq::Vocab vocab = bcq::Vocab::load(data + "/vocab.json");
    bcq::TrainSetup setup = bcq::prepare(cfg, ds, vocab);
    bcq::ParamStore<float> ps;
    bcq::init_breezeclip(ps, cfg);
    bcq::init_fusion_decoder(ps, cfg);
    bcq::load_params(ps, checkpoint);
    fs::create_directories(out);
    auto records = bcq::train_stage2(ps, cfg, setup, out);
    write_text(out + "/config.json", cfg.to_json_text());
    vocab.save(out + "/vocab.json");
    std::cout << "stage 2 done: epochs " << records.size() << ", final loss "
              << records.back().loss << "\n";
    return 0;
}

int do_eval(const CommonOpts& common, const std::string& data, const std::string& checkpoint,
            const std::string& out) {
    bcq::ModelConfig cfg = load_config(common, sibling(checkpoint, "config.json"));
    bcq::SynthDataset ds = bcq::load_dataset(data);
    bcq::Vocab vocab = bcq::Vocab::load(sibling(checkpoint, "vocab.json"));
    bcq::TrainSetup setup = bcq::prepare(cfg, ds, vocab);
    bcq::ParamStore<float> ps;
    bcq::init_breezeclip(ps, cfg);
    bcq::init_fusion_decoder(ps, cfg);
    bcq::load_params(ps, checkpoint);
    fs::create_directories(out);

    auto t0 = std::chrono::steady_clock::now();
    std::ofstream pf(out + "/predictions.jsonl", std::ios::trunc);
    if (!pf) throw bcq::Error("cannot write " + out + "/predictions.jsonl");
    std::vector<std::string> preds, refs;
    std::map<std::string, std::pair<int64_t, int64_t>> by_kind; // kind -> (hits, n)
    for (const auto& ex : setup.vqa) {
        std::string answer =
            bcq::generate_answer(ps, cfg, vocab, setup.items[static_cast<size_t>(ex.scene)].image,
                                 ex.question_text, cfg.max_new_tokens);
        bool correct = bcq::vqa_normalize(answer) == bcq::vqa_normalize(ex.answer_text);
        ordered_json j;
        j["scene"] = ex.scene;
        j["kind"] = ex.kind;
        j["question"] = ex.question_text;
        j["reference"] = ex.answer_text;
        j["prediction"] = answer;
        j["correct"] = correct;
        pf << j.dump() << "\n";
        preds.push_back(answer);
        refs.push_back(ex.answer_text);
        auto& k = by_kind[ex.kind];
        k.first += correct ? 1 : 0;
        k.second += 1;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    double acc = bcq::vqa_accuracy(preds, refs);
    ordered_json ej;
    ej["examples"] = preds.size();
    ej["exact_match"] = acc;
    ej["by_kind"] = ordered_json::object();
    for (const auto& [kind, hn] : by_kind)
        ej["by_kind"][kind] = static_cast<double>(hn.first) / static_cast<double>(hn.second);
    write_text(out + "/eval.json", ej.dump(2) + "\n");

    bcq::FlopBreakdown fb = bcq::analytic_flops(cfg);
    ordered_json fj;
    fj["backend"] = bcq::kern::backend_name(bcq::kern::backend());
    fj["params"] = ordered_json::object();
    fj["params"]["text"] = ps.total_elements("text/");
    fj["params"]["image"] = ps.total_elements("image/");
    fj["params"]["align"] = ps.total_elements("align/");
    fj["params"]["qgcam"] = ps.total_elements("qgcam/");
    fj["params"]["decoder"] = ps.total_elements("decoder/");
    fj["params"]["total"] = ps.total_elements();
    fj["flops_per_sample"] = ordered_json::object();
    fj["flops_per_sample"]["text_encoder"] = fb.text_encoder;
    fj["flops_per_sample"]["image_encoder"] = fb.image_encoder;
    fj["flops_per_sample"]["qgcam"] = fb.qgcam;
    fj["flops_per_sample"]["decoder"] = fb.decoder;
    fj["flops_per_sample"]["total"] = fb.total();
    fj["eval_seconds"] = secs;
    fj["examples_per_second"] = secs > 0 ? static_cast<double>(preds.size()) / secs : 0.0;
    write_text(out + "/efficiency.json", fj.dump(2) + "\n");

    std::cout << "exact match " << acc << " over " << preds.size() << " examples\n";
    return 0;
}

int do_infer(const CommonOpts& common, const std::string& checkpoint, const std::string& image,
             int64_t index, const std::string& question, int max_new_tokens) {
    bcq::ModelConfig cfg = load_config(common, sibling(checkpoint, "config.json"));
    bcq::Vocab vocab = bcq::Vocab::load(sibling(checkpoint, "vocab.json"));
    bcq::ParamStore<float> ps;
    bcq::init_breezeclip(ps, cfg);
    bcq::init_fusion_decoder(ps, cfg);
    bcq::load_params(ps, checkpoint);

    bcq::TensorArchive ar = bcq::TensorArchive::load(image);
    char name[32];
    std::snprintf(name, sizeof(name), "image/%06zu", static_cast<size_t>(index));
    if (!ar.has(name)) throw bcq::LookupError(std::string("no image entry ") + name);
    bcq::Tensor<float> raw = ar.get_f32(name);
    std::vector<uint8_t> bytes(static_cast<size_t>(raw.numel()));
    for (int64_t k = 0; k < raw.numel(); ++k)
        bytes[static_cast<size_t>(k)] = static_cast<uint8_t>(raw[k]);
    bcq::Tensor<float> chw = bcq::preprocess_image(bytes, raw.dim(0), raw.dim(1), cfg);

    int steps = max_new_tokens > 0 ? max_new_tokens : cfg.max_new_tokens;
    std::cout << bcq::generate_answer(ps, cfg, vocab, chw, question, steps) << "\n";
    return 0;
}

int do_flops(const CommonOpts& common, const std::string& out) {
    bcq::ModelConfig cfg = load_config(common);
    bcq::FlopBreakdown a = bcq::analytic_flops(cfg);
    bcq::FlopBreakdown m = bcq::measured_flops(cfg);
    std::cout << bcq::flops_json(a, m);
    if (!out.empty()) {
        fs::create_directories(out);
        bcq::save_flops_json(a, m, out + "/flops.json");
    }
    return a.text_encoder == m.text_encoder && a.image_encoder == m.image_encoder &&
                   a.qgcam == m.qgcam && a.decoder == m.decoder
               ? 0
               : 1;
}

int do_pca_export(const CommonOpts& common, const std::string& data,
                  const std::string& checkpoint, const std::string& out) {
    bcq::ModelConfig cfg = load_config(common, sibling(checkpoint, "config.json"));
    bcq::SynthDataset ds = bcq::load_dataset(data);
    bcq::Vocab vocab = bcq::Vocab::load(sibling(checkpoint, "vocab.json"));
    bcq::TrainSetup setup = bcq::prepare(cfg, ds, vocab);
    bcq::TensorArchive ar = bcq::TensorArchive::load(checkpoint);
    bcq::ParamStore<float> ps;
    init_model_for(ar, ps, cfg);
    bcq::load_params(ps, checkpoint);

    bcq::Embeds emb = bcq::embed_dataset(ps, cfg, setup);
    int64_t M = emb.img.dim(0), d = emb.img.dim(1);
    auto normalise = [d](bcq::Tensor<double>& t) {
        for (int64_t i = 0; i < t.dim(0); ++i) {
            double sq = 0;
            for (int64_t c = 0; c < d; ++c) sq += t[i * d + c] * t[i * d + c];
            double inv = sq > 0 ? 1.0 / std::sqrt(sq) : 0.0;
            for (int64_t c = 0; c < d; ++c) t[i * d + c] *= inv;
        }
    };
    bcq::Tensor<double> imgd = emb.img.cast<double>();
    bcq::Tensor<double> txtd = emb.txt.cast<double>();
    normalise(imgd);
    normalise(txtd);

    bcq::Tensor<double> fit_rows({2 * M, d});
    std::copy(imgd.v.begin(), imgd.v.end(), fit_rows.v.begin());
    std::copy(txtd.v.begin(), txtd.v.end(), fit_rows.v.begin() + M * d);
    bcq::Pca3 fit = bcq::pca3(fit_rows);

    bcq::Tensor<double> mis({M, d});
    for (int64_t i = 0; i < M; ++i) {
        int64_t j = (i + 1) % M;
        std::copy(txtd.v.begin() + j * d, txtd.v.begin() + (j + 1) * d, mis.v.begin() + i * d);
    }
    bcq::Tensor<double> mis_coords = bcq::pca3_project(fit, mis);

    std::vector<bcq::PcaRow> rows;
    for (int64_t i = 0; i < M; ++i)
        rows.push_back({i, "image", fit.coords[i * 3], fit.coords[i * 3 + 1],
                        fit.coords[i * 3 + 2], 1});
    for (int64_t i = 0; i < M; ++i)
        rows.push_back({i, "text", fit.coords[(M + i) * 3], fit.coords[(M + i) * 3 + 1],
                        fit.coords[(M + i) * 3 + 2], 1});
    for (int64_t i = 0; i < M; ++i)
        rows.push_back({i, "text", mis_coords[i * 3], mis_coords[i * 3 + 1],
                        mis_coords[i * 3 + 2], 0});
    fs::create_directories(out);
    bcq::save_pca_csv(rows, out + "/pca.csv");
    std::cout << "wrote " << rows.size() << " rows, explained variance " << fit.explained[0]
              << " " << fit.explained[1] << " " << fit.explained[2] << "\n";
    return 0;
}

int do_gradcheck(const std::string& component, double tolerance, const std::string& out) {
    auto reports = bcq::checks::run_component(component, tolerance);
    bool ok = true;
    for (const auto& r : reports) {
        std::cout << (r.ok() ? "pass" : "FAIL") << "  " << r.component << ": checked "
                  << r.checked << ", failed " << r.failed << ", max rel err " << r.max_rel_err
                  << "\n";
        for (const auto& f : r.failures) std::cout << "      " << f << "\n";
        ok = ok && r.ok();
    }
    if (!out.empty()) {
        fs::create_directories(out);
        write_text(out + "/gradcheck.json", bcq::gradcheck_json(reports));
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal vqa trainer"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string data, out, checkpoint, image_path, question, component = "all";
    int64_t n_scenes = 64, index = 0;
    int max_new_tokens = 0;
    double tolerance = 1e-4;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "model config json");
        sub->add_option("--seed", common.seed, "override the config seed");
    };

    CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic scene dataset");
    add_common(synth);
    synth->add_option("--n", n_scenes, "number of scenes")->check(CLI::PositiveNumber);
    synth->add_option("--out", out, "output directory")->required();

    CLI::App* pretrain = app.add_subcommand("pretrain", "stage 1: align the dual encoder");
    add_common(pretrain);
    pretrain->add_option("--data", data, "dataset directory")->required();
    pretrain->add_option("--out", out, "output directory")->required();

    CLI::App* finetune = app.add_subcommand("finetune", "stage 2: train fusion and decoder");
    add_common(finetune);
    finetune->add_option("--data", data, "dataset directory")->required();
    finetune->add_option("--checkpoint", checkpoint, "stage 1 checkpoint")->required();
    finetune->add_option("--out", out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "answer every dataset question and score");
    add_common(eval);
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--checkpoint", checkpoint, "stage 2 checkpoint")->required();
    eval->add_option("--out", out, "output directory")->required();

    CLI::App* infer = app.add_subcommand("infer", "answer one question about one image");
    add_common(infer);
    infer->add_option("--checkpoint", checkpoint, "stage 2 checkpoint")->required();
    infer->add_option("--image", image_path, "image archive (images.bcqt)")->required();
    infer->add_option("--index", index, "image index in the archive");
    infer->add_option("--question", question, "question text")->required();
    infer->add_option("--max-new-tokens", max_new_tokens, "generation budget");

    CLI::App* flops = app.add_subcommand("flops", "analytic vs instrumented flop counts");
    add_common(flops);
    flops->add_option("--out", out, "directory for flops.json");

    CLI::App* pca = app.add_subcommand("pca-export", "project embeddings to 3d for inspection");
    add_common(pca);
    pca->add_option("--data", data, "dataset directory")->required();
    pca->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    pca->add_option("--out", out, "directory for pca.csv")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gradcheck->add_option("--component", component,
                          "text_encoder|image_encoder|alignment|qgcam|decoder|pipeline|all");
    gradcheck->add_option("--tolerance", tolerance, "relative error bound");
    gradcheck->add_option("--out", out, "directory for gradcheck.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return do_synth_data(common, out, n_scenes);
        if (pretrain->parsed()) return do_pretrain(common, data, out);
        if (finetune->parsed()) return do_finetune(common, data, checkpoint, out);
        if (eval->parsed()) return do_eval(common, data, checkpoint, out);
        if (infer->parsed())
            return do_infer(common, checkpoint, image_path, index, question, max_new_tokens);
        if (flops->parsed()) return do_flops(common, out);
        if (pca->parsed()) return do_pca_export(common, data, checkpoint, out);
        if (gradcheck->parsed()) return do_gradcheck(component, tolerance, out);
    } catch (const bcq::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
