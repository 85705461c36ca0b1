#include <doctest.h>

#include <cmath>
#include <vector>

#include "bcq/alignment.hpp"
#include "bcq/checks.hpp"

using namespace bcq;

TEST_SUITE("alignment") {

TEST_CASE("a single pair has zero contrastive loss") {
    Tensor<double> img = Tensor<double>::from({1, 4}, {0.3, -1.2, 0.5, 2.0});
    Tensor<double> txt = Tensor<double>::from({1, 4}, {-0.7, 0.1, 0.9, -0.2});
    CHECK(align::contrastive_value(img, txt, 0.07, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("orthonormal pairs hit the closed form") {
    // identity similarity matrix at tau = 1:
    // each row's loss is log(1 + e^-1), four scaled terms in total
    Tensor<double> img = Tensor<double>::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor<double> txt = img;
    double want = 4.0 * std::log1p(std::exp(-1.0));
    CHECK(align::contrastive_value(img, txt, 1.0, 0.5) ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("indistinguishable pairs cost log batch size") {
    // all four similarities equal, so softmax is uniform over 2 entries
    Tensor<double> img = Tensor<double>::from({2, 3}, {1.0, 0.0, 0.0, 1.0, 0.0, 0.0});
    Tensor<double> txt = img;
    double want = 4.0 * std::log(2.0);
    CHECK(align::contrastive_value(img, txt, 0.07, 0.5) ==
          doctest::Approx(want).epsilon(1e-12));
    CHECK(align::contrastive_value(img, txt, 1.0, 0.5) ==
          doctest::Approx(want).epsilon(1e-12)); // temperature cancels when logits tie
}

TEST_CASE("contrastive loss is symmetric in the modalities") {
    Rng rng(77);
    Tensor<double> img = randn<double>({5, 8}, rng);
    Tensor<double> txt = randn<double>({5, 8}, rng);
    CHECK(align::contrastive_value(img, txt, 0.07, 0.5) ==
          align::contrastive_value(txt, img, 0.07, 0.5));
}

TEST_CASE("perfect alignment at low temperature drives the loss toward zero") {
    // orthogonal rows with assorted magnitudes
    Tensor<double> img({6, 8});
    for (int64_t r = 0; r < 6; ++r) img.v[static_cast<size_t>(r * 8 + r)] = 0.5 + 0.25 * static_cast<double>(r);
    double matched = align::contrastive_value(img, img, 0.07, 0.5);
    CHECK(matched < 1e-4);

    // rotate the pairing off the diagonal: the same rows, wrong partners
    Tensor<double> txt({6, 8});
    for (int64_t r = 0; r < 6; ++r) {
        int64_t q = (r + 1) % 6;
        txt.v[static_cast<size_t>(r * 8 + q)] = 1.0;
    }
    CHECK(align::contrastive_value(img, txt, 0.07, 0.5) > 10.0);
}

TEST_CASE("antipodal distillation oracle") {
    Tensor<double> img = Tensor<double>::from({1, 4}, {2.0, 0.0, 0.0, 0.0});
    Tensor<double> t_img = Tensor<double>::from({1, 4}, {-5.0, 0.0, 0.0, 0.0});
    // normalised rows are s and -s: mse = 4/d = 1 per modality, / beta
    CHECK(align::distill_value(img, img, t_img, t_img, 0.5) ==
          doctest::Approx(4.0).epsilon(1e-12));
    // perfectly matched teacher: zero
    CHECK(align::distill_value(img, img, img, img, 0.5) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("joint loss combines the weighted terms") {
    ModelConfig cfg = checks::tiny_pipeline_cfg();
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 1.3;
    ParamStore<double> ps;
    align::init(ps, cfg, cfg.seed);
    Rng rng(83);
    Tensor<double> img = randn<double>({3, cfg.embed_dim}, rng);
    Tensor<double> txt = randn<double>({3, cfg.embed_dim}, rng);
    Tensor<double> t_img = randn<double>({3, cfg.teacher_dim}, rng);
    Tensor<double> t_txt = randn<double>({3, cfg.teacher_dim}, rng);
    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    auto o = align::loss(b, cfg, tp.leaf(img), tp.leaf(txt), t_img, t_txt);
    double total = tp.val(o.total)[0];
    double contrast = tp.val(o.contrast)[0];
    double distill = tp.val(o.distill)[0];
    CHECK(total == doctest::Approx(0.7 * contrast + 1.3 * distill).epsilon(1e-12));
    CHECK(contrast > 0.0);
    CHECK(distill > 0.0);

    const auto& n = tp.val(o.img_norm);
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0;
        for (int64_t j = 0; j < cfg.embed_dim; ++j)
            s += n[r * cfg.embed_dim + j] * n[r * cfg.embed_dim + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("projection heads carry the expected parameter count") {
    ModelConfig cfg = checks::tiny_pipeline_cfg();
    ParamStore<double> ps;
    align::init(ps, cfg, cfg.seed);
    int64_t want = 2 * (static_cast<int64_t>(cfg.teacher_dim) * cfg.embed_dim + cfg.embed_dim);
    CHECK(ps.total_elements("align/") == want);
}

TEST_CASE("analytic gradients of the joint objective match finite differences") {
    auto report = checks::alignment_check(1e-4);
    INFO("max rel err ", report.max_rel_err, ", failed ", report.failed, "/", report.checked);
    CHECK(report.ok());
    CHECK(report.checked > 50);
}

} // TEST_SUITE
