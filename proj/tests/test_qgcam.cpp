#include <doctest.h>

#include <cstring>
#include <vector>

#include "bcq/checks.hpp"
#include "bcq/qgcam.hpp"

using namespace bcq;

namespace {

bool same_bits(const Tensor<double>& a, const Tensor<double>& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

struct Setup {
    ModelConfig cfg;
    Tensor<double> img;
    Tensor<double> txt;
    std::vector<uint8_t> mask;

    explicit Setup(const std::string& variant, uint64_t data_seed = 401) {
        cfg = checks::small_cfg();
        cfg.qgcam_variant = variant;
        Rng rng(data_seed);
        img = randn<double>({2, 4, cfg.embed_dim}, rng);
        txt = randn<double>({2, 8, cfg.embed_dim}, rng);
        mask.assign(16, 1);
        mask[6] = mask[7] = mask[15] = 0;
    }
};

} // namespace

TEST_SUITE("qgcam") {

TEST_CASE("shapes and initial gate value") {
    for (const char* v : {"standard", "token_balance", "visual_query"}) {
        CAPTURE(v);
        Setup s(v);
        ParamStore<double> ps;
        qgcam::init(ps, s.cfg, s.cfg.seed);
        Tape<double> tp;
        Binder<double> b(tp, ps, false);
        auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);

        const auto& fused = tp.val(o.fused);
        const auto& adapted = tp.val(o.adapted);
        const auto& gate = tp.val(o.gate);
        CHECK(fused.shape == std::vector<int64_t>{2, 4, s.cfg.embed_dim});
        CHECK(adapted.shape == std::vector<int64_t>{2, 4, s.cfg.decoder_dim});
        CHECK(gate.shape == std::vector<int64_t>{2, 4, 1});

        // the gate head starts zeroed, so the gate opens exactly halfway
        for (double g : gate.v) CHECK(g == 0.5);

        CHECK((o.vq_attn >= 0) == (std::string(v) == "visual_query"));
    }
}

TEST_CASE("gate stays strictly inside (0, 1) once the head is nonzero") {
    Setup s("standard");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);
    Rng rng(11);
    ps["qgcam/gate2.w"] = randn<double>(ps["qgcam/gate2.w"].shape, rng, 0.5);
    ps["qgcam/gate2.b"].v[0] = 0.3;
    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);
    const auto& gate = tp.val(o.gate);
    double lo = 1.0, hi = 0.0;
    for (double g : gate.v) {
        CHECK(g > 0.0);
        CHECK(g < 1.0);
        lo = std::min(lo, g);
        hi = std::max(hi, g);
    }
    CHECK(hi > lo); // not collapsed to a constant
}

TEST_CASE("a closed gate passes the visual tokens straight through") {
    Setup s("standard");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);
    // drive the gate logit far enough negative that sigmoid underflows to 0
    ps["qgcam/gate2.b"].v[0] = -800.0;

    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);
    for (double g : tp.val(o.gate).v) CHECK(g == 0.0);

    // reference: the same store's FFN + LN applied to the raw image tokens
    Tape<double> tr;
    Binder<double> br(tr, ps, false);
    int x = tr.leaf(s.img);
    int want = layernorm_fwd(br, "qgcam/ln", tr.add(x, ffn_fwd(br, "qgcam/ffn", x)));
    CHECK(same_bits(tp.val(o.fused), tr.val(want)));
}

TEST_CASE("cross-attention rows are distributions that ignore masked text") {
    Setup s("standard");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);
    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);
    const auto& p = tp.attn_probs(o.attn);
    REQUIRE(p.shape == std::vector<int64_t>{2, s.cfg.fusion_heads, 4, 8});
    int64_t H = s.cfg.fusion_heads;
    for (int64_t bb = 0; bb < 2; ++bb)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t q = 0; q < 4; ++q) {
                double sum = 0;
                for (int64_t k = 0; k < 8; ++k) {
                    double pv = p.v[static_cast<size_t>(((bb * H + h) * 4 + q) * 8 + k)];
                    CHECK(pv >= 0.0);
                    if (!s.mask[static_cast<size_t>(bb * 8 + k)]) CHECK(pv == 0.0);
                    sum += pv;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
}

TEST_CASE("masked text content cannot leak into the fused output") {
    for (const char* v : {"standard", "token_balance", "visual_query"}) {
        CAPTURE(v);
        Setup s(v);
        ParamStore<double> ps;
        qgcam::init(ps, s.cfg, s.cfg.seed);

        Tape<double> ta;
        Binder<double> ba(ta, ps, false);
        auto oa = qgcam::forward(ba, s.cfg, ta.leaf(s.img), ta.leaf(s.txt), s.mask);

        Tensor<double> poisoned = s.txt;
        for (size_t i = 0; i < s.mask.size(); ++i)
            if (!s.mask[i])
                for (int64_t j = 0; j < s.cfg.embed_dim; ++j)
                    poisoned.v[i * static_cast<size_t>(s.cfg.embed_dim) + static_cast<size_t>(j)] =
                        1e6 + static_cast<double>(j);

        Tape<double> tb;
        Binder<double> bb(tb, ps, false);
        auto ob = qgcam::forward(bb, s.cfg, tb.leaf(s.img), tb.leaf(poisoned), s.mask);

        CHECK(same_bits(ta.val(oa.fused), tb.val(ob.fused)));
        CHECK(same_bits(ta.val(oa.adapted), tb.val(ob.adapted)));
        CHECK(same_bits(ta.val(oa.gate), tb.val(ob.gate)));
    }
}

TEST_CASE("token balancing equals pre-scaling the image tokens by hand") {
    Setup s("token_balance");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);

    Tape<double> ta;
    Binder<double> ba(ta, ps, false);
    auto o_bal = qgcam::forward(ba, s.cfg, ta.leaf(s.img), ta.leaf(s.txt), s.mask);

    // replicate the rescale, then run the plain variant on the result
    Tape<double> ts;
    int img_scale = ts.masked_mean_cols(ts.row_norms(ts.leaf(s.img)));
    int txt_scale = ts.masked_mean_cols(ts.row_norms(ts.leaf(s.txt)), s.mask);
    int scaled = ts.scale_tokens(ts.leaf(s.img), ts.div_vec(txt_scale, img_scale));
    Tensor<double> pre = ts.val(scaled);

    ModelConfig plain = s.cfg;
    plain.qgcam_variant = "standard";
    Tape<double> tb;
    Binder<double> bb(tb, ps, false);
    auto o_std = qgcam::forward(bb, plain, tb.leaf(pre), tb.leaf(s.txt), s.mask);

    CHECK(same_bits(ta.val(o_bal.fused), tb.val(o_std.fused)));
    CHECK(same_bits(ta.val(o_bal.adapted), tb.val(o_std.adapted)));
    CHECK(same_bits(ta.val(o_bal.gate), tb.val(o_std.gate)));

    // and the rescaled tokens really do match the text's mean norm
    Tape<double> tc;
    double img_mean = tc.val(tc.masked_mean_cols(tc.row_norms(tc.leaf(pre))))[0];
    double txt_mean =
        tc.val(tc.masked_mean_cols(tc.row_norms(tc.leaf(s.txt)), s.mask))[0];
    CHECK(img_mean == doctest::Approx(txt_mean).epsilon(1e-12));
}

TEST_CASE("the three variants produce distinct outputs") {
    std::vector<Tensor<double>> outs;
    for (const char* v : {"standard", "token_balance", "visual_query"}) {
        Setup s(v);
        ParamStore<double> ps;
        qgcam::init(ps, s.cfg, s.cfg.seed);
        Tape<double> tp;
        Binder<double> b(tp, ps, false);
        auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);
        outs.push_back(tp.val(o.adapted));
    }
    CHECK(!same_bits(outs[0], outs[1]));
    CHECK(!same_bits(outs[0], outs[2]));
    CHECK(!same_bits(outs[1], outs[2]));
}

TEST_CASE("visual query attends over fused and text tokens jointly") {
    Setup s("visual_query");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);
    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    auto o = qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), s.mask);
    REQUIRE(o.vq_attn >= 0);
    const auto& p = tp.attn_probs(o.vq_attn);
    // keys are [4 fused ; 8 text] per item
    CHECK(p.shape == std::vector<int64_t>{2, s.cfg.fusion_heads, 4, 12});
    int64_t H = s.cfg.fusion_heads;
    for (int64_t bb = 0; bb < 2; ++bb)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t q = 0; q < 4; ++q)
                for (int64_t k = 0; k < 8; ++k)
                    if (!s.mask[static_cast<size_t>(bb * 8 + k)])
                        CHECK(p.v[static_cast<size_t>(((bb * H + h) * 4 + q) * 12 + 4 + k)] ==
                              0.0);
}

TEST_CASE("bad input shapes are rejected") {
    Setup s("standard");
    ParamStore<double> ps;
    qgcam::init(ps, s.cfg, s.cfg.seed);
    Tape<double> tp;
    Binder<double> b(tp, ps, false);
    Rng rng(1);
    Tensor<double> bad_img = randn<double>({2, 4, s.cfg.embed_dim + 1}, rng);
    CHECK_THROWS_AS(qgcam::forward(b, s.cfg, tp.leaf(bad_img), tp.leaf(s.txt), s.mask),
                    ShapeError);
    std::vector<uint8_t> short_mask(8, 1);
    CHECK_THROWS_AS(qgcam::forward(b, s.cfg, tp.leaf(s.img), tp.leaf(s.txt), short_mask),
                    ShapeError);
}

TEST_CASE("analytic gradients match finite differences") {
    auto report = checks::qgcam_check("standard", 1e-4);
    INFO("max rel err ", report.max_rel_err, ", failed ", report.failed, "/", report.checked);
    CHECK(report.ok());
    CHECK(report.checked > 100);
}

TEST_CASE("the gradient checker catches a corrupted gradient") {
    auto report = checks::qgcam_check("standard", 1e-4, "qgcam/gate1.w", 1.0);
    CHECK(!report.ok());
    CHECK(report.failed > 0);
}

} // TEST_SUITE
