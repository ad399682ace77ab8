#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include <numeric>

#include "omniseg/fusion.hpp"
#include "omniseg/model.hpp"

using namespace omniseg;
using testutil::fill_uniform;
using testutil::rel_err;

namespace {

// Brute-force three-nested-loop fusion oracle.
template <class T>
std::vector<T> fuse_oracle(const std::vector<T>& a, const std::vector<T>& b,
                           const std::vector<T>& c) {
    std::vector<T> out(a.size() * b.size() * c.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j)
            for (size_t k = 0; k < c.size(); ++k)
                out[(i * b.size() + j) * c.size() + k] = a[i] * b[j] * c[k];
    return out;
}

// Per-pixel nested-loop dynamic-head oracle: three 1x1 convs with ReLU after
// the first two.
template <class T>
Tensor<T> head_oracle(const Tensor<T>& m, const std::vector<DynamicHeadParams<T>>& params) {
    Tensor<T> out(m.n, 2, m.h, m.w);
    for (int n = 0; n < m.n; ++n) {
        const auto& p = params[static_cast<size_t>(n)];
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                double x1[8], x2[8];
                for (int j = 0; j < 8; ++j) {
                    double s = p.b1[static_cast<size_t>(j)];
                    for (int i = 0; i < 8; ++i) s += p.w1[static_cast<size_t>(j * 8 + i)] * m.at(n, i, y, x);
                    x1[j] = s > 0 ? s : 0;
                }
                for (int j = 0; j < 8; ++j) {
                    double s = p.b2[static_cast<size_t>(j)];
                    for (int i = 0; i < 8; ++i) s += p.w2[static_cast<size_t>(j * 8 + i)] * x1[i];
                    x2[j] = s > 0 ? s : 0;
                }
                for (int k = 0; k < 2; ++k) {
                    double s = p.b3[static_cast<size_t>(k)];
                    for (int i = 0; i < 8; ++i) s += p.w3[static_cast<size_t>(k * 8 + i)] * x2[i];
                    out.at(n, k, y, x) = static_cast<T>(s);
                }
            }
    }
    return out;
}

}  // namespace

TEST_CASE("expand_scale_vector tiling") {
    const std::vector<double> s{0, 1, 0, 0};
    const auto out = expand_scale_vector<double>(s, 16);
    REQUIRE(out.size() == 64);
    for (int i = 0; i < 64; ++i) CHECK(out[static_cast<size_t>(i)] == ((i >= 16 && i < 32) ? 1.0 : 0.0));

    const std::vector<double> zero{0, 0, 0, 0};
    for (double v : expand_scale_vector<double>(zero, 16)) CHECK(v == 0.0);
    const std::vector<double> ones{1, 1, 1, 1};
    for (double v : expand_scale_vector<double>(ones, 16)) CHECK(v == 1.0);
}

TEST_CASE("triple outer fuse: reduced-length demo") {
    const std::vector<double> a{1, 2}, b{3}, c{4, 5};
    const auto out = triple_outer_fuse<double>(a, b, c);
    CHECK(out == std::vector<double>{12, 15, 24, 30});
}

TEST_CASE("triple outer fuse: unit vectors hit the flat index formula") {
    std::vector<double> a(256, 0.0), b(6, 0.0), c(64, 0.0);
    a[2] = 1.0;
    b[1] = 1.0;
    c[7] = 1.0;
    const auto out = triple_outer_fuse<double>(a, b, c);
    REQUIRE(out.size() == 98304);
    for (size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == (i == (2 * 6 + 1) * 64 + 7 ? 1.0 : 0.0));
}

TEST_CASE("triple outer fuse equals the nested-loop oracle exactly") {
    auto r = testutil::rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> a(256), b(6), c(64);
        fill_uniform(a, r);
        fill_uniform(b, r);
        fill_uniform(c, r);
        const auto got = triple_outer_fuse<double>(a, b, c);
        const auto want = fuse_oracle(a, b, c);
        REQUIRE(got == want);  // bit-exact: same multiplication order
    }
}

TEST_CASE("triple outer fuse is bilinear in each argument") {
    auto r = testutil::rng(32);
    std::vector<double> a1(8), a2(8), b(4), c(4);
    fill_uniform(a1, r);
    fill_uniform(a2, r);
    fill_uniform(b, r);
    fill_uniform(c, r);
    const double alpha = 0.7, beta = -1.3;
    std::vector<double> mix(8);
    for (size_t i = 0; i < 8; ++i) mix[i] = alpha * a1[i] + beta * a2[i];
    const auto f_mix = triple_outer_fuse<double>(mix, b, c);
    const auto f1 = triple_outer_fuse<double>(a1, b, c);
    const auto f2 = triple_outer_fuse<double>(a2, b, c);
    for (size_t i = 0; i < f_mix.size(); ++i)
        CHECK(f_mix[i] == doctest::Approx(alpha * f1[i] + beta * f2[i]).epsilon(1e-12));
}

TEST_CASE("controller: affine map basics and dense matvec oracle") {
    FusionConfig cfg = FusionConfig::reduced();  // gap 32, expand 8 -> fused 6144
    Controller<double> ctl(cfg);
    auto r = testutil::rng(33);
    ctl.init(r);

    // Zero input -> bias.
    std::vector<double> zero(static_cast<size_t>(cfg.fused_dim()), 0.0);
    fill_uniform(ctl.bias(), r, -0.5, 0.5);
    const auto at_zero = ctl.forward_dense(zero);
    for (int i = 0; i < kHeadParamCount; ++i)
        CHECK(at_zero[static_cast<size_t>(i)] == ctl.bias()[static_cast<size_t>(i)]);

    // Zero weights and bias -> zero output.
    Controller<double> ctl0(cfg);
    std::vector<double> fused(static_cast<size_t>(cfg.fused_dim()));
    fill_uniform(fused, r);
    for (double v : ctl0.forward_dense(fused)) CHECK(v == 0.0);

    // Dense matvec oracle.
    const auto out = ctl.forward_dense(fused);
    for (int row = 0; row < kHeadParamCount; ++row) {
        double s = ctl.bias()[static_cast<size_t>(row)];
        for (int i = 0; i < cfg.fused_dim(); ++i)
            s += ctl.weights()[static_cast<size_t>(row) * cfg.fused_dim() + i] * fused[static_cast<size_t>(i)];
        REQUIRE(rel_err(out[static_cast<size_t>(row)], s) < 1e-12);
    }
}

TEST_CASE("controller weight-shape mismatch is rejected") {
    Controller<double> ctl(FusionConfig::reduced());
    std::vector<double> wrong(17, 0.0);
    CHECK_THROWS_AS(ctl.forward_dense(wrong), std::invalid_argument);
}

TEST_CASE("structured one-hot path equals the dense path") {
    FusionConfig cfg;  // full geometry 256/6/64
    Controller<double> ctl(cfg);
    auto r = testutil::rng(34);
    ctl.init(r);
    std::vector<double> gap(256);
    fill_uniform(gap, r);
    for (int cls = 0; cls < 6; ++cls) {
        for (int scl = 0; scl < 4; ++scl) {
            std::vector<double> s4(4, 0.0);
            s4[static_cast<size_t>(scl)] = 1.0;
            const auto s64 = expand_scale_vector<double>(s4, 16);
            std::vector<double> cls_vec(6, 0.0);
            cls_vec[static_cast<size_t>(cls)] = 1.0;
            const auto fused = triple_outer_fuse<double>(gap, cls_vec, s64);
            const auto dense = ctl.forward_dense(fused);
            const auto fast = ctl.forward_fused(gap, cls, s64);
            for (int i = 0; i < kHeadParamCount; ++i)
                REQUIRE(rel_err(dense[static_cast<size_t>(i)], fast[static_cast<size_t>(i)]) < 1e-9);
        }
    }
    // Non-one-hot scale vector (the SC-off constant) also matches.
    std::vector<double> s4(4, 0.25);
    const auto s64 = expand_scale_vector<double>(s4, 16);
    std::vector<double> cls_vec(6, 0.0);
    cls_vec[2] = 1.0;
    const auto dense = ctl.forward_dense(triple_outer_fuse<double>(gap, cls_vec, s64));
    const auto fast = ctl.forward_fused(gap, 2, s64);
    for (int i = 0; i < kHeadParamCount; ++i)
        CHECK(rel_err(dense[static_cast<size_t>(i)], fast[static_cast<size_t>(i)]) < 1e-9);
}

TEST_CASE("one-hot fused vector has at most 256*16 nonzeros") {
    auto r = testutil::rng(35);
    std::vector<double> gap(256), cls(6, 0.0), s4(4, 0.0);
    fill_uniform(gap, r, 0.5, 1.0);
    cls[3] = 1.0;
    s4[1] = 1.0;
    const auto fused =
        triple_outer_fuse<double>(gap, cls, expand_scale_vector<double>(s4, 16));
    size_t nz = 0;
    for (double v : fused) nz += v != 0.0;
    CHECK(nz <= 256 * 16);
    CHECK(nz == 256 * 16);  // random gap has no zeros
}

TEST_CASE("slice_head_params: slicing arithmetic and round trip") {
    std::vector<double> omega(162);
    std::iota(omega.begin(), omega.end(), 0.0);
    const auto p = slice_head_params<double>(omega);
    CHECK(p.w1[0] == 0.0);
    CHECK(p.b1[0] == 64.0);
    CHECK(p.w2[0] == 72.0);
    CHECK(p.b2[0] == 136.0);
    CHECK(p.w3[0] == 144.0);
    CHECK(p.b3 == std::array<double, 2>{160.0, 161.0});

    const auto back = concat_head_params(p);
    for (int i = 0; i < 162; ++i) CHECK(back[static_cast<size_t>(i)] == omega[static_cast<size_t>(i)]);

    int total = 0;
    for (int s : kHeadSliceSizes) total += s;
    CHECK(total == 162);

    std::vector<double> wrong(161);
    CHECK_THROWS_AS(slice_head_params<double>(wrong), std::invalid_argument);
}

TEST_CASE("dynamic head: affine at zero and identity composition") {
    Tensor<double> m(1, 8, 4, 4);
    DynamicHeadParams<double> p{};
    p.b3 = {0.3, -0.3};
    const Tensor<double> logits = dynamic_head_forward(m, {p});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(logits.at(0, 0, y, x) == doctest::Approx(0.3));
            CHECK(logits.at(0, 1, y, x) == doctest::Approx(-0.3));
        }

    // w1 = w2 = identity, nonnegative input: logits = w3 * m + b3.
    auto r = testutil::rng(36);
    Tensor<double> mp(1, 8, 3, 3);
    fill_uniform(mp, r, 0.0, 1.0);
    DynamicHeadParams<double> q{};
    for (int i = 0; i < 8; ++i) {
        q.w1[static_cast<size_t>(i * 8 + i)] = 1.0;
        q.w2[static_cast<size_t>(i * 8 + i)] = 1.0;
    }
    for (auto& v : q.w3) v = std::uniform_real_distribution<double>(-1, 1)(r);
    q.b3 = {0.1, 0.2};
    const Tensor<double> out = dynamic_head_forward(mp, {q});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            for (int k = 0; k < 2; ++k) {
                double s = q.b3[static_cast<size_t>(k)];
                for (int i = 0; i < 8; ++i) s += q.w3[static_cast<size_t>(k * 8 + i)] * mp.at(0, i, y, x);
                REQUIRE(rel_err(out.at(0, k, y, x), s) < 1e-12);
            }
}

TEST_CASE("dynamic head equals the per-pixel nested-loop oracle") {
    auto r = testutil::rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> m(2, 8, 4, 4);
        fill_uniform(m, r);
        std::vector<DynamicHeadParams<double>> params;
        for (int n = 0; n < 2; ++n) {
            std::vector<double> omega(162);
            fill_uniform(omega, r);
            params.push_back(slice_head_params<double>(omega));
        }
        const Tensor<double> got = dynamic_head_forward(m, params);
        const Tensor<double> want = head_oracle(m, params);
        for (size_t i = 0; i < got.size(); ++i) REQUIRE(rel_err(got.v[i], want.v[i]) < 1e-12);
    }
}

TEST_CASE("dynamic head input validation") {
    Tensor<double> bad(1, 7, 4, 4);
    DynamicHeadParams<double> p{};
    CHECK_THROWS_AS(dynamic_head_forward(bad, {p}), std::invalid_argument);
    Tensor<double> m(2, 8, 4, 4);
    CHECK_THROWS_AS(dynamic_head_forward(m, {p}), std::invalid_argument);  // batch mismatch
}

TEST_CASE("batched head equals explicit per-sample loop") {
    auto r = testutil::rng(38);
    Tensor<double> m(3, 8, 5, 5);
    fill_uniform(m, r);
    std::vector<DynamicHeadParams<double>> params;
    for (int n = 0; n < 3; ++n) {
        std::vector<double> omega(162);
        fill_uniform(omega, r);
        params.push_back(slice_head_params<double>(omega));
    }
    const Tensor<double> batched = dynamic_head_forward(m, params);
    for (int n = 0; n < 3; ++n) {
        const Tensor<double> single = dynamic_head_forward(m.sample(n), {params[static_cast<size_t>(n)]});
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 25; ++i)
                REQUIRE(single.plane(0, c)[i] == batched.plane(n, c)[i]);
    }
}

TEST_CASE("predict_mask: argmax with ties to background") {
    Tensor<double> logits(1, 2, 2, 2);
    // bg, fg planes
    logits.v = {0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5};
    const auto masks = predict_mask(logits);
    CHECK(masks[0].at(0, 0) == 1);  // fg 1.0 > bg 0.0
    CHECK(masks[0].at(0, 1) == 0);
    CHECK(masks[0].at(1, 0) == 0);  // tie 0.5 == 0.5 -> background
    CHECK(masks[0].at(1, 1) == 0);

    auto r = testutil::rng(39);
    Tensor<double> rnd(2, 2, 8, 8);
    fill_uniform(rnd, r);
    const auto ms = predict_mask(rnd);
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                REQUIRE(ms[static_cast<size_t>(n)].at(y, x) ==
                        (rnd.at(n, 1, y, x) > rnd.at(n, 0, y, x) ? 1 : 0));
}

TEST_CASE("controller sensitivity: class vector changes omega") {
    FusionConfig cfg = FusionConfig::reduced();
    Controller<double> ctl(cfg);
    auto r = testutil::rng(40);
    ctl.init(r);
    std::vector<double> gap(static_cast<size_t>(cfg.gap_dim));
    fill_uniform(gap, r, 0.1, 1.0);
    std::vector<double> s4(4, 0.0);
    s4[2] = 1.0;
    const auto s64 = expand_scale_vector<double>(s4, cfg.expand_factor);
    const auto w0 = ctl.forward_fused(gap, 0, s64);
    for (int cls = 1; cls < 6; ++cls) {
        const auto wk = ctl.forward_fused(gap, cls, s64);
        bool differs = false;
        for (int i = 0; i < kHeadParamCount; ++i)
            differs = differs || wk[static_cast<size_t>(i)] != w0[static_cast<size_t>(i)];
        CHECK(differs);
    }
}

TEST_CASE("controller backward (structured) matches dense backward") {
    FusionConfig cfg = FusionConfig::reduced();
    auto r = testutil::rng(41);
    Controller<double> a(cfg), b(cfg);
    a.init(r);
    b.weights() = a.weights();
    b.bias() = a.bias();

    std::vector<double> gap(static_cast<size_t>(cfg.gap_dim));
    fill_uniform(gap, r);
    const int cls = 4;
    std::vector<double> s4(4, 0.0);
    s4[1] = 1.0;
    const auto s64 = expand_scale_vector<double>(s4, cfg.expand_factor);
    std::vector<double> cls_vec(6, 0.0);
    cls_vec[cls] = 1.0;
    const auto fused = triple_outer_fuse<double>(gap, cls_vec, s64);
    std::vector<double> domega(162);
    fill_uniform(domega, r);

    const auto dgap_fast = a.backward_fused(domega, gap, cls, s64);
    const auto dfused = b.backward_dense(fused, domega);
    // dgap from dense path via the outer-product backward.
    std::vector<double> dgap(gap.size(), 0.0), db(6, 0.0), dc(s64.size(), 0.0);
    triple_outer_fuse_backward<double>(dfused, gap, cls_vec, s64, dgap, db, dc);
    for (size_t i = 0; i < gap.size(); ++i)
        CHECK(rel_err(dgap_fast[i], dgap[i]) < 1e-9);

    // Weight and bias gradients agree between the two paths.
    ParamList<double> pa, pb;
    a.collect("a", pa);
    b.collect("b", pb);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].g->size() == pb[i].g->size());
        for (size_t j = 0; j < pa[i].g->size(); ++j)
            REQUIRE((*pa[i].g)[j] == doctest::Approx((*pb[i].g)[j]).epsilon(1e-12));
    }
}

TEST_CASE("full-chain gradient: fuse -> controller -> head matches FD") {
    // Reduced geometry; double precision; loss = dice+ce-like weighted sum.
    FusionConfig cfg = FusionConfig::reduced();
    Controller<double> ctl(cfg);
    auto r = testutil::rng(42);
    ctl.init(r);

    std::vector<double> gap(static_cast<size_t>(cfg.gap_dim));
    fill_uniform(gap, r, 0.1, 0.9);
    const int cls = 2, scl = 3;
    std::vector<double> s4(4, 0.0);
    s4[static_cast<size_t>(scl)] = 1.0;
    const auto s64 = expand_scale_vector<double>(s4, cfg.expand_factor);
    Tensor<double> m(1, 8, 4, 4);
    fill_uniform(m, r);
    Tensor<double> loss_w(1, 2, 4, 4);
    auto r2 = testutil::rng(95);
    fill_uniform(loss_w, r2);

    auto loss = [&]() {
        const auto omega = ctl.forward_fused(gap, cls, s64);
        DynamicHead<double> head;
        const Tensor<double> logits =
            head.forward(m, {slice_head_params<double>(std::span<const double>(omega))}, false);
        double s = 0;
        for (size_t i = 0; i < logits.size(); ++i) s += logits.v[i] * loss_w.v[i];
        return s;
    };

    // Analytic: head backward -> domega -> controller backward.
    ParamList<double> params;
    ctl.collect("ctl", params);
    Sgd<double>::zero_grad(params);
    const auto omega = ctl.forward_fused(gap, cls, s64);
    DynamicHead<double> head;
    head.forward(m, {slice_head_params<double>(std::span<const double>(omega))}, true);
    HeadGrad<double> hg = head.backward(loss_w);
    std::vector<double> domega(hg.dparams[0].begin(), hg.dparams[0].end());
    const auto dgap = ctl.backward_fused(domega, gap, cls, s64);

    // d(loss)/d(phi): sampled coordinates of the controller weights.
    for (auto& p : params) {
        const double worst = testutil::check_gradient(loss, *p.w, *p.g, r, 16, 1e-6);
        CHECK_MESSAGE(worst < 1e-4, p.name);
    }
    // d(loss)/d(gap) through the fusion.
    std::vector<double> gap_copy = gap;
    auto loss_gap = [&]() {
        std::copy(gap_copy.begin(), gap_copy.end(), gap.begin());
        return loss();
    };
    std::vector<double> dgap_copy(dgap.begin(), dgap.end());
    CHECK(testutil::check_gradient(loss_gap, gap_copy, dgap_copy, r, 16, 1e-6) < 1e-4);
    // d(loss)/d(m) through the head.
    std::vector<double> mv(m.v.begin(), m.v.end());
    auto loss_m = [&]() {
        std::copy(mv.begin(), mv.end(), m.v.begin());
        return loss();
    };
    std::vector<double> dmv(hg.dm.v.begin(), hg.dm.v.end());
    CHECK(testutil::check_gradient(loss_m, mv, dmv, r, 16, 1e-6) < 1e-4);
}

TEST_CASE("shared features: backbone output identical across all 24 controller pairs") {
    ModelConfig cfg;
    cfg.backbone = BackboneConfig::tiny();
    OmniSegModel<float> model(cfg);
    model.init(77);
    Tensor<float> x(1, 3, 32, 32);
    auto r = testutil::rng(43);
    fill_uniform(x, r, 0.0, 1.0);

    std::vector<float> ref_bottleneck, ref_decoder;
    bool masks_differ = false;
    std::vector<Mask> first_mask;
    for (Tissue t : all_tissues())
        for (Mag mg : all_mags()) {
            ForwardResult<float> res =
                model.forward_eval(x, std::array{sample_task(t, mg)});
            if (ref_bottleneck.empty()) {
                ref_bottleneck = res.features.bottleneck.v;
                ref_decoder = res.features.decoder_out.v;
                first_mask = predict_mask(res.logits);
            } else {
                REQUIRE(res.features.bottleneck.v == ref_bottleneck);  // bit-identical
                REQUIRE(res.features.decoder_out.v == ref_decoder);
                if (!(predict_mask(res.logits)[0] == first_mask[0])) masks_differ = true;
            }
        }
    CHECK(masks_differ);  // the controllers do change the prediction
}
