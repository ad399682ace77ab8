#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "omniseg/backbone.hpp"

using namespace omniseg;
using testutil::fill_uniform;

namespace {

BackboneConfig micro_config() {
    BackboneConfig c;
    c.encoder_channels = {4, 6, 8, 10};
    c.bottleneck_channels = 12;
    c.decoder_channels = {8, 6, 4, 4};
    c.feature_channels = 16;  // projected
    return c;
}

}  // namespace

TEST_CASE("standard backbone shapes: 256 input -> 256ch bottleneck at 16, 8ch decoder") {
    Backbone<float> net(BackboneConfig::standard());
    auto r = testutil::rng(21);
    net.init(r);
    Tensor<float> x(2, 3, 256, 256);
    fill_uniform(x, r, 0.0, 1.0);
    const FeatureMaps<float> f = net.forward(x, false);
    CHECK(f.bottleneck.n == 2);
    CHECK(f.bottleneck.c == 256);
    CHECK(f.bottleneck.h == 16);
    CHECK(f.bottleneck.w == 16);
    CHECK(f.decoder_out.n == 2);
    CHECK(f.decoder_out.c == 8);
    CHECK(f.decoder_out.h == 256);
    CHECK(f.decoder_out.w == 256);
}

TEST_CASE("tiny backbone preserves the two hard channel constraints") {
    Backbone<float> net(BackboneConfig::tiny());
    auto r = testutil::rng(22);
    net.init(r);
    Tensor<float> x(1, 3, 64, 64);
    fill_uniform(x, r, 0.0, 1.0);
    const FeatureMaps<float> f = net.forward(x, false);
    CHECK(f.bottleneck.c == 256);
    CHECK(f.decoder_out.c == 8);
    CHECK(f.decoder_out.h == 64);
}

TEST_CASE("input validation") {
    Backbone<float> net(micro_config());
    auto r = testutil::rng(23);
    net.init(r);
    Tensor<float> bad_ch(1, 4, 32, 32);
    CHECK_THROWS_AS(net.forward(bad_ch, false), std::invalid_argument);
    Tensor<float> bad_size(1, 3, 24, 24);  // not divisible by 16
    CHECK_THROWS_AS(net.forward(bad_size, false), std::invalid_argument);
}

TEST_CASE("duplicated inputs give identical per-sample outputs") {
    Backbone<float> net(micro_config());
    auto r = testutil::rng(24);
    net.init(r);
    Tensor<float> one(1, 3, 32, 32);
    fill_uniform(one, r, 0.0, 1.0);
    Tensor<float> batch(3, 3, 32, 32);
    for (int n = 0; n < 3; ++n)
        std::copy(one.v.begin(), one.v.end(), batch.plane(n, 0));
    const FeatureMaps<float> f = net.forward(batch, false);
    for (int n = 1; n < 3; ++n) {
        for (int c = 0; c < f.decoder_out.c; ++c) {
            const float* a = f.decoder_out.plane(0, c);
            const float* b = f.decoder_out.plane(n, c);
            for (int i = 0; i < 32 * 32; ++i) REQUIRE(a[i] == b[i]);
        }
    }
}

TEST_CASE("batch independence: batched equals per-sample") {
    Backbone<float> net(micro_config());
    auto r = testutil::rng(25);
    net.init(r);
    Tensor<float> batch(3, 3, 32, 32);
    fill_uniform(batch, r, 0.0, 1.0);
    const FeatureMaps<float> all = net.forward(batch, false);
    for (int n = 0; n < 3; ++n) {
        const FeatureMaps<float> single = net.forward(batch.sample(n), false);
        const float* a = single.decoder_out.plane(0, 0);
        const float* b = all.decoder_out.plane(n, 0);
        const size_t count = single.decoder_out.size();
        for (size_t i = 0; i < count; ++i)
            REQUIRE(testutil::rel_err(a[i], b[i]) < 1e-5);
    }
}

TEST_CASE("zero input with zero parameters gives zero outputs") {
    Backbone<float> net(micro_config());
    ParamList<float> params;
    net.collect("bb", params);
    for (auto& p : params) std::fill(p.w->begin(), p.w->end(), 0.f);
    Tensor<float> x(1, 3, 32, 32);
    const FeatureMaps<float> f = net.forward(x, false);
    for (float v : f.bottleneck.v) CHECK(v == 0.f);
    for (float v : f.decoder_out.v) CHECK(v == 0.f);
}

TEST_CASE("GAP: constant, half-half, and brute-force oracle") {
    Tensor<double> c(1, 4, 3, 3);
    c.fill(3.5);
    const Tensor<double> g = global_average_pool(c);
    for (int ch = 0; ch < 4; ++ch) CHECK(g.at(0, ch, 0, 0) == doctest::Approx(3.5));

    Tensor<double> hh(1, 2, 2, 2);
    hh.v = {0, 2, 0, 2, 2, 0, 2, 0};
    const Tensor<double> g2 = global_average_pool(hh);
    CHECK(g2.at(0, 0, 0, 0) == doctest::Approx(1.0));
    CHECK(g2.at(0, 1, 0, 0) == doctest::Approx(1.0));

    auto r = testutil::rng(26);
    Tensor<double> x(1, 256, 4, 4);
    fill_uniform(x, r);
    const Tensor<double> g3 = global_average_pool(x);
    for (int ch = 0; ch < 256; ++ch) {
        double mean = 0;
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) mean += x.at(0, ch, y, xx);
        mean /= 16.0;
        REQUIRE(g3.at(0, ch, 0, 0) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("GAP commutes with channel permutation") {
    auto r = testutil::rng(27);
    Tensor<double> x(1, 6, 4, 4);
    fill_uniform(x, r);
    const Tensor<double> g = global_average_pool(x);
    // Reverse the channels.
    Tensor<double> xp(1, 6, 4, 4);
    for (int c = 0; c < 6; ++c)
        std::copy(x.plane(0, c), x.plane(0, c) + 16, xp.plane(0, 5 - c));
    const Tensor<double> gp = global_average_pool(xp);
    for (int c = 0; c < 6; ++c) CHECK(g.at(0, c, 0, 0) == gp.at(0, 5 - c, 0, 0));
}

TEST_CASE("backbone forward is deterministic") {
    Backbone<float> net(micro_config());
    auto r = testutil::rng(28);
    net.init(r);
    Tensor<float> x(1, 3, 32, 32);
    fill_uniform(x, r, 0.0, 1.0);
    const FeatureMaps<float> a = net.forward(x, false);
    const FeatureMaps<float> b = net.forward(x, false);
    CHECK(a.bottleneck.v == b.bottleneck.v);
    CHECK(a.decoder_out.v == b.decoder_out.v);
}

TEST_CASE("backbone backward matches finite differences on a micro net") {
    BackboneConfig cfg;
    cfg.encoder_channels = {3, 4, 5, 6};
    cfg.bottleneck_channels = 6;
    cfg.decoder_channels = {5, 4, 3, 3};
    cfg.feature_channels = 8;
    Backbone<double> net(cfg);
    auto r = testutil::rng(29);
    net.init(r);
    Tensor<double> x(1, 3, 16, 16);
    fill_uniform(x, r, 0.0, 1.0);

    FeatureMaps<double> probe = net.forward(x, false);
    Tensor<double> wf(probe.bottleneck.n, probe.bottleneck.c, probe.bottleneck.h,
                      probe.bottleneck.w);
    Tensor<double> wm(probe.decoder_out.n, probe.decoder_out.c, probe.decoder_out.h,
                      probe.decoder_out.w);
    auto r2 = testutil::rng(96);
    fill_uniform(wf, r2);
    fill_uniform(wm, r2);

    auto loss = [&]() {
        FeatureMaps<double> f = net.forward(x, false);
        double s = 0;
        for (size_t i = 0; i < f.bottleneck.size(); ++i) s += f.bottleneck.v[i] * wf.v[i];
        for (size_t i = 0; i < f.decoder_out.size(); ++i) s += f.decoder_out.v[i] * wm.v[i];
        return s;
    };

    ParamList<double> params;
    net.collect("bb", params);
    Sgd<double>::zero_grad(params);
    net.forward(x, true);
    net.backward(wf, wm);

    size_t checked = 0;
    for (auto& p : params) {
        if (p.name.find("enc0") == std::string::npos && p.name.find("final") == std::string::npos &&
            p.name.find("proj") == std::string::npos && p.name.find("dec3") == std::string::npos &&
            p.name.find("bottleneck.conv1.weight") == std::string::npos)
            continue;
        const double worst = testutil::check_gradient(loss, *p.w, *p.g, r, 6);
        CHECK_MESSAGE(worst < 5e-6, p.name);
        ++checked;
    }
    CHECK(checked >= 8);
}
