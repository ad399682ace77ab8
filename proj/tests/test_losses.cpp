#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "omniseg/losses.hpp"

using namespace omniseg;
using testutil::fill_uniform;

namespace {

// Direct-summation dice oracle.
double dice_oracle(const std::vector<double>& p, const std::vector<uint8_t>& t) {
    double spt = 0, sp = 0, st = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        spt += p[i] * (t[i] ? 1.0 : 0.0);
        sp += p[i];
        st += t[i] ? 1.0 : 0.0;
    }
    return 1.0 - (2.0 * spt + 1e-5) / (sp + st + 1e-5);
}

// Per-pixel softmax/log oracle for the cross entropy.
double ce_oracle(const std::vector<double>& logits, const std::vector<uint8_t>& t, size_t hw) {
    double total = 0;
    for (size_t i = 0; i < hw; ++i) {
        const double z0 = logits[i], z1 = logits[hw + i];
        const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
        const double p1 = 1.0 - p0;
        total -= std::log(t[i] ? p1 : p0);
    }
    return total / static_cast<double>(hw);
}

}  // namespace

TEST_CASE("dice loss examples") {
    // probs == target (binary): ~0 within the epsilon effect.
    std::vector<double> p{1, 0, 1, 0};
    std::vector<uint8_t> t{1, 0, 1, 0};
    CHECK(dice_loss<double>(p, t) == doctest::Approx(0.0).epsilon(1e-4));

    // probs all 1, target all 0: ~1.
    std::vector<double> ones(16, 1.0);
    std::vector<uint8_t> zeros(16, 0);
    CHECK(dice_loss<double>(ones, zeros) == doctest::Approx(1.0).epsilon(1e-4));

    // probs all 0.5, target all 1 on 2x2: 1 - (2*2+eps)/(2+4+eps) ~ 1/3.
    std::vector<double> halves(4, 0.5);
    std::vector<uint8_t> onest(4, 1);
    const double expected = 1.0 - (2.0 * 2.0 + 1e-5) / (2.0 + 4.0 + 1e-5);
    CHECK(dice_loss<double>(halves, onest) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(1.0 / 3.0).epsilon(1e-3));

    // Against the direct-summation oracle on random inputs.
    auto r = testutil::rng(60);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> probs(64);
        std::vector<uint8_t> target(64);
        fill_uniform(probs, r, 0.0, 1.0);
        for (auto& v : target) v = std::bernoulli_distribution(0.5)(r) ? 1 : 0;
        CHECK(dice_loss<double>(probs, target) ==
              doctest::Approx(dice_oracle(probs, target)).epsilon(1e-12));
    }

    std::vector<double> wrong(3);
    std::vector<uint8_t> t4(4);
    CHECK_THROWS_AS(dice_loss<double>(wrong, t4), std::invalid_argument);
}

TEST_CASE("cross entropy examples") {
    const size_t hw = 4;
    // Strongly correct logits -> ~0.
    std::vector<double> good(8);
    std::vector<uint8_t> t{1, 0, 1, 1};
    for (size_t i = 0; i < hw; ++i) {
        good[i] = t[i] ? -10.0 : 10.0;      // background channel
        good[hw + i] = t[i] ? 10.0 : -10.0; // foreground channel
    }
    CHECK(cross_entropy_loss(good.data(), t.data(), hw) < 1e-4);

    // Equal logits -> ln 2 per pixel.
    std::vector<double> equal(8, 0.7);
    CHECK(cross_entropy_loss(equal.data(), t.data(), hw) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Random case vs per-pixel oracle.
    auto r = testutil::rng(61);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(2 * 9);
        std::vector<uint8_t> target(9);
        fill_uniform(logits, r, -3.0, 3.0);
        for (auto& v : target) v = std::bernoulli_distribution(0.5)(r) ? 1 : 0;
        CHECK(cross_entropy_loss(logits.data(), target.data(), 9) ==
              doctest::Approx(ce_oracle(logits, target, 9)).epsilon(1e-10));
    }
}

TEST_CASE("consistency loss: equality, closed form, scaling invariance at equality") {
    const size_t hw = 4;
    std::vector<double> a(2 * hw), b(2 * hw);
    auto r = testutil::rng(62);
    fill_uniform(a, r, -2.0, 2.0);
    b = a;
    const ConsistencyLoss eq = consistency_loss(a.data(), b.data(), hw, 1.0, 1.0);
    CHECK(eq.kl == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(eq.mse == doctest::Approx(0.0).epsilon(1e-15));

    // Doubling both logit maps identically: still equal, still zero.
    std::vector<double> a2 = a, b2 = a;
    for (auto& v : a2) v *= 2.0;
    for (auto& v : b2) v *= 2.0;
    const ConsistencyLoss eq2 = consistency_loss(a2.data(), b2.data(), hw, 1.0, 1.0);
    CHECK(eq2.kl == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(eq2.mse == doctest::Approx(0.0).epsilon(1e-15));

    // pred_a uniform, pred_b one-sided (+10/-10): closed form for 2-class KL.
    std::vector<double> ua(2 * hw, 0.0);           // uniform
    std::vector<double> ob(2 * hw);
    for (size_t i = 0; i < hw; ++i) {
        ob[i] = -10.0;
        ob[hw + i] = 10.0;
    }
    const ConsistencyLoss kl = consistency_loss(ua.data(), ob.data(), hw, 1.0, 0.0);
    const double pb1 = 1.0 / (1.0 + std::exp(-20.0));
    const double pb0 = 1.0 / (1.0 + std::exp(20.0));  // avoids 1 - pb1 cancellation
    const double expected = 0.5 * std::log(0.5 / pb0) + 0.5 * std::log(0.5 / pb1);
    CHECK(kl.kl == doctest::Approx(expected).epsilon(1e-9));
    // The ln 2 entropy term dominates the finite side of the closed form.
    CHECK(expected > std::log(2.0));
}

TEST_CASE("dice+ce gradient matches finite differences on a 4x4 patch") {
    auto r = testutil::rng(63);
    const size_t hw = 16;
    std::vector<double> logits(2 * hw);
    std::vector<uint8_t> target(hw);
    fill_uniform(logits, r, -1.5, 1.5);
    for (auto& v : target) v = std::bernoulli_distribution(0.4)(r) ? 1 : 0;

    const double w_dice = 1.0, w_ce = 1.0;
    std::vector<double> grad(2 * hw, 0.0);
    dice_ce_loss(logits.data(), target.data(), hw, w_dice, w_ce, grad.data(), 1.0);

    auto loss = [&]() {
        const SupervisedLoss l = dice_ce_loss<double>(logits.data(), target.data(), hw, w_dice, w_ce);
        return w_dice * l.dice + w_ce * l.ce;
    };
    const double worst = testutil::check_gradient(loss, logits, grad, r, 32, 1e-6);
    CHECK(worst < 1e-7);
}

TEST_CASE("consistency gradient matches finite differences and leaves the target branch") {
    auto r = testutil::rng(64);
    const size_t hw = 16;
    std::vector<double> a(2 * hw), b(2 * hw);
    fill_uniform(a, r, -1.0, 1.0);
    fill_uniform(b, r, -1.0, 1.0);

    std::vector<double> grad(2 * hw, 0.0);
    consistency_loss(a.data(), b.data(), hw, 0.5, 0.5, grad.data(), 1.0);

    auto loss = [&]() {
        const ConsistencyLoss l = consistency_loss<double>(a.data(), b.data(), hw, 0.5, 0.5);
        return 0.5 * l.kl + 0.5 * l.mse;
    };
    const double worst = testutil::check_gradient(loss, a, grad, r, 32, 1e-6);
    CHECK(worst < 1e-7);
}
