#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "omniseg/task_model.hpp"

using namespace omniseg;

TEST_CASE("class one-hot encoding") {
    const auto dt = encode_class(Tissue::DT);
    CHECK(dt == std::array<double, 6>{0, 0, 0, 1, 0, 0});
    const auto cap = encode_class(Tissue::CAP);
    CHECK(cap == std::array<double, 6>{1, 0, 0, 0, 0, 0});

    std::array<double, 6> sum{};
    for (Tissue t : all_tissues()) {
        const auto v = encode_class(t);
        double total = 0;
        int nonzero = 0;
        for (size_t i = 0; i < v.size(); ++i) {
            total += v[i];
            if (v[i] != 0.0) ++nonzero;
            sum[i] += v[i];
        }
        CHECK(total == 1.0);
        CHECK(nonzero == 1);
    }
    CHECK(sum == std::array<double, 6>{1, 1, 1, 1, 1, 1});
}

TEST_CASE("scale one-hot encoding") {
    CHECK(encode_scale(Mag::X10) == std::array<double, 4>{0, 1, 0, 0});
    CHECK(encode_scale(Mag::X40) == std::array<double, 4>{0, 0, 0, 1});
    std::array<double, 4> sum{};
    for (Mag m : all_mags())
        for (size_t i = 0; i < 4; ++i) sum[i] += encode_scale(m)[i];
    CHECK(sum == std::array<double, 4>{1, 1, 1, 1});
}

TEST_CASE("one-hot orthogonality") {
    for (Tissue a : all_tissues())
        for (Tissue b : all_tissues()) {
            double dot = 0;
            const auto va = encode_class(a), vb = encode_class(b);
            for (size_t i = 0; i < va.size(); ++i) dot += va[i] * vb[i];
            CHECK(dot == (a == b ? 1.0 : 0.0));
        }
}

TEST_CASE("optimal scale table") {
    CHECK(optimal_scale(Tissue::PTC) == Mag::X40);
    CHECK(optimal_scale(Tissue::TUFT) == Mag::X5);
    CHECK(optimal_scale(Tissue::PT) == Mag::X10);
    CHECK(optimal_scale(Tissue::DT) == Mag::X10);
    CHECK(optimal_scale(Tissue::CAP) == Mag::X5);
    CHECK(optimal_scale(Tissue::VES) == Mag::X10);
    // Stable across calls.
    for (Tissue t : all_tissues()) CHECK(optimal_scale(t) == optimal_scale(t));
}

TEST_CASE("pixel sizes double per halving") {
    CHECK(pixel_size_um(Mag::X40) == 0.25);
    CHECK(pixel_size_um(Mag::X20) == 0.5);
    CHECK(pixel_size_um(Mag::X10) == 1.0);
    CHECK(pixel_size_um(Mag::X5) == 2.0);
    CHECK(patch_side_40x(Mag::X40) == 256);
    CHECK(patch_side_40x(Mag::X10) == 1024);
    CHECK(patch_side_40x(Mag::X5) == 2048);
}

TEST_CASE("string round trip") {
    for (Tissue t : all_tissues()) CHECK(tissue_from_string(to_string(t)) == t);
    for (Mag m : all_mags()) CHECK(mag_from_string(to_string(m)) == m);
    CHECK(!tissue_from_string("glom").has_value());
    CHECK(!mag_from_string("80x").has_value());
    CHECK(canonical_class_order() ==
          std::array<std::string, 6>{"cap", "tuft", "pt", "dt", "ptc", "ves"});
    CHECK(canonical_scale_order() == std::array<std::string, 4>{"5x", "10x", "20x", "40x"});
}
