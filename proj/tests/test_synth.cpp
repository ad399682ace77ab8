#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "omniseg/image_io.hpp"
#include "omniseg/rng.hpp"
#include "omniseg/synth.hpp"

using namespace omniseg;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
    SynthSpec s;
    s.image_side_40x = 768;  // enough room for the shape families in tests
    s.cap_count = 1;
    s.pt_count = 3;
    s.dt_count = 3;
    s.ves_count = 1;
    s.ptc_count = 15;
    s.cap_radius = {80.0, 110.0};
    s.ves_major = {40.0, 60.0};
    return s;
}

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // FNV-1a, enough to compare trees.
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return std::to_string(h) + ":" + std::to_string(data.size());
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_digest(e.path());
    return out;
}

// Mean connected-component area via flood fill.
double mean_component_area(const Mask& m) {
    Mask seen(m.w, m.h);
    std::vector<std::pair<int, int>> stack;
    double total = 0;
    int comps = 0;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x) || seen.at(y, x)) continue;
            ++comps;
            size_t area = 0;
            stack.push_back({y, x});
            seen.at(y, x) = 1;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                ++area;
                const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || nx < 0 || ny >= m.h || nx >= m.w) continue;
                    if (!m.at(ny, nx) || seen.at(ny, nx)) continue;
                    seen.at(ny, nx) = 1;
                    stack.push_back({ny, nx});
                }
            }
            total += static_cast<double>(area);
        }
    return comps ? total / comps : 0.0;
}

}  // namespace

TEST_CASE("generate_image is deterministic and produces all six masks") {
    const SynthSpec spec = small_spec();
    const SynthImage a = generate_image(spec, 123);
    const SynthImage b = generate_image(spec, 123);
    CHECK(a.image.v == b.image.v);
    for (Tissue t : all_tissues()) {
        REQUIRE(a.masks.count(t) == 1);
        CHECK(a.masks.at(t).v == b.masks.at(t).v);
    }
    const SynthImage c = generate_image(spec, 124);
    CHECK(a.image.v != c.image.v);
}

TEST_CASE("zero counts give blank structures") {
    SynthSpec spec = small_spec();
    spec.cap_count = spec.pt_count = spec.dt_count = spec.ves_count = spec.ptc_count = 0;
    spec.noise_sigma = 0.0;
    const SynthImage img = generate_image(spec, 5);
    for (Tissue t : all_tissues()) CHECK(img.masks.at(t).area() == 0);
    // Uniform background.
    const uint8_t r0 = img.image.at(0, 0, 0);
    for (int y = 0; y < img.image.h; y += 37)
        for (int x = 0; x < img.image.w; x += 41) CHECK(img.image.at(y, x, 0) == r0);
}

TEST_CASE("scale heterogeneity: CAP area / PTC area >= 64 on average") {
    SynthSpec spec;
    spec.image_side_40x = 2048;
    const SynthImage img = generate_image(spec, 42);
    const double cap_area = mean_component_area(img.masks.at(Tissue::CAP));
    const double ptc_area = mean_component_area(img.masks.at(Tissue::PTC));
    REQUIRE(ptc_area > 0);
    CHECK(cap_area / ptc_area >= 64.0);
    // TUFT sits inside CAP.
    const Mask& cap = img.masks.at(Tissue::CAP);
    const Mask& tuft = img.masks.at(Tissue::TUFT);
    for (size_t i = 0; i < cap.v.size(); ++i)
        if (tuft.v[i]) REQUIRE(cap.v[i]);
}

TEST_CASE("overcrowded spec fails placement after bounded retries") {
    SynthSpec spec = small_spec();
    spec.image_side_40x = 400;
    spec.cap_count = 12;  // cannot fit twelve 90-120px-radius disks in 400px
    spec.placement_retries = 50;
    CHECK_THROWS_AS(generate_image(spec, 9), std::runtime_error);
}

TEST_CASE("split_dataset ratios and determinism") {
    const auto ten = split_dataset(10, {6, 1, 3}, 7);
    int train = 0, val = 0, test = 0;
    for (const auto& s : ten) {
        train += s == "train";
        val += s == "val";
        test += s == "test";
    }
    CHECK(train == 6);
    CHECK(val == 1);
    CHECK(test == 3);

    const auto twenty = split_dataset(20, {6, 1, 3}, 7);
    train = val = test = 0;
    for (const auto& s : twenty) {
        train += s == "train";
        val += s == "val";
        test += s == "test";
    }
    CHECK(train == 12);
    CHECK(val == 2);
    CHECK(test == 6);

    CHECK(split_dataset(10, {6, 1, 3}, 7) == ten);
    CHECK(split_dataset(10, {6, 1, 3}, 8) != ten);
    CHECK_THROWS_AS(split_dataset(2, {6, 1, 3}, 7), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(10, {6, 0, 3}, 7), std::invalid_argument);
}

TEST_CASE("generate_dataset: byte-identical reruns, no contamination, partial consistency") {
    const fs::path dir_a = fs::temp_directory_path() / "omniseg_synth_a";
    const fs::path dir_b = fs::temp_directory_path() / "omniseg_synth_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    SynthSpec spec = small_spec();
    const DatasetManifest ma = generate_dataset(spec, 10, 7, dir_a);
    const DatasetManifest mb = generate_dataset(spec, 10, 7, dir_b);

    CHECK(tree_digest(dir_a) == tree_digest(dir_b));

    // Pairwise-disjoint split id sets.
    std::set<std::string> train_ids, val_ids, test_ids;
    for (const auto& e : ma.images) {
        if (e.split == "train") train_ids.insert(e.id);
        if (e.split == "val") val_ids.insert(e.id);
        if (e.split == "test") test_ids.insert(e.id);
    }
    CHECK(train_ids.size() == 6);
    CHECK(val_ids.size() == 1);
    CHECK(test_ids.size() == 3);
    for (const auto& id : train_ids) {
        CHECK(val_ids.count(id) == 0);
        CHECK(test_ids.count(id) == 0);
    }

    // The training split covers every class exactly once (round-robin).
    std::set<Tissue> train_classes;
    for (const auto& e : ma.images)
        if (e.split == "train") train_classes.insert(e.labeled);
    CHECK(train_classes.size() == 6);

    // Manifest round trip.
    const DatasetManifest loaded = load_manifest(dir_a);
    REQUIRE(loaded.images.size() == ma.images.size());
    for (size_t i = 0; i < loaded.images.size(); ++i) {
        CHECK(loaded.images[i].id == ma.images[i].id);
        CHECK(loaded.images[i].split == ma.images[i].split);
        CHECK(loaded.images[i].labeled == ma.images[i].labeled);
    }

    // Dense masks on disk are lossless: regenerating image 0 from its seed
    // substream reproduces exactly what was stored, and the partial label is
    // by construction the dense mask of the assigned class.
    const SynthImage regen = generate_image(spec, substream(7, 0));
    const auto& entry0 = ma.images[0];
    for (Tissue t : all_tissues()) {
        const Mask stored = read_mask_png(ma.mask_path(entry0, t));
        REQUIRE(stored == regen.masks.at(t));
    }

    fs::remove_all(dir_b);
}
