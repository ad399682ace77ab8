#include "omniseg/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "omniseg/image_io.hpp"

namespace omniseg {

namespace {

using json = nlohmann::json;

struct Rgb {
    double r, g, b;
};

// Base palette; per-shape and per-image jitter is applied on top.
constexpr Rgb kBackground{236.0, 223.0, 229.0};
constexpr Rgb kCapsule{205.0, 175.0, 212.0};
constexpr Rgb kTuft{162.0, 124.0, 186.0};
constexpr Rgb kPt{226.0, 150.0, 128.0};
constexpr Rgb kDtWall{138.0, 168.0, 224.0};
constexpr Rgb kDtLumen{246.0, 241.0, 243.0};
constexpr Rgb kVes{172.0, 72.0, 82.0};
constexpr Rgb kPtc{118.0, 42.0, 112.0};

struct Placed {
    double cx, cy, r;
};

uint64_t substream(uint64_t seed, uint64_t idx) {
    // splitmix64 over (seed, idx)
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (idx + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool fits(const std::vector<Placed>& placed, double cx, double cy, double r, double margin) {
    for (const auto& p : placed) {
        const double dx = cx - p.cx, dy = cy - p.cy;
        const double need = r + p.r + margin;
        if (dx * dx + dy * dy < need * need) return false;
    }
    return true;
}

Placed place_shape(std::mt19937_64& rng, std::vector<Placed>& placed, int side, double r,
                   double margin, int retries) {
    for (int attempt = 0; attempt < retries; ++attempt) {
        const double cx = uniform(rng, r + 2.0, side - r - 2.0);
        const double cy = uniform(rng, r + 2.0, side - r - 2.0);
        if (fits(placed, cx, cy, r, margin)) {
            placed.push_back({cx, cy, r});
            return placed.back();
        }
    }
    throw std::runtime_error("generate_image: shape placement failed (overcrowded spec)");
}

void paint_disk(ImageU8& img, Mask* mask, double cx, double cy, double r, const Rgb& color) {
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x_hi = std::min(img.w - 1, static_cast<int>(std::ceil(cx + r)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y_hi = std::min(img.h - 1, static_cast<int>(std::ceil(cy + r)));
    const double r2 = r * r;
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy > r2) continue;
            img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(color.r, 0.0, 255.0));
            img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(color.g, 0.0, 255.0));
            img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(color.b, 0.0, 255.0));
            if (mask) mask->at(y, x) = 1;
        }
}

void paint_ellipse(ImageU8& img, Mask* mask, double cx, double cy, double a, double b,
                   double theta, const Rgb& color) {
    const double bound = std::max(a, b);
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - bound)));
    const int x_hi = std::min(img.w - 1, static_cast<int>(std::ceil(cx + bound)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - bound)));
    const int y_hi = std::min(img.h - 1, static_cast<int>(std::ceil(cy + bound)));
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = (dx * ct + dy * st) / a;
            const double v = (-dx * st + dy * ct) / b;
            if (u * u + v * v > 1.0) continue;
            img.at(y, x, 0) = static_cast<uint8_t>(std::clamp(color.r, 0.0, 255.0));
            img.at(y, x, 1) = static_cast<uint8_t>(std::clamp(color.g, 0.0, 255.0));
            img.at(y, x, 2) = static_cast<uint8_t>(std::clamp(color.b, 0.0, 255.0));
            if (mask) mask->at(y, x) = 1;
        }
}

Rgb jitter_color(std::mt19937_64& rng, const Rgb& base, double amp) {
    return {base.r + uniform(rng, -amp, amp), base.g + uniform(rng, -amp, amp),
            base.b + uniform(rng, -amp, amp)};
}

}  // namespace

SynthImage generate_image(const SynthSpec& spec, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int side = spec.image_side_40x;
    SynthImage out;
    out.image = ImageU8(side, side, 3);
    for (Tissue t : all_tissues()) out.masks.emplace(t, Mask(side, side));

    // Background with a per-image stain tint.
    const Rgb tint{uniform(rng, -spec.stain_shift, spec.stain_shift),
                   uniform(rng, -spec.stain_shift, spec.stain_shift),
                   uniform(rng, -spec.stain_shift, spec.stain_shift)};
    const Rgb bg{kBackground.r + tint.r, kBackground.g + tint.g, kBackground.b + tint.b};
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            out.image.at(y, x, 0) = static_cast<uint8_t>(std::clamp(bg.r, 0.0, 255.0));
            out.image.at(y, x, 1) = static_cast<uint8_t>(std::clamp(bg.g, 0.0, 255.0));
            out.image.at(y, x, 2) = static_cast<uint8_t>(std::clamp(bg.b, 0.0, 255.0));
        }

    std::vector<Placed> placed;
    const double jit = 8.0;

    // CAP disks with nested TUFT. The CAP mask covers the full disk; the
    // capsule annulus and the tuft interior carry different colors.
    for (int i = 0; i < spec.cap_count; ++i) {
        const double r = uniform(rng, spec.cap_radius.r_min, spec.cap_radius.r_max);
        const Placed p = place_shape(rng, placed, side, r, 12.0, spec.placement_retries);
        const Rgb cap_col = jitter_color(rng, {kCapsule.r + tint.r, kCapsule.g + tint.g,
                                               kCapsule.b + tint.b}, jit);
        const Rgb tuft_col = jitter_color(rng, {kTuft.r + tint.r, kTuft.g + tint.g,
                                                kTuft.b + tint.b}, jit);
        paint_disk(out.image, &out.masks.at(Tissue::CAP), p.cx, p.cy, r, cap_col);
        // The unit contains the tuft: painting the inner disk recolors the
        // interior but the CAP mask keeps the full disk.
        const double rt = r * spec.tuft_radius_fraction;
        paint_disk(out.image, &out.masks.at(Tissue::TUFT), p.cx, p.cy, rt, tuft_col);
    }

    // PT: filled blobs.
    for (int i = 0; i < spec.pt_count; ++i) {
        const double r = uniform(rng, spec.pt_radius.r_min, spec.pt_radius.r_max);
        const Placed p = place_shape(rng, placed, side, r, 8.0, spec.placement_retries);
        const Rgb col = jitter_color(rng, {kPt.r + tint.r, kPt.g + tint.g, kPt.b + tint.b}, jit);
        paint_disk(out.image, &out.masks.at(Tissue::PT), p.cx, p.cy, r, col);
    }

    // DT: rings (wall + near-background lumen); the mask covers the full disk.
    for (int i = 0; i < spec.dt_count; ++i) {
        const double r = uniform(rng, spec.dt_radius.r_min, spec.dt_radius.r_max);
        const Placed p = place_shape(rng, placed, side, r, 8.0, spec.placement_retries);
        const Rgb wall = jitter_color(rng, {kDtWall.r + tint.r, kDtWall.g + tint.g,
                                            kDtWall.b + tint.b}, jit);
        const Rgb lumen = jitter_color(rng, {kDtLumen.r + tint.r, kDtLumen.g + tint.g,
                                             kDtLumen.b + tint.b}, jit);
        paint_disk(out.image, &out.masks.at(Tissue::DT), p.cx, p.cy, r, wall);
        paint_disk(out.image, nullptr, p.cx, p.cy, r * 0.55, lumen);
    }

    // VES: elongated ellipses.
    for (int i = 0; i < spec.ves_count; ++i) {
        const double a = uniform(rng, spec.ves_major.r_min, spec.ves_major.r_max);
        const double b = a * uniform(rng, 0.25, 0.4);
        const double theta = uniform(rng, 0.0, 3.14159265358979323846);
        const Placed p = place_shape(rng, placed, side, a, 8.0, spec.placement_retries);
        const Rgb col = jitter_color(rng, {kVes.r + tint.r, kVes.g + tint.g, kVes.b + tint.b}, jit);
        paint_ellipse(out.image, &out.masks.at(Tissue::VES), p.cx, p.cy, a, b, theta, col);
    }

    // PTC: small dots, sub-pixel at 5x.
    for (int i = 0; i < spec.ptc_count; ++i) {
        const double r = uniform(rng, spec.ptc_radius.r_min, spec.ptc_radius.r_max);
        const Placed p = place_shape(rng, placed, side, r, 4.0, spec.placement_retries);
        const Rgb col = jitter_color(rng, {kPtc.r + tint.r, kPtc.g + tint.g, kPtc.b + tint.b}, jit);
        paint_disk(out.image, &out.masks.at(Tissue::PTC), p.cx, p.cy, r, col);
    }

    // Pixel noise last so every structure carries texture.
    if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (size_t i = 0; i < out.image.v.size(); ++i) {
            const double v = static_cast<double>(out.image.v[i]) + noise(rng);
            out.image.v[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return out;
}

std::vector<std::string> split_dataset(size_t n_images, const std::array<int, 3>& ratios,
                                       uint64_t seed) {
    if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0)
        throw std::invalid_argument("split_dataset: ratios must be positive");
    const double total = ratios[0] + ratios[1] + ratios[2];
    size_t n_train = static_cast<size_t>(std::floor(n_images * ratios[0] / total));
    size_t n_val = static_cast<size_t>(std::floor(n_images * ratios[1] / total));
    // Largest-remainder fill.
    while (n_train + n_val < n_images) {
        const double rem_train = n_images * ratios[0] / total - static_cast<double>(n_train);
        const double rem_val = n_images * ratios[1] / total - static_cast<double>(n_val);
        const size_t n_test = n_images - n_train - n_val;
        const double rem_test = n_images * ratios[2] / total - static_cast<double>(n_test);
        if (rem_test >= rem_train && rem_test >= rem_val) break;
        if (rem_train >= rem_val)
            ++n_train;
        else
            ++n_val;
    }
    const size_t n_test = n_images - n_train - n_val;
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw std::invalid_argument("split_dataset: too few images for nonempty partitions");

    std::vector<size_t> order(n_images);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(substream(seed, 0xA11CE));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::string> out(n_images);
    for (size_t i = 0; i < n_images; ++i) {
        const std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        out[order[i]] = split;
    }
    return out;
}

std::vector<Tissue> eligible_classes(const SynthSpec& spec) {
    std::vector<Tissue> out;
    for (Tissue t : all_tissues()) {
        const int count = [&] {
            switch (t) {
                case Tissue::CAP:
                case Tissue::TUFT: return spec.cap_count;
                case Tissue::PT: return spec.pt_count;
                case Tissue::DT: return spec.dt_count;
                case Tissue::PTC: return spec.ptc_count;
                case Tissue::VES: return spec.ves_count;
            }
            return 0;
        }();
        if (count > 0) out.push_back(t);
    }
    return out;
}

DatasetManifest generate_dataset(const SynthSpec& spec, int n_images, uint64_t seed,
                                 const std::filesystem::path& out_dir) {
    if (n_images < 1) throw std::invalid_argument("generate_dataset: n_images must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");

    DatasetManifest m;
    m.seed = seed;
    m.spec = spec;
    m.classes = eligible_classes(spec);
    m.root = out_dir;
    if (m.classes.empty()) m.classes.push_back(Tissue::CAP);  // degenerate blank dataset

    const auto splits = split_dataset(static_cast<size_t>(n_images), {6, 1, 3}, seed);

    // Round-robin label assignment over the present classes, within each
    // split, so the training split covers every class as evenly as possible.
    std::map<std::string, int> rr;
    std::vector<DatasetImageEntry> entries(static_cast<size_t>(n_images));
    for (const std::string& split : {std::string("train"), std::string("val"), std::string("test")})
        rr[split] = 0;
    for (int i = 0; i < n_images; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img_%03d", i);
        DatasetImageEntry e;
        e.id = buf;
        e.file = std::string("images/") + buf + ".png";
        e.side = spec.image_side_40x;
        e.split = splits[static_cast<size_t>(i)];
        e.labeled = m.classes[static_cast<size_t>(rr[e.split]++) % m.classes.size()];
        entries[static_cast<size_t>(i)] = e;
    }

    for (int i = 0; i < n_images; ++i) {
        const SynthImage img = generate_image(spec, substream(seed, static_cast<uint64_t>(i)));
        const auto& e = entries[static_cast<size_t>(i)];
        write_image_png(out_dir / e.file, img.image);
        for (const auto& [tissue, mask] : img.masks)
            write_mask_png(out_dir / "masks" / (e.id + "_" + to_string(tissue) + ".png"), mask);
    }
    m.images = std::move(entries);
    save_manifest(m);
    return m;
}

std::vector<const DatasetImageEntry*> DatasetManifest::in_split(const std::string& split) const {
    std::vector<const DatasetImageEntry*> out;
    for (const auto& e : images)
        if (e.split == split) out.push_back(&e);
    return out;
}

void save_manifest(const DatasetManifest& m) {
    json j;
    j["seed"] = m.seed;
    j["image_side_40x"] = m.spec.image_side_40x;
    j["label_mode"] = m.spec.label_mode == LabelMode::kPartial ? "partial" : "dense";
    j["counts"] = {{"cap", m.spec.cap_count}, {"pt", m.spec.pt_count}, {"dt", m.spec.dt_count},
                   {"ves", m.spec.ves_count}, {"ptc", m.spec.ptc_count}};
    json classes = json::array();
    for (Tissue t : m.classes) classes.push_back(to_string(t));
    j["classes"] = classes;
    json imgs = json::array();
    for (const auto& e : m.images) {
        imgs.push_back({{"id", e.id},
                        {"file", e.file},
                        {"side", e.side},
                        {"split", e.split},
                        {"labeled", to_string(e.labeled)}});
    }
    j["images"] = imgs;
    std::ofstream out(m.root / "dataset.json");
    out << j.dump(2) << "\n";

    CsvWriter csv(m.root / "manifest.csv");
    csv.row({"image_id", "file", "side", "split", "labeled_class"});
    for (const auto& e : m.images)
        csv.row({e.id, e.file, std::to_string(e.side), e.split, to_string(e.labeled)});
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
    std::ifstream in(dataset_dir / "dataset.json");
    if (!in) throw std::runtime_error("load_manifest: no dataset.json in " + dataset_dir.string());
    json j;
    in >> j;
    DatasetManifest m;
    m.root = dataset_dir;
    m.seed = j.at("seed").get<uint64_t>();
    m.spec.image_side_40x = j.at("image_side_40x").get<int>();
    for (const auto& je : j.at("images")) {
        DatasetImageEntry e;
        e.id = je.at("id").get<std::string>();
        e.file = je.at("file").get<std::string>();
        e.side = je.at("side").get<int>();
        e.split = je.at("split").get<std::string>();
        const auto t = tissue_from_string(je.at("labeled").get<std::string>());
        if (!t) throw std::runtime_error("load_manifest: bad tissue name");
        e.labeled = *t;
        m.images.push_back(e);
    }
    return m;
}

}  // namespace omniseg
