#pragma once
// Deterministic synthetic "toy pathology" generator. Six shape families with
// strongly different physical sizes reproduce the scale tension the pipeline
// exists for: CAP/TUFT disks larger than a 40x patch, PTC dots that vanish
// below 40x. Every image carries dense per-class masks; partial mode labels
// one class per image (round-robin within each split).

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "omniseg/mask.hpp"
#include "omniseg/pyramid.hpp"
#include "omniseg/task_model.hpp"

namespace omniseg {

enum class LabelMode { kPartial, kDense };

struct ShapeRange {
    double r_min = 0.0, r_max = 0.0;
};

struct SynthSpec {
    // 40x-space side; must fit one X5 patch (2048 px) so every tissue can be
    // tiled at its optimal scale.
    int image_side_40x = 2048;
    int cap_count = 2;      // each CAP carries a nested TUFT at 0.8 radius
    int pt_count = 8;
    int dt_count = 8;
    int ves_count = 5;
    int ptc_count = 70;
    ShapeRange cap_radius{120.0, 180.0};
    ShapeRange pt_radius{30.0, 50.0};
    ShapeRange dt_radius{30.0, 50.0};
    ShapeRange ves_major{55.0, 90.0};
    ShapeRange ptc_radius{3.0, 6.0};
    double tuft_radius_fraction = 0.8;
    LabelMode label_mode = LabelMode::kPartial;
    double noise_sigma = 5.0;
    double stain_shift = 10.0;  // per-image tint amplitude, color-augmentation hook
    int placement_retries = 300;
};

struct SynthImage {
    ImageU8 image;
    std::map<Tissue, Mask> masks;  // dense ground truth, all six classes
};

// One synthetic 40x image with dense masks; deterministic per (spec, seed).
SynthImage generate_image(const SynthSpec& spec, uint64_t seed);

struct DatasetImageEntry {
    std::string id;
    std::string file;                  // relative to the dataset root
    int side = 0;
    std::string split;                 // train | val | test
    Tissue labeled = Tissue::CAP;      // the one supervised class (partial mode)
};

// Classes actually present in a generated dataset (nonzero shape counts).
std::vector<Tissue> eligible_classes(const SynthSpec& spec);

struct DatasetManifest {
    uint64_t seed = 0;
    SynthSpec spec;
    std::vector<Tissue> classes;  // labeled/evaluated class set
    std::vector<DatasetImageEntry> images;
    std::filesystem::path root;

    std::vector<const DatasetImageEntry*> in_split(const std::string& split) const;
    std::filesystem::path image_path(const DatasetImageEntry& e) const { return root / e.file; }
    std::filesystem::path mask_path(const DatasetImageEntry& e, Tissue t) const {
        return root / "masks" / (e.id + "_" + to_string(t) + ".png");
    }
};

// Image-level split by the given ratios; every partition must be nonempty.
std::vector<std::string> split_dataset(size_t n_images, const std::array<int, 3>& ratios,
                                       uint64_t seed);

// Writes images, dense masks, and the manifest; returns the manifest.
DatasetManifest generate_dataset(const SynthSpec& spec, int n_images, uint64_t seed,
                                 const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);
void save_manifest(const DatasetManifest& m);

}  // namespace omniseg
