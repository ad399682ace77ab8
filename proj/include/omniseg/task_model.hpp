#pragma once
// Tissue-class and magnification vocabulary shared by every other module.
// The canonical orders below are frozen: checkpoints store them and refuse
// to load against a binary whose vocabulary disagrees.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace omniseg {

enum class Tissue : int { CAP = 0, TUFT = 1, PT = 2, DT = 3, PTC = 4, VES = 5 };
inline constexpr int kTissueCount = 6;

enum class Mag : int { X5 = 0, X10 = 1, X20 = 2, X40 = 3 };
inline constexpr int kMagCount = 4;

inline constexpr std::array<Tissue, kTissueCount> all_tissues() {
    return {Tissue::CAP, Tissue::TUFT, Tissue::PT, Tissue::DT, Tissue::PTC, Tissue::VES};
}
inline constexpr std::array<Mag, kMagCount> all_mags() {
    return {Mag::X5, Mag::X10, Mag::X20, Mag::X40};
}

inline constexpr int index_of(Tissue t) { return static_cast<int>(t); }
inline constexpr int index_of(Mag m) { return static_cast<int>(m); }

// Microns per pixel; 40x is the 0.25 um base and each halving of the
// magnification doubles the pixel size.
inline constexpr double pixel_size_um(Mag m) {
    switch (m) {
        case Mag::X5: return 2.0;
        case Mag::X10: return 1.0;
        case Mag::X20: return 0.5;
        case Mag::X40: return 0.25;
    }
    return 0.25;
}

// Side length, in 40x-space pixels, of the region a 256x256 patch covers
// at magnification m.
inline constexpr int patch_side_40x(Mag m) {
    return static_cast<int>(256.0 * (pixel_size_um(m) / 0.25));
}

// The magnification each tissue is segmented at.
inline constexpr Mag optimal_scale(Tissue t) {
    switch (t) {
        case Tissue::CAP: return Mag::X5;
        case Tissue::TUFT: return Mag::X5;
        case Tissue::PT: return Mag::X10;
        case Tissue::DT: return Mag::X10;
        case Tissue::PTC: return Mag::X40;
        case Tissue::VES: return Mag::X10;
    }
    return Mag::X10;
}

struct TaskSpec {
    Tissue tissue;
    Mag scale;
};
inline constexpr TaskSpec task_for(Tissue t) { return {t, optimal_scale(t)}; }

std::array<double, kTissueCount> encode_class(Tissue t);
std::array<double, kMagCount> encode_scale(Mag m);

std::string to_string(Tissue t);
std::string to_string(Mag m);
std::optional<Tissue> tissue_from_string(std::string_view s);
std::optional<Mag> mag_from_string(std::string_view s);

// Canonical serialization orders, as written into checkpoints and configs.
std::array<std::string, kTissueCount> canonical_class_order();
std::array<std::string, kMagCount> canonical_scale_order();

}  // namespace omniseg
