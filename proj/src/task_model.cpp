#include "omniseg/task_model.hpp"

namespace omniseg {

std::array<double, kTissueCount> encode_class(Tissue t) {
    std::array<double, kTissueCount> v{};
    v[static_cast<size_t>(index_of(t))] = 1.0;
    return v;
}

std::array<double, kMagCount> encode_scale(Mag m) {
    std::array<double, kMagCount> v{};
    v[static_cast<size_t>(index_of(m))] = 1.0;
    return v;
}

std::string to_string(Tissue t) {
    switch (t) {
        case Tissue::CAP: return "cap";
        case Tissue::TUFT: return "tuft";
        case Tissue::PT: return "pt";
        case Tissue::DT: return "dt";
        case Tissue::PTC: return "ptc";
        case Tissue::VES: return "ves";
    }
    return "?";
}

std::string to_string(Mag m) {
    switch (m) {
        case Mag::X5: return "5x";
        case Mag::X10: return "10x";
        case Mag::X20: return "20x";
        case Mag::X40: return "40x";
    }
    return "?";
}

std::optional<Tissue> tissue_from_string(std::string_view s) {
    for (Tissue t : all_tissues())
        if (s == to_string(t)) return t;
    return std::nullopt;
}

std::optional<Mag> mag_from_string(std::string_view s) {
    for (Mag m : all_mags())
        if (s == to_string(m)) return m;
    return std::nullopt;
}

std::array<std::string, kTissueCount> canonical_class_order() {
    std::array<std::string, kTissueCount> o;
    for (Tissue t : all_tissues()) o[static_cast<size_t>(index_of(t))] = to_string(t);
    return o;
}

std::array<std::string, kMagCount> canonical_scale_order() {
    std::array<std::string, kMagCount> o;
    for (Mag m : all_mags()) o[static_cast<size_t>(index_of(m))] = to_string(m);
    return o;
}

}  // namespace omniseg
