#include "omniseg/augment.hpp"

#include <algorithm>
#include <stdexcept>

namespace omniseg {

void dihedral_source(Dihedral d, int n, int y, int x, int& sy, int& sx) {
    // Undo the rotation part, then the flip part.
    const int k = static_cast<int>(d) % 4;
    const bool flip = static_cast<int>(d) >= 4;
    int ry = y, rx = x;
    switch (k) {
        case 0: break;
        case 1:  // out = rot90ccw(in): out(y,x) = in(x, n-1-y)
            ry = x;
            rx = n - 1 - y;
            break;
        case 2:
            ry = n - 1 - y;
            rx = n - 1 - x;
            break;
        case 3:
            ry = n - 1 - x;
            rx = y;
            break;
    }
    if (flip) rx = n - 1 - rx;  // in was horizontally flipped first
    sy = ry;
    sx = rx;
}

namespace {

// Permutation index of a transform on a 4x4 probe grid, used to derive
// inverse/composition without hand-written tables.
std::array<int, 16> probe(Dihedral d) {
    std::array<int, 16> out{};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            int sy, sx;
            dihedral_source(d, 4, y, x, sy, sx);
            out[static_cast<size_t>(y * 4 + x)] = sy * 4 + sx;
        }
    return out;
}

}  // namespace

Dihedral dihedral_compose(Dihedral a, Dihedral b) {
    // out(p) = in(probe_b(probe_a(p))) when applying b first, then a.
    const auto pa = probe(a), pb = probe(b);
    std::array<int, 16> target{};
    for (int p = 0; p < 16; ++p) target[static_cast<size_t>(p)] = pb[static_cast<size_t>(pa[static_cast<size_t>(p)])];
    for (int d = 0; d < 8; ++d) {
        if (probe(static_cast<Dihedral>(d)) == target) return static_cast<Dihedral>(d);
    }
    throw std::logic_error("dihedral_compose: not closed");
}

Dihedral dihedral_inverse(Dihedral d) {
    for (int i = 0; i < 8; ++i) {
        const Dihedral cand = static_cast<Dihedral>(i);
        if (dihedral_compose(cand, d) == Dihedral::kId) return cand;
    }
    throw std::logic_error("dihedral_inverse: no inverse");
}

Tensor<float> apply_dihedral(const Tensor<float>& x, Dihedral d) {
    if (x.h != x.w) throw std::invalid_argument("apply_dihedral: square planes required");
    Tensor<float> y(x.n, x.c, x.h, x.w);
    const int n = x.h;
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic) {
            const float* src = x.plane(in, ic);
            float* dst = y.plane(in, ic);
            for (int yy = 0; yy < n; ++yy)
                for (int xx = 0; xx < n; ++xx) {
                    int sy, sx;
                    dihedral_source(d, n, yy, xx, sy, sx);
                    dst[static_cast<size_t>(yy) * n + xx] = src[static_cast<size_t>(sy) * n + sx];
                }
        }
    return y;
}

Mask apply_dihedral(const Mask& m, Dihedral d) {
    if (m.h != m.w) throw std::invalid_argument("apply_dihedral: square masks required");
    Mask out(m.w, m.h);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            int sy, sx;
            dihedral_source(d, m.h, y, x, sy, sx);
            out.at(y, x) = m.at(sy, sx);
        }
    return out;
}

Augmentation random_augmentation(std::mt19937_64& rng, float jitter) {
    Augmentation a;
    std::uniform_int_distribution<int> geo(0, 7);
    std::uniform_real_distribution<float> gain(1.f - jitter, 1.f + jitter);
    std::uniform_real_distribution<float> bias(-jitter * 0.5f, jitter * 0.5f);
    a.geo = static_cast<Dihedral>(geo(rng));
    for (int c = 0; c < 3; ++c) {
        a.gain[static_cast<size_t>(c)] = gain(rng);
        a.bias[static_cast<size_t>(c)] = bias(rng);
    }
    return a;
}

Tensor<float> augment_patch(const Tensor<float>& patch, const Augmentation& aug) {
    Tensor<float> out = apply_dihedral(patch, aug.geo);
    for (int in = 0; in < out.n; ++in)
        for (int ic = 0; ic < out.c; ++ic) {
            float* p = out.plane(in, ic);
            const float g = aug.gain[static_cast<size_t>(ic % 3)];
            const float b = aug.bias[static_cast<size_t>(ic % 3)];
            const size_t sp = static_cast<size_t>(out.h) * out.w;
            for (size_t i = 0; i < sp; ++i) p[i] = std::clamp(p[i] * g + b, 0.f, 1.f);
        }
    return out;
}

Mask augment_label(const Mask& label, const Augmentation& aug) {
    return apply_dihedral(label, aug.geo);
}

Tensor<float> align_to_patch(const Tensor<float>& pred, const Augmentation& aug) {
    return apply_dihedral(pred, dihedral_inverse(aug.geo));
}

}  // namespace omniseg
