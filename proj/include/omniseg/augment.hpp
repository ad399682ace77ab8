#pragma once
// Patch augmentation: the 8 square dihedral transforms plus per-channel color
// jitter. Geometric transforms are recorded so predictions on two views of
// the same patch can be aligned before the consistency losses compare them.
// Color jitter never touches labels.

#include <array>
#include <cstdint>
#include <random>

#include "omniseg/mask.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

// 0..3: rotation by 90*k degrees CCW; 4..7: horizontal flip, then rotation.
enum class Dihedral : int {
    kId = 0,
    kRot90 = 1,
    kRot180 = 2,
    kRot270 = 3,
    kFlip = 4,
    kFlipRot90 = 5,
    kFlipRot180 = 6,
    kFlipRot270 = 7,
};

Dihedral dihedral_inverse(Dihedral d);
// compose(a, b): the transform equal to applying b first, then a.
Dihedral dihedral_compose(Dihedral a, Dihedral b);

// Source coordinates: out(y, x) = in(sy, sx) for an n x n plane.
void dihedral_source(Dihedral d, int n, int y, int x, int& sy, int& sx);

Tensor<float> apply_dihedral(const Tensor<float>& x, Dihedral d);
Mask apply_dihedral(const Mask& m, Dihedral d);

struct Augmentation {
    Dihedral geo = Dihedral::kId;
    std::array<float, 3> gain{1.f, 1.f, 1.f};
    std::array<float, 3> bias{0.f, 0.f, 0.f};
};

Augmentation random_augmentation(std::mt19937_64& rng, float jitter = 0.1f);

// Geometric transform plus color jitter, output clamped to [0, 1].
Tensor<float> augment_patch(const Tensor<float>& patch, const Augmentation& aug);
// Labels follow the geometric transform only.
Mask augment_label(const Mask& label, const Augmentation& aug);

// Maps a prediction made on view `aug` back into the patch frame.
Tensor<float> align_to_patch(const Tensor<float>& pred, const Augmentation& aug);

}  // namespace omniseg
