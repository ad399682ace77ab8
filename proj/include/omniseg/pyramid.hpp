#pragma once
// Geometry engine for 40x-space images: tiling into fixed 256x256 patches at
// a requested magnification, mask rescaling between magnifications,
// aggregation of patch predictions back onto the 40x canvas, matched cropping
// of pseudo-label canvases at supervised patch locations, and circular-spot
// percentage extraction.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omniseg/mask.hpp"
#include "omniseg/task_model.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

// Interleaved 8-bit RGB image in 40x space.
struct ImageU8 {
    int w = 0, h = 0, c = 3;
    std::vector<uint8_t> v;

    ImageU8() = default;
    ImageU8(int w_, int h_, int c_ = 3)
        : w(w_), h(h_), c(c_), v(static_cast<size_t>(w_) * h_ * c_, 0) {}
    uint8_t& at(int y, int x, int ch) {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    uint8_t at(int y, int x, int ch) const {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

enum class LabelKind { kNone, kSupervised, kPseudo };

struct PatchRecord {
    std::string image_id;
    int x = 0, y = 0, side = 0;  // 40x-space bounding box
    Mag mag = Mag::X40;
    Tensor<float> pixels;  // 3 x 256 x 256 in [0,1]
    std::optional<Mask> label;
    LabelKind kind = LabelKind::kNone;
    std::optional<Tissue> tissue;
};

inline constexpr int kPatchSize = 256;

// Grid start offsets covering [0, dim) with stride and clamped final tile.
std::vector<int> tile_starts(int dim, int side, double stride_fraction);

// Tiles a 40x image into 256x256 patches at the target magnification;
// pixels are area-averaged down by the magnification ratio.
std::vector<PatchRecord> tile_image(const ImageU8& image, Mag target, double stride_fraction,
                                    const std::string& image_id);

// Area-averaged crop: (side x side) region at (x0, y0) downsampled by
// side/256 into a normalized 3x256x256 tensor.
Tensor<float> extract_patch_pixels(const ImageU8& image, int x0, int y0, int side);

// Nearest-neighbor resampling by the magnification ratio.
Mask rescale_mask(const Mask& mask, Mag from, Mag to);

// Nearest-neighbor crop of a 40x canvas region (x0, y0, side) down to
// 256x256 at the patch magnification.
Mask crop_canvas_to_patch(const Mask& canvas, int x0, int y0, int side);

// OR-composites patch masks back onto the 40x canvas.
Mask aggregate_predictions(std::span<const std::pair<const PatchRecord*, const Mask*>> patches,
                           int canvas_h, int canvas_w);
Mask aggregate_predictions(const std::vector<std::pair<PatchRecord, Mask>>& patches, int canvas_h,
                           int canvas_w);

// Default cross-tissue priority: smallest structures win.
std::vector<Tissue> default_overlap_priority();

// Enforces non-overlapping pseudo labels across tissues in place.
void resolve_overlaps(std::map<Tissue, Mask>& canvases,
                      const std::vector<Tissue>& priority = default_overlap_priority());

// Crops each tissue's 40x pseudo canvas at the supervised patch location and
// rescales it to the patch's 256x256 frame.
std::vector<std::pair<Tissue, Mask>> match_select(const PatchRecord& supervised,
                                                  const std::map<Tissue, Mask>& pseudo_canvases);

// Normalized-cross-correlation fallback for patches without provenance:
// returns the best-matching (x, y) offset of the patch inside the image.
std::pair<int, int> locate_patch_ncc(const ImageU8& image, const PatchRecord& patch);

struct SpotMeasurement {
    double cx = 0.0, cy = 0.0;   // center, pixels at source magnification
    double diameter_um = 55.0;
    double percentage = 0.0;     // foreground % inside the disk
    bool clipped = false;        // disk extended outside the mask
};

inline constexpr double kSpotDiameterUm = 55.0;

inline double spot_diameter_px(Mag source_mag) {
    return kSpotDiameterUm / pixel_size_um(source_mag);
}

std::vector<SpotMeasurement> extract_spots(const Mask& mask,
                                           std::span<const std::pair<double, double>> centers,
                                           Mag source_mag);

// Multi-tissue spot record used by the evaluation interface.
struct Spot {
    double cx = 0.0, cy = 0.0;
    double diameter_um = 55.0;
    bool clipped = false;
    std::map<Tissue, double> tissue_percentages;
};

std::vector<Spot> extract_spots_multi(const std::map<Tissue, Mask>& masks,
                                      std::span<const std::pair<double, double>> centers,
                                      Mag source_mag);

// Square spot grid with the given pitch (microns), inset by one radius.
std::vector<std::pair<double, double>> spot_grid(int mask_w, int mask_h, Mag source_mag,
                                                 double pitch_um);

}  // namespace omniseg
