#pragma once
// Segmentation metrics in physical units: Dice (%), Hausdorff distance and
// mean surface distance (microns), plus Pearson correlation for spot-level
// evaluation. Boundary = foreground pixel with at least one background
// 4-neighbor (out-of-bounds counts as background); distances are measured
// between pixel centers.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniseg/mask.hpp"

namespace omniseg {

double dice_pct(const Mask& pred, const Mask& gt);

Mask boundary_pixels(const Mask& m);

struct SurfaceDistances {
    double hd_um = 0.0;
    double msd_um = 0.0;
    bool defined = false;  // false when either mask is empty
};

SurfaceDistances surface_distances(const Mask& pred, const Mask& gt, double pixel_size_um);

inline double hausdorff_um(const Mask& pred, const Mask& gt, double px_um) {
    return surface_distances(pred, gt, px_um).hd_um;
}
inline double msd_um(const Mask& pred, const Mask& gt, double px_um) {
    return surface_distances(pred, gt, px_um).msd_um;
}

// Exact squared Euclidean distance to the nearest seed pixel, for every
// pixel. Seeds are the nonzero entries of `seeds`.
std::vector<double> distance_transform_sq(const Mask& seeds);

class UndefinedCorrelationError : public std::runtime_error {
public:
    explicit UndefinedCorrelationError(const std::string& what) : std::runtime_error(what) {}
};

// Sample Pearson r; throws UndefinedCorrelationError when either input has
// zero variance (the Table-II nan situation).
double pearson(std::span<const double> x, std::span<const double> y);

struct SpotEvaluation {
    std::optional<double> r;           // empty when correlation is undefined
    std::string flag;                  // reason when r is empty
    std::vector<double> residuals;     // pred - ref per spot
};

SpotEvaluation evaluate_spots(std::span<const double> pred_percentages,
                              std::span<const double> ref_percentages);

struct MetricReport {
    double dice_pct = 0.0;
    double hd_um = 0.0;
    double msd_um = 0.0;
    bool distances_defined = false;
    double pixel_size_um = 0.25;
};

MetricReport evaluate_masks(const Mask& pred, const Mask& gt, double pixel_size_um);

}  // namespace omniseg
