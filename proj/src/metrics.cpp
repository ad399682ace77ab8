#include "omniseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace omniseg {

double dice_pct(const Mask& pred, const Mask& gt) {
    if (pred.w != gt.w || pred.h != gt.h)
        throw std::invalid_argument("dice_pct: shape mismatch");
    size_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.v[i] != 0, g = gt.v[i] != 0;
        a += p;
        b += g;
        inter += p && g;
    }
    if (a + b == 0) return 100.0;  // both empty: perfect agreement convention
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

Mask boundary_pixels(const Mask& m) {
    Mask out(m.w, m.h);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            const bool edge = (x == 0 || !m.at(y, x - 1)) || (x == m.w - 1 || !m.at(y, x + 1)) ||
                              (y == 0 || !m.at(y - 1, x)) || (y == m.h - 1 || !m.at(y + 1, x));
            if (edge) out.at(y, x) = 1;
        }
    return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Squared-distance sentinel for seedless columns; larger than any real value
// on the mask sizes this library handles, so those parabolas never win.
constexpr double kFar = 1e12;

// Felzenszwalb-Huttenlocher 1D squared-distance transform over finite f.
void edt_1d(const double* f, double* d, int n, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

std::vector<double> distance_transform_sq(const Mask& seeds) {
    const int w = seeds.w, h = seeds.h;
    // Pass 1: per column, row distance to the nearest seed in that column.
    std::vector<double> grid(static_cast<size_t>(w) * h, kFar);
    for (int x = 0; x < w; ++x) {
        int last = -1;
        for (int y = 0; y < h; ++y) {
            if (seeds.at(y, x)) last = y;
            if (last >= 0) {
                const double d = y - last;
                grid[static_cast<size_t>(y) * w + x] = d * d;
            }
        }
        last = -1;
        for (int y = h - 1; y >= 0; --y) {
            if (seeds.at(y, x)) last = y;
            if (last >= 0) {
                const double d = last - y;
                grid[static_cast<size_t>(y) * w + x] =
                    std::min(grid[static_cast<size_t>(y) * w + x], d * d);
            }
        }
    }
    // Pass 2: 1D transform along rows on the squared column distances.
    std::vector<double> row(w), out_row(w);
    std::vector<int> v(w);
    std::vector<double> z(static_cast<size_t>(w) + 1);
    for (int y = 0; y < h; ++y) {
        double* r = grid.data() + static_cast<size_t>(y) * w;
        std::copy(r, r + w, row.data());
        edt_1d(row.data(), out_row.data(), w, v.data(), z.data());
        std::copy(out_row.data(), out_row.data() + w, r);
    }
    return grid;
}

SurfaceDistances surface_distances(const Mask& pred, const Mask& gt, double pixel_size_um) {
    if (pred.w != gt.w || pred.h != gt.h)
        throw std::invalid_argument("surface_distances: shape mismatch");
    SurfaceDistances out;
    if (pred.empty_mask() || gt.empty_mask()) {
        out.hd_um = std::numeric_limits<double>::quiet_NaN();
        out.msd_um = std::numeric_limits<double>::quiet_NaN();
        out.defined = false;
        return out;
    }
    const Mask bp = boundary_pixels(pred);
    const Mask bg = boundary_pixels(gt);
    const auto dist_to_pred = distance_transform_sq(bp);
    const auto dist_to_gt = distance_transform_sq(bg);

    double hd_sq = 0.0, sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < bp.size(); ++i) {
        if (bp.v[i]) {
            hd_sq = std::max(hd_sq, dist_to_gt[i]);
            sum += std::sqrt(dist_to_gt[i]);
            ++count;
        }
        if (bg.v[i]) {
            hd_sq = std::max(hd_sq, dist_to_pred[i]);
            sum += std::sqrt(dist_to_pred[i]);
            ++count;
        }
    }
    out.hd_um = std::sqrt(hd_sq) * pixel_size_um;
    out.msd_um = (sum / static_cast<double>(count)) * pixel_size_um;
    out.defined = true;
    return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("pearson: need two equal-length vectors of size >= 2");
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double cxy = 0.0, cxx = 0.0, cyy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        cxy += dx * dy;
        cxx += dx * dx;
        cyy += dy * dy;
    }
    if (cxx == 0.0 || cyy == 0.0)
        throw UndefinedCorrelationError("pearson: zero variance input");
    return cxy / std::sqrt(cxx * cyy);
}

SpotEvaluation evaluate_spots(std::span<const double> pred_percentages,
                              std::span<const double> ref_percentages) {
    if (pred_percentages.size() != ref_percentages.size())
        throw std::invalid_argument("evaluate_spots: spot lists must match");
    SpotEvaluation out;
    out.residuals.resize(pred_percentages.size());
    for (size_t i = 0; i < pred_percentages.size(); ++i)
        out.residuals[i] = pred_percentages[i] - ref_percentages[i];
    try {
        out.r = pearson(pred_percentages, ref_percentages);
    } catch (const UndefinedCorrelationError& e) {
        out.r = std::nullopt;
        out.flag = e.what();
    }
    return out;
}

MetricReport evaluate_masks(const Mask& pred, const Mask& gt, double pixel_size_um) {
    MetricReport r;
    r.pixel_size_um = pixel_size_um;
    r.dice_pct = dice_pct(pred, gt);
    const SurfaceDistances sd = surface_distances(pred, gt, pixel_size_um);
    r.hd_um = sd.hd_um;
    r.msd_um = sd.msd_um;
    r.distances_defined = sd.defined;
    return r;
}

}  // namespace omniseg
