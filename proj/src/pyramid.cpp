#include "omniseg/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace omniseg {

std::vector<int> tile_starts(int dim, int side, double stride_fraction) {
    if (stride_fraction <= 0.0 || stride_fraction > 1.0)
        throw std::invalid_argument("tile_starts: stride_fraction must be in (0,1]");
    if (dim < side) throw std::invalid_argument("tile_starts: image smaller than one patch");
    const int stride = std::max(1, static_cast<int>(std::lround(side * stride_fraction)));
    std::vector<int> starts;
    for (int s = 0; s + side < dim; s += stride) starts.push_back(s);
    starts.push_back(dim - side);  // clamp the last tile to the boundary
    return starts;
}

Tensor<float> extract_patch_pixels(const ImageU8& image, int x0, int y0, int side) {
    const int k = side / kPatchSize;
    if (k * kPatchSize != side) throw std::invalid_argument("extract_patch_pixels: bad side");
    if (x0 < 0 || y0 < 0 || x0 + side > image.w || y0 + side > image.h)
        throw std::invalid_argument("extract_patch_pixels: crop outside image");
    Tensor<float> out(1, 3, kPatchSize, kPatchSize);
    const float norm = 1.0f / (255.0f * static_cast<float>(k) * static_cast<float>(k));
    for (int py = 0; py < kPatchSize; ++py) {
        for (int px = 0; px < kPatchSize; ++px) {
            float acc[3] = {0.f, 0.f, 0.f};
            for (int dy = 0; dy < k; ++dy) {
                const uint8_t* row =
                    image.v.data() +
                    (static_cast<size_t>(y0 + py * k + dy) * image.w + (x0 + px * k)) * image.c;
                for (int dx = 0; dx < k; ++dx) {
                    acc[0] += row[dx * image.c + 0];
                    acc[1] += row[dx * image.c + 1];
                    acc[2] += row[dx * image.c + 2];
                }
            }
            for (int ch = 0; ch < 3; ++ch)
                out.at(0, ch, py, px) = acc[ch] * norm;
        }
    }
    return out;
}

std::vector<PatchRecord> tile_image(const ImageU8& image, Mag target, double stride_fraction,
                                    const std::string& image_id) {
    const int side = patch_side_40x(target);
    const auto xs = tile_starts(image.w, side, stride_fraction);
    const auto ys = tile_starts(image.h, side, stride_fraction);
    std::vector<PatchRecord> out;
    out.reserve(xs.size() * ys.size());
    for (int y : ys)
        for (int x : xs) {
            PatchRecord p;
            p.image_id = image_id;
            p.x = x;
            p.y = y;
            p.side = side;
            p.mag = target;
            p.pixels = extract_patch_pixels(image, x, y, side);
            out.push_back(std::move(p));
        }
    return out;
}

namespace {

// Integer resampling factor between two magnifications; positive = upscale.
int mag_factor(Mag from, Mag to) {
    const double r = pixel_size_um(from) / pixel_size_um(to);
    if (r >= 1.0) return static_cast<int>(std::lround(r));
    return -static_cast<int>(std::lround(1.0 / r));
}

Mask upscale_nn(const Mask& m, int k) {
    Mask out(m.w * k, m.h * k);
    for (int y = 0; y < out.h; ++y) {
        const uint8_t* src = m.v.data() + static_cast<size_t>(y / k) * m.w;
        uint8_t* dst = out.v.data() + static_cast<size_t>(y) * out.w;
        for (int x = 0; x < out.w; ++x) dst[x] = src[x / k];
    }
    return out;
}

Mask downscale_nn(const Mask& m, int k) {
    // Samples the center so that upscale-then-downscale is the identity.
    Mask out(m.w / k, m.h / k);
    const int off = k / 2;
    for (int y = 0; y < out.h; ++y) {
        const uint8_t* src = m.v.data() + static_cast<size_t>(y * k + off) * m.w;
        uint8_t* dst = out.v.data() + static_cast<size_t>(y) * out.w;
        for (int x = 0; x < out.w; ++x) dst[x] = src[x * k + off];
    }
    return out;
}

}  // namespace

Mask rescale_mask(const Mask& mask, Mag from, Mag to) {
    const int f = mag_factor(from, to);
    if (f == 1 || f == -1) return mask;
    if (f > 1) return upscale_nn(mask, f);
    return downscale_nn(mask, -f);
}

Mask crop_canvas_to_patch(const Mask& canvas, int x0, int y0, int side) {
    if (x0 < 0 || y0 < 0 || x0 + side > canvas.w || y0 + side > canvas.h)
        throw std::invalid_argument("crop_canvas_to_patch: bbox outside canvas");
    const int k = side / kPatchSize;
    Mask out(kPatchSize, kPatchSize);
    const int off = k / 2;
    for (int y = 0; y < kPatchSize; ++y)
        for (int x = 0; x < kPatchSize; ++x)
            out.at(y, x) = canvas.at(y0 + y * k + off, x0 + x * k + off) ? 1 : 0;
    return out;
}

Mask aggregate_predictions(std::span<const std::pair<const PatchRecord*, const Mask*>> patches,
                           int canvas_h, int canvas_w) {
    Mask canvas(canvas_w, canvas_h);
    for (const auto& [rec, mask] : patches) {
        if (rec->x < 0 || rec->y < 0 || rec->x + rec->side > canvas_w ||
            rec->y + rec->side > canvas_h)
            throw std::invalid_argument("aggregate_predictions: bbox outside canvas");
        if (mask->w != kPatchSize || mask->h != kPatchSize)
            throw std::invalid_argument("aggregate_predictions: mask must be 256x256");
        const Mask up = rescale_mask(*mask, rec->mag, Mag::X40);
        for (int y = 0; y < rec->side; ++y) {
            const uint8_t* src = up.v.data() + static_cast<size_t>(y) * up.w;
            uint8_t* dst = canvas.v.data() + static_cast<size_t>(rec->y + y) * canvas_w + rec->x;
            for (int x = 0; x < rec->side; ++x) dst[x] |= src[x] ? 1 : 0;
        }
    }
    return canvas;
}

Mask aggregate_predictions(const std::vector<std::pair<PatchRecord, Mask>>& patches, int canvas_h,
                           int canvas_w) {
    std::vector<std::pair<const PatchRecord*, const Mask*>> refs;
    refs.reserve(patches.size());
    for (const auto& [rec, mask] : patches) refs.emplace_back(&rec, &mask);
    return aggregate_predictions(std::span<const std::pair<const PatchRecord*, const Mask*>>(refs),
                                 canvas_h, canvas_w);
}

std::vector<Tissue> default_overlap_priority() {
    return {Tissue::PTC, Tissue::DT, Tissue::PT, Tissue::VES, Tissue::TUFT, Tissue::CAP};
}

void resolve_overlaps(std::map<Tissue, Mask>& canvases, const std::vector<Tissue>& priority) {
    Mask taken;
    for (Tissue t : priority) {
        auto it = canvases.find(t);
        if (it == canvases.end()) continue;
        Mask& m = it->second;
        if (taken.size() == 0) {
            taken = Mask(m.w, m.h);
        } else if (taken.w != m.w || taken.h != m.h) {
            throw std::invalid_argument("resolve_overlaps: canvas size mismatch");
        }
        for (size_t i = 0; i < m.size(); ++i) {
            if (!m.v[i]) continue;
            if (taken.v[i]) {
                m.v[i] = 0;
            } else {
                taken.v[i] = 1;
            }
        }
    }
}

std::vector<std::pair<Tissue, Mask>> match_select(const PatchRecord& supervised,
                                                  const std::map<Tissue, Mask>& pseudo_canvases) {
    std::vector<std::pair<Tissue, Mask>> out;
    out.reserve(pseudo_canvases.size());
    for (const auto& [tissue, canvas] : pseudo_canvases) {
        if (canvas.size() == 0)
            throw std::invalid_argument("match_select: missing canvas for tissue " +
                                        to_string(tissue));
        out.emplace_back(tissue,
                         crop_canvas_to_patch(canvas, supervised.x, supervised.y, supervised.side));
    }
    return out;
}

std::pair<int, int> locate_patch_ncc(const ImageU8& image, const PatchRecord& patch) {
    // Coarse NCC on the green channel at patch resolution, then refinement is
    // unnecessary because the search grid already matches the patch stride.
    const int side = patch.side;
    const int k = side / kPatchSize;
    auto patch_mean = [&](int ch) {
        double s = 0.0;
        for (int y = 0; y < kPatchSize; ++y)
            for (int x = 0; x < kPatchSize; ++x) s += patch.pixels.at(0, ch, y, x);
        return s / (kPatchSize * kPatchSize);
    };
    const double pm = patch_mean(1);
    double best = -2.0;
    std::pair<int, int> best_xy{0, 0};
    const int step = std::max(1, k);
    for (int y0 = 0; y0 + side <= image.h; y0 += step) {
        for (int x0 = 0; x0 + side <= image.w; x0 += step) {
            double sp = 0.0, si = 0.0, spp = 0.0, sii = 0.0, spi = 0.0;
            const int n = kPatchSize * kPatchSize;
            for (int y = 0; y < kPatchSize; ++y)
                for (int x = 0; x < kPatchSize; ++x) {
                    const double p = patch.pixels.at(0, 1, y, x) - pm;
                    const double i =
                        image.at(y0 + y * k + k / 2, x0 + x * k + k / 2, 1) / 255.0;
                    sp += p;
                    si += i;
                    spp += p * p;
                    sii += i * i;
                    spi += p * i;
                }
            const double cov = spi - sp * si / n;
            const double var = (spp - sp * sp / n) * (sii - si * si / n);
            const double ncc = var > 1e-12 ? cov / std::sqrt(var) : -1.0;
            if (ncc > best) {
                best = ncc;
                best_xy = {x0, y0};
            }
        }
    }
    return best_xy;
}

std::vector<SpotMeasurement> extract_spots(const Mask& mask,
                                           std::span<const std::pair<double, double>> centers,
                                           Mag source_mag) {
    const double radius = spot_diameter_px(source_mag) / 2.0;
    const double r2 = radius * radius;
    std::vector<SpotMeasurement> out;
    out.reserve(centers.size());
    for (const auto& [cx, cy] : centers) {
        SpotMeasurement s;
        s.cx = cx;
        s.cy = cy;
        const int x_lo = static_cast<int>(std::floor(cx - radius));
        const int x_hi = static_cast<int>(std::ceil(cx + radius));
        const int y_lo = static_cast<int>(std::floor(cy - radius));
        const int y_hi = static_cast<int>(std::ceil(cy + radius));
        size_t disk = 0, fg = 0;
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x) {
                const double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy > r2) continue;
                if (x < 0 || y < 0 || x >= mask.w || y >= mask.h) {
                    s.clipped = true;
                    continue;
                }
                ++disk;
                if (mask.at(y, x)) ++fg;
            }
        s.percentage = disk == 0 ? 0.0 : 100.0 * static_cast<double>(fg) / static_cast<double>(disk);
        out.push_back(s);
    }
    return out;
}

std::vector<Spot> extract_spots_multi(const std::map<Tissue, Mask>& masks,
                                      std::span<const std::pair<double, double>> centers,
                                      Mag source_mag) {
    std::vector<Spot> out(centers.size());
    for (size_t i = 0; i < centers.size(); ++i) {
        out[i].cx = centers[i].first;
        out[i].cy = centers[i].second;
    }
    for (const auto& [tissue, mask] : masks) {
        const auto per = extract_spots(mask, centers, source_mag);
        for (size_t i = 0; i < per.size(); ++i) {
            out[i].tissue_percentages[tissue] = per[i].percentage;
            out[i].clipped = out[i].clipped || per[i].clipped;
        }
    }
    return out;
}

std::vector<std::pair<double, double>> spot_grid(int mask_w, int mask_h, Mag source_mag,
                                                 double pitch_um) {
    const double pitch_px = pitch_um / pixel_size_um(source_mag);
    const double radius = spot_diameter_px(source_mag) / 2.0;
    std::vector<std::pair<double, double>> centers;
    for (double cy = radius; cy + radius <= mask_h; cy += pitch_px)
        for (double cx = radius; cx + radius <= mask_w; cx += pitch_px)
            centers.emplace_back(cx, cy);
    return centers;
}

}  // namespace omniseg
