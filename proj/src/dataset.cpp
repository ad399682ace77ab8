#include "omniseg/dataset.hpp"

#include "omniseg/image_io.hpp"

namespace omniseg {

ImageU8 load_dataset_image(const DatasetManifest& m, const DatasetImageEntry& e) {
    return read_image_png(m.image_path(e));
}

Mask load_dataset_mask(const DatasetManifest& m, const DatasetImageEntry& e, Tissue t) {
    return read_mask_png(m.mask_path(e, t));
}

std::map<Tissue, Mask> load_dense_masks(const DatasetManifest& m, const DatasetImageEntry& e) {
    std::map<Tissue, Mask> out;
    for (Tissue t : all_tissues()) out.emplace(t, load_dataset_mask(m, e, t));
    return out;
}

std::vector<PatchRecord> make_supervised_patches(const ImageU8& image, const Mask& labeled_mask,
                                                 Tissue tissue, const std::string& image_id) {
    const Mag mag = optimal_scale(tissue);
    std::vector<PatchRecord> patches = tile_image(image, mag, 1.0, image_id);
    for (auto& p : patches) {
        p.label = crop_canvas_to_patch(labeled_mask, p.x, p.y, p.side);
        p.kind = LabelKind::kSupervised;
        p.tissue = tissue;
    }
    return patches;
}

}  // namespace omniseg
