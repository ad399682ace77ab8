#pragma once
// Loading helpers over a generated dataset plus supervised patch extraction.

#include <filesystem>
#include <map>
#include <vector>

#include "omniseg/pyramid.hpp"
#include "omniseg/synth.hpp"

namespace omniseg {

ImageU8 load_dataset_image(const DatasetManifest& m, const DatasetImageEntry& e);
Mask load_dataset_mask(const DatasetManifest& m, const DatasetImageEntry& e, Tissue t);
std::map<Tissue, Mask> load_dense_masks(const DatasetManifest& m, const DatasetImageEntry& e);

// Tiles the image at the labeled class's optimal scale and attaches the
// per-patch label crop.
std::vector<PatchRecord> make_supervised_patches(const ImageU8& image, const Mask& labeled_mask,
                                                 Tissue tissue, const std::string& image_id);

}  // namespace omniseg
