#pragma once
// Static plot emission (PNG): loss curves, per-class metric bars, spot
// scatter, and color-coded segmentation overlays.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "omniseg/pyramid.hpp"
#include "omniseg/task_model.hpp"
#include "omniseg/training.hpp"

namespace omniseg {

void plot_loss_curves(const std::vector<EpochReport>& history,
                      const std::filesystem::path& path);

void plot_class_bars(const std::map<std::string, std::map<Tissue, double>>& series,
                     const std::string& ylabel, const std::filesystem::path& path);

void plot_scatter(const std::vector<double>& x, const std::vector<double>& y,
                  const std::string& xlabel, const std::string& ylabel,
                  const std::filesystem::path& path);

// Per-class color for overlays and legends.
std::array<uint8_t, 3> tissue_color(Tissue t);

void render_overlay(const ImageU8& base, const std::map<Tissue, Mask>& masks,
                    const std::filesystem::path& path, int max_side = 1024);

}  // namespace omniseg
