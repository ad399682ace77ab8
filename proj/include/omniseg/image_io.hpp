#pragma once
// PNG I/O for 40x images and masks, plus small CSV helpers. Masks are stored
// as lossless single-channel PNGs with foreground = 255.

#include <filesystem>
#include <string>
#include <vector>

#include "omniseg/mask.hpp"
#include "omniseg/pyramid.hpp"

namespace omniseg {

void write_image_png(const std::filesystem::path& path, const ImageU8& image);
ImageU8 read_image_png(const std::filesystem::path& path);

void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

struct CsvWriter {
    explicit CsvWriter(const std::filesystem::path& path);
    ~CsvWriter();
    void row(const std::vector<std::string>& cells);
    void close();

private:
    struct Impl;
    Impl* impl_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

std::string format_double(double v, int precision = 6);

}  // namespace omniseg
