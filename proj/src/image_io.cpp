#include "omniseg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace omniseg {

void write_image_png(const std::filesystem::path& path, const ImageU8& image) {
    cv::Mat bgr(image.h, image.w, CV_8UC3);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            auto& px = bgr.at<cv::Vec3b>(y, x);
            px[0] = image.at(y, x, 2);
            px[1] = image.at(y, x, 1);
            px[2] = image.at(y, x, 0);
        }
    if (!cv::imwrite(path.string(), bgr))
        throw std::runtime_error("write_image_png: cannot write " + path.string());
}

ImageU8 read_image_png(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("read_image_png: cannot read " + path.string());
    ImageU8 out(bgr.cols, bgr.rows, 3);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            const auto& px = bgr.at<cv::Vec3b>(y, x);
            out.at(y, x, 0) = px[2];
            out.at(y, x, 1) = px[1];
            out.at(y, x, 2) = px[0];
        }
    return out;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    cv::Mat gray(mask.h, mask.w, CV_8UC1);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) gray.at<uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
    if (!cv::imwrite(path.string(), gray))
        throw std::runtime_error("write_mask_png: cannot write " + path.string());
}

Mask read_mask_png(const std::filesystem::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw std::runtime_error("read_mask_png: cannot read " + path.string());
    Mask out(gray.cols, gray.rows);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) out.at(y, x) = gray.at<uint8_t>(y, x) > 127 ? 1 : 0;
    return out;
}

struct CsvWriter::Impl {
    std::ofstream out;
};

CsvWriter::CsvWriter(const std::filesystem::path& path) : impl_(new Impl) {
    impl_->out.open(path);
    if (!impl_->out) throw std::runtime_error("CsvWriter: cannot open " + path.string());
}

CsvWriter::~CsvWriter() {
    close();
    delete impl_;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) impl_->out << ',';
        impl_->out << cells[i];
    }
    impl_->out << '\n';
}

void CsvWriter::close() {
    if (impl_->out.is_open()) impl_->out.close();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string format_double(double v, int precision) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << std::fixed << v;
    return ss.str();
}

}  // namespace omniseg
