#include "omniseg/plots.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace omniseg {

namespace {

constexpr int kW = 900, kH = 600, kMargin = 70;

cv::Mat blank_canvas() {
    return cv::Mat(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
}

void draw_axes(cv::Mat& img, const std::string& xlabel, const std::string& ylabel) {
    cv::line(img, {kMargin, kH - kMargin}, {kW - kMargin / 2, kH - kMargin}, {0, 0, 0}, 1);
    cv::line(img, {kMargin, kH - kMargin}, {kMargin, kMargin / 2}, {0, 0, 0}, 1);
    cv::putText(img, xlabel, {kW / 2 - 40, kH - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1);
    cv::putText(img, ylabel, {10, kMargin / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1);
}

cv::Point map_point(double x, double y, double x_max, double y_max) {
    const double px = kMargin + (kW - 1.5 * kMargin) * (x_max > 0 ? x / x_max : 0.0);
    const double py = (kH - kMargin) - (kH - 1.5 * kMargin) * (y_max > 0 ? y / y_max : 0.0);
    return {static_cast<int>(px), static_cast<int>(py)};
}

}  // namespace

void plot_loss_curves(const std::vector<EpochReport>& history,
                      const std::filesystem::path& path) {
    cv::Mat img = blank_canvas();
    draw_axes(img, "epoch", "loss");
    if (!history.empty()) {
        double y_max = 1e-9;
        for (const auto& r : history)
            y_max = std::max({y_max, r.dice, r.ce, r.kl, r.mse});
        const double x_max = static_cast<double>(history.back().epoch) + 1e-9;
        struct Series {
            const char* name;
            cv::Scalar color;
            std::vector<double> vals;
        };
        std::vector<Series> series = {{"dice", {60, 60, 220}, {}},
                                      {"ce", {220, 120, 40}, {}},
                                      {"kl", {40, 160, 40}, {}},
                                      {"mse", {160, 40, 160}, {}}};
        for (const auto& r : history) {
            series[0].vals.push_back(r.dice);
            series[1].vals.push_back(r.ce);
            series[2].vals.push_back(r.kl);
            series[3].vals.push_back(r.mse);
        }
        for (size_t s = 0; s < series.size(); ++s) {
            for (size_t i = 1; i < history.size(); ++i) {
                const auto p0 = map_point(history[i - 1].epoch, series[s].vals[i - 1], x_max, y_max);
                const auto p1 = map_point(history[i].epoch, series[s].vals[i], x_max, y_max);
                cv::line(img, p0, p1, series[s].color, 2);
            }
            cv::putText(img, series[s].name, {kW - kMargin - 40, kMargin + 22 * static_cast<int>(s)},
                        cv::FONT_HERSHEY_SIMPLEX, 0.5, series[s].color, 1);
        }
    }
    cv::imwrite(path.string(), img);
}

void plot_class_bars(const std::map<std::string, std::map<Tissue, double>>& series,
                     const std::string& ylabel, const std::filesystem::path& path) {
    cv::Mat img = blank_canvas();
    draw_axes(img, "tissue", ylabel);
    double y_max = 1e-9;
    for (const auto& [name, vals] : series)
        for (const auto& [t, v] : vals) y_max = std::max(y_max, v);
    const int groups = kTissueCount;
    const int group_w = (kW - 2 * kMargin) / groups;
    const int bar_w = std::max(4, group_w / std::max<int>(1, static_cast<int>(series.size()) + 1));
    int series_idx = 0;
    const std::vector<cv::Scalar> palette = {{60, 60, 220}, {220, 120, 40}, {40, 160, 40},
                                             {160, 40, 160}, {20, 200, 200}};
    for (const auto& [name, vals] : series) {
        int g = 0;
        for (Tissue t : all_tissues()) {
            const auto it = vals.find(t);
            if (it != vals.end()) {
                const int x0 = kMargin + g * group_w + series_idx * bar_w;
                const int y_top =
                    (kH - kMargin) -
                    static_cast<int>((kH - 1.5 * kMargin) * (it->second / y_max));
                cv::rectangle(img, {x0, y_top}, {x0 + bar_w - 2, kH - kMargin},
                              palette[static_cast<size_t>(series_idx) % palette.size()],
                              cv::FILLED);
            }
            ++g;
        }
        cv::putText(img, name, {kW - kMargin - 120, kMargin + 22 * series_idx},
                    cv::FONT_HERSHEY_SIMPLEX, 0.5,
                    palette[static_cast<size_t>(series_idx) % palette.size()], 1);
        ++series_idx;
    }
    int g = 0;
    for (Tissue t : all_tissues()) {
        cv::putText(img, to_string(t), {kMargin + g * group_w + group_w / 3, kH - kMargin + 25},
                    cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1);
        ++g;
    }
    cv::imwrite(path.string(), img);
}

void plot_scatter(const std::vector<double>& x, const std::vector<double>& y,
                  const std::string& xlabel, const std::string& ylabel,
                  const std::filesystem::path& path) {
    cv::Mat img = blank_canvas();
    draw_axes(img, xlabel, ylabel);
    double m = 1e-9;
    for (double v : x) m = std::max(m, v);
    for (double v : y) m = std::max(m, v);
    cv::line(img, map_point(0, 0, m, m), map_point(m, m, m, m), {200, 200, 200}, 1);
    for (size_t i = 0; i < x.size() && i < y.size(); ++i)
        cv::circle(img, map_point(x[i], y[i], m, m), 3, {60, 60, 220}, cv::FILLED);
    cv::imwrite(path.string(), img);
}

std::array<uint8_t, 3> tissue_color(Tissue t) {
    switch (t) {
        case Tissue::CAP: return {148, 96, 208};
        case Tissue::TUFT: return {96, 48, 160};
        case Tissue::PT: return {232, 120, 72};
        case Tissue::DT: return {56, 112, 232};
        case Tissue::PTC: return {200, 32, 96};
        case Tissue::VES: return {176, 32, 32};
    }
    return {0, 0, 0};
}

void render_overlay(const ImageU8& base, const std::map<Tissue, Mask>& masks,
                    const std::filesystem::path& path, int max_side) {
    const int k = std::max(1, std::max(base.w, base.h) / max_side);
    const int w = base.w / k, h = base.h / k;
    cv::Mat img(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            px[0] = base.at(y * k, x * k, 2);
            px[1] = base.at(y * k, x * k, 1);
            px[2] = base.at(y * k, x * k, 0);
        }
    for (const auto& [t, mask] : masks) {
        const auto color = tissue_color(t);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!mask.at(std::min(y * k, mask.h - 1), std::min(x * k, mask.w - 1))) continue;
                auto& px = img.at<cv::Vec3b>(y, x);
                px[0] = static_cast<uint8_t>((px[0] + 2 * color[2]) / 3);
                px[1] = static_cast<uint8_t>((px[1] + 2 * color[1]) / 3);
                px[2] = static_cast<uint8_t>((px[2] + 2 * color[0]) / 3);
            }
    }
    cv::imwrite(path.string(), img);
}

}  // namespace omniseg
