#pragma once
// Binary mask in row-major order; 0 = background, 1 = foreground.

#include <cstdint>
#include <cstddef>
#include <vector>

namespace omniseg {

struct Mask {
    int w = 0, h = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int w_, int h_) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, 0) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }

    size_t area() const {
        size_t s = 0;
        for (uint8_t p : v) s += p ? 1 : 0;
        return s;
    }
    bool empty_mask() const { return area() == 0; }

    bool operator==(const Mask& o) const { return w == o.w && h == o.h && v == o.v; }
};

}  // namespace omniseg
