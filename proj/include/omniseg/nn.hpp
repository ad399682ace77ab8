#pragma once
// Small layer library: 2D convolution (im2col + GEMM), instance norm, ReLU,
// nearest-neighbor upsampling, residual blocks, and SGD. Layers own their
// parameters and gradients and implement explicit forward/backward passes;
// forward(record=true) stashes whatever backward needs. Templated on the
// scalar type so tests can run the exact same code in double precision.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniseg/tensor.hpp"

namespace omniseg {

template <class T>
struct ParamRef {
    std::string name;
    std::vector<T>* w;
    std::vector<T>* g;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

// ---------------------------------------------------------------------------
// im2col / col2im for k x k convolution with padding and stride.
// col is row-major (cin*k*k) x (ho*wo).
// ---------------------------------------------------------------------------

template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, T* col, int ho, int wo) {
    const int plane = h * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + (static_cast<size_t>(ci) * k * k + ky * k + kx) *
                                   (static_cast<size_t>(ho) * wo);
                const T* src = x + static_cast<size_t>(ci) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < wo; ++ox) *dst++ = T(0);
                        continue;
                    }
                    const T* row = src + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *dst++ = (ix >= 0 && ix < w) ? row[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, T* x, int ho,
                int wo) {
    const int plane = h * w;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + (static_cast<size_t>(ci) * k * k + ky * k + kx) *
                                         (static_cast<size_t>(ho) * wo);
                T* dst = x + static_cast<size_t>(ci) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        src += wo;
                        continue;
                    }
                    T* row = dst + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) row[ix] += src[ox];
                    }
                    src += wo;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride = 1)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(k / 2),
          w_(static_cast<size_t>(cout) * cin * k * k), b_(cout),
          gw_(w_.size()), gb_(b_.size()) {}

    void init(std::mt19937_64& rng) {
        const double fan_in = static_cast<double>(cin_) * k_ * k_;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& x : w_) x = static_cast<T>(dist(rng));
        std::fill(b_.begin(), b_.end(), T(0));
    }

    int out_h(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }

    Tensor<T> forward(const Tensor<T>& x, bool record) {
        if (x.c != cin_) throw std::invalid_argument("Conv2d: channel mismatch");
        const int ho = out_h(x.h), wo = out_h(x.w);
        Tensor<T> y(x.n, cout_, ho, wo);
        const int kk = cin_ * k_ * k_;
        const size_t sp = static_cast<size_t>(ho) * wo;
        std::vector<T> col;
        const bool direct = (k_ == 1 && stride_ == 1);
        if (!direct) col.resize(static_cast<size_t>(kk) * sp);
        for (int in = 0; in < x.n; ++in) {
            const T* src = x.plane(in, 0);
            const T* mat = src;
            if (!direct) {
                im2col(src, cin_, x.h, x.w, k_, stride_, pad_, col.data(), ho, wo);
                mat = col.data();
            }
            T* dst = y.plane(in, 0);
            gemm(false, false, cout_, static_cast<int>(sp), kk, T(1), w_.data(), kk, mat,
                 static_cast<int>(sp), T(0), dst, static_cast<int>(sp));
            for (int co = 0; co < cout_; ++co) {
                T* p = y.plane(in, co);
                const T bias = b_[static_cast<size_t>(co)];
                for (size_t i = 0; i < sp; ++i) p[i] += bias;
            }
        }
        if (record) saved_x_ = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const Tensor<T>& x = saved_x_;
        const int ho = dy.h, wo = dy.w;
        const int kk = cin_ * k_ * k_;
        const size_t sp = static_cast<size_t>(ho) * wo;
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        const bool direct = (k_ == 1 && stride_ == 1);
        std::vector<T> col, dcol;
        if (!direct) col.resize(static_cast<size_t>(kk) * sp);
        dcol.resize(static_cast<size_t>(kk) * sp);
        for (int in = 0; in < x.n; ++in) {
            const T* mat = x.plane(in, 0);
            if (!direct) {
                im2col(mat, cin_, x.h, x.w, k_, stride_, pad_, col.data(), ho, wo);
                mat = col.data();
            }
            const T* g = dy.plane(in, 0);
            // gW += dy * col^T
            gemm(false, true, cout_, kk, static_cast<int>(sp), T(1), g, static_cast<int>(sp), mat,
                 static_cast<int>(sp), T(1), gw_.data(), kk);
            for (int co = 0; co < cout_; ++co) {
                const T* p = dy.plane(in, co);
                T s = T(0);
                for (size_t i = 0; i < sp; ++i) s += p[i];
                gb_[static_cast<size_t>(co)] += s;
            }
            // dcol = W^T * dy
            gemm(true, false, kk, static_cast<int>(sp), cout_, T(1), w_.data(), kk, g,
                 static_cast<int>(sp), T(0), dcol.data(), static_cast<int>(sp));
            if (direct) {
                T* d = dx.plane(in, 0);
                for (size_t i = 0; i < dcol.size(); ++i) d[i] = dcol[i];
            } else {
                col2im_add(dcol.data(), cin_, x.h, x.w, k_, stride_, pad_, dx.plane(in, 0), ho, wo);
            }
        }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &w_, &gw_});
        out.push_back({prefix + ".bias", &b_, &gb_});
    }

    void release_saved() { saved_x_ = Tensor<T>(); }

    std::vector<T>& weights() { return w_; }
    std::vector<T>& bias() { return b_; }

private:
    int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    std::vector<T> w_, b_, gw_, gb_;
    Tensor<T> saved_x_;
};

// ---------------------------------------------------------------------------
// InstanceNorm: per-(sample, channel) normalization over the spatial plane.
// ---------------------------------------------------------------------------

template <class T>
class InstanceNorm {
public:
    static constexpr double kEps = 1e-5;

    InstanceNorm() = default;
    explicit InstanceNorm(int c) : c_(c), gamma_(c, T(1)), beta_(c, T(0)), gg_(c), gb_(c) {}

    Tensor<T> forward(const Tensor<T>& x, bool record) {
        if (x.c != c_) throw std::invalid_argument("InstanceNorm: channel mismatch");
        Tensor<T> y(x.n, x.c, x.h, x.w);
        const size_t sp = static_cast<size_t>(x.h) * x.w;
        if (record) {
            xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
            inv_std_.assign(static_cast<size_t>(x.n) * x.c, T(0));
        }
        for (int in = 0; in < x.n; ++in) {
            for (int ic = 0; ic < c_; ++ic) {
                const T* p = x.plane(in, ic);
                double mu = 0.0;
                for (size_t i = 0; i < sp; ++i) mu += static_cast<double>(p[i]);
                mu /= static_cast<double>(sp);
                double var = 0.0;
                for (size_t i = 0; i < sp; ++i) {
                    const double d = static_cast<double>(p[i]) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(sp);
                const double inv = 1.0 / std::sqrt(var + kEps);
                const T g = gamma_[static_cast<size_t>(ic)], bta = beta_[static_cast<size_t>(ic)];
                T* q = y.plane(in, ic);
                T* xh = record ? xhat_.plane(in, ic) : nullptr;
                for (size_t i = 0; i < sp; ++i) {
                    const T norm = static_cast<T>((static_cast<double>(p[i]) - mu) * inv);
                    if (xh) xh[i] = norm;
                    q[i] = g * norm + bta;
                }
                if (record) inv_std_[static_cast<size_t>(in) * c_ + ic] = static_cast<T>(inv);
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
        const size_t sp = static_cast<size_t>(dy.h) * dy.w;
        const T m = static_cast<T>(sp);
        for (int in = 0; in < dy.n; ++in) {
            for (int ic = 0; ic < c_; ++ic) {
                const T* g = dy.plane(in, ic);
                const T* xh = xhat_.plane(in, ic);
                T s1 = T(0), s2 = T(0);
                for (size_t i = 0; i < sp; ++i) {
                    s1 += g[i];
                    s2 += g[i] * xh[i];
                }
                gb_[static_cast<size_t>(ic)] += s1;
                gg_[static_cast<size_t>(ic)] += s2;
                const T gamma = gamma_[static_cast<size_t>(ic)];
                const T inv = inv_std_[static_cast<size_t>(in) * c_ + ic];
                T* d = dx.plane(in, ic);
                for (size_t i = 0; i < sp; ++i) {
                    d[i] = gamma * inv * (g[i] - s1 / m - xh[i] * s2 / m);
                }
            }
        }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &gg_});
        out.push_back({prefix + ".beta", &beta_, &gb_});
    }

    void release_saved() {
        xhat_ = Tensor<T>();
        inv_std_.clear();
    }

private:
    int c_ = 0;
    std::vector<T> gamma_, beta_, gg_, gb_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

template <class T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, bool record) {
        Tensor<T> y(x.n, x.c, x.h, x.w);
        if (record) mask_.assign(x.size(), 0);
        for (size_t i = 0; i < x.size(); ++i) {
            const bool pos = x.v[i] > T(0);
            y.v[i] = pos ? x.v[i] : T(0);
            if (record && pos) mask_[i] = 1;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
        for (size_t i = 0; i < dy.size(); ++i) dx.v[i] = mask_[i] ? dy.v[i] : T(0);
        return dx;
    }

    void release_saved() { mask_.clear(); }

private:
    std::vector<uint8_t> mask_;
};

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    Tensor<T> y(x.n, x.c, x.h * 2, x.w * 2);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic) {
            const T* src = x.plane(in, ic);
            T* dst = y.plane(in, ic);
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix) {
                    const T val = src[static_cast<size_t>(iy) * x.w + ix];
                    T* q = dst + (static_cast<size_t>(iy) * 2) * (x.w * 2) + ix * 2;
                    q[0] = val;
                    q[1] = val;
                    q[x.w * 2] = val;
                    q[x.w * 2 + 1] = val;
                }
        }
    return y;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for (int in = 0; in < dy.n; ++in)
        for (int ic = 0; ic < dy.c; ++ic) {
            const T* src = dy.plane(in, ic);
            T* dst = dx.plane(in, ic);
            for (int iy = 0; iy < dy.h; ++iy)
                for (int ix = 0; ix < dy.w; ++ix)
                    dst[static_cast<size_t>(iy / 2) * (dy.w / 2) + ix / 2] +=
                        src[static_cast<size_t>(iy) * dy.w + ix];
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Channel concat and its backward split.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
    const size_t sp = static_cast<size_t>(a.h) * a.w;
    for (int in = 0; in < a.n; ++in) {
        std::copy(a.plane(in, 0), a.plane(in, 0) + static_cast<size_t>(a.c) * sp, y.plane(in, 0));
        std::copy(b.plane(in, 0), b.plane(in, 0) + static_cast<size_t>(b.c) * sp,
                  y.plane(in, a.c));
    }
    return y;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int ca) {
    Tensor<T> a(y.n, ca, y.h, y.w), b(y.n, y.c - ca, y.h, y.w);
    const size_t sp = static_cast<size_t>(y.h) * y.w;
    for (int in = 0; in < y.n; ++in) {
        std::copy(y.plane(in, 0), y.plane(in, 0) + static_cast<size_t>(ca) * sp, a.plane(in, 0));
        std::copy(y.plane(in, ca), y.plane(in, ca) + static_cast<size_t>(y.c - ca) * sp,
                  b.plane(in, 0));
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Residual block: conv3x3(stride)-IN-ReLU-conv3x3-IN plus a projected or
// identity shortcut, ReLU after the sum.
// ---------------------------------------------------------------------------

template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(int cin, int cout, int stride = 1)
        : conv1_(cin, cout, 3, stride), in1_(cout), conv2_(cout, cout, 3, 1), in2_(cout),
          projected_(cin != cout || stride != 1) {
        if (projected_) {
            conv_sc_ = Conv2d<T>(cin, cout, 1, stride);
            in_sc_ = InstanceNorm<T>(cout);
        }
    }

    void init(std::mt19937_64& rng) {
        conv1_.init(rng);
        conv2_.init(rng);
        if (projected_) conv_sc_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool record) {
        Tensor<T> h = relu1_.forward(in1_.forward(conv1_.forward(x, record), record), record);
        h = in2_.forward(conv2_.forward(h, record), record);
        Tensor<T> sc =
            projected_ ? in_sc_.forward(conv_sc_.forward(x, record), record) : x;
        for (size_t i = 0; i < h.size(); ++i) h.v[i] += sc.v[i];
        return relu_out_.forward(h, record);
    }

    // Returns dx.
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dsum = relu_out_.backward(dy);
        Tensor<T> dx_main =
            conv1_.backward(in1_.backward(relu1_.backward(conv2_.backward(in2_.backward(dsum)))));
        if (projected_) {
            Tensor<T> dx_sc = conv_sc_.backward(in_sc_.backward(dsum));
            for (size_t i = 0; i < dx_main.size(); ++i) dx_main.v[i] += dx_sc.v[i];
        } else {
            for (size_t i = 0; i < dx_main.size(); ++i) dx_main.v[i] += dsum.v[i];
        }
        return dx_main;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        conv1_.collect(prefix + ".conv1", out);
        in1_.collect(prefix + ".in1", out);
        conv2_.collect(prefix + ".conv2", out);
        in2_.collect(prefix + ".in2", out);
        if (projected_) {
            conv_sc_.collect(prefix + ".conv_sc", out);
            in_sc_.collect(prefix + ".in_sc", out);
        }
    }

    void release_saved() {
        conv1_.release_saved();
        in1_.release_saved();
        relu1_.release_saved();
        conv2_.release_saved();
        in2_.release_saved();
        relu_out_.release_saved();
        if (projected_) {
            conv_sc_.release_saved();
            in_sc_.release_saved();
        }
    }

    bool projected() const { return projected_; }

private:
    Conv2d<T> conv1_, conv2_, conv_sc_;
    InstanceNorm<T> in1_, in2_, in_sc_;
    ReLU<T> relu1_, relu_out_;
    bool projected_ = false;
};

// ---------------------------------------------------------------------------
// SGD with momentum over a parameter list.
// ---------------------------------------------------------------------------

template <class T>
class Sgd {
public:
    Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(ParamList<T>& params) {
        if (velocity_.size() != params.size()) {
            velocity_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i)
                velocity_[i].assign(params[i].w->size(), T(0));
        }
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = *params[i].w;
            auto& g = *params[i].g;
            auto& v = velocity_[i];
            const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_);
            for (size_t j = 0; j < w.size(); ++j) {
                v[j] = mu * v[j] + g[j];
                w[j] -= lr * v[j];
            }
        }
    }

    static void zero_grad(ParamList<T>& params) {
        for (auto& p : params) std::fill(p.g->begin(), p.g->end(), T(0));
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_, momentum_;
    std::vector<std::vector<T>> velocity_;
};

}  // namespace omniseg
