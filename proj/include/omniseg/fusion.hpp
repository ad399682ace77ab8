#pragma once
// Controller path: scale-vector expansion, triple outer-product fusion of
// (GAP features, class vector, expanded scale vector), the single-layer
// controller mapping the fused descriptor to the 162 dynamic-head parameters,
// and the three-layer per-sample 1x1-conv head itself.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniseg/mask.hpp"
#include "omniseg/nn.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

// Dynamic head geometry: three 1x1 conv layers, 8 -> 8 -> 8 -> 2 channels.
// 64+8 + 64+8 + 16+2 = 162 parameters.
inline constexpr int kHeadIn = 8;
inline constexpr int kHeadHidden = 8;
inline constexpr int kHeadOut = 2;
inline constexpr int kHeadParamCount = 162;
inline constexpr std::array<int, 6> kHeadSliceSizes = {64, 8, 64, 8, 16, 2};

struct FusionConfig {
    enum class Mode { kOuter, kConcat };

    int gap_dim = 256;
    int class_dim = 6;
    int scale_dim = 4;
    int expand_factor = 16;  // scale vector tiled 4 -> 64
    Mode mode = Mode::kOuter;
    bool controller_bias = true;

    int expanded_scale_dim() const { return scale_dim * expand_factor; }
    int fused_dim() const {
        return mode == Mode::kOuter ? gap_dim * class_dim * expanded_scale_dim()
                                    : gap_dim + class_dim + expanded_scale_dim();
    }

    static FusionConfig standard() { return {}; }
    // Small geometry for property tests: gap 32, expansion 8.
    static FusionConfig reduced() {
        FusionConfig c;
        c.gap_dim = 32;
        c.expand_factor = 8;
        return c;
    }
};

// Tiles each scale entry into a contiguous block of `factor` outputs:
// out[factor*p + q] = s[p].
template <class T>
std::vector<T> expand_scale_vector(std::span<const T> s, int factor = 16) {
    std::vector<T> out(s.size() * static_cast<size_t>(factor));
    for (size_t p = 0; p < s.size(); ++p)
        for (int q = 0; q < factor; ++q) out[p * factor + q] = s[p];
    return out;
}

// Flattened triple outer product with (a, b, c) major-to-minor ordering:
// out[(i*|b| + j)*|c| + k] = a[i] * b[j] * c[k].
template <class T>
std::vector<T> triple_outer_fuse(std::span<const T> a, std::span<const T> b,
                                 std::span<const T> c) {
    std::vector<T> out(a.size() * b.size() * c.size());
    size_t idx = 0;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j) {
            const T ab = a[i] * b[j];
            for (size_t k = 0; k < c.size(); ++k) out[idx++] = ab * c[k];
        }
    return out;
}

// Backward of the fused vector onto its three factors.
template <class T>
void triple_outer_fuse_backward(std::span<const T> dout, std::span<const T> a,
                                std::span<const T> b, std::span<const T> c, std::span<T> da,
                                std::span<T> db, std::span<T> dc) {
    size_t idx = 0;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j)
            for (size_t k = 0; k < c.size(); ++k) {
                const T g = dout[idx++];
                da[i] += g * b[j] * c[k];
                db[j] += g * a[i] * c[k];
                dc[k] += g * a[i] * b[j];
            }
}

// ---------------------------------------------------------------------------
// DynamicHeadParams: the 162 controller outputs sliced into three conv layers.
// ---------------------------------------------------------------------------

template <class T>
struct DynamicHeadParams {
    std::array<T, 64> w1;  // 8x8
    std::array<T, 8> b1;
    std::array<T, 64> w2;  // 8x8
    std::array<T, 8> b2;
    std::array<T, 16> w3;  // 2x8
    std::array<T, 2> b3;
};

template <class T>
DynamicHeadParams<T> slice_head_params(std::span<const T> omega) {
    if (omega.size() != kHeadParamCount)
        throw std::invalid_argument("slice_head_params: expected 162 values, got " +
                                    std::to_string(omega.size()));
    DynamicHeadParams<T> p;
    size_t o = 0;
    auto take = [&](auto& dst) {
        for (auto& x : dst) x = omega[o++];
    };
    take(p.w1);
    take(p.b1);
    take(p.w2);
    take(p.b2);
    take(p.w3);
    take(p.b3);
    return p;
}

template <class T>
std::array<T, kHeadParamCount> concat_head_params(const DynamicHeadParams<T>& p) {
    std::array<T, kHeadParamCount> out;
    size_t o = 0;
    auto put = [&](const auto& src) {
        for (auto x : src) out[o++] = x;
    };
    put(p.w1);
    put(p.b1);
    put(p.w2);
    put(p.b2);
    put(p.w3);
    put(p.b3);
    return out;
}

// ---------------------------------------------------------------------------
// Controller: single affine layer (1x1 conv over a fused-dim input) producing
// the 162 head parameters.
// ---------------------------------------------------------------------------

template <class T>
class Controller {
public:
    Controller() = default;
    explicit Controller(const FusionConfig& cfg)
        : cfg_(cfg), in_dim_(cfg.fused_dim()),
          w_(static_cast<size_t>(kHeadParamCount) * in_dim_), b_(kHeadParamCount),
          gw_(w_.size()), gb_(b_.size()) {}

    void init(std::mt19937_64& rng) {
        // Effective fan-in under one-hot conditioning is gap_dim * expand_factor
        // active columns, not the full fused dimension.
        const double fan = cfg_.mode == FusionConfig::Mode::kOuter
                               ? static_cast<double>(cfg_.gap_dim) * cfg_.expand_factor
                               : static_cast<double>(in_dim_);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(fan));
        for (auto& x : w_) x = static_cast<T>(dist(rng));
        std::fill(b_.begin(), b_.end(), T(0));
    }

    int in_dim() const { return in_dim_; }
    const FusionConfig& config() const { return cfg_; }

    // Dense matvec over a full fused vector.
    std::array<T, kHeadParamCount> forward_dense(std::span<const T> fused) const {
        if (static_cast<int>(fused.size()) != in_dim_)
            throw std::invalid_argument("Controller: fused size mismatch");
        std::array<T, kHeadParamCount> out;
        for (int r = 0; r < kHeadParamCount; ++r) {
            const T* row = w_.data() + static_cast<size_t>(r) * in_dim_;
            double s = cfg_.controller_bias ? static_cast<double>(b_[static_cast<size_t>(r)]) : 0.0;
            for (int i = 0; i < in_dim_; ++i) s += static_cast<double>(row[i]) * fused[static_cast<size_t>(i)];
            out[static_cast<size_t>(r)] = static_cast<T>(s);
        }
        return out;
    }

    std::vector<T> backward_dense(std::span<const T> fused, std::span<const T> domega) {
        std::vector<T> dfused(static_cast<size_t>(in_dim_), T(0));
        for (int r = 0; r < kHeadParamCount; ++r) {
            const T g = domega[static_cast<size_t>(r)];
            if (cfg_.controller_bias) gb_[static_cast<size_t>(r)] += g;
            T* grow = gw_.data() + static_cast<size_t>(r) * in_dim_;
            const T* row = w_.data() + static_cast<size_t>(r) * in_dim_;
            for (int i = 0; i < in_dim_; ++i) {
                grow[i] += g * fused[static_cast<size_t>(i)];
                dfused[static_cast<size_t>(i)] += g * row[i];
            }
        }
        return dfused;
    }

    // Structured path for outer-product fusion with a one-hot class vector:
    // touches only the columns where the class index and nonzero scale
    // entries select them. Numerically identical to forward_dense on the
    // corresponding fused vector.
    std::array<T, kHeadParamCount> forward_fused(std::span<const T> gap, int class_idx,
                                                 std::span<const T> s64) const {
        check_fused_args(gap, class_idx, s64);
        const int sdim = cfg_.expanded_scale_dim();
        std::array<T, kHeadParamCount> out;
        std::vector<int> nz = nonzero_indices(s64);
        for (int r = 0; r < kHeadParamCount; ++r) {
            const T* row = w_.data() + static_cast<size_t>(r) * in_dim_;
            double s = cfg_.controller_bias ? static_cast<double>(b_[static_cast<size_t>(r)]) : 0.0;
            for (int a = 0; a < cfg_.gap_dim; ++a) {
                const size_t base =
                    (static_cast<size_t>(a) * cfg_.class_dim + class_idx) * sdim;
                double t = 0.0;
                for (int c : nz) t += static_cast<double>(row[base + c]) * s64[static_cast<size_t>(c)];
                s += t * static_cast<double>(gap[static_cast<size_t>(a)]);
            }
            out[static_cast<size_t>(r)] = static_cast<T>(s);
        }
        return out;
    }

    // Backward of forward_fused: accumulates weight/bias gradients on the
    // active columns and returns d(gap); optionally fills d(s64).
    std::vector<T> backward_fused(std::span<const T> domega, std::span<const T> gap,
                                  int class_idx, std::span<const T> s64,
                                  std::span<T> ds64 = {}) {
        check_fused_args(gap, class_idx, s64);
        const int sdim = cfg_.expanded_scale_dim();
        std::vector<T> dgap(gap.size(), T(0));
        std::vector<int> nz = nonzero_indices(s64);
        for (int r = 0; r < kHeadParamCount; ++r) {
            const T g = domega[static_cast<size_t>(r)];
            if (cfg_.controller_bias) gb_[static_cast<size_t>(r)] += g;
            if (g == T(0)) continue;
            const T* row = w_.data() + static_cast<size_t>(r) * in_dim_;
            T* grow = gw_.data() + static_cast<size_t>(r) * in_dim_;
            for (int a = 0; a < cfg_.gap_dim; ++a) {
                const size_t base =
                    (static_cast<size_t>(a) * cfg_.class_dim + class_idx) * sdim;
                const T ga = gap[static_cast<size_t>(a)];
                T acc = T(0);
                for (int c : nz) {
                    grow[base + c] += g * ga * s64[static_cast<size_t>(c)];
                    acc += row[base + c] * s64[static_cast<size_t>(c)];
                    if (!ds64.empty()) ds64[static_cast<size_t>(c)] += g * ga * row[base + c];
                }
                dgap[static_cast<size_t>(a)] += g * acc;
            }
        }
        return dgap;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &w_, &gw_});
        if (cfg_.controller_bias) out.push_back({prefix + ".bias", &b_, &gb_});
    }

    std::vector<T>& weights() { return w_; }
    std::vector<T>& bias() { return b_; }

private:
    static std::vector<int> nonzero_indices(std::span<const T> s64) {
        std::vector<int> nz;
        nz.reserve(s64.size());
        for (size_t i = 0; i < s64.size(); ++i)
            if (s64[i] != T(0)) nz.push_back(static_cast<int>(i));
        return nz;
    }

    void check_fused_args(std::span<const T> gap, int class_idx, std::span<const T> s64) const {
        if (cfg_.mode != FusionConfig::Mode::kOuter)
            throw std::logic_error("Controller: structured path requires outer fusion");
        if (static_cast<int>(gap.size()) != cfg_.gap_dim ||
            static_cast<int>(s64.size()) != cfg_.expanded_scale_dim() || class_idx < 0 ||
            class_idx >= cfg_.class_dim)
            throw std::invalid_argument("Controller: conditioning shape mismatch");
    }

    FusionConfig cfg_;
    int in_dim_ = 0;
    std::vector<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// Dynamic head: three per-sample 1x1 convolutions, ReLU after the first two.
// ---------------------------------------------------------------------------

template <class T>
struct HeadGrad {
    Tensor<T> dm;
    std::vector<std::array<T, kHeadParamCount>> dparams;  // one per sample
};

template <class T>
class DynamicHead {
public:
    Tensor<T> forward(const Tensor<T>& m, const std::vector<DynamicHeadParams<T>>& params,
                      bool record) {
        if (m.c != kHeadIn) throw std::invalid_argument("dynamic head: input must have 8 channels");
        if (static_cast<int>(params.size()) != m.n)
            throw std::invalid_argument("dynamic head: one parameter set per sample required");
        const size_t sp = static_cast<size_t>(m.h) * m.w;
        Tensor<T> logits(m.n, kHeadOut, m.h, m.w);
        if (record) {
            x1_ = Tensor<T>(m.n, kHeadHidden, m.h, m.w);
            x2_ = Tensor<T>(m.n, kHeadHidden, m.h, m.w);
            m_ = m;
            params_ = params;
        }
        Tensor<T> x1(1, kHeadHidden, m.h, m.w), x2(1, kHeadHidden, m.h, m.w);
        for (int in = 0; in < m.n; ++in) {
            const auto& p = params[static_cast<size_t>(in)];
            // x1 = relu(W1 * m + b1)
            gemm(false, false, kHeadHidden, static_cast<int>(sp), kHeadIn, T(1), p.w1.data(),
                 kHeadIn, m.plane(in, 0), static_cast<int>(sp), T(0), x1.data(),
                 static_cast<int>(sp));
            apply_bias_relu(x1, p.b1.data(), true);
            // x2 = relu(W2 * x1 + b2)
            gemm(false, false, kHeadHidden, static_cast<int>(sp), kHeadHidden, T(1), p.w2.data(),
                 kHeadHidden, x1.data(), static_cast<int>(sp), T(0), x2.data(),
                 static_cast<int>(sp));
            apply_bias_relu(x2, p.b2.data(), true);
            // logits = W3 * x2 + b3
            gemm(false, false, kHeadOut, static_cast<int>(sp), kHeadHidden, T(1), p.w3.data(),
                 kHeadHidden, x2.data(), static_cast<int>(sp), T(0), logits.plane(in, 0),
                 static_cast<int>(sp));
            for (int k = 0; k < kHeadOut; ++k) {
                T* q = logits.plane(in, k);
                for (size_t i = 0; i < sp; ++i) q[i] += p.b3[static_cast<size_t>(k)];
            }
            if (record) {
                std::copy(x1.v.begin(), x1.v.end(), x1_.plane(in, 0));
                std::copy(x2.v.begin(), x2.v.end(), x2_.plane(in, 0));
            }
        }
        return logits;
    }

    HeadGrad<T> backward(const Tensor<T>& dlogits) {
        const int n = m_.n;
        const size_t sp = static_cast<size_t>(m_.h) * m_.w;
        HeadGrad<T> out;
        out.dm = Tensor<T>(n, kHeadIn, m_.h, m_.w);
        out.dparams.assign(static_cast<size_t>(n), {});
        std::vector<T> dx2(kHeadHidden * sp), dx1(kHeadHidden * sp);
        for (int in = 0; in < n; ++in) {
            const auto& p = params_[static_cast<size_t>(in)];
            auto& dp = out.dparams[static_cast<size_t>(in)];
            dp.fill(T(0));
            DynamicHeadParams<T> g{};
            const T* dl = dlogits.plane(in, 0);
            const T* x2 = x2_.plane(in, 0);
            const T* x1 = x1_.plane(in, 0);
            // layer 3
            gemm(false, true, kHeadOut, kHeadHidden, static_cast<int>(sp), T(1), dl,
                 static_cast<int>(sp), x2, static_cast<int>(sp), T(0), g.w3.data(), kHeadHidden);
            for (int k = 0; k < kHeadOut; ++k) {
                const T* q = dl + static_cast<size_t>(k) * sp;
                T s = T(0);
                for (size_t i = 0; i < sp; ++i) s += q[i];
                g.b3[static_cast<size_t>(k)] = s;
            }
            gemm(true, false, kHeadHidden, static_cast<int>(sp), kHeadOut, T(1), p.w3.data(),
                 kHeadHidden, dl, static_cast<int>(sp), T(0), dx2.data(), static_cast<int>(sp));
            relu_gate(dx2.data(), x2, kHeadHidden * sp);
            // layer 2
            gemm(false, true, kHeadHidden, kHeadHidden, static_cast<int>(sp), T(1), dx2.data(),
                 static_cast<int>(sp), x1, static_cast<int>(sp), T(0), g.w2.data(), kHeadHidden);
            bias_grad(dx2.data(), g.b2.data(), kHeadHidden, sp);
            gemm(true, false, kHeadHidden, static_cast<int>(sp), kHeadHidden, T(1), p.w2.data(),
                 kHeadHidden, dx2.data(), static_cast<int>(sp), T(0), dx1.data(),
                 static_cast<int>(sp));
            relu_gate(dx1.data(), x1, kHeadHidden * sp);
            // layer 1
            gemm(false, true, kHeadHidden, kHeadIn, static_cast<int>(sp), T(1), dx1.data(),
                 static_cast<int>(sp), m_.plane(in, 0), static_cast<int>(sp), T(0), g.w1.data(),
                 kHeadIn);
            bias_grad(dx1.data(), g.b1.data(), kHeadHidden, sp);
            gemm(true, false, kHeadIn, static_cast<int>(sp), kHeadHidden, T(1), p.w1.data(),
                 kHeadIn, dx1.data(), static_cast<int>(sp), T(0), out.dm.plane(in, 0),
                 static_cast<int>(sp));
            dp = concat_head_params(g);
        }
        return out;
    }

    void release_saved() {
        x1_ = Tensor<T>();
        x2_ = Tensor<T>();
        m_ = Tensor<T>();
        params_.clear();
    }

private:
    static void apply_bias_relu(Tensor<T>& x, const T* bias, bool relu) {
        const size_t sp = static_cast<size_t>(x.h) * x.w;
        for (int c = 0; c < x.c; ++c) {
            T* q = x.plane(0, c);
            const T b = bias[c];
            for (size_t i = 0; i < sp; ++i) {
                T val = q[i] + b;
                q[i] = (relu && val < T(0)) ? T(0) : val;
            }
        }
    }
    // dX *= (activation > 0); post-ReLU activations encode the gate.
    static void relu_gate(T* dx, const T* post, size_t count) {
        for (size_t i = 0; i < count; ++i)
            if (post[i] <= T(0)) dx[i] = T(0);
    }
    static void bias_grad(const T* dx, T* db, int channels, size_t sp) {
        for (int c = 0; c < channels; ++c) {
            const T* q = dx + static_cast<size_t>(c) * sp;
            T s = T(0);
            for (size_t i = 0; i < sp; ++i) s += q[i];
            db[c] += s;
        }
    }

    Tensor<T> x1_, x2_, m_;
    std::vector<DynamicHeadParams<T>> params_;
};

// Convenience wrapper matching the per-operation contract.
template <class T>
Tensor<T> dynamic_head_forward(const Tensor<T>& m,
                               const std::vector<DynamicHeadParams<T>>& params) {
    DynamicHead<T> head;
    return head.forward(m, params, false);
}

// argmax over the two channels; ties break to background.
template <class T>
std::vector<Mask> predict_mask(const Tensor<T>& logits) {
    if (logits.c != kHeadOut) throw std::invalid_argument("predict_mask: need 2-channel logits");
    std::vector<Mask> out;
    out.reserve(static_cast<size_t>(logits.n));
    for (int in = 0; in < logits.n; ++in) {
        Mask m(logits.w, logits.h);
        const T* bg = logits.plane(in, 0);
        const T* fg = logits.plane(in, 1);
        for (size_t i = 0; i < m.size(); ++i) m.v[i] = fg[i] > bg[i] ? 1 : 0;
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace omniseg
