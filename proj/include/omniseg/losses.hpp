#pragma once
// Training losses over 2-channel logits: binary Dice + cross-entropy for
// supervised targets, KL + MSE consistency between two augmented views.
// Each routine returns the loss value and can accumulate d(loss)/d(logits).

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "omniseg/mask.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

inline constexpr double kDiceEps = 1e-5;

// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps) on a foreground
// probability map.
template <class T>
double dice_loss(std::span<const T> probs, std::span<const uint8_t> target) {
    if (probs.size() != target.size()) throw std::invalid_argument("dice_loss: shape mismatch");
    double spt = 0.0, sp = 0.0, st = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        const double p = static_cast<double>(probs[i]);
        const double t = target[i] ? 1.0 : 0.0;
        spt += p * t;
        sp += p;
        st += t;
    }
    return 1.0 - (2.0 * spt + kDiceEps) / (sp + st + kDiceEps);
}

namespace detail {

// log-softmax over two channels at one pixel.
template <class T>
inline void log_softmax2(T z0, T z1, double& l0, double& l1) {
    const double a = static_cast<double>(z0), b = static_cast<double>(z1);
    const double m = a > b ? a : b;
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    l0 = a - lse;
    l1 = b - lse;
}

}  // namespace detail

// Mean over pixels of -log softmax(logits)[target]. logits holds the
// background plane followed by the foreground plane, each `hw` long.
template <class T>
double cross_entropy_loss(const T* logits, const uint8_t* target, size_t hw) {
    double total = 0.0;
    for (size_t i = 0; i < hw; ++i) {
        double l0, l1;
        detail::log_softmax2(logits[i], logits[hw + i], l0, l1);
        total -= target[i] ? l1 : l0;
    }
    return total / static_cast<double>(hw);
}

template <class T>
double cross_entropy_loss(const Tensor<T>& logits, const Mask& target) {
    if (logits.c != 2 || logits.n != 1 || logits.h != target.h || logits.w != target.w)
        throw std::invalid_argument("cross_entropy_loss: shape mismatch");
    return cross_entropy_loss(logits.plane(0, 0), target.v.data(),
                              static_cast<size_t>(logits.h) * logits.w);
}

struct SupervisedLoss {
    double dice = 0.0;
    double ce = 0.0;
};

// Dice + CE on one sample's logits plane; accumulates gradients scaled by
// grad_scale into dlogits when non-null.
template <class T>
SupervisedLoss dice_ce_loss(const T* logits, const uint8_t* target, size_t hw, double w_dice,
                            double w_ce, T* dlogits = nullptr, double grad_scale = 1.0) {
    SupervisedLoss out;
    double spt = 0.0, sp = 0.0, st = 0.0;
    double ce = 0.0;
    for (size_t i = 0; i < hw; ++i) {
        double l0, l1;
        detail::log_softmax2(logits[i], logits[hw + i], l0, l1);
        const double p1 = std::exp(l1);
        const double t = target[i] ? 1.0 : 0.0;
        spt += p1 * t;
        sp += p1;
        st += t;
        ce -= target[i] ? l1 : l0;
    }
    const double denom = sp + st + kDiceEps;
    out.dice = 1.0 - (2.0 * spt + kDiceEps) / denom;
    out.ce = ce / static_cast<double>(hw);
    if (dlogits) {
        const double inv_hw = 1.0 / static_cast<double>(hw);
        for (size_t i = 0; i < hw; ++i) {
            double l0, l1;
            detail::log_softmax2(logits[i], logits[hw + i], l0, l1);
            const double p0 = std::exp(l0), p1 = std::exp(l1);
            const double t = target[i] ? 1.0 : 0.0;
            // d(dice)/dp1
            const double ddice_dp = -(2.0 * t * denom - (2.0 * spt + kDiceEps)) / (denom * denom);
            // dp1/dz1 = p1*p0, dp1/dz0 = -p1*p0
            const double dd1 = w_dice * ddice_dp * p1 * p0;
            // d(ce)/dz
            const double dce0 = w_ce * inv_hw * (p0 - (target[i] ? 0.0 : 1.0));
            const double dce1 = w_ce * inv_hw * (p1 - (target[i] ? 1.0 : 0.0));
            dlogits[i] += static_cast<T>(grad_scale * (dce0 - dd1));
            dlogits[hw + i] += static_cast<T>(grad_scale * (dce1 + dd1));
        }
    }
    return out;
}

struct ConsistencyLoss {
    double kl = 0.0;
    double mse = 0.0;
};

// KL(softmax(a) || softmax(b)) plus MSE between the probability maps, both
// averaged per pixel (MSE additionally over the two channels). The b branch
// is a fixed target: gradients flow into a only.
template <class T>
ConsistencyLoss consistency_loss(const T* logits_a, const T* logits_b, size_t hw, double w_kl,
                                 double w_mse, T* dlogits_a = nullptr, double grad_scale = 1.0) {
    ConsistencyLoss out;
    const double inv_hw = 1.0 / static_cast<double>(hw);
    for (size_t i = 0; i < hw; ++i) {
        double la0, la1, lb0, lb1;
        detail::log_softmax2(logits_a[i], logits_a[hw + i], la0, la1);
        detail::log_softmax2(logits_b[i], logits_b[hw + i], lb0, lb1);
        const double pa0 = std::exp(la0), pa1 = std::exp(la1);
        const double pb0 = std::exp(lb0), pb1 = std::exp(lb1);
        const double c0 = la0 - lb0, c1 = la1 - lb1;
        const double kl_px = pa0 * c0 + pa1 * c1;
        out.kl += kl_px;
        out.mse += 0.5 * ((pa0 - pb0) * (pa0 - pb0) + (pa1 - pb1) * (pa1 - pb1));
        if (dlogits_a) {
            const double dkl0 = pa0 * (c0 - kl_px);
            const double dkl1 = pa1 * (c1 - kl_px);
            const double inner = pa0 * (pa0 - pb0) + pa1 * (pa1 - pb1);
            const double dmse0 = pa0 * ((pa0 - pb0) - inner);
            const double dmse1 = pa1 * ((pa1 - pb1) - inner);
            dlogits_a[i] +=
                static_cast<T>(grad_scale * inv_hw * (w_kl * dkl0 + w_mse * dmse0));
            dlogits_a[hw + i] +=
                static_cast<T>(grad_scale * inv_hw * (w_kl * dkl1 + w_mse * dmse1));
        }
    }
    out.kl *= inv_hw;
    out.mse *= inv_hw;
    return out;
}

}  // namespace omniseg
