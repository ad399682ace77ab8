#pragma once
// Residual U-Net encoder-decoder. Five resolution levels with stride-2
// downsampling, nearest-neighbor upsampling and skip concatenation. Exposes
// the 256-channel bottleneck feature map (GAP input for the controller) and
// the 8-channel full-resolution map fed to the dynamic head.

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniseg/nn.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

struct BackboneConfig {
    std::vector<int> encoder_channels{32, 64, 128, 256};  // levels at x1..x1/8
    int bottleneck_channels = 256;                        // level at x1/16
    std::vector<int> decoder_channels{128, 64, 32, 32};   // deepest to shallowest
    int in_channels = 3;
    int out_channels = 8;       // decoder output M
    int feature_channels = 256; // exposed bottleneck F; projected if needed

    static BackboneConfig standard() { return {}; }

    // Channels scaled down 4x for fast runs; F stays 256 via 1x1 projection.
    static BackboneConfig tiny() {
        BackboneConfig c;
        c.encoder_channels = {8, 16, 32, 64};
        c.bottleneck_channels = 64;
        c.decoder_channels = {32, 16, 8, 8};
        return c;
    }

    int downsample_factor() const { return 1 << static_cast<int>(encoder_channels.size()); }
};

template <class T>
struct FeatureMaps {
    Tensor<T> bottleneck;   // N x feature_channels x h x w
    Tensor<T> decoder_out;  // N x out_channels x H x W
};

template <class T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
    if (x.h < 1 || x.w < 1) throw std::invalid_argument("global_average_pool: empty plane");
    Tensor<T> y(x.n, x.c, 1, 1);
    const size_t sp = static_cast<size_t>(x.h) * x.w;
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic) {
            const T* p = x.plane(in, ic);
            double s = 0.0;
            for (size_t i = 0; i < sp; ++i) s += static_cast<double>(p[i]);
            y.at(in, ic, 0, 0) = static_cast<T>(s / static_cast<double>(sp));
        }
    return y;
}

template <class T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, int h, int w) {
    Tensor<T> dx(dy.n, dy.c, h, w);
    const T scale = T(1) / static_cast<T>(static_cast<size_t>(h) * w);
    for (int in = 0; in < dy.n; ++in)
        for (int ic = 0; ic < dy.c; ++ic) {
            const T g = dy.at(in, ic, 0, 0) * scale;
            T* p = dx.plane(in, ic);
            for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) p[i] = g;
        }
    return dx;
}

template <class T>
class Backbone {
public:
    Backbone() = default;

    explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
        const auto& enc = cfg.encoder_channels;
        const auto& dec = cfg.decoder_channels;
        if (enc.size() != dec.size() || enc.empty())
            throw std::invalid_argument("Backbone: encoder/decoder level mismatch");
        int cin = cfg.in_channels;
        for (size_t i = 0; i < enc.size(); ++i) {
            enc_.emplace_back(cin, enc[i], i == 0 ? 1 : 2);
            cin = enc[i];
        }
        bottleneck_ = ResidualBlock<T>(cin, cfg.bottleneck_channels, 2);
        projected_ = cfg.bottleneck_channels != cfg.feature_channels;
        if (projected_)
            proj_ = Conv2d<T>(cfg.bottleneck_channels, cfg.feature_channels, 1);
        int dch = cfg.bottleneck_channels;
        for (size_t i = 0; i < dec.size(); ++i) {
            const int skip = enc[enc.size() - 1 - i];
            dec_.emplace_back(dch + skip, dec[i], 1);
            dch = dec[i];
        }
        final_ = Conv2d<T>(dch, cfg.out_channels, 1);
    }

    void init(std::mt19937_64& rng) {
        for (auto& b : enc_) b.init(rng);
        bottleneck_.init(rng);
        if (projected_) proj_.init(rng);
        for (auto& b : dec_) b.init(rng);
        final_.init(rng);
    }

    FeatureMaps<T> forward(const Tensor<T>& x, bool record) {
        if (x.c != cfg_.in_channels) throw std::invalid_argument("Backbone: input must be 3-channel");
        const int f = cfg_.downsample_factor();
        if (x.h % f != 0 || x.w % f != 0)
            throw std::invalid_argument("Backbone: spatial size not divisible by downsample factor");
        skips_.clear();
        Tensor<T> h = x;
        for (auto& b : enc_) {
            h = b.forward(h, record);
            skips_.push_back(h);
        }
        Tensor<T> bott = bottleneck_.forward(h, record);
        FeatureMaps<T> out;
        out.bottleneck = projected_ ? proj_.forward(bott, record) : bott;
        Tensor<T> d = bott;
        for (size_t i = 0; i < dec_.size(); ++i) {
            Tensor<T> up = upsample2x(d);
            if (record) up_in_channels_.resize(dec_.size());
            if (record) up_in_channels_[i] = up.c;
            d = dec_[i].forward(concat_channels(up, skips_[skips_.size() - 1 - i]), record);
        }
        out.decoder_out = final_.forward(d, record);
        if (!record) skips_.clear();
        return out;
    }

    // Backward from gradients on the exposed bottleneck F and decoder output M.
    // Returns nothing; parameter gradients accumulate in place.
    void backward(const Tensor<T>& d_feature, const Tensor<T>& d_decoder_out) {
        Tensor<T> dd = final_.backward(d_decoder_out);
        std::vector<Tensor<T>> skip_grads(dec_.size());
        for (size_t ri = dec_.size(); ri-- > 0;) {
            Tensor<T> dcat = dec_[ri].backward(dd);
            auto [dup, dskip] = split_channels(dcat, up_in_channels_[ri]);
            skip_grads[dec_.size() - 1 - ri] = std::move(dskip);
            dd = upsample2x_backward(dup);
        }
        // dd now holds the decoder-path gradient at the bottleneck output.
        Tensor<T> dbott = projected_ ? proj_.backward(d_feature) : d_feature;
        for (size_t i = 0; i < dbott.size(); ++i) dbott.v[i] += dd.v[i];
        Tensor<T> de = bottleneck_.backward(dbott);
        for (size_t ri = enc_.size(); ri-- > 0;) {
            if (ri < skip_grads.size()) {
                const Tensor<T>& sg = skip_grads[ri];
                for (size_t i = 0; i < de.size(); ++i) de.v[i] += sg.v[i];
            }
            de = enc_[ri].backward(de);
        }
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        for (size_t i = 0; i < enc_.size(); ++i)
            enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
        bottleneck_.collect(prefix + ".bottleneck", out);
        if (projected_) proj_.collect(prefix + ".proj", out);
        for (size_t i = 0; i < dec_.size(); ++i)
            dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
        final_.collect(prefix + ".final", out);
    }

    void release_saved() {
        for (auto& b : enc_) b.release_saved();
        bottleneck_.release_saved();
        if (projected_) proj_.release_saved();
        for (auto& b : dec_) b.release_saved();
        final_.release_saved();
        skips_.clear();
    }

    const BackboneConfig& config() const { return cfg_; }

private:
    BackboneConfig cfg_;
    std::vector<ResidualBlock<T>> enc_;
    ResidualBlock<T> bottleneck_;
    Conv2d<T> proj_;
    bool projected_ = false;
    std::vector<ResidualBlock<T>> dec_;
    Conv2d<T> final_;
    std::vector<Tensor<T>> skips_;
    std::vector<int> up_in_channels_;
};

}  // namespace omniseg
