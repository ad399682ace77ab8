#pragma once
// Full network: one shared backbone plus the class/scale-conditioned
// controller and per-sample dynamic head. The backbone never sees the task;
// conditioning enters only through the 162 head parameters.

#include <array>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "omniseg/backbone.hpp"
#include "omniseg/fusion.hpp"
#include "omniseg/mask.hpp"
#include "omniseg/task_model.hpp"

namespace omniseg {

struct ModelConfig {
    BackboneConfig backbone;
    FusionConfig fusion;
    bool scale_controller = true;   // off: scale vector replaced by a constant
    bool learned_scale_embed = false;
    std::array<std::string, kTissueCount> class_order = canonical_class_order();
    std::array<std::string, kMagCount> scale_order = canonical_scale_order();

    static ModelConfig standard() { return {}; }
    static ModelConfig tiny() {
        ModelConfig c;
        c.backbone = BackboneConfig::tiny();
        return c;
    }
};

struct SampleTask {
    int class_idx;
    int scale_idx;
};

inline SampleTask sample_task(Tissue t, Mag m) { return {index_of(t), index_of(m)}; }

template <class T>
struct ForwardResult {
    FeatureMaps<T> features;
    Tensor<T> gap;                                    // N x gap_dim x 1 x 1
    std::vector<std::array<T, kHeadParamCount>> omegas;
    Tensor<T> logits;                                 // N x 2 x H x W
};

template <class T>
class OmniSegModel {
public:
    OmniSegModel() = default;

    explicit OmniSegModel(const ModelConfig& cfg) : cfg_(cfg), backbone_(cfg.backbone),
                                                    controller_(cfg.fusion) {
        if (cfg.backbone.feature_channels != cfg.fusion.gap_dim)
            throw std::invalid_argument("model: GAP width must match fusion gap_dim");
        if (cfg.fusion.class_dim != kTissueCount || cfg.fusion.scale_dim != kMagCount)
            throw std::invalid_argument("model: fusion vocabulary mismatch");
        if (cfg.learned_scale_embed)
            embed_w_.assign(static_cast<size_t>(cfg.fusion.expanded_scale_dim()) * kMagCount,
                            T(0));
        embed_gw_.assign(embed_w_.size(), T(0));
    }

    void init(uint64_t seed) {
        std::mt19937_64 rng(seed);
        backbone_.init(rng);
        controller_.init(rng);
        if (cfg_.learned_scale_embed) {
            // Start at the tiling expansion so the learned embedding is a
            // refinement of the parameter-free default.
            const int f = cfg_.fusion.expand_factor;
            for (int p = 0; p < kMagCount; ++p)
                for (int q = 0; q < f; ++q)
                    embed_w_[static_cast<size_t>(p * f + q) * kMagCount + p] = T(1);
        }
    }

    const ModelConfig& config() const { return cfg_; }

    std::array<T, kMagCount> scale_vector(int scale_idx) const {
        std::array<T, kMagCount> s{};
        if (cfg_.scale_controller) {
            s[static_cast<size_t>(scale_idx)] = T(1);
        } else {
            s.fill(T(1) / T(kMagCount));
        }
        return s;
    }

    std::vector<T> expand_scale(std::span<const T> s4) const {
        if (cfg_.learned_scale_embed) {
            std::vector<T> out(static_cast<size_t>(cfg_.fusion.expanded_scale_dim()), T(0));
            for (size_t c = 0; c < out.size(); ++c) {
                double acc = 0.0;
                for (int p = 0; p < kMagCount; ++p)
                    acc += static_cast<double>(embed_w_[c * kMagCount + p]) * s4[static_cast<size_t>(p)];
                out[c] = static_cast<T>(acc);
            }
            return out;
        }
        return expand_scale_vector(s4, cfg_.fusion.expand_factor);
    }

    ForwardResult<T> forward(const Tensor<T>& x, std::span<const SampleTask> tasks, bool record) {
        if (static_cast<int>(tasks.size()) != x.n)
            throw std::invalid_argument("model: one task per sample required");
        ForwardResult<T> out;
        out.features = backbone_.forward(x, record);
        out.gap = global_average_pool(out.features.bottleneck);
        const int gdim = cfg_.fusion.gap_dim;
        out.omegas.resize(tasks.size());
        std::vector<DynamicHeadParams<T>> head_params(tasks.size());
        if (record) {
            saved_tasks_.assign(tasks.begin(), tasks.end());
            saved_gap_ = out.gap;
            saved_s4_.resize(tasks.size());
            saved_s64_.resize(tasks.size());
            saved_fused_.clear();
            if (cfg_.fusion.mode == FusionConfig::Mode::kConcat)
                saved_fused_.resize(tasks.size());
        }
        for (size_t i = 0; i < tasks.size(); ++i) {
            const auto s4 = scale_vector(tasks[i].scale_idx);
            const std::vector<T> s64 = expand_scale(std::span<const T>(s4));
            std::span<const T> gap_row(out.gap.plane(static_cast<int>(i), 0),
                                       static_cast<size_t>(gdim));
            if (cfg_.fusion.mode == FusionConfig::Mode::kOuter) {
                out.omegas[i] = controller_.forward_fused(gap_row, tasks[i].class_idx, s64);
            } else {
                std::vector<T> fused = concat_fused(gap_row, tasks[i].class_idx, s64);
                out.omegas[i] = controller_.forward_dense(fused);
                if (record) saved_fused_[i] = std::move(fused);
            }
            head_params[i] = slice_head_params<T>(out.omegas[i]);
            if (record) {
                saved_s4_[i] = s4;
                saved_s64_[i] = s64;
            }
        }
        out.logits = head_.forward(out.features.decoder_out, head_params, record);
        return out;
    }

    // Propagates loss gradients from the logits into every parameter.
    void backward(const Tensor<T>& dlogits) {
        HeadGrad<T> hg = head_.backward(dlogits);
        const int gdim = cfg_.fusion.gap_dim;
        Tensor<T> dgap(static_cast<int>(saved_tasks_.size()), gdim, 1, 1);
        for (size_t i = 0; i < saved_tasks_.size(); ++i) {
            std::span<const T> domega(hg.dparams[i].data(), kHeadParamCount);
            std::span<const T> gap_row(saved_gap_.plane(static_cast<int>(i), 0),
                                       static_cast<size_t>(gdim));
            std::vector<T> dgap_row;
            std::vector<T> ds64(saved_s64_[i].size(), T(0));
            if (cfg_.fusion.mode == FusionConfig::Mode::kOuter) {
                dgap_row = controller_.backward_fused(
                    domega, gap_row, saved_tasks_[i].class_idx, saved_s64_[i],
                    cfg_.learned_scale_embed ? std::span<T>(ds64) : std::span<T>{});
            } else {
                std::vector<T> dfused = controller_.backward_dense(saved_fused_[i], domega);
                dgap_row.assign(dfused.begin(), dfused.begin() + gdim);
                if (cfg_.learned_scale_embed)
                    std::copy(dfused.end() - static_cast<long>(ds64.size()), dfused.end(),
                              ds64.begin());
            }
            if (cfg_.learned_scale_embed) {
                for (size_t c = 0; c < ds64.size(); ++c)
                    for (int p = 0; p < kMagCount; ++p)
                        embed_gw_[c * kMagCount + p] +=
                            ds64[c] * saved_s4_[i][static_cast<size_t>(p)];
            }
            std::copy(dgap_row.begin(), dgap_row.end(), dgap.plane(static_cast<int>(i), 0));
        }
        Tensor<T> dfeat = global_average_pool_backward(dgap, feature_h_, feature_w_);
        backbone_.backward(dfeat, hg.dm);
    }

    // Inference: segment a batch of patches for one (tissue, scale) task.
    std::vector<Mask> segment(const Tensor<T>& x, Tissue tissue, Mag scale) {
        std::vector<SampleTask> tasks(static_cast<size_t>(x.n), sample_task(tissue, scale));
        ForwardResult<T> r = forward_eval(x, tasks);
        return predict_mask(r.logits);
    }

    ForwardResult<T> forward_eval(const Tensor<T>& x, std::span<const SampleTask> tasks) {
        ForwardResult<T> r = forward(x, tasks, false);
        return r;
    }

    // Forward with recording; caller must invoke backward() before the next
    // recorded forward. Tracks the bottleneck spatial size for GAP backward.
    ForwardResult<T> forward_train(const Tensor<T>& x, std::span<const SampleTask> tasks) {
        ForwardResult<T> r = forward(x, tasks, true);
        feature_h_ = r.features.bottleneck.h;
        feature_w_ = r.features.bottleneck.w;
        return r;
    }

    void collect(ParamList<T>& out) {
        backbone_.collect("backbone", out);
        controller_.collect("controller", out);
        if (cfg_.learned_scale_embed) out.push_back({"scale_embed.weight", &embed_w_, &embed_gw_});
    }

    ParamList<T> params() {
        ParamList<T> out;
        collect(out);
        return out;
    }

    void release_saved() {
        backbone_.release_saved();
        head_.release_saved();
        saved_tasks_.clear();
        saved_s4_.clear();
        saved_s64_.clear();
        saved_fused_.clear();
        saved_gap_ = Tensor<T>();
    }

    Backbone<T>& backbone() { return backbone_; }
    Controller<T>& controller() { return controller_; }

    // Omega table for inspection: one 162-vector per (class, scale) pair,
    // computed with a unit GAP vector so the table depends on weights only.
    std::vector<std::array<T, kHeadParamCount>> omega_table() {
        std::vector<std::array<T, kHeadParamCount>> out;
        std::vector<T> gap(static_cast<size_t>(cfg_.fusion.gap_dim), T(1));
        for (Tissue t : all_tissues())
            for (Mag m : all_mags()) {
                const auto s4 = scale_vector(index_of(m));
                const std::vector<T> s64 = expand_scale(std::span<const T>(s4));
                if (cfg_.fusion.mode == FusionConfig::Mode::kOuter) {
                    out.push_back(controller_.forward_fused(gap, index_of(t), s64));
                } else {
                    out.push_back(controller_.forward_dense(concat_fused(gap, index_of(t), s64)));
                }
            }
        return out;
    }

private:
    std::vector<T> concat_fused(std::span<const T> gap, int class_idx,
                                std::span<const T> s64) const {
        std::vector<T> fused;
        fused.reserve(gap.size() + kTissueCount + s64.size());
        fused.insert(fused.end(), gap.begin(), gap.end());
        for (int k = 0; k < kTissueCount; ++k) fused.push_back(k == class_idx ? T(1) : T(0));
        fused.insert(fused.end(), s64.begin(), s64.end());
        return fused;
    }

    ModelConfig cfg_;
    Backbone<T> backbone_;
    Controller<T> controller_;
    DynamicHead<T> head_;
    std::vector<T> embed_w_, embed_gw_;

    std::vector<SampleTask> saved_tasks_;
    Tensor<T> saved_gap_;
    std::vector<std::array<T, kMagCount>> saved_s4_;
    std::vector<std::vector<T>> saved_s64_;
    std::vector<std::vector<T>> saved_fused_;
    int feature_h_ = 0, feature_w_ = 0;
};

}  // namespace omniseg
