#pragma once
// Two-phase training: supervised Dice+CE only for the first
// `supervised_epochs`, then joint supervised + semi-supervised learning with
// online pseudo-label canvases, matched pseudo patches and KL+MSE
// consistency between augmented views.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "omniseg/dataset.hpp"
#include "omniseg/model.hpp"
#include "omniseg/nn.hpp"
#include "omniseg/pyramid.hpp"
#include "omniseg/synth.hpp"

namespace omniseg {

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
    int supervised_epochs = 50;
    int total_epochs = 100;
    double lr = 0.01;
    double momentum = 0.9;
    std::map<Tissue, int> pseudo_patch_counts = default_pseudo_counts();
    double w_dice = 1.0, w_ce = 1.0;
    double w_kl = 0.5, w_mse = 0.5;
    uint64_t seed = 7;

    // Ablation axes.
    bool scale_controller = true;    // SC
    bool matching_selection = true;  // MS
    bool consistency_reg = true;     // CR

    bool fig5_mode = false;  // exclude CAP/TUFT from pseudo-label generation
    bool symmetric_consistency = false;
    bool resolve_pseudo_overlaps = true;

    int supervised_patches_per_epoch = 24;
    int batch_size = 4;
    int pseudo_refresh_interval = 10;  // epochs between canvas regeneration
    int eval_interval = 10;
    float aug_jitter = 0.1f;

    static std::map<Tissue, int> default_pseudo_counts() {
        return {{Tissue::DT, 4},  {Tissue::PT, 4},  {Tissue::CAP, 4},
                {Tissue::TUFT, 4}, {Tissue::VES, 4}, {Tissue::PTC, 16}};
    }

    void validate() const;
};

struct EpochReport {
    int epoch = 0;
    double dice = 0.0, ce = 0.0, kl = 0.0, mse = 0.0, total = 0.0;
    int supervised_samples = 0;
    int pseudo_samples = 0;
    std::map<Tissue, int> pseudo_class_counts;
    std::optional<double> val_mean_dice;
};

struct SplitEvaluation {
    std::map<Tissue, double> per_class_dice;  // fractional [0,1]
    double mean_dice = 0.0;
};

// Batch segmentation interface: patches -> masks for one (tissue, scale)
// task. Lets tests drive the pyramid machinery with oracle segmenters.
using BatchSegmenter = std::function<std::vector<Mask>(
    const std::vector<const PatchRecord*>&, Tissue, Mag)>;

BatchSegmenter model_segmenter(OmniSegModel<float>& model, int batch_size = 8);

// Tiles at each tissue's optimal scale, segments, aggregates to 40x.
std::map<Tissue, Mask> generate_pseudo_labels(const BatchSegmenter& segment, const ImageU8& image,
                                              const std::vector<Tissue>& tissues,
                                              const std::string& image_id);

Mask segment_image(const BatchSegmenter& segment, const ImageU8& image, Tissue tissue,
                   const std::string& image_id);

class Trainer {
public:
    Trainer(const DatasetManifest& manifest, const TrainConfig& cfg, const ModelConfig& model_cfg);

    EpochReport run_epoch(int epoch_index);
    std::vector<EpochReport> run_all();

    SplitEvaluation evaluate_split(const std::string& split);

    OmniSegModel<float>& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<EpochReport>& history() const { return history_; }
    const std::vector<Tissue>& pseudo_tissues() const { return pseudo_tissues_; }

private:
    struct TrainImage {
        DatasetImageEntry entry;
        ImageU8 image;
        std::vector<PatchRecord> patches;  // supervised, at the labeled scale
        std::map<Tissue, Mask> pseudo;     // refreshed canvases
        std::vector<std::vector<PatchRecord>> grid_cache;  // per pseudo tissue (MS off)
    };

    struct Sample {
        const PatchRecord* patch;
        const Mask* label;
        Tissue tissue;
        Mag mag;
        bool pseudo;
    };

    void refresh_pseudo(int epoch_index);
    std::vector<Sample> collect_supervised(std::mt19937_64& rng);
    std::vector<Sample> collect_pseudo(std::mt19937_64& rng, std::vector<Mask>& label_storage,
                                       EpochReport& report);
    void train_batch(const std::vector<Sample>& batch, bool consistency, EpochReport& report,
                     std::mt19937_64& rng);

    DatasetManifest manifest_;
    TrainConfig cfg_;
    OmniSegModel<float> model_;
    Sgd<float> sgd_;
    ParamList<float> params_;
    std::vector<TrainImage> train_images_;
    std::vector<Tissue> pseudo_tissues_;
    std::vector<EpochReport> history_;
    bool pseudo_ready_ = false;
};

}  // namespace omniseg
