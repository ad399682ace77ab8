#include "omniseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "omniseg/augment.hpp"
#include "omniseg/losses.hpp"
#include "omniseg/metrics.hpp"
#include "omniseg/rng.hpp"

namespace omniseg {

void TrainConfig::validate() const {
    if (supervised_epochs < 0 || total_epochs < supervised_epochs)
        throw std::invalid_argument("TrainConfig: need 0 <= supervised_epochs <= total_epochs");
    if (w_dice < 0 || w_ce < 0 || w_kl < 0 || w_mse < 0)
        throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
    for (const auto& [t, c] : pseudo_patch_counts)
        if (c < 0) throw std::invalid_argument("TrainConfig: pseudo counts must be >= 0");
    if (batch_size < 1 || supervised_patches_per_epoch < 0)
        throw std::invalid_argument("TrainConfig: bad batch/patch counts");
    if (pseudo_refresh_interval < 1)
        throw std::invalid_argument("TrainConfig: refresh interval must be >= 1");
}

BatchSegmenter model_segmenter(OmniSegModel<float>& model, int batch_size) {
    return [&model, batch_size](const std::vector<const PatchRecord*>& patches, Tissue tissue,
                                Mag mag) {
        std::vector<Mask> out;
        out.reserve(patches.size());
        for (size_t start = 0; start < patches.size(); start += static_cast<size_t>(batch_size)) {
            const size_t count = std::min(static_cast<size_t>(batch_size), patches.size() - start);
            Tensor<float> batch(static_cast<int>(count), 3, kPatchSize, kPatchSize);
            for (size_t i = 0; i < count; ++i)
                std::copy(patches[start + i]->pixels.v.begin(), patches[start + i]->pixels.v.end(),
                          batch.plane(static_cast<int>(i), 0));
            std::vector<Mask> masks = model.segment(batch, tissue, mag);
            for (auto& m : masks) out.push_back(std::move(m));
        }
        return out;
    };
}

Mask segment_image(const BatchSegmenter& segment, const ImageU8& image, Tissue tissue,
                   const std::string& image_id) {
    const Mag mag = optimal_scale(tissue);
    const std::vector<PatchRecord> patches = tile_image(image, mag, 1.0, image_id);
    std::vector<const PatchRecord*> refs;
    refs.reserve(patches.size());
    for (const auto& p : patches) refs.push_back(&p);
    const std::vector<Mask> masks = segment(refs, tissue, mag);
    std::vector<std::pair<const PatchRecord*, const Mask*>> pairs;
    pairs.reserve(patches.size());
    for (size_t i = 0; i < patches.size(); ++i) pairs.emplace_back(&patches[i], &masks[i]);
    return aggregate_predictions(pairs, image.h, image.w);
}

std::map<Tissue, Mask> generate_pseudo_labels(const BatchSegmenter& segment, const ImageU8& image,
                                              const std::vector<Tissue>& tissues,
                                              const std::string& image_id) {
    std::map<Tissue, Mask> out;
    for (Tissue t : tissues) out.emplace(t, segment_image(segment, image, t, image_id));
    return out;
}

Trainer::Trainer(const DatasetManifest& manifest, const TrainConfig& cfg,
                 const ModelConfig& model_cfg)
    : manifest_(manifest), cfg_(cfg), model_([&] {
          ModelConfig mc = model_cfg;
          mc.scale_controller = cfg.scale_controller;
          return mc;
      }()),
      sgd_(cfg.lr, cfg.momentum) {
    cfg_.validate();
    model_.init(substream(cfg_.seed, 0x0DE1));
    params_ = model_.params();

    for (const DatasetImageEntry* e : manifest_.in_split("train")) {
        TrainImage ti;
        ti.entry = *e;
        ti.image = load_dataset_image(manifest_, *e);
        const Mask labeled = load_dataset_mask(manifest_, *e, e->labeled);
        ti.patches = make_supervised_patches(ti.image, labeled, e->labeled, e->id);
        train_images_.push_back(std::move(ti));
    }
    if (train_images_.empty()) throw std::invalid_argument("Trainer: empty training split");

    for (Tissue t : all_tissues()) {
        if (cfg_.fig5_mode && (t == Tissue::CAP || t == Tissue::TUFT)) continue;
        auto it = cfg_.pseudo_patch_counts.find(t);
        if (it != cfg_.pseudo_patch_counts.end() && it->second > 0) pseudo_tissues_.push_back(t);
    }
}

void Trainer::refresh_pseudo(int epoch_index) {
    const BatchSegmenter segment = model_segmenter(model_);
    for (auto& ti : train_images_) {
        std::vector<Tissue> tissues;
        for (Tissue t : pseudo_tissues_)
            if (t != ti.entry.labeled) tissues.push_back(t);
        ti.pseudo = generate_pseudo_labels(segment, ti.image, tissues, ti.entry.id);
        if (cfg_.resolve_pseudo_overlaps) resolve_overlaps(ti.pseudo);
        if (!cfg_.matching_selection && ti.grid_cache.empty()) {
            // Grid strategy: pseudo patches come from each tissue's own
            // optimal-scale tiling instead of supervised locations.
            ti.grid_cache.resize(tissues.size());
            for (size_t k = 0; k < tissues.size(); ++k)
                ti.grid_cache[k] = tile_image(ti.image, optimal_scale(tissues[k]), 1.0,
                                              ti.entry.id);
        }
    }
    (void)epoch_index;
    pseudo_ready_ = true;
}

std::vector<Trainer::Sample> Trainer::collect_supervised(std::mt19937_64& rng) {
    // Balanced by class: cycle through each class's shuffled patch list.
    std::map<Tissue, std::vector<const PatchRecord*>> by_class;
    for (const auto& ti : train_images_)
        for (const auto& p : ti.patches) by_class[*p.tissue].push_back(&p);
    std::vector<Tissue> classes;
    for (auto& [t, list] : by_class) {
        std::shuffle(list.begin(), list.end(), rng);
        classes.push_back(t);
    }
    std::vector<Sample> out;
    std::map<Tissue, size_t> cursor;
    size_t ci = 0;
    while (static_cast<int>(out.size()) < cfg_.supervised_patches_per_epoch) {
        const Tissue t = classes[ci % classes.size()];
        ++ci;
        auto& list = by_class[t];
        const PatchRecord* p = list[cursor[t]++ % list.size()];
        out.push_back({p, &*p->label, t, p->mag, false});
    }
    return out;
}

std::vector<Trainer::Sample> Trainer::collect_pseudo(std::mt19937_64& rng,
                                                     std::vector<Mask>& label_storage,
                                                     EpochReport& report) {
    std::vector<Sample> out;
    // Reserve so stored labels never reallocate under the samples.
    size_t worst = 0;
    for (const auto& ti : train_images_)
        for (Tissue t : pseudo_tissues_)
            if (t != ti.entry.labeled)
                worst += static_cast<size_t>(cfg_.pseudo_patch_counts.at(t));
    label_storage.reserve(worst);

    for (auto& ti : train_images_) {
        size_t grid_idx = 0;
        for (size_t k = 0; k < pseudo_tissues_.size(); ++k) {
            const Tissue t = pseudo_tissues_[k];
            if (t == ti.entry.labeled) continue;
            const auto canvas_it = ti.pseudo.find(t);
            if (canvas_it == ti.pseudo.end()) continue;
            const int want = cfg_.pseudo_patch_counts.at(t);
            const std::vector<PatchRecord>* pool = &ti.patches;
            if (!cfg_.matching_selection) {
                // grid_cache is indexed over this image's pseudo tissues in order
                size_t pos = 0;
                for (size_t k2 = 0; k2 < k; ++k2)
                    if (pseudo_tissues_[k2] != ti.entry.labeled) ++pos;
                grid_idx = pos;
                pool = &ti.grid_cache[grid_idx];
            }
            if (pool->empty()) continue;
            std::vector<size_t> order(pool->size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            const size_t take = std::min(static_cast<size_t>(want), pool->size());
            for (size_t i = 0; i < take; ++i) {
                const PatchRecord* p = &(*pool)[order[i]];
                label_storage.push_back(
                    crop_canvas_to_patch(canvas_it->second, p->x, p->y, p->side));
                out.push_back({p, &label_storage.back(), t, p->mag, true});
                ++report.pseudo_class_counts[t];
            }
        }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

void Trainer::train_batch(const std::vector<Sample>& batch, bool consistency, EpochReport& report,
                          std::mt19937_64& rng) {
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Sgd<float>::zero_grad(params_);
    double batch_loss = 0.0;
    for (const Sample& s : batch) {
        const Augmentation aug_a = random_augmentation(rng, cfg_.aug_jitter);
        const Tensor<float> view_a = augment_patch(s.patch->pixels, aug_a);
        const Mask label_a = augment_label(*s.label, aug_a);
        const SampleTask task{index_of(s.tissue), index_of(s.mag)};

        // Fixed consistency target from a second augmentation, no gradient.
        Tensor<float> target_logits;
        Augmentation aug_b;
        if (consistency) {
            aug_b = random_augmentation(rng, cfg_.aug_jitter);
            const Tensor<float> view_b = augment_patch(s.patch->pixels, aug_b);
            ForwardResult<float> rb = model_.forward_eval(view_b, std::array{task});
            // Align view_b's prediction into view_a's frame.
            const Tensor<float> in_patch_frame = align_to_patch(rb.logits, aug_b);
            target_logits = apply_dihedral(in_patch_frame, aug_a.geo);
        }

        ForwardResult<float> ra = model_.forward_train(view_a, std::array{task});
        Tensor<float> dlogits(1, 2, ra.logits.h, ra.logits.w);
        const size_t hw = static_cast<size_t>(ra.logits.h) * ra.logits.w;
        const SupervisedLoss sup =
            dice_ce_loss(ra.logits.plane(0, 0), label_a.v.data(), hw, cfg_.w_dice, cfg_.w_ce,
                         dlogits.plane(0, 0), inv_b);
        report.dice += sup.dice;
        report.ce += sup.ce;
        double sample_loss = cfg_.w_dice * sup.dice + cfg_.w_ce * sup.ce;
        if (consistency) {
            const ConsistencyLoss cons =
                consistency_loss(ra.logits.plane(0, 0), target_logits.plane(0, 0), hw, cfg_.w_kl,
                                 cfg_.w_mse, dlogits.plane(0, 0), inv_b);
            report.kl += cons.kl;
            report.mse += cons.mse;
            sample_loss += cfg_.w_kl * cons.kl + cfg_.w_mse * cons.mse;
        }
        if (!std::isfinite(sample_loss))
            throw NumericError("train_batch: non-finite loss at epoch " +
                               std::to_string(report.epoch));
        batch_loss += sample_loss;
        model_.backward(dlogits);
    }
    report.total += batch_loss;
    sgd_.step(params_);
}

EpochReport Trainer::run_epoch(int epoch_index) {
    EpochReport report;
    report.epoch = epoch_index;
    for (Tissue t : all_tissues()) report.pseudo_class_counts[t] = 0;

    std::mt19937_64 rng(substream(cfg_.seed, 0xE0000 + static_cast<uint64_t>(epoch_index)));

    const bool semi = epoch_index >= cfg_.supervised_epochs && !pseudo_tissues_.empty();
    if (semi) {
        const int since = epoch_index - cfg_.supervised_epochs;
        if (!pseudo_ready_ || since % cfg_.pseudo_refresh_interval == 0) refresh_pseudo(epoch_index);
    }

    std::vector<Sample> samples = collect_supervised(rng);
    report.supervised_samples = static_cast<int>(samples.size());
    std::vector<Mask> pseudo_labels;
    if (semi) {
        std::vector<Sample> ps = collect_pseudo(rng, pseudo_labels, report);
        report.pseudo_samples = static_cast<int>(ps.size());
        samples.insert(samples.end(), ps.begin(), ps.end());
    }

    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(cfg_.batch_size)) {
        const size_t count =
            std::min(static_cast<size_t>(cfg_.batch_size), samples.size() - start);
        std::vector<Sample> batch(samples.begin() + static_cast<long>(start),
                                  samples.begin() + static_cast<long>(start + count));
        // Consistency applies to pseudo-labeled samples in the semi phase.
        bool any_pseudo = false;
        for (const auto& s : batch) any_pseudo = any_pseudo || s.pseudo;
        std::vector<Sample> sup_part, pseudo_part;
        for (const auto& s : batch) (s.pseudo ? pseudo_part : sup_part).push_back(s);
        if (!sup_part.empty()) train_batch(sup_part, false, report, rng);
        if (!pseudo_part.empty())
            train_batch(pseudo_part, cfg_.consistency_reg, report, rng);
    }

    const double denom = std::max<size_t>(1, samples.size());
    report.dice /= denom;
    report.ce /= denom;
    const double pseudo_denom = std::max(1, report.pseudo_samples);
    report.kl /= pseudo_denom;
    report.mse /= pseudo_denom;
    report.total /= denom;

    if (cfg_.eval_interval > 0 && ((epoch_index + 1) % cfg_.eval_interval == 0 ||
                                   epoch_index + 1 == cfg_.total_epochs)) {
        report.val_mean_dice = evaluate_split("val").mean_dice;
    }
    history_.push_back(report);
    return report;
}

std::vector<EpochReport> Trainer::run_all() {
    for (int e = 0; e < cfg_.total_epochs; ++e) run_epoch(e);
    return history_;
}

SplitEvaluation Trainer::evaluate_split(const std::string& split) {
    SplitEvaluation out;
    const BatchSegmenter segment = model_segmenter(model_);
    std::map<Tissue, std::vector<double>> dices;
    for (const DatasetImageEntry* e : manifest_.in_split(split)) {
        const ImageU8 image = load_dataset_image(manifest_, *e);
        for (Tissue t : all_tissues()) {
            const Mask pred = segment_image(segment, image, t, e->id);
            const Mask gt = load_dataset_mask(manifest_, *e, t);
            dices[t].push_back(dice_pct(pred, gt) / 100.0);
        }
    }
    double mean = 0.0;
    for (Tissue t : all_tissues()) {
        const auto& v = dices[t];
        double m = 0.0;
        for (double d : v) m += d;
        m = v.empty() ? 0.0 : m / static_cast<double>(v.size());
        out.per_class_dice[t] = m;
        mean += m;
    }
    out.mean_dice = mean / kTissueCount;
    return out;
}

}  // namespace omniseg
