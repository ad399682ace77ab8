#include "omniseg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "omniseg/checkpoint.hpp"
#include "omniseg/image_io.hpp"
#include "omniseg/metrics.hpp"
#include "omniseg/plots.hpp"
#include "omniseg/rng.hpp"

namespace omniseg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

int run_guarded(const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "error (numeric): " << e.what() << "\n";
        return kExitNumeric;
    } catch (const CheckpointError& e) {
        std::cerr << "error (checkpoint): " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error (data): " << e.what() << "\n";
        return kExitData;
    }
}

void write_frozen_config(const fs::path& out_dir, const std::string& command, const json& j) {
    json wrapper;
    wrapper["command"] = command;
    wrapper["config"] = j;
    std::ofstream out(out_dir / "config.resolved.json");
    out << wrapper.dump(2) << "\n";
}

Tissue parse_tissue(const std::string& s) {
    const auto t = tissue_from_string(s);
    if (!t) throw std::invalid_argument("unknown tissue '" + s + "'");
    return *t;
}

Mag parse_mag(const std::string& s) {
    const auto m = mag_from_string(s);
    if (!m) throw std::invalid_argument("unknown magnification '" + s + "'");
    return *m;
}

std::vector<Tissue> parse_tissues(const std::vector<std::string>& names) {
    std::vector<Tissue> out;
    if (names.empty()) {
        for (Tissue t : all_tissues()) out.push_back(t);
        return out;
    }
    for (const auto& n : names) out.push_back(parse_tissue(n));
    return out;
}

ModelConfig make_model_config(bool tiny_backbone) {
    return tiny_backbone ? ModelConfig::tiny() : ModelConfig::standard();
}

}  // namespace

json train_config_to_json(const TrainConfig& cfg) {
    json counts;
    for (const auto& [t, c] : cfg.pseudo_patch_counts) counts[to_string(t)] = c;
    return json{{"supervised_epochs", cfg.supervised_epochs},
                {"total_epochs", cfg.total_epochs},
                {"lr", cfg.lr},
                {"momentum", cfg.momentum},
                {"pseudo_patch_counts", counts},
                {"w_dice", cfg.w_dice},
                {"w_ce", cfg.w_ce},
                {"w_kl", cfg.w_kl},
                {"w_mse", cfg.w_mse},
                {"seed", cfg.seed},
                {"scale_controller", cfg.scale_controller},
                {"matching_selection", cfg.matching_selection},
                {"consistency_reg", cfg.consistency_reg},
                {"fig5_mode", cfg.fig5_mode},
                {"symmetric_consistency", cfg.symmetric_consistency},
                {"resolve_pseudo_overlaps", cfg.resolve_pseudo_overlaps},
                {"supervised_patches_per_epoch", cfg.supervised_patches_per_epoch},
                {"batch_size", cfg.batch_size},
                {"pseudo_refresh_interval", cfg.pseudo_refresh_interval},
                {"eval_interval", cfg.eval_interval},
                {"aug_jitter", cfg.aug_jitter}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
    cfg.supervised_epochs = j.value("supervised_epochs", cfg.supervised_epochs);
    cfg.total_epochs = j.value("total_epochs", cfg.total_epochs);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.momentum = j.value("momentum", cfg.momentum);
    if (j.contains("pseudo_patch_counts"))
        for (const auto& [name, c] : j.at("pseudo_patch_counts").items())
            cfg.pseudo_patch_counts[parse_tissue(name)] = c.get<int>();
    cfg.w_dice = j.value("w_dice", cfg.w_dice);
    cfg.w_ce = j.value("w_ce", cfg.w_ce);
    cfg.w_kl = j.value("w_kl", cfg.w_kl);
    cfg.w_mse = j.value("w_mse", cfg.w_mse);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.scale_controller = j.value("scale_controller", cfg.scale_controller);
    cfg.matching_selection = j.value("matching_selection", cfg.matching_selection);
    cfg.consistency_reg = j.value("consistency_reg", cfg.consistency_reg);
    cfg.fig5_mode = j.value("fig5_mode", cfg.fig5_mode);
    cfg.symmetric_consistency = j.value("symmetric_consistency", cfg.symmetric_consistency);
    cfg.resolve_pseudo_overlaps = j.value("resolve_pseudo_overlaps", cfg.resolve_pseudo_overlaps);
    cfg.supervised_patches_per_epoch =
        j.value("supervised_patches_per_epoch", cfg.supervised_patches_per_epoch);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.pseudo_refresh_interval = j.value("pseudo_refresh_interval", cfg.pseudo_refresh_interval);
    cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
    cfg.aug_jitter = j.value("aug_jitter", cfg.aug_jitter);
    return cfg;
}

json synth_spec_to_json(const SynthSpec& spec) {
    return json{{"image_side_40x", spec.image_side_40x},
                {"cap_count", spec.cap_count},
                {"pt_count", spec.pt_count},
                {"dt_count", spec.dt_count},
                {"ves_count", spec.ves_count},
                {"ptc_count", spec.ptc_count},
                {"label_mode", spec.label_mode == LabelMode::kPartial ? "partial" : "dense"},
                {"noise_sigma", spec.noise_sigma},
                {"stain_shift", spec.stain_shift}};
}

SynthSpec synth_spec_from_json(const json& j, SynthSpec spec) {
    spec.image_side_40x = j.value("image_side_40x", spec.image_side_40x);
    spec.cap_count = j.value("cap_count", spec.cap_count);
    spec.pt_count = j.value("pt_count", spec.pt_count);
    spec.dt_count = j.value("dt_count", spec.dt_count);
    spec.ves_count = j.value("ves_count", spec.ves_count);
    spec.ptc_count = j.value("ptc_count", spec.ptc_count);
    if (j.contains("label_mode"))
        spec.label_mode =
            j.at("label_mode").get<std::string>() == "dense" ? LabelMode::kDense
                                                             : LabelMode::kPartial;
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.stain_shift = j.value("stain_shift", spec.stain_shift);
    return spec;
}

DirLock::DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    file_ = dir / ".omniseg.lock";
    if (fs::exists(file_))
        throw std::runtime_error("output directory is locked by another run: " + file_.string());
    std::ofstream out(file_);
    out << "locked\n";
    held_ = true;
}

DirLock::~DirLock() {
    if (held_) {
        std::error_code ec;
        fs::remove(file_, ec);
    }
}

int cmd_synth(const SynthOptions& opt) {
    return run_guarded([&] {
        if (opt.images < 1) throw std::invalid_argument("synth: --images must be >= 1");
        DirLock lock(opt.out_dir);
        generate_dataset(opt.spec, opt.images, opt.seed, opt.out_dir);
        json j = synth_spec_to_json(opt.spec);
        j["images"] = opt.images;
        j["seed"] = opt.seed;
        write_frozen_config(opt.out_dir, "synth", j);
        std::cout << "dataset written to " << opt.out_dir.string() << "\n";
    });
}

int cmd_train(const TrainOptions& opt) {
    return run_guarded([&] {
        opt.train.validate();
        const DatasetManifest manifest = load_manifest(opt.dataset_dir);
        DirLock lock(opt.out_dir);
        json j = train_config_to_json(opt.train);
        j["dataset"] = opt.dataset_dir.string();
        j["tiny_backbone"] = opt.tiny_backbone;
        write_frozen_config(opt.out_dir, "train", j);

        Trainer trainer(manifest, opt.train, make_model_config(opt.tiny_backbone));
        double best_val = -1.0;
        CsvWriter losses(opt.out_dir / "losses.csv");
        losses.row({"epoch", "dice", "ce", "kl", "mse", "total", "supervised_samples",
                    "pseudo_samples", "val_mean_dice"});
        for (int e = 0; e < opt.train.total_epochs; ++e) {
            const EpochReport r = trainer.run_epoch(e);
            losses.row({std::to_string(r.epoch), format_double(r.dice), format_double(r.ce),
                        format_double(r.kl), format_double(r.mse), format_double(r.total),
                        std::to_string(r.supervised_samples), std::to_string(r.pseudo_samples),
                        r.val_mean_dice ? format_double(*r.val_mean_dice) : "nan"});
            if (!opt.quiet)
                std::cout << "epoch " << r.epoch << " dice " << r.dice << " ce " << r.ce << " kl "
                          << r.kl << " mse " << r.mse
                          << (r.val_mean_dice ? " val " + format_double(*r.val_mean_dice) : "")
                          << "\n";
            if (r.val_mean_dice && *r.val_mean_dice > best_val) {
                best_val = *r.val_mean_dice;
                save_checkpoint(opt.out_dir / "best.ckpt", trainer.model(), j);
            }
        }
        losses.close();
        save_checkpoint(opt.out_dir / "last.ckpt", trainer.model(), j);
        if (best_val < 0.0) save_checkpoint(opt.out_dir / "best.ckpt", trainer.model(), j);
        plot_loss_curves(trainer.history(), opt.out_dir / "loss_curves.png");

        const SplitEvaluation test_eval = trainer.evaluate_split("test");
        json summary;
        summary["best_val_mean_dice"] = best_val;
        summary["test_mean_dice"] = test_eval.mean_dice;
        for (const auto& [t, d] : test_eval.per_class_dice)
            summary["test_dice"][to_string(t)] = d;
        std::ofstream sum(opt.out_dir / "summary.json");
        sum << summary.dump(2) << "\n";
        std::cout << "test mean dice " << test_eval.mean_dice << "\n";
    });
}

int cmd_infer(const InferOptions& opt) {
    return run_guarded([&] {
        OmniSegModel<float> model = load_checkpoint(opt.checkpoint);
        if (!opt.export_omegas.empty()) {
            const auto table = model.omega_table();
            CsvWriter csv(opt.export_omegas);
            std::vector<std::string> header = {"tissue", "scale"};
            for (int i = 0; i < kHeadParamCount; ++i) header.push_back("w" + std::to_string(i));
            csv.row(header);
            size_t idx = 0;
            for (Tissue t : all_tissues())
                for (Mag m : all_mags()) {
                    std::vector<std::string> row = {to_string(t), to_string(m)};
                    for (float v : table[idx]) row.push_back(format_double(v, 8));
                    csv.row(row);
                    ++idx;
                }
        }
        if (opt.image.empty()) {
            if (opt.export_omegas.empty())
                throw std::invalid_argument("infer: need --image or --export-omegas");
            return;
        }
        const ImageU8 patch_img = read_image_png(opt.image);
        if (patch_img.w != kPatchSize || patch_img.h != kPatchSize)
            throw std::invalid_argument("infer: patch image must be 256x256");
        const Tissue tissue = parse_tissue(opt.tissue);
        const Mag mag = opt.scale.empty() ? optimal_scale(tissue) : parse_mag(opt.scale);
        Tensor<float> x = extract_patch_pixels(patch_img, 0, 0, kPatchSize);
        const std::vector<Mask> masks = model.segment(x, tissue, mag);
        write_mask_png(opt.out_mask, masks[0]);
        std::cout << "mask written to " << opt.out_mask.string() << "\n";
    });
}

int cmd_segment_wsi(const SegmentWsiOptions& opt) {
    return run_guarded([&] {
        OmniSegModel<float> model = load_checkpoint(opt.checkpoint);
        const ImageU8 image = read_image_png(opt.image);
        const std::vector<Tissue> tissues = parse_tissues(opt.tissues);
        DirLock lock(opt.out_dir);
        const std::string id = opt.image.stem().string();
        const BatchSegmenter segment = model_segmenter(model);

        CsvWriter sidecar(opt.out_dir / "patches.csv");
        sidecar.row({"image_id", "x", "y", "side", "magnification", "tissue", "label_kind"});
        std::map<Tissue, Mask> masks;
        for (Tissue t : tissues) {
            const Mag mag = optimal_scale(t);
            for (int sx : tile_starts(image.w, patch_side_40x(mag), 1.0))
                for (int sy : tile_starts(image.h, patch_side_40x(mag), 1.0))
                    sidecar.row({id, std::to_string(sx), std::to_string(sy),
                                 std::to_string(patch_side_40x(mag)), to_string(mag), to_string(t),
                                 "none"});
            masks.emplace(t, segment_image(segment, image, t, id));
            write_mask_png(opt.out_dir / (id + "_" + to_string(t) + ".png"), masks.at(t));
        }
        render_overlay(image, masks, opt.out_dir / (id + "_overlay.png"));
        json j;
        j["checkpoint"] = opt.checkpoint.string();
        j["image"] = opt.image.string();
        for (Tissue t : tissues) j["tissues"].push_back(to_string(t));
        write_frozen_config(opt.out_dir, "segment-wsi", j);
        std::cout << "masks written to " << opt.out_dir.string() << "\n";
    });
}

namespace {

std::vector<std::string> discover_ids(const fs::path& truth_dir) {
    std::set<std::string> ids;
    for (const auto& entry : fs::directory_iterator(truth_dir)) {
        const std::string name = entry.path().stem().string();
        for (Tissue t : all_tissues()) {
            const std::string suffix = "_" + to_string(t);
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                ids.insert(name.substr(0, name.size() - suffix.size()));
        }
    }
    return {ids.begin(), ids.end()};
}

}  // namespace

int cmd_evaluate(const EvaluateOptions& opt) {
    return run_guarded([&] {
        const std::vector<std::string> ids =
            opt.ids.empty() ? discover_ids(opt.truth_dir) : opt.ids;
        if (ids.empty()) throw std::runtime_error("evaluate: no mask ids found");
        DirLock lock(opt.out_dir);

        CsvWriter csv(opt.out_dir / "metrics.csv");
        std::vector<std::string> header = {"case"};
        for (Tissue t : all_tissues()) {
            header.push_back(to_string(t) + "_dice");
            header.push_back(to_string(t) + "_hd_um");
            header.push_back(to_string(t) + "_msd_um");
        }
        csv.row(header);

        std::map<Tissue, std::vector<MetricReport>> all;
        for (const std::string& id : ids) {
            std::vector<std::string> row = {id};
            for (Tissue t : all_tissues()) {
                const fs::path pred_path = opt.pred_dir / (id + "_" + to_string(t) + ".png");
                const fs::path truth_path = opt.truth_dir / (id + "_" + to_string(t) + ".png");
                if (!fs::exists(pred_path) || !fs::exists(truth_path)) {
                    row.insert(row.end(), {"", "", ""});
                    continue;
                }
                const MetricReport r = evaluate_masks(read_mask_png(pred_path),
                                                      read_mask_png(truth_path),
                                                      opt.pixel_size_um);
                all[t].push_back(r);
                row.push_back(format_double(r.dice_pct, 2));
                row.push_back(r.distances_defined ? format_double(r.hd_um, 2) : "nan(empty-mask)");
                row.push_back(r.distances_defined ? format_double(r.msd_um, 2) : "nan(empty-mask)");
            }
            csv.row(row);
        }
        std::vector<std::string> mean_row = {"mean"};
        std::map<Tissue, double> mean_dice;
        for (Tissue t : all_tissues()) {
            const auto& v = all[t];
            if (v.empty()) {
                mean_row.insert(mean_row.end(), {"", "", ""});
                continue;
            }
            double d = 0, hd = 0, msd = 0;
            int defined = 0;
            for (const auto& r : v) {
                d += r.dice_pct;
                if (r.distances_defined) {
                    hd += r.hd_um;
                    msd += r.msd_um;
                    ++defined;
                }
            }
            mean_dice[t] = d / v.size();
            mean_row.push_back(format_double(d / v.size(), 2));
            mean_row.push_back(defined ? format_double(hd / defined, 2) : "nan(empty-mask)");
            mean_row.push_back(defined ? format_double(msd / defined, 2) : "nan(empty-mask)");
        }
        csv.row(mean_row);
        csv.close();
        plot_class_bars({{"run", mean_dice}}, "dice %", opt.out_dir / "dice_bars.png");
        std::cout << "metrics written to " << opt.out_dir.string() << "\n";
    });
}

int cmd_spots(const SpotsOptions& opt) {
    return run_guarded([&] {
        const Mag mag = parse_mag(opt.mag);
        const std::vector<std::string> ids =
            opt.ids.empty() ? discover_ids(opt.truth_dir) : opt.ids;
        if (ids.empty()) throw std::runtime_error("spots: no mask ids found");
        DirLock lock(opt.out_dir);

        CsvWriter csv(opt.out_dir / "spots.csv");
        csv.row({"case", "tissue", "spot", "cx", "cy", "diameter_um", "pred_pct", "ref_pct",
                 "clipped"});
        CsvWriter rep(opt.out_dir / "correlation.csv");
        rep.row({"case", "tissue", "pearson_r", "flag"});
        std::vector<double> all_pred, all_ref;
        for (const std::string& id : ids) {
            for (Tissue t : all_tissues()) {
                const fs::path pred_path = opt.pred_dir / (id + "_" + to_string(t) + ".png");
                const fs::path truth_path = opt.truth_dir / (id + "_" + to_string(t) + ".png");
                if (!fs::exists(pred_path) || !fs::exists(truth_path)) continue;
                const Mask pred = read_mask_png(pred_path);
                const Mask truth = read_mask_png(truth_path);
                const auto centers = spot_grid(truth.w, truth.h, mag, opt.pitch_um);
                const auto pred_spots = extract_spots(pred, centers, mag);
                const auto ref_spots = extract_spots(truth, centers, mag);
                std::vector<double> p, r;
                for (size_t i = 0; i < centers.size(); ++i) {
                    p.push_back(pred_spots[i].percentage);
                    r.push_back(ref_spots[i].percentage);
                    csv.row({id, to_string(t), std::to_string(i),
                             format_double(centers[i].first, 1), format_double(centers[i].second, 1),
                             format_double(kSpotDiameterUm, 1),
                             format_double(pred_spots[i].percentage, 3),
                             format_double(ref_spots[i].percentage, 3),
                             pred_spots[i].clipped ? "1" : "0"});
                }
                const SpotEvaluation ev = evaluate_spots(p, r);
                rep.row({id, to_string(t), ev.r ? format_double(*ev.r, 6) : "nan",
                         ev.r ? "" : ev.flag});
                all_pred.insert(all_pred.end(), p.begin(), p.end());
                all_ref.insert(all_ref.end(), r.begin(), r.end());
            }
        }
        plot_scatter(all_ref, all_pred, "reference %", "predicted %",
                     opt.out_dir / "spots_scatter.png");
        std::cout << "spot tables written to " << opt.out_dir.string() << "\n";
    });
}

int cmd_ablate(const AblateOptions& opt) {
    return run_guarded([&] {
        const DatasetManifest manifest = load_manifest(opt.dataset_dir);
        DirLock lock(opt.out_dir);
        json j = train_config_to_json(opt.train);
        j["presets"] = opt.presets;
        j["seeds"] = opt.seeds;
        write_frozen_config(opt.out_dir, "ablate", j);

        CsvWriter csv(opt.out_dir / "ablation.csv");
        csv.row({"preset", "seed", "sc", "ms", "cr", "test_mean_dice"});
        std::map<std::string, std::map<Tissue, double>> bar_series;
        for (const std::string& preset : opt.presets) {
            double mean_over_seeds = 0.0;
            std::map<Tissue, double> per_class_acc;
            for (uint64_t seed : opt.seeds) {
                TrainConfig cfg = opt.train;
                cfg.seed = seed;
                if (preset == "no-sc") cfg.scale_controller = false;
                else if (preset == "no-ms") cfg.matching_selection = false;
                else if (preset == "no-cr") cfg.consistency_reg = false;
                else if (preset != "full")
                    throw std::invalid_argument("ablate: unknown preset " + preset);
                Trainer trainer(manifest, cfg, make_model_config(opt.tiny_backbone));
                trainer.run_all();
                const SplitEvaluation ev = trainer.evaluate_split("test");
                csv.row({preset, std::to_string(seed), cfg.scale_controller ? "1" : "0",
                         cfg.matching_selection ? "1" : "0", cfg.consistency_reg ? "1" : "0",
                         format_double(ev.mean_dice, 4)});
                mean_over_seeds += ev.mean_dice;
                for (const auto& [t, d] : ev.per_class_dice) per_class_acc[t] += d;
            }
            mean_over_seeds /= static_cast<double>(opt.seeds.size());
            for (auto& [t, d] : per_class_acc) d /= static_cast<double>(opt.seeds.size());
            bar_series[preset] = per_class_acc;
            csv.row({preset, "mean", "", "", "", format_double(mean_over_seeds, 4)});
        }
        csv.close();
        plot_class_bars(bar_series, "dice", opt.out_dir / "ablation_bars.png");
        std::cout << "ablation written to " << opt.out_dir.string() << "\n";
    });
}

}  // namespace omniseg
