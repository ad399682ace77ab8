// Omni-Seg command line: synth, train, infer, segment-wsi, evaluate, spots,
// ablate. Options can come from a JSON config file with per-command
// sections; explicit flags win over the file.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

#include "omniseg/commands.hpp"
#include "omniseg/tensor.hpp"

namespace {

using json = nlohmann::json;
using namespace omniseg;

json load_config_section(const std::string& config_path, const std::string& section) {
    if (config_path.empty()) return json::object();
    std::ifstream in(config_path);
    if (!in) throw std::invalid_argument("cannot open config file " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    return j.value(section, json::object());
}

uint64_t find_seed(const json& section, uint64_t fallback) {
    return section.value("seed", fallback);
}

}  // namespace

int main(int argc, char** argv) {
    init_parallelism();
    CLI::App app{"Omni-Seg: multi-class multi-scale dynamic segmentation"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file with per-command sections");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    SynthOptions so;
    std::string synth_out = so.out_dir.string();
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--images", so.images, "number of 40x images");
    synth->add_option("--seed", so.seed, "generator seed");
    int synth_side = so.spec.image_side_40x;
    synth->add_option("--image-side", synth_side, "40x-space image side");

    // train
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    TrainOptions to;
    std::string train_data, train_out = to.out_dir.string();
    train->add_option("--dataset", train_data, "dataset directory");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--supervised-epochs", to.train.supervised_epochs, "phase-1 epochs");
    train->add_option("--total-epochs", to.train.total_epochs, "total epochs");
    train->add_option("--lr", to.train.lr, "SGD learning rate");
    train->add_option("--momentum", to.train.momentum, "SGD momentum");
    train->add_option("--seed", to.train.seed, "training seed");
    train->add_option("--batch-size", to.train.batch_size, "patches per SGD step");
    train->add_option("--patches-per-epoch", to.train.supervised_patches_per_epoch,
                      "supervised patches per epoch");
    train->add_option("--refresh-interval", to.train.pseudo_refresh_interval,
                      "epochs between pseudo-label regeneration");
    train->add_option("--eval-interval", to.train.eval_interval, "epochs between val evaluations");
    bool flag_tiny = true;
    train->add_flag("--tiny-backbone,!--full-backbone", flag_tiny, "use the reduced backbone");
    std::vector<std::string> ablate_flags;
    train->add_option("--ablate", ablate_flags, "disable axes: no-sc, no-ms, no-cr")
        ->delimiter(',');
    bool fig5 = false;
    train->add_flag("--fig5-mode", fig5, "exclude CAP/TUFT pseudo labels");
    bool quiet = false;
    train->add_flag("--quiet", quiet, "suppress per-epoch output");

    // infer
    auto* infer = app.add_subcommand("infer", "segment one 256x256 patch");
    InferOptions io_;
    std::string infer_ckpt, infer_img, infer_out = io_.out_mask.string(), infer_omegas;
    infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
    infer->add_option("--image", infer_img, "256x256 patch PNG");
    infer->add_option("--tissue", io_.tissue, "tissue class");
    infer->add_option("--scale", io_.scale, "magnification (default: tissue optimum)");
    infer->add_option("--out", infer_out, "output mask PNG");
    infer->add_option("--export-omegas", infer_omegas, "write the 6x4x162 omega table CSV");

    // segment-wsi
    auto* seg = app.add_subcommand("segment-wsi", "segment a 40x raster image");
    SegmentWsiOptions go;
    std::string seg_ckpt, seg_img, seg_out = go.out_dir.string();
    seg->add_option("--checkpoint", seg_ckpt, "model checkpoint")->required();
    seg->add_option("--image", seg_img, "40x image PNG")->required();
    seg->add_option("--tissues", go.tissues, "tissue subset (default all)")->delimiter(',');
    seg->add_option("--out", seg_out, "output directory");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Dice/HD/MSD against truth masks");
    EvaluateOptions eo;
    std::string eval_pred, eval_truth, eval_out = eo.out_dir.string();
    eval->add_option("--pred", eval_pred, "predicted masks directory")->required();
    eval->add_option("--truth", eval_truth, "truth masks directory")->required();
    eval->add_option("--ids", eo.ids, "case ids (default: discover)")->delimiter(',');
    eval->add_option("--pixel-size-um", eo.pixel_size_um, "microns per pixel");
    eval->add_option("--out", eval_out, "output directory");

    // spots
    auto* spots = app.add_subcommand("spots", "55um spot percentages and correlation");
    SpotsOptions po;
    std::string spots_pred, spots_truth, spots_out = po.out_dir.string();
    spots->add_option("--pred", spots_pred, "predicted masks directory")->required();
    spots->add_option("--truth", spots_truth, "truth masks directory")->required();
    spots->add_option("--ids", po.ids, "case ids (default: discover)")->delimiter(',');
    spots->add_option("--mag", po.mag, "mask magnification");
    spots->add_option("--pitch-um", po.pitch_um, "spot grid pitch, microns");
    spots->add_option("--out", spots_out, "output directory");

    // ablate
    auto* abl = app.add_subcommand("ablate", "train ablation presets and compare");
    AblateOptions ao;
    std::string abl_data, abl_out = ao.out_dir.string();
    abl->add_option("--dataset", abl_data, "dataset directory");
    abl->add_option("--out", abl_out, "output directory");
    abl->add_option("--presets", ao.presets, "presets to run")->delimiter(',');
    abl->add_option("--seeds", ao.seeds, "seeds per preset")->delimiter(',');
    abl->add_option("--supervised-epochs", ao.train.supervised_epochs, "phase-1 epochs");
    abl->add_option("--total-epochs", ao.train.total_epochs, "total epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            const json section = load_config_section(config_path, "synth");
            so.spec = synth_spec_from_json(section);
            // Flags win over the config file.
            if (!synth->count("--images")) so.images = section.value("images", so.images);
            if (!synth->count("--seed")) so.seed = find_seed(section, so.seed);
            if (synth->count("--image-side")) so.spec.image_side_40x = synth_side;
            so.out_dir = synth_out;
            return cmd_synth(so);
        }
        if (train->parsed()) {
            const json section = load_config_section(config_path, "train");
            TrainConfig base = train_config_from_json(section, to.train);
            // Re-apply explicit flags on top of the config file.
            if (!train->count("--supervised-epochs"))
                to.train.supervised_epochs = base.supervised_epochs;
            if (!train->count("--total-epochs")) to.train.total_epochs = base.total_epochs;
            if (!train->count("--lr")) to.train.lr = base.lr;
            if (!train->count("--momentum")) to.train.momentum = base.momentum;
            if (!train->count("--seed")) to.train.seed = base.seed;
            if (!train->count("--batch-size")) to.train.batch_size = base.batch_size;
            if (!train->count("--patches-per-epoch"))
                to.train.supervised_patches_per_epoch = base.supervised_patches_per_epoch;
            if (!train->count("--refresh-interval"))
                to.train.pseudo_refresh_interval = base.pseudo_refresh_interval;
            if (!train->count("--eval-interval")) to.train.eval_interval = base.eval_interval;
            to.train.pseudo_patch_counts = base.pseudo_patch_counts;
            to.train.w_dice = base.w_dice;
            to.train.w_ce = base.w_ce;
            to.train.w_kl = base.w_kl;
            to.train.w_mse = base.w_mse;
            to.train.matching_selection = base.matching_selection;
            to.train.scale_controller = base.scale_controller;
            to.train.consistency_reg = base.consistency_reg;
            to.train.fig5_mode = fig5 || base.fig5_mode;
            for (const std::string& a : ablate_flags) {
                if (a == "no-sc") to.train.scale_controller = false;
                else if (a == "no-ms") to.train.matching_selection = false;
                else if (a == "no-cr") to.train.consistency_reg = false;
                else throw std::invalid_argument("unknown --ablate axis " + a);
            }
            to.dataset_dir = train_data.empty() ? section.value("dataset", "") : train_data;
            if (to.dataset_dir.empty())
                throw std::invalid_argument("train: --dataset required");
            to.out_dir = train_out;
            to.tiny_backbone = flag_tiny;
            to.quiet = quiet;
            return cmd_train(to);
        }
        if (infer->parsed()) {
            io_.checkpoint = infer_ckpt;
            io_.image = infer_img;
            io_.out_mask = infer_out;
            io_.export_omegas = infer_omegas;
            return cmd_infer(io_);
        }
        if (seg->parsed()) {
            go.checkpoint = seg_ckpt;
            go.image = seg_img;
            go.out_dir = seg_out;
            return cmd_segment_wsi(go);
        }
        if (eval->parsed()) {
            eo.pred_dir = eval_pred;
            eo.truth_dir = eval_truth;
            eo.out_dir = eval_out;
            return cmd_evaluate(eo);
        }
        if (spots->parsed()) {
            po.pred_dir = spots_pred;
            po.truth_dir = spots_truth;
            po.out_dir = spots_out;
            return cmd_spots(po);
        }
        if (abl->parsed()) {
            const json section = load_config_section(config_path, "ablate");
            ao.train = train_config_from_json(section, ao.train);
            if (abl->count("--supervised-epochs") == 0 && section.contains("supervised_epochs"))
                ao.train.supervised_epochs = section["supervised_epochs"].get<int>();
            ao.dataset_dir = abl_data.empty() ? section.value("dataset", "") : abl_data;
            if (ao.dataset_dir.empty())
                throw std::invalid_argument("ablate: --dataset required");
            ao.out_dir = abl_out;
            return cmd_ablate(ao);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
