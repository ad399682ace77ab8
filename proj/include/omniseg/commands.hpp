#pragma once
// Command implementations behind the CLI verbs. Each returns a process exit
// code: 0 success, 2 usage/config error, 3 data/checkpoint error, 4 numeric
// failure.

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "omniseg/synth.hpp"
#include "omniseg/training.hpp"

namespace omniseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec base = {});

// Exclusive lock on an output directory; released on destruction.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::filesystem::path file_;
    bool held_ = false;
};

struct SynthOptions {
    std::filesystem::path out_dir = "synth_out";
    int images = 10;
    uint64_t seed = 7;
    SynthSpec spec;
};
int cmd_synth(const SynthOptions& opt);

struct TrainOptions {
    std::filesystem::path dataset_dir;
    std::filesystem::path out_dir = "train_out";
    TrainConfig train;
    bool tiny_backbone = true;
    bool quiet = false;
};
int cmd_train(const TrainOptions& opt);

struct InferOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path image;     // 256x256 patch
    std::string tissue = "cap";
    std::string scale;               // empty: tissue's optimal scale
    std::filesystem::path out_mask = "mask.png";
    std::filesystem::path export_omegas;  // optional CSV of the 6x4x162 table
};
int cmd_infer(const InferOptions& opt);

struct SegmentWsiOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path image;
    std::vector<std::string> tissues;  // empty: all six
    std::filesystem::path out_dir = "segment_out";
};
int cmd_segment_wsi(const SegmentWsiOptions& opt);

struct EvaluateOptions {
    std::filesystem::path pred_dir;
    std::filesystem::path truth_dir;
    std::vector<std::string> ids;      // empty: discover from truth_dir
    std::filesystem::path out_dir = "eval_out";
    double pixel_size_um = 0.25;
};
int cmd_evaluate(const EvaluateOptions& opt);

struct SpotsOptions {
    std::filesystem::path pred_dir;
    std::filesystem::path truth_dir;
    std::vector<std::string> ids;
    std::string mag = "40x";
    double pitch_um = 100.0;
    std::filesystem::path out_dir = "spots_out";
};
int cmd_spots(const SpotsOptions& opt);

struct AblateOptions {
    std::filesystem::path dataset_dir;
    std::filesystem::path out_dir = "ablate_out";
    TrainConfig train;
    bool tiny_backbone = true;
    std::vector<std::string> presets = {"full", "no-sc", "no-ms", "no-cr"};
    std::vector<uint64_t> seeds = {7};
};
int cmd_ablate(const AblateOptions& opt);

}  // namespace omniseg
