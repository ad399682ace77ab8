#pragma once
// Versioned binary checkpoints: magic + version, a JSON header carrying the
// architecture config, the canonical class/scale orders and the resolved run
// config, then flat named float32 parameter arrays.

#include <json.hpp>

#include <filesystem>
#include <stdexcept>

#include "omniseg/model.hpp"

namespace omniseg {

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, OmniSegModel<float>& model,
                     const nlohmann::json& run_config = nlohmann::json::object());

// Throws CheckpointError on corruption, version mismatch, or a class/scale
// order that disagrees with this binary's vocabulary.
OmniSegModel<float> load_checkpoint(const std::filesystem::path& path,
                                    nlohmann::json* run_config_out = nullptr);

}  // namespace omniseg
