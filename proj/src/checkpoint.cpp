#include "omniseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace omniseg {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'O', 'S', 'G', '1'};
constexpr uint32_t kVersion = 1;

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["backbone"] = {{"encoder_channels", cfg.backbone.encoder_channels},
                     {"bottleneck_channels", cfg.backbone.bottleneck_channels},
                     {"decoder_channels", cfg.backbone.decoder_channels},
                     {"in_channels", cfg.backbone.in_channels},
                     {"out_channels", cfg.backbone.out_channels},
                     {"feature_channels", cfg.backbone.feature_channels}};
    j["fusion"] = {{"gap_dim", cfg.fusion.gap_dim},
                   {"class_dim", cfg.fusion.class_dim},
                   {"scale_dim", cfg.fusion.scale_dim},
                   {"expand_factor", cfg.fusion.expand_factor},
                   {"mode", cfg.fusion.mode == FusionConfig::Mode::kOuter ? "outer" : "concat"},
                   {"controller_bias", cfg.fusion.controller_bias}};
    j["scale_controller"] = cfg.scale_controller;
    j["learned_scale_embed"] = cfg.learned_scale_embed;
    j["class_order"] = cfg.class_order;
    j["scale_order"] = cfg.scale_order;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    const auto& b = j.at("backbone");
    cfg.backbone.encoder_channels = b.at("encoder_channels").get<std::vector<int>>();
    cfg.backbone.bottleneck_channels = b.at("bottleneck_channels").get<int>();
    cfg.backbone.decoder_channels = b.at("decoder_channels").get<std::vector<int>>();
    cfg.backbone.in_channels = b.at("in_channels").get<int>();
    cfg.backbone.out_channels = b.at("out_channels").get<int>();
    cfg.backbone.feature_channels = b.at("feature_channels").get<int>();
    const auto& f = j.at("fusion");
    cfg.fusion.gap_dim = f.at("gap_dim").get<int>();
    cfg.fusion.class_dim = f.at("class_dim").get<int>();
    cfg.fusion.scale_dim = f.at("scale_dim").get<int>();
    cfg.fusion.expand_factor = f.at("expand_factor").get<int>();
    cfg.fusion.mode = f.at("mode").get<std::string>() == "concat" ? FusionConfig::Mode::kConcat
                                                                  : FusionConfig::Mode::kOuter;
    cfg.fusion.controller_bias = f.at("controller_bias").get<bool>();
    cfg.scale_controller = j.at("scale_controller").get<bool>();
    cfg.learned_scale_embed = j.at("learned_scale_embed").get<bool>();
    const auto cls = j.at("class_order").get<std::vector<std::string>>();
    const auto scl = j.at("scale_order").get<std::vector<std::string>>();
    if (cls.size() != kTissueCount || scl.size() != kMagCount)
        throw CheckpointError("checkpoint: vocabulary size mismatch");
    std::copy(cls.begin(), cls.end(), cfg.class_order.begin());
    std::copy(scl.begin(), scl.end(), cfg.scale_order.begin());
    return cfg;
}

void save_checkpoint(const std::filesystem::path& path, OmniSegModel<float>& model,
                     const json& run_config) {
    json header = model_config_to_json(model.config());
    header["format_version"] = kVersion;
    header["run_config"] = run_config;

    ParamList<float> params = model.params();
    json manifest = json::array();
    for (const auto& p : params)
        manifest.push_back({{"name", p.name}, {"count", p.w->size()}});
    header["params"] = manifest;

    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
    out.write(kMagic, 4);
    const uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.w->data()),
                  static_cast<std::streamsize>(p.w->size() * sizeof(float)));
    if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

OmniSegModel<float> load_checkpoint(const std::filesystem::path& path, json* run_config_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path.string());
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion)
        throw CheckpointError("checkpoint: unsupported format version");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen == 0 || hlen > (1ull << 24))
        throw CheckpointError("checkpoint: corrupt header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw CheckpointError("checkpoint: truncated header");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint: header is not valid JSON");
    }

    ModelConfig cfg;
    try {
        cfg = model_config_from_json(header);
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint: malformed model config");
    }
    // Refuse silent re-indexing: the stored orders must equal this binary's.
    const auto canon_cls = canonical_class_order();
    const auto canon_scl = canonical_scale_order();
    for (int i = 0; i < kTissueCount; ++i)
        if (cfg.class_order[static_cast<size_t>(i)] != canon_cls[static_cast<size_t>(i)])
            throw CheckpointError("checkpoint: class order mismatch (controller misbinding)");
    for (int i = 0; i < kMagCount; ++i)
        if (cfg.scale_order[static_cast<size_t>(i)] != canon_scl[static_cast<size_t>(i)])
            throw CheckpointError("checkpoint: scale order mismatch (controller misbinding)");

    OmniSegModel<float> model(cfg);
    ParamList<float> params = model.params();
    const auto& manifest = header.at("params");
    if (manifest.size() != params.size())
        throw CheckpointError("checkpoint: parameter manifest mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != params[i].name ||
            entry.at("count").get<size_t>() != params[i].w->size())
            throw CheckpointError("checkpoint: parameter " + params[i].name + " mismatch");
        in.read(reinterpret_cast<char*>(params[i].w->data()),
                static_cast<std::streamsize>(params[i].w->size() * sizeof(float)));
        if (!in) throw CheckpointError("checkpoint: truncated parameter data");
    }
    if (run_config_out) *run_config_out = header.value("run_config", json::object());
    return model;
}

}  // namespace omniseg
