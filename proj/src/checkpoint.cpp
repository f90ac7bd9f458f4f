#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "usat/model.hpp"

namespace usat {

using nlohmann::json;

namespace {

json geometry_to_json(const GeometryConfig& g) {
    json sensors = json::array();
    for (const auto& s : g.sensors) {
        json groups = json::array();
        for (const auto& gr : s.groups)
            groups.push_back({{"id", gr.id},
                              {"bands", gr.band_names},
                              {"gsd", gr.gsd},
                              {"patch_count", gr.patch_count},
                              {"patch_size", gr.patch_size}});
        sensors.push_back({{"sensor_id", s.sensor_id}, {"name", s.name}, {"groups", groups}});
    }
    return {{"max_footprint_m", g.footprint.max_footprint_m},
            {"image_footprint_m", g.footprint.image_footprint_m},
            {"fine_patch_extent_m", g.footprint.fine_patch_extent_m},
            {"sensors", sensors}};
}

GeometryConfig geometry_from_json(const json& j) {
    GeometryConfig g;
    g.footprint.max_footprint_m = j.at("max_footprint_m").get<double>();
    g.footprint.image_footprint_m = j.at("image_footprint_m").get<double>();
    g.footprint.fine_patch_extent_m = j.value("fine_patch_extent_m", 0.0);
    for (const auto& js : j.at("sensors")) {
        SensorConfig s;
        s.sensor_id = js.at("sensor_id").get<int>();
        s.name = js.at("name").get<std::string>();
        for (const auto& jg : js.at("groups")) {
            SpectralGroup gr;
            gr.id = jg.at("id").get<int>();
            gr.sensor_id = s.sensor_id;
            gr.band_names = jg.at("bands").get<std::vector<std::string>>();
            gr.gsd = jg.at("gsd").get<double>();
            gr.patch_count = jg.at("patch_count").get<int>();
            gr.patch_size = jg.at("patch_size").get<int>();
            s.groups.push_back(gr);
        }
        g.sensors.push_back(s);
    }
    return validate_config(g);
}

void write_f32_le(std::ofstream& os, float f) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(bits));
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits & 0xff),
                                    static_cast<unsigned char>((bits >> 8) & 0xff),
                                    static_cast<unsigned char>((bits >> 16) & 0xff),
                                    static_cast<unsigned char>((bits >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
}

float read_f32_le(std::ifstream& is) {
    unsigned char bytes[4];
    is.read(reinterpret_cast<char*>(bytes), 4);
    const uint32_t bits = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
                          (static_cast<uint32_t>(bytes[2]) << 16) |
                          (static_cast<uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

} // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    json bands = json::array();
    for (const auto& b : state.bands) bands.push_back({{"sensor_id", b.sensor_id}, {"band", b.band}});

    json stats = json::object();
    for (const auto& [key, ms] : state.band_stats)
        stats[key] = {{"mean", ms.first}, {"std", ms.second}};

    json token_order = json::array();
    for (const auto& m : token_layout(state.geometry, state.bands))
        token_order.push_back({m.group_id, m.sensor_id, m.row, m.col});

    json params = json::array();
    size_t offset = 0;
    for (const Param* p : state.parameters()) {
        params.push_back({{"name", p->name},
                          {"rows", p->value.rows},
                          {"cols", p->value.cols},
                          {"offset", offset},
                          {"decay", p->decay}});
        offset += p->size();
    }

    json manifest = {
        {"format", "usat-checkpoint-v1"},
        {"mode", state.mode},
        {"geometry", geometry_to_json(state.geometry)},
        {"bands", bands},
        {"encodings",
         {{"omega", state.enc_params.omega},
          {"d_model", state.enc_params.d_model},
          {"pos_dim", state.enc_params.pos_dim},
          {"group_dim", state.enc_params.group_dim},
          {"sensor_dim", state.enc_params.sensor_dim},
          {"superpositional", state.flags.superpos},
          {"group", state.flags.group},
          {"sensor", state.flags.sensor},
          {"group_index_mode",
           state.enc_params.group_index_mode == GroupIndexMode::pretrain ? "pretrain"
                                                                         : "finetune"}}},
        {"model",
         {{"depth", state.encoder.depth},
          {"d_model", state.encoder.d_model},
          {"n_heads", state.encoder.n_heads},
          {"mlp_ratio", state.encoder.mlp_ratio},
          {"decoder_depth", state.decoder.depth},
          {"decoder_dim", state.decoder.d_dec},
          {"decoder_heads", state.decoder.n_heads},
          {"has_decoder", state.has_decoder},
          {"n_classes", state.n_classes},
          {"normalize_target", state.normalize_target},
          {"pool", state.pool_mode == PoolMode::average ? "average" : "sum"}}},
        {"band_stats", stats},
        {"token_order", token_order},
        {"params", params},
    };

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";

    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot write " + (dir / "params.bin").string());
    for (const Param* p : state.parameters())
        for (double v : p->value.d) write_f32_le(bin, static_cast<float>(v));
}

std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot read " + (dir / "manifest.json").string());
    json manifest = json::parse(mf);
    if (manifest.value("format", "") != "usat-checkpoint-v1")
        throw IoError("unrecognized checkpoint format");

    const GeometryConfig geometry = geometry_from_json(manifest.at("geometry"));
    BandSubset bands;
    for (const auto& jb : manifest.at("bands"))
        bands.push_back({jb.at("sensor_id").get<int>(), jb.at("band").get<std::string>()});

    const json& je = manifest.at("encodings");
    ComposeFlags flags;
    flags.superpos = je.at("superpositional").get<bool>();
    flags.group = je.at("group").get<bool>();
    flags.sensor = je.at("sensor").get<bool>();
    const GroupIndexMode mode = je.at("group_index_mode").get<std::string>() == "pretrain"
                                    ? GroupIndexMode::pretrain
                                    : GroupIndexMode::finetune;

    const json& jm = manifest.at("model");
    EncoderConfig enc{jm.at("depth").get<int>(), jm.at("d_model").get<int>(),
                      jm.at("n_heads").get<int>(), jm.at("mlp_ratio").get<double>()};
    DecoderConfig dec{jm.at("decoder_depth").get<int>(), jm.at("decoder_dim").get<int>(),
                      jm.at("decoder_heads").get<int>()};

    auto state = build_model(geometry, bands, flags, mode, enc, dec,
                             jm.at("has_decoder").get<bool>(), jm.at("n_classes").get<int>(),
                             /*seed=*/0);
    state->mode = manifest.value("mode", "pretrain");
    state->normalize_target = jm.at("normalize_target").get<bool>();
    state->pool_mode = jm.at("pool").get<std::string>() == "sum" ? PoolMode::sum
                                                                 : PoolMode::average;
    for (const auto& [key, js] : manifest.at("band_stats").items())
        state->band_stats[key] = {js.at("mean").get<double>(), js.at("std").get<double>()};

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot read " + (dir / "params.bin").string());
    const json& jp = manifest.at("params");
    const auto params = state->parameters();
    if (jp.size() != params.size()) throw IoError("checkpoint parameter table size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const json& entry = jp[i];
        Param* p = params[i];
        if (entry.at("name").get<std::string>() != p->name ||
            entry.at("rows").get<int>() != p->value.rows ||
            entry.at("cols").get<int>() != p->value.cols)
            throw IoError("checkpoint parameter table mismatch at " + p->name);
        for (double& v : p->value.d) v = static_cast<double>(read_f32_le(bin));
        if (!bin) throw IoError("params.bin truncated at " + p->name);
    }
    return state;
}

} // namespace usat
