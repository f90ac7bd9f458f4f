#include "usat/config.hpp"

#include <fstream>
#include <set>

namespace usat {

using nlohmann::json;

namespace {

json geometry_json(const GeometryConfig& g) {
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
            {"sensors", sensors}};
}

void require_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError("config: section '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + where + "." + key + "'");
}

void validate_keys(const json& cfg) {
    require_keys(cfg, {"geometry", "encodings", "model", "run", "data"}, "<root>");
    if (cfg.contains("geometry")) {
        require_keys(cfg["geometry"], {"max_footprint_m", "image_footprint_m", "sensors"},
                     "geometry");
        if (cfg["geometry"].contains("sensors")) {
            for (const auto& s : cfg["geometry"]["sensors"]) {
                require_keys(s, {"sensor_id", "name", "groups"}, "geometry.sensors[]");
                if (s.contains("groups"))
                    for (const auto& g : s["groups"])
                        require_keys(g, {"id", "bands", "gsd", "patch_count", "patch_size"},
                                     "geometry.sensors[].groups[]");
            }
        }
    }
    if (cfg.contains("encodings"))
        require_keys(cfg["encodings"],
                     {"omega", "superpositional", "group", "sensor", "group_index_mode"},
                     "encodings");
    if (cfg.contains("model"))
        require_keys(cfg["model"],
                     {"depth", "d_model", "n_heads", "mlp_ratio", "decoder_depth", "decoder_dim",
                      "decoder_heads", "normalize_target", "pool"},
                     "model");
    if (cfg.contains("run"))
        require_keys(cfg["run"],
                     {"mode", "base_lr", "weight_decay", "epochs", "warmup_epochs", "batch_size",
                      "mask_ratio", "seed", "flips", "consistent_mask", "linear_probe", "beta1",
                      "beta2", "eps", "clip_norm", "workers"},
                     "run");
    if (cfg.contains("data"))
        require_keys(cfg["data"],
                     {"n", "classes", "val_fraction", "noise_sigma", "texture_amp",
                      "label_area_threshold"},
                     "data");
}

} // namespace

json default_config_json(const std::string& mode) {
    const bool finetune = (mode == "finetune");
    json cfg;
    cfg["geometry"] = geometry_json(usatlas_geometry());
    cfg["encodings"] = {{"omega", 10000.0},
                        {"superpositional", true},
                        {"group", true},
                        {"sensor", false},
                        {"group_index_mode", "finetune"}};
    cfg["model"] = {{"depth", 24},
                    {"d_model", 1024},
                    {"n_heads", 16},
                    {"mlp_ratio", 4.0},
                    {"decoder_depth", 8},
                    {"decoder_dim", 512},
                    {"decoder_heads", 16},
                    {"normalize_target", true},
                    {"pool", "average"}};
    cfg["run"] = {{"mode", mode},
                  {"base_lr", finetune ? 1e-4 : 1.5e-4},
                  {"weight_decay", finetune ? 0.1 : 0.05},
                  {"epochs", finetune ? 5 : 25},
                  {"warmup_epochs", 1},
                  {"batch_size", finetune ? 10 : 160},
                  {"mask_ratio", 0.75},
                  {"seed", 0},
                  {"flips", true},
                  {"consistent_mask", false},
                  {"linear_probe", false},
                  {"beta1", 0.9},
                  {"beta2", finetune ? 0.999 : 0.95},
                  {"eps", 1e-8},
                  {"clip_norm", 1.0},
                  {"workers", 1}};
    cfg["data"] = {{"n", 64},
                   {"classes", 5},
                   {"val_fraction", 0.25},
                   {"noise_sigma", 0.005},
                   {"texture_amp", 0.45},
                   {"label_area_threshold", 0.01}};
    return cfg;
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    json cfg;
    try {
        cfg = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    validate_keys(cfg);
    return cfg;
}

void merge_config(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object())
            merge_config(base[key], value);
        else
            base[key] = value;
    }
}

json preset_overlay(const std::string& preset) {
    if (preset == "tiny")
        return {{"model",
                 {{"depth", 2},
                  {"d_model", 64},
                  {"n_heads", 4},
                  {"mlp_ratio", 4.0},
                  {"decoder_depth", 2},
                  {"decoder_dim", 32},
                  {"decoder_heads", 4}}}};
    if (preset == "vitl")
        return {{"model",
                 {{"depth", 24},
                  {"d_model", 1024},
                  {"n_heads", 16},
                  {"mlp_ratio", 4.0},
                  {"decoder_depth", 8},
                  {"decoder_dim", 512},
                  {"decoder_heads", 16}}}};
    throw ConfigError("unknown preset '" + preset + "' (expected tiny or vitl)");
}

CliConfig config_from_json(const json& merged) {
    CliConfig out;

    const json& jg = merged.at("geometry");
    GeometryConfig geom;
    geom.footprint.max_footprint_m = jg.at("max_footprint_m").get<double>();
    geom.footprint.image_footprint_m = jg.at("image_footprint_m").get<double>();
    for (const auto& js : jg.at("sensors")) {
        SensorConfig s;
        s.sensor_id = js.at("sensor_id").get<int>();
        s.name = js.at("name").get<std::string>();
        for (const auto& jgr : js.at("groups")) {
            SpectralGroup gr;
            gr.id = jgr.at("id").get<int>();
            gr.sensor_id = s.sensor_id;
            gr.band_names = jgr.at("bands").get<std::vector<std::string>>();
            gr.gsd = jgr.at("gsd").get<double>();
            gr.patch_count = jgr.at("patch_count").get<int>();
            gr.patch_size = jgr.at("patch_size").get<int>();
            s.groups.push_back(gr);
        }
        geom.sensors.push_back(s);
    }
    out.geometry = validate_config(geom);

    const json& je = merged.at("encodings");
    out.omega = je.at("omega").get<double>();
    out.flags.superpos = je.at("superpositional").get<bool>();
    out.flags.group = je.at("group").get<bool>();
    out.flags.sensor = je.at("sensor").get<bool>();
    const std::string idx_mode = je.at("group_index_mode").get<std::string>();
    if (idx_mode != "pretrain" && idx_mode != "finetune")
        throw ConfigError("encodings.group_index_mode must be pretrain or finetune");

    const json& jm = merged.at("model");
    out.encoder = {jm.at("depth").get<int>(), jm.at("d_model").get<int>(),
                   jm.at("n_heads").get<int>(), jm.at("mlp_ratio").get<double>()};
    out.decoder = {jm.at("decoder_depth").get<int>(), jm.at("decoder_dim").get<int>(),
                   jm.at("decoder_heads").get<int>()};

    const json& jr = merged.at("run");
    RunConfig& run = out.run;
    run.mode = jr.at("mode").get<std::string>();
    if (run.mode != "pretrain" && run.mode != "finetune")
        throw ConfigError("run.mode must be pretrain or finetune");
    run.base_lr = jr.at("base_lr").get<double>();
    run.weight_decay = jr.at("weight_decay").get<double>();
    run.epochs = jr.at("epochs").get<int>();
    run.warmup_epochs = jr.at("warmup_epochs").get<int>();
    run.batch_size = jr.at("batch_size").get<int>();
    run.mask_ratio = jr.at("mask_ratio").get<double>();
    run.seed = jr.at("seed").get<uint64_t>();
    run.flips = jr.at("flips").get<bool>();
    run.consistent_mask = jr.at("consistent_mask").get<bool>();
    run.linear_probe = jr.at("linear_probe").get<bool>();
    run.beta1 = jr.at("beta1").get<double>();
    run.beta2 = jr.at("beta2").get<double>();
    run.eps = jr.at("eps").get<double>();
    run.clip_norm = jr.at("clip_norm").get<double>();
    run.workers = jr.at("workers").get<int>();
    run.normalize_target = jm.at("normalize_target").get<bool>();
    run.pool = jm.at("pool").get<std::string>() == "sum" ? PoolMode::sum : PoolMode::average;
    run.group_index_mode =
        idx_mode == "pretrain" ? GroupIndexMode::pretrain : GroupIndexMode::finetune;
    if (run.epochs < 0 || run.warmup_epochs < 0 || run.warmup_epochs > std::max(run.epochs, 0))
        throw ConfigError("run: warmup_epochs must be within total epochs");
    if (run.batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
    if (run.base_lr <= 0.0) throw ConfigError("run: base_lr must be positive");

    const json& jd = merged.at("data");
    out.synth.n_samples = jd.at("n").get<int>();
    out.synth.n_classes = jd.at("classes").get<int>();
    out.synth.val_fraction = jd.at("val_fraction").get<double>();
    out.synth.noise_sigma = jd.at("noise_sigma").get<double>();
    out.synth.texture_amp = jd.at("texture_amp").get<double>();
    out.synth.label_area_threshold = jd.at("label_area_threshold").get<double>();
    out.synth.geometry = out.geometry;
    return out;
}

} // namespace usat
