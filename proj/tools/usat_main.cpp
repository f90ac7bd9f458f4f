// usat: multi-sensor masked-autoencoder pipeline.
//
// Subcommands: synth, pair, pretrain, finetune, evaluate, reconstruct,
// encviz. Exit codes: 0 success, 1 validation/usage error, 2 runtime
// failure. Set USAT_LOG=debug for extra output.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "usat/config.hpp"
#include "usat/data.hpp"
#include "usat/image_io.hpp"
#include "usat/training.hpp"

namespace {

using namespace usat;
using nlohmann::json;

bool debug_log() {
    const char* env = std::getenv("USAT_LOG");
    return env && std::string(env) == "debug";
}

struct CommonOpts {
    std::string config_path;
    std::string preset;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string bands_csv;
    std::string sensors_csv;
};

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Resolves --sensors/--bands filters into an explicit band subset.
BandSubset resolve_subset(const GeometryConfig& geom, const std::string& sensors_csv,
                          const std::string& bands_csv) {
    std::vector<int> sensor_ids;
    if (sensors_csv.empty()) {
        for (const auto& s : geom.sensors) sensor_ids.push_back(s.sensor_id);
    } else {
        for (const auto& name : split_csv(sensors_csv)) {
            const SensorConfig* s = geom.find_sensor(name);
            if (!s) throw UnknownBandError("unknown sensor '" + name + "'");
            sensor_ids.push_back(s->sensor_id);
        }
    }
    const auto band_names = split_csv(bands_csv);
    BandSubset subset;
    for (int sid : sensor_ids) {
        for (const auto& ref : bands_of_sensor(geom, sid)) {
            if (band_names.empty() ||
                std::find(band_names.begin(), band_names.end(), ref.band) != band_names.end())
                subset.push_back(ref);
        }
    }
    if (!band_names.empty()) {
        for (const auto& name : band_names) {
            const bool found = std::any_of(subset.begin(), subset.end(),
                                           [&name](const BandRef& r) { return r.band == name; });
            if (!found) throw UnknownBandError("band '" + name + "' not found in selected sensors");
        }
    }
    if (subset.empty()) throw EmptySubsetError("selected sensors/bands yield no bands");
    return subset;
}

json build_config_json(const CommonOpts& opts, const std::string& mode) {
    json cfg = default_config_json(mode);
    if (!opts.config_path.empty()) merge_config(cfg, load_config_file(opts.config_path));
    if (!opts.preset.empty()) merge_config(cfg, preset_overlay(opts.preset));
    if (opts.seed_set) cfg["run"]["seed"] = opts.seed;
    cfg["run"]["mode"] = mode;
    return cfg;
}

void announce_seed(const CliConfig& cfg) {
    std::cout << "root seed = " << cfg.run.seed << "\n";
    if (debug_log()) std::cout << "mode=" << cfg.run.mode << " epochs=" << cfg.run.epochs << "\n";
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_bands = true) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--preset", opts.preset, "architecture preset (tiny|vitl)")
        ->check(CLI::IsMember({"tiny", "vitl"}));
    cmd->add_option("--seed", opts.seed, "root seed for all randomness")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    if (with_bands) {
        cmd->add_option("--bands", opts.bands_csv, "comma-separated band names");
        cmd->add_option("--sensors", opts.sensors_csv, "comma-separated sensor names");
    }
}

int run_cli(int argc, char** argv) {
    CLI::App app{"usat: multi-sensor masked-autoencoder pipeline"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic multi-sensor dataset");
    CommonOpts synth_opts;
    std::string synth_out;
    int synth_n = -1, synth_classes = -1, synth_workers = -1;
    double synth_val_fraction = -1.0;
    add_common(synth_cmd, synth_opts, false);
    synth_cmd->add_option("--out", synth_out, "output dataset directory")->required();
    synth_cmd->add_option("--n", synth_n, "number of samples");
    synth_cmd->add_option("--classes", synth_classes, "number of latent classes");
    synth_cmd->add_option("--val-fraction", synth_val_fraction, "validation split fraction");
    synth_cmd->add_option("--workers", synth_workers, "data-generation worker threads");

    // ---- pair ----
    auto* pair_cmd = app.add_subcommand("pair", "pair fine with coarse records and write a store");
    std::string pair_fine, pair_coarse, pair_out, pair_fine_sensor, pair_coarse_sensor;
    pair_cmd->add_option("--fine", pair_fine, "store with the fine-sensor records")->required();
    pair_cmd->add_option("--coarse", pair_coarse, "store with the coarse-sensor records")
        ->required();
    pair_cmd->add_option("--out", pair_out, "output store directory")->required();
    pair_cmd->add_option("--fine-sensor", pair_fine_sensor, "fine sensor name");
    pair_cmd->add_option("--coarse-sensor", pair_coarse_sensor, "coarse sensor name");

    // ---- pretrain ----
    auto* pre_cmd = app.add_subcommand("pretrain", "masked-autoencoder pre-training");
    CommonOpts pre_opts;
    std::string pre_data, pre_out;
    int pre_epochs = -1, pre_batch = -1;
    double pre_mask_ratio = -1.0;
    add_common(pre_cmd, pre_opts);
    pre_cmd->add_option("--data", pre_data, "dataset store directory")->required();
    pre_cmd->add_option("--out", pre_out, "checkpoint output directory")->required();
    pre_cmd->add_option("--epochs", pre_epochs, "training epochs");
    pre_cmd->add_option("--batch", pre_batch, "batch size");
    pre_cmd->add_option("--mask-ratio", pre_mask_ratio, "masking ratio in (0,1)");

    // ---- finetune ----
    auto* ft_cmd = app.add_subcommand("finetune", "multi-label classification fine-tuning");
    CommonOpts ft_opts;
    std::string ft_data, ft_out, ft_ckpt, ft_index_mode;
    int ft_epochs = -1, ft_batch = -1;
    bool ft_probe = false;
    add_common(ft_cmd, ft_opts);
    ft_cmd->add_option("--data", ft_data, "dataset store directory")->required();
    ft_cmd->add_option("--out", ft_out, "checkpoint output directory")->required();
    ft_cmd->add_option("--ckpt", ft_ckpt, "pre-trained checkpoint to start from");
    ft_cmd->add_option("--epochs", ft_epochs, "training epochs");
    ft_cmd->add_option("--batch", ft_batch, "batch size");
    ft_cmd->add_option("--group-index-mode", ft_index_mode,
                       "spectral group indices: pretrain|finetune")
        ->check(CLI::IsMember({"pretrain", "finetune"}));
    ft_cmd->add_flag("--linear-probe", ft_probe, "train the classifier head only");

    // ---- evaluate ----
    auto* ev_cmd = app.add_subcommand("evaluate", "compute metrics for a checkpoint");
    CommonOpts ev_opts;
    std::string ev_data, ev_ckpt, ev_out = "metrics.json", ev_split = "val";
    add_common(ev_cmd, ev_opts);
    ev_cmd->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
    ev_cmd->add_option("--data", ev_data, "dataset store directory")->required();
    ev_cmd->add_option("--out", ev_out, "metrics JSON output path");
    ev_cmd->add_option("--split", ev_split, "dataset split to score");

    // ---- reconstruct ----
    auto* rc_cmd = app.add_subcommand("reconstruct",
                                      "write masked/reconstruction/original image panels");
    CommonOpts rc_opts;
    std::string rc_data, rc_ckpt, rc_out;
    int rc_n = 4;
    double rc_mask_ratio = 0.75;
    add_common(rc_cmd, rc_opts, false);
    rc_cmd->add_option("--ckpt", rc_ckpt, "pre-trained checkpoint directory")->required();
    rc_cmd->add_option("--data", rc_data, "dataset store directory")->required();
    rc_cmd->add_option("--out", rc_out, "output directory")->required();
    rc_cmd->add_option("--n", rc_n, "number of samples");
    rc_cmd->add_option("--mask-ratio", rc_mask_ratio, "masking ratio in (0,1)");

    // ---- encviz ----
    auto* ez_cmd = app.add_subcommand("encviz", "write positional-encoding similarity maps");
    CommonOpts ez_opts;
    std::string ez_out;
    int ez_group = -1, ez_pos_dim = 0;
    add_common(ez_cmd, ez_opts, false);
    ez_cmd->add_option("--out", ez_out, "output directory")->required();
    ez_cmd->add_option("--group", ez_group, "coarse group id (default: first non-reference)");
    ez_cmd->add_option("--pos-dim", ez_pos_dim, "positional encoding size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (synth_cmd->parsed()) {
        const json merged = build_config_json(synth_opts, "pretrain");
        CliConfig cfg = config_from_json(merged);
        announce_seed(cfg);
        SynthConfig sc = cfg.synth;
        sc.seed = cfg.run.seed;
        sc.out_dir = synth_out;
        if (synth_n >= 0) sc.n_samples = synth_n;
        if (synth_classes > 0) sc.n_classes = synth_classes;
        if (synth_val_fraction >= 0.0) sc.val_fraction = synth_val_fraction;
        if (synth_workers > 0) sc.workers = synth_workers;
        const Store store = synth_generate(sc);
        std::cout << "wrote " << store.samples.size() << " samples to " << synth_out << "\n";
        return 0;
    }

    if (pair_cmd->parsed()) {
        const Store fine = read_store(pair_fine);
        const Store coarse = read_store(pair_coarse);
        const SpectralGroup& ref = fine.geometry.reference_group();
        int fine_id = ref.sensor_id;
        if (!pair_fine_sensor.empty()) {
            const SensorConfig* s = fine.geometry.find_sensor(pair_fine_sensor);
            if (!s) throw UnknownBandError("unknown sensor '" + pair_fine_sensor + "'");
            fine_id = s->sensor_id;
        }
        int coarse_id = -1;
        if (!pair_coarse_sensor.empty()) {
            const SensorConfig* s = coarse.geometry.find_sensor(pair_coarse_sensor);
            if (!s) throw UnknownBandError("unknown sensor '" + pair_coarse_sensor + "'");
            coarse_id = s->sensor_id;
        } else {
            for (const auto& s : coarse.geometry.sensors)
                if (s.sensor_id != fine_id) coarse_id = s.sensor_id;
            if (coarse_id < 0) throw UnknownBandError("coarse store has no second sensor");
        }
        const Store paired = pair_stores(fine, coarse, fine_id, coarse_id, pair_out);
        std::cout << "paired " << paired.samples.size() << " samples into " << pair_out << "\n";
        return 0;
    }

    if (pre_cmd->parsed()) {
        const json merged = build_config_json(pre_opts, "pretrain");
        CliConfig cfg = config_from_json(merged);
        if (pre_epochs >= 0) cfg.run.epochs = pre_epochs;
        if (pre_batch > 0) cfg.run.batch_size = pre_batch;
        if (pre_mask_ratio > 0.0) cfg.run.mask_ratio = pre_mask_ratio;
        announce_seed(cfg);
        const Store store = read_store(pre_data);
        const BandSubset bands =
            resolve_subset(store.geometry, pre_opts.sensors_csv, pre_opts.bands_csv);
        std::filesystem::create_directories(pre_out);
        PretrainResult res = pretrain(store, bands, cfg.model_spec(), cfg.run, std::cout, pre_out);
        std::ofstream log_file(std::filesystem::path(pre_out) / "train.log");
        for (size_t i = 0; i < res.loss_curve.size(); ++i)
            log_file << "step=" << i << " loss=" << res.loss_curve[i] << "\n";
        std::cout << "checkpoint written to " << pre_out << "\n";
        return 0;
    }

    if (ft_cmd->parsed()) {
        const json merged = build_config_json(ft_opts, "finetune");
        CliConfig cfg = config_from_json(merged);
        if (ft_epochs >= 0) cfg.run.epochs = ft_epochs;
        if (ft_batch > 0) cfg.run.batch_size = ft_batch;
        if (ft_probe) cfg.run.linear_probe = true;
        if (!ft_index_mode.empty())
            cfg.run.group_index_mode = ft_index_mode == "pretrain" ? GroupIndexMode::pretrain
                                                                   : GroupIndexMode::finetune;
        announce_seed(cfg);
        const Store store = read_store(ft_data);
        std::unique_ptr<ModelState> ckpt;
        if (!ft_ckpt.empty()) ckpt = load_checkpoint(ft_ckpt);
        const GeometryConfig& subset_geom = ckpt ? ckpt->geometry : store.geometry;
        const BandSubset bands = resolve_subset(subset_geom, ft_opts.sensors_csv,
                                                ft_opts.bands_csv);
        std::filesystem::create_directories(ft_out);
        FinetuneResult res = finetune(ckpt.get(), store, bands, cfg.model_spec(), cfg.run,
                                      std::cout, ft_out);
        std::cout << "best epoch " << res.best_epoch << " (val macro AP " << res.best_metric
                  << "); checkpoint written to " << ft_out << "\n";
        return 0;
    }

    if (ev_cmd->parsed()) {
        const json merged = build_config_json(ev_opts, "finetune");
        CliConfig cfg = config_from_json(merged);
        announce_seed(cfg);
        auto ckpt = load_checkpoint(ev_ckpt);
        const Store store = read_store(ev_data);
        check_geometry_compat(ckpt->geometry, store.geometry, ckpt->bands);
        EvalBatch batch = score_split(*ckpt, store, ev_split);
        json metrics{{"split", ev_split}, {"n_samples", batch.scores.rows}};
        try {
            metrics["micro_ap"] = micro_ap(batch);
            metrics["macro_ap"] = macro_ap(batch);
        } catch (const NoPositivesError& e) {
            metrics["note"] = e.what();
        }
        bool single_label = batch.labels.rows > 0;
        for (int i = 0; i < batch.labels.rows && single_label; ++i) {
            int pos = 0;
            for (int c = 0; c < batch.labels.cols; ++c)
                pos += batch.labels.at(i, c) > 0.5 ? 1 : 0;
            single_label = (pos == 1);
        }
        if (single_label && batch.labels.rows > 0) metrics["accuracy"] = accuracy(batch);
        std::ofstream os(ev_out);
        if (!os) throw IoError("cannot write " + ev_out);
        os << metrics.dump(2) << "\n";
        std::cout << metrics.dump(2) << "\n";
        return 0;
    }

    if (rc_cmd->parsed()) {
        const json merged = build_config_json(rc_opts, "pretrain");
        CliConfig cfg = config_from_json(merged);
        announce_seed(cfg);
        auto ckpt = load_checkpoint(rc_ckpt);
        const Store store = read_store(rc_data);
        check_geometry_compat(ckpt->geometry, store.geometry, ckpt->bands);
        reconstruct_samples(*ckpt, store, rc_n, cfg.run.seed, rc_mask_ratio, rc_out);
        std::cout << "panels written to " << rc_out << "\n";
        return 0;
    }

    if (ez_cmd->parsed()) {
        const json merged = build_config_json(ez_opts, "pretrain");
        CliConfig cfg = config_from_json(merged);
        announce_seed(cfg);
        const GeometryConfig& geom = cfg.geometry;
        const SpectralGroup& ref = geom.reference_group();
        const SpectralGroup* coarse = nullptr;
        for (const auto* g : geom.ordered_groups()) {
            if (ez_group >= 0 && g->id == ez_group) coarse = g;
            if (ez_group < 0 && g->id != ref.id && !coarse) coarse = g;
        }
        if (!coarse) throw UnknownBandError("encviz: group not found");
        EncodingParams params = allocate_encoding_dims(cfg.encoder.d_model, cfg.flags, cfg.omega,
                                                       cfg.run.group_index_mode);
        if (ez_pos_dim > 0) {
            params.pos_dim = ez_pos_dim;
            params.group_dim = 0;
            params.sensor_dim = 0;
            params.d_model = ez_pos_dim;
        }
        const Mat coarse_enc = superpositional(*coarse, geom, params);
        const Mat fine_enc = superpositional(ref, geom, params);
        std::filesystem::create_directories(ez_out);
        const int pr = ref.patch_count;
        for (int i = 0; i < coarse->patch_count; ++i)
            for (int j = 0; j < coarse->patch_count; ++j) {
                Mat sim(pr, pr);
                const double* ce = coarse_enc.row_ptr(i * coarse->patch_count + j);
                for (int u = 0; u < pr; ++u)
                    for (int v = 0; v < pr; ++v)
                        sim.at(u, v) = cosine_similarity(ce, fine_enc.row_ptr(u * pr + v),
                                                         params.pos_dim);
                write_pgm(std::filesystem::path(ez_out) /
                              ("sim_" + std::to_string(i) + "_" + std::to_string(j) + ".pgm"),
                          sim, -1.0, 1.0);
            }
        std::cout << "similarity maps written to " << ez_out << "\n";
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const usat::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const usat::RuntimeFailure& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
