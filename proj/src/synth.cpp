#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "usat/data.hpp"

namespace usat {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Fixed smooth illumination field drawn once per dataset. Gives every
/// patch deterministic within-token structure at all patch scales, which
/// keeps per-token-normalized reconstruction targets learnable.
struct TextureField {
    struct Wave {
        double ux, uy, lambda, phase, amp;
    };
    std::vector<Wave> waves;

    double at(double x, double y) const {
        double v = 0.0;
        for (const auto& w : waves)
            v += w.amp * std::sin(kTwoPi * (w.ux * x + w.uy * y) / w.lambda + w.phase);
        return v;
    }
};

TextureField make_texture(Rng& rng) {
    TextureField t;
    // wavelengths near the patch extents keep the per-token phase step of
    // the field around one radian on the fine grid, matching the frequency
    // range the positional encodings can express
    const double lambdas[3] = {97.0, 151.0, 263.0};
    const double amps[3] = {0.5, 0.3, 0.2};
    for (int i = 0; i < 3; ++i) {
        const double ang = rng.uniform(0.0, kTwoPi);
        t.waves.push_back({std::cos(ang), std::sin(ang), lambdas[i], rng.uniform(0.0, kTwoPi),
                           amps[i]});
    }
    return t;
}

struct Blob {
    double cx, cy, sigma, amp;
};

} // namespace

Store synth_generate(const SynthConfig& cfg) {
    if (cfg.n_samples < 0) throw ConfigError("synth: negative sample count");
    if (cfg.n_classes < 1) throw ConfigError("synth: need at least one class");
    const GeometryConfig geom = validate_config(cfg.geometry);
    const double footprint = geom.footprint.image_footprint_m;

    // ordered band list (canonical token order)
    struct BandInfo {
        BandKey key;
        std::string stat_key;
        double gsd;
        int side;
    };
    std::vector<BandInfo> bands;
    double fine_gsd = 0.0;
    for (const auto* g : geom.ordered_groups()) {
        const SensorConfig* sensor = geom.find_sensor(g->sensor_id);
        for (const auto& name : g->band_names)
            bands.push_back({{g->sensor_id, name}, sensor->name + "/" + name, g->gsd,
                             g->raster_side()});
        if (fine_gsd == 0.0 || g->gsd < fine_gsd) fine_gsd = g->gsd;
    }
    const int fine_side = static_cast<int>(std::llround(footprint / fine_gsd));

    Rng table_rng(derive_seed(cfg.seed, "synth-table"));
    // per-(class, band) reflectance
    std::vector<std::vector<double>> reflect(static_cast<size_t>(cfg.n_classes));
    for (auto& row : reflect) {
        row.resize(bands.size());
        for (double& v : row) v = table_rng.uniform(0.15, 0.95);
    }
    const TextureField texture = make_texture(table_rng);

    Store store;
    store.dir = cfg.out_dir;
    store.geometry = geom;
    for (int k = 0; k < cfg.n_classes; ++k) store.classes.push_back("class" + std::to_string(k));
    store.samples.resize(static_cast<size_t>(cfg.n_samples));

    const int n_val = static_cast<int>(std::lround(cfg.n_samples * cfg.val_fraction));
    const int n_train = cfg.n_samples - n_val;

    auto generate_sample = [&](int i) {
        Rng rng(derive_seed(cfg.seed, "synth-sample", static_cast<uint64_t>(i)));
        Sample& s = store.samples[static_cast<size_t>(i)];
        s.id = i;
        s.split = (i < n_train) ? "train" : "val";
        s.origin_m = {i * 2.0 * footprint, 0.0};
        s.footprint_m = footprint;

        // latent class map at the finest GSD: strongest blob field wins,
        // class 0 is the background
        std::vector<std::vector<Blob>> blobs(static_cast<size_t>(cfg.n_classes));
        for (int k = 1; k < cfg.n_classes; ++k) {
            const int nb = 1 + static_cast<int>(rng.below(3));
            for (int b = 0; b < nb; ++b)
                blobs[static_cast<size_t>(k)].push_back(
                    {rng.uniform(0.0, footprint), rng.uniform(0.0, footprint),
                     rng.uniform(footprint / 10.0, footprint / 3.0), rng.uniform(0.5, 1.5)});
        }
        std::vector<int> label_map(static_cast<size_t>(fine_side) * fine_side, 0);
        std::vector<long> area(static_cast<size_t>(cfg.n_classes), 0);
        for (int r = 0; r < fine_side; ++r) {
            const double y = s.origin_m.y + (r + 0.5) * fine_gsd;
            for (int c = 0; c < fine_side; ++c) {
                const double x = s.origin_m.x + (c + 0.5) * fine_gsd;
                int best = 0;
                double best_f = 0.25; // background threshold
                for (int k = 1; k < cfg.n_classes; ++k) {
                    double f = 0.0;
                    for (const auto& bl : blobs[static_cast<size_t>(k)]) {
                        const double dx = x - (s.origin_m.x + bl.cx);
                        const double dy = y - (s.origin_m.y + bl.cy);
                        f = std::max(f, bl.amp * std::exp(-(dx * dx + dy * dy) /
                                                          (2.0 * bl.sigma * bl.sigma)));
                    }
                    if (f > best_f) {
                        best_f = f;
                        best = k;
                    }
                }
                label_map[static_cast<size_t>(r) * fine_side + c] = best;
                ++area[static_cast<size_t>(best)];
            }
        }
        s.labels.assign(static_cast<size_t>(cfg.n_classes), 0);
        const double total = static_cast<double>(fine_side) * fine_side;
        for (int k = 0; k < cfg.n_classes; ++k)
            if (area[static_cast<size_t>(k)] / total >= cfg.label_area_threshold)
                s.labels[static_cast<size_t>(k)] = 1;

        // render bands at fine GSD, then bring to native GSD
        for (size_t b = 0; b < bands.size(); ++b) {
            Mat fine(fine_side, fine_side);
            for (int r = 0; r < fine_side; ++r) {
                const double y = s.origin_m.y + (r + 0.5) * fine_gsd;
                double* row = fine.row_ptr(r);
                for (int c = 0; c < fine_side; ++c) {
                    const double x = s.origin_m.x + (c + 0.5) * fine_gsd;
                    const int cls = label_map[static_cast<size_t>(r) * fine_side + c];
                    const double base = reflect[static_cast<size_t>(cls)][b];
                    row[c] = base * (1.0 + cfg.texture_amp * texture.at(x, y)) +
                             cfg.noise_sigma * rng.normal();
                }
            }
            BandRaster raster;
            raster.band = bands[b].key.second;
            raster.gsd = bands[b].gsd;
            raster.footprint_m = footprint;
            raster.pixels = (bands[b].gsd == fine_gsd)
                                ? std::move(fine)
                                : bilinear_resample(fine, fine_gsd, bands[b].gsd);
            s.rasters[bands[b].key] = std::move(raster);
        }
        const int64_t base_ts = 1600000000 + static_cast<int64_t>(i) * 86400;
        bool first = true;
        for (const auto& sensor : geom.sensors) {
            s.timestamps[sensor.sensor_id] =
                first ? base_ts : base_ts + static_cast<int64_t>(rng.below(7200)) - 3600;
            first = false;
        }
    };

    const int workers = std::max(1, cfg.workers);
    if (workers == 1 || cfg.n_samples <= 1) {
        for (int i = 0; i < cfg.n_samples; ++i) generate_sample(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < cfg.n_samples; i = next.fetch_add(1))
                    generate_sample(i);
            });
        for (auto& t : pool) t.join();
    }

    // per-band stats over all samples (two-pass)
    for (const auto& b : bands) {
        double sum = 0.0;
        long count = 0;
        for (const auto& s : store.samples) {
            const Mat& px = s.rasters.at(b.key).pixels;
            for (double v : px.d) sum += v;
            count += static_cast<long>(px.size());
        }
        const double mean = count ? sum / count : 0.0;
        double ss = 0.0;
        for (const auto& s : store.samples) {
            const Mat& px = s.rasters.at(b.key).pixels;
            for (double v : px.d) ss += (v - mean) * (v - mean);
        }
        const double std_ = count ? std::sqrt(ss / count) : 1.0;
        store.band_stats[b.stat_key] = {mean, std_};
    }

    if (!cfg.out_dir.empty()) write_store(store);
    return store;
}

} // namespace usat
