#include "usat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace usat {

using nlohmann::json;

std::vector<const Sample*> Store::split(const std::string& name) const {
    std::vector<const Sample*> out;
    for (const auto& s : samples)
        if (s.split == name) out.push_back(&s);
    return out;
}

std::vector<std::pair<int, int>> pair_images(const std::vector<RasterRecord>& fine,
                                             const std::vector<RasterRecord>& coarse) {
    constexpr double kTol = 1e-6;
    std::vector<std::pair<int, int>> out;
    for (size_t fi = 0; fi < fine.size(); ++fi) {
        const RasterRecord& f = fine[fi];
        int best = -1;
        for (size_t ci = 0; ci < coarse.size(); ++ci) {
            const RasterRecord& c = coarse[ci];
            const bool contains = c.origin_m.x <= f.origin_m.x + kTol &&
                                  c.origin_m.y <= f.origin_m.y + kTol &&
                                  c.origin_m.x + c.footprint_m >= f.origin_m.x + f.footprint_m - kTol &&
                                  c.origin_m.y + c.footprint_m >= f.origin_m.y + f.footprint_m - kTol;
            if (!contains) continue;
            if (best < 0) {
                best = static_cast<int>(ci);
                continue;
            }
            const RasterRecord& b = coarse[static_cast<size_t>(best)];
            const int64_t dt_c = std::llabs(c.timestamp - f.timestamp);
            const int64_t dt_b = std::llabs(b.timestamp - f.timestamp);
            if (dt_c < dt_b || (dt_c == dt_b && c.timestamp < b.timestamp))
                best = static_cast<int>(ci);
        }
        if (best >= 0) out.emplace_back(static_cast<int>(fi), best);
    }
    return out;
}

BandRaster crop_to(const BandRaster& band, Vec2 band_origin, Vec2 target_origin,
                   double target_footprint_m) {
    const double gsd = band.gsd;
    if (target_origin.x < band_origin.x - 1e-9 || target_origin.y < band_origin.y - 1e-9 ||
        target_origin.x + target_footprint_m > band_origin.x + band.footprint_m + 1e-9 ||
        target_origin.y + target_footprint_m > band_origin.y + band.footprint_m + 1e-9)
        throw OutOfBoundsError("crop_to: target square outside record footprint");

    const double col0 = (target_origin.x - band_origin.x) / gsd;
    const double row0 = (target_origin.y - band_origin.y) / gsd;
    const double side = target_footprint_m / gsd;
    auto near_int = [](double v) { return std::fabs(v - std::round(v)) <= 1e-9 * std::max(1.0, std::fabs(v)); };
    if (!near_int(col0) || !near_int(row0) || !near_int(side))
        throw AlignmentError("crop_to: crop boundary not on pixel edges");

    const int c0 = static_cast<int>(std::llround(col0));
    const int r0 = static_cast<int>(std::llround(row0));
    const int n = static_cast<int>(std::llround(side));
    if (r0 + n > band.pixels.rows || c0 + n > band.pixels.cols)
        throw OutOfBoundsError("crop_to: window exceeds raster");

    BandRaster out;
    out.band = band.band;
    out.gsd = gsd;
    out.footprint_m = target_footprint_m;
    out.pixels = Mat(n, n);
    for (int r = 0; r < n; ++r)
        std::copy(band.pixels.row_ptr(r0 + r) + c0, band.pixels.row_ptr(r0 + r) + c0 + n,
                  out.pixels.row_ptr(r));
    return out;
}

Mat bilinear_resample(const Mat& band, double src_gsd, double dst_gsd) {
    if (band.rows != band.cols) throw ShapeError("bilinear_resample: raster must be square");
    if (src_gsd <= 0.0 || dst_gsd <= 0.0) throw ShapeError("bilinear_resample: bad gsd");
    const double footprint = band.rows * src_gsd;
    const double side = footprint / dst_gsd;
    if (std::fabs(side - std::round(side)) > 1e-9 * std::max(1.0, side))
        throw ShapeError("bilinear_resample: footprint does not give integer output side");
    const int n_out = static_cast<int>(std::llround(side));
    const double k = dst_gsd / src_gsd;
    if (n_out == band.rows && std::fabs(k - 1.0) <= 1e-12) return band;

    Mat out(n_out, n_out);
    const int n_in = band.rows;
    auto clamp = [n_in](int v) { return std::min(std::max(v, 0), n_in - 1); };
    for (int r = 0; r < n_out; ++r) {
        const double sy = (r + 0.5) * k - 0.5;
        const int y0 = clamp(static_cast<int>(std::floor(sy)));
        const int y1 = clamp(y0 + 1);
        const double fy = std::min(std::max(sy - std::floor(sy), 0.0), 1.0);
        for (int c = 0; c < n_out; ++c) {
            const double sx = (c + 0.5) * k - 0.5;
            const int x0 = clamp(static_cast<int>(std::floor(sx)));
            const int x1 = clamp(x0 + 1);
            const double fx = std::min(std::max(sx - std::floor(sx), 0.0), 1.0);
            const double v00 = band.at(y0, x0);
            const double v01 = band.at(y0, x1);
            const double v10 = band.at(y1, x0);
            const double v11 = band.at(y1, x1);
            out.at(r, c) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                           fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    return out;
}

std::vector<int> to_multilabel(const std::vector<Annotation>& annotations, const Rect& footprint,
                               const std::vector<std::string>& class_list) {
    std::vector<int> out(class_list.size(), 0);
    const double x0 = footprint.origin.x, y0 = footprint.origin.y;
    const double x1 = x0 + footprint.size, y1 = y0 + footprint.size;
    for (const auto& a : annotations) {
        const auto it = std::find(class_list.begin(), class_list.end(), a.class_name);
        if (it == class_list.end())
            throw UnknownClassError("to_multilabel: unknown class '" + a.class_name + "'");
        bool hit;
        if (a.is_box) {
            hit = a.point.x <= x1 && a.box_max.x >= x0 && a.point.y <= y1 && a.box_max.y >= y0;
        } else {
            hit = a.point.x >= x0 && a.point.x <= x1 && a.point.y >= y0 && a.point.y <= y1;
        }
        if (hit) out[static_cast<size_t>(it - class_list.begin())] = 1;
    }
    return out;
}

// --- store I/O --------------------------------------------------------------

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
            {"sensors", sensors}};
}

GeometryConfig geometry_from_json(const json& j) {
    GeometryConfig g;
    g.footprint.max_footprint_m = j.at("max_footprint_m").get<double>();
    g.footprint.image_footprint_m = j.at("image_footprint_m").get<double>();
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

std::string raster_filename(int sample_id, const std::string& sensor, const std::string& band) {
    return std::to_string(sample_id) + "_" + sensor + "_" + band + ".usras";
}

} // namespace

void write_store(const Store& store) {
    std::filesystem::create_directories(store.dir / "rasters");
    json samples = json::array();
    for (const auto& s : store.samples) {
        json records = json::array();
        // one record per sensor
        std::map<int, json> by_sensor;
        for (const auto& [key, raster] : s.rasters) {
            const SensorConfig* sensor = store.geometry.find_sensor(key.first);
            json& rec = by_sensor[key.first];
            if (rec.is_null()) {
                rec = {{"sensor", sensor->name},
                       {"sensor_id", key.first},
                       {"origin_m", {s.origin_m.x, s.origin_m.y}},
                       {"footprint_m", s.footprint_m},
                       {"timestamp", s.timestamps.count(key.first) ? s.timestamps.at(key.first) : 0},
                       {"bands", json::object()}};
            }
            const std::string fname = raster_filename(s.id, sensor->name, key.second);
            rec["bands"][key.second] = {{"gsd", raster.gsd}, {"path", "rasters/" + fname}};
            write_usras(store.dir / "rasters" / fname, key.second, raster.pixels, raster.gsd,
                        s.origin_m, s.footprint_m,
                        s.timestamps.count(key.first) ? s.timestamps.at(key.first) : 0);
        }
        for (auto& [sid, rec] : by_sensor) records.push_back(std::move(rec));
        samples.push_back({{"id", s.id},
                           {"split", s.split},
                           {"labels", s.labels},
                           {"records", records}});
    }
    json stats = json::object();
    for (const auto& [key, ms] : store.band_stats)
        stats[key] = {{"mean", ms.first}, {"std", ms.second}};
    json manifest = {{"format", "usat-store-v1"},
                     {"geometry", geometry_to_json(store.geometry)},
                     {"classes", store.classes},
                     {"band_stats", stats},
                     {"samples", samples}};
    std::ofstream os(store.dir / "manifest.json");
    if (!os) throw IoError("cannot write store manifest");
    os << manifest.dump(2) << "\n";
}

Store read_store(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("cannot read " + (dir / "manifest.json").string());
    json manifest = json::parse(is);
    if (manifest.value("format", "") != "usat-store-v1") throw IoError("unrecognized store format");

    Store store;
    store.dir = dir;
    store.geometry = geometry_from_json(manifest.at("geometry"));
    store.classes = manifest.at("classes").get<std::vector<std::string>>();
    for (const auto& [key, js] : manifest.at("band_stats").items())
        store.band_stats[key] = {js.at("mean").get<double>(), js.at("std").get<double>()};

    for (const auto& js : manifest.at("samples")) {
        Sample s;
        s.id = js.at("id").get<int>();
        s.split = js.at("split").get<std::string>();
        s.labels = js.at("labels").get<std::vector<int>>();
        for (const auto& jr : js.at("records")) {
            const int sid = jr.at("sensor_id").get<int>();
            s.origin_m = {jr.at("origin_m")[0].get<double>(), jr.at("origin_m")[1].get<double>()};
            s.footprint_m = jr.at("footprint_m").get<double>();
            s.timestamps[sid] = jr.at("timestamp").get<int64_t>();
            for (const auto& [band, jb] : jr.at("bands").items()) {
                UsrasFile f = read_usras(dir / jb.at("path").get<std::string>());
                BandRaster r;
                r.band = band;
                r.pixels = std::move(f.pixels);
                r.gsd = jb.at("gsd").get<double>();
                r.footprint_m = s.footprint_m;
                s.rasters[{sid, band}] = std::move(r);
            }
        }
        store.samples.push_back(std::move(s));
    }
    return store;
}

RasterMap normalize_rasters(const RasterMap& rasters, const GeometryConfig& cfg,
                            const std::map<std::string, std::pair<double, double>>& stats) {
    RasterMap out;
    for (const auto& [key, raster] : rasters) {
        const SensorConfig* sensor = cfg.find_sensor(key.first);
        const std::string skey = sensor->name + "/" + key.second;
        double mean = 0.0, std_ = 1.0;
        if (const auto it = stats.find(skey); it != stats.end()) {
            mean = it->second.first;
            std_ = std::max(it->second.second, 1e-12);
        }
        BandRaster r = raster;
        for (double& v : r.pixels.d) v = (v - mean) / std_;
        out[key] = std::move(r);
    }
    return out;
}

Store pair_stores(const Store& fine_store, const Store& coarse_store, int fine_sensor_id,
                  int coarse_sensor_id, const std::filesystem::path& out_dir) {
    // Flatten stores into per-sensor record lists.
    struct Ref {
        int sample_index;
    };
    std::vector<RasterRecord> fine_recs, coarse_recs;
    std::vector<Ref> fine_refs, coarse_refs;
    auto collect = [](const Store& st, int sensor_id, std::vector<RasterRecord>& recs,
                      std::vector<Ref>& refs) {
        for (size_t i = 0; i < st.samples.size(); ++i) {
            const Sample& s = st.samples[i];
            RasterRecord rec;
            rec.sensor_id = sensor_id;
            const SensorConfig* sensor = st.geometry.find_sensor(sensor_id);
            if (!sensor) throw UnknownBandError("pair_stores: store has no sensor id " +
                                                std::to_string(sensor_id));
            rec.sensor = sensor->name;
            rec.origin_m = s.origin_m;
            rec.footprint_m = s.footprint_m;
            rec.timestamp = s.timestamps.count(sensor_id) ? s.timestamps.at(sensor_id) : 0;
            bool any = false;
            for (const auto& [key, raster] : s.rasters)
                if (key.first == sensor_id) {
                    rec.bands[key.second] = {raster.gsd, {}};
                    any = true;
                }
            if (!any) continue;
            recs.push_back(rec);
            refs.push_back({static_cast<int>(i)});
        }
    };
    collect(fine_store, fine_sensor_id, fine_recs, fine_refs);
    collect(coarse_store, coarse_sensor_id, coarse_recs, coarse_refs);

    const auto pairs = pair_images(fine_recs, coarse_recs);

    Store out;
    out.dir = out_dir;
    out.geometry = fine_store.geometry;
    out.classes = fine_store.classes;
    out.band_stats = fine_store.band_stats;
    for (const auto& [key, ms] : coarse_store.band_stats)
        out.band_stats.emplace(key, ms);

    int next_id = 0;
    for (const auto& [fi, ci] : pairs) {
        const Sample& fs = fine_store.samples[static_cast<size_t>(fine_refs[static_cast<size_t>(fi)].sample_index)];
        const Sample& cs = coarse_store.samples[static_cast<size_t>(coarse_refs[static_cast<size_t>(ci)].sample_index)];
        Sample merged;
        merged.id = next_id++;
        merged.split = fs.split;
        merged.origin_m = fs.origin_m;
        merged.footprint_m = fs.footprint_m;
        merged.labels = fs.labels;
        merged.timestamps[fine_sensor_id] = fs.timestamps.at(fine_sensor_id);
        merged.timestamps[coarse_sensor_id] = cs.timestamps.at(coarse_sensor_id);
        for (const auto& [key, raster] : fs.rasters)
            if (key.first == fine_sensor_id) merged.rasters[key] = raster;
        for (const auto& [key, raster] : cs.rasters)
            if (key.first == coarse_sensor_id)
                merged.rasters[key] = crop_to(raster, cs.origin_m, fs.origin_m, fs.footprint_m);
        out.samples.push_back(std::move(merged));
    }
    write_store(out);
    return out;
}

} // namespace usat
