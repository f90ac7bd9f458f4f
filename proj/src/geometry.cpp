#include "usat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace usat {

namespace {

bool close_rel(double a, double b, double rel = 1e-9) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
    return std::fabs(a - b) <= rel * scale;
}

} // namespace

std::vector<const SpectralGroup*> GeometryConfig::ordered_groups() const {
    std::vector<const SpectralGroup*> out;
    for (const auto& s : sensors)
        for (const auto& g : s.groups) out.push_back(&g);
    std::sort(out.begin(), out.end(), [](const SpectralGroup* a, const SpectralGroup* b) {
        if (a->sensor_id != b->sensor_id) return a->sensor_id < b->sensor_id;
        return a->id < b->id;
    });
    return out;
}

const SpectralGroup& GeometryConfig::reference_group() const {
    const SpectralGroup* ref = nullptr;
    for (const auto* g : ordered_groups())
        if (!ref || g->patch_count > ref->patch_count) ref = g;
    if (!ref) throw ConfigError("geometry has no spectral groups");
    return *ref;
}

const SpectralGroup* GeometryConfig::find_group(int group_id) const {
    for (const auto& s : sensors)
        for (const auto& g : s.groups)
            if (g.id == group_id) return &g;
    return nullptr;
}

const SensorConfig* GeometryConfig::find_sensor(int sensor_id) const {
    for (const auto& s : sensors)
        if (s.sensor_id == sensor_id) return &s;
    return nullptr;
}

const SensorConfig* GeometryConfig::find_sensor(const std::string& name) const {
    for (const auto& s : sensors)
        if (s.name == name) return &s;
    return nullptr;
}

const SpectralGroup* GeometryConfig::group_of_band(const BandRef& b) const {
    const SensorConfig* s = find_sensor(b.sensor_id);
    if (!s) return nullptr;
    for (const auto& g : s->groups)
        for (const auto& name : g.band_names)
            if (name == b.band) return &g;
    return nullptr;
}

GeometryConfig validate_config(const GeometryConfig& cfg) {
    if (cfg.sensors.empty()) throw ConfigError("geometry: no sensors");
    if (cfg.footprint.image_footprint_m <= 0.0)
        throw FootprintError("geometry: image footprint must be positive");
    if (cfg.footprint.image_footprint_m > cfg.footprint.max_footprint_m + 1e-9)
        throw FootprintError("geometry: image footprint exceeds max footprint");

    std::set<int> sensor_ids;
    std::set<int> group_ids;
    for (const auto& s : cfg.sensors) {
        if (!sensor_ids.insert(s.sensor_id).second)
            throw DuplicateIdError("geometry: duplicate sensor id " + std::to_string(s.sensor_id));
        std::set<std::string> names;
        for (const auto& g : s.groups) {
            if (g.sensor_id != s.sensor_id)
                throw ConfigError("geometry: group sensor_id mismatch");
            if (!group_ids.insert(g.id).second)
                throw DuplicateIdError("geometry: duplicate group id " + std::to_string(g.id));
            if (g.band_names.empty()) throw ConfigError("geometry: group without bands");
            for (const auto& b : g.band_names)
                if (!names.insert(b).second)
                    throw DuplicateIdError("geometry: duplicate band '" + b + "' in sensor " + s.name);
            if (g.gsd <= 0.0 || g.patch_count < 1 || g.patch_size < 1)
                throw ConfigError("geometry: non-positive group geometry");
            const double cover = g.patch_count * static_cast<double>(g.patch_size) * g.gsd;
            if (!close_rel(cover, cfg.footprint.image_footprint_m)) {
                std::ostringstream os;
                os << "geometry: group " << g.id << " covers " << cover << " m, footprint is "
                   << cfg.footprint.image_footprint_m << " m";
                throw CoverageError(os.str());
            }
        }
    }

    GeometryConfig out = cfg;
    const SpectralGroup& ref = out.reference_group();
    for (const auto* g : out.ordered_groups()) {
        if (ref.patch_count % g->patch_count != 0)
            throw DivisibilityError("geometry: reference patch count " +
                                    std::to_string(ref.patch_count) + " not divisible by " +
                                    std::to_string(g->patch_count));
    }
    const double extent = ref.patch_extent_m();
    if (out.footprint.fine_patch_extent_m != 0.0 &&
        !close_rel(out.footprint.fine_patch_extent_m, extent))
        throw CoverageError("geometry: fine_patch_extent_m does not match reference group");
    out.footprint.fine_patch_extent_m = extent;
    return out;
}

BandSubset all_bands(const GeometryConfig& cfg) {
    BandSubset out;
    for (const auto* g : cfg.ordered_groups())
        for (const auto& b : g->band_names) out.push_back({g->sensor_id, b});
    return out;
}

BandSubset bands_of_sensor(const GeometryConfig& cfg, int sensor_id) {
    BandSubset out;
    for (const auto* g : cfg.ordered_groups())
        if (g->sensor_id == sensor_id)
            for (const auto& b : g->band_names) out.push_back({g->sensor_id, b});
    return out;
}

std::vector<std::pair<const SpectralGroup*, std::vector<std::string>>>
groups_in_subset(const GeometryConfig& cfg, const BandSubset& subset) {
    if (subset.empty()) throw EmptySubsetError("band subset is empty");
    std::set<BandRef> seen(subset.begin(), subset.end());
    for (const auto& b : seen)
        if (!cfg.group_of_band(b))
            throw UnknownBandError("unknown band '" + b.band + "' for sensor " +
                                   std::to_string(b.sensor_id));
    std::vector<std::pair<const SpectralGroup*, std::vector<std::string>>> out;
    for (const auto* g : cfg.ordered_groups()) {
        std::vector<std::string> present;
        for (const auto& name : g->band_names)
            if (seen.count({g->sensor_id, name})) present.push_back(name);
        if (!present.empty()) out.emplace_back(g, std::move(present));
    }
    return out;
}

int sequence_length(const GeometryConfig& cfg, const BandSubset& subset) {
    int total = 0;
    for (const auto& [g, bands] : groups_in_subset(cfg, subset)) total += g->tokens();
    return total;
}

double fine_grid_offset(double image_footprint_m, double max_footprint_m,
                        double fine_patch_extent_m) {
    if (image_footprint_m > max_footprint_m + 1e-9)
        throw FootprintError("image footprint exceeds max footprint");
    return (max_footprint_m - image_footprint_m) / (2.0 * fine_patch_extent_m);
}

double group_grid_offset(const GeometryConfig& cfg, const SpectralGroup& g) {
    return fine_grid_offset(cfg.footprint.image_footprint_m, cfg.footprint.max_footprint_m,
                            g.patch_extent_m());
}

std::vector<TokenMeta> token_layout(const GeometryConfig& cfg, const BandSubset& subset) {
    std::vector<TokenMeta> out;
    for (const auto& [g, bands] : groups_in_subset(cfg, subset))
        for (int r = 0; r < g->patch_count; ++r)
            for (int c = 0; c < g->patch_count; ++c)
                out.push_back({g->id, g->sensor_id, r, c});
    return out;
}

GeometryConfig with_footprint(const GeometryConfig& cfg, double image_footprint_m) {
    GeometryConfig out = cfg;
    out.footprint.image_footprint_m = image_footprint_m;
    out.footprint.fine_patch_extent_m = 0.0;
    for (auto& s : out.sensors) {
        for (auto& g : s.groups) {
            const double p = image_footprint_m / (g.patch_size * g.gsd);
            const double rounded = std::round(p);
            if (rounded < 1.0 || std::fabs(p - rounded) > 1e-9)
                throw GeometryMismatchError(
                    "footprint " + std::to_string(image_footprint_m) +
                    " m does not yield an integer patch grid for group " + std::to_string(g.id));
            g.patch_count = static_cast<int>(rounded);
        }
    }
    try {
        return validate_config(out);
    } catch (const ValidationError& e) {
        throw GeometryMismatchError(std::string("derived geometry invalid: ") + e.what());
    }
}

GeometryConfig usatlas_geometry() {
    GeometryConfig cfg;
    cfg.footprint.max_footprint_m = 1280.0;
    cfg.footprint.image_footprint_m = 320.0;

    SensorConfig naip;
    naip.sensor_id = 0;
    naip.name = "NAIP";
    naip.groups.push_back({0, 0, {"Red", "Green", "Blue"}, 1.0, 20, 16});
    cfg.sensors.push_back(naip);

    SensorConfig s2;
    s2.sensor_id = 1;
    s2.name = "Sentinel-2";
    s2.groups.push_back({1, 1, {"Red", "Green", "Blue", "NIR"}, 10.0, 4, 8});
    s2.groups.push_back({2, 1, {"RedEdge1", "RedEdge2", "RedEdge3", "SWIR1", "SWIR2"}, 20.0, 2, 8});
    cfg.sensors.push_back(s2);

    return validate_config(cfg);
}

} // namespace usat
