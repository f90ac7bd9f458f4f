#pragma once

#include <string>
#include <vector>

#include "usat/errors.hpp"

namespace usat {

/// Bands from one sensor sharing a ground sampling distance. A group owns a
/// p x p patch grid with s x s pixel patches, so its raster side is p*s and
/// its ground cover per patch is s*gsd meters.
struct SpectralGroup {
    int id = 0;        // unique across the whole config
    int sensor_id = 0;
    std::vector<std::string> band_names;
    double gsd = 0.0;    // meters per pixel
    int patch_count = 0; // p: patches per side
    int patch_size = 0;  // s: pixels per patch side

    int raster_side() const { return patch_count * patch_size; }
    int tokens() const { return patch_count * patch_count; }
    double patch_extent_m() const { return patch_size * gsd; }
};

struct SensorConfig {
    int sensor_id = 0;
    std::string name;
    std::vector<SpectralGroup> groups;
};

struct FootprintConfig {
    double max_footprint_m = 1280.0;
    double image_footprint_m = 0.0;
    /// s*gsd of the reference fine group; filled by validate_config and
    /// persisted in checkpoints so band-subset fine-tuning keeps the
    /// pre-training position grid.
    double fine_patch_extent_m = 0.0;
};

/// One band of one sensor. Band names are unique within a sensor, so the
/// pair identifies a band globally.
struct BandRef {
    int sensor_id = 0;
    std::string band;

    bool operator==(const BandRef& o) const = default;
    bool operator<(const BandRef& o) const {
        if (sensor_id != o.sensor_id) return sensor_id < o.sensor_id;
        return band < o.band;
    }
};

using BandSubset = std::vector<BandRef>;

/// Per-token identity: which group/sensor the token belongs to and its
/// patch grid coordinates.
struct TokenMeta {
    int group_id = 0;
    int sensor_id = 0;
    int row = 0;
    int col = 0;

    bool operator==(const TokenMeta&) const = default;
};

struct GeometryConfig {
    FootprintConfig footprint;
    std::vector<SensorConfig> sensors;

    /// All groups ordered by (sensor_id, group id) — the canonical token order.
    std::vector<const SpectralGroup*> ordered_groups() const;
    const SpectralGroup& reference_group() const; // largest patch count
    const SpectralGroup* find_group(int group_id) const;
    const SensorConfig* find_sensor(int sensor_id) const;
    const SensorConfig* find_sensor(const std::string& name) const;
    const SpectralGroup* group_of_band(const BandRef& b) const;
};

/// Checks every geometry invariant and returns a normalized copy with
/// fine_patch_extent_m filled in. Throws DivisibilityError, CoverageError,
/// DuplicateIdError or FootprintError.
GeometryConfig validate_config(const GeometryConfig& cfg);

BandSubset all_bands(const GeometryConfig& cfg);
BandSubset bands_of_sensor(const GeometryConfig& cfg, int sensor_id);

/// Groups with at least one selected band, in canonical order, paired with
/// the selected band names in group order. Throws EmptySubsetError /
/// UnknownBandError.
std::vector<std::pair<const SpectralGroup*, std::vector<std::string>>>
groups_in_subset(const GeometryConfig& cfg, const BandSubset& subset);

/// Total token count for the subset: sum of p^2 over represented groups.
int sequence_length(const GeometryConfig& cfg, const BandSubset& subset);

/// Offset (in fine-patch units) of the image's patch grid inside the
/// max-footprint frame when placed concentrically. May be fractional.
double fine_grid_offset(double image_footprint_m, double max_footprint_m,
                        double fine_patch_extent_m);

/// Same concentric offset expressed in a group's own patch units.
double group_grid_offset(const GeometryConfig& cfg, const SpectralGroup& g);

/// Canonical token order for a subset: (sensor_id, group id, row-major patch).
std::vector<TokenMeta> token_layout(const GeometryConfig& cfg, const BandSubset& subset);

/// Derives the geometry for a dataset with a different (smaller) footprint
/// from the same sensors: patch counts rescale, patch sizes and GSDs stay.
/// Throws GeometryMismatchError when the footprint is incompatible.
GeometryConfig with_footprint(const GeometryConfig& cfg, double image_footprint_m);

/// The standard two-sensor desk configuration: a 1 m aerial sensor
/// (20x20 patches of 16px) plus a 10 m / 20 m satellite sensor
/// (4x4 and 2x2 patches of 8px) over a 320 m footprint in a 1280 m frame.
GeometryConfig usatlas_geometry();

} // namespace usat
