#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usat/geometry.hpp"
#include "usat/mat.hpp"
#include "usat/patch_embed.hpp"
#include "usat/rng.hpp"

namespace usat {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

/// One sensor capture: a set of aligned bands over one ground square.
struct RasterRecord {
    std::string sensor;
    int sensor_id = 0;
    Vec2 origin_m;          // ground coordinates of the top-left corner
    double footprint_m = 0.0;
    int64_t timestamp = 0;  // seconds since epoch
    // band name -> (gsd, file path); pixels live in .usras files
    std::map<std::string, std::pair<double, std::filesystem::path>> bands;
};

struct Annotation {
    std::string class_name;
    bool is_box = false;
    Vec2 point;      // point geometry, or box min corner
    Vec2 box_max;    // box max corner (when is_box)
};

/// Aligned multi-sensor rasters sharing one footprint, with labels.
struct Sample {
    int id = 0;
    std::string split = "train";
    Vec2 origin_m;
    double footprint_m = 0.0;
    std::vector<int> labels; // binary, one per class
    std::map<int, int64_t> timestamps; // sensor id -> timestamp
    RasterMap rasters;
};

struct Store {
    std::filesystem::path dir;
    GeometryConfig geometry;
    std::vector<std::string> classes;
    std::map<std::string, std::pair<double, double>> band_stats; // "sensor/band" -> (mean, std)
    std::vector<Sample> samples; // rasters loaded eagerly (desk scale)

    std::vector<const Sample*> split(const std::string& name) const;
};

// --- raster file format --------------------------------------------------
// "USRAS1\n", one JSON header line, then rows*cols little-endian float32
// row-major.

void write_usras(const std::filesystem::path& path, const std::string& band, const Mat& pixels,
                 double gsd, Vec2 origin, double footprint_m, int64_t timestamp);

struct UsrasFile {
    std::string band;
    Mat pixels;
    double gsd = 0.0;
    Vec2 origin;
    double footprint_m = 0.0;
    int64_t timestamp = 0;
};

UsrasFile read_usras(const std::filesystem::path& path);

// --- pairing pipeline ----------------------------------------------------

/// For each fine record, among coarse records whose footprint fully
/// contains the fine one, picks the minimal |dt| (ties: earliest coarse
/// timestamp). Fine records with no container are dropped.
std::vector<std::pair<int, int>> pair_images(const std::vector<RasterRecord>& fine,
                                             const std::vector<RasterRecord>& coarse);

/// Crops one band to a target square. Boundaries must land on integer
/// pixel edges.
BandRaster crop_to(const BandRaster& band, Vec2 band_origin, Vec2 target_origin,
                   double target_footprint_m);

/// Half-pixel-center bilinear resampling from src_gsd to dst_gsd with edge
/// clamping. The footprint must give an integer output side.
Mat bilinear_resample(const Mat& band, double src_gsd, double dst_gsd);

struct Rect {
    Vec2 origin;
    double size = 0.0;
};

/// Binary vector over class_list; class c is positive iff any annotation
/// of class c intersects the footprint (closed rectangle).
std::vector<int> to_multilabel(const std::vector<Annotation>& annotations, const Rect& footprint,
                               const std::vector<std::string>& class_list);

// --- stores ---------------------------------------------------------------

void write_store(const Store& store);
Store read_store(const std::filesystem::path& dir);

/// Normalized copy of a sample's rasters using per-band dataset stats.
RasterMap normalize_rasters(const RasterMap& rasters, const GeometryConfig& cfg,
                            const std::map<std::string, std::pair<double, double>>& stats);

/// Runs the pairing pipeline over two stores and writes the paired store:
/// coarse records are cropped to each paired fine footprint; labels come
/// from the fine store.
Store pair_stores(const Store& fine_store, const Store& coarse_store, int fine_sensor_id,
                  int coarse_sensor_id, const std::filesystem::path& out_dir);

// --- synthetic dataset -----------------------------------------------------

struct SynthConfig {
    uint64_t seed = 7;
    int n_samples = 64;
    GeometryConfig geometry;
    int n_classes = 5;
    double val_fraction = 0.25;
    double noise_sigma = 0.005;
    double texture_amp = 0.45;
    double label_area_threshold = 0.01;
    int workers = 1;
    std::filesystem::path out_dir;
};

/// Deterministic multi-sensor dataset: a latent class map rendered through
/// a per-(class, band) reflectance table modulated by a fixed smooth
/// illumination field, downsampled to each band's native GSD.
Store synth_generate(const SynthConfig& cfg);

} // namespace usat
