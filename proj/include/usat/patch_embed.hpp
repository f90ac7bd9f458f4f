#pragma once

#include <map>
#include <string>
#include <vector>

#include "usat/autograd.hpp"
#include "usat/geometry.hpp"
#include "usat/mat.hpp"
#include "usat/rng.hpp"

namespace usat {

/// One band of one sample: a square raster with its ground geometry.
struct BandRaster {
    std::string band;
    Mat pixels; // side == p*s of the owning group
    double gsd = 0.0;
    double footprint_m = 0.0;
};

using BandKey = std::pair<int, std::string>; // (sensor_id, band name)
using RasterMap = std::map<BandKey, BandRaster>;

enum class PoolMode { average, sum };

/// Splits a square raster into p*p patches of s*s pixels, row-major over
/// patch positions, each patch flattened row-major. Output is [p^2, s^2].
Mat patchify(const Mat& raster, int p, int s);

/// Inverse of patchify.
Mat unpatchify(const Mat& patches, int p, int s);

/// Per-band affine patch projection, registered in the model's parameter
/// tree under proj/<sensor>/<band>/{W,b}.
struct PatchProjection {
    Param* W = nullptr; // [s^2, d_model]
    Param* b = nullptr; // [1, d_model]
};

using ProjectionTable = std::map<BandKey, PatchProjection>;

/// patches [n, s^2] -> [n, d_model]
ag::NodeId project_band(ag::Tape& tape, const PatchProjection& proj, ag::NodeId patches);

/// Elementwise mean (default) or sum of the present bands' embeddings.
ag::NodeId group_pool(ag::Tape& tape, const std::vector<ag::NodeId>& per_band, PoolMode mode);

/// Pure variant used by tests and oracles.
Mat group_pool(const std::vector<Mat>& per_band, PoolMode mode);

struct TokenBatch {
    ag::NodeId tokens = -1; // [seq_len, d_model]
    std::vector<TokenMeta> meta;
    std::vector<uint8_t> mask; // parallel to meta; 1 = masked
};

/// Patchifies, projects and pools every selected band. Tokens are ordered
/// by (sensor_id, group id, row-major patch index); no encodings are added.
TokenBatch embed_sample(ag::Tape& tape, const ProjectionTable& projections,
                        const RasterMap& rasters, const BandSubset& subset,
                        const GeometryConfig& cfg, PoolMode mode);

} // namespace usat
