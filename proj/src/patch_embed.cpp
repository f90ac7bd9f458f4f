#include "usat/patch_embed.hpp"

#include <algorithm>

namespace usat {

Mat patchify(const Mat& raster, int p, int s) {
    if (raster.rows != p * s || raster.cols != p * s)
        throw ShapeError("patchify: raster side must equal p*s");
    Mat out(p * p, s * s);
    for (int pi = 0; pi < p; ++pi)
        for (int pj = 0; pj < p; ++pj) {
            double* dst = out.row_ptr(pi * p + pj);
            for (int r = 0; r < s; ++r) {
                const double* src = raster.row_ptr(pi * s + r) + pj * s;
                std::copy(src, src + s, dst + r * s);
            }
        }
    return out;
}

Mat unpatchify(const Mat& patches, int p, int s) {
    if (patches.rows != p * p || patches.cols != s * s)
        throw ShapeError("unpatchify: bad patch matrix shape");
    Mat out(p * s, p * s);
    for (int pi = 0; pi < p; ++pi)
        for (int pj = 0; pj < p; ++pj) {
            const double* src = patches.row_ptr(pi * p + pj);
            for (int r = 0; r < s; ++r)
                std::copy(src + r * s, src + (r + 1) * s, out.row_ptr(pi * s + r) + pj * s);
        }
    return out;
}

ag::NodeId project_band(ag::Tape& tape, const PatchProjection& proj, ag::NodeId patches) {
    if (!proj.W || !proj.b) throw UnknownBandError("project_band: band has no projection");
    return tape.add_rowvec(tape.matmul(patches, tape.param(*proj.W)), tape.param(*proj.b));
}

ag::NodeId group_pool(ag::Tape& tape, const std::vector<ag::NodeId>& per_band, PoolMode mode) {
    if (per_band.empty()) throw EmptyGroupError("group_pool: no bands present");
    const double scale = (mode == PoolMode::average) ? 1.0 / per_band.size() : 1.0;
    return tape.add_n(per_band, scale);
}

Mat group_pool(const std::vector<Mat>& per_band, PoolMode mode) {
    if (per_band.empty()) throw EmptyGroupError("group_pool: no bands present");
    Mat out(per_band[0].rows, per_band[0].cols);
    for (const Mat& m : per_band) {
        if (!m.same_shape(out)) throw ShapeError("group_pool: shape mismatch");
        for (size_t i = 0; i < out.d.size(); ++i) out.d[i] += m.d[i];
    }
    if (mode == PoolMode::average) {
        const double inv = 1.0 / per_band.size();
        for (double& v : out.d) v *= inv;
    }
    return out;
}

TokenBatch embed_sample(ag::Tape& tape, const ProjectionTable& projections,
                        const RasterMap& rasters, const BandSubset& subset,
                        const GeometryConfig& cfg, PoolMode mode) {
    const auto present = groups_in_subset(cfg, subset);
    TokenBatch batch;
    std::vector<ag::NodeId> group_tokens;
    for (const auto& [g, bands] : present) {
        std::vector<ag::NodeId> per_band;
        for (const auto& name : bands) {
            const BandKey key{g->sensor_id, name};
            auto rit = rasters.find(key);
            if (rit == rasters.end())
                throw UnknownBandError("embed_sample: sample has no raster for band '" + name +
                                       "'");
            auto pit = projections.find(key);
            if (pit == projections.end())
                throw UnknownBandError("embed_sample: no projection for band '" + name + "'");
            const Mat patches = patchify(rit->second.pixels, g->patch_count, g->patch_size);
            per_band.push_back(project_band(tape, pit->second, tape.leaf(patches)));
        }
        group_tokens.push_back(group_pool(tape, per_band, mode));
        for (int r = 0; r < g->patch_count; ++r)
            for (int c = 0; c < g->patch_count; ++c)
                batch.meta.push_back({g->id, g->sensor_id, r, c});
    }
    batch.tokens = tape.concat_rows(group_tokens);
    batch.mask.assign(batch.meta.size(), 0);
    return batch;
}

} // namespace usat
