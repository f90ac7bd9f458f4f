#include "usat/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace usat {

void EncodingParams::validate() const {
    if (d_model < 4) throw DimensionError("encoding: d_model must be >= 4");
    if (pos_dim <= 0 || pos_dim % 4 != 0)
        throw DimensionError("encoding: pos_dim must be a positive multiple of 4");
    if (group_dim < 0 || group_dim % 2 != 0)
        throw DimensionError("encoding: group_dim must be even");
    if (sensor_dim < 0 || sensor_dim % 2 != 0)
        throw DimensionError("encoding: sensor_dim must be even");
    if (pos_dim + group_dim + sensor_dim != d_model)
        throw AllocationError("encoding: dims do not sum to d_model");
}

std::vector<double> sincos_1d(double pos, int d, double omega) {
    if (d <= 0 || d % 2 != 0) throw DimensionError("sincos_1d: dimension must be positive and even");
    std::vector<double> out(static_cast<size_t>(d));
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::pow(omega, (2.0 * i) / d);
        out[2 * i] = std::sin(pos / freq);
        out[2 * i + 1] = std::cos(pos / freq);
    }
    return out;
}

std::vector<double> posenc_2d(double row, double col, int pos_dim, double omega) {
    if (pos_dim <= 0 || pos_dim % 4 != 0)
        throw DimensionError("posenc_2d: pos_dim must be a positive multiple of 4");
    std::vector<double> out = sincos_1d(row, pos_dim / 2, omega);
    std::vector<double> c = sincos_1d(col, pos_dim / 2, omega);
    out.insert(out.end(), c.begin(), c.end());
    return out;
}

namespace {

/// Row/column half tables for the reference grid, shifted by the concentric
/// offset. Concatenating row_half[u] | col_half[v] reproduces
/// posenc_2d(off+u, off+v) bit-for-bit.
struct RefTables {
    std::vector<std::vector<double>> half; // indexed by grid coordinate
};

RefTables reference_tables(int p_ref, double off, int pos_dim, double omega) {
    RefTables t;
    t.half.resize(static_cast<size_t>(p_ref));
    for (int u = 0; u < p_ref; ++u) t.half[u] = sincos_1d(off + u, pos_dim / 2, omega);
    return t;
}

} // namespace

Mat superpositional(const SpectralGroup& g, const GeometryConfig& cfg,
                    const EncodingParams& params) {
    const SpectralGroup& ref = cfg.reference_group();
    if (ref.patch_count % g.patch_count != 0)
        throw DivisibilityError("superpositional: reference grid not divisible by group grid");
    const int b = ref.patch_count / g.patch_count;
    const int half = params.pos_dim / 2;
    if (params.pos_dim % 4 != 0)
        throw DimensionError("superpositional: pos_dim must be a multiple of 4");
    const double off = fine_grid_offset(cfg.footprint.image_footprint_m,
                                        cfg.footprint.max_footprint_m,
                                        cfg.footprint.fine_patch_extent_m);
    const RefTables t = reference_tables(ref.patch_count, off, params.pos_dim, params.omega);

    Mat out(g.tokens(), params.pos_dim);
    const double inv = 1.0 / (static_cast<double>(b) * b);
    for (int i = 0; i < g.patch_count; ++i) {
        for (int j = 0; j < g.patch_count; ++j) {
            double* row = out.row_ptr(i * g.patch_count + j);
            for (int u = i * b; u < (i + 1) * b; ++u)
                for (int v = j * b; v < (j + 1) * b; ++v) {
                    const double* rh = t.half[u].data();
                    const double* ch = t.half[v].data();
                    for (int k = 0; k < half; ++k) row[k] += rh[k];
                    for (int k = 0; k < half; ++k) row[half + k] += ch[k];
                }
            for (int k = 0; k < params.pos_dim; ++k) row[k] *= inv;
        }
    }
    return out;
}

Mat vanilla_group_positional(const SpectralGroup& g, const GeometryConfig& cfg,
                             const EncodingParams& params) {
    const double off = group_grid_offset(cfg, g);
    Mat out(g.tokens(), params.pos_dim);
    for (int i = 0; i < g.patch_count; ++i)
        for (int j = 0; j < g.patch_count; ++j) {
            const std::vector<double> e = posenc_2d(off + i, off + j, params.pos_dim, params.omega);
            std::memcpy(out.row_ptr(i * g.patch_count + j), e.data(), e.size() * sizeof(double));
        }
    return out;
}

std::vector<double> group_encoding(int sp, int group_dim, double omega) {
    return sincos_1d(static_cast<double>(sp), group_dim, omega);
}

std::vector<double> sensor_encoding(int s, int sensor_dim, double omega) {
    return sincos_1d(static_cast<double>(s), sensor_dim, omega);
}

EncodingParams allocate_encoding_dims(int d_model, const ComposeFlags& flags, double omega,
                                      GroupIndexMode mode) {
    EncodingParams p;
    p.omega = omega;
    p.d_model = d_model;
    p.group_index_mode = mode;
    if (!flags.group && !flags.sensor) {
        p.pos_dim = d_model;
        p.group_dim = 0;
        p.sensor_dim = 0;
    } else {
        long pos = std::lround(0.75 * d_model);
        pos = std::lround(static_cast<double>(pos) / 4.0) * 4;
        const int rest = d_model - static_cast<int>(pos);
        if (rest <= 0) throw AllocationError("encoding: no budget left for extra encodings");
        p.pos_dim = static_cast<int>(pos);
        if (flags.group && flags.sensor) {
            p.group_dim = rest / 2;
            p.sensor_dim = rest - rest / 2;
        } else if (flags.group) {
            p.group_dim = rest;
            p.sensor_dim = 0;
        } else {
            p.group_dim = 0;
            p.sensor_dim = rest;
        }
    }
    p.validate();
    return p;
}

std::vector<std::pair<int, int>> group_index_assignment(const GeometryConfig& cfg,
                                                        const BandSubset& subset,
                                                        GroupIndexMode mode) {
    std::vector<std::pair<int, int>> out;
    auto present = groups_in_subset(cfg, subset);
    std::vector<int> ids;
    for (const auto& [g, bands] : present) ids.push_back(g->id);
    std::sort(ids.begin(), ids.end());
    for (size_t i = 0; i < ids.size(); ++i) {
        const int idx = (mode == GroupIndexMode::pretrain) ? ids[i] : static_cast<int>(i);
        out.emplace_back(ids[i], idx);
    }
    return out;
}

Mat compose_encodings(const GeometryConfig& cfg, const EncodingParams& params,
                      const ComposeFlags& flags, const BandSubset& subset) {
    params.validate();
    if (flags.group != (params.group_dim > 0) || flags.sensor != (params.sensor_dim > 0))
        throw AllocationError("encoding: flags inconsistent with dimension allocation");

    const auto present = groups_in_subset(cfg, subset);
    const auto assignment = group_index_assignment(cfg, subset, params.group_index_mode);
    auto index_of = [&assignment](int group_id) {
        for (const auto& [id, idx] : assignment)
            if (id == group_id) return idx;
        return group_id;
    };

    const int seq = sequence_length(cfg, subset);
    Mat out(seq, params.d_model);
    int row = 0;
    for (const auto& [g, bands] : present) {
        const Mat pos = flags.superpos ? superpositional(*g, cfg, params)
                                       : vanilla_group_positional(*g, cfg, params);
        std::vector<double> ge, se;
        if (params.group_dim > 0) ge = group_encoding(index_of(g->id), params.group_dim, params.omega);
        if (params.sensor_dim > 0) se = sensor_encoding(g->sensor_id, params.sensor_dim, params.omega);
        for (int t = 0; t < g->tokens(); ++t, ++row) {
            double* dst = out.row_ptr(row);
            std::memcpy(dst, pos.row_ptr(t), static_cast<size_t>(params.pos_dim) * sizeof(double));
            if (!ge.empty())
                std::memcpy(dst + params.pos_dim, ge.data(), ge.size() * sizeof(double));
            if (!se.empty())
                std::memcpy(dst + params.pos_dim + params.group_dim, se.data(),
                            se.size() * sizeof(double));
        }
    }
    return out;
}

double cosine_similarity(const double* a, const double* b, int n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace usat
