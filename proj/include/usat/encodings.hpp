#pragma once

#include <vector>

#include "usat/geometry.hpp"
#include "usat/mat.hpp"

namespace usat {

/// How spectral-group indices are assigned when only a subset of groups is
/// present: keep the original pre-training indices, or re-enumerate the
/// present groups 0..G-1.
enum class GroupIndexMode { pretrain, finetune };

struct EncodingParams {
    double omega = 10000.0;
    int d_model = 1024;
    int pos_dim = 1024;
    int group_dim = 0;
    int sensor_dim = 0;
    GroupIndexMode group_index_mode = GroupIndexMode::finetune;

    void validate() const;
};

struct ComposeFlags {
    bool superpos = true;
    bool group = true;
    bool sensor = false;
};

/// Interleaved sine-cosine features of a scalar position:
/// out[2i] = sin(pos / omega^(2i/d)), out[2i+1] = cos(pos / omega^(2i/d)).
std::vector<double> sincos_1d(double pos, int d, double omega);

/// 2D encoding: row half followed by column half, each sincos_1d of size
/// pos_dim/2. pos_dim must be divisible by 4.
std::vector<double> posenc_2d(double row, double col, int pos_dim, double omega);

/// Positional encodings for one group's p x p patch grid (row-major rows).
/// Coarse groups receive the mean of the reference-grid encodings covered
/// by each patch; the reference group itself gets vanilla encodings.
Mat superpositional(const SpectralGroup& g, const GeometryConfig& cfg,
                    const EncodingParams& params);

/// Vanilla per-group positional encodings on the group's own patch grid,
/// offset concentrically inside the max footprint.
Mat vanilla_group_positional(const SpectralGroup& g, const GeometryConfig& cfg,
                             const EncodingParams& params);

std::vector<double> group_encoding(int sp, int group_dim, double omega);
std::vector<double> sensor_encoding(int s, int sensor_dim, double omega);

/// Default dimension split: pos gets ~75% of d_model (rounded to a multiple
/// of 4) when any extra encoding is enabled, the remainder goes to the
/// enabled extra (split evenly when both are on). With no extras the whole
/// budget is positional. At d_model=1024 this gives 768/256 and 768/128/128.
EncodingParams allocate_encoding_dims(int d_model, const ComposeFlags& flags,
                                      double omega = 10000.0,
                                      GroupIndexMode mode = GroupIndexMode::finetune);

/// Full per-token encoding table [seq_len x d_model] for the given subset,
/// concatenating [positional | group? | sensor?] per token in canonical
/// token order.
Mat compose_encodings(const GeometryConfig& cfg, const EncodingParams& params,
                      const ComposeFlags& flags, const BandSubset& subset);

/// Spectral-group index assignment for the groups present in `subset`
/// under the given mode, keyed by group id.
std::vector<std::pair<int, int>> group_index_assignment(const GeometryConfig& cfg,
                                                        const BandSubset& subset,
                                                        GroupIndexMode mode);

double cosine_similarity(const double* a, const double* b, int n);

} // namespace usat
