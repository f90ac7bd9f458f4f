#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "usat/geometry.hpp"
#include "usat/rng.hpp"

namespace usat {

/// Inconsistent random spatial masking with equal masked ground cover:
/// each group masks floor(p^2 * r) of its p^2 patch positions.
struct MaskPlan {
    double ratio = 0.75;
    std::map<int, int> per_group_count; // group id -> masked token count
    uint64_t seed = 0;
    /// When set, one spatial mask is drawn on the coarsest grid and
    /// replicated onto the finer grids (same ground cells everywhere).
    bool consistent = false;
};

/// floor(p^2 * r); throws RatioError unless p >= 1 and 0 < r < 1.
int mask_count(int p, double r);

MaskPlan make_mask_plan(const GeometryConfig& cfg, double ratio, uint64_t seed,
                        bool consistent = false);

/// Row-major boolean grid per group id, exactly per_group_count[g] ones,
/// drawn uniformly without replacement (partial Fisher-Yates over the
/// generator's 64-bit stream). Deterministic given the Rng state.
std::map<int, std::vector<uint8_t>> sample_masks(const MaskPlan& plan, const GeometryConfig& cfg,
                                                 Rng& rng);

/// Token-aligned mask vector for a batch layout.
std::vector<uint8_t> mask_for_layout(const std::map<int, std::vector<uint8_t>>& group_masks,
                                     const std::vector<TokenMeta>& meta,
                                     const GeometryConfig& cfg);

} // namespace usat
