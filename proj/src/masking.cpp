#include "usat/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace usat {

int mask_count(int p, double r) {
    if (p < 1) throw RatioError("mask_count: patch count must be >= 1");
    if (!(r > 0.0 && r < 1.0)) throw RatioError("mask_count: ratio must be in (0, 1)");
    return static_cast<int>(std::floor(static_cast<double>(p) * p * r));
}

MaskPlan make_mask_plan(const GeometryConfig& cfg, double ratio, uint64_t seed, bool consistent) {
    MaskPlan plan;
    plan.ratio = ratio;
    plan.seed = seed;
    plan.consistent = consistent;
    for (const auto* g : cfg.ordered_groups())
        plan.per_group_count[g->id] = mask_count(g->patch_count, ratio);
    return plan;
}

namespace {

std::vector<uint8_t> draw_grid(int p, int count, Rng& rng) {
    const int n = p * p;
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::vector<uint8_t> grid(static_cast<size_t>(n), 0);
    for (int i = 0; i < count; ++i) grid[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1;
    return grid;
}

} // namespace

std::map<int, std::vector<uint8_t>> sample_masks(const MaskPlan& plan, const GeometryConfig& cfg,
                                                 Rng& rng) {
    if (!(plan.ratio > 0.0 && plan.ratio < 1.0))
        throw RatioError("sample_masks: ratio must be in (0, 1)");
    std::map<int, std::vector<uint8_t>> out;
    const auto groups = cfg.ordered_groups();
    if (!plan.consistent) {
        for (const auto* g : groups) {
            const auto it = plan.per_group_count.find(g->id);
            const int count = (it != plan.per_group_count.end())
                                  ? it->second
                                  : mask_count(g->patch_count, plan.ratio);
            out[g->id] = draw_grid(g->patch_count, count, rng);
        }
        return out;
    }

    // Consistent mode: draw once on the coarsest grid, replicate upward.
    const SpectralGroup* coarsest = groups.front();
    for (const auto* g : groups)
        if (g->patch_count < coarsest->patch_count) coarsest = g;
    const int pc = coarsest->patch_count;
    const std::vector<uint8_t> base = draw_grid(pc, mask_count(pc, plan.ratio), rng);
    for (const auto* g : groups) {
        if (g->patch_count % pc != 0)
            throw DivisibilityError("consistent masking needs nested patch grids");
        const int b = g->patch_count / pc;
        std::vector<uint8_t> grid(static_cast<size_t>(g->tokens()), 0);
        for (int i = 0; i < g->patch_count; ++i)
            for (int j = 0; j < g->patch_count; ++j)
                grid[static_cast<size_t>(i * g->patch_count + j)] =
                    base[static_cast<size_t>((i / b) * pc + (j / b))];
        out[g->id] = grid;
    }
    return out;
}

std::vector<uint8_t> mask_for_layout(const std::map<int, std::vector<uint8_t>>& group_masks,
                                     const std::vector<TokenMeta>& meta,
                                     const GeometryConfig& cfg) {
    std::vector<uint8_t> out(meta.size(), 0);
    for (size_t i = 0; i < meta.size(); ++i) {
        const auto it = group_masks.find(meta[i].group_id);
        if (it == group_masks.end()) continue;
        const SpectralGroup* g = cfg.find_group(meta[i].group_id);
        out[i] = it->second[static_cast<size_t>(meta[i].row * g->patch_count + meta[i].col)];
    }
    return out;
}

} // namespace usat
