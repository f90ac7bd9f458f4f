#include <cmath>
#include <numeric>

#include <doctest.h>

#include "usat/model.hpp"

using namespace usat;

namespace {

/// Small two-sensor geometry for model tests: 16 + 4 tokens.
GeometryConfig micro_geometry() {
    GeometryConfig cfg;
    cfg.footprint.max_footprint_m = 64.0;
    cfg.footprint.image_footprint_m = 32.0;
    SensorConfig a;
    a.sensor_id = 0;
    a.name = "A";
    a.groups.push_back({0, 0, {"x", "y"}, 1.0, 4, 8});
    cfg.sensors.push_back(a);
    SensorConfig b;
    b.sensor_id = 1;
    b.name = "B";
    b.groups.push_back({1, 1, {"z"}, 8.0, 2, 2});
    cfg.sensors.push_back(b);
    return validate_config(cfg);
}

RasterMap micro_rasters(const GeometryConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    RasterMap out;
    for (const auto* g : cfg.ordered_groups())
        for (const auto& name : g->band_names) {
            BandRaster r;
            r.band = name;
            r.gsd = g->gsd;
            r.footprint_m = cfg.footprint.image_footprint_m;
            r.pixels = Mat(g->raster_side(), g->raster_side());
            for (double& v : r.pixels.d) v = rng.uniform(-1.0, 1.0);
            out[{g->sensor_id, name}] = std::move(r);
        }
    return out;
}

std::map<int, std::vector<uint8_t>> micro_masks(const GeometryConfig& cfg, uint64_t seed) {
    const MaskPlan plan = make_mask_plan(cfg, 0.5, seed);
    Rng rng(plan.seed);
    return sample_masks(plan, cfg, rng);
}

struct MicroModel {
    std::unique_ptr<ModelState> state;
    GeometryConfig geom;
    BandSubset bands;
    Mat enc_table;
    Mat dec_table;
};

MicroModel make_micro(bool with_decoder, int depth = 1, uint64_t seed = 42) {
    MicroModel m;
    m.geom = micro_geometry();
    m.bands = all_bands(m.geom);
    const EncoderConfig enc{depth, 16, 2, 2.0};
    const DecoderConfig dec{1, 16, 2};
    m.state = build_model(m.geom, m.bands, {true, true, false}, GroupIndexMode::finetune, enc, dec,
                          with_decoder, 3, seed);
    m.enc_table = compose_encodings(m.geom, m.state->enc_params, m.state->flags, m.bands);
    if (with_decoder)
        m.dec_table = compose_encodings(m.geom, m.state->dec_enc_params, m.state->flags, m.bands);
    return m;
}

ag::NodeId mae_graph(ag::Tape& tape, MicroModel& m, const RasterMap& rasters,
                     const std::map<int, std::vector<uint8_t>>& masks) {
    TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                    m.state->pool_mode);
    batch.mask = mask_for_layout(masks, batch.meta, m.geom);
    EncodeResult enc = encode(tape, *m.state, batch.tokens, m.enc_table, batch.mask, true);
    auto preds = decode_and_reconstruct(tape, *m.state, enc, batch.meta, batch.mask, m.dec_table);
    auto targets = reconstruction_targets(rasters, m.bands, m.geom);
    return mae_loss(tape, preds, targets, masks, m.state->normalize_target);
}

} // namespace

TEST_CASE("depth 0 encoder returns tokens plus encodings") {
    MicroModel m = make_micro(false, /*depth=*/0);
    const RasterMap rasters = micro_rasters(m.geom, 1);
    ag::Tape tape;
    TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                    PoolMode::average);
    EncodeResult res = encode(tape, *m.state, batch.tokens, m.enc_table, batch.mask, false);
    const Mat& out = tape.val(res.latents);
    const Mat& tok = tape.val(batch.tokens);
    REQUIRE(out.rows == tok.rows);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j)
            CHECK(out.at(i, j) == tok.at(i, j) + m.enc_table.at(i, j));
}

TEST_CASE("encoder is permutation equivariant") {
    MicroModel m = make_micro(false, 2);
    const RasterMap rasters = micro_rasters(m.geom, 2);
    ag::Tape tape;
    TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                    PoolMode::average);
    const Mat x = tape.val(batch.tokens);
    const int n = x.rows;

    // forward on (tokens + encodings) directly, then on a permuted copy
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(9);
    for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    Mat zero_enc(n, x.cols);
    ag::Tape t1;
    Mat combined(n, x.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols; ++j) combined.at(i, j) = x.at(i, j) + m.enc_table.at(i, j);
    EncodeResult r1 = encode(t1, *m.state, t1.leaf(combined), zero_enc, {}, false);

    Mat permuted(n, x.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols; ++j) permuted.at(i, j) = combined.at(perm[static_cast<size_t>(i)], j);
    ag::Tape t2;
    EncodeResult r2 = encode(t2, *m.state, t2.leaf(permuted), zero_enc, {}, false);

    const Mat& y1 = t1.val(r1.latents);
    const Mat& y2 = t2.val(r2.latents);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < y1.cols; ++j)
            CHECK(y2.at(i, j) ==
                  doctest::Approx(y1.at(perm[static_cast<size_t>(i)], j)).epsilon(1e-10));
}

TEST_CASE("encode is deterministic") {
    MicroModel m = make_micro(true);
    const RasterMap rasters = micro_rasters(m.geom, 3);
    const auto masks = micro_masks(m.geom, 4);
    ag::Tape t1, t2;
    const ag::NodeId l1 = mae_graph(t1, m, rasters, masks);
    const ag::NodeId l2 = mae_graph(t2, m, rasters, masks);
    CHECK(t1.val(l1).d[0] == t2.val(l2).d[0]);
}

TEST_CASE("decoder head output dimensions") {
    const GeometryConfig cfg = usatlas_geometry();
    auto state = build_model(cfg, all_bands(cfg), {true, true, false}, GroupIndexMode::finetune,
                             encoder_preset("tiny"), decoder_preset("tiny"), true, 0, 7);
    CHECK(state->heads.at(0).W->value.cols == 3 * 16 * 16); // 768 values per token
    CHECK(state->heads.at(1).W->value.cols == 4 * 8 * 8);   // 256
    CHECK(state->heads.at(2).W->value.cols == 5 * 8 * 8);   // 320
}

TEST_CASE("decoder emits predictions for every token even when all visible") {
    MicroModel m = make_micro(true);
    const RasterMap rasters = micro_rasters(m.geom, 5);
    std::map<int, std::vector<uint8_t>> no_masks;
    for (const auto* g : m.geom.ordered_groups())
        no_masks[g->id] = std::vector<uint8_t>(static_cast<size_t>(g->tokens()), 0);

    ag::Tape tape;
    TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                    PoolMode::average);
    batch.mask = mask_for_layout(no_masks, batch.meta, m.geom);
    EncodeResult enc = encode(tape, *m.state, batch.tokens, m.enc_table, batch.mask, true);
    auto preds = decode_and_reconstruct(tape, *m.state, enc, batch.meta, batch.mask, m.dec_table);
    CHECK(tape.val(preds.at(0)).rows == 16);
    CHECK(tape.val(preds.at(1)).rows == 4);

    // but the loss is undefined with nothing masked
    auto targets = reconstruction_targets(rasters, m.bands, m.geom);
    CHECK_THROWS_AS(mae_loss(tape, preds, targets, no_masks, true), AllVisibleError);
}

TEST_CASE("mae_loss basics") {
    MicroModel m = make_micro(true);
    const RasterMap rasters = micro_rasters(m.geom, 6);
    const auto masks = micro_masks(m.geom, 7);

    SUBCASE("pred equal to target gives zero") {
        ag::Tape tape;
        auto targets = reconstruction_targets(rasters, m.bands, m.geom);
        std::map<int, ag::NodeId> preds;
        for (auto& [gid, t] : targets) preds[gid] = tape.leaf(normalize_tokens(t));
        const ag::NodeId loss = mae_loss(tape, preds, targets, masks, true);
        CHECK(tape.val(loss).d[0] == doctest::Approx(0.0));
    }

    SUBCASE("perturbing an unmasked prediction changes the loss by exactly zero") {
        auto targets = reconstruction_targets(rasters, m.bands, m.geom);
        int visible_row = -1;
        const auto& mask0 = masks.at(0);
        for (size_t i = 0; i < mask0.size(); ++i)
            if (!mask0[i]) visible_row = static_cast<int>(i);
        REQUIRE(visible_row >= 0);

        auto loss_with = [&](double bump) {
            ag::Tape tape;
            std::map<int, ag::NodeId> preds;
            for (auto& [gid, t] : targets) {
                Mat p(t.rows, t.cols, 0.1);
                if (gid == 0) p.at(visible_row, 0) += bump;
                preds[gid] = tape.leaf(p);
            }
            const ag::NodeId l = mae_loss(tape, preds, targets, masks, true);
            return tape.val(l).d[0];
        };
        CHECK(loss_with(0.0) == loss_with(123.456)); // bitwise equal
    }

    SUBCASE("matches an elementwise loop oracle") {
        Rng rng(8);
        auto targets = reconstruction_targets(rasters, m.bands, m.geom);
        std::map<int, Mat> rand_preds;
        for (auto& [gid, t] : targets) {
            Mat p(t.rows, t.cols);
            for (double& v : p.d) v = rng.uniform(-1.0, 1.0);
            rand_preds[gid] = p;
        }
        ag::Tape tape;
        std::map<int, ag::NodeId> preds;
        for (auto& [gid, p] : rand_preds) preds[gid] = tape.leaf(p);
        const double got = tape.val(mae_loss(tape, preds, targets, masks, true)).d[0];

        double expect = 0.0;
        int groups = 0;
        for (const auto& [gid, t] : targets) {
            const Mat tn = normalize_tokens(t);
            const auto& gm = masks.at(gid);
            double gl = 0.0;
            long cnt = 0;
            for (int r = 0; r < tn.rows; ++r) {
                if (!gm[static_cast<size_t>(r)]) continue;
                for (int c = 0; c < tn.cols; ++c) {
                    const double e = rand_preds.at(gid).at(r, c) - tn.at(r, c);
                    gl += e * e;
                    ++cnt;
                }
            }
            if (cnt == 0) continue;
            expect += gl / static_cast<double>(cnt);
            ++groups;
        }
        expect /= groups;
        CHECK(got == doctest::Approx(expect).epsilon(1e-7));
    }
}

TEST_CASE("classify") {
    MicroModel m = make_micro(false);

    SUBCASE("zero classifier weights give zero logits") {
        const RasterMap rasters = micro_rasters(m.geom, 10);
        ag::Tape tape;
        TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                        PoolMode::average);
        EncodeResult enc = encode(tape, *m.state, batch.tokens, m.enc_table, batch.mask, false);
        const ag::NodeId logits = classify(tape, *m.state, enc.latents);
        for (double v : tape.val(logits).d) CHECK(v == 0.0);
    }

    SUBCASE("single token: pooling is the identity") {
        Rng rng(11);
        for (double& v : m.state->cls_W->value.d) v = rng.uniform(-1.0, 1.0);
        Mat one(1, 16);
        for (double& v : one.d) v = rng.uniform(-1.0, 1.0);
        ag::Tape tape;
        const ag::NodeId logits = classify(tape, *m.state, tape.leaf(one));
        for (int c = 0; c < 3; ++c) {
            double expect = m.state->cls_b->value.d[static_cast<size_t>(c)];
            for (int k = 0; k < 16; ++k) expect += one.d[static_cast<size_t>(k)] * m.state->cls_W->value.at(k, c);
            CHECK(tape.val(logits).d[static_cast<size_t>(c)] ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
    }

    SUBCASE("matches a pool-then-affine oracle") {
        Rng rng(12);
        for (double& v : m.state->cls_W->value.d) v = rng.uniform(-1.0, 1.0);
        for (double& v : m.state->cls_b->value.d) v = rng.uniform(-1.0, 1.0);
        Mat lat(7, 16);
        for (double& v : lat.d) v = rng.uniform(-2.0, 2.0);
        ag::Tape tape;
        const ag::NodeId logits = classify(tape, *m.state, tape.leaf(lat));
        for (int c = 0; c < 3; ++c) {
            double pooled_dot = 0.0;
            for (int k = 0; k < 16; ++k) {
                double mean = 0.0;
                for (int r = 0; r < 7; ++r) mean += lat.at(r, k);
                mean /= 7.0;
                pooled_dot += mean * m.state->cls_W->value.at(k, c);
            }
            pooled_dot += m.state->cls_b->value.d[static_cast<size_t>(c)];
            CHECK(tape.val(logits).d[static_cast<size_t>(c)] ==
                  doctest::Approx(pooled_dot).epsilon(1e-6));
        }
    }
}

TEST_CASE("band-subset forward produces finite logits of fixed shape") {
    const GeometryConfig cfg = usatlas_geometry();
    const BandSubset all = all_bands(cfg);
    Rng rng(13);
    for (int trial = 0; trial < 8; ++trial) {
        BandSubset subset;
        for (const auto& b : all)
            if (rng.uniform() < 0.35) subset.push_back(b);
        if (subset.empty()) subset.push_back(all[rng.below(all.size())]);
        auto state = build_model(cfg, subset, {true, true, false}, GroupIndexMode::finetune,
                                 encoder_preset("tiny"), decoder_preset("tiny"), false, 5,
                                 100 + static_cast<uint64_t>(trial));
        Rng data_rng(50 + static_cast<uint64_t>(trial));
        RasterMap rasters;
        for (const auto& b : subset) {
            const SpectralGroup* g = cfg.group_of_band(b);
            BandRaster r;
            r.band = b.band;
            r.gsd = g->gsd;
            r.footprint_m = cfg.footprint.image_footprint_m;
            r.pixels = Mat(g->raster_side(), g->raster_side());
            for (double& v : r.pixels.d) v = data_rng.uniform(-1.0, 1.0);
            rasters[{b.sensor_id, b.band}] = std::move(r);
        }
        Rng wrng(1);
        for (double& v : state->cls_W->value.d) v = wrng.uniform(-0.1, 0.1);
        const Mat enc_table = compose_encodings(cfg, state->enc_params, state->flags, subset);
        ag::Tape tape;
        TokenBatch batch = embed_sample(tape, state->projections, rasters, subset, cfg,
                                        PoolMode::average);
        EncodeResult enc = encode(tape, *state, batch.tokens, enc_table, batch.mask, false);
        const ag::NodeId logits = classify(tape, *state, enc.latents);
        REQUIRE(tape.val(logits).cols == 5);
        for (double v : tape.val(logits).d) CHECK(std::isfinite(v));
    }
}

// ---------------------------------------------------------------------------
// gradient checks: analytic vs central finite differences, double precision
// ---------------------------------------------------------------------------

namespace {

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    // absolute floor: a mathematically zero gradient (e.g. the shared key
    // bias, which cancels in softmax) must not divide by FD noise
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

/// Moves parameters away from the tiny init so gradient magnitudes are well
/// above the finite-difference noise floor of a ~1e6-op loss evaluation.
void randomize_operating_point(ModelState& state, uint64_t seed) {
    Rng rng(seed);
    for (Param* p : state.parameters()) {
        const bool is_norm = p->name.find("/ln") != std::string::npos ||
                             p->name.find("/norm/") != std::string::npos;
        if (is_norm && p->name.back() == 'g')
            for (double& v : p->value.d) v = rng.uniform(0.7, 1.3);
        else if (is_norm)
            for (double& v : p->value.d) v = rng.uniform(-0.3, 0.3);
        else
            for (double& v : p->value.d) v = rng.uniform(-0.4, 0.4);
    }
}

template <typename LossFn>
void check_gradients(ModelState& state, LossFn loss_fn, double eps = 1e-5, double tol = 1e-3) {
    state.zero_grads();
    {
        ag::Tape tape;
        const ag::NodeId loss = loss_fn(tape);
        tape.backward(loss);
    }
    for (Param* p : state.parameters()) {
        std::vector<double> analytic(p->grad.d.begin(), p->grad.d.end());
        std::vector<double> fd(p->size());
        for (size_t i = 0; i < p->size(); ++i) {
            const double orig = p->value.d[i];
            p->value.d[i] = orig + eps;
            ag::Tape tp;
            const double lp = tp.val(loss_fn(tp)).d[0];
            p->value.d[i] = orig - eps;
            ag::Tape tm;
            const double lm = tm.val(loss_fn(tm)).d[0];
            p->value.d[i] = orig;
            fd[i] = (lp - lm) / (2.0 * eps);
        }
        INFO("parameter block ", p->name);
        CHECK(rel_error(analytic, fd) < tol);
    }
}

} // namespace

TEST_CASE("analytic gradients match finite differences for the MAE loss") {
    MicroModel m = make_micro(true);
    randomize_operating_point(*m.state, 77);
    const RasterMap rasters = micro_rasters(m.geom, 20);
    const auto masks = micro_masks(m.geom, 21);
    check_gradients(*m.state, [&](ag::Tape& tape) { return mae_graph(tape, m, rasters, masks); });
}

TEST_CASE("analytic gradients match finite differences for the BCE loss") {
    MicroModel m = make_micro(false);
    randomize_operating_point(*m.state, 78);
    const RasterMap rasters = micro_rasters(m.geom, 23);
    Mat labels(1, 3);
    labels.d = {1.0, 0.0, 1.0};
    check_gradients(*m.state, [&](ag::Tape& tape) {
        TokenBatch batch = embed_sample(tape, m.state->projections, rasters, m.bands, m.geom,
                                        PoolMode::average);
        EncodeResult enc = encode(tape, *m.state, batch.tokens, m.enc_table, batch.mask, false);
        return tape.bce_with_logits(classify(tape, *m.state, enc.latents), labels);
    });
}

TEST_CASE("analytic gradients match finite differences for softmax cross-entropy") {
    Rng rng(30);
    Param w("w", 6, 4, true);
    for (double& v : w.value.d) v = rng.uniform(-1.0, 1.0);
    Mat x(3, 6);
    for (double& v : x.d) v = rng.uniform(-1.0, 1.0);
    const std::vector<int> labels{2, 0, 3};

    auto loss_fn = [&](ag::Tape& tape) {
        return tape.softmax_xent(tape.matmul(tape.leaf(x), tape.param(w)), labels);
    };
    w.zero_grad();
    {
        ag::Tape tape;
        tape.backward(loss_fn(tape));
    }
    std::vector<double> analytic(w.grad.d.begin(), w.grad.d.end());
    std::vector<double> fd(w.size());
    const double eps = 1e-6;
    for (size_t i = 0; i < w.size(); ++i) {
        const double orig = w.value.d[i];
        w.value.d[i] = orig + eps;
        ag::Tape tp;
        const double lp = tp.val(loss_fn(tp)).d[0];
        w.value.d[i] = orig - eps;
        ag::Tape tm;
        const double lm = tm.val(loss_fn(tm)).d[0];
        w.value.d[i] = orig;
        fd[i] = (lp - lm) / (2.0 * eps);
    }
    CHECK(rel_error(analytic, fd) < 1e-6);
}
