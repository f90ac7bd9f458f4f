#include <cmath>
#include <filesystem>
#include <sstream>

#include <doctest.h>

#include "usat/training.hpp"

using namespace usat;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("usat_train_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Store small_store(uint64_t seed, int n, double val_fraction = 0.25, int classes = 4) {
    SynthConfig sc;
    sc.seed = seed;
    sc.n_samples = n;
    sc.geometry = usatlas_geometry();
    sc.n_classes = classes;
    sc.val_fraction = val_fraction;
    return synth_generate(sc);
}

RunConfig tiny_run(uint64_t seed, int epochs, int batch) {
    RunConfig run;
    run.mode = "pretrain";
    run.base_lr = 2e-3;
    run.weight_decay = 0.05;
    run.epochs = epochs;
    run.warmup_epochs = std::min(1, epochs);
    run.batch_size = batch;
    run.mask_ratio = 0.75;
    run.seed = seed;
    run.flips = false;
    return run;
}

ModelSpec tiny_spec() {
    return {encoder_preset("tiny"), decoder_preset("tiny"), ComposeFlags{true, true, false}};
}

} // namespace

TEST_CASE("lr schedule endpoints") {
    const Schedule s{0.001, 2, 10, 5}; // warmup 10 steps, total 50
    CHECK(lr_at(0, s) == 0.0);
    CHECK(lr_at(5, s) == doctest::Approx(0.0005));
    CHECK(lr_at(10, s) == doctest::Approx(0.001));
    CHECK(std::fabs(lr_at(50, s)) < 1e-12);
    CHECK(lr_at(30, s) == doctest::Approx(0.001 * 0.5 * (1.0 + std::cos(3.14159265358979 * 0.5))));
    CHECK_THROWS_AS(lr_at(-1, s), RangeError);
    CHECK_THROWS_AS(lr_at(51, s), RangeError);

    const Schedule no_warmup{0.01, 0, 4, 5};
    CHECK(lr_at(0, no_warmup) == doctest::Approx(0.01));
}

TEST_CASE("adamw single-scalar first step approximates -lr*sign(g)") {
    Param p("p", 1, 1, false);
    p.value.d[0] = 0.0;
    p.grad.d[0] = 0.37;
    const OptimConfig opt{0.9, 0.95, 1e-8, 0.0, 0.0};
    adamw_step({&p}, 0.01, opt, 1);
    // mhat = g, vhat = g^2  =>  update = -lr * g/(|g|+eps) ~ -lr
    CHECK(p.value.d[0] == doctest::Approx(-0.01).epsilon(1e-6));

    Param q("q", 1, 1, false);
    q.value.d[0] = 0.0;
    q.grad.d[0] = -0.002;
    adamw_step({&q}, 0.01, opt, 1);
    CHECK(q.value.d[0] == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("adamw zero grads") {
    Param p("p", 2, 2, true);
    for (double& v : p.value.d) v = 1.5;

    SUBCASE("no weight decay leaves params unchanged") {
        const OptimConfig opt{0.9, 0.95, 1e-8, 0.0, 0.0};
        adamw_step({&p}, 0.1, opt, 1);
        for (double v : p.value.d) CHECK(v == 1.5);
    }
    SUBCASE("decoupled decay shrinks by (1 - lr*wd)") {
        const OptimConfig opt{0.9, 0.95, 1e-8, 0.1, 0.0};
        adamw_step({&p}, 0.1, opt, 1);
        for (double v : p.value.d) CHECK(v == doctest::Approx(1.5 * (1.0 - 0.1 * 0.1)));
    }
    SUBCASE("decay skipped for no-decay params") {
        Param b("b", 1, 2, false);
        for (double& v : b.value.d) v = 2.0;
        const OptimConfig opt{0.9, 0.95, 1e-8, 0.1, 0.0};
        adamw_step({&b}, 0.1, opt, 1);
        for (double v : b.value.d) CHECK(v == 2.0);
    }
}

TEST_CASE("adamw rejects non-finite updates without mutating") {
    Param p("p", 1, 2, true);
    p.value.d = {1.0, 2.0};
    p.grad.d = {0.1, std::numeric_limits<double>::quiet_NaN()};
    const OptimConfig opt{0.9, 0.95, 1e-8, 0.0, 0.0};
    CHECK_THROWS_AS(adamw_step({&p}, 0.1, opt, 1), NonFiniteError);
    CHECK(p.value.d[0] == 1.0);
    CHECK(p.value.d[1] == 2.0);
}

TEST_CASE("clip_global_norm") {
    Param p("p", 1, 2, true);
    p.grad.d = {3.0, 4.0};
    const double norm = clip_global_norm({&p}, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(p.grad.d[0] == doctest::Approx(0.6));
    CHECK(p.grad.d[1] == doctest::Approx(0.8));

    Param q("q", 1, 2, true);
    q.grad.d = {0.3, 0.4};
    clip_global_norm({&q}, 1.0);
    CHECK(q.grad.d[0] == doctest::Approx(0.3)); // under the cap, untouched
}

TEST_CASE("flips preserve cross-band geospatial correspondence") {
    const GeometryConfig cfg = usatlas_geometry();
    // coordinate rasters: value = ground x of the pixel center
    RasterMap rasters;
    for (const auto* g : cfg.ordered_groups()) {
        BandRaster r;
        r.band = g->band_names[0];
        r.gsd = g->gsd;
        r.footprint_m = 320.0;
        r.pixels = Mat(g->raster_side(), g->raster_side());
        for (int row = 0; row < r.pixels.rows; ++row)
            for (int col = 0; col < r.pixels.cols; ++col)
                r.pixels.at(row, col) = (col + 0.5) * g->gsd;
        rasters[{g->sensor_id, g->band_names[0]}] = std::move(r);
    }

    SUBCASE("identity when no flip fires") {
        RasterMap copy = rasters;
        Rng rng(2); // first two uniforms are >= 0.5 for this seed
        const double u1 = Rng(2).uniform();
        augment_flips(copy, rng);
        if (u1 >= 0.5) { // document the draw; identity only when both draws high
            // nothing to assert deterministically here beyond alignment below
        }
        // alignment: every band agrees on the ground coordinate mapping
        for (const auto& [key, r] : copy) {
            const Mat& naip = copy.at({0, "Red"}).pixels;
            const double g = r.gsd;
            for (int col = 0; col < r.pixels.cols; ++col) {
                const double coarse_x = r.pixels.at(0, col);
                // the NAIP pixel centered inside this coarse pixel column
                const int fine_col = static_cast<int>(coarse_x / 1.0);
                CHECK(std::fabs(naip.at(0, fine_col) - coarse_x) <= g / 2.0 + 0.5);
            }
        }
    }

    SUBCASE("horizontal flip twice is the identity") {
        RasterMap once = rasters;
        // force h-flip deterministically by applying reversal manually twice
        for (auto& [key, r] : once)
            for (int row = 0; row < r.pixels.rows; ++row)
                std::reverse(r.pixels.row_ptr(row), r.pixels.row_ptr(row) + r.pixels.cols);
        for (auto& [key, r] : once)
            for (int row = 0; row < r.pixels.rows; ++row)
                std::reverse(r.pixels.row_ptr(row), r.pixels.row_ptr(row) + r.pixels.cols);
        for (const auto& [key, r] : once)
            CHECK(r.pixels.d == rasters.at(key).pixels.d);
    }

    SUBCASE("flipped coordinate rasters match the flipped coordinate oracle") {
        // find a seed whose first draw triggers h-flip and second does not
        uint64_t seed = 0;
        for (uint64_t s = 0; s < 64; ++s) {
            Rng probe(s);
            const bool h = probe.uniform() < 0.5;
            const bool v = probe.uniform() < 0.5;
            if (h && !v) {
                seed = s;
                break;
            }
        }
        Rng rng(seed);
        RasterMap flipped = rasters;
        augment_flips(flipped, rng);
        for (const auto& [key, r] : flipped) {
            const double fp = 320.0;
            for (int col = 0; col < r.pixels.cols; ++col) {
                const double expect = fp - (col + 0.5) * r.gsd;
                CHECK(r.pixels.at(0, col) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("pretrain: zero epochs returns the initialization") {
    const Store store = small_store(40, 4, 0.0);
    RunConfig run = tiny_run(3, /*epochs=*/0, 2);
    std::ostringstream log;
    PretrainResult res = pretrain(store, all_bands(store.geometry), tiny_spec(), run, log);
    auto fresh = build_model(store.geometry, all_bands(store.geometry),
                             {true, true, false}, GroupIndexMode::finetune, encoder_preset("tiny"),
                             decoder_preset("tiny"), true, 4, run.seed);
    for (Param* p : res.state->parameters()) {
        const Param* q = fresh->find_param(p->name);
        REQUIRE(q != nullptr);
        CHECK(p->value.d == q->value.d);
    }
    CHECK(res.loss_curve.empty());
}

TEST_CASE("pretrain: same seed gives a bit-identical loss curve") {
    const Store store = small_store(41, 6, 0.0);
    RunConfig run = tiny_run(5, 2, 3);
    std::ostringstream l1, l2;
    PretrainResult a = pretrain(store, all_bands(store.geometry), tiny_spec(), run, l1);
    PretrainResult b = pretrain(store, all_bands(store.geometry), tiny_spec(), run, l2);
    REQUIRE(a.loss_curve.size() == b.loss_curve.size());
    for (size_t i = 0; i < a.loss_curve.size(); ++i) CHECK(a.loss_curve[i] == b.loss_curve[i]);
    CHECK(l1.str() == l2.str());

    RunConfig other = run;
    other.seed = 6;
    PretrainResult c = pretrain(store, all_bands(store.geometry), tiny_spec(), other, l1);
    CHECK(c.loss_curve != a.loss_curve);
}

TEST_CASE("pretrain log format") {
    const Store store = small_store(42, 2, 0.0);
    RunConfig run = tiny_run(7, 1, 2);
    std::ostringstream log;
    pretrain(store, all_bands(store.geometry), tiny_spec(), run, log);
    CHECK(log.str().rfind("step=0 lr=", 0) == 0);
    CHECK(log.str().find(" loss=") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves forward outputs within 1e-6") {
    const Store store = small_store(43, 4, 0.0);
    RunConfig run = tiny_run(11, 2, 2);
    std::ostringstream log;
    PretrainResult res = pretrain(store, all_bands(store.geometry), tiny_spec(), run, log);

    const auto dir = temp_dir("ckpt_rt");
    save_checkpoint(*res.state, dir);
    auto loaded = load_checkpoint(dir);

    const MaskPlan plan = make_mask_plan(store.geometry, 0.75, 77);
    std::vector<const Sample*> samples = store.split("train");
    samples.resize(2);
    // loaded params went through float32; quantize the reference the same way
    for (Param* p : res.state->parameters())
        for (double& v : p->value.d) v = static_cast<double>(static_cast<float>(v));
    const double a = evaluate_mae_loss(*res.state, store.geometry, samples, plan, 1);
    const double b = evaluate_mae_loss(*loaded, store.geometry, samples, plan, 1);
    CHECK(a == doctest::Approx(b).epsilon(1e-9));

    // and the float32 projection is lossless through a second round trip
    const auto dir2 = temp_dir("ckpt_rt2");
    save_checkpoint(*loaded, dir2);
    auto loaded2 = load_checkpoint(dir2);
    const auto p1 = loaded->parameters();
    const auto p2 = loaded2->parameters();
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value.d == p2[i]->value.d);
}

TEST_CASE("parameter transfer bookkeeping") {
    const Store store = small_store(44, 4, 0.0);
    RunConfig run = tiny_run(13, 1, 2);
    std::ostringstream log;
    PretrainResult pre = pretrain(store, all_bands(store.geometry), tiny_spec(), run, log);

    SUBCASE("full-band transfer count equals checkpoint minus decoder/heads/classifier") {
        auto target = build_model(pre.state->geometry, pre.state->bands, pre.state->flags,
                                  GroupIndexMode::finetune, pre.state->encoder,
                                  pre.state->decoder, false, 4, 99);
        const int copied = transfer_parameters(*pre.state, *target);
        int decoder_heads_cls = 0;
        for (Param* p : pre.state->parameters())
            if (p->name.rfind("dec/", 0) == 0 || p->name.rfind("head/", 0) == 0 ||
                p->name.rfind("cls/", 0) == 0)
                ++decoder_heads_cls;
        CHECK(static_cast<size_t>(copied) == pre.state->parameter_count() - decoder_heads_cls);
        // transferred values match, classifier stays fresh
        CHECK(target->find_param("enc/blk0/attn/Wq")->value.d ==
              pre.state->find_param("enc/blk0/attn/Wq")->value.d);
    }

    SUBCASE("subset transfer copies only present projections") {
        const GeometryConfig& geom = pre.state->geometry;
        const BandSubset red{{1, "Red"}};
        auto target = build_model(geom, red, pre.state->flags, GroupIndexMode::finetune,
                                  pre.state->encoder, pre.state->decoder, false, 4, 99);
        const int copied = transfer_parameters(*pre.state, *target);
        int enc_params = 0;
        for (Param* p : pre.state->parameters())
            if (p->name.rfind("enc/", 0) == 0) ++enc_params;
        CHECK(copied == enc_params + 2); // encoder plus Red W and b
        CHECK(target->find_param("proj/Sentinel-2/Red/W")->value.d ==
              pre.state->find_param("proj/Sentinel-2/Red/W")->value.d);
        CHECK(target->find_param("proj/NAIP/Red/W") == nullptr);
    }
}

TEST_CASE("finetune runs from scratch and from a checkpoint") {
    const Store store = small_store(45, 8, 0.25);
    RunConfig run = tiny_run(17, 1, 4);
    run.mode = "finetune";
    run.base_lr = 1e-3;
    run.beta2 = 0.999;
    std::ostringstream log;

    SUBCASE("random init (no checkpoint)") {
        FinetuneResult res = finetune(nullptr, store, bands_of_sensor(store.geometry, 1),
                                      tiny_spec(), run, log);
        CHECK(res.state->mode == "finetune");
        CHECK(res.state->has_decoder == false);
        REQUIRE(!res.epoch_metrics.empty());
        for (double m : res.epoch_metrics) CHECK(std::isfinite(m));
    }

    SUBCASE("from checkpoint, single band") {
        RunConfig pre_run = tiny_run(18, 1, 4);
        PretrainResult pre = pretrain(store, all_bands(store.geometry), tiny_spec(), pre_run, log);
        FinetuneResult res = finetune(pre.state.get(), store, {{1, "Red"}}, tiny_spec(), run, log);
        CHECK(res.state->projections.size() == 1);
        REQUIRE(!res.epoch_metrics.empty());
        CHECK(std::isfinite(res.best_metric));
        CHECK(log.str().find("transferred") != std::string::npos);
    }
}

TEST_CASE("finetune at a smaller concentric footprint reuses the checkpoint geometry") {
    const Store pre_store = small_store(46, 4, 0.0);
    RunConfig pre_run = tiny_run(19, 1, 2);
    std::ostringstream log;
    PretrainResult pre = pretrain(pre_store, all_bands(pre_store.geometry), tiny_spec(), pre_run,
                                  log);

    SynthConfig sc;
    sc.seed = 47;
    sc.n_samples = 6;
    sc.geometry = with_footprint(usatlas_geometry(), 160.0);
    sc.n_classes = 4;
    sc.val_fraction = 0.34;
    const Store small_fp = synth_generate(sc);

    RunConfig run = tiny_run(20, 1, 3);
    run.mode = "finetune";
    FinetuneResult res = finetune(pre.state.get(), small_fp, bands_of_sensor(small_fp.geometry, 1),
                                  tiny_spec(), run, log);
    CHECK(res.state->geometry.footprint.image_footprint_m == doctest::Approx(160.0));
    CHECK(res.state->geometry.reference_group().patch_count == 10);
    for (double m : res.epoch_metrics) CHECK(std::isfinite(m));
}

TEST_CASE("held-out pretrain loss drops by half on the tiny preset (3 seeds)") {
    const Store store = small_store(48, 20, 0.2);
    const std::vector<const Sample*> heldout = store.split("val");
    REQUIRE(!heldout.empty());
    double ratio_sum = 0.0;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        RunConfig run = tiny_run(seed, 10, 8); // 20 steps
        run.base_lr = 3e-3;
        std::ostringstream log;
        const MaskPlan plan = make_mask_plan(store.geometry, 0.75, 500 + seed);

        auto init = build_model(store.geometry, all_bands(store.geometry), tiny_spec().flags,
                                GroupIndexMode::finetune, tiny_spec().encoder,
                                tiny_spec().decoder, true, 4, seed);
        init->band_stats = store.band_stats;
        const double before = evaluate_mae_loss(*init, store.geometry, heldout, plan, 9);

        PretrainResult res = pretrain(store, all_bands(store.geometry), tiny_spec(), run, log);
        const double after = evaluate_mae_loss(*res.state, store.geometry, heldout, plan, 9);
        ratio_sum += after / before;
    }
    CHECK(ratio_sum / 3.0 <= 0.5);
}
