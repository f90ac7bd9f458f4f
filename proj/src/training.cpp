#include "usat/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "usat/image_io.hpp"

namespace usat {

double lr_at(long step, const Schedule& schedule) {
    const long warmup = schedule.warmup_steps();
    const long total = schedule.total_steps();
    if (step < 0 || step > total) throw RangeError("lr_at: step outside schedule");
    if (step < warmup) return schedule.base_lr * static_cast<double>(step) / warmup;
    if (total == warmup) return schedule.base_lr;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return schedule.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double clip_global_norm(const std::vector<Param*>& params, double max_norm) {
    double sq = 0.0;
    for (const Param* p : params)
        for (double g : p->grad.d) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NonFiniteError("gradient norm is not finite");
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (Param* p : params)
            for (double& g : p->grad.d) g *= scale;
    }
    return norm;
}

void adamw_step(const std::vector<Param*>& params, double lr, const OptimConfig& opt, long t) {
    if (!std::isfinite(lr)) throw NonFiniteError("learning rate is not finite");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));

    // Two phases: validate every candidate value, then commit, so a
    // non-finite update leaves the parameters untouched.
    std::vector<std::vector<double>> new_vals(params.size());
    std::vector<std::vector<double>> new_m(params.size());
    std::vector<std::vector<double>> new_v(params.size());
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        const size_t n = p.size();
        new_vals[pi].resize(n);
        new_m[pi].resize(n);
        new_v[pi].resize(n);
        for (size_t i = 0; i < n; ++i) {
            const double g = p.grad.d[i];
            const double m = opt.beta1 * p.m.d[i] + (1.0 - opt.beta1) * g;
            const double v = opt.beta2 * p.v.d[i] + (1.0 - opt.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            double val = p.value.d[i];
            if (p.decay && opt.weight_decay > 0.0) val -= lr * opt.weight_decay * val;
            val -= lr * mhat / (std::sqrt(vhat) + opt.eps);
            if (!std::isfinite(val) || !std::isfinite(m) || !std::isfinite(v))
                throw NonFiniteError("non-finite update for parameter " + p.name);
            new_vals[pi][i] = val;
            new_m[pi][i] = m;
            new_v[pi][i] = v;
        }
    }
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        p.value.d = std::move(new_vals[pi]);
        p.m.d = std::move(new_m[pi]);
        p.v.d = std::move(new_v[pi]);
    }
}

void augment_flips(RasterMap& rasters, Rng& rng) {
    const bool flip_h = rng.uniform() < 0.5;
    const bool flip_v = rng.uniform() < 0.5;
    if (!flip_h && !flip_v) return;
    for (auto& [key, raster] : rasters) {
        Mat& px = raster.pixels;
        if (flip_h)
            for (int r = 0; r < px.rows; ++r)
                std::reverse(px.row_ptr(r), px.row_ptr(r) + px.cols);
        if (flip_v)
            for (int r = 0; r < px.rows / 2; ++r)
                std::swap_ranges(px.row_ptr(r), px.row_ptr(r) + px.cols,
                                 px.row_ptr(px.rows - 1 - r));
    }
}

void check_geometry_compat(const GeometryConfig& model_geom, const GeometryConfig& data_geom,
                           const BandSubset& bands) {
    if (std::fabs(model_geom.footprint.image_footprint_m -
                  data_geom.footprint.image_footprint_m) > 1e-6)
        throw GeometryMismatchError("model and dataset footprints differ");
    for (const auto& b : bands) {
        const SpectralGroup* mg = model_geom.group_of_band(b);
        const SpectralGroup* dg = data_geom.group_of_band(b);
        if (!mg) throw UnknownBandError("model has no band '" + b.band + "'");
        if (!dg) throw UnknownBandError("dataset has no band '" + b.band + "'");
        if (std::fabs(mg->gsd - dg->gsd) > 1e-9 * std::max(1.0, mg->gsd) ||
            mg->patch_size != dg->patch_size || mg->patch_count != dg->patch_count)
            throw GeometryMismatchError("band '" + b.band + "' geometry differs from checkpoint");
    }
}

namespace {

using nlohmann::json;

struct ForwardTables {
    Mat enc;
    Mat dec;
};

ForwardTables make_tables(const ModelState& state) {
    ForwardTables t;
    t.enc = compose_encodings(state.geometry, state.enc_params, state.flags, state.bands);
    if (state.has_decoder)
        t.dec = compose_encodings(state.geometry, state.dec_enc_params, state.flags, state.bands);
    return t;
}

/// Builds the full MAE graph for one (already normalized) sample and
/// returns the loss node.
ag::NodeId mae_forward(ag::Tape& tape, ModelState& state, const RasterMap& norm,
                       const std::map<int, std::vector<uint8_t>>& masks,
                       const ForwardTables& tables) {
    TokenBatch batch = embed_sample(tape, state.projections, norm, state.bands, state.geometry,
                                    state.pool_mode);
    batch.mask = mask_for_layout(masks, batch.meta, state.geometry);
    EncodeResult enc = encode(tape, state, batch.tokens, tables.enc, batch.mask, true);
    auto preds = decode_and_reconstruct(tape, state, enc, batch.meta, batch.mask, tables.dec);
    auto targets = reconstruction_targets(norm, state.bands, state.geometry);
    return mae_loss(tape, preds, targets, masks, state.normalize_target);
}

ag::NodeId classify_forward(ag::Tape& tape, ModelState& state, const RasterMap& norm,
                            const Mat& enc_table) {
    TokenBatch batch = embed_sample(tape, state.projections, norm, state.bands, state.geometry,
                                    state.pool_mode);
    EncodeResult enc = encode(tape, state, batch.tokens, enc_table, batch.mask, false);
    return classify(tape, state, enc.latents);
}

Mat labels_to_row(const std::vector<int>& labels) {
    Mat out(1, static_cast<int>(labels.size()));
    for (size_t i = 0; i < labels.size(); ++i) out.d[i] = labels[i] ? 1.0 : 0.0;
    return out;
}

void write_metrics_json(const std::filesystem::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

std::vector<Mat> snapshot_values(const std::vector<Param*>& params) {
    std::vector<Mat> out;
    out.reserve(params.size());
    for (const Param* p : params) out.push_back(p->value);
    return out;
}

void restore_values(const std::vector<Param*>& params, const std::vector<Mat>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

} // namespace

PretrainResult pretrain(const Store& store, const BandSubset& bands, const ModelSpec& spec,
                        const RunConfig& run, std::ostream& log,
                        const std::filesystem::path& out_dir) {
    const GeometryConfig geom = validate_config(store.geometry);
    auto state = build_model(geom, bands, spec.flags, run.group_index_mode, spec.encoder,
                             spec.decoder, /*with_decoder=*/true,
                             static_cast<int>(store.classes.size()), run.seed);
    state->mode = "pretrain";
    state->normalize_target = run.normalize_target;
    state->pool_mode = run.pool;
    state->band_stats = store.band_stats;

    const ForwardTables tables = make_tables(*state);
    const MaskPlan plan = make_mask_plan(geom, run.mask_ratio, derive_seed(run.seed, "mask"),
                                         run.consistent_mask);
    const auto params = state->parameters();
    const OptimConfig opt{run.beta1, run.beta2, run.eps, run.weight_decay, run.clip_norm};

    std::vector<const Sample*> train = store.split("train");
    if (train.empty()) throw ConfigError("pretrain: store has no training samples");
    const int steps_per_epoch =
        static_cast<int>((train.size() + run.batch_size - 1) / run.batch_size);
    const Schedule schedule{run.base_lr, run.warmup_epochs, run.epochs, steps_per_epoch};

    PretrainResult result;
    long step = 0;
    uint64_t visit = 0;
    try {
        for (int epoch = 0; epoch < run.epochs; ++epoch) {
            std::vector<size_t> order(train.size());
            std::iota(order.begin(), order.end(), 0);
            Rng shuffle_rng(derive_seed(run.seed, "order", static_cast<uint64_t>(epoch)));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.below(i)]);

            for (size_t batch_start = 0; batch_start < order.size();
                 batch_start += static_cast<size_t>(run.batch_size)) {
                const size_t batch_end =
                    std::min(order.size(), batch_start + static_cast<size_t>(run.batch_size));
                const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);
                state->zero_grads();
                double batch_loss = 0.0;
                for (size_t bi = batch_start; bi < batch_end; ++bi, ++visit) {
                    const Sample& sample = *train[order[bi]];
                    RasterMap rasters = sample.rasters;
                    if (run.flips) {
                        Rng flip_rng(derive_seed(run.seed, "flip", visit));
                        augment_flips(rasters, flip_rng);
                    }
                    const RasterMap norm = normalize_rasters(rasters, geom, state->band_stats);
                    Rng mask_rng(plan.seed ^ visit);
                    const auto masks = sample_masks(plan, geom, mask_rng);
                    ag::Tape tape;
                    const ag::NodeId loss = mae_forward(tape, *state, norm, masks, tables);
                    const double lv = tape.val(loss).d[0];
                    if (!std::isfinite(lv)) throw NonFiniteError("pretrain: non-finite loss");
                    batch_loss += lv;
                    tape.backward(tape.scale(loss, inv_batch));
                }
                batch_loss *= inv_batch;
                clip_global_norm(params, run.clip_norm);
                const double lr = lr_at(step, schedule);
                adamw_step(params, lr, opt, step + 1);
                result.loss_curve.push_back(batch_loss);
                log << "step=" << step << " lr=" << lr << " loss=" << batch_loss << "\n";
                ++step;
            }

            if (!out_dir.empty()) {
                const auto val = store.split("val");
                if (!val.empty()) {
                    const double val_loss =
                        evaluate_mae_loss(*state, geom, val, plan, /*salt=*/0x9e0000u);
                    write_metrics_json(out_dir / ("metrics_epoch" + std::to_string(epoch) + ".json"),
                                       json{{"epoch", epoch}, {"val_mae", val_loss}});
                }
            }
        }
    } catch (const NonFiniteError&) {
        if (!out_dir.empty()) save_checkpoint(*state, out_dir);
        throw;
    }

    if (!out_dir.empty()) save_checkpoint(*state, out_dir);
    result.state = std::move(state);
    return result;
}

FinetuneResult finetune(const ModelState* checkpoint, const Store& store, const BandSubset& bands,
                        const ModelSpec& spec, const RunConfig& run, std::ostream& log,
                        const std::filesystem::path& out_dir) {
    const GeometryConfig data_geom = validate_config(store.geometry);
    GeometryConfig geom = data_geom;
    ComposeFlags flags = spec.flags;
    EncoderConfig enc_cfg = spec.encoder;
    if (checkpoint) {
        geom = with_footprint(checkpoint->geometry, data_geom.footprint.image_footprint_m);
        flags = checkpoint->flags;
        enc_cfg = checkpoint->encoder;
        check_geometry_compat(geom, data_geom, bands);
    }

    auto state = build_model(geom, bands, flags, run.group_index_mode, enc_cfg, spec.decoder,
                             /*with_decoder=*/false, static_cast<int>(store.classes.size()),
                             run.seed);
    state->mode = "finetune";
    state->pool_mode = run.pool;
    state->band_stats = store.band_stats;
    if (checkpoint) {
        const int copied = transfer_parameters(*checkpoint, *state);
        log << "transferred " << copied << " parameter tensors from checkpoint\n";
    }

    const Mat enc_table = compose_encodings(geom, state->enc_params, flags, bands);
    const auto train = store.split("train");
    const auto val = store.split("val");
    if (train.empty()) throw ConfigError("finetune: store has no training samples");
    const int n_classes = static_cast<int>(store.classes.size());

    FinetuneResult result;
    std::vector<Mat> best;
    auto eval_epoch = [&](int epoch) {
        if (val.empty()) return;
        EvalBatch batch = score_split(*state, store, "val");
        double metric = 0.0;
        try {
            metric = macro_ap(batch);
        } catch (const NoPositivesError&) {
            metric = 0.0;
        }
        result.epoch_metrics.push_back(metric);
        if (!out_dir.empty()) {
            json j{{"epoch", epoch}, {"macro_ap", metric}};
            try {
                j["micro_ap"] = micro_ap(batch);
            } catch (const NoPositivesError&) {
            }
            write_metrics_json(out_dir / ("metrics_epoch" + std::to_string(epoch) + ".json"), j);
        }
        if (result.best_epoch < 0 || metric > result.best_metric) {
            result.best_epoch = epoch;
            result.best_metric = metric;
            best = snapshot_values(state->parameters());
        }
        log << "epoch=" << epoch << " val_macro_ap=" << metric << "\n";
    };

    if (run.linear_probe) {
        // Frozen features, trainable classifier only.
        auto features_of = [&](const std::vector<const Sample*>& samples) {
            Mat f(static_cast<int>(samples.size()), enc_cfg.d_model);
            Mat y(static_cast<int>(samples.size()), n_classes);
            for (size_t i = 0; i < samples.size(); ++i) {
                const RasterMap norm =
                    normalize_rasters(samples[i]->rasters, data_geom, state->band_stats);
                ag::Tape tape;
                TokenBatch batch = embed_sample(tape, state->projections, norm, bands, geom,
                                                state->pool_mode);
                EncodeResult enc = encode(tape, *state, batch.tokens, enc_table, batch.mask, false);
                const Mat& lat = tape.val(enc.latents);
                for (int r = 0; r < lat.rows; ++r)
                    for (int c = 0; c < lat.cols; ++c)
                        f.at(static_cast<int>(i), c) += lat.at(r, c) / lat.rows;
                for (int c = 0; c < n_classes; ++c)
                    y.at(static_cast<int>(i), c) = samples[i]->labels[static_cast<size_t>(c)];
            }
            return std::make_pair(f, y);
        };
        const auto [f_train, y_train] = features_of(train);
        std::pair<Mat, Mat> val_data;
        if (!val.empty()) val_data = features_of(val);

        const std::vector<Param*> probe_params{state->cls_W, state->cls_b};
        const OptimConfig opt{run.beta1, run.beta2, run.eps, run.weight_decay, run.clip_norm};
        const Schedule schedule{run.base_lr, run.warmup_epochs, run.epochs, 1};
        for (int epoch = 0; epoch < run.epochs; ++epoch) {
            for (Param* p : probe_params) p->zero_grad();
            ag::Tape tape;
            ag::NodeId logits = tape.add_rowvec(
                tape.matmul(tape.leaf(f_train), tape.param(*state->cls_W)),
                tape.param(*state->cls_b));
            ag::NodeId loss = tape.bce_with_logits(logits, y_train);
            tape.backward(loss);
            clip_global_norm(probe_params, run.clip_norm);
            adamw_step(probe_params, lr_at(epoch, schedule), opt, epoch + 1);
            if ((epoch + 1) % 50 == 0 || epoch + 1 == run.epochs)
                log << "step=" << epoch << " lr=" << lr_at(epoch, schedule)
                    << " loss=" << tape.val(loss).d[0] << "\n";
        }
        eval_epoch(run.epochs - 1);
    } else {
        const int steps_per_epoch =
            static_cast<int>((train.size() + run.batch_size - 1) / run.batch_size);
        const Schedule schedule{run.base_lr, run.warmup_epochs, run.epochs, steps_per_epoch};
        const auto params = state->parameters();
        const OptimConfig opt{run.beta1, run.beta2, run.eps, run.weight_decay, run.clip_norm};
        long step = 0;
        uint64_t visit = 0;
        for (int epoch = 0; epoch < run.epochs; ++epoch) {
            std::vector<size_t> order(train.size());
            std::iota(order.begin(), order.end(), 0);
            Rng shuffle_rng(derive_seed(run.seed, "ft-order", static_cast<uint64_t>(epoch)));
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[shuffle_rng.below(i)]);
            for (size_t batch_start = 0; batch_start < order.size();
                 batch_start += static_cast<size_t>(run.batch_size)) {
                const size_t batch_end =
                    std::min(order.size(), batch_start + static_cast<size_t>(run.batch_size));
                const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);
                state->zero_grads();
                double batch_loss = 0.0;
                for (size_t bi = batch_start; bi < batch_end; ++bi, ++visit) {
                    const Sample& sample = *train[order[bi]];
                    RasterMap rasters = sample.rasters;
                    if (run.flips) {
                        Rng flip_rng(derive_seed(run.seed, "ft-flip", visit));
                        augment_flips(rasters, flip_rng);
                    }
                    const RasterMap norm = normalize_rasters(rasters, data_geom, state->band_stats);
                    ag::Tape tape;
                    const ag::NodeId logits = classify_forward(tape, *state, norm, enc_table);
                    const ag::NodeId loss =
                        tape.bce_with_logits(logits, labels_to_row(sample.labels));
                    const double lv = tape.val(loss).d[0];
                    if (!std::isfinite(lv)) throw NonFiniteError("finetune: non-finite loss");
                    batch_loss += lv;
                    tape.backward(tape.scale(loss, inv_batch));
                }
                batch_loss *= inv_batch;
                clip_global_norm(params, run.clip_norm);
                const double lr = lr_at(step, schedule);
                adamw_step(params, lr, opt, step + 1);
                log << "step=" << step << " lr=" << lr << " loss=" << batch_loss << "\n";
                ++step;
            }
            eval_epoch(epoch);
        }
    }

    if (!best.empty()) restore_values(state->parameters(), best);
    if (result.best_epoch < 0) {
        result.best_epoch = run.epochs - 1;
        result.best_metric = 0.0;
    }
    if (!out_dir.empty()) save_checkpoint(*state, out_dir);
    result.state = std::move(state);
    return result;
}

EvalBatch score_split(ModelState& state, const Store& store, const std::string& split) {
    const auto samples = store.split(split);
    const GeometryConfig data_geom = store.geometry;
    const Mat enc_table =
        compose_encodings(state.geometry, state.enc_params, state.flags, state.bands);
    EvalBatch out;
    const int n_classes = static_cast<int>(store.classes.size());
    out.scores = Mat(static_cast<int>(samples.size()), n_classes);
    out.labels = Mat(static_cast<int>(samples.size()), n_classes);
    for (size_t i = 0; i < samples.size(); ++i) {
        const RasterMap norm = normalize_rasters(samples[i]->rasters, data_geom, state.band_stats);
        ag::Tape tape;
        const ag::NodeId logits = classify_forward(tape, state, norm, enc_table);
        const Mat& lv = tape.val(logits);
        for (int c = 0; c < n_classes; ++c) {
            out.scores.at(static_cast<int>(i), c) = lv.d[static_cast<size_t>(c)];
            out.labels.at(static_cast<int>(i), c) = samples[i]->labels[static_cast<size_t>(c)];
        }
    }
    return out;
}

double evaluate_mae_loss(ModelState& state, const GeometryConfig& geom,
                         const std::vector<const Sample*>& samples, const MaskPlan& plan,
                         uint64_t salt) {
    if (samples.empty()) throw ConfigError("evaluate_mae_loss: no samples");
    const ForwardTables tables = make_tables(state);
    double total = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const RasterMap norm = normalize_rasters(samples[i]->rasters, geom, state.band_stats);
        Rng mask_rng(plan.seed ^ (salt + i));
        const auto masks = sample_masks(plan, geom, mask_rng);
        ag::Tape tape;
        const ag::NodeId loss = mae_forward(tape, state, norm, masks, tables);
        total += tape.val(loss).d[0];
    }
    return total / static_cast<double>(samples.size());
}

double mean_predictor_mae_loss(ModelState& state, const GeometryConfig& geom,
                               const std::vector<const Sample*>& samples, const MaskPlan& plan,
                               uint64_t salt) {
    if (samples.empty()) throw ConfigError("mean_predictor_mae_loss: no samples");
    double total = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const RasterMap norm = normalize_rasters(samples[i]->rasters, geom, state.band_stats);
        Rng mask_rng(plan.seed ^ (salt + i));
        const auto masks = sample_masks(plan, geom, mask_rng);
        const auto targets = reconstruction_targets(norm, state.bands, geom);
        double sample_loss = 0.0;
        int groups = 0;
        for (const auto& [gid, target] : targets) {
            const auto mit = masks.find(gid);
            if (mit == masks.end()) continue;
            double group_loss = 0.0;
            long count = 0;
            const Mat t = state.normalize_target ? normalize_tokens(target) : target;
            for (int r = 0; r < t.rows; ++r) {
                if (!mit->second[static_cast<size_t>(r)]) continue;
                const double* row = t.row_ptr(r);
                double mu = 0.0;
                for (int c = 0; c < t.cols; ++c) mu += row[c];
                mu /= t.cols;
                for (int c = 0; c < t.cols; ++c) group_loss += (row[c] - mu) * (row[c] - mu);
                count += t.cols;
            }
            if (count == 0) continue;
            sample_loss += group_loss / static_cast<double>(count);
            ++groups;
        }
        if (groups == 0) throw AllVisibleError("mean_predictor_mae_loss: nothing masked");
        total += sample_loss / groups;
    }
    return total / static_cast<double>(samples.size());
}

void reconstruct_samples(ModelState& state, const Store& store, int n_samples, uint64_t seed,
                         double mask_ratio, const std::filesystem::path& out_dir) {
    if (!state.has_decoder) throw ConfigError("reconstruct: checkpoint has no decoder");
    std::filesystem::create_directories(out_dir);
    const GeometryConfig& geom = state.geometry;
    const ForwardTables tables = make_tables(state);
    const MaskPlan plan = make_mask_plan(geom, mask_ratio, derive_seed(seed, "recon-mask"));

    std::vector<const Sample*> picks = store.split("val");
    if (picks.empty()) picks = store.split("train");
    if (static_cast<int>(picks.size()) > n_samples) picks.resize(static_cast<size_t>(n_samples));

    const auto present = groups_in_subset(geom, state.bands);
    for (size_t si = 0; si < picks.size(); ++si) {
        const Sample& sample = *picks[si];
        const RasterMap norm = normalize_rasters(sample.rasters, geom, state.band_stats);
        Rng mask_rng(plan.seed ^ si);
        const auto masks = sample_masks(plan, geom, mask_rng);
        ag::Tape tape;
        TokenBatch batch = embed_sample(tape, state.projections, norm, state.bands, geom,
                                        state.pool_mode);
        batch.mask = mask_for_layout(masks, batch.meta, geom);
        EncodeResult enc = encode(tape, state, batch.tokens, tables.enc, batch.mask, true);
        auto preds = decode_and_reconstruct(tape, state, enc, batch.meta, batch.mask, tables.dec);
        const auto targets = reconstruction_targets(norm, state.bands, geom);

        for (const auto& [g, names] : present) {
            const Mat& target = targets.at(g->id);
            const Mat& pred = tape.val(preds.at(g->id));
            const auto& gmask = masks.at(g->id);
            const int s2 = g->patch_size * g->patch_size;

            // reconstruction panel: true tokens on visible positions,
            // prediction (de-standardized per token) on masked ones
            Mat recon = target;
            for (int r = 0; r < target.rows; ++r) {
                if (!gmask[static_cast<size_t>(r)]) continue;
                const double* prow = pred.row_ptr(r);
                double* rrow = recon.row_ptr(r);
                if (state.normalize_target) {
                    const double* trow = target.row_ptr(r);
                    double mu = 0.0;
                    for (int c = 0; c < target.cols; ++c) mu += trow[c];
                    mu /= target.cols;
                    double var = 0.0;
                    for (int c = 0; c < target.cols; ++c)
                        var += (trow[c] - mu) * (trow[c] - mu);
                    const double sd = std::sqrt(var / target.cols);
                    for (int c = 0; c < target.cols; ++c)
                        rrow[c] = prow[c] * (sd + 1e-6) + mu;
                } else {
                    std::copy(prow, prow + target.cols, rrow);
                }
            }

            // per-band planes in dataset units
            const SensorConfig* sensor = geom.find_sensor(g->sensor_id);
            auto plane = [&](const Mat& tokens, size_t band_idx, bool gray_masked) {
                Mat patches(g->tokens(), s2);
                for (int r = 0; r < patches.rows; ++r) {
                    const double* src = tokens.row_ptr(r) + static_cast<int>(band_idx) * s2;
                    std::copy(src, src + s2, patches.row_ptr(r));
                    if (gray_masked && gmask[static_cast<size_t>(r)])
                        std::fill(patches.row_ptr(r), patches.row_ptr(r) + s2, 0.0);
                }
                Mat img = unpatchify(patches, g->patch_count, g->patch_size);
                const auto stat = state.band_stats.find(sensor->name + "/" + names[band_idx]);
                const double mean = stat != state.band_stats.end() ? stat->second.first : 0.0;
                const double sd = stat != state.band_stats.end() ? stat->second.second : 1.0;
                for (double& v : img.d) v = v * sd + mean;
                return img;
            };

            auto triptych = [&](size_t band_idx) {
                const Mat masked = plane(target, band_idx, true);
                const Mat recon_img = plane(recon, band_idx, false);
                const Mat truth = plane(target, band_idx, false);
                const int side = truth.rows;
                const int gutter = 2;
                Mat panel(side, 3 * side + 2 * gutter, 1e30);
                for (int r = 0; r < side; ++r) {
                    std::copy(masked.row_ptr(r), masked.row_ptr(r) + side, panel.row_ptr(r));
                    std::copy(recon_img.row_ptr(r), recon_img.row_ptr(r) + side,
                              panel.row_ptr(r) + side + gutter);
                    std::copy(truth.row_ptr(r), truth.row_ptr(r) + side,
                              panel.row_ptr(r) + 2 * (side + gutter));
                }
                return panel;
            };

            const auto stat_range = [&](const std::string& band) {
                const auto stat = state.band_stats.find(sensor->name + "/" + band);
                const double mean = stat != state.band_stats.end() ? stat->second.first : 0.5;
                const double sd = stat != state.band_stats.end() ? stat->second.second : 0.5;
                return std::make_pair(mean - 2.0 * sd, mean + 2.0 * sd);
            };

            const std::string stem = "sample" + std::to_string(sample.id) + "_" + sensor->name +
                                     "_g" + std::to_string(g->id);
            auto idx_of = [&names](const std::string& b) -> int {
                const auto it = std::find(names.begin(), names.end(), b);
                return it == names.end() ? -1 : static_cast<int>(it - names.begin());
            };
            const int ir = idx_of("Red"), ig = idx_of("Green"), ib = idx_of("Blue");
            if (ir >= 0 && ig >= 0 && ib >= 0) {
                const auto [lo, hi] = stat_range(names[static_cast<size_t>(ir)]);
                write_ppm(out_dir / (stem + ".ppm"), triptych(static_cast<size_t>(ir)),
                          triptych(static_cast<size_t>(ig)), triptych(static_cast<size_t>(ib)), lo,
                          hi);
            } else {
                const auto [lo, hi] = stat_range(names[0]);
                write_pgm(out_dir / (stem + ".pgm"), triptych(0), lo, hi);
            }
        }
    }
}

} // namespace usat
