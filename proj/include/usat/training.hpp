#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>

#include "usat/data.hpp"
#include "usat/masking.hpp"
#include "usat/metrics.hpp"
#include "usat/model.hpp"

namespace usat {

struct Schedule {
    double base_lr = 1.5e-4;
    int warmup_epochs = 1;
    int total_epochs = 25;
    int steps_per_epoch = 1;

    long warmup_steps() const { return static_cast<long>(warmup_epochs) * steps_per_epoch; }
    long total_steps() const { return static_cast<long>(total_epochs) * steps_per_epoch; }
};

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at the last step.
double lr_at(long step, const Schedule& schedule);

struct OptimConfig {
    double beta1 = 0.9;
    double beta2 = 0.95; // 0.999 for fine-tuning
    double eps = 1e-8;
    double weight_decay = 0.05;
    double clip_norm = 1.0;
};

/// Decoupled-weight-decay adaptive moment update. Decay is skipped for
/// parameters flagged decay=false (biases, norm scales, mask token).
/// Validates every candidate value before mutating anything and throws
/// NonFiniteError otherwise. `t` is the 1-based step count.
void adamw_step(const std::vector<Param*>& params, double lr, const OptimConfig& opt, long t);

/// Scales gradients so their global L2 norm is at most max_norm; returns
/// the pre-clip norm. Throws NonFiniteError on a non-finite norm.
double clip_global_norm(const std::vector<Param*>& params, double max_norm);

/// Random horizontal/vertical flips (p=0.5 each) applied identically to
/// every band of every sensor. No rescaling.
void augment_flips(RasterMap& rasters, Rng& rng);

struct RunConfig {
    std::string mode = "pretrain"; // "pretrain" | "finetune"
    double base_lr = 1.5e-4;
    double weight_decay = 0.05;
    int epochs = 25;
    int warmup_epochs = 1;
    int batch_size = 160;
    double mask_ratio = 0.75;
    uint64_t seed = 0;
    bool flips = true;
    bool consistent_mask = false;
    bool normalize_target = true;
    PoolMode pool = PoolMode::average;
    bool linear_probe = false;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double clip_norm = 1.0;
    GroupIndexMode group_index_mode = GroupIndexMode::finetune;
    int workers = 1;
};

struct ModelSpec {
    EncoderConfig encoder;
    DecoderConfig decoder;
    ComposeFlags flags;
};

struct PretrainResult {
    std::unique_ptr<ModelState> state;
    std::vector<double> loss_curve; // batch-mean loss per step
};

/// MAE pre-training loop: embed -> mask -> encode visible -> decode ->
/// masked MSE -> AdamW. Logs `step=<n> lr=<f> loss=<f>` per step. Writes
/// the final checkpoint into out_dir when given; on NonFiniteError the
/// last good parameters are written there before rethrowing.
PretrainResult pretrain(const Store& store, const BandSubset& bands, const ModelSpec& spec,
                        const RunConfig& run, std::ostream& log,
                        const std::filesystem::path& out_dir = {});

struct FinetuneResult {
    std::unique_ptr<ModelState> state;
    int best_epoch = -1;
    double best_metric = 0.0;
    std::vector<double> epoch_metrics; // validation macro AP per epoch
};

/// Multi-label fine-tuning with binary cross-entropy (full fine-tune or
/// linear probe). Loads matching projection/encoder parameters from the
/// checkpoint when given; classification head starts fresh. Selects the
/// best epoch by validation macro AP.
FinetuneResult finetune(const ModelState* checkpoint, const Store& store, const BandSubset& bands,
                        const ModelSpec& spec, const RunConfig& run, std::ostream& log,
                        const std::filesystem::path& out_dir = {});

/// Classification scores for a split (no augmentation).
EvalBatch score_split(ModelState& state, const Store& store, const std::string& split);

/// Mean masked-MSE over the given samples with deterministic per-sample
/// masks derived from plan.seed ^ (salt + index).
double evaluate_mae_loss(ModelState& state, const GeometryConfig& geom,
                         const std::vector<const Sample*>& samples, const MaskPlan& plan,
                         uint64_t salt);

/// Masked-MSE of the trivial per-token mean predictor on the same masks;
/// the reference point for reconstruction quality.
double mean_predictor_mae_loss(ModelState& state, const GeometryConfig& geom,
                               const std::vector<const Sample*>& samples, const MaskPlan& plan,
                               uint64_t salt);

/// Writes masked / reconstructed / original panels side by side, one
/// PPM (RGB groups) or PGM (others) per sample and group.
void reconstruct_samples(ModelState& state, const Store& store, int n_samples, uint64_t seed,
                         double mask_ratio, const std::filesystem::path& out_dir);

/// Checks that a dataset's sensors match the model geometry for the bands
/// used (same gsd/patch size); throws GeometryMismatchError otherwise.
void check_geometry_compat(const GeometryConfig& model_geom, const GeometryConfig& data_geom,
                           const BandSubset& bands);

} // namespace usat
