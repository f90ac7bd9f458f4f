#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "usat/autograd.hpp"
#include "usat/encodings.hpp"
#include "usat/geometry.hpp"
#include "usat/masking.hpp"
#include "usat/patch_embed.hpp"

namespace usat {

struct EncoderConfig {
    int depth = 24;
    int d_model = 1024;
    int n_heads = 16;
    double mlp_ratio = 4.0;
};

struct DecoderConfig {
    int depth = 8;
    int d_dec = 512;
    int n_heads = 16;
};

EncoderConfig encoder_preset(const std::string& name); // "vitl" | "tiny"
DecoderConfig decoder_preset(const std::string& name);

/// One pre-norm transformer block's parameters.
struct BlockParams {
    Param *ln1_g, *ln1_b;
    Param *Wq, *bq, *Wk, *bk, *Wv, *bv, *Wo, *bo;
    Param *ln2_g, *ln2_b;
    Param *W1, *b1, *W2, *b2;
};

struct GroupHead {
    Param* W = nullptr; // [d_dec, k_g * s_g^2]
    Param* b = nullptr;
};

/// The full named parameter tree plus everything needed to rebuild it:
/// geometry, encoding allocation, architecture, normalization stats and
/// token order. Serialized as a checkpoint directory.
struct ModelState {
    GeometryConfig geometry;
    BandSubset bands; // bands the model owns projections for
    ComposeFlags flags;
    EncodingParams enc_params; // at encoder width
    EncodingParams dec_enc_params; // at decoder width (when decoder present)
    EncoderConfig encoder;
    DecoderConfig decoder;
    bool has_decoder = true;
    int n_classes = 0;
    bool normalize_target = true;
    PoolMode pool_mode = PoolMode::average;
    std::string mode = "pretrain"; // "pretrain" | "finetune"
    std::map<std::string, std::pair<double, double>> band_stats; // "sensor/band" -> (mean, std)

    ProjectionTable projections;
    std::vector<BlockParams> enc_blocks;
    Param* dec_embed_W = nullptr;
    Param* dec_embed_b = nullptr;
    Param* mask_token = nullptr;
    std::vector<BlockParams> dec_blocks;
    Param* dec_norm_g = nullptr;
    Param* dec_norm_b = nullptr;
    std::map<int, GroupHead> heads; // group id -> reconstruction head
    Param* cls_W = nullptr;
    Param* cls_b = nullptr;

    Param* add_param(const std::string& name, int rows, int cols, bool decay);
    Param* find_param(const std::string& name) const;
    std::vector<Param*> parameters() const;
    void zero_grads();
    size_t parameter_count() const;

private:
    std::vector<std::unique_ptr<Param>> registry_;
};

/// Builds and initializes the parameter tree. When `with_decoder` is false
/// the model is a classifier (projections + encoder + classification head).
std::unique_ptr<ModelState> build_model(const GeometryConfig& geometry, const BandSubset& bands,
                                        const ComposeFlags& flags, GroupIndexMode index_mode,
                                        const EncoderConfig& enc, const DecoderConfig& dec,
                                        bool with_decoder, int n_classes, uint64_t seed);

struct EncodeResult {
    ag::NodeId latents = -1;
    std::vector<int> token_rows; // original token index per latent row
};

/// tokens+encodings through the pre-norm transformer stack; only unmasked
/// tokens enter when visible_only. Depth 0 returns tokens + encodings.
EncodeResult encode(ag::Tape& tape, ModelState& state, ag::NodeId tokens, const Mat& encodings,
                    const std::vector<uint8_t>& mask, bool visible_only);

/// Per-group pixel predictions [p_g^2, k_g*s_g^2] keyed by group id. Masked
/// positions are filled with the learned mask token before decoding.
std::map<int, ag::NodeId> decode_and_reconstruct(ag::Tape& tape, ModelState& state,
                                                 const EncodeResult& enc,
                                                 const std::vector<TokenMeta>& meta,
                                                 const std::vector<uint8_t>& mask,
                                                 const Mat& dec_encodings);

/// Per-token standardization: each row mapped to (x - mean) / (std + 1e-6).
Mat normalize_tokens(const Mat& tokens);

/// Mean squared error over masked tokens only, averaged over groups that
/// have at least one masked token. Throws AllVisibleError when none has.
ag::NodeId mae_loss(ag::Tape& tape, const std::map<int, ag::NodeId>& preds,
                    const std::map<int, Mat>& targets,
                    const std::map<int, std::vector<uint8_t>>& group_masks, bool normalize_target);

/// Mean-pool over latent tokens, then affine map to n_classes logits (1 x C).
ag::NodeId classify(ag::Tape& tape, ModelState& state, ag::NodeId latents);

/// Reconstruction targets: per group, the selected bands' patches
/// concatenated band-major into [p_g^2, k_g*s_g^2].
std::map<int, Mat> reconstruction_targets(const RasterMap& rasters, const BandSubset& subset,
                                          const GeometryConfig& cfg);

// --- checkpoint serialization ------------------------------------------

/// Writes manifest.json plus params.bin (little-endian float32 in manifest
/// order) into the directory.
void save_checkpoint(const ModelState& state, const std::filesystem::path& dir);

std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& dir);

/// Copies values for matching projection/encoder parameter names from
/// `from` into `to`; decoder, heads and classifier are left as initialized.
/// Returns the number of transferred parameter tensors.
int transfer_parameters(const ModelState& from, ModelState& to);

} // namespace usat
