#include "usat/model.hpp"

#include <algorithm>
#include <cmath>

namespace usat {

EncoderConfig encoder_preset(const std::string& name) {
    if (name == "vitl") return {24, 1024, 16, 4.0};
    if (name == "tiny") return {2, 64, 4, 4.0};
    throw ConfigError("unknown encoder preset '" + name + "'");
}

DecoderConfig decoder_preset(const std::string& name) {
    if (name == "vitl") return {8, 512, 16};
    if (name == "tiny") return {2, 32, 4};
    throw ConfigError("unknown decoder preset '" + name + "'");
}

Param* ModelState::add_param(const std::string& name, int rows, int cols, bool decay) {
    if (find_param(name)) throw ConfigError("duplicate parameter name " + name);
    registry_.push_back(std::make_unique<Param>(name, rows, cols, decay));
    return registry_.back().get();
}

Param* ModelState::find_param(const std::string& name) const {
    for (const auto& p : registry_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<Param*> ModelState::parameters() const {
    std::vector<Param*> out;
    out.reserve(registry_.size());
    for (const auto& p : registry_) out.push_back(p.get());
    return out;
}

void ModelState::zero_grads() {
    for (const auto& p : registry_) p->zero_grad();
}

size_t ModelState::parameter_count() const { return registry_.size(); }

namespace {

void init_uniform(Param& p, double lim, Rng& rng) {
    for (double& v : p.value.d) v = rng.uniform(-lim, lim);
}

void init_normal(Param& p, double std, Rng& rng) {
    for (double& v : p.value.d) v = rng.normal() * std;
}

void init_const(Param& p, double c) { std::fill(p.value.d.begin(), p.value.d.end(), c); }

BlockParams add_block(ModelState& s, const std::string& prefix, int d, int hidden, Rng& rng) {
    BlockParams b{};
    b.ln1_g = s.add_param(prefix + "/ln1/g", 1, d, false);
    b.ln1_b = s.add_param(prefix + "/ln1/b", 1, d, false);
    b.Wq = s.add_param(prefix + "/attn/Wq", d, d, true);
    b.bq = s.add_param(prefix + "/attn/bq", 1, d, false);
    b.Wk = s.add_param(prefix + "/attn/Wk", d, d, true);
    b.bk = s.add_param(prefix + "/attn/bk", 1, d, false);
    b.Wv = s.add_param(prefix + "/attn/Wv", d, d, true);
    b.bv = s.add_param(prefix + "/attn/bv", 1, d, false);
    b.Wo = s.add_param(prefix + "/attn/Wo", d, d, true);
    b.bo = s.add_param(prefix + "/attn/bo", 1, d, false);
    b.ln2_g = s.add_param(prefix + "/ln2/g", 1, d, false);
    b.ln2_b = s.add_param(prefix + "/ln2/b", 1, d, false);
    b.W1 = s.add_param(prefix + "/mlp/W1", d, hidden, true);
    b.b1 = s.add_param(prefix + "/mlp/b1", 1, hidden, false);
    b.W2 = s.add_param(prefix + "/mlp/W2", hidden, d, true);
    b.b2 = s.add_param(prefix + "/mlp/b2", 1, d, false);

    init_const(*b.ln1_g, 1.0);
    init_const(*b.ln2_g, 1.0);
    init_normal(*b.Wq, 0.02, rng);
    init_normal(*b.Wk, 0.02, rng);
    init_normal(*b.Wv, 0.02, rng);
    init_normal(*b.Wo, 0.02, rng);
    init_normal(*b.W1, 0.02, rng);
    init_normal(*b.W2, 0.02, rng);
    return b;
}

} // namespace

std::unique_ptr<ModelState> build_model(const GeometryConfig& geometry, const BandSubset& bands,
                                        const ComposeFlags& flags, GroupIndexMode index_mode,
                                        const EncoderConfig& enc, const DecoderConfig& dec,
                                        bool with_decoder, int n_classes, uint64_t seed) {
    auto state = std::make_unique<ModelState>();
    state->geometry = validate_config(geometry);
    state->bands = bands;
    state->flags = flags;
    state->encoder = enc;
    state->decoder = dec;
    state->has_decoder = with_decoder;
    state->n_classes = n_classes;
    state->enc_params = allocate_encoding_dims(enc.d_model, flags, 10000.0, index_mode);
    if (with_decoder)
        state->dec_enc_params = allocate_encoding_dims(dec.d_dec, flags, 10000.0, index_mode);
    if (enc.d_model % enc.n_heads != 0)
        throw ConfigError("encoder d_model must be divisible by n_heads");
    if (with_decoder && dec.d_dec % dec.n_heads != 0)
        throw ConfigError("decoder dim must be divisible by n_heads");

    Rng rng(derive_seed(seed, "model-init"));
    const auto present = groups_in_subset(state->geometry, bands);

    for (const auto& [g, names] : present) {
        const SensorConfig* sensor = state->geometry.find_sensor(g->sensor_id);
        const int s2 = g->patch_size * g->patch_size;
        const double lim = 1.0 / std::sqrt(static_cast<double>(s2));
        for (const auto& name : names) {
            PatchProjection proj;
            proj.W = state->add_param("proj/" + sensor->name + "/" + name + "/W", s2, enc.d_model,
                                      true);
            proj.b = state->add_param("proj/" + sensor->name + "/" + name + "/b", 1, enc.d_model,
                                      false);
            init_uniform(*proj.W, lim, rng);
            state->projections[{g->sensor_id, name}] = proj;
        }
    }

    const int hidden = static_cast<int>(std::lround(enc.d_model * enc.mlp_ratio));
    for (int i = 0; i < enc.depth; ++i)
        state->enc_blocks.push_back(add_block(*state, "enc/blk" + std::to_string(i), enc.d_model,
                                              hidden, rng));

    if (with_decoder) {
        state->dec_embed_W = state->add_param("dec/embed/W", enc.d_model, dec.d_dec, true);
        state->dec_embed_b = state->add_param("dec/embed/b", 1, dec.d_dec, false);
        state->mask_token = state->add_param("dec/mask_token", 1, dec.d_dec, false);
        init_normal(*state->dec_embed_W, 0.02, rng);
        init_normal(*state->mask_token, 0.02, rng);
        const int dhidden = dec.d_dec * 4;
        for (int i = 0; i < dec.depth; ++i)
            state->dec_blocks.push_back(add_block(*state, "dec/blk" + std::to_string(i), dec.d_dec,
                                                  dhidden, rng));
        state->dec_norm_g = state->add_param("dec/norm/g", 1, dec.d_dec, false);
        state->dec_norm_b = state->add_param("dec/norm/b", 1, dec.d_dec, false);
        init_const(*state->dec_norm_g, 1.0);
        for (const auto& [g, names] : present) {
            const SensorConfig* sensor = state->geometry.find_sensor(g->sensor_id);
            const int out_dim = static_cast<int>(names.size()) * g->patch_size * g->patch_size;
            GroupHead head;
            head.W = state->add_param("head/" + sensor->name + "/g" + std::to_string(g->id) + "/W",
                                      dec.d_dec, out_dim, true);
            head.b = state->add_param("head/" + sensor->name + "/g" + std::to_string(g->id) + "/b",
                                      1, out_dim, false);
            init_normal(*head.W, 0.02, rng);
            state->heads[g->id] = head;
        }
    }

    if (n_classes > 0) {
        state->cls_W = state->add_param("cls/W", enc.d_model, n_classes, true);
        state->cls_b = state->add_param("cls/b", 1, n_classes, false);
        // zero init: probes and fresh heads start from uniform scores
    }
    return state;
}

namespace {

ag::NodeId run_block(ag::Tape& t, const BlockParams& blk, ag::NodeId x, int n_heads) {
    const int d = t.val(x).cols;
    const int dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    ag::NodeId xn = t.layer_norm(x, t.param(*blk.ln1_g), t.param(*blk.ln1_b), 1e-6);
    ag::NodeId q = t.add_rowvec(t.matmul(xn, t.param(*blk.Wq)), t.param(*blk.bq));
    ag::NodeId k = t.add_rowvec(t.matmul(xn, t.param(*blk.Wk)), t.param(*blk.bk));
    ag::NodeId v = t.add_rowvec(t.matmul(xn, t.param(*blk.Wv)), t.param(*blk.bv));
    std::vector<ag::NodeId> heads;
    for (int h = 0; h < n_heads; ++h) {
        ag::NodeId qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        ag::NodeId kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        ag::NodeId vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        heads.push_back(t.attention(qh, kh, vh, sc));
    }
    ag::NodeId o = t.add_rowvec(t.matmul(t.concat_cols(heads), t.param(*blk.Wo)),
                                t.param(*blk.bo));
    x = t.add(x, o);

    ag::NodeId x2 = t.layer_norm(x, t.param(*blk.ln2_g), t.param(*blk.ln2_b), 1e-6);
    ag::NodeId h1 = t.gelu(t.add_rowvec(t.matmul(x2, t.param(*blk.W1)), t.param(*blk.b1)));
    ag::NodeId h2 = t.add_rowvec(t.matmul(h1, t.param(*blk.W2)), t.param(*blk.b2));
    return t.add(x, h2);
}

} // namespace

EncodeResult encode(ag::Tape& tape, ModelState& state, ag::NodeId tokens, const Mat& encodings,
                    const std::vector<uint8_t>& mask, bool visible_only) {
    const Mat& tv = tape.val(tokens);
    if (tv.rows != encodings.rows || tv.cols != encodings.cols)
        throw ShapeError("encode: encodings shape does not match tokens");
    ag::NodeId x = tape.add(tokens, tape.leaf(encodings));
    EncodeResult res;
    if (visible_only) {
        std::vector<int> keep;
        for (size_t i = 0; i < mask.size(); ++i)
            if (!mask[i]) keep.push_back(static_cast<int>(i));
        if (keep.empty()) throw ShapeError("encode: no visible tokens");
        res.token_rows = keep;
        x = tape.gather_rows(x, keep);
    } else {
        res.token_rows.resize(static_cast<size_t>(tv.rows));
        for (int i = 0; i < tv.rows; ++i) res.token_rows[static_cast<size_t>(i)] = i;
    }
    for (const auto& blk : state.enc_blocks) x = run_block(tape, blk, x, state.encoder.n_heads);
    res.latents = x;
    return res;
}

std::map<int, ag::NodeId> decode_and_reconstruct(ag::Tape& tape, ModelState& state,
                                                 const EncodeResult& enc,
                                                 const std::vector<TokenMeta>& meta,
                                                 const std::vector<uint8_t>& mask,
                                                 const Mat& dec_encodings) {
    if (!state.has_decoder) throw ShapeError("decode: model has no decoder");
    if (meta.size() != mask.size()) throw ShapeError("decode: mask size mismatch");
    if (static_cast<int>(meta.size()) != dec_encodings.rows)
        throw ShapeError("decode: encoding rows mismatch");

    ag::NodeId lat = tape.add_rowvec(tape.matmul(enc.latents, tape.param(*state.dec_embed_W)),
                                     tape.param(*state.dec_embed_b));
    // map: token index -> row in lat (visible), or -1 -> mask token
    std::vector<int> map(meta.size(), -1);
    for (size_t r = 0; r < enc.token_rows.size(); ++r)
        map[static_cast<size_t>(enc.token_rows[r])] = static_cast<int>(r);
    for (size_t i = 0; i < meta.size(); ++i)
        if (mask[i]) map[i] = -1;
    ag::NodeId x = tape.assemble_rows(lat, tape.param(*state.mask_token), map);
    x = tape.add(x, tape.leaf(dec_encodings));
    for (const auto& blk : state.dec_blocks) x = run_block(tape, blk, x, state.decoder.n_heads);
    x = tape.layer_norm(x, tape.param(*state.dec_norm_g), tape.param(*state.dec_norm_b), 1e-6);

    std::map<int, ag::NodeId> preds;
    size_t row = 0;
    while (row < meta.size()) {
        const int gid = meta[row].group_id;
        std::vector<int> rows;
        while (row < meta.size() && meta[row].group_id == gid)
            rows.push_back(static_cast<int>(row++));
        const auto hit = state.heads.find(gid);
        if (hit == state.heads.end()) throw ShapeError("decode: no head for group");
        ag::NodeId gtok = tape.gather_rows(x, rows);
        preds[gid] = tape.add_rowvec(tape.matmul(gtok, tape.param(*hit->second.W)),
                                     tape.param(*hit->second.b));
    }
    return preds;
}

Mat normalize_tokens(const Mat& tokens) {
    Mat out(tokens.rows, tokens.cols);
    for (int i = 0; i < tokens.rows; ++i) {
        const double* src = tokens.row_ptr(i);
        double* dst = out.row_ptr(i);
        double mu = 0.0;
        for (int j = 0; j < tokens.cols; ++j) mu += src[j];
        mu /= tokens.cols;
        double var = 0.0;
        for (int j = 0; j < tokens.cols; ++j) {
            const double c = src[j] - mu;
            var += c * c;
        }
        const double sd = std::sqrt(var / tokens.cols);
        const double inv = 1.0 / (sd + 1e-6);
        for (int j = 0; j < tokens.cols; ++j) dst[j] = (src[j] - mu) * inv;
    }
    return out;
}

ag::NodeId mae_loss(ag::Tape& tape, const std::map<int, ag::NodeId>& preds,
                    const std::map<int, Mat>& targets,
                    const std::map<int, std::vector<uint8_t>>& group_masks,
                    bool normalize_target) {
    std::vector<ag::NodeId> group_losses;
    for (const auto& [gid, pred] : preds) {
        const auto tit = targets.find(gid);
        const auto mit = group_masks.find(gid);
        if (tit == targets.end() || mit == group_masks.end())
            throw ShapeError("mae_loss: missing target or mask for group");
        std::vector<int> rows;
        for (size_t i = 0; i < mit->second.size(); ++i)
            if (mit->second[i]) rows.push_back(static_cast<int>(i));
        if (rows.empty()) continue;
        const Mat target = normalize_target ? normalize_tokens(tit->second) : tit->second;
        group_losses.push_back(tape.masked_mse(pred, target, rows));
    }
    if (group_losses.empty()) throw AllVisibleError("mae_loss: no masked tokens in any group");
    const std::vector<double> w(group_losses.size(), 1.0 / group_losses.size());
    return tape.weighted_sum(group_losses, w);
}

ag::NodeId classify(ag::Tape& tape, ModelState& state, ag::NodeId latents) {
    if (!state.cls_W) throw ShapeError("classify: model has no classifier");
    if (tape.val(latents).rows == 0) throw ShapeError("classify: empty latents");
    ag::NodeId pooled = tape.mean_rows(latents);
    return tape.add_rowvec(tape.matmul(pooled, tape.param(*state.cls_W)),
                           tape.param(*state.cls_b));
}

std::map<int, Mat> reconstruction_targets(const RasterMap& rasters, const BandSubset& subset,
                                          const GeometryConfig& cfg) {
    std::map<int, Mat> out;
    for (const auto& [g, names] : groups_in_subset(cfg, subset)) {
        const int s2 = g->patch_size * g->patch_size;
        Mat target(g->tokens(), static_cast<int>(names.size()) * s2);
        for (size_t b = 0; b < names.size(); ++b) {
            const auto it = rasters.find({g->sensor_id, names[b]});
            if (it == rasters.end())
                throw UnknownBandError("reconstruction_targets: missing raster " + names[b]);
            const Mat patches = patchify(it->second.pixels, g->patch_count, g->patch_size);
            for (int r = 0; r < patches.rows; ++r)
                std::copy(patches.row_ptr(r), patches.row_ptr(r) + s2,
                          target.row_ptr(r) + static_cast<int>(b) * s2);
        }
        out[g->id] = std::move(target);
    }
    return out;
}

int transfer_parameters(const ModelState& from, ModelState& to) {
    int copied = 0;
    for (Param* dst : to.parameters()) {
        if (dst->name.rfind("proj/", 0) != 0 && dst->name.rfind("enc/", 0) != 0) continue;
        const Param* src = from.find_param(dst->name);
        if (!src || !src->value.same_shape(dst->value)) continue;
        dst->value = src->value;
        ++copied;
    }
    return copied;
}

} // namespace usat
