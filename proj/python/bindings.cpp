// Python bindings for the core operations: geometry, encodings, masking,
// metrics, resampling, the synthetic data generator and the training entry
// points. Matrices cross the boundary as nested lists (desk-scale sizes).

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "usat/config.hpp"
#include "usat/data.hpp"
#include "usat/metrics.hpp"
#include "usat/training.hpp"

namespace py = pybind11;
using namespace usat;

namespace {

std::vector<std::vector<double>> mat_to_list(const Mat& m) {
    std::vector<std::vector<double>> out(static_cast<size_t>(m.rows));
    for (int i = 0; i < m.rows; ++i)
        out[static_cast<size_t>(i)].assign(m.row_ptr(i), m.row_ptr(i) + m.cols);
    return out;
}

Mat list_to_mat(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Mat();
    Mat m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw ShapeError("ragged matrix passed from Python");
        std::copy(rows[i].begin(), rows[i].end(), m.row_ptr(static_cast<int>(i)));
    }
    return m;
}

BandSubset subset_from_pairs(const GeometryConfig& geom,
                             const std::vector<std::pair<int, std::string>>& bands) {
    if (bands.empty()) return all_bands(geom);
    BandSubset out;
    for (const auto& [sid, name] : bands) out.push_back({sid, name});
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-sensor masked-autoencoder core";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

    // --- geometry ---
    py::class_<GeometryConfig>(m, "GeometryConfig")
        .def_property_readonly(
            "image_footprint_m",
            [](const GeometryConfig& g) { return g.footprint.image_footprint_m; })
        .def_property_readonly(
            "max_footprint_m",
            [](const GeometryConfig& g) { return g.footprint.max_footprint_m; })
        .def_property_readonly(
            "fine_patch_extent_m",
            [](const GeometryConfig& g) { return g.footprint.fine_patch_extent_m; })
        .def("group_ids", [](const GeometryConfig& g) {
            std::vector<int> out;
            for (const auto* gr : g.ordered_groups()) out.push_back(gr->id);
            return out;
        });

    m.def("usatlas_geometry", &usatlas_geometry,
          "Two-sensor reference geometry (320 m footprint in a 1280 m frame)");
    m.def(
        "sequence_length",
        [](const GeometryConfig& g, const std::vector<std::pair<int, std::string>>& bands) {
            return sequence_length(g, subset_from_pairs(g, bands));
        },
        py::arg("geometry"), py::arg("bands") = std::vector<std::pair<int, std::string>>{});
    m.def("fine_grid_offset", &fine_grid_offset, py::arg("image_footprint_m"),
          py::arg("max_footprint_m"), py::arg("fine_patch_extent_m"));

    // --- encodings ---
    m.def("sincos_1d", &sincos_1d, py::arg("pos"), py::arg("d"), py::arg("omega") = 10000.0);
    m.def("posenc_2d", &posenc_2d, py::arg("row"), py::arg("col"), py::arg("pos_dim"),
          py::arg("omega") = 10000.0);
    m.def(
        "superpositional",
        [](const GeometryConfig& g, int group_id, int pos_dim, double omega) {
            const SpectralGroup* gr = g.find_group(group_id);
            if (!gr) throw UnknownBandError("no such group");
            EncodingParams params;
            params.d_model = pos_dim;
            params.pos_dim = pos_dim;
            params.omega = omega;
            return mat_to_list(superpositional(*gr, g, params));
        },
        py::arg("geometry"), py::arg("group_id"), py::arg("pos_dim"), py::arg("omega") = 10000.0,
        "Per-patch positional encodings for a group (mean of covered reference encodings)");
    m.def(
        "compose_encodings",
        [](const GeometryConfig& g, int d_model, bool superpos, bool group, bool sensor,
           const std::string& index_mode, const std::vector<std::pair<int, std::string>>& bands) {
            const ComposeFlags flags{superpos, group, sensor};
            const GroupIndexMode mode = index_mode == "pretrain" ? GroupIndexMode::pretrain
                                                                 : GroupIndexMode::finetune;
            const EncodingParams params = allocate_encoding_dims(d_model, flags, 10000.0, mode);
            return mat_to_list(compose_encodings(g, params, flags, subset_from_pairs(g, bands)));
        },
        py::arg("geometry"), py::arg("d_model"), py::arg("superpositional") = true,
        py::arg("group") = true, py::arg("sensor") = false,
        py::arg("group_index_mode") = "finetune",
        py::arg("bands") = std::vector<std::pair<int, std::string>>{});

    // --- masking ---
    m.def("mask_count", &mask_count, py::arg("p"), py::arg("ratio"));
    m.def(
        "sample_masks",
        [](const GeometryConfig& g, double ratio, uint64_t seed, bool consistent) {
            const MaskPlan plan = make_mask_plan(g, ratio, seed, consistent);
            Rng rng(seed);
            std::map<int, std::vector<int>> out;
            for (const auto& [gid, grid] : sample_masks(plan, g, rng))
                out[gid] = std::vector<int>(grid.begin(), grid.end());
            return out;
        },
        py::arg("geometry"), py::arg("ratio"), py::arg("seed"), py::arg("consistent") = false);

    // --- metrics ---
    m.def("average_precision", &average_precision, py::arg("scores"), py::arg("labels"));
    m.def(
        "micro_ap",
        [](const std::vector<std::vector<double>>& scores,
           const std::vector<std::vector<double>>& labels) {
            return micro_ap({list_to_mat(scores), list_to_mat(labels)});
        },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "macro_ap",
        [](const std::vector<std::vector<double>>& scores,
           const std::vector<std::vector<double>>& labels) {
            return macro_ap({list_to_mat(scores), list_to_mat(labels)});
        },
        py::arg("scores"), py::arg("labels"));
    m.def(
        "accuracy",
        [](const std::vector<std::vector<double>>& scores,
           const std::vector<std::vector<double>>& labels) {
            return accuracy({list_to_mat(scores), list_to_mat(labels)});
        },
        py::arg("scores"), py::arg("labels"));

    // --- data ---
    m.def(
        "bilinear_resample",
        [](const std::vector<std::vector<double>>& band, double src_gsd, double dst_gsd) {
            return mat_to_list(bilinear_resample(list_to_mat(band), src_gsd, dst_gsd));
        },
        py::arg("band"), py::arg("src_gsd"), py::arg("dst_gsd"));
    m.def(
        "synth_generate",
        [](const std::string& out_dir, uint64_t seed, int n, int classes, double val_fraction,
           int workers) {
            SynthConfig sc;
            sc.seed = seed;
            sc.n_samples = n;
            sc.geometry = usatlas_geometry();
            sc.n_classes = classes;
            sc.val_fraction = val_fraction;
            sc.workers = workers;
            sc.out_dir = out_dir;
            const Store store = synth_generate(sc);
            return store.samples.size();
        },
        py::arg("out_dir"), py::arg("seed") = 7, py::arg("n") = 16, py::arg("classes") = 5,
        py::arg("val_fraction") = 0.25, py::arg("workers") = 1,
        "Writes a synthetic multi-sensor dataset and returns the sample count");

    // --- training pipeline (path-based, mirrors the CLI) ---
    m.def(
        "pretrain",
        [](const std::string& data_dir, const std::string& out_dir, const std::string& preset,
           int epochs, int batch, double mask_ratio, uint64_t seed, double base_lr) {
            const Store store = read_store(data_dir);
            RunConfig run;
            run.mode = "pretrain";
            run.epochs = epochs;
            run.batch_size = batch;
            run.mask_ratio = mask_ratio;
            run.seed = seed;
            run.base_lr = base_lr;
            run.warmup_epochs = std::min(1, epochs);
            const ModelSpec spec{encoder_preset(preset), decoder_preset(preset), ComposeFlags{}};
            std::ostringstream log;
            PretrainResult res = pretrain(store, all_bands(store.geometry), spec, run, log,
                                          out_dir);
            return res.loss_curve;
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("preset") = "tiny", py::arg("epochs") = 1,
        py::arg("batch") = 8, py::arg("mask_ratio") = 0.75, py::arg("seed") = 0,
        py::arg("base_lr") = 4e-3, "Runs MAE pre-training; returns the loss curve");
    m.def(
        "evaluate",
        [](const std::string& ckpt_dir, const std::string& data_dir, const std::string& split) {
            auto state = load_checkpoint(ckpt_dir);
            const Store store = read_store(data_dir);
            EvalBatch batch = score_split(*state, store, split);
            py::dict out;
            out["n_samples"] = batch.scores.rows;
            out["micro_ap"] = micro_ap(batch);
            out["macro_ap"] = macro_ap(batch);
            return out;
        },
        py::arg("ckpt_dir"), py::arg("data_dir"), py::arg("split") = "val");
}
