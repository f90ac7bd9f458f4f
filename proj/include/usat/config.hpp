#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "usat/data.hpp"
#include "usat/training.hpp"

namespace usat {

/// Typed view of the CLI configuration document. Sections: geometry,
/// encodings, model, run, data. Every field defaults to the reference
/// settings; unknown keys are rejected.
struct CliConfig {
    GeometryConfig geometry;
    ComposeFlags flags;
    double omega = 10000.0;
    EncoderConfig encoder;
    DecoderConfig decoder;
    RunConfig run;
    SynthConfig synth; // geometry/seed/out_dir filled by the CLI

    ModelSpec model_spec() const { return {encoder, decoder, flags}; }
};

/// Defaults for the given mode ("pretrain" or "finetune"); fine-tuning
/// flips the schedule/optimizer defaults (lr 1e-4, wd 0.1, 5 epochs,
/// batch 10, beta2 0.999).
nlohmann::json default_config_json(const std::string& mode);

/// Parses a config file, validating keys against the schema.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Recursively overlays `overlay` onto `base` (objects merge, scalars and
/// arrays replace).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

/// "tiny" or "vitl" architecture settings as an overlay document.
nlohmann::json preset_overlay(const std::string& preset);

CliConfig config_from_json(const nlohmann::json& merged);

} // namespace usat
