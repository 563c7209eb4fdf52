#pragma once

#include "pointdet/data.hpp"
#include "pointdet/metrics.hpp"
#include "pointdet/model.hpp"
#include "pointdet/training.hpp"

#include <string>

// The CLI-facing configuration document: one JSON file with model / backbone /
// head / train / eval / synth sections. Unknown keys anywhere are errors.
// Precedence is defaults < config file < command-line flags; sync() reconciles
// the fields that several modules share after all overrides are applied.

namespace pointdet::config {

struct AppConfig {
    model::ModelConfig model;
    training::TrainConfig train;
    metrics::EvalConfig eval;
    data::SynthSpec synth;
    int synth_images = 16;
    int synth_mfov_k = 1;

    // Copies eval radius/threshold into the trainer's mirrors and the head's
    // class count into the eval section.
    void sync();
};

AppConfig parse_config_text(const std::string& text, AppConfig base, const std::string& origin);
AppConfig parse_config_file(const std::string& path, AppConfig base = AppConfig{});

// Fully resolved document (every key, every value) for provenance logging.
std::string dump_config(const AppConfig& config);

} // namespace pointdet::config
