#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "passcam/model.hpp"
#include "passcam/raster.hpp"
#include "passcam/synth.hpp"
#include "passcam/train.hpp"

namespace passcam {

/// Merged settings of one CLI run (defaults < config file < flags). Serialized
/// into every checkpoint and results file.
struct RunConfig {
    std::string preset = "desk";  // desk | paper
    SynthMode mode = SynthMode::mixed;
    std::size_t n = 4000;
    std::uint64_t seed = 0;
    std::string dataset;  // dataset directory; empty = generate in memory
    int fold = 0;
    int folds = 10;
    bool image_only = false;
    int epochs = 10;
    int batch_size = 128;
    double lr = 1e-4;
    std::string out = "out";

    void validate() const;

    ModelConfig model() const;
    RasterConfig raster() const;
    SynthConfig synth() const;
    /// Train config with the run seed.
    TrainConfig train() const;
};

/// Flat object, one key per field.
nlohmann::json run_config_to_json(const RunConfig& rc);
/// Applies the keys present in `j` on top of `base`; unknown keys are a
/// ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// SHA-256 of the canonical JSON (sorted keys, no whitespace) of every field
/// except `out`, which does not affect results.
std::string run_config_hash(const RunConfig& rc);

}  // namespace passcam
