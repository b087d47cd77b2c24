#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "passcam/model.hpp"
#include "passcam/raster.hpp"
#include "passcam/stats.hpp"

namespace passcam {

/// Everything needed to reproduce predictions: the network, the fitted
/// feature standardizer, the raster settings the network was trained on, and
/// free-form training metadata (seed, fold, best validation accuracy, run
/// config and its hash).
struct Checkpoint {
    ModelParams params{ModelConfig::desk()};
    Standardizer standardizer;
    RasterConfig raster;
    nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and floats little-endian:
///   [0, 8)    magic "PSCMCKPT"
///   [8, 12)   u32 format version
///   [12, 20)  u64 header length L
///   [20, 20+L) UTF-8 JSON header: model_config, raster, metadata,
///             standardizer.fitted_on, param_count, tensors [{name, shape, offset}]
///   then      15 f64 standardizer means, 15 f64 standardizer stds,
///             param_count f64 parameter values in layout order
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace passcam
