#include "passcam/run_config.hpp"

#include <fstream>

#include "passcam/error.hpp"
#include "passcam/hash.hpp"

namespace passcam {

using nlohmann::json;

void RunConfig::validate() const {
    if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper, got '" + preset + "'");
    if (folds < 3) throw ConfigError("folds must be at least 3");
    if (fold < 0 || fold >= folds) throw ConfigError("fold must be in [0, folds)");
    if (n < static_cast<std::size_t>(folds)) throw ConfigError("n must be at least the number of folds");
    train().validate();
}

ModelConfig RunConfig::model() const {
    ModelConfig m = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
    m.image_only = image_only;
    return m;
}

RasterConfig RunConfig::raster() const { return preset == "paper" ? RasterConfig::paper() : RasterConfig::desk(); }

SynthConfig RunConfig::synth() const {
    SynthConfig s = SynthConfig::for_mode(mode);
    s.raster = raster();
    return s;
}

TrainConfig RunConfig::train() const {
    TrainConfig tc;
    tc.max_epochs = epochs;
    tc.batch_size = batch_size;
    tc.learning_rate = lr;
    tc.seed = seed;
    return tc;
}

json run_config_to_json(const RunConfig& rc) {
    return {{"preset", rc.preset},         {"mode", synth_mode_name(rc.mode)},
            {"n", rc.n},                   {"seed", rc.seed},
            {"dataset", rc.dataset},       {"fold", rc.fold},
            {"folds", rc.folds},           {"image_only", rc.image_only},
            {"epochs", rc.epochs},         {"batch_size", rc.batch_size},
            {"lr", rc.lr},                 {"out", rc.out}};
}

RunConfig run_config_from_json(const json& j, RunConfig rc) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "preset") rc.preset = value.get<std::string>();
            else if (key == "mode") rc.mode = synth_mode_from_name(value.get<std::string>());
            else if (key == "n") rc.n = value.get<std::size_t>();
            else if (key == "seed") rc.seed = value.get<std::uint64_t>();
            else if (key == "dataset") rc.dataset = value.get<std::string>();
            else if (key == "fold") rc.fold = value.get<int>();
            else if (key == "folds") rc.folds = value.get<int>();
            else if (key == "image_only") rc.image_only = value.get<bool>();
            else if (key == "epochs") rc.epochs = value.get<int>();
            else if (key == "batch_size") rc.batch_size = value.get<int>();
            else if (key == "lr") rc.lr = value.get<double>();
            else if (key == "out") rc.out = value.get<std::string>();
            else throw ConfigError("unknown run config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, std::move(base));
}

std::string run_config_hash(const RunConfig& rc) {
    json j = run_config_to_json(rc);
    j.erase("out");
    return sha256_hex(j.dump());
}

}  // namespace passcam
