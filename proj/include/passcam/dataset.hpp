#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "passcam/model.hpp"
#include "passcam/raster.hpp"
#include "passcam/scene.hpp"
#include "passcam/stats.hpp"
#include "passcam/synth.hpp"

namespace passcam {

struct PassRecord {
    std::size_t id = 0;
    PitchScene scene;
    std::string passer_id;
    std::string role;
    PasserStats stats;
    double skill = 0.0;     // latent; synthetic data only
    double oracle_p = 0.5;  // ground-truth success probability; synthetic data only
    Outcome label = Outcome::failure;
};

/// Passes plus their renders. Images are always regenerated from the scenes
/// with `raster`, so a dataset on disk never needs its PNGs.
struct Dataset {
    SynthConfig config;
    std::uint64_t seed = 0;
    std::vector<PassRecord> passes;
    std::vector<RasterImage> images;

    std::size_t size() const { return passes.size(); }
    FeatureVector raw_features(std::size_t i) const { return build_feature_vector(passes[i].stats); }
    void render();
};

/// Each pass i draws from its own stream (seed, i), the passer pool from
/// stream (seed, pool); output is independent of thread count.
Dataset generate_dataset(const SynthConfig& cfg, std::size_t n, std::uint64_t seed);

/// mean over passes of max(p, 1 - p): accuracy of the Bayes classifier.
double bayes_accuracy(const Dataset& ds);
double bayes_accuracy(const Dataset& ds, const std::vector<std::size_t>& indices);
/// Accuracy of thresholding the stored oracle probabilities at 0.5 against labels.
double oracle_classifier_accuracy(const Dataset& ds);
double success_rate(const Dataset& ds);

struct BiasCalibration {
    double bias = 0.0;
    double expected_success_rate = 0.0;  // mean oracle probability at `bias`
    double bayes_accuracy = 0.0;
};

/// Bias that makes the mean oracle success probability over n generated
/// passes equal `target_rate` (bisection; scenes do not depend on the bias).
BiasCalibration calibrate_bias(const SynthConfig& cfg, double target_rate, std::size_t n, std::uint64_t seed);

inline constexpr int kDatasetFormatVersion = 1;

/// Directory layout:
///   manifest.json  format/version, seed, n, synth config
///   scenes.jsonl   one pass per line: id, passer_id, role, skill, stats, scene
///   labels.csv     id,label,oracle_p
///   png/<id>.png   optional renders
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool write_pngs = false);
Dataset load_dataset(const std::filesystem::path& dir);

/// Reader interface for external pass-event sources. Only the native JSONL
/// layout above is implemented.
class PassEventReader {
public:
    virtual ~PassEventReader() = default;
    virtual std::vector<PassRecord> read(const std::filesystem::path& path) const = 0;
};

class JsonlPassReader : public PassEventReader {
public:
    std::vector<PassRecord> read(const std::filesystem::path& path) const override;
};

nlohmann::json pass_record_to_json(const PassRecord& rec);
PassRecord pass_record_from_json(const nlohmann::json& j);

}  // namespace passcam
