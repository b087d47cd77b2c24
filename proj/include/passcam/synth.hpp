#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "passcam/raster.hpp"
#include "passcam/rng.hpp"
#include "passcam/scene.hpp"
#include "passcam/stats.hpp"

namespace passcam {

enum class SynthMode {
    mixed,         // spatial and passer-skill terms both active
    spatial_only,  // w_skill = 0
    stats_only,    // every spatial weight = 0
};

const char* synth_mode_name(SynthMode m);
SynthMode synth_mode_from_name(const std::string& name);

/// Logistic ground truth: P(success) = sigmoid(w . phi + bias) with
/// phi = (numerical balance in the target zone [teammates - defenders],
///        lane clearance [m, capped], receiver alignment [-1,1],
///        passer skill [z-score], pass distance [m]).
struct GroundTruth {
    double w_balance = 0.0;
    double w_clearance = 0.0;
    double w_alignment = 0.0;
    double w_skill = 0.0;
    double w_distance = 0.0;
    double bias = 0.0;
    double clearance_cap_m = 15.0;

    /// Defaults per mode. Biases were tuned once with `passcam tune-truth`
    /// (mixed: success rate ~0.577; special modes: ~0.5).
    static GroundTruth defaults(SynthMode mode);

    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

nlohmann::json ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

struct OracleFeatures {
    double balance = 0.0;  // passer's teammates in the zone minus defenders in the zone
    double clearance = 0.0;
    double alignment = 0.0;
    double skill = 0.0;
    double distance = 0.0;
};

/// Point-to-segment distance in metres.
double distance_to_segment(Vec2 p, Vec2 a, Vec2 b);

/// Nearest offense teammate to ball_to, excluding the passer; npos when none.
std::size_t intended_receiver(const PitchScene& scene);

OracleFeatures oracle_features(const PitchScene& scene, double skill, double clearance_cap_m);
double logistic(double x);
double oracle_probability(const PitchScene& scene, double skill, const GroundTruth& gt);

enum class Role { defender, midfielder, forward };

const char* role_name(Role r);

struct Passer {
    std::string id;
    Role role = Role::midfielder;
    double skill = 0.0;
    PasserStats stats;
};

/// Season stats generated from the latent skill: success rates are
/// sigmoid(base + 0.8 skill + noise), counts follow the role's profile
/// (defenders: many long passes; midfielders: many through passes).
Passer sample_passer(Role role, std::string id, Rng& rng);
/// Noise-free passer of average skill: median counts, base rates.
Passer archetype_passer(Role role);
/// Throws InvalidInput for names other than defender/midfielder/forward.
Role role_from_name(const std::string& name);

struct SynthConfig {
    SynthMode mode = SynthMode::mixed;
    GroundTruth truth = GroundTruth::defaults(SynthMode::mixed);
    PitchDims pitch;
    RasterConfig raster = RasterConfig::desk();
    std::size_t passer_pool = 300;

    static SynthConfig for_mode(SynthMode mode);
};

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// ball_to and most outfield players uniform inside the target zone, 1-11
/// players per side, velocity
/// components N(0, 2^2) clipped to 13 m/s, passer at ball_from.
PitchScene sample_scene(const SynthConfig& cfg, Rng& rng);

struct Scenario {
    PitchScene scene;
    PasserStats stats;
    double skill = 0.0;
};

Scenario sample_scenario(const SynthConfig& cfg, Rng& rng);

}  // namespace passcam
