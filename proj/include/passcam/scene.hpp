#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

namespace passcam {

inline constexpr double kMaxPlayerSpeed = 13.0;       // m/s, ingestion sanity bound
inline constexpr double kTargetZoneRadius = 30.0;     // m from the attacked goal centre
inline constexpr int kMaxPlayersPerTeam = 11;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Vec2&, const Vec2&) = default;
};

enum class Team { offense, defense };

struct PlayerState {
    Team team = Team::offense;
    Vec2 pos;  // metres, pitch frame (origin at a corner)
    Vec2 vel;  // m/s

    friend bool operator==(const PlayerState&, const PlayerState&) = default;
};

struct PitchDims {
    double length_m = 105.0;
    double width_m = 68.0;

    friend bool operator==(const PitchDims&, const PitchDims&) = default;
};

enum class FlipAxis { horizontal, vertical };

/// Snapshot of one pass event. Scenes are always stored with the attack
/// toward +x; `canonicalize_attack` converts the other orientation.
struct PitchScene {
    std::vector<PlayerState> players;
    Vec2 ball_from;
    Vec2 ball_to;
    std::size_t passer_index = 0;
    PitchDims pitch;

    friend bool operator==(const PitchScene&, const PitchScene&) = default;
};

/// Throws InvalidInput naming the offending field when an invariant fails.
void validate_scene(const PitchScene& scene);

bool inside_pitch(Vec2 pos, PitchDims pitch);

/// Affine map of the pitch rectangle onto [-1,1]^2, each axis independently.
Vec2 normalize_position(Vec2 pos_m, PitchDims pitch);

/// Midpoint of the goal line at x = length (the attacked goal).
Vec2 attacked_goal_center(PitchDims pitch);

/// Radial reading of the 30 m zone: distance to the attacked goal centre <= 30 m.
bool in_target_zone(Vec2 ball_to, PitchDims pitch);

/// Scene reflected across the pitch's long (horizontal flip: x -> L - x) or
/// short (vertical flip: y -> W - y) centre line, velocities included.
PitchScene mirror_scene(const PitchScene& scene, FlipAxis axis);

/// Rotates a scene recorded with the attack toward -x by 180 degrees.
PitchScene canonicalize_attack(const PitchScene& scene, bool attack_toward_positive_x);

/// Indices of offense players other than the passer.
std::vector<std::size_t> teammates_of_passer(const PitchScene& scene);

// JSON schema (documented in docs/formats.md):
// { "pitch": {"length_m","width_m"}, "attack_direction": "positive_x"|"negative_x",
//   "ball_from": [x,y], "ball_to": [x,y], "passer_index": i,
//   "players": [{"team":"offense"|"defense","pos":[x,y],"vel":[vx,vy]}, ...] }
nlohmann::json scene_to_json(const PitchScene& scene);
/// Parses and validates; InvalidInput carries a JSON-path-like field name.
PitchScene scene_from_json(const nlohmann::json& j);

}  // namespace passcam
