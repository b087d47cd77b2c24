#include "passcam/scene.hpp"

#include <cmath>
#include <string>

#include "passcam/error.hpp"

namespace passcam {

using nlohmann::json;

namespace {

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

json vec_to_json(Vec2 v) { return json::array({v.x, v.y}); }

Vec2 vec_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw InvalidInput(field, "expected [x, y] numeric pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

const json& require(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw InvalidInput(path + key, "missing field");
    return j.at(key);
}

}  // namespace

bool inside_pitch(Vec2 pos, PitchDims pitch) {
    return pos.x >= 0.0 && pos.x <= pitch.length_m && pos.y >= 0.0 && pos.y <= pitch.width_m;
}

void validate_scene(const PitchScene& scene) {
    const auto& p = scene.pitch;
    if (!(p.length_m > 0.0) || !(p.width_m > 0.0) || !std::isfinite(p.length_m) || !std::isfinite(p.width_m))
        throw InvalidInput("pitch", "dimensions must be positive and finite");
    if (!finite(scene.ball_from) || !inside_pitch(scene.ball_from, p))
        throw InvalidInput("ball_from", "outside the pitch");
    if (!finite(scene.ball_to) || !inside_pitch(scene.ball_to, p))
        throw InvalidInput("ball_to", "outside the pitch");

    int offense = 0;
    int defense = 0;
    for (std::size_t i = 0; i < scene.players.size(); ++i) {
        const auto& pl = scene.players[i];
        const std::string field = "players[" + std::to_string(i) + "]";
        if (!finite(pl.pos) || !inside_pitch(pl.pos, p)) throw InvalidInput(field + ".pos", "outside the pitch");
        if (!finite(pl.vel) || std::hypot(pl.vel.x, pl.vel.y) > kMaxPlayerSpeed)
            throw InvalidInput(field + ".vel", "speed exceeds 13 m/s");
        (pl.team == Team::offense ? offense : defense)++;
    }
    if (offense > kMaxPlayersPerTeam || defense > kMaxPlayersPerTeam)
        throw InvalidInput("players", "more than 11 players on a team");
    // An empty player list is accepted for diagnostic renders; otherwise both
    // sides need at least one player and a valid passer.
    if (scene.players.empty()) return;
    if (offense < 1 || defense < 1) throw InvalidInput("players", "each team needs at least one player");
    if (scene.passer_index >= scene.players.size())
        throw InvalidInput("passer_index", "out of range");
    if (scene.players[scene.passer_index].team != Team::offense)
        throw InvalidInput("passer_index", "passer must be on the offense team");
}

Vec2 normalize_position(Vec2 pos_m, PitchDims pitch) {
    if (!finite(pos_m) || !inside_pitch(pos_m, pitch)) throw InvalidInput("pos", "outside the pitch");
    return {2.0 * pos_m.x / pitch.length_m - 1.0, 2.0 * pos_m.y / pitch.width_m - 1.0};
}

Vec2 attacked_goal_center(PitchDims pitch) { return {pitch.length_m, pitch.width_m / 2.0}; }

bool in_target_zone(Vec2 ball_to, PitchDims pitch) {
    const Vec2 goal = attacked_goal_center(pitch);
    return std::hypot(ball_to.x - goal.x, ball_to.y - goal.y) <= kTargetZoneRadius;
}

PitchScene mirror_scene(const PitchScene& scene, FlipAxis axis) {
    PitchScene out = scene;
    const double length = scene.pitch.length_m;
    const double width = scene.pitch.width_m;
    auto mirror = [&](Vec2 v) {
        return axis == FlipAxis::horizontal ? Vec2{length - v.x, v.y} : Vec2{v.x, width - v.y};
    };
    auto mirror_vel = [&](Vec2 v) { return axis == FlipAxis::horizontal ? Vec2{-v.x, v.y} : Vec2{v.x, -v.y}; };
    out.ball_from = mirror(scene.ball_from);
    out.ball_to = mirror(scene.ball_to);
    for (auto& pl : out.players) {
        pl.pos = mirror(pl.pos);
        pl.vel = mirror_vel(pl.vel);
    }
    return out;
}

PitchScene canonicalize_attack(const PitchScene& scene, bool attack_toward_positive_x) {
    if (attack_toward_positive_x) return scene;
    return mirror_scene(mirror_scene(scene, FlipAxis::horizontal), FlipAxis::vertical);
}

std::vector<std::size_t> teammates_of_passer(const PitchScene& scene) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scene.players.size(); ++i)
        if (i != scene.passer_index && scene.players[i].team == Team::offense) out.push_back(i);
    return out;
}

json scene_to_json(const PitchScene& scene) {
    json players = json::array();
    for (const auto& pl : scene.players) {
        players.push_back({{"team", pl.team == Team::offense ? "offense" : "defense"},
                           {"pos", vec_to_json(pl.pos)},
                           {"vel", vec_to_json(pl.vel)}});
    }
    return {{"pitch", {{"length_m", scene.pitch.length_m}, {"width_m", scene.pitch.width_m}}},
            {"attack_direction", "positive_x"},
            {"ball_from", vec_to_json(scene.ball_from)},
            {"ball_to", vec_to_json(scene.ball_to)},
            {"passer_index", scene.passer_index},
            {"players", std::move(players)}};
}

PitchScene scene_from_json(const json& j) {
    if (!j.is_object()) throw InvalidInput("scene", "expected a JSON object");
    PitchScene scene;
    if (j.contains("pitch")) {
        const auto& p = j.at("pitch");
        if (!p.is_object()) throw InvalidInput("pitch", "expected an object");
        if (p.contains("length_m")) {
            if (!p.at("length_m").is_number()) throw InvalidInput("pitch.length_m", "expected a number");
            scene.pitch.length_m = p.at("length_m").get<double>();
        }
        if (p.contains("width_m")) {
            if (!p.at("width_m").is_number()) throw InvalidInput("pitch.width_m", "expected a number");
            scene.pitch.width_m = p.at("width_m").get<double>();
        }
    }
    scene.ball_from = vec_from_json(require(j, "ball_from", ""), "ball_from");
    scene.ball_to = vec_from_json(require(j, "ball_to", ""), "ball_to");
    const auto& pi = require(j, "passer_index", "");
    if (!pi.is_number_integer() || pi.get<long long>() < 0) throw InvalidInput("passer_index", "expected a non-negative integer");
    scene.passer_index = pi.get<std::size_t>();

    const auto& players = require(j, "players", "");
    if (!players.is_array()) throw InvalidInput("players", "expected an array");
    for (std::size_t i = 0; i < players.size(); ++i) {
        const std::string path = "players[" + std::to_string(i) + "].";
        const auto& pj = players[i];
        PlayerState pl;
        const auto& team = require(pj, "team", path);
        if (team == "offense") pl.team = Team::offense;
        else if (team == "defense") pl.team = Team::defense;
        else throw InvalidInput(path + "team", "expected \"offense\" or \"defense\"");
        pl.pos = vec_from_json(require(pj, "pos", path), path + "pos");
        pl.vel = pj.contains("vel") ? vec_from_json(pj.at("vel"), path + "vel") : Vec2{};
        scene.players.push_back(pl);
    }

    bool toward_positive = true;
    if (j.contains("attack_direction")) {
        const auto& dir = j.at("attack_direction");
        if (dir == "negative_x") toward_positive = false;
        else if (dir != "positive_x") throw InvalidInput("attack_direction", "expected \"positive_x\" or \"negative_x\"");
    }
    validate_scene(scene);
    return canonicalize_attack(scene, toward_positive);
}

}  // namespace passcam
