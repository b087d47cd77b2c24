#include "passcam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "passcam/error.hpp"

namespace passcam {

using nlohmann::json;

const char* synth_mode_name(SynthMode m) {
    switch (m) {
        case SynthMode::mixed: return "mixed";
        case SynthMode::spatial_only: return "spatial_only";
        case SynthMode::stats_only: return "stats_only";
    }
    return "mixed";
}

SynthMode synth_mode_from_name(const std::string& name) {
    if (name == "mixed") return SynthMode::mixed;
    if (name == "spatial_only") return SynthMode::spatial_only;
    if (name == "stats_only") return SynthMode::stats_only;
    throw ConfigError("unknown synthetic mode " + name);
}

GroundTruth GroundTruth::defaults(SynthMode mode) {
    GroundTruth gt;
    gt.w_balance = 0.4;
    gt.w_clearance = 0.1;
    gt.w_alignment = 0.3;
    gt.w_skill = 1.0;
    gt.w_distance = -0.02;
    switch (mode) {
        case SynthMode::mixed:
            gt.bias = 0.9037;
            break;
        case SynthMode::spatial_only:
            gt.w_skill = 0.0;
            gt.bias = 0.2922;
            break;
        case SynthMode::stats_only:
            gt.w_balance = gt.w_clearance = gt.w_alignment = gt.w_distance = 0.0;
            gt.bias = 0.0659;
            break;
    }
    return gt;
}

json ground_truth_to_json(const GroundTruth& gt) {
    return {{"w_balance", gt.w_balance},     {"w_clearance", gt.w_clearance}, {"w_alignment", gt.w_alignment}, {"w_skill", gt.w_skill},
            {"w_distance", gt.w_distance},   {"bias", gt.bias},               {"clearance_cap_m", gt.clearance_cap_m}};
}

GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth gt;
    try {
        gt.w_balance = j.at("w_balance").get<double>();
        gt.w_clearance = j.at("w_clearance").get<double>();
        gt.w_alignment = j.at("w_alignment").get<double>();
        gt.w_skill = j.at("w_skill").get<double>();
        gt.w_distance = j.at("w_distance").get<double>();
        gt.bias = j.at("bias").get<double>();
        gt.clearance_cap_m = j.value("clearance_cap_m", 15.0);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ground truth: ") + e.what());
    }
    return gt;
}

double distance_to_segment(Vec2 p, Vec2 a, Vec2 b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

std::size_t intended_receiver(const PitchScene& scene) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i : teammates_of_passer(scene)) {
        const auto& pos = scene.players[i].pos;
        const double d = std::hypot(pos.x - scene.ball_to.x, pos.y - scene.ball_to.y);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

OracleFeatures oracle_features(const PitchScene& scene, double skill, double clearance_cap_m) {
    OracleFeatures f;
    f.skill = skill;
    f.distance = std::hypot(scene.ball_to.x - scene.ball_from.x, scene.ball_to.y - scene.ball_from.y);
    f.clearance = clearance_cap_m;
    for (std::size_t i = 0; i < scene.players.size(); ++i) {
        const auto& pl = scene.players[i];
        if (pl.team == Team::defense) {
            f.clearance = std::min(f.clearance, distance_to_segment(pl.pos, scene.ball_from, scene.ball_to));
            if (in_target_zone(pl.pos, scene.pitch)) f.balance -= 1.0;
        } else if (i != scene.passer_index && in_target_zone(pl.pos, scene.pitch)) {
            f.balance += 1.0;
        }
    }

    const std::size_t r = intended_receiver(scene);
    if (r != std::numeric_limits<std::size_t>::max()) {
        const auto& rec = scene.players[r];
        const double tx = scene.ball_to.x - rec.pos.x;
        const double ty = scene.ball_to.y - rec.pos.y;
        const double tn = std::hypot(tx, ty);
        const double vn = std::hypot(rec.vel.x, rec.vel.y);
        // A receiver standing still, or already at the target, has no direction.
        if (tn > 0.0 && vn > 0.0) f.alignment = (rec.vel.x * tx + rec.vel.y * ty) / (tn * vn);
    }
    return f;
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double oracle_probability(const PitchScene& scene, double skill, const GroundTruth& gt) {
    const OracleFeatures f = oracle_features(scene, skill, gt.clearance_cap_m);
    return logistic(gt.w_balance * f.balance + gt.w_clearance * f.clearance + gt.w_alignment * f.alignment + gt.w_skill * f.skill +
                    gt.w_distance * f.distance + gt.bias);
}

const char* role_name(Role r) {
    switch (r) {
        case Role::defender: return "defender";
        case Role::midfielder: return "midfielder";
        case Role::forward: return "forward";
    }
    return "midfielder";
}

namespace {

struct CategoryProfile {
    double median_count;  // season total
    double base_logit;    // success-rate logit at skill 0
};

// Per role, in category order: all, opposition area, long, through, cross.
std::array<CategoryProfile, kNumPassCategories> profile(Role role) {
    switch (role) {
        case Role::defender:
            return {{{900, 1.7}, {220, 0.8}, {130, 0.2}, {3, -0.6}, {14, -1.1}}};
        case Role::midfielder:
            return {{{1100, 1.6}, {480, 1.0}, {60, 0.1}, {28, -0.4}, {18, -1.0}}};
        case Role::forward:
            return {{{480, 1.3}, {330, 0.9}, {15, 0.0}, {12, -0.5}, {26, -0.9}}};
    }
    return {};
}

constexpr double kRateSkillSlope = 0.8;
constexpr double kRateNoise = 0.3;

Vec2 clip_to_pitch(Vec2 p, PitchDims pitch) {
    return {std::clamp(p.x, 0.0, pitch.length_m), std::clamp(p.y, 0.0, pitch.width_m)};
}

Vec2 sample_velocity(Rng& rng) {
    Vec2 v{rng.normal(0.0, 2.0), rng.normal(0.0, 2.0)};
    const double speed = std::hypot(v.x, v.y);
    if (speed > kMaxPlayerSpeed) {
        v.x *= kMaxPlayerSpeed / speed;
        v.y *= kMaxPlayerSpeed / speed;
    }
    return v;
}

// Uniform over the target zone by rejection from its bounding box.
Vec2 sample_in_zone(PitchDims pitch, Rng& rng) {
    const Vec2 goal = attacked_goal_center(pitch);
    for (;;) {
        const Vec2 p{rng.uniform(goal.x - kTargetZoneRadius, goal.x),
                     rng.uniform(goal.y - kTargetZoneRadius, goal.y + kTargetZoneRadius)};
        if (inside_pitch(p, pitch) && in_target_zone(p, pitch)) return p;
    }
}

}  // namespace

Passer sample_passer(Role role, std::string id, Rng& rng) {
    Passer p;
    p.id = std::move(id);
    p.role = role;
    p.skill = rng.normal();
    const auto prof = profile(role);
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        auto& cat = p.stats.categories[c];
        cat.total = std::lround(prof[c].median_count * std::exp(rng.normal(0.0, 0.4)));
        const double rate = logistic(prof[c].base_logit + kRateSkillSlope * p.skill + rng.normal(0.0, kRateNoise));
        cat.success_rate = cat.total == 0 ? 0.0 : rate;
    }
    // Opposition-area passes are a subset of all passes.
    auto& opp = p.stats[PassCategory::opposition_area];
    opp.total = std::min(opp.total, p.stats[PassCategory::all].total);
    if (opp.total == 0) opp.success_rate = 0.0;
    return p;
}

Passer archetype_passer(Role role) {
    Passer p;
    p.id = std::string("archetype-") + role_name(role);
    p.role = role;
    const auto prof = profile(role);
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        auto& cat = p.stats.categories[c];
        cat.total = std::lround(prof[c].median_count);
        cat.success_rate = cat.total == 0 ? 0.0 : logistic(prof[c].base_logit);
    }
    auto& opp = p.stats[PassCategory::opposition_area];
    opp.total = std::min(opp.total, p.stats[PassCategory::all].total);
    if (opp.total == 0) opp.success_rate = 0.0;
    return p;
}

Role role_from_name(const std::string& name) {
    for (Role r : {Role::defender, Role::midfielder, Role::forward})
        if (name == role_name(r)) return r;
    throw InvalidInput("archetype", "unknown role '" + name + "' (defender, midfielder, forward)");
}

SynthConfig SynthConfig::for_mode(SynthMode mode) {
    SynthConfig cfg;
    cfg.mode = mode;
    cfg.truth = GroundTruth::defaults(mode);
    return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
    return {{"mode", synth_mode_name(cfg.mode)},
            {"ground_truth", ground_truth_to_json(cfg.truth)},
            {"pitch", {{"length_m", cfg.pitch.length_m}, {"width_m", cfg.pitch.width_m}}},
            {"raster", raster_config_to_json(cfg.raster)},
            {"passer_pool", cfg.passer_pool}};
}

SynthConfig synth_config_from_json(const json& j) {
    SynthConfig cfg;
    try {
        cfg.mode = synth_mode_from_name(j.at("mode").get<std::string>());
        cfg.truth = ground_truth_from_json(j.at("ground_truth"));
        cfg.pitch.length_m = j.at("pitch").at("length_m").get<double>();
        cfg.pitch.width_m = j.at("pitch").at("width_m").get<double>();
        cfg.raster = raster_config_from_json(j.at("raster"));
        cfg.passer_pool = j.at("passer_pool").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synthetic config: ") + e.what());
    }
    return cfg;
}

PitchScene sample_scene(const SynthConfig& cfg, Rng& rng) {
    const PitchDims pitch = cfg.pitch;
    const Vec2 goal = attacked_goal_center(pitch);
    PitchScene scene;
    scene.pitch = pitch;

    scene.ball_to = sample_in_zone(pitch, rng);
    // Departure point: 5-35 m back along a mostly forward direction.
    for (;;) {
        const double d = rng.uniform(5.0, 35.0);
        const double theta = rng.uniform(-0.45, 0.45) * std::numbers::pi;
        const Vec2 p{scene.ball_to.x - d * std::cos(theta), scene.ball_to.y - d * std::sin(theta)};
        if (inside_pitch(p, pitch)) {
            scene.ball_from = p;
            break;
        }
    }

    const int n_offense = rng.uniform_int(1, kMaxPlayersPerTeam);
    const int n_defense = rng.uniform_int(1, kMaxPlayersPerTeam);

    scene.passer_index = 0;
    scene.players.push_back({Team::offense, scene.ball_from, sample_velocity(rng)});
    if (n_offense >= 2) {
        const Vec2 near_target{scene.ball_to.x + rng.normal(0.0, 3.0), scene.ball_to.y + rng.normal(0.0, 3.0)};
        scene.players.push_back({Team::offense, clip_to_pitch(near_target, pitch), sample_velocity(rng)});
    }
    for (int i = 2; i < n_offense; ++i) scene.players.push_back({Team::offense, sample_in_zone(pitch, rng), sample_velocity(rng)});

    // Goalkeeper, then outfield defenders spread over the zone; some step into
    // the passing lane.
    const Vec2 keeper{rng.uniform(pitch.length_m - 5.0, pitch.length_m), goal.y + rng.uniform(-4.0, 4.0)};
    scene.players.push_back({Team::defense, clip_to_pitch(keeper, pitch), sample_velocity(rng)});
    for (int i = 1; i < n_defense; ++i) {
        Vec2 p;
        if (rng.bernoulli(0.3)) {
            const double t = rng.uniform(0.2, 0.9);
            const double dx = scene.ball_to.x - scene.ball_from.x;
            const double dy = scene.ball_to.y - scene.ball_from.y;
            const double len = std::max(std::hypot(dx, dy), 1e-9);
            const double off = rng.normal(0.0, 3.0);
            p = {scene.ball_from.x + t * dx - off * dy / len, scene.ball_from.y + t * dy + off * dx / len};
        } else {
            p = sample_in_zone(pitch, rng);
        }
        scene.players.push_back({Team::defense, clip_to_pitch(p, pitch), sample_velocity(rng)});
    }
    validate_scene(scene);
    return scene;
}

Scenario sample_scenario(const SynthConfig& cfg, Rng& rng) {
    Scenario s;
    s.scene = sample_scene(cfg, rng);
    const Role role = static_cast<Role>(rng.uniform_int(0, 2));
    const Passer p = sample_passer(role, "", rng);
    s.stats = p.stats;
    s.skill = p.skill;
    return s;
}

}  // namespace passcam
