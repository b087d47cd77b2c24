#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "passcam/error.hpp"
#include "passcam/hash.hpp"
#include "passcam/raster.hpp"
#include "passcam/rng.hpp"
#include "passcam/scene.hpp"
#include "passcam/synth.hpp"

using namespace passcam;

namespace {

PitchScene empty_scene(Vec2 from, Vec2 to) {
    PitchScene s;
    s.ball_from = from;
    s.ball_to = to;
    return s;
}

RasterConfig bare(int side) {
    RasterConfig cfg;
    cfg.width_px = cfg.height_px = side;
    return cfg;
}

// Documented pixel mapping, written out directly.
PixelPos mapped(Vec2 p, PitchDims pitch, int n) {
    const double xn = 2.0 * p.x / pitch.length_m - 1.0;
    const double yn = 2.0 * p.y / pitch.width_m - 1.0;
    return {static_cast<int>(std::lround((1.0 - yn) / 2.0 * (n - 1))),
            static_cast<int>(std::lround((xn + 1.0) / 2.0 * (n - 1)))};
}

std::vector<PitchScene> random_scenes(int n, std::uint64_t seed) {
    const SynthConfig cfg = SynthConfig::for_mode(SynthMode::mixed);
    std::vector<PitchScene> out;
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
        out.push_back(sample_scene(cfg, rng));
    }
    return out;
}

}  // namespace

TEST_CASE("normalize_position maps the pitch onto [-1,1] per axis") {
    const PitchDims pitch;
    const Vec2 corner = normalize_position({0, 0}, pitch);
    CHECK(corner.x == -1.0);
    CHECK(corner.y == -1.0);
    const Vec2 centre = normalize_position({52.5, 34}, pitch);
    CHECK(centre.x == 0.0);
    CHECK(centre.y == 0.0);
    const Vec2 p = normalize_position({78.75, 17}, pitch);
    CHECK(p.x == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.y == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK_THROWS_AS(normalize_position({-0.1, 10}, pitch), InvalidInput);
    CHECK_THROWS_AS(normalize_position({10, 68.5}, pitch), InvalidInput);
}

TEST_CASE("target zone is the 30 m disc around the attacked goal centre") {
    const PitchDims pitch;
    CHECK(in_target_zone({105, 34}, pitch));
    CHECK_FALSE(in_target_zone({0, 34}, pitch));
    CHECK(in_target_zone({80, 34}, pitch));
    CHECK(in_target_zone({75, 34}, pitch));
    CHECK_FALSE(in_target_zone({74.99, 34}, pitch));
    CHECK_FALSE(in_target_zone({80, 0}, pitch));  // distance sqrt(25^2 + 34^2) > 30
}

TEST_CASE("pixel mapping follows the documented rounding formula") {
    const PitchDims pitch;
    Rng rng(3);
    for (int n : {64, 224, 65}) {
        RasterConfig cfg = bare(n);
        for (int i = 0; i < 2000; ++i) {
            const Vec2 p{rng.uniform(0, pitch.length_m), rng.uniform(0, pitch.width_m)};
            const PixelPos got = to_pixel(p, pitch, cfg);
            const PixelPos want = mapped(p, pitch, n);
            // Formula and implementation may differ only where the exact value
            // is a .5 tie that floating point resolves differently.
            CHECK(std::abs(got.row - want.row) <= 1);
            CHECK(std::abs(got.col - want.col) <= 1);
            if (got != want) {
                const double xn = (2.0 * p.x / pitch.length_m) / 2.0 * (n - 1);
                CHECK(std::abs(std::abs(xn - std::floor(xn)) - 0.5) < 1e-6);
            }
        }
    }
    CHECK(to_pixel({0, 0}, pitch, bare(64)) == PixelPos{63, 0});
    CHECK(to_pixel({105, 68}, pitch, bare(64)) == PixelPos{0, 63});
}

TEST_CASE("degenerate scene renders a single ball disk at the centre") {
    RasterConfig cfg = RasterConfig::desk();
    const RasterImage img = rasterize_scene(empty_scene({52.5, 34}, {52.5, 34}), cfg);
    const PixelPos c = mapped({52.5, 34}, PitchDims{}, 64);
    const int r = cfg.marker_radius_px;
    for (int row = 0; row < 64; ++row)
        for (int col = 0; col < 64; ++col) {
            const bool in_disk = (row - c.row) * (row - c.row) + (col - c.col) * (col - c.col) <= r * r;
            CHECK(img.at(row, col) == (in_disk ? cfg.ball_color : kWhite));
        }
}

TEST_CASE("dashed pass line and velocity segment follow the dash pattern") {
    RasterConfig cfg = bare(64);
    cfg.marker_radius_px = 0;
    cfg.dash_on_px = 2;
    cfg.dash_off_px = 3;
    const PitchDims pitch;
    // Horizontal pass along the row through the centre, from col 10 to col 40.
    auto x_of_col = [&](int col) { return (col / 63.0) * pitch.length_m; };
    const double y_mid = 34.0 + 0.25 * 68.0 / 63.0;  // row 31 exactly off a tie
    PitchScene s = empty_scene({x_of_col(10), y_mid}, {x_of_col(40), y_mid});
    const int row = to_pixel(s.ball_from, pitch, cfg).row;
    const RasterImage img = rasterize_scene(s, cfg);
    for (int col = 0; col < 64; ++col) {
        const int i = col - 10;
        const bool dash = i >= 0 && i <= 30 && i % 5 < 2;
        const bool ball = col == 10 || col == 40;
        CHECK(img.at(row, col) == ((dash || ball) ? cfg.line_color : kWhite));
    }
    CHECK(img.count_non_white() == 13);  // dash offsets 0,1,5,6,...,25,26,30; balls sit on dash pixels

    // One player, 4 m/s toward +x, arrow 1.5 px/(m/s) -> 6 px segment.
    cfg.arrow_px_per_mps = 1.5;
    PitchScene p = empty_scene({x_of_col(5), 60}, {x_of_col(5), 60});
    p.players.push_back({Team::offense, {x_of_col(30), y_mid}, {4.0, 0.0}});
    p.players.push_back({Team::defense, {x_of_col(50), 10}, {0.0, 0.0}});
    const RasterImage pi = rasterize_scene(p, cfg);
    for (int col = 30; col <= 36; ++col) CHECK(pi.at(row, col) == cfg.offense_color);
    CHECK(pi.at(row, 37) == kWhite);
    CHECK(pi.at(row - 1, 33) == kWhite);
}

TEST_CASE("renders are sparse and never empty") {
    const RasterConfig cfg = RasterConfig::desk();
    for (const auto& s : random_scenes(500, 11)) {
        const RasterImage img = rasterize_scene(s, cfg);
        const std::size_t n = img.count_non_white();
        CHECK(n > 0);
        CHECK(static_cast<double>(n) < 0.3 * 64 * 64);
    }
}

TEST_CASE("background pixels are exactly white and the float view is bytes / 255") {
    const auto scenes = random_scenes(5, 12);
    const RasterImage img = rasterize_scene(scenes[0], RasterConfig::desk());
    const auto fv = img.float_view();
    const auto bytes = img.bytes();
    REQUIRE(fv.size() == bytes.size());
    for (std::size_t i = 0; i < fv.size(); ++i) CHECK(fv[i] == bytes[i] / 255.0);
    const RasterConfig cfg = RasterConfig::desk();
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const Rgb px = img.at(r, c);
            const bool known = px == kWhite || px == cfg.offense_color || px == cfg.defense_color ||
                               px == cfg.ball_color || px == cfg.line_color;
            CHECK(known);
        }
}

TEST_CASE("flip is an involution and the two axes commute") {
    const RasterImage white(64, 64);
    CHECK(flip_image(white, FlipAxis::horizontal) == white);
    CHECK(flip_image(white, FlipAxis::vertical) == white);
    for (const auto& s : random_scenes(50, 13)) {
        const RasterImage img = rasterize_scene(s, RasterConfig::desk());
        for (FlipAxis a : {FlipAxis::horizontal, FlipAxis::vertical}) {
            CHECK(flip_image(flip_image(img, a), a) == img);
            CHECK(flip_image(img, a).count_non_white() == img.count_non_white());
        }
        CHECK(flip_image(flip_image(img, FlipAxis::horizontal), FlipAxis::vertical) ==
              flip_image(flip_image(img, FlipAxis::vertical), FlipAxis::horizontal));
    }
    const RasterImage img = rasterize_scene(random_scenes(1, 14)[0], RasterConfig::desk());
    const RasterImage h = flip_image(img, FlipAxis::horizontal);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) CHECK(h.at(r, c) == img.at(r, 63 - c));
}

TEST_CASE("rasterize(mirror(scene)) == flip(rasterize(scene)) on odd-sized images") {
    for (int side : {65, 33}) {
        RasterConfig cfg = bare(side);
        cfg.marker_radius_px = 2;
        for (const auto& s : random_scenes(300, 15)) {
            const RasterImage img = rasterize_scene(s, cfg);
            CHECK(rasterize_scene(mirror_scene(s, FlipAxis::horizontal), cfg) ==
                  flip_image(img, FlipAxis::horizontal));
            CHECK(rasterize_scene(mirror_scene(s, FlipAxis::vertical), cfg) == flip_image(img, FlipAxis::vertical));
        }
    }
}

TEST_CASE("rendering is deterministic and matches the frozen golden hash") {
    Rng rng(42);
    const PitchScene s = sample_scene(SynthConfig::for_mode(SynthMode::mixed), rng);
    const RasterImage a = rasterize_scene(s, RasterConfig::desk());
    const RasterImage b = rasterize_scene(s, RasterConfig::desk());
    CHECK(a == b);
    CHECK(sha256_hex(a.bytes()) == "60a3d5e7296bf12f5867cc2af5995b4d34af50b61176a5394081508fb990cd2c");
}

TEST_CASE("PNG round trip is lossless") {
    const RasterImage img = rasterize_scene(random_scenes(1, 16)[0], RasterConfig::desk());
    const auto path = std::filesystem::temp_directory_path() / "passcam_png_roundtrip.png";
    write_png(path, img);
    CHECK(read_png(path) == img);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_png(path), FormatError);
}

TEST_CASE("mirror and canonicalize transform coordinates and velocities") {
    const PitchDims pitch;
    PitchScene s = empty_scene({30, 10}, {90, 40});
    s.players.push_back({Team::offense, {30, 10}, {1, 2}});
    s.players.push_back({Team::defense, {95, 30}, {-3, 0.5}});
    const PitchScene h = mirror_scene(s, FlipAxis::horizontal);
    CHECK(h.ball_from == Vec2{75, 10});
    CHECK(h.players[1].vel == Vec2{3, 0.5});
    const PitchScene v = mirror_scene(s, FlipAxis::vertical);
    CHECK(v.ball_to == Vec2{90, 28});
    CHECK(v.players[0].vel == Vec2{1, -2});
    CHECK(mirror_scene(h, FlipAxis::horizontal) == s);

    const PitchScene c = canonicalize_attack(s, false);
    CHECK(c.ball_to == Vec2{pitch.length_m - 90, pitch.width_m - 40});
    CHECK(c.players[0].vel == Vec2{-1, -2});
    CHECK(canonicalize_attack(s, true) == s);
}

TEST_CASE("scene validation names the offending field") {
    PitchScene s = empty_scene({30, 10}, {90, 40});
    s.players.push_back({Team::offense, {30, 10}, {1, 2}});
    s.players.push_back({Team::defense, {95, 30}, {0, 0}});
    CHECK_NOTHROW(validate_scene(s));

    auto field_of = [](const PitchScene& bad) {
        try {
            validate_scene(bad);
        } catch (const InvalidInput& e) {
            return e.field();
        }
        return std::string("<none>");
    };
    PitchScene fast = s;
    fast.players[1].vel = {13.1, 0};
    CHECK(field_of(fast) == "players[1].vel");
    PitchScene out = s;
    out.players[0].pos = {106, 10};
    CHECK(field_of(out) == "players[0].pos");
    PitchScene wrong_passer = s;
    wrong_passer.passer_index = 1;
    CHECK(field_of(wrong_passer) == "passer_index");
    PitchScene crowded = s;
    for (int i = 0; i < 11; ++i) crowded.players.push_back({Team::defense, {60, 30}, {0, 0}});
    CHECK(field_of(crowded) == "players");
    PitchScene no_defense = s;
    no_defense.players.pop_back();
    CHECK(field_of(no_defense) == "players");
    PitchScene nan_ball = s;
    nan_ball.ball_to.x = std::nan("");
    CHECK(field_of(nan_ball) == "ball_to");
}

TEST_CASE("scene JSON round trip and parse errors") {
    for (const auto& s : random_scenes(20, 17)) CHECK(scene_from_json(scene_to_json(s)) == s);

    auto j = scene_to_json(random_scenes(1, 18)[0]);
    j["attack_direction"] = "negative_x";
    const PitchScene flipped = scene_from_json(j);
    CHECK(flipped == canonicalize_attack(scene_from_json(scene_to_json(random_scenes(1, 18)[0])), false));

    auto missing = scene_to_json(random_scenes(1, 19)[0]);
    missing.erase("ball_to");
    CHECK_THROWS_AS(scene_from_json(missing), InvalidInput);
    auto bad_team = scene_to_json(random_scenes(1, 19)[0]);
    bad_team["players"][0]["team"] = "referee";
    CHECK_THROWS_AS(scene_from_json(bad_team), InvalidInput);
}

TEST_CASE("raster config JSON round trip and validation") {
    CHECK(raster_config_from_json(raster_config_to_json(RasterConfig::paper())) == RasterConfig::paper());
    RasterConfig white = RasterConfig::desk();
    white.line_color = kWhite;
    CHECK_THROWS_AS(white.validate(), ConfigError);
    RasterConfig rect = RasterConfig::desk();
    rect.height_px = 32;
    CHECK_THROWS_AS(rect.validate(), ConfigError);
}
