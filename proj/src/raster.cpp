#include "passcam/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <png.h>

#include "passcam/error.hpp"

namespace passcam {

using nlohmann::json;

RasterConfig RasterConfig::desk() { return RasterConfig{}; }

RasterConfig RasterConfig::paper() {
    RasterConfig cfg;
    cfg.width_px = 224;
    cfg.height_px = 224;
    cfg.marker_radius_px = 5;
    cfg.arrow_px_per_mps = 4.0;
    cfg.dash_on_px = 4;
    cfg.dash_off_px = 3;
    return cfg;
}

void RasterConfig::validate() const {
    if (width_px <= 0 || height_px <= 0) throw ConfigError("raster: image size must be positive");
    if (width_px != height_px) throw ConfigError("raster: images must be square");
    if (marker_radius_px < 0) throw ConfigError("raster: marker radius must be non-negative");
    if (!(arrow_px_per_mps >= 0.0) || !std::isfinite(arrow_px_per_mps))
        throw ConfigError("raster: arrow scale must be non-negative");
    if (dash_on_px <= 0 || dash_off_px < 0) throw ConfigError("raster: invalid dash pattern");
    for (const Rgb& c : {offense_color, defense_color, ball_color, line_color})
        if (c == kWhite) throw ConfigError("raster: drawing colours must differ from the white background");
}

namespace {

json rgb_to_json(Rgb c) { return json::array({c.r, c.g, c.b}); }

Rgb rgb_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("raster: colour must be [r,g,b]");
    auto channel = [](const json& v) {
        const int x = v.get<int>();
        if (x < 0 || x > 255) throw ConfigError("raster: colour channel out of range");
        return static_cast<std::uint8_t>(x);
    };
    return {channel(j[0]), channel(j[1]), channel(j[2])};
}

// Integer num/den rounded half away from zero, den > 0.
long div_round(long num, long den) {
    const long q = (2 * std::labs(num) + den) / (2 * den);
    return num < 0 ? -q : q;
}

void fill_disk(RasterImage& img, PixelPos c, int radius, Rgb color) {
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius && img.contains(c.row + dr, c.col + dc))
                img.set(c.row + dr, c.col + dc, color);
}

// DDA stepping with offsets measured from the start pixel; dash phase follows
// the step index. dash_off == 0 draws a solid segment.
void draw_segment(RasterImage& img, PixelPos from, int d_row, int d_col, Rgb color, int dash_on, int dash_off) {
    const long steps = std::max(std::labs(d_row), std::labs(d_col));
    const long period = dash_on + dash_off;
    for (long i = 0; i <= steps; ++i) {
        if (dash_off > 0 && (i % period) >= dash_on) continue;
        const long orow = steps == 0 ? 0 : div_round(d_row * i, steps);
        const long ocol = steps == 0 ? 0 : div_round(d_col * i, steps);
        const int r = from.row + static_cast<int>(orow);
        const int c = from.col + static_cast<int>(ocol);
        if (img.contains(r, c)) img.set(r, c, color);
    }
}

}  // namespace

json raster_config_to_json(const RasterConfig& cfg) {
    return {{"width_px", cfg.width_px},
            {"height_px", cfg.height_px},
            {"offense_color", rgb_to_json(cfg.offense_color)},
            {"defense_color", rgb_to_json(cfg.defense_color)},
            {"ball_color", rgb_to_json(cfg.ball_color)},
            {"line_color", rgb_to_json(cfg.line_color)},
            {"marker_radius_px", cfg.marker_radius_px},
            {"arrow_px_per_mps", cfg.arrow_px_per_mps},
            {"dash_on_px", cfg.dash_on_px},
            {"dash_off_px", cfg.dash_off_px}};
}

RasterConfig raster_config_from_json(const json& j) {
    RasterConfig cfg;
    try {
        cfg.width_px = j.value("width_px", cfg.width_px);
        cfg.height_px = j.value("height_px", cfg.height_px);
        if (j.contains("offense_color")) cfg.offense_color = rgb_from_json(j.at("offense_color"));
        if (j.contains("defense_color")) cfg.defense_color = rgb_from_json(j.at("defense_color"));
        if (j.contains("ball_color")) cfg.ball_color = rgb_from_json(j.at("ball_color"));
        if (j.contains("line_color")) cfg.line_color = rgb_from_json(j.at("line_color"));
        cfg.marker_radius_px = j.value("marker_radius_px", cfg.marker_radius_px);
        cfg.arrow_px_per_mps = j.value("arrow_px_per_mps", cfg.arrow_px_per_mps);
        cfg.dash_on_px = j.value("dash_on_px", cfg.dash_on_px);
        cfg.dash_off_px = j.value("dash_off_px", cfg.dash_off_px);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("raster: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RasterImage::RasterImage(int height, int width, Rgb fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width * 3) {
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
        pixels_[i] = fill.r;
        pixels_[i + 1] = fill.g;
        pixels_[i + 2] = fill.b;
    }
}

Rgb RasterImage::at(int row, int col) const {
    const auto i = (static_cast<std::size_t>(row) * width_ + col) * 3;
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void RasterImage::set(int row, int col, Rgb c) {
    const auto i = (static_cast<std::size_t>(row) * width_ + col) * 3;
    pixels_[i] = c.r;
    pixels_[i + 1] = c.g;
    pixels_[i + 2] = c.b;
}

std::vector<double> RasterImage::float_view() const {
    std::vector<double> out(pixels_.size());
    std::transform(pixels_.begin(), pixels_.end(), out.begin(), [](std::uint8_t v) { return v / 255.0; });
    return out;
}

std::size_t RasterImage::count_non_white() const {
    std::size_t n = 0;
    for (int r = 0; r < height_; ++r)
        for (int c = 0; c < width_; ++c)
            if (at(r, c) != kWhite) ++n;
    return n;
}

long round_half_away(double v) { return std::lround(v); }

int axis_to_pixel(double t, int n) {
    long p;
    if (n % 2 == 1) {
        const long mid = (n - 1) / 2;
        p = mid + round_half_away(t * static_cast<double>(mid));
    } else {
        p = round_half_away((t + 1.0) / 2.0 * static_cast<double>(n - 1));
    }
    return static_cast<int>(std::clamp<long>(p, 0, n - 1));
}

PixelPos to_pixel(Vec2 pos_m, PitchDims pitch, const RasterConfig& cfg) {
    const Vec2 t = normalize_position(pos_m, pitch);
    return {axis_to_pixel(-t.y, cfg.height_px), axis_to_pixel(t.x, cfg.width_px)};
}

RasterImage rasterize_scene(const PitchScene& scene, const RasterConfig& cfg) {
    cfg.validate();
    validate_scene(scene);
    RasterImage img(cfg.height_px, cfg.width_px);

    const PixelPos from = to_pixel(scene.ball_from, scene.pitch, cfg);
    const PixelPos to = to_pixel(scene.ball_to, scene.pitch, cfg);
    draw_segment(img, from, to.row - from.row, to.col - from.col, cfg.line_color, cfg.dash_on_px, cfg.dash_off_px);

    auto team_color = [&](Team t) { return t == Team::offense ? cfg.offense_color : cfg.defense_color; };
    for (const auto& pl : scene.players) {
        const PixelPos c = to_pixel(pl.pos, scene.pitch, cfg);
        const int d_col = static_cast<int>(round_half_away(pl.vel.x * cfg.arrow_px_per_mps));
        const int d_row = -static_cast<int>(round_half_away(pl.vel.y * cfg.arrow_px_per_mps));
        draw_segment(img, c, d_row, d_col, team_color(pl.team), 1, 0);
    }
    for (const auto& pl : scene.players)
        fill_disk(img, to_pixel(pl.pos, scene.pitch, cfg), cfg.marker_radius_px, team_color(pl.team));

    fill_disk(img, from, cfg.marker_radius_px, cfg.ball_color);
    fill_disk(img, to, cfg.marker_radius_px, cfg.ball_color);
    return img;
}

RasterImage flip_image(const RasterImage& img, FlipAxis axis) {
    RasterImage out(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
            const int sr = axis == FlipAxis::vertical ? img.height() - 1 - r : r;
            const int sc = axis == FlipAxis::horizontal ? img.width() - 1 - c : c;
            out.set(r, c, img.at(sr, sc));
        }
    return out;
}

void write_png(const std::filesystem::path& path, const RasterImage& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.bytes().data(), 0, nullptr))
        throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
}

RasterImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    RasterImage img(static_cast<int>(image.height), static_cast<int>(image.width));
    if (!png_image_finish_read(&image, nullptr, img.bytes().data(), 0, nullptr))
        throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
    return img;
}

}  // namespace passcam
