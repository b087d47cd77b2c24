#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "passcam/scene.hpp"

namespace passcam {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kWhite{255, 255, 255};

struct RasterConfig {
    int width_px = 64;
    int height_px = 64;
    Rgb offense_color{255, 0, 0};
    Rgb defense_color{0, 0, 255};
    Rgb ball_color{0, 0, 0};
    Rgb line_color{0, 0, 0};
    int marker_radius_px = 3;
    double arrow_px_per_mps = 1.0;
    int dash_on_px = 2;
    int dash_off_px = 2;

    static RasterConfig desk();
    static RasterConfig paper();
    void validate() const;

    friend bool operator==(const RasterConfig&, const RasterConfig&) = default;
};

nlohmann::json raster_config_to_json(const RasterConfig& cfg);
RasterConfig raster_config_from_json(const nlohmann::json& j);

struct PixelPos {
    int row = 0;
    int col = 0;

    friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

/// Row-major H x W x 3 8-bit image.
class RasterImage {
public:
    RasterImage() = default;
    RasterImage(int height, int width, Rgb fill = kWhite);

    int height() const { return height_; }
    int width() const { return width_; }
    std::span<const std::uint8_t> bytes() const { return pixels_; }
    std::span<std::uint8_t> bytes() { return pixels_; }

    Rgb at(int row, int col) const;
    void set(int row, int col, Rgb c);
    bool contains(int row, int col) const { return row >= 0 && row < height_ && col >= 0 && col < width_; }

    /// Model input: every channel value divided by 255, same HWC order.
    std::vector<double> float_view() const;
    std::size_t count_non_white() const;

    friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> pixels_;
};

/// Rounds half away from zero. Odd-symmetric, so mirrored geometry rounds to
/// mirrored pixels.
long round_half_away(double v);

/// Pixel index for a normalized coordinate t in [-1,1] along an axis of n pixels.
/// Odd n uses centre-relative rounding so the mapping is exactly symmetric.
int axis_to_pixel(double t, int n);

PixelPos to_pixel(Vec2 pos_m, PitchDims pitch, const RasterConfig& cfg);

/// Deterministic render: dashed pass line, velocity segments, player disks,
/// then the ball departure/arrival disks, each drawn over the previous.
RasterImage rasterize_scene(const PitchScene& scene, const RasterConfig& cfg);

RasterImage flip_image(const RasterImage& img, FlipAxis axis);

void write_png(const std::filesystem::path& path, const RasterImage& img);
RasterImage read_png(const std::filesystem::path& path);

}  // namespace passcam
