#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "passcam/model.hpp"
#include "passcam/raster.hpp"
#include "passcam/stats.hpp"

namespace passcam {

enum class ContributionMode {
    signed_sum,  // default: plain sums of the gradients
    magnitude,   // diagnostics only: sums of absolute values
};

struct ModalityContributions {
    double image = 0.0;  // C_T
    double stats = 0.0;  // C_S
};

ModalityContributions modality_contributions(std::span<const double> pixel_grads, std::span<const double> feature_grads,
                                             ContributionMode mode = ContributionMode::signed_sum);

/// (x - min) / (max - min). All-equal input maps to 0.5 and sets `degenerate`.
std::vector<double> minmax_standardize(std::span<const double> values, bool* degenerate = nullptr);

struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

struct GradCamResult {
    std::vector<double> channel_weights;  // alpha_k: spatial mean of d y^c / d A^k
    Heatmap map;                          // ReLU(sum_k alpha_k A^k), u x v
};

/// Throws InvalidInput when the activation and gradient maps differ in shape.
GradCamResult gradcam(const FeatureMap& activations, const FeatureMap& gradients);

/// Bilinear resize with corner-aligned grids (source cell (i, j) lands exactly on
/// target pixel (i (H-1)/(u-1), j (W-1)/(v-1))), then divided by the maximum.
/// An all-zero map stays all-zero.
Heatmap upsample_heatmap(const Heatmap& map, int height, int width);

struct FeatureContribution {
    std::size_t index = 0;
    std::string name;
    double value = 0.0;
};

/// Features ordered by decreasing |gradient|, ties by index.
std::vector<FeatureContribution> feature_attribution(std::span<const double> feature_grads);

/// Per-feature mean over many passes.
std::vector<double> mean_feature_gradients(std::span<const std::vector<double>> per_pass);

struct ExplanationReport {
    int target_class = 0;
    Outcome predicted = Outcome::failure;
    std::array<double, kNumClasses> probabilities{};
    double ct_raw = 0.0;
    double cs_raw = 0.0;
    std::optional<double> ct_std;  // only set when standardized over a collection
    std::optional<double> cs_std;
    std::vector<double> feature_grads;
    std::vector<double> channel_weights;
    Heatmap gradcam;
    Heatmap gradcam_upsampled;
};

/// Both explanation stages for one pass. Without `target_class` the predicted
/// class is explained.
ExplanationReport explain_pass(const ModelParams& params, std::span<const double> image,
                               std::span<const double> features, std::optional<int> target_class = std::nullopt);

/// Fills ct_std / cs_std by min-max scaling over the whole collection; returns
/// false when either population was degenerate (all values equal).
bool standardize_contributions(std::vector<ExplanationReport>& reports);

inline constexpr int kReportSchemaVersion = 1;

nlohmann::json report_to_json(const ExplanationReport& report);
nlohmann::json feature_bars_json(const ExplanationReport& report);

/// Heatmap (already in [0,1], same size as the image) blended at 50% opacity.
RasterImage overlay_heatmap(const RasterImage& image, const Heatmap& heat);

}  // namespace passcam
