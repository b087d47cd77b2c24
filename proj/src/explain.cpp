#include "passcam/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "passcam/error.hpp"

namespace passcam {

using nlohmann::json;

ModalityContributions modality_contributions(std::span<const double> pixel_grads, std::span<const double> feature_grads,
                                             ContributionMode mode) {
    auto sum = [mode](std::span<const double> g) {
        double s = 0.0;
        for (double v : g) s += mode == ContributionMode::magnitude ? std::abs(v) : v;
        return s;
    };
    return {sum(pixel_grads), sum(feature_grads)};
}

std::vector<double> minmax_standardize(std::span<const double> values, bool* degenerate) {
    if (values.empty()) throw InvalidInput("values", "nothing to standardize");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double min = *lo;
    const double max = *hi;
    std::vector<double> out(values.size());
    const bool flat = !(max > min);
    if (degenerate) *degenerate = flat;
    if (flat) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == min) out[i] = 0.0;
        else if (values[i] == max) out[i] = 1.0;
        else out[i] = std::clamp((values[i] - min) / (max - min), 0.0, 1.0);
    }
    return out;
}

GradCamResult gradcam(const FeatureMap& activations, const FeatureMap& gradients) {
    if (activations.height != gradients.height || activations.width != gradients.width ||
        activations.channels != gradients.channels || activations.data.size() != gradients.data.size())
        throw InvalidInput("feature_map", "activation and gradient maps differ in shape");
    const int u = activations.height;
    const int v = activations.width;
    const int K = activations.channels;
    const double Z = static_cast<double>(u) * v;

    GradCamResult out;
    out.channel_weights.assign(K, 0.0);
    for (int i = 0; i < u; ++i)
        for (int j = 0; j < v; ++j)
            for (int k = 0; k < K; ++k) out.channel_weights[k] += gradients.at(i, j, k);
    for (double& a : out.channel_weights) a /= Z;

    out.map = Heatmap{u, v, std::vector<double>(static_cast<std::size_t>(u) * v, 0.0)};
    for (int i = 0; i < u; ++i)
        for (int j = 0; j < v; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += out.channel_weights[k] * activations.at(i, j, k);
            out.map.values[static_cast<std::size_t>(i) * v + j] = std::max(0.0, s);
        }
    return out;
}

Heatmap upsample_heatmap(const Heatmap& map, int height, int width) {
    if (map.height <= 0 || map.width <= 0) throw InvalidInput("heatmap", "empty map");
    Heatmap out{height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0)};
    auto source_coord = [](int i, int n_out, int n_in) {
        return n_out == 1 || n_in == 1 ? 0.0 : static_cast<double>(i) * (n_in - 1) / (n_out - 1);
    };
    for (int r = 0; r < height; ++r) {
        const double sy = source_coord(r, height, map.height);
        const int y0 = std::min(static_cast<int>(sy), map.height - 1);
        const int y1 = std::min(y0 + 1, map.height - 1);
        const double fy = sy - y0;
        for (int c = 0; c < width; ++c) {
            const double sx = source_coord(c, width, map.width);
            const int x0 = std::min(static_cast<int>(sx), map.width - 1);
            const int x1 = std::min(x0 + 1, map.width - 1);
            const double fx = sx - x0;
            const double top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
            const double bottom = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
            out.values[static_cast<std::size_t>(r) * width + c] = top * (1.0 - fy) + bottom * fy;
        }
    }
    const double mx = *std::max_element(out.values.begin(), out.values.end());
    if (mx > 0.0)
        for (double& v : out.values) v /= mx;
    return out;
}

std::vector<FeatureContribution> feature_attribution(std::span<const double> feature_grads) {
    const auto& names = feature_names();
    std::vector<FeatureContribution> out;
    for (std::size_t i = 0; i < feature_grads.size(); ++i)
        out.push_back({i, i < names.size() ? names[i] : "feature_" + std::to_string(i), feature_grads[i]});
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.value) > std::abs(b.value); });
    return out;
}

std::vector<double> mean_feature_gradients(std::span<const std::vector<double>> per_pass) {
    if (per_pass.empty()) throw InvalidInput("passes", "no passes to aggregate");
    std::vector<double> mean(per_pass.front().size(), 0.0);
    for (const auto& g : per_pass) {
        if (g.size() != mean.size()) throw InvalidInput("passes", "feature gradient lengths differ");
        for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
    }
    for (double& m : mean) m /= static_cast<double>(per_pass.size());
    return mean;
}

ExplanationReport explain_pass(const ModelParams& params, std::span<const double> image,
                               std::span<const double> features, std::optional<int> target_class) {
    ExplanationReport r;
    const ForwardTrace probe = forward(params, image, features);
    r.predicted = label_from_probabilities(probe.probabilities);
    std::copy_n(probe.probabilities.begin(), kNumClasses, r.probabilities.begin());
    r.target_class = target_class.value_or(static_cast<int>(r.predicted));

    const InputGrads g = input_grads(params, image, features, r.target_class);
    const ModalityContributions mc = modality_contributions(g.pixels, g.features);
    r.ct_raw = mc.image;
    r.cs_raw = mc.stats;
    r.feature_grads = g.features;
    GradCamResult cam = gradcam(g.trace.last_map, g.feature_map);
    r.channel_weights = std::move(cam.channel_weights);
    r.gradcam = std::move(cam.map);
    const int side = params.config().input_px;
    r.gradcam_upsampled = upsample_heatmap(r.gradcam, side, side);
    return r;
}

bool standardize_contributions(std::vector<ExplanationReport>& reports) {
    if (reports.empty()) return true;
    std::vector<double> ct, cs;
    for (const auto& r : reports) {
        ct.push_back(r.ct_raw);
        cs.push_back(r.cs_raw);
    }
    bool flat_t = false, flat_s = false;
    const auto ct_std = minmax_standardize(ct, &flat_t);
    const auto cs_std = minmax_standardize(cs, &flat_s);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        reports[i].ct_std = ct_std[i];
        reports[i].cs_std = cs_std[i];
    }
    return !flat_t && !flat_s;
}

namespace {

json heatmap_json(const Heatmap& h) {
    json rows = json::array();
    for (int r = 0; r < h.height; ++r) {
        json row = json::array();
        for (int c = 0; c < h.width; ++c) row.push_back(h.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json report_to_json(const ExplanationReport& r) {
    return {{"v", kReportSchemaVersion},
            {"target_class", outcome_name(static_cast<Outcome>(r.target_class))},
            {"predicted", outcome_name(r.predicted)},
            {"probabilities", {{"success", r.probabilities[0]}, {"failure", r.probabilities[1]}}},
            {"ct_raw", r.ct_raw},
            {"cs_raw", r.cs_raw},
            {"ct_std", optional_json(r.ct_std)},
            {"cs_std", optional_json(r.cs_std)},
            {"feature_names", feature_names()},
            {"feature_grads", r.feature_grads},
            {"channel_weights", r.channel_weights},
            {"gradcam", heatmap_json(r.gradcam)},
            {"gradcam_upsampled", heatmap_json(r.gradcam_upsampled)}};
}

json feature_bars_json(const ExplanationReport& r) {
    json bars = json::array();
    for (const auto& fc : feature_attribution(r.feature_grads))
        bars.push_back({{"index", fc.index}, {"name", fc.name}, {"gradient", fc.value}, {"magnitude", std::abs(fc.value)}});
    return {{"v", kReportSchemaVersion}, {"target_class", outcome_name(static_cast<Outcome>(r.target_class))}, {"bars", bars}};
}

RasterImage overlay_heatmap(const RasterImage& image, const Heatmap& heat) {
    if (heat.height != image.height() || heat.width != image.width())
        throw InvalidInput("heatmap", "overlay size differs from the image");
    // Blue -> green -> red ramp.
    auto ramp = [](double t) {
        t = std::clamp(t, 0.0, 1.0);
        const double r = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
        const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
        const double b = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
        return std::array<double, 3>{255.0 * r, 255.0 * g, 255.0 * b};
    };
    RasterImage out = image;
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            const Rgb base = image.at(r, c);
            const auto hc = ramp(heat.at(r, c));
            auto mix = [](std::uint8_t a, double b) {
                return static_cast<std::uint8_t>(std::lround(0.5 * a + 0.5 * b));
            };
            out.set(r, c, {mix(base.r, hc[0]), mix(base.g, hc[1]), mix(base.b, hc[2])});
        }
    return out;
}

}  // namespace passcam
