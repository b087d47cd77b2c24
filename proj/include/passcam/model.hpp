#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace passcam {

/// Class index convention shared by the model, metrics and reports.
enum class Outcome : int { success = 0, failure = 1 };

inline constexpr int kNumClasses = 2;

const char* outcome_name(Outcome o);
Outcome outcome_from_name(std::string_view name);

enum class Activation { gelu, identity };

struct ModelConfig {
    int input_px = 64;
    int in_channels = 3;
    int stem_patch = 4;
    std::vector<int> stage_dims{16, 32, 64, 128};
    std::vector<int> stage_depths{1, 1, 2, 1};
    int dw_kernel = 7;
    int mlp_in = 15;
    int mlp_hidden = 64;
    int num_classes = kNumClasses;
    bool image_only = false;
    // Hidden-layer nonlinearity of the stats stream. identity exists for
    // analytic test fixtures.
    Activation mlp_activation = Activation::gelu;
    double ln_eps = 1e-6;

    static ModelConfig desk();
    static ModelConfig paper();
    /// 16x16 input, dims [4,8], depths [1,1]; sized for finite-difference checks.
    static ModelConfig tiny();

    void validate() const;
    int conv_dim() const { return stage_dims.back(); }
    int fused_dim() const { return conv_dim() + (image_only ? 0 : mlp_hidden); }
    /// Side length u = v of the last-stage feature map.
    int feature_map_side() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

enum class ParamKind { weight, bias, norm_scale, norm_shift };

struct TensorSlot {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    ParamKind kind = ParamKind::weight;
};

/// Names, shapes and offsets of every learnable tensor inside one flat buffer.
///
/// Weight conventions (row-major):
///   patch conv (stem, downsample)  [k*k*c_in, c_out], rows ordered (dy, dx, c_in)
///   depthwise conv                 [k*k, c], rows ordered (dy, dx)
///   pointwise / linear             [c_in, c_out]
///   fusion head                    [fused_dim, classes]; rows [0, conv_dim) read the image stream
class ParamLayout {
public:
    explicit ParamLayout(const ModelConfig& cfg);

    const std::vector<TensorSlot>& slots() const { return slots_; }
    std::size_t total() const { return total_; }
    const TensorSlot& slot(std::string_view name) const;
    std::size_t index(std::string_view name) const;

private:
    std::size_t add(std::string name, std::vector<int> shape, ParamKind kind);

    std::vector<TensorSlot> slots_;
    std::size_t total_ = 0;
};

class ModelParams {
public:
    /// Zero-filled parameters for `cfg` (layer-norm scales zero as well).
    explicit ModelParams(ModelConfig cfg);

    const ModelConfig& config() const { return config_; }
    const ParamLayout& layout() const { return *layout_; }
    std::size_t count() const { return values_.size(); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> tensor(std::string_view name);
    std::span<const double> tensor(std::string_view name) const;

    bool all_finite() const;

private:
    ModelConfig config_;
    std::shared_ptr<const ParamLayout> layout_;
    std::vector<double> values_;
};

/// Truncated-normal (sigma 0.02) weights, zero biases, unit norm scales.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Channels-last u x v x K activation map.
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    double at(int row, int col, int k) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + k];
    }
};

namespace detail {
struct ActivationCache;
}

struct ForwardTrace {
    std::vector<double> logits;         // pre-softmax y^c
    std::vector<double> probabilities;  // softmax(logits)
    FeatureMap last_map;                // last-stage output before global pooling
    std::vector<double> conv_features;  // image-stream output after the head norm
    std::vector<double> stats_features; // stats-stream output (empty when image_only)
    std::shared_ptr<const detail::ActivationCache> cache;
};

/// `image` is the H x W x 3 float view in [0,1]; `features` the standardized
/// 15-vector (never read when the model is image-only).
ForwardTrace forward(const ModelParams& params, std::span<const double> image, std::span<const double> features);

struct Sample {
    std::span<const double> image;
    std::span<const double> features;
    int label = 0;
};

struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> grads;  // aligned with ModelParams::values()
};

/// Summed cross-entropy over the batch and its exact parameter gradient.
LossAndGrads loss_and_param_grads(const ModelParams& params, std::span<const Sample> batch);

/// Summed cross-entropy only.
double batch_loss(const ModelParams& params, std::span<const Sample> batch);

struct InputGrads {
    std::vector<double> pixels;    // d y^c / d image, H x W x 3
    std::vector<double> features;  // d y^c / d v, 15 (zeros when image_only)
    FeatureMap feature_map;        // d y^c / d A
    ForwardTrace trace;
};

/// Gradients of the pre-softmax logit of `target_class` from one backward pass.
InputGrads input_grads(const ModelParams& params, std::span<const double> image, std::span<const double> features,
                       int target_class);

struct Prediction {
    Outcome label = Outcome::failure;
    std::array<double, kNumClasses> probabilities{};
};

/// Argmax of the softmax; exact ties resolve to failure.
Prediction predict(const ModelParams& params, std::span<const double> image, std::span<const double> features);
Outcome label_from_probabilities(std::span<const double> probabilities);

}  // namespace passcam
