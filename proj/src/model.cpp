#include "passcam/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Core>

#include "passcam/error.hpp"
#include "passcam/parallel.hpp"
#include "passcam/rng.hpp"

namespace passcam {

using nlohmann::json;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::RowVectorXd;
using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

const char* outcome_name(Outcome o) { return o == Outcome::success ? "success" : "failure"; }

Outcome outcome_from_name(std::string_view name) {
    if (name == "success") return Outcome::success;
    if (name == "failure") return Outcome::failure;
    throw InvalidInput("class", "expected \"success\" or \"failure\"");
}

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig cfg;
    cfg.input_px = 224;
    cfg.stage_dims = {96, 192, 384, 768};
    cfg.stage_depths = {3, 3, 9, 3};
    return cfg;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig cfg;
    cfg.input_px = 16;
    cfg.stage_dims = {4, 8};
    cfg.stage_depths = {1, 1};
    return cfg;
}

void ModelConfig::validate() const {
    if (input_px <= 0 || in_channels <= 0 || stem_patch <= 0) throw ConfigError("model: sizes must be positive");
    if (stage_dims.empty() || stage_dims.size() != stage_depths.size())
        throw ConfigError("model: stage_dims and stage_depths must be non-empty and equal length");
    for (int d : stage_dims)
        if (d <= 0) throw ConfigError("model: stage widths must be positive");
    for (int d : stage_depths)
        if (d < 0) throw ConfigError("model: stage depths must be non-negative");
    if (dw_kernel <= 0 || dw_kernel % 2 == 0) throw ConfigError("model: depthwise kernel must be odd and positive");
    if (mlp_in <= 0 || mlp_hidden <= 0) throw ConfigError("model: MLP sizes must be positive");
    if (num_classes != kNumClasses) throw ConfigError("model: exactly two classes are supported");
    if (!(ln_eps > 0.0)) throw ConfigError("model: layer-norm epsilon must be positive");
    const long divisor = static_cast<long>(stem_patch) << (stage_dims.size() - 1);
    if (input_px % divisor != 0)
        throw ConfigError("model: input_px must be divisible by stem_patch * 2^(stages-1) = " + std::to_string(divisor));
}

int ModelConfig::feature_map_side() const {
    return input_px / (stem_patch << (stage_dims.size() - 1));
}

json model_config_to_json(const ModelConfig& cfg) {
    return {{"input_px", cfg.input_px},
            {"in_channels", cfg.in_channels},
            {"stem_patch", cfg.stem_patch},
            {"stage_dims", cfg.stage_dims},
            {"stage_depths", cfg.stage_depths},
            {"dw_kernel", cfg.dw_kernel},
            {"mlp_in", cfg.mlp_in},
            {"mlp_hidden", cfg.mlp_hidden},
            {"num_classes", cfg.num_classes},
            {"image_only", cfg.image_only},
            {"mlp_activation", cfg.mlp_activation == Activation::gelu ? "gelu" : "identity"},
            {"ln_eps", cfg.ln_eps}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    try {
        cfg.input_px = j.at("input_px").get<int>();
        cfg.in_channels = j.value("in_channels", 3);
        cfg.stem_patch = j.at("stem_patch").get<int>();
        cfg.stage_dims = j.at("stage_dims").get<std::vector<int>>();
        cfg.stage_depths = j.at("stage_depths").get<std::vector<int>>();
        cfg.dw_kernel = j.at("dw_kernel").get<int>();
        cfg.mlp_in = j.at("mlp_in").get<int>();
        cfg.mlp_hidden = j.at("mlp_hidden").get<int>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.image_only = j.at("image_only").get<bool>();
        const auto act = j.value("mlp_activation", std::string("gelu"));
        if (act == "gelu") cfg.mlp_activation = Activation::gelu;
        else if (act == "identity") cfg.mlp_activation = Activation::identity;
        else throw ConfigError("model: unknown mlp_activation " + act);
        cfg.ln_eps = j.value("ln_eps", 1e-6);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------- layout

namespace {

std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s) + "."; }
std::string block_prefix(std::size_t s, int b) { return stage_prefix(s) + "block" + std::to_string(b) + "."; }

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& cfg) {
    cfg.validate();
    const int k = cfg.dw_kernel;
    const int c0 = cfg.stage_dims[0];
    add("stem.conv.weight", {cfg.stem_patch * cfg.stem_patch * cfg.in_channels, c0}, ParamKind::weight);
    add("stem.conv.bias", {c0}, ParamKind::bias);
    add("stem.norm.scale", {c0}, ParamKind::norm_scale);
    add("stem.norm.shift", {c0}, ParamKind::norm_shift);
    for (std::size_t s = 0; s < cfg.stage_dims.size(); ++s) {
        const int c = cfg.stage_dims[s];
        if (s > 0) {
            const int cp = cfg.stage_dims[s - 1];
            add(stage_prefix(s) + "down.norm.scale", {cp}, ParamKind::norm_scale);
            add(stage_prefix(s) + "down.norm.shift", {cp}, ParamKind::norm_shift);
            add(stage_prefix(s) + "down.conv.weight", {2 * 2 * cp, c}, ParamKind::weight);
            add(stage_prefix(s) + "down.conv.bias", {c}, ParamKind::bias);
        }
        for (int b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string p = block_prefix(s, b);
            add(p + "dwconv.weight", {k * k, c}, ParamKind::weight);
            add(p + "dwconv.bias", {c}, ParamKind::bias);
            add(p + "norm.scale", {c}, ParamKind::norm_scale);
            add(p + "norm.shift", {c}, ParamKind::norm_shift);
            add(p + "expand.weight", {c, 4 * c}, ParamKind::weight);
            add(p + "expand.bias", {4 * c}, ParamKind::bias);
            add(p + "project.weight", {4 * c, c}, ParamKind::weight);
            add(p + "project.bias", {c}, ParamKind::bias);
        }
    }
    add("head.norm.scale", {cfg.conv_dim()}, ParamKind::norm_scale);
    add("head.norm.shift", {cfg.conv_dim()}, ParamKind::norm_shift);
    if (!cfg.image_only) {
        add("mlp.weight", {cfg.mlp_in, cfg.mlp_hidden}, ParamKind::weight);
        add("mlp.bias", {cfg.mlp_hidden}, ParamKind::bias);
    }
    add("fusion.weight", {cfg.fused_dim(), cfg.num_classes}, ParamKind::weight);
    add("fusion.bias", {cfg.num_classes}, ParamKind::bias);
}

std::size_t ParamLayout::add(std::string name, std::vector<int> shape, ParamKind kind) {
    std::size_t size = 1;
    for (int d : shape) size *= static_cast<std::size_t>(d);
    slots_.push_back({std::move(name), std::move(shape), total_, size, kind});
    total_ += size;
    return slots_.size() - 1;
}

std::size_t ParamLayout::index(std::string_view name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
        if (slots_[i].name == name) return i;
    throw ConfigError("no parameter tensor named " + std::string(name));
}

const TensorSlot& ParamLayout::slot(std::string_view name) const { return slots_[index(name)]; }

ModelParams::ModelParams(ModelConfig cfg)
    : config_(std::move(cfg)), layout_(std::make_shared<const ParamLayout>(config_)), values_(layout_->total(), 0.0) {}

std::span<double> ModelParams::tensor(std::string_view name) {
    const auto& s = layout_->slot(name);
    return std::span(values_).subspan(s.offset, s.size);
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
    const auto& s = layout_->slot(name);
    return std::span(values_).subspan(s.offset, s.size);
}

bool ModelParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams params(cfg);
    Rng rng(seed);
    for (const auto& slot : params.layout().slots()) {
        auto t = params.values().subspan(slot.offset, slot.size);
        switch (slot.kind) {
            case ParamKind::weight:
                for (double& v : t) v = rng.truncated_normal(0.02);
                break;
            case ParamKind::norm_scale:
                std::fill(t.begin(), t.end(), 1.0);
                break;
            case ParamKind::bias:
            case ParamKind::norm_shift:
                std::fill(t.begin(), t.end(), 0.0);
                break;
        }
    }
    return params;
}

// ---------------------------------------------------------------- layers

namespace detail {

/// Spatial activation: rows are positions (row-major over h, w), columns channels.
struct Act {
    int h = 0;
    int w = 0;
    Mat m;
};

struct PatchCache {
    int in_h = 0, in_w = 0, in_c = 0, k = 0;
    Mat cols;
};

struct NormCache {
    Mat xhat;
    Eigen::VectorXd inv_std;
};

struct BlockCache {
    Act input;
    NormCache norm;
    Mat normed;
    Mat pre_act;
    Mat act;
};

struct StageCache {
    NormCache down_norm;
    PatchCache down_conv;
    std::vector<BlockCache> blocks;
};

struct ActivationCache {
    int image_px = 0;
    PatchCache stem;
    NormCache stem_norm;
    std::vector<StageCache> stages;
    int last_h = 0, last_w = 0;
    NormCache head_norm;
    Vec features;
    Vec mlp_pre;
    Vec fused;
};

}  // namespace detail

namespace {

using detail::Act;
using detail::ActivationCache;
using detail::BlockCache;
using detail::NormCache;
using detail::PatchCache;
using detail::StageCache;

constexpr double kInvSqrt2 = 0.7071067811865476;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// Non-overlapping k x k patches flattened as (dy, dx, c) rows, times the weight.
Act patch_conv_forward(const Act& in, int k, std::span<const double> weight, std::span<const double> bias,
                       PatchCache* cache) {
    const int c_in = static_cast<int>(in.m.cols());
    const int oh = in.h / k;
    const int ow = in.w / k;
    Mat cols(oh * ow, k * k * c_in);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    const int src = (oy * k + dy) * in.w + (ox * k + dx);
                    cols.row(oy * ow + ox).segment((dy * k + dx) * c_in, c_in) = in.m.row(src);
                }
    const int c_out = static_cast<int>(bias.size());
    ConstMatMap W(weight.data(), k * k * c_in, c_out);
    ConstVecMap b(bias.data(), c_out);
    Act out{oh, ow, Mat(oh * ow, c_out)};
    out.m.noalias() = cols * W;
    out.m.rowwise() += b;
    if (cache) {
        cache->in_h = in.h;
        cache->in_w = in.w;
        cache->in_c = c_in;
        cache->k = k;
        cache->cols = std::move(cols);
    }
    return out;
}

Mat patch_conv_backward(const PatchCache& cache, const Mat& d_out, std::span<const double> weight,
                        std::span<double> d_weight, std::span<double> d_bias) {
    const int k = cache.k;
    const int c_in = cache.in_c;
    const int c_out = static_cast<int>(d_out.cols());
    ConstMatMap W(weight.data(), k * k * c_in, c_out);
    MatMap dW(d_weight.data(), k * k * c_in, c_out);
    VecMap db(d_bias.data(), c_out);
    dW.noalias() += cache.cols.transpose() * d_out;
    db += d_out.colwise().sum();
    const Mat d_cols = d_out * W.transpose();
    const int ow = cache.in_w / k;
    Mat d_in(cache.in_h * cache.in_w, c_in);
    for (int r = 0; r < d_cols.rows(); ++r) {
        const int oy = r / ow;
        const int ox = r % ow;
        for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
                d_in.row((oy * k + dy) * cache.in_w + (ox * k + dx)) = d_cols.row(r).segment((dy * k + dx) * c_in, c_in);
    }
    return d_in;
}

/// Layer norm over the channel axis of each row.
Mat norm_forward(const Mat& x, std::span<const double> scale, std::span<const double> shift, double eps,
                 NormCache* cache) {
    const auto n = x.rows();
    const auto c = x.cols();
    Mat xhat(n, c);
    Eigen::VectorXd inv(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().mean();
        inv(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x.row(r).array() - mean) * inv(r);
    }
    ConstVecMap g(scale.data(), c);
    ConstVecMap b(shift.data(), c);
    Mat y = xhat.array().rowwise() * g.array();
    y.rowwise() += b;
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv);
    }
    return y;
}

Mat norm_backward(const NormCache& cache, const Mat& d_y, std::span<const double> scale, std::span<double> d_scale,
                  std::span<double> d_shift) {
    const auto c = d_y.cols();
    ConstVecMap g(scale.data(), c);
    VecMap dg(d_scale.data(), c);
    VecMap db(d_shift.data(), c);
    dg += (d_y.array() * cache.xhat.array()).colwise().sum().matrix();
    db += d_y.colwise().sum();
    Mat d_xhat = d_y.array().rowwise() * g.array();
    Mat d_x(d_y.rows(), c);
    for (Eigen::Index r = 0; r < d_y.rows(); ++r) {
        const double mean_d = d_xhat.row(r).mean();
        const double mean_dx = d_xhat.row(r).dot(cache.xhat.row(r)) / static_cast<double>(c);
        d_x.row(r) = cache.inv_std(r) * (d_xhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
    }
    return d_x;
}

/// Same-padded depthwise k x k convolution.
Mat depthwise_forward(const Act& in, int k, std::span<const double> weight, std::span<const double> bias) {
    const int c = static_cast<int>(in.m.cols());
    const int pad = k / 2;
    Mat out(in.m.rows(), c);
    ConstVecMap b(bias.data(), c);
    for (int oy = 0; oy < in.h; ++oy)
        for (int ox = 0; ox < in.w; ++ox) {
            auto o = out.row(oy * in.w + ox);
            o = b;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= in.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= in.w) continue;
                    ConstVecMap w(weight.data() + static_cast<std::size_t>(ky * k + kx) * c, c);
                    o.array() += w.array() * in.m.row(iy * in.w + ix).array();
                }
            }
        }
    return out;
}

Mat depthwise_backward(const Act& in, int k, const Mat& d_out, std::span<const double> weight,
                       std::span<double> d_weight, std::span<double> d_bias) {
    const int c = static_cast<int>(in.m.cols());
    const int pad = k / 2;
    VecMap db(d_bias.data(), c);
    db += d_out.colwise().sum();
    Mat d_in = Mat::Zero(in.m.rows(), c);
    for (int oy = 0; oy < in.h; ++oy)
        for (int ox = 0; ox < in.w; ++ox) {
            const auto g = d_out.row(oy * in.w + ox);
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= in.h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= in.w) continue;
                    const std::size_t off = static_cast<std::size_t>(ky * k + kx) * c;
                    ConstVecMap w(weight.data() + off, c);
                    VecMap dw(d_weight.data() + off, c);
                    const int src = iy * in.w + ix;
                    dw.array() += g.array() * in.m.row(src).array();
                    d_in.row(src).array() += g.array() * w.array();
                }
            }
        }
    return d_in;
}

/// Resolves slot offsets once per call so the hot loops index by position.
class Slots {
public:
    Slots(const ModelParams& p, std::span<const double> values) : layout_(p.layout()), values_(values) {}
    std::span<const double> operator()(const std::string& name) const {
        const auto& s = layout_.slot(name);
        return values_.subspan(s.offset, s.size);
    }

private:
    const ParamLayout& layout_;
    std::span<const double> values_;
};

class GradSlots {
public:
    GradSlots(const ModelParams& p, std::span<double> values) : layout_(p.layout()), values_(values) {}
    std::span<double> operator()(const std::string& name) const {
        const auto& s = layout_.slot(name);
        return values_.subspan(s.offset, s.size);
    }

private:
    const ParamLayout& layout_;
    std::span<double> values_;
};

void check_inputs(const ModelConfig& cfg, std::span<const double> image, std::span<const double> features) {
    const std::size_t expected = static_cast<std::size_t>(cfg.input_px) * cfg.input_px * cfg.in_channels;
    if (image.size() != expected)
        throw InvalidInput("image", "expected " + std::to_string(expected) + " values, got " + std::to_string(image.size()));
    if (!std::all_of(image.begin(), image.end(), [](double v) { return std::isfinite(v); }))
        throw InvalidInput("image", "non-finite pixel value");
    if (cfg.image_only) return;
    if (features.size() != static_cast<std::size_t>(cfg.mlp_in))
        throw InvalidInput("features", "expected " + std::to_string(cfg.mlp_in) + " values, got " +
                                           std::to_string(features.size()));
    if (!std::all_of(features.begin(), features.end(), [](double v) { return std::isfinite(v); }))
        throw InvalidInput("features", "non-finite feature value");
}

ForwardTrace run_forward(const ModelParams& params, std::span<const double> image, std::span<const double> features) {
    const ModelConfig& cfg = params.config();
    check_inputs(cfg, image, features);
    const Slots P(params, params.values());
    auto cache = std::make_shared<ActivationCache>();
    cache->image_px = cfg.input_px;

    Act x{cfg.input_px, cfg.input_px, ConstMatMap(image.data(), cfg.input_px * cfg.input_px, cfg.in_channels)};
    x = patch_conv_forward(x, cfg.stem_patch, P("stem.conv.weight"), P("stem.conv.bias"), &cache->stem);
    x.m = norm_forward(x.m, P("stem.norm.scale"), P("stem.norm.shift"), cfg.ln_eps, &cache->stem_norm);

    cache->stages.resize(cfg.stage_dims.size());
    for (std::size_t s = 0; s < cfg.stage_dims.size(); ++s) {
        StageCache& sc = cache->stages[s];
        if (s > 0) {
            const std::string p = stage_prefix(s) + "down.";
            x.m = norm_forward(x.m, P(p + "norm.scale"), P(p + "norm.shift"), cfg.ln_eps, &sc.down_norm);
            x = patch_conv_forward(x, 2, P(p + "conv.weight"), P(p + "conv.bias"), &sc.down_conv);
        }
        sc.blocks.resize(cfg.stage_depths[s]);
        for (int b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string p = block_prefix(s, b);
            BlockCache& bc = sc.blocks[b];
            const Mat dw = depthwise_forward(x, cfg.dw_kernel, P(p + "dwconv.weight"), P(p + "dwconv.bias"));
            bc.normed = norm_forward(dw, P(p + "norm.scale"), P(p + "norm.shift"), cfg.ln_eps, &bc.norm);
            const int c = static_cast<int>(x.m.cols());
            ConstMatMap W1(P(p + "expand.weight").data(), c, 4 * c);
            ConstVecMap b1(P(p + "expand.bias").data(), 4 * c);
            ConstMatMap W2(P(p + "project.weight").data(), 4 * c, c);
            ConstVecMap b2(P(p + "project.bias").data(), c);
            bc.pre_act.noalias() = bc.normed * W1;
            bc.pre_act.rowwise() += b1;
            bc.act = bc.pre_act.unaryExpr(&gelu);
            Mat out = x.m;
            out.noalias() += bc.act * W2;
            out.rowwise() += b2;
            bc.input = std::move(x);
            x = Act{bc.input.h, bc.input.w, std::move(out)};
        }
    }

    ForwardTrace trace;
    cache->last_h = x.h;
    cache->last_w = x.w;
    const int k = static_cast<int>(x.m.cols());
    trace.last_map = FeatureMap{x.h, x.w, k, std::vector<double>(x.m.data(), x.m.data() + x.m.size())};

    const Mat pooled = x.m.colwise().mean();
    const Mat conv_vec = norm_forward(pooled, P("head.norm.scale"), P("head.norm.shift"), cfg.ln_eps, &cache->head_norm);
    trace.conv_features.assign(conv_vec.data(), conv_vec.data() + conv_vec.size());

    Vec fused(cfg.fused_dim());
    fused.head(k) = conv_vec.row(0);
    if (!cfg.image_only) {
        cache->features = ConstVecMap(features.data(), cfg.mlp_in);
        ConstMatMap Wm(P("mlp.weight").data(), cfg.mlp_in, cfg.mlp_hidden);
        ConstVecMap bm(P("mlp.bias").data(), cfg.mlp_hidden);
        cache->mlp_pre = cache->features * Wm + bm;
        Vec hidden = cfg.mlp_activation == Activation::gelu ? Vec(cache->mlp_pre.unaryExpr(&gelu)) : cache->mlp_pre;
        trace.stats_features.assign(hidden.data(), hidden.data() + hidden.size());
        fused.tail(cfg.mlp_hidden) = hidden;
    }
    ConstMatMap Wf(P("fusion.weight").data(), cfg.fused_dim(), cfg.num_classes);
    ConstVecMap bf(P("fusion.bias").data(), cfg.num_classes);
    const Vec logits = fused * Wf + bf;
    cache->fused = std::move(fused);

    trace.logits.assign(logits.data(), logits.data() + logits.size());
    const double mx = logits.maxCoeff();
    trace.probabilities.resize(cfg.num_classes);
    double z = 0.0;
    for (int c = 0; c < cfg.num_classes; ++c) z += (trace.probabilities[c] = std::exp(logits(c) - mx));
    for (double& p : trace.probabilities) p /= z;
    trace.cache = std::move(cache);
    return trace;
}

struct InputGradBuffers {
    std::vector<double>* pixels = nullptr;
    std::vector<double>* features = nullptr;
    FeatureMap* feature_map = nullptr;
};

/// Reverse pass from d loss / d logits. Parameter gradients are accumulated
/// into `d_params`; input gradients are written when requested.
void run_backward(const ModelParams& params, const ForwardTrace& trace, std::span<const double> d_logits,
                  std::span<double> d_params, InputGradBuffers inputs) {
    const ModelConfig& cfg = params.config();
    const ActivationCache& cache = *trace.cache;
    const Slots P(params, params.values());
    const GradSlots G(params, d_params);
    const int k = cfg.conv_dim();

    const ConstVecMap dy(d_logits.data(), cfg.num_classes);
    ConstMatMap Wf(P("fusion.weight").data(), cfg.fused_dim(), cfg.num_classes);
    MatMap dWf(G("fusion.weight").data(), cfg.fused_dim(), cfg.num_classes);
    VecMap dbf(G("fusion.bias").data(), cfg.num_classes);
    dWf.noalias() += cache.fused.transpose() * dy;
    dbf += dy;
    const Vec d_fused = dy * Wf.transpose();

    if (!cfg.image_only) {
        Vec d_pre = d_fused.tail(cfg.mlp_hidden);
        if (cfg.mlp_activation == Activation::gelu) d_pre.array() *= cache.mlp_pre.unaryExpr(&gelu_grad).array();
        ConstMatMap Wm(P("mlp.weight").data(), cfg.mlp_in, cfg.mlp_hidden);
        MatMap dWm(G("mlp.weight").data(), cfg.mlp_in, cfg.mlp_hidden);
        VecMap dbm(G("mlp.bias").data(), cfg.mlp_hidden);
        dWm.noalias() += cache.features.transpose() * d_pre;
        dbm += d_pre;
        if (inputs.features) {
            const Vec dv = d_pre * Wm.transpose();
            inputs.features->assign(dv.data(), dv.data() + dv.size());
        }
    } else if (inputs.features) {
        inputs.features->assign(static_cast<std::size_t>(cfg.mlp_in), 0.0);
    }

    const Mat d_conv_vec = d_fused.head(k);
    const Mat d_pooled =
        norm_backward(cache.head_norm, d_conv_vec, P("head.norm.scale"), G("head.norm.scale"), G("head.norm.shift"));
    const int positions = cache.last_h * cache.last_w;
    Mat d_x = d_pooled.replicate(positions, 1) / static_cast<double>(positions);
    if (inputs.feature_map)
        *inputs.feature_map = FeatureMap{cache.last_h, cache.last_w, k, std::vector<double>(d_x.data(), d_x.data() + d_x.size())};

    for (std::size_t s = cfg.stage_dims.size(); s-- > 0;) {
        const StageCache& sc = cache.stages[s];
        for (int b = cfg.stage_depths[s]; b-- > 0;) {
            const std::string p = block_prefix(s, b);
            const BlockCache& bc = sc.blocks[b];
            const int c = static_cast<int>(bc.input.m.cols());
            ConstMatMap W1(P(p + "expand.weight").data(), c, 4 * c);
            ConstMatMap W2(P(p + "project.weight").data(), 4 * c, c);
            MatMap dW1(G(p + "expand.weight").data(), c, 4 * c);
            VecMap db1(G(p + "expand.bias").data(), 4 * c);
            MatMap dW2(G(p + "project.weight").data(), 4 * c, c);
            VecMap db2(G(p + "project.bias").data(), c);

            dW2.noalias() += bc.act.transpose() * d_x;
            db2 += d_x.colwise().sum();
            Mat d_pre = d_x * W2.transpose();
            d_pre.array() *= bc.pre_act.unaryExpr(&gelu_grad).array();
            dW1.noalias() += bc.normed.transpose() * d_pre;
            db1 += d_pre.colwise().sum();
            const Mat d_normed = d_pre * W1.transpose();
            const Mat d_dw = norm_backward(bc.norm, d_normed, P(p + "norm.scale"), G(p + "norm.scale"), G(p + "norm.shift"));
            d_x += depthwise_backward(bc.input, cfg.dw_kernel, d_dw, P(p + "dwconv.weight"), G(p + "dwconv.weight"),
                                      G(p + "dwconv.bias"));
        }
        if (s > 0) {
            const std::string p = stage_prefix(s) + "down.";
            const Mat d_normed = patch_conv_backward(sc.down_conv, d_x, P(p + "conv.weight"), G(p + "conv.weight"),
                                                     G(p + "conv.bias"));
            d_x = norm_backward(sc.down_norm, d_normed, P(p + "norm.scale"), G(p + "norm.scale"), G(p + "norm.shift"));
        }
    }
    const Mat d_stem = norm_backward(cache.stem_norm, d_x, P("stem.norm.scale"), G("stem.norm.scale"), G("stem.norm.shift"));
    const Mat d_image = patch_conv_backward(cache.stem, d_stem, P("stem.conv.weight"), G("stem.conv.weight"), G("stem.conv.bias"));
    if (inputs.pixels) inputs.pixels->assign(d_image.data(), d_image.data() + d_image.size());
}

double cross_entropy(const ForwardTrace& trace, int label) {
    const auto& y = trace.logits;
    const double mx = *std::max_element(y.begin(), y.end());
    double z = 0.0;
    for (double v : y) z += std::exp(v - mx);
    return mx + std::log(z) - y[label];
}

void check_label(int label, std::size_t index) {
    if (label < 0 || label >= kNumClasses)
        throw InvalidInput("batch[" + std::to_string(index) + "].label", "label must be 0 (success) or 1 (failure)");
}

// Fixed chunking makes the reduction order independent of the thread count.
constexpr std::size_t kGradChunks = 8;

}  // namespace

ForwardTrace forward(const ModelParams& params, std::span<const double> image, std::span<const double> features) {
    return run_forward(params, image, features);
}

LossAndGrads loss_and_param_grads(const ModelParams& params, std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidInput("batch", "empty batch");
    const std::size_t chunks = std::min(kGradChunks, batch.size());
    std::vector<std::vector<double>> chunk_grads(chunks, std::vector<double>(params.count(), 0.0));
    std::vector<double> chunk_loss(chunks, 0.0);

    parallel_for(chunks, [&](std::size_t ci) {
        const std::size_t begin = batch.size() * ci / chunks;
        const std::size_t end = batch.size() * (ci + 1) / chunks;
        for (std::size_t i = begin; i < end; ++i) {
            const Sample& s = batch[i];
            check_label(s.label, i);
            const ForwardTrace trace = run_forward(params, s.image, s.features);
            const double loss = cross_entropy(trace, s.label);
            if (!std::isfinite(loss)) throw NumericError("non-finite loss at batch example " + std::to_string(i));
            chunk_loss[ci] += loss;
            std::vector<double> d_logits = trace.probabilities;
            d_logits[s.label] -= 1.0;
            run_backward(params, trace, d_logits, chunk_grads[ci], {});
        }
    });

    LossAndGrads out{0.0, std::move(chunk_grads[0])};
    out.loss = chunk_loss[0];
    for (std::size_t ci = 1; ci < chunks; ++ci) {
        out.loss += chunk_loss[ci];
        for (std::size_t j = 0; j < out.grads.size(); ++j) out.grads[j] += chunk_grads[ci][j];
    }
    return out;
}

double batch_loss(const ModelParams& params, std::span<const Sample> batch) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        check_label(batch[i].label, i);
        total += cross_entropy(run_forward(params, batch[i].image, batch[i].features), batch[i].label);
    }
    return total;
}

InputGrads input_grads(const ModelParams& params, std::span<const double> image, std::span<const double> features,
                       int target_class) {
    if (target_class < 0 || target_class >= params.config().num_classes)
        throw InvalidInput("class", "target class out of range");
    InputGrads out;
    out.trace = run_forward(params, image, features);
    std::vector<double> d_logits(params.config().num_classes, 0.0);
    d_logits[target_class] = 1.0;
    std::vector<double> scratch(params.count(), 0.0);
    run_backward(params, out.trace, d_logits, scratch, {&out.pixels, &out.features, &out.feature_map});
    return out;
}

Outcome label_from_probabilities(std::span<const double> probabilities) {
    return probabilities[static_cast<int>(Outcome::success)] > probabilities[static_cast<int>(Outcome::failure)]
               ? Outcome::success
               : Outcome::failure;
}

Prediction predict(const ModelParams& params, std::span<const double> image, std::span<const double> features) {
    const ForwardTrace trace = run_forward(params, image, features);
    Prediction p;
    std::copy_n(trace.probabilities.begin(), kNumClasses, p.probabilities.begin());
    p.label = label_from_probabilities(trace.probabilities);
    return p;
}

}  // namespace passcam
