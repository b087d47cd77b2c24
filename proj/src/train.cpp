#include "passcam/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "passcam/error.hpp"
#include "passcam/parallel.hpp"

namespace passcam {

using nlohmann::json;

// ------------------------------------------------------------------ splits

SplitPlan make_folds(std::size_t n, std::uint64_t seed, int k) {
    if (k < 3) throw ConfigError("need at least 3 folds");
    if (n < static_cast<std::size_t>(k)) throw InvalidInput("n", "need at least " + std::to_string(k) + " samples");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed, 0x5eed);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);

    SplitPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.blocks.resize(k);
    for (int b = 0; b < k; ++b) {
        const std::size_t begin = n * b / k;
        const std::size_t end = n * (b + 1) / k;
        plan.blocks[b].assign(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
    }
    return plan;
}

std::vector<std::size_t> SplitPlan::test(int fold) const { return blocks.at(static_cast<std::size_t>(fold)); }

std::vector<std::size_t> SplitPlan::validation(int fold) const {
    return blocks.at(static_cast<std::size_t>((fold + 1) % k));
}

std::vector<std::size_t> SplitPlan::train(int fold) const {
    if (fold < 0 || fold >= k) throw InvalidInput("fold", "fold out of range");
    std::vector<std::size_t> out;
    for (int b = 0; b < k; ++b)
        if (b != fold && b != (fold + 1) % k) out.insert(out.end(), blocks[b].begin(), blocks[b].end());
    return out;
}

json split_plan_to_json(const SplitPlan& plan) { return {{"k", plan.k}, {"seed", plan.seed}, {"blocks", plan.blocks}}; }

// ------------------------------------------------------------------ training

void TrainConfig::validate() const {
    if (batch_size <= 0 || max_epochs <= 0) throw ConfigError("batch size and epochs must be positive");
    if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw ConfigError("learning rate and epsilon must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in (0,1)");
    if (!(flip_horizontal_prob >= 0.0 && flip_horizontal_prob <= 1.0) ||
        !(flip_vertical_prob >= 0.0 && flip_vertical_prob <= 1.0))
        throw ConfigError("flip probabilities must be in [0,1]");
}

json train_config_to_json(const TrainConfig& tc) {
    return {{"batch_size", tc.batch_size}, {"max_epochs", tc.max_epochs},
            {"learning_rate", tc.learning_rate}, {"beta1", tc.beta1},
            {"beta2", tc.beta2}, {"epsilon", tc.epsilon},
            {"flip_horizontal_prob", tc.flip_horizontal_prob}, {"flip_vertical_prob", tc.flip_vertical_prob},
            {"seed", tc.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig tc;
    try {
        tc.batch_size = j.value("batch_size", tc.batch_size);
        tc.max_epochs = j.value("max_epochs", tc.max_epochs);
        tc.learning_rate = j.value("learning_rate", tc.learning_rate);
        tc.beta1 = j.value("beta1", tc.beta1);
        tc.beta2 = j.value("beta2", tc.beta2);
        tc.epsilon = j.value("epsilon", tc.epsilon);
        tc.flip_horizontal_prob = j.value("flip_horizontal_prob", tc.flip_horizontal_prob);
        tc.flip_vertical_prob = j.value("flip_vertical_prob", tc.flip_vertical_prob);
        tc.seed = j.value("seed", tc.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    tc.validate();
    return tc;
}

std::vector<FlipDecision> augment(std::span<RasterImage> images, Rng& rng, double p_horizontal, double p_vertical) {
    std::vector<FlipDecision> applied(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        applied[i].horizontal = rng.bernoulli(p_horizontal);
        applied[i].vertical = rng.bernoulli(p_vertical);
        if (applied[i].horizontal) images[i] = flip_image(images[i], FlipAxis::horizontal);
        if (applied[i].vertical) images[i] = flip_image(images[i], FlipAxis::vertical);
    }
    return applied;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

Standardizer fit_passer_standardizer(const Dataset& ds, std::span<const std::size_t> indices) {
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t i : indices) first_seen.emplace(ds.passes[i].passer_id, i);
    std::vector<FeatureVector> vectors;
    vectors.reserve(first_seen.size());
    for (const auto& [id, i] : first_seen) vectors.push_back(ds.raw_features(i));
    return fit_standardizer(vectors);
}

namespace {

std::vector<double> standardized(const Standardizer& s, const Dataset& ds, std::size_t i) {
    const FeatureVector fv = s.apply(ds.raw_features(i));
    return {fv.v.begin(), fv.v.end()};
}

double accuracy_on(const ModelParams& params, const std::vector<std::vector<double>>& features, const Dataset& ds,
                   std::span<const std::size_t> indices) {
    if (indices.empty()) return 0.0;
    std::vector<char> hit(indices.size(), 0);
    parallel_for(indices.size(), [&](std::size_t j) {
        const std::size_t i = indices[j];
        const auto img = ds.images[i].float_view();
        hit[j] = predict(params, img, features[i]).label == ds.passes[i].label;
    });
    return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(indices.size());
}

}  // namespace

TrainResult train_model(const ModelConfig& model, const Dataset& ds, std::span<const std::size_t> train_idx,
                        std::span<const std::size_t> val_idx, const TrainConfig& tc, const json& metadata) {
    tc.validate();
    model.validate();
    if (train_idx.empty()) throw InvalidInput("train", "empty training split");
    if (ds.images.size() != ds.size()) throw ConfigError("dataset has not been rendered");
    if (ds.config.raster.width_px != model.input_px)
        throw ConfigMismatch("raster width " + std::to_string(ds.config.raster.width_px) +
                             " does not match model input " + std::to_string(model.input_px));

    TrainResult result;
    result.best.raster = ds.config.raster;
    result.best.standardizer = fit_passer_standardizer(ds, train_idx);
    std::vector<std::vector<double>> features(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) features[i] = standardized(result.best.standardizer, ds, i);

    ModelParams params = init_params(model, tc.seed);
    Adam adam(params.count(), tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon);
    Rng rng = Rng::derive(tc.seed, 0x7a1);

    result.best.params = params;
    result.best_validation_accuracy = accuracy_on(params, features, ds, val_idx);
    result.best_epoch = 0;

    std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
    for (int epoch = 1; epoch <= tc.max_epochs && !result.aborted; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
            std::vector<RasterImage> imgs;
            for (std::size_t j = start; j < end; ++j) imgs.push_back(ds.images[order[j]]);
            augment(imgs, rng, tc.flip_horizontal_prob, tc.flip_vertical_prob);
            std::vector<std::vector<double>> floats(imgs.size());
            std::vector<Sample> batch;
            for (std::size_t j = 0; j < imgs.size(); ++j) {
                floats[j] = imgs[j].float_view();
                const std::size_t i = order[start + j];
                batch.push_back({floats[j], features[i], static_cast<int>(ds.passes[i].label)});
            }
            try {
                const LossAndGrads lg = loss_and_param_grads(params, batch);
                if (!std::all_of(lg.grads.begin(), lg.grads.end(), [](double g) { return std::isfinite(g); }))
                    throw NumericError("non-finite gradient");
                adam.step(params.values(), lg.grads);
                if (!params.all_finite()) throw NumericError("non-finite parameters after the Adam step");
                epoch_loss += lg.loss;
                result.step_losses.push_back(lg.loss);
            } catch (const NumericError& e) {
                result.aborted = true;
                char where[96];
                std::snprintf(where, sizeof where, " (epoch %d, step %zu of the epoch; first pass id %zu)", epoch,
                              start / static_cast<std::size_t>(tc.batch_size), ds.passes[order[start]].id);
                result.diagnostic = e.what() + std::string(where);
                break;
            }
        }
        if (result.aborted) break;
        const double val_acc = accuracy_on(params, features, ds, val_idx);
        result.history.push_back({epoch, epoch_loss, val_acc});
        // Epoch 1 always replaces the untrained initialisation.
        if (val_acc > result.best_validation_accuracy || result.best_epoch == 0) {
            result.best.params = params;
            result.best_validation_accuracy = val_acc;
            result.best_epoch = epoch;
        }
    }

    result.best.metadata = metadata;
    result.best.metadata["seed"] = tc.seed;
    result.best.metadata["best_epoch"] = result.best_epoch;
    result.best.metadata["best_validation_accuracy"] = result.best_validation_accuracy;
    result.best.metadata["train_config"] = train_config_to_json(tc);
    result.best.metadata["aborted"] = result.aborted;
    if (result.aborted) result.best.metadata["diagnostic"] = result.diagnostic;
    return result;
}

TrainResult train_fold(const ModelConfig& model, const Dataset& ds, const SplitPlan& plan, int fold,
                       const TrainConfig& tc, const json& metadata) {
    const auto tr = plan.train(fold);
    const auto va = plan.validation(fold);
    json meta = metadata;
    meta["fold"] = fold;
    meta["folds"] = plan.k;
    meta["split_seed"] = plan.seed;
    return train_model(model, ds, tr, va, tc, meta);
}

// ------------------------------------------------------------------ metrics

Metrics metrics_from_counts(const std::array<std::array<long, 2>, 2>& counts) {
    Metrics m;
    m.counts = counts;
    const long tp = counts[0][0], fn = counts[0][1], fp = counts[1][0], tn = counts[1][1];
    m.total = tp + fn + fp + tn;
    if (m.total == 0) throw InvalidInput("predictions", "no predictions to score");
    for (int r = 0; r < 2; ++r) {
        const long row = counts[r][0] + counts[r][1];
        for (int c = 0; c < 2; ++c) m.normalized[r][c] = row == 0 ? 0.0 : static_cast<double>(counts[r][c]) / row;
    }
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.total);
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

Metrics confusion_and_metrics(std::span<const Outcome> predictions, std::span<const Outcome> labels) {
    if (predictions.size() != labels.size()) throw InvalidInput("predictions", "length differs from labels");
    if (predictions.empty()) throw InvalidInput("predictions", "no predictions to score");
    std::array<std::array<long, 2>, 2> counts{};
    for (std::size_t i = 0; i < labels.size(); ++i)
        ++counts[static_cast<int>(labels[i])][static_cast<int>(predictions[i])];
    return metrics_from_counts(counts);
}

json metrics_to_json(const Metrics& m) {
    return {{"confusion", {{"rows", "true class (success, failure)"},
                           {"cols", "predicted class (success, failure)"},
                           {"counts", m.counts},
                           {"row_normalized", m.normalized}}},
            {"total", m.total},
            {"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"positive_class", "success"}};
}

std::string metrics_csv_header() { return "label,total,tp,fn,fp,tn,accuracy,precision,recall,f1"; }

std::string metrics_csv_row(const std::string& label, const Metrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%ld,%ld,%ld,%ld,%ld,%.17g,%.17g,%.17g,%.17g", label.c_str(), m.total,
                  m.counts[0][0], m.counts[0][1], m.counts[1][0], m.counts[1][1], m.accuracy, m.precision, m.recall,
                  m.f1);
    return buf;
}

MetricsSummary summarize(std::span<const Metrics> per_fold) {
    MetricsSummary s;
    s.folds = per_fold.size();
    if (per_fold.empty()) return s;
    auto stat = [&](auto get, double& mean, double& sd) {
        mean = 0.0;
        for (const auto& m : per_fold) mean += get(m);
        mean /= static_cast<double>(per_fold.size());
        double var = 0.0;
        for (const auto& m : per_fold) var += (get(m) - mean) * (get(m) - mean);
        sd = std::sqrt(var / static_cast<double>(per_fold.size()));
    };
    stat([](const Metrics& m) { return m.accuracy; }, s.mean_accuracy, s.std_accuracy);
    stat([](const Metrics& m) { return m.precision; }, s.mean_precision, s.std_precision);
    stat([](const Metrics& m) { return m.recall; }, s.mean_recall, s.std_recall);
    stat([](const Metrics& m) { return m.f1; }, s.mean_f1, s.std_f1);
    return s;
}

json summary_to_json(const MetricsSummary& s) {
    return {{"folds", s.folds},
            {"aggregation", "mean and population std over folds"},
            {"accuracy", {{"mean", s.mean_accuracy}, {"std", s.std_accuracy}}},
            {"precision", {{"mean", s.mean_precision}, {"std", s.std_precision}}},
            {"recall", {{"mean", s.mean_recall}, {"std", s.std_recall}}},
            {"f1", {{"mean", s.mean_f1}, {"std", s.std_f1}}}};
}

// ------------------------------------------------------------------ evaluation

std::vector<double> model_features(const Checkpoint& ckpt, const Dataset& ds, std::size_t i) {
    return standardized(ckpt.standardizer, ds, i);
}

void check_compatible(const Checkpoint& ckpt, const RasterConfig& raster) {
    if (!(raster == ckpt.raster))
        throw ConfigMismatch("raster settings differ from the checkpoint's (" + raster_config_to_json(raster).dump() +
                             " vs " + raster_config_to_json(ckpt.raster).dump() + ")");
    if (raster.width_px != ckpt.params.config().input_px)
        throw ConfigMismatch("image size does not match the model input size");
}

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& ds, std::span<const std::size_t> indices,
                    bool with_explanations) {
    check_compatible(ckpt, ds.config.raster);
    if (indices.empty()) throw InvalidInput("indices", "nothing to evaluate");
    EvalResult r;
    r.indices.assign(indices.begin(), indices.end());
    r.predictions.resize(indices.size());
    r.probabilities.resize(indices.size());
    if (with_explanations) r.reports.resize(indices.size());
    parallel_for(indices.size(), [&](std::size_t j) {
        const std::size_t i = indices[j];
        const auto img = ds.images.at(i).float_view();
        const auto feats = model_features(ckpt, ds, i);
        const Prediction p = predict(ckpt.params, img, feats);
        r.predictions[j] = p.label;
        r.probabilities[j] = p.probabilities;
        if (with_explanations) r.reports[j] = explain_pass(ckpt.params, img, feats);
    });
    std::vector<Outcome> labels;
    for (std::size_t i : indices) labels.push_back(ds.passes[i].label);
    r.metrics = confusion_and_metrics(r.predictions, labels);
    if (with_explanations) standardize_contributions(r.reports);
    return r;
}

}  // namespace passcam
