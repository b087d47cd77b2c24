#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "passcam/checkpoint.hpp"
#include "passcam/dataset.hpp"
#include "passcam/explain.hpp"
#include "passcam/model.hpp"
#include "passcam/rng.hpp"

namespace passcam {

// ------------------------------------------------------------------ splits

/// k rotating blocks: fold f tests on block f, validates on block (f+1) mod k
/// and trains on the rest.
struct SplitPlan {
    int k = 10;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> blocks;

    std::vector<std::size_t> test(int fold) const;
    std::vector<std::size_t> validation(int fold) const;
    std::vector<std::size_t> train(int fold) const;
};

SplitPlan make_folds(std::size_t n, std::uint64_t seed, int k = 10);
nlohmann::json split_plan_to_json(const SplitPlan& plan);

// ------------------------------------------------------------------ training

struct TrainConfig {
    int batch_size = 128;
    int max_epochs = 10;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double flip_horizontal_prob = 0.5;
    double flip_vertical_prob = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& tc);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct FlipDecision {
    bool horizontal = false;
    bool vertical = false;
};

/// Flips each image independently; horizontal first, then vertical. Returns
/// what was applied. Labels and feature vectors are never touched.
std::vector<FlipDecision> augment(std::span<RasterImage> images, Rng& rng, double p_horizontal, double p_vertical);

class Adam {
public:
    Adam(std::size_t n, double lr, double beta1, double beta2, double epsilon);
    void step(std::span<double> params, std::span<const double> grads);
    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

/// Standardizer fitted on the distinct passers (by id) among `indices`.
Standardizer fit_passer_standardizer(const Dataset& ds, std::span<const std::size_t> indices);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;  // summed over the epoch's mini-batches
    double validation_accuracy = 0.0;
};

struct TrainResult {
    Checkpoint best;
    int best_epoch = 0;  // 0 = the initial parameters
    double best_validation_accuracy = 0.0;
    std::vector<EpochRecord> history;
    std::vector<double> step_losses;
    bool aborted = false;
    std::string diagnostic;
};

/// Adam over shuffled mini-batches with flip augmentation; after every epoch
/// the validation accuracy is measured and strictly better parameters are
/// snapshotted, so ties keep the earlier epoch.
TrainResult train_model(const ModelConfig& model, const Dataset& ds, std::span<const std::size_t> train_idx,
                        std::span<const std::size_t> val_idx, const TrainConfig& tc,
                        const nlohmann::json& metadata = nlohmann::json::object());

TrainResult train_fold(const ModelConfig& model, const Dataset& ds, const SplitPlan& plan, int fold,
                       const TrainConfig& tc, const nlohmann::json& metadata = nlohmann::json::object());

// ------------------------------------------------------------------ metrics

struct Metrics {
    std::array<std::array<long, 2>, 2> counts{};        // [true][predicted], index 0 = success
    std::array<std::array<double, 2>, 2> normalized{};  // rows sum to 1 (0 for empty rows)
    long total = 0;
    double accuracy = 0.0;
    double precision = 0.0;  // positive class = success
    double recall = 0.0;
    double f1 = 0.0;
};

Metrics confusion_and_metrics(std::span<const Outcome> predictions, std::span<const Outcome> labels);
Metrics metrics_from_counts(const std::array<std::array<long, 2>, 2>& counts);

nlohmann::json metrics_to_json(const Metrics& m);
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& label, const Metrics& m);

struct MetricsSummary {
    double mean_accuracy = 0, std_accuracy = 0;
    double mean_precision = 0, std_precision = 0;
    double mean_recall = 0, std_recall = 0;
    double mean_f1 = 0, std_f1 = 0;
    std::size_t folds = 0;
};

/// Mean and population std over folds.
MetricsSummary summarize(std::span<const Metrics> per_fold);
nlohmann::json summary_to_json(const MetricsSummary& s);

// ------------------------------------------------------------------ evaluation

struct EvalResult {
    Metrics metrics;
    std::vector<std::size_t> indices;
    std::vector<Outcome> predictions;
    std::vector<std::array<double, kNumClasses>> probabilities;
    std::vector<ExplanationReport> reports;  // filled when explanations are requested
};

/// Standardized feature vector for pass i under a checkpoint.
std::vector<double> model_features(const Checkpoint& ckpt, const Dataset& ds, std::size_t i);

/// Throws ConfigMismatch when the dataset was rendered with different raster
/// settings, or at a different size, than the checkpoint expects.
void check_compatible(const Checkpoint& ckpt, const RasterConfig& raster);

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& ds, std::span<const std::size_t> indices,
                    bool with_explanations = false);

}  // namespace passcam
