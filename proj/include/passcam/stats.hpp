#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace passcam {

inline constexpr std::size_t kNumPassCategories = 5;
inline constexpr std::size_t kNumFeatures = 3 * kNumPassCategories;

enum class PassCategory { all, opposition_area, long_pass, through, cross };

/// Category names in feature order; also the CSV/JSON column stems.
inline constexpr std::array<const char*, kNumPassCategories> kCategoryNames = {
    "all", "opposition_area", "long", "through", "cross"};

/// Human-readable feature labels in vector order.
const std::array<std::string, kNumFeatures>& feature_names();

struct CategoryStats {
    long total = 0;
    double success_rate = 0.0;  // 0 whenever total == 0

    friend bool operator==(const CategoryStats&, const CategoryStats&) = default;
};

struct PasserStats {
    std::array<CategoryStats, kNumPassCategories> categories{};

    CategoryStats& operator[](PassCategory c) { return categories[static_cast<std::size_t>(c)]; }
    const CategoryStats& operator[](PassCategory c) const { return categories[static_cast<std::size_t>(c)]; }

    friend bool operator==(const PasserStats&, const PasserStats&) = default;
};

void validate_stats(const PasserStats& stats);

struct FeatureVector {
    std::array<double, kNumFeatures> v{};
    bool standardized = false;
};

/// [total, rate, total*rate] for each category in order.
FeatureVector build_feature_vector(const PasserStats& stats);

class Standardizer {
public:
    Standardizer() = default;
    Standardizer(std::array<double, kNumFeatures> mean, std::array<double, kNumFeatures> stddev, std::string fitted_on);

    const std::array<double, kNumFeatures>& mean() const { return mean_; }
    const std::array<double, kNumFeatures>& stddev() const { return std_; }
    const std::string& fitted_on() const { return fitted_on_; }
    bool fitted() const { return fitted_; }

    /// (v - mean) / std per coordinate; zero-std coordinates map to 0.
    FeatureVector apply(const FeatureVector& raw) const;

private:
    std::array<double, kNumFeatures> mean_{};
    std::array<double, kNumFeatures> std_{};
    std::string fitted_on_;
    bool fitted_ = false;
};

/// Population mean/std over the given raw vectors (at least two).
Standardizer fit_standardizer(std::span<const FeatureVector> vectors);
FeatureVector standardize(const FeatureVector& raw, const Standardizer& standardizer);

nlohmann::json stats_to_json(const PasserStats& stats);
PasserStats stats_from_json(const nlohmann::json& j);

nlohmann::json standardizer_to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);

struct PasserRecord {
    std::string passer_id;
    PasserStats stats;
};

/// CSV with header: passer_id,total_all,rate_all,total_opposition_area,...,rate_cross
std::vector<PasserRecord> read_stats_csv(const std::filesystem::path& path);
void write_stats_csv(const std::filesystem::path& path, std::span<const PasserRecord> records);

}  // namespace passcam
