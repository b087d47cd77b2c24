#include "passcam/stats.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "passcam/error.hpp"
#include "passcam/hash.hpp"

namespace passcam {

using nlohmann::json;

const std::array<std::string, kNumFeatures>& feature_names() {
    static const std::array<std::string, kNumFeatures> names = [] {
        std::array<std::string, kNumFeatures> n;
        for (std::size_t c = 0; c < kNumPassCategories; ++c) {
            const std::string stem = kCategoryNames[c];
            n[3 * c] = "total_" + stem;
            n[3 * c + 1] = "rate_" + stem;
            n[3 * c + 2] = "total_x_rate_" + stem;
        }
        return n;
    }();
    return names;
}

void validate_stats(const PasserStats& stats) {
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        const auto& cat = stats.categories[c];
        const std::string stem = kCategoryNames[c];
        if (cat.total < 0) throw InvalidInput("total_" + stem, "negative pass count");
        if (!(cat.success_rate >= 0.0 && cat.success_rate <= 1.0))
            throw InvalidInput("rate_" + stem, "success rate outside [0,1]");
        if (cat.total == 0 && cat.success_rate != 0.0)
            throw InvalidInput("rate_" + stem, "success rate must be 0 when the total is 0");
    }
}

FeatureVector build_feature_vector(const PasserStats& stats) {
    validate_stats(stats);
    FeatureVector out;
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        const double total = static_cast<double>(stats.categories[c].total);
        const double rate = stats.categories[c].success_rate;
        out.v[3 * c] = total;
        out.v[3 * c + 1] = rate;
        out.v[3 * c + 2] = total * rate;
    }
    return out;
}

Standardizer::Standardizer(std::array<double, kNumFeatures> mean, std::array<double, kNumFeatures> stddev,
                           std::string fitted_on)
    : mean_(mean), std_(stddev), fitted_on_(std::move(fitted_on)), fitted_(true) {
    for (double s : std_)
        if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidInput("std", "standard deviations must be finite and >= 0");
}

FeatureVector Standardizer::apply(const FeatureVector& raw) const {
    if (!fitted_) throw ConfigError("standardizer has not been fitted");
    FeatureVector out;
    out.standardized = true;
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        out.v[i] = std_[i] == 0.0 ? 0.0 : (raw.v[i] - mean_[i]) / std_[i];
    return out;
}

Standardizer fit_standardizer(std::span<const FeatureVector> vectors) {
    if (vectors.size() < 2) throw InvalidInput("vectors", "need at least two vectors to fit a standardizer");
    std::array<double, kNumFeatures> mean{};
    std::array<double, kNumFeatures> var{};
    const double n = static_cast<double>(vectors.size());
    for (const auto& fv : vectors)
        for (std::size_t i = 0; i < kNumFeatures; ++i) mean[i] += fv.v[i];
    for (double& m : mean) m /= n;
    for (const auto& fv : vectors)
        for (std::size_t i = 0; i < kNumFeatures; ++i) {
            const double d = fv.v[i] - mean[i];
            var[i] += d * d;
        }
    std::array<double, kNumFeatures> stddev{};
    for (std::size_t i = 0; i < kNumFeatures; ++i) stddev[i] = std::sqrt(var[i] / n);

    // Fingerprint of the fit set: hash over the raw bytes of every vector.
    std::string bytes;
    bytes.reserve(vectors.size() * kNumFeatures * sizeof(double));
    for (const auto& fv : vectors) bytes.append(reinterpret_cast<const char*>(fv.v.data()), kNumFeatures * sizeof(double));
    return Standardizer(mean, stddev, sha256_hex(bytes));
}

FeatureVector standardize(const FeatureVector& raw, const Standardizer& standardizer) {
    return standardizer.apply(raw);
}

json stats_to_json(const PasserStats& stats) {
    json j = json::object();
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        const std::string stem = kCategoryNames[c];
        j["total_" + stem] = stats.categories[c].total;
        j["rate_" + stem] = stats.categories[c].success_rate;
    }
    return j;
}

PasserStats stats_from_json(const json& j) {
    if (!j.is_object()) throw InvalidInput("stats", "expected a JSON object");
    PasserStats stats;
    for (std::size_t c = 0; c < kNumPassCategories; ++c) {
        const std::string stem = kCategoryNames[c];
        const std::string tk = "total_" + stem;
        const std::string rk = "rate_" + stem;
        if (!j.contains(tk)) throw InvalidInput("stats." + tk, "missing field");
        if (!j.contains(rk)) throw InvalidInput("stats." + rk, "missing field");
        if (!j.at(tk).is_number_integer()) throw InvalidInput("stats." + tk, "expected an integer");
        if (!j.at(rk).is_number()) throw InvalidInput("stats." + rk, "expected a number");
        stats.categories[c].total = j.at(tk).get<long>();
        stats.categories[c].success_rate = j.at(rk).get<double>();
    }
    validate_stats(stats);
    return stats;
}

json standardizer_to_json(const Standardizer& s) {
    return {{"mean", s.mean()}, {"std", s.stddev()}, {"fitted_on", s.fitted_on()}};
}

Standardizer standardizer_from_json(const json& j) {
    try {
        return Standardizer(j.at("mean").get<std::array<double, kNumFeatures>>(),
                            j.at("std").get<std::array<double, kNumFeatures>>(), j.at("fitted_on").get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("standardizer: ") + e.what());
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string csv_header() {
    std::string h = "passer_id";
    for (const char* stem : kCategoryNames) h += std::string(",total_") + stem + ",rate_" + stem;
    return h;
}

}  // namespace

std::vector<PasserRecord> read_stats_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != csv_header()) throw FormatError(path.string() + ": unexpected header, expected " + csv_header());

    std::vector<PasserRecord> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 1 + 2 * kNumPassCategories)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
        PasserRecord rec{cells[0], {}};
        try {
            for (std::size_t c = 0; c < kNumPassCategories; ++c) {
                rec.stats.categories[c].total = std::stol(cells[1 + 2 * c]);
                rec.stats.categories[c].success_rate = std::stod(cells[2 + 2 * c]);
            }
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
        }
        validate_stats(rec.stats);
        out.push_back(std::move(rec));
    }
    return out;
}

void write_stats_csv(const std::filesystem::path& path, std::span<const PasserRecord> records) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << csv_header() << '\n';
    out.precision(17);
    for (const auto& rec : records) {
        out << rec.passer_id;
        for (const auto& cat : rec.stats.categories) out << ',' << cat.total << ',' << cat.success_rate;
        out << '\n';
    }
}

}  // namespace passcam
