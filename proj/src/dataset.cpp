#include "passcam/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "passcam/error.hpp"
#include "passcam/parallel.hpp"

namespace passcam {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPoolStream = ~std::uint64_t{0};

std::vector<Passer> passer_pool(const SynthConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, kPoolStream);
    std::vector<Passer> pool;
    pool.reserve(cfg.passer_pool);
    for (std::size_t i = 0; i < cfg.passer_pool; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "P%04zu", i);
        pool.push_back(sample_passer(static_cast<Role>(i % 3), id, rng));
    }
    return pool;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void Dataset::render() {
    images.assign(passes.size(), RasterImage{});
    parallel_for(passes.size(), [&](std::size_t i) { images[i] = rasterize_scene(passes[i].scene, config.raster); });
}

Dataset generate_dataset(const SynthConfig& cfg, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw InvalidInput("n", "dataset size must be at least 1");
    if (cfg.passer_pool == 0) throw ConfigError("passer pool must be non-empty");
    cfg.raster.validate();
    const std::vector<Passer> pool = passer_pool(cfg, seed);

    Dataset ds;
    ds.config = cfg;
    ds.seed = seed;
    ds.passes.resize(n);
    parallel_for(n, [&](std::size_t i) {
        Rng rng = Rng::derive(seed, i);
        PassRecord& rec = ds.passes[i];
        rec.id = i;
        rec.scene = sample_scene(cfg, rng);
        const Passer& passer = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        rec.passer_id = passer.id;
        rec.role = role_name(passer.role);
        rec.stats = passer.stats;
        rec.skill = passer.skill;
        rec.oracle_p = oracle_probability(rec.scene, rec.skill, cfg.truth);
        rec.label = rng.bernoulli(rec.oracle_p) ? Outcome::success : Outcome::failure;
    });
    ds.render();
    return ds;
}

BiasCalibration calibrate_bias(const SynthConfig& cfg, double target_rate, std::size_t n, std::uint64_t seed) {
    if (!(target_rate > 0.0 && target_rate < 1.0)) throw InvalidInput("target_rate", "must be in (0,1)");
    SynthConfig unbiased = cfg;
    unbiased.truth.bias = 0.0;
    const std::vector<Passer> pool = passer_pool(cfg, seed);
    std::vector<double> logits(n);
    parallel_for(n, [&](std::size_t i) {
        Rng rng = Rng::derive(seed, i);
        const PitchScene scene = sample_scene(unbiased, rng);
        const Passer& passer = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        const double p = oracle_probability(scene, passer.skill, unbiased.truth);
        logits[i] = std::log(p) - std::log1p(-p);
    });
    auto mean_p = [&](double b) {
        double s = 0.0;
        for (double z : logits) s += logistic(z + b);
        return s / static_cast<double>(n);
    };
    double lo = -20.0, hi = 20.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_p(mid) < target_rate ? lo : hi) = mid;
    }
    BiasCalibration out;
    out.bias = 0.5 * (lo + hi);
    out.expected_success_rate = mean_p(out.bias);
    for (double z : logits) {
        const double p = logistic(z + out.bias);
        out.bayes_accuracy += std::max(p, 1.0 - p);
    }
    out.bayes_accuracy /= static_cast<double>(n);
    return out;
}

double bayes_accuracy(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw InvalidInput("indices", "empty selection");
    double s = 0.0;
    for (std::size_t i : indices) s += std::max(ds.passes[i].oracle_p, 1.0 - ds.passes[i].oracle_p);
    return s / static_cast<double>(indices.size());
}

double bayes_accuracy(const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return bayes_accuracy(ds, all);
}

double oracle_classifier_accuracy(const Dataset& ds) {
    std::size_t hits = 0;
    for (const auto& p : ds.passes) {
        const Outcome guess = p.oracle_p >= 0.5 ? Outcome::success : Outcome::failure;
        hits += guess == p.label;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double success_rate(const Dataset& ds) {
    std::size_t s = 0;
    for (const auto& p : ds.passes) s += p.label == Outcome::success;
    return static_cast<double>(s) / static_cast<double>(ds.size());
}

json pass_record_to_json(const PassRecord& rec) {
    return {{"id", rec.id},       {"passer_id", rec.passer_id},        {"role", rec.role},
            {"skill", rec.skill}, {"stats", stats_to_json(rec.stats)}, {"scene", scene_to_json(rec.scene)}};
}

PassRecord pass_record_from_json(const json& j) {
    PassRecord rec;
    try {
        rec.id = j.at("id").get<std::size_t>();
        rec.passer_id = j.at("passer_id").get<std::string>();
        rec.role = j.value("role", std::string());
        rec.skill = j.value("skill", 0.0);
    } catch (const json::exception& e) {
        throw FormatError(std::string("pass record: ") + e.what());
    }
    if (!j.contains("stats")) throw InvalidInput("stats", "missing field");
    if (!j.contains("scene")) throw InvalidInput("scene", "missing field");
    rec.stats = stats_from_json(j.at("stats"));
    rec.scene = scene_from_json(j.at("scene"));
    return rec;
}

std::vector<PassRecord> JsonlPassReader::read(const fs::path& path) const {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<PassRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(pass_record_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const InvalidInput& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_dataset(const Dataset& ds, const fs::path& dir, bool write_pngs) {
    fs::create_directories(dir);
    const json manifest = {{"format", "passcam-dataset"},
                           {"version", kDatasetFormatVersion},
                           {"seed", ds.seed},
                           {"n", ds.size()},
                           {"synth", synth_config_to_json(ds.config)}};
    {
        std::ofstream out(dir / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "scenes.jsonl");
        for (const auto& rec : ds.passes) out << pass_record_to_json(rec).dump() << '\n';
    }
    {
        std::ofstream out(dir / "labels.csv");
        out << "id,label,oracle_p\n";
        for (const auto& rec : ds.passes)
            out << rec.id << ',' << outcome_name(rec.label) << ',' << format_double(rec.oracle_p) << '\n';
    }
    if (write_pngs) {
        fs::create_directories(dir / "png");
        for (std::size_t i = 0; i < ds.size(); ++i)
            write_png(dir / "png" / (std::to_string(ds.passes[i].id) + ".png"), ds.images.at(i));
    }
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("no manifest.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "passcam-dataset")
        throw FormatError(dir.string() + " is not a passcam dataset");
    if (manifest.value("version", 0) != kDatasetFormatVersion)
        throw FormatError("unsupported dataset version " + manifest.value("version", json(0)).dump());

    Dataset ds;
    ds.config = synth_config_from_json(manifest.at("synth"));
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.passes = JsonlPassReader{}.read(dir / "scenes.jsonl");
    if (ds.passes.size() != manifest.at("n").get<std::size_t>())
        throw FormatError("scenes.jsonl does not match the manifest count");

    std::ifstream lf(dir / "labels.csv");
    if (!lf) throw FormatError("no labels.csv in " + dir.string());
    std::string line;
    std::getline(lf, line);
    if (line != "id,label,oracle_p") throw FormatError("labels.csv: unexpected header");
    std::size_t row = 0;
    while (std::getline(lf, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, label, p;
        std::getline(ss, id, ',');
        std::getline(ss, label, ',');
        std::getline(ss, p, ',');
        if (row >= ds.passes.size() || std::stoul(id) != ds.passes[row].id)
            throw FormatError("labels.csv: row " + std::to_string(row) + " does not match scenes.jsonl");
        try {
            ds.passes[row].label = outcome_from_name(label);
        } catch (const InvalidInput&) {
            throw FormatError("labels.csv: bad label '" + label + "'");
        }
        ds.passes[row].oracle_p = std::stod(p);
        ++row;
    }
    if (row != ds.passes.size()) throw FormatError("labels.csv: row count does not match scenes.jsonl");
    ds.render();
    return ds;
}

}  // namespace passcam
