#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "passcam/dataset.hpp"
#include "passcam/error.hpp"
#include "passcam/parallel.hpp"
#include "passcam/synth.hpp"

using namespace passcam;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Passer (70,34) -> ball_to (90,34); receiver just past the target running
// back toward it; one defender 3 m off the lane; keeper behind the target.
PitchScene hand_scene() {
    PitchScene s;
    s.ball_from = {70, 34};
    s.ball_to = {90, 34};
    s.passer_index = 0;
    s.players = {{Team::offense, {70, 34}, {1, 0}},
                 {Team::offense, {92, 34}, {-2, 0}},
                 {Team::defense, {80, 37}, {0, 0}},
                 {Team::defense, {104, 34}, {0, 1}}};
    return s;
}

// Upper-tail chi-square probability via the regularized incomplete gamma (series).
double chi2_sf(double x, int dof) {
    const double a = dof / 2.0, z = x / 2.0;
    double sum = 1.0 / a, term = 1.0 / a;
    for (int n = 1; n < 1000; ++n) {
        term *= z / (a + n);
        sum += term;
    }
    const double lower = std::exp(-z + a * std::log(z) - std::lgamma(a)) * sum;
    return 1.0 - lower;
}

// Pearson chi-square on a bins x 2 contingency table.
double independence_p(const std::vector<std::array<double, 2>>& table) {
    double total = 0, col[2] = {0, 0};
    std::vector<double> row;
    for (const auto& r : table) {
        row.push_back(r[0] + r[1]);
        col[0] += r[0];
        col[1] += r[1];
        total += r[0] + r[1];
    }
    double chi2 = 0;
    int used = 0;
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (row[i] == 0) continue;
        ++used;
        for (int c = 0; c < 2; ++c) {
            const double e = row[i] * col[c] / total;
            chi2 += (table[i][c] - e) * (table[i][c] - e) / e;
        }
    }
    return chi2_sf(chi2, used - 1);
}

}  // namespace

TEST_CASE("oracle features on a hand-built scene") {
    const PitchScene s = hand_scene();
    const OracleFeatures f = oracle_features(s, 0.7, 15.0);
    CHECK(f.clearance == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(f.alignment == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.distance == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(f.skill == 0.7);
    // receiver (13 m from goal) +1; defender (25.2 m) and keeper (1 m) -1 each.
    CHECK(f.balance == -1.0);
    CHECK(intended_receiver(s) == 1);

    GroundTruth gt;
    gt.w_balance = 0.4;
    gt.w_clearance = 0.1;
    gt.w_alignment = 0.3;
    gt.w_skill = 1.0;
    gt.w_distance = -0.02;
    gt.bias = 0.25;
    const double z = 0.4 * -1.0 + 0.1 * 3.0 + 0.3 * 1.0 + 1.0 * 0.7 - 0.02 * 20.0 + 0.25;
    CHECK(oracle_probability(s, 0.7, gt) == doctest::Approx(sigmoid(z)).epsilon(1e-14));
}

TEST_CASE("oracle edge cases") {
    GroundTruth zero;
    CHECK(oracle_probability(hand_scene(), 1.3, zero) == 0.5);

    PitchScene alone = hand_scene();
    alone.players.erase(alone.players.begin() + 1);  // no teammate
    CHECK(intended_receiver(alone) == std::numeric_limits<std::size_t>::max());
    CHECK(oracle_features(alone, 0.0, 15.0).alignment == 0.0);

    PitchScene still = hand_scene();
    still.players[1].vel = {0, 0};
    CHECK(oracle_features(still, 0.0, 15.0).alignment == 0.0);

    PitchScene open = hand_scene();
    open.players[2].pos = {80, 60};  // far from the lane
    CHECK(oracle_features(open, 0.0, 15.0).clearance == doctest::Approx(std::min(15.0, 14.0)));
    CHECK(oracle_features(open, 0.0, 5.0).clearance == 5.0);

    // Defender exactly on the lane lowers p below the clear-lane counterfactual.
    const GroundTruth gt = GroundTruth::defaults(SynthMode::mixed);
    PitchScene blocked = hand_scene();
    blocked.players[2].pos = {80, 34};
    CHECK(oracle_features(blocked, 0.0, 15.0).clearance == 0.0);
    CHECK(oracle_probability(blocked, 0.0, gt) < oracle_probability(hand_scene(), 0.0, gt));

    CHECK(distance_to_segment({0, 1}, {0, 0}, {0, 0}) == 1.0);
    CHECK(distance_to_segment({5, 3}, {0, 0}, {10, 0}) == 3.0);
    CHECK(distance_to_segment({-3, 4}, {0, 0}, {10, 0}) == 5.0);
}

TEST_CASE("clearance monotonicity over generated scenes") {
    const SynthConfig cfg = SynthConfig::for_mode(SynthMode::mixed);
    for (int i = 0; i < 200; ++i) {
        Rng rng = Rng::derive(5, i);
        const PitchScene s = sample_scene(cfg, rng);
        GroundTruth clear_only;
        clear_only.w_clearance = cfg.truth.w_clearance;
        // Pushing every defender away from the lane can only raise clearance.
        PitchScene far = s;
        for (auto& pl : far.players)
            if (pl.team == Team::defense) pl.pos = {0.0, pl.pos.y < 34 ? 0.0 : 68.0};
        CHECK(oracle_features(far, 0, 15).clearance >= oracle_features(s, 0, 15).clearance);
        CHECK(oracle_probability(far, 0, clear_only) >= oracle_probability(s, 0, clear_only));
    }
}

TEST_CASE("mode weights") {
    const GroundTruth mixed = GroundTruth::defaults(SynthMode::mixed);
    CHECK(mixed.w_balance != 0.0);
    CHECK(mixed.w_clearance > 0.0);
    CHECK(mixed.w_skill > 0.0);
    const GroundTruth sp = GroundTruth::defaults(SynthMode::spatial_only);
    CHECK(sp.w_skill == 0.0);
    CHECK(sp.w_balance == mixed.w_balance);
    const GroundTruth st = GroundTruth::defaults(SynthMode::stats_only);
    CHECK(st.w_balance == 0.0);
    CHECK(st.w_clearance == 0.0);
    CHECK(st.w_alignment == 0.0);
    CHECK(st.w_distance == 0.0);
    CHECK(st.w_skill == mixed.w_skill);
    CHECK(ground_truth_from_json(ground_truth_to_json(mixed)) == mixed);
    CHECK(synth_mode_from_name("stats_only") == SynthMode::stats_only);
    CHECK_THROWS_AS(synth_mode_from_name("both"), ConfigError);
}

TEST_CASE("default biases are reproduced by the calibration routine") {
    const auto mixed = calibrate_bias(SynthConfig::for_mode(SynthMode::mixed), 3663.0 / 6349.0, 200000, 20240601);
    CHECK(std::abs(mixed.bias - GroundTruth::defaults(SynthMode::mixed).bias) < 1e-4);
    CHECK(mixed.bayes_accuracy == doctest::Approx(0.80).epsilon(0.03));
    for (SynthMode m : {SynthMode::spatial_only, SynthMode::stats_only}) {
        const auto c = calibrate_bias(SynthConfig::for_mode(m), 0.5, 200000, 20240601);
        CHECK(std::abs(c.bias - GroundTruth::defaults(m).bias) < 1e-4);
        CHECK(c.expected_success_rate == doctest::Approx(0.5).epsilon(1e-9));
    }
    CHECK_THROWS_AS(calibrate_bias(SynthConfig{}, 1.0, 10, 1), InvalidInput);
}

TEST_CASE("generated passes satisfy the scene and stats invariants") {
    const Dataset ds = generate_dataset(SynthConfig::for_mode(SynthMode::mixed), 2000, 7);
    for (const auto& p : ds.passes) {
        CHECK(in_target_zone(p.scene.ball_to, p.scene.pitch));
        CHECK_NOTHROW(validate_scene(p.scene));
        CHECK_NOTHROW(validate_stats(p.stats));
        CHECK(p.scene.players[p.scene.passer_index].team == Team::offense);
        CHECK(p.oracle_p > 0.0);
        CHECK(p.oracle_p < 1.0);
        for (const auto& pl : p.scene.players) CHECK(std::hypot(pl.vel.x, pl.vel.y) <= kMaxPlayerSpeed);
    }
    CHECK(ds.images.size() == ds.size());
    CHECK_THROWS_AS(generate_dataset(SynthConfig{}, 0, 1), InvalidInput);
}

TEST_CASE("skill raises every success rate") {
    // Regression slope of each category's rate on the latent skill.
    Rng rng(2);
    double sxy[5] = {}, sxx = 0;
    std::vector<Passer> ps;
    for (int i = 0; i < 3000; ++i) ps.push_back(sample_passer(Role::midfielder, "x", rng));
    double mean_skill = 0;
    for (const auto& p : ps) mean_skill += p.skill / ps.size();
    for (const auto& p : ps) {
        sxx += (p.skill - mean_skill) * (p.skill - mean_skill);
        for (int c = 0; c < 5; ++c) sxy[c] += (p.skill - mean_skill) * p.stats.categories[c].success_rate;
    }
    for (int c = 0; c < 5; ++c) CHECK(sxy[c] / sxx > 0.05);
}

TEST_CASE("same seed gives identical datasets regardless of thread count") {
    const SynthConfig cfg = SynthConfig::for_mode(SynthMode::mixed);
    set_num_threads(1);
    const Dataset a = generate_dataset(cfg, 300, 99);
    set_num_threads(4);
    const Dataset b = generate_dataset(cfg, 300, 99);
    set_num_threads(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.passes[i].scene == b.passes[i].scene);
        CHECK(a.passes[i].stats == b.passes[i].stats);
        CHECK(a.passes[i].label == b.passes[i].label);
        CHECK(a.passes[i].oracle_p == b.passes[i].oracle_p);
        CHECK(a.images[i] == b.images[i]);
    }
    const Dataset c = generate_dataset(cfg, 300, 100);
    CHECK_FALSE(a.passes[0].scene == c.passes[0].scene);
}

TEST_CASE("labels follow the oracle probabilities (Monte Carlo)") {
    const Dataset ds = generate_dataset(SynthConfig::for_mode(SynthMode::mixed), 10000, 21);
    double mean_p = 0;
    for (const auto& p : ds.passes) mean_p += p.oracle_p / ds.size();
    CHECK(std::abs(success_rate(ds) - mean_p) < 0.02);

    const Dataset big = generate_dataset(SynthConfig::for_mode(SynthMode::mixed), 50000, 22);
    CHECK(std::abs(oracle_classifier_accuracy(big) - bayes_accuracy(big)) < 0.01);
    double direct = 0;
    for (const auto& p : big.passes) direct += std::max(p.oracle_p, 1.0 - p.oracle_p);
    CHECK(bayes_accuracy(big) == doctest::Approx(direct / big.size()).epsilon(1e-12));
    CHECK(success_rate(big) == doctest::Approx(3663.0 / 6349.0).epsilon(0.03));
}

TEST_CASE("stats-only labels are independent of the scene; spatial-only of the passer") {
    const Dataset st = generate_dataset(SynthConfig::for_mode(SynthMode::stats_only), 10000, 31);
    std::vector<std::array<double, 2>> by_clearance(6, {0, 0}), by_balance(9, {0, 0});
    for (const auto& p : st.passes) {
        const OracleFeatures f = oracle_features(p.scene, p.skill, 15.0);
        const int c = std::min(5, static_cast<int>(f.clearance / 2.5));
        const int b = std::clamp(static_cast<int>(f.balance) + 4, 0, 8);
        by_clearance[c][static_cast<int>(p.label)] += 1;
        by_balance[b][static_cast<int>(p.label)] += 1;
    }
    CHECK(independence_p(by_clearance) > 0.01);
    CHECK(independence_p(by_balance) > 0.01);

    const Dataset sp = generate_dataset(SynthConfig::for_mode(SynthMode::spatial_only), 10000, 32);
    std::vector<std::array<double, 2>> by_skill(6, {0, 0});
    for (const auto& p : sp.passes) {
        const int s = std::clamp(static_cast<int>(std::floor(p.skill + 3.0)), 0, 5);
        by_skill[s][static_cast<int>(p.label)] += 1;
    }
    CHECK(independence_p(by_skill) > 0.01);

    // Sanity of the test itself: the mixed mode does depend on skill.
    const Dataset mx = generate_dataset(SynthConfig::for_mode(SynthMode::mixed), 10000, 33);
    std::vector<std::array<double, 2>> mx_skill(6, {0, 0});
    for (const auto& p : mx.passes)
        mx_skill[std::clamp(static_cast<int>(std::floor(p.skill + 3.0)), 0, 5)][static_cast<int>(p.label)] += 1;
    CHECK(independence_p(mx_skill) < 1e-6);
}

TEST_CASE("dataset save/load round trip") {
    const Dataset ds = generate_dataset(SynthConfig::for_mode(SynthMode::spatial_only), 40, 41);
    const auto dir = std::filesystem::temp_directory_path() / "passcam_ds_roundtrip";
    std::filesystem::remove_all(dir);
    save_dataset(ds, dir, true);
    CHECK(std::filesystem::exists(dir / "png" / "39.png"));
    const Dataset back = load_dataset(dir);
    REQUIRE(back.size() == ds.size());
    CHECK(back.seed == ds.seed);
    CHECK(back.config.truth == ds.config.truth);
    CHECK(back.config.raster == ds.config.raster);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.passes[i].scene == ds.passes[i].scene);
        CHECK(back.passes[i].stats == ds.passes[i].stats);
        CHECK(back.passes[i].label == ds.passes[i].label);
        CHECK(back.passes[i].oracle_p == ds.passes[i].oracle_p);
        CHECK(back.passes[i].skill == ds.passes[i].skill);
        CHECK(back.images[i] == ds.images[i]);
    }

    {
        std::ofstream out(dir / "labels.csv");
        out << "id,label,oracle_p\n0,maybe,0.5\n";
    }
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
}

TEST_CASE("JSONL reader reports the offending line") {
    const auto path = std::filesystem::temp_directory_path() / "passcam_bad.jsonl";
    const Dataset ds = generate_dataset(SynthConfig{}, 2, 1);
    {
        std::ofstream out(path);
        out << pass_record_to_json(ds.passes[0]).dump() << "\n{not json\n";
    }
    try {
        JsonlPassReader{}.read(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    std::filesystem::remove(path);
}
