#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "passcam/error.hpp"
#include "passcam/explain.hpp"
#include "passcam/rng.hpp"

using namespace passcam;
using passcam::testing::central_difference;
using passcam::testing::logit_from_feature_map;
using passcam::testing::perturbed_params;

namespace {

std::vector<double> random_image(const ModelConfig& cfg, Rng& rng) {
    std::vector<double> img(static_cast<std::size_t>(cfg.input_px) * cfg.input_px * 3);
    for (double& v : img) v = rng.uniform();
    return img;
}

std::vector<double> random_features(Rng& rng) {
    std::vector<double> f(15);
    for (double& v : f) v = rng.normal();
    return f;
}

FeatureMap random_map(int u, int v, int k, Rng& rng) {
    FeatureMap m{u, v, k, std::vector<double>(static_cast<std::size_t>(u) * v * k)};
    for (double& x : m.data) x = rng.normal();
    return m;
}

// y = sum_a a_i v_i: identity MLP, feature i routed through hidden unit i,
// conv rows of the head zeroed.
ModelParams linear_stats_model(const std::array<double, 15>& a, int c) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.mlp_activation = Activation::identity;
    ModelParams p = init_params(cfg, 1);
    auto w1 = p.tensor("mlp.weight");
    std::fill(w1.begin(), w1.end(), 0.0);
    for (int i = 0; i < 15; ++i) w1[static_cast<std::size_t>(i) * cfg.mlp_hidden + i] = a[i];
    auto wf = p.tensor("fusion.weight");
    std::fill(wf.begin(), wf.end(), 0.0);
    for (int i = 0; i < 15; ++i) wf[static_cast<std::size_t>(cfg.conv_dim() + i) * 2 + c] = 1.0;
    return p;
}

}  // namespace

TEST_CASE("contributions are plain signed sums; magnitude mode sums absolute values") {
    const std::vector<double> px{1.0, -2.0, 0.5};
    const std::vector<double> fg{-1.0, 3.0};
    const auto s = modality_contributions(px, fg);
    CHECK(s.image == -0.5);
    CHECK(s.stats == 2.0);
    const auto m = modality_contributions(px, fg, ContributionMode::magnitude);
    CHECK(m.image == 3.5);
    CHECK(m.stats == 4.0);
}

TEST_CASE("zeroed conv fusion rows give C_T == 0 exactly; image_only gives C_S == 0") {
    Rng rng(1);
    ModelParams p = perturbed_params(ModelConfig::tiny(), 3);
    auto wf = p.tensor("fusion.weight");
    std::fill(wf.begin(), wf.begin() + 2 * p.config().conv_dim(), 0.0);
    for (int trial = 0; trial < 5; ++trial) {
        const auto img = random_image(p.config(), rng);
        const auto f = random_features(rng);
        for (int c : {0, 1}) {
            const ExplanationReport r = explain_pass(p, img, f, c);
            CHECK(r.ct_raw == 0.0);
            CHECK(r.cs_raw != 0.0);
        }
    }

    ModelConfig io = ModelConfig::tiny();
    io.image_only = true;
    const ModelParams q = perturbed_params(io, 4);
    for (int trial = 0; trial < 5; ++trial) {
        const ExplanationReport r = explain_pass(q, random_image(io, rng), random_features(rng));
        CHECK(r.cs_raw == 0.0);
        CHECK(r.ct_raw != 0.0);
    }
}

TEST_CASE("toy linear stats model: C_S equals the sum of coefficients") {
    std::array<double, 15> a{};
    Rng rng(2);
    for (double& x : a) x = rng.normal();
    double sum = 0;
    for (double x : a) sum += x;
    for (int c : {0, 1}) {
        const ModelParams p = linear_stats_model(a, c);
        const ExplanationReport r = explain_pass(p, random_image(p.config(), rng), random_features(rng), c);
        CHECK(r.ct_raw == 0.0);
        CHECK(r.cs_raw == doctest::Approx(sum).epsilon(1e-12));
        for (int i = 0; i < 15; ++i) CHECK(r.feature_grads[i] == doctest::Approx(a[i]).epsilon(1e-12));
    }

    std::array<double, 15> e2{};
    e2[2] = 1.0;
    const ModelParams p = linear_stats_model(e2, 0);
    const ExplanationReport r = explain_pass(p, random_image(p.config(), rng), random_features(rng), 0);
    const auto ranked = feature_attribution(r.feature_grads);
    CHECK(ranked[0].index == 2);
    CHECK(ranked[0].value == doctest::Approx(1.0));
    for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i].value == 0.0);
}

TEST_CASE("C_S is exactly the sum of the reported feature gradients") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const ModelParams p = perturbed_params(ModelConfig::tiny(), 100 + trial);
        const ExplanationReport r = explain_pass(p, random_image(p.config(), rng), random_features(rng));
        double s = 0.0;
        for (double g : r.feature_grads) s += g;
        CHECK(std::abs(r.cs_raw - s) <= 1e-9);
        REQUIRE(r.feature_grads.size() == 15);
    }
}

TEST_CASE("C_T is the directional derivative along the all-ones image perturbation") {
    Rng rng(4);
    for (int trial = 0; trial < 4; ++trial) {
        const ModelParams p = perturbed_params(ModelConfig::tiny(), 200 + trial);
        const auto img = random_image(p.config(), rng);
        const auto f = random_features(rng);
        for (int c : {0, 1}) {
            const ExplanationReport r = explain_pass(p, img, f, c);
            const double fd = central_difference(
                [&](double h) {
                    auto shifted = img;
                    for (double& v : shifted) v += h;
                    return forward(p, shifted, f).logits[c];
                },
                0.0, 1e-5);
            CHECK(testing::relative_error(r.ct_raw, fd) < 1e-4);
        }
    }
}

TEST_CASE("min-max standardization") {
    const std::vector<double> v{-2, 0, 2};
    CHECK(minmax_standardize(v) == std::vector<double>{0, 0.5, 1});

    Rng rng(5);
    std::vector<double> x(1000);
    for (double& t : x) t = rng.normal(3.0, 7.0);
    const auto y = minmax_standardize(x);
    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    CHECK(y[mn - x.begin()] == 0.0);
    CHECK(y[mx - x.begin()] == 1.0);
    std::vector<std::size_t> ix(x.size()), iy(x.size());
    for (std::size_t i = 0; i < ix.size(); ++i) ix[i] = iy[i] = i;
    std::sort(ix.begin(), ix.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::stable_sort(iy.begin(), iy.end(), [&](auto a, auto b) { return y[a] < y[b]; });
    CHECK(ix == iy);
    for (double t : y) {
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
    }
    CHECK(minmax_standardize(y) == y);  // idempotent on a [0,1]-spanning set

    bool degenerate = false;
    const std::vector<double> flat{4, 4, 4};
    CHECK(minmax_standardize(flat, &degenerate) == std::vector<double>{0.5, 0.5, 0.5});
    CHECK(degenerate);
    minmax_standardize(v, &degenerate);
    CHECK_FALSE(degenerate);
}

TEST_CASE("standardize_contributions scales each population over the collection") {
    Rng rng(6);
    const ModelParams p = perturbed_params(ModelConfig::tiny(), 7);
    std::vector<ExplanationReport> reports;
    for (int i = 0; i < 12; ++i) reports.push_back(explain_pass(p, random_image(p.config(), rng), random_features(rng)));
    CHECK(standardize_contributions(reports));
    double ct_min = 2, ct_max = -1, cs_min = 2, cs_max = -1;
    for (const auto& r : reports) {
        REQUIRE(r.ct_std.has_value());
        REQUIRE(r.cs_std.has_value());
        ct_min = std::min(ct_min, *r.ct_std);
        ct_max = std::max(ct_max, *r.ct_std);
        cs_min = std::min(cs_min, *r.cs_std);
        cs_max = std::max(cs_max, *r.cs_std);
    }
    CHECK(ct_min == 0.0);
    CHECK(ct_max == 1.0);
    CHECK(cs_min == 0.0);
    CHECK(cs_max == 1.0);

    const auto single = explain_pass(p, random_image(p.config(), rng), random_features(rng));
    CHECK_FALSE(single.ct_std.has_value());
}

TEST_CASE("Grad-CAM of the pass-through head equals ReLU(A^1)") {
    Rng rng(7);
    const FeatureMap A = random_map(4, 4, 6, rng);
    // y = sum_ij A^1_ij  =>  dy/dA^1 = 1, other channels 0.
    FeatureMap dA{4, 4, 6, std::vector<double>(A.data.size(), 0.0)};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) dA.data[(static_cast<std::size_t>(i) * 4 + j) * 6 + 1] = 1.0;
    const GradCamResult g = gradcam(A, dA);
    for (int k = 0; k < 6; ++k) CHECK(g.channel_weights[k] == (k == 1 ? 1.0 : 0.0));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(std::abs(g.map.at(i, j) - std::max(0.0, A.at(i, j, 1))) <= 1e-6);

    // Negated head: wherever L was strictly positive, the negated map is 0.
    FeatureMap neg = dA;
    for (double& x : neg.data) x = -x;
    const GradCamResult gn = gradcam(A, neg);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(std::abs(gn.map.at(i, j) - std::max(0.0, -A.at(i, j, 1))) <= 1e-12);
            if (g.map.at(i, j) > 0.0) CHECK(gn.map.at(i, j) == 0.0);
        }

    FeatureMap wrong{4, 3, 6, std::vector<double>(72, 0.0)};
    CHECK_THROWS_AS(gradcam(A, wrong), InvalidInput);
}

TEST_CASE("Grad-CAM is non-negative for 1,000 random models and inputs") {
    Rng rng(8);
    const ModelConfig cfg = ModelConfig::tiny();
    int positive_somewhere = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const ModelParams p = perturbed_params(cfg, 1000 + trial, trial % 2 ? 0.3 : 0.05);
        const ExplanationReport r = explain_pass(p, random_image(cfg, rng), random_features(rng), trial % 2);
        bool any = false;
        for (double l : r.gradcam.values) {
            CHECK(l >= 0.0);
            any = any || l > 0.0;
        }
        positive_somewhere += any;
        for (double l : r.gradcam_upsampled.values) {
            CHECK(l >= 0.0);
            CHECK(l <= 1.0);
        }
    }
    CHECK(positive_somewhere > 100);
}

TEST_CASE("channel weights match per-channel finite differences of y with respect to A") {
    Rng rng(9);
    for (int trial = 0; trial < 3; ++trial) {
        const ModelParams p = perturbed_params(ModelConfig::tiny(), 300 + trial);
        const auto img = random_image(p.config(), rng);
        const auto f = random_features(rng);
        for (int c : {0, 1}) {
            const ExplanationReport r = explain_pass(p, img, f, c);
            const FeatureMap A = forward(p, img, f).last_map;
            const int z = A.height * A.width;
            for (int k = 0; k < A.channels; ++k) {
                const double fd = central_difference(
                    [&](double h) {
                        auto shifted = A.data;
                        for (int pos = 0; pos < z; ++pos) shifted[static_cast<std::size_t>(pos) * A.channels + k] += h;
                        return logit_from_feature_map(p, shifted, z, f, c);
                    },
                    0.0);
                CHECK(testing::relative_error(r.channel_weights[k], fd / z) < 1e-4);
            }
        }
    }
}

TEST_CASE("heatmap upsampling") {
    Heatmap c{3, 3, std::vector<double>(9, 2.5)};
    for (double v : upsample_heatmap(c, 16, 16).values) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    Heatmap zero{3, 3, std::vector<double>(9, 0.0)};
    for (double v : upsample_heatmap(zero, 16, 16).values) CHECK(v == 0.0);

    // Source cell (i, j) lands on target pixel (i*(H-1)/(u-1), j*(W-1)/(v-1)).
    Rng rng(10);
    Heatmap src{4, 4, std::vector<double>(16)};
    for (double& v : src.values) v = rng.uniform(0.0, 3.0);
    const double mx = *std::max_element(src.values.begin(), src.values.end());
    const Heatmap up = upsample_heatmap(src, 64, 64);
    CHECK(up.height == 64);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(std::abs(up.at(i * 21, j * 21) - src.at(i, j) / mx) <= 1e-12);
    // Midway between two grid points is their average.
    Heatmap two{2, 2, {0.0, 1.0, 0.0, 1.0}};
    const Heatmap mid = upsample_heatmap(two, 3, 3);
    CHECK(mid.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("feature attribution ranking and dataset means") {
    const std::vector<double> g{0.1, -0.5, 0.3, 0.0, 0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0, -0.05};
    const auto ranked = feature_attribution(g);
    REQUIRE(ranked.size() == 15);
    CHECK(ranked[0].index == 1);  // |-0.5| ties |0.5|; lower index first
    CHECK(ranked[1].index == 4);
    CHECK(ranked[2].index == 2);
    CHECK(ranked[0].name == feature_names()[1]);

    Rng rng(11);
    std::vector<std::vector<double>> per_pass(50, std::vector<double>(15));
    for (auto& v : per_pass)
        for (double& x : v) x = rng.normal();
    const auto mean = mean_feature_gradients(per_pass);
    for (std::size_t i = 0; i < 15; ++i) {
        double acc = 0.0;
        for (const auto& v : per_pass) acc += v[i];
        CHECK(std::abs(mean[i] - acc / 50.0) <= 1e-12);
    }
    const std::vector<std::vector<double>> one{per_pass[0]};
    CHECK(mean_feature_gradients(one) == per_pass[0]);
}

TEST_CASE("report JSON, feature bars and overlay") {
    Rng rng(12);
    const ModelParams p = perturbed_params(ModelConfig::tiny(), 13);
    const ExplanationReport r = explain_pass(p, random_image(p.config(), rng), random_features(rng));
    const auto j = report_to_json(r);
    CHECK(j["v"] == kReportSchemaVersion);
    CHECK(j["ct_raw"].get<double>() == r.ct_raw);
    CHECK(j["ct_std"].is_null());
    CHECK(j["feature_grads"].size() == 15);
    CHECK(j["gradcam_upsampled"].size() == 16);  // rows
    CHECK(j["gradcam_upsampled"][0].size() == 16);
    const auto bars = feature_bars_json(r);
    CHECK(bars["bars"].size() == 15);
    CHECK(std::abs(bars["bars"][0]["gradient"].get<double>()) >= std::abs(bars["bars"][14]["gradient"].get<double>()));

    RasterImage img(16, 16);
    Heatmap h{16, 16, std::vector<double>(256, 0.0)};
    h.values[0] = 1.0;
    const RasterImage o = overlay_heatmap(img, h);
    CHECK(o.at(0, 0) == Rgb{191, 128, 128});  // white half-blended with the hot end (dark red)
    CHECK(o.at(5, 5) == Rgb{128, 128, 191});  // cold end (dark blue)
    Heatmap wrong{8, 8, std::vector<double>(64, 0.0)};
    CHECK_THROWS_AS(overlay_heatmap(img, wrong), InvalidInput);
}
