#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "metasel/datagen.hpp"
#include "metasel/odin.hpp"
#include "support/finite_diff.hpp"

using namespace metasel;
using metasel::testing::max_relative_error;
using metasel::testing::numeric_gradient;

namespace {

// Largest candidate t with fraction(id >= t) >= 0.95, by sweeping every observed value.
double brute_force_threshold(const std::vector<double>& id) {
    double best = -INFINITY;
    for (double t : id) {
        const auto hits = std::count_if(id.begin(), id.end(), [&](double v) { return v >= t; });
        if (static_cast<double>(hits) >= 0.95 * static_cast<double>(id.size()) - 1e-9) best = std::max(best, t);
    }
    return best;
}

Tensor random_image(std::mt19937_64& rng, Shape shape = {1, 16, 16}) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> px(shape_size(shape));
    for (auto& v : px) v = u(rng);
    return Tensor(shape, std::move(px));
}

const Classifier& trained_glyph_model() {
    static const Classifier m = [] {
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.seed = 1;
        return train(Arch::conv_small, gen_source(4, 150, 3), cfg);
    }();
    return m;
}

}  // namespace

TEST(OdinScore, UnitTemperatureNoPerturbationIsMaxSoftmax) {
    auto m = make_classifier(Arch::conv_small, {1, 16, 16}, 4, 2);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        auto x = random_image(rng);
        auto p = softmax(m.logits(x));
        EXPECT_NEAR(odin_score(m, x, {1.0, 0.0}), *std::max_element(p.begin(), p.end()), 1e-15);
    }
}

TEST(OdinScore, InUnitIntervalAndDeterministic) {
    const auto& m = trained_glyph_model();
    auto d = gen_source(4, 5, 77);
    for (const auto& x : d.inputs) {
        const double s = odin_score(m, x, {});
        EXPECT_GT(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_EQ(s, odin_score(m, x, {}));
    }
}

TEST(OdinScore, PerturbationRaisesScoreOnMostInDistributionInputs) {
    const auto& m = trained_glyph_model();
    auto d = gen_source(4, 125, 99);
    std::size_t ok = 0;
    for (const auto& x : d.inputs) {
        ok += odin_score(m, x, {1000.0, 0.0014}) >= odin_score(m, x, {1000.0, 0.0}) - 1e-9;
    }
    EXPECT_GE(static_cast<double>(ok) / d.size(), 0.95);
}

TEST(OdinScore, InvariantToConstantLogitShiftWithoutPerturbation) {
    auto m = make_classifier(Arch::mlp_small, {1, 8, 8}, 3, 4);
    auto shifted = m.clone();
    auto params = shifted.network().params();
    for (auto& b : params.back().mutable_data()) b += 2.5;
    std::mt19937_64 rng(3);
    for (double t : {1.0, 10.0, 1000.0}) {
        auto x = random_image(rng, {1, 8, 8});
        EXPECT_NEAR(odin_score(m, x, {t, 0.0}), odin_score(shifted, x, {t, 0.0}), 1e-12);
    }
}

TEST(OdinScore, InvalidConfigIsAConfigError) {
    auto m = make_classifier(Arch::mlp_small, {1, 4, 4}, 2, 1);
    auto x = Tensor::zeros({1, 4, 4});
    EXPECT_THROW(odin_score(m, x, {0.0, 0.001}), ConfigError);
    EXPECT_THROW(odin_score(m, x, {1.0, -0.1}), ConfigError);
    EXPECT_THROW(odin_score(m, Tensor::zeros({1, 5, 5}), {}), DimensionError);
}

TEST(OdinGradient, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = make_classifier(seed % 2 ? Arch::conv_small : Arch::mlp_small, {1, 6, 6}, 3, seed);
        std::mt19937_64 rng(seed + 100);
        auto x = random_image(rng, {1, 6, 6});
        const std::size_t pred = m.predict(x);
        for (double t : {1.0, 1000.0}) {
            auto g = odin_input_gradient(m, x, t);
            auto probe = x.clone();
            auto numeric = numeric_gradient(probe, [&] {
                return softmax_cross_entropy(scale(m.logits(probe), 1.0 / t), pred).item();
            }, 1e-5);
            double gmax = 0.0;
            for (double v : numeric) gmax = std::max(gmax, std::abs(v));
            EXPECT_LT(max_relative_error(g, numeric, 1e-3 * gmax), 1e-4) << "seed " << seed << " T " << t;
        }
    }
}

TEST(OdinPerturb, MovesEachPixelByEpsilonAgainstTheGradientSign) {
    auto m = make_classifier(Arch::mlp_small, {1, 6, 6}, 3, 8);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.2, 0.8);  // away from the clip boundary
    std::vector<double> px(36);
    for (auto& v : px) v = u(rng);
    Tensor x({1, 6, 6}, px);
    OdinConfig cfg{1000.0, 0.01};
    auto g = odin_input_gradient(m, x, cfg.temperature);
    auto xp = odin_perturb(m, x, cfg);
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double expected = g[i] > 0 ? px[i] - 0.01 : (g[i] < 0 ? px[i] + 0.01 : px[i]);
        EXPECT_DOUBLE_EQ(xp[i], expected);
    }
}

TEST(OdinPerturb, ClipsToUnitRange) {
    auto m = make_classifier(Arch::mlp_small, {1, 4, 4}, 2, 8);
    auto ones = Tensor({1, 4, 4}, std::vector<double>(16, 1.0));
    auto zeros = Tensor::zeros({1, 4, 4});
    for (const auto* x : {&ones, &zeros}) {
        auto xp = odin_perturb(m, *x, {1.0, 0.5});
        for (double v : xp.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Calibration, NineteenHighOneLow) {
    std::vector<double> id(19, 0.9);
    id.push_back(0.1);
    std::vector<double> ood{0.5};
    auto cal = calibrate_threshold(id, ood);
    EXPECT_LE(cal.threshold, 0.9);
    EXPECT_GE(cal.achieved_tpr, 0.95);
    EXPECT_EQ(cal.threshold, 0.9);
    EXPECT_EQ(cal.achieved_fpr, 0.0);
}

TEST(Calibration, PerfectlySeparatedHasZeroFpr) {
    std::vector<double> id, ood;
    for (int i = 0; i < 50; ++i) {
        id.push_back(0.6 + 0.001 * i);
        ood.push_back(0.1 + 0.001 * i);
    }
    EXPECT_EQ(calibrate_threshold(id, ood).achieved_fpr, 0.0);
}

TEST(Calibration, MatchesBruteForceSweep) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> size(1, 300);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> id(static_cast<std::size_t>(size(rng)));
        for (auto& v : id) v = std::round(u(rng) * 40) / 40;  // force ties
        std::vector<double> ood{0.5};
        auto cal = calibrate_threshold(id, ood);
        EXPECT_EQ(cal.threshold, brute_force_threshold(id));
        if (id.size() >= 20) {
            EXPECT_GE(cal.achieved_tpr, 0.95);
        }
    }
}

TEST(Calibration, SameDistributionFprNearTpr) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> id(4000), ood(4000);
    for (auto& v : id) v = u(rng);
    for (auto& v : ood) v = u(rng);
    auto cal = calibrate_threshold(id, ood);
    EXPECT_NEAR(cal.achieved_fpr, 0.95, 0.02);  // about 5 binomial sd
}

TEST(Calibration, EmptyListIsADataError) {
    std::vector<double> some{0.5}, none;
    EXPECT_THROW(calibrate_threshold(none, some), DataError);
    EXPECT_THROW(calibrate_threshold(some, none), DataError);
}

TEST(InDistribution, BoundaryIsInclusive) {
    OdinCalibration cal;
    cal.threshold = 0.4;
    EXPECT_TRUE(is_in_distribution(0.4, cal));
    EXPECT_FALSE(is_in_distribution(std::nextafter(0.4, 0.0), cal));
    EXPECT_TRUE(is_in_distribution(0.7, cal));
}

TEST(ShufflePixels, PermutesEachImage) {
    auto d = gen_source(2, 3, 1);
    auto s = shuffle_pixels(d, 4);
    EXPECT_EQ(s.labels, d.labels);
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<double> a(d.inputs[i].data().begin(), d.inputs[i].data().end());
        std::vector<double> b(s.inputs[i].data().begin(), s.inputs[i].data().end());
        EXPECT_NE(a, b);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        EXPECT_EQ(a, b);
    }
}
