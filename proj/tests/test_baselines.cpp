#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metasel/baselines.hpp"
#include "metasel/datagen.hpp"
#include "support/oracles.hpp"

using namespace metasel;

namespace {

std::vector<double> random_probs(std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> logits(c);
    for (auto& v : logits) v = n(rng);
    return softmax(logits);
}

std::vector<double> random_vec(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(d);
    for (auto& x : v) x = n(rng);
    return v;
}

}  // namespace

TEST(Gini, HandValues) {
    EXPECT_NEAR(gini(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.75, 1e-15);
    EXPECT_EQ(gini(std::vector<double>{0, 1, 0}), 0.0);
    EXPECT_NEAR(gini(std::vector<double>{0.5, 0.3, 0.2}), 0.62, 1e-15);
}

TEST(Vanilla, HandValues) {
    EXPECT_EQ(vanilla(std::vector<double>{0, 0, 1}), 0.0);
    EXPECT_EQ(vanilla(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.75);
    EXPECT_EQ(vanilla(std::vector<double>{0.5, 0.3, 0.2}), 0.5);
}

TEST(Margin, HandValues) {
    EXPECT_EQ(margin_suspiciousness(std::vector<double>{1, 0}), 0.0);
    EXPECT_EQ(margin_suspiciousness(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 1.0);
    EXPECT_NEAR(margin_suspiciousness(std::vector<double>{0.5, 0.3, 0.2}), 0.8, 1e-15);
    EXPECT_THROW(margin_suspiciousness(std::vector<double>{1.0}), ConfigError);
}

TEST(Uncertainty, NonNormalizedInputIsADataError) {
    const std::vector<double> bad{0.5, 0.6};
    EXPECT_THROW(gini(bad), DataError);
    EXPECT_THROW(vanilla(bad), DataError);
    EXPECT_THROW(margin_suspiciousness(bad), DataError);
    EXPECT_THROW(gini(std::vector<double>{1.2, -0.2}), DataError);
}

TEST(Uncertainty, MatchOraclesAndRanges) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t c = 2 + t % 9;
        auto p = random_probs(c, rng);
        const double g = gini(p), v = vanilla(p), m = margin_suspiciousness(p);
        EXPECT_NEAR(g, oracle::gini(p), 1e-12);
        EXPECT_NEAR(v, oracle::vanilla(p), 1e-15);
        EXPECT_NEAR(m, oracle::margin(p), 1e-15);
        const double cap = 1.0 - 1.0 / static_cast<double>(c);
        EXPECT_GE(g, -1e-15);
        EXPECT_LE(g, cap + 1e-12);
        EXPECT_LE(v, cap + 1e-12);
        EXPECT_GE(m, 0.0);
        EXPECT_LE(m, 1.0);
    }
}

TEST(NeighborIndex, TiesBrokenByIndexAndSelfExclusion) {
    NeighborIndex idx({{0.0}, {1.0}, {-1.0}, {0.0}}, 3);
    auto hits = idx.query(std::vector<double>{0.0});
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].index, 0u);
    EXPECT_EQ(hits[1].index, 3u);
    EXPECT_EQ(hits[2].index, 1u);
    auto ex = idx.query(std::vector<double>{0.0}, 0);
    EXPECT_EQ(ex[0].index, 3u);
    EXPECT_THROW(NeighborIndex({{1.0}}, 0), ConfigError);
}

TEST(NeighborIndex, CosineDistance) {
    EXPECT_NEAR(distance(std::vector<double>{1, 0}, std::vector<double>{0, 2}, Metric::cosine), 1.0, 1e-15);
    EXPECT_NEAR(distance(std::vector<double>{1, 1}, std::vector<double>{2, 2}, Metric::cosine), 0.0, 1e-15);
}

TEST(NnsSmooth, HandValuesAndIdentities) {
    auto s = nns_smooth(std::vector<double>{0.8, 0.2}, {{0.6, 0.4}, {0.4, 0.6}}, 0.5);
    EXPECT_NEAR(s[0], 0.65, 1e-15);
    EXPECT_NEAR(s[1], 0.35, 1e-15);
    auto same = nns_smooth(std::vector<double>{0.7, 0.3}, {{0.1, 0.9}}, 1.0);
    EXPECT_EQ(same, (std::vector<double>{0.7, 0.3}));
    auto nb = nns_smooth(std::vector<double>{0.7, 0.3}, {{0.1, 0.9}}, 0.0);
    EXPECT_EQ(nb, (std::vector<double>{0.1, 0.9}));
    EXPECT_THROW(nns_smooth(std::vector<double>{0.5, 0.5}, {}, 0.5), DataError);
    EXPECT_THROW(nns_smooth(std::vector<double>{0.5, 0.5}, {{0.5, 0.5}}, 1.5), ConfigError);
}

TEST(Nns, MatchesBruteForceOracle) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 5 + t % 40, c = 2 + t % 5;
        std::vector<std::vector<double>> probs, traces;
        for (std::size_t i = 0; i < n; ++i) {
            probs.push_back(random_probs(c, rng));
            traces.push_back(random_vec(4, rng));
        }
        NnsConfig cfg{1 + static_cast<std::size_t>(t % 12), 0.3 + 0.005 * t, Metric::euclidean};
        auto s = nns_scores(probs, traces, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(s[i], oracle::nns(probs, traces, i, cfg.k, cfg.alpha), 1e-12);
            auto nb = NeighborIndex(traces, cfg.k).query(traces[i], i);
            std::vector<std::vector<double>> np;
            for (auto h : nb) np.push_back(probs[h.index]);
            auto sm = nns_smooth(probs[i], np, cfg.alpha);
            double sum = 0;
            for (double v : sm) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Datis, HandValues) {
    std::vector<LabeledNeighbor> same{{{1.0, 0.0}, 2}, {{0.0, 1.0}, 2}};
    EXPECT_EQ(datis(std::vector<double>{0, 0}, 2, same, 1.0, 3), 0.0);
    std::vector<LabeledNeighbor> split{{{1.0, 0.0}, 0}, {{0.0, 1.0}, 1}};
    auto p = datis_support(std::vector<double>{0, 0}, split, 1.0, 2);
    EXPECT_NEAR(p[0], 0.5, 1e-15);
    EXPECT_NEAR(p[1], 0.5, 1e-15);
    EXPECT_NEAR(datis(std::vector<double>{0, 0}, 0, split, 1.0, 2), 1.0, 1e-15);
}

TEST(Datis, NoSupportForPredictionIsInfinite) {
    std::vector<LabeledNeighbor> nb{{{1.0}, 1}, {{2.0}, 1}};
    EXPECT_TRUE(std::isinf(datis(std::vector<double>{0}, 0, nb, 1.0, 2)));
}

TEST(Datis, FarNeighborsDoNotUnderflow) {
    std::vector<LabeledNeighbor> nb{{{100.0}, 0}, {{101.0}, 1}};
    const double s = datis(std::vector<double>{0}, 0, nb, 1.0, 2);
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_NEAR(s, std::exp(-(101.0 * 101.0 - 100.0 * 100.0)), 1e-100);
}

TEST(Datis, DistanceScalingEqualsTemperatureScaling) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        std::vector<LabeledNeighbor> nb, scaled;
        const double s = 1.7;
        auto z = random_vec(3, rng);
        std::vector<double> zs(z);
        for (auto& v : zs) v *= s;
        for (int k = 0; k < 6; ++k) {
            auto l = random_vec(3, rng);
            const std::size_t label = static_cast<std::size_t>(k % 3);
            nb.push_back({l, label});
            for (auto& v : l) v *= s;
            scaled.push_back({l, label});
        }
        const double lhs = datis(zs, 1, scaled, 2.0, 3), rhs = datis(z, 1, nb, 2.0 / (s * s), 3);
        EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(rhs)));
    }
}

TEST(Datis, MatchesHighPrecisionOracle) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        const std::size_t c = 2 + t % 4, n_train = 30;
        std::vector<std::vector<double>> train;
        std::vector<std::size_t> labels;
        std::uniform_int_distribution<std::size_t> lab(0, c - 1);
        for (std::size_t i = 0; i < n_train; ++i) {
            train.push_back(random_vec(3, rng));
            labels.push_back(lab(rng));
        }
        auto z = random_vec(3, rng);
        const std::size_t pred = lab(rng);
        DatisConfig cfg{5, 0.5 + 0.05 * t};
        auto s = datis_scores({z}, std::vector<std::size_t>{pred}, train, labels, c, cfg);
        auto nn = oracle::knn(train, z, cfg.k);
        std::vector<std::vector<double>> lat;
        std::vector<std::size_t> lb;
        for (auto i : nn) {
            lat.push_back(train[i]);
            lb.push_back(labels[i]);
        }
        const double expect = oracle::datis(z, pred, lat, lb, cfg.tau, c);
        if (std::isinf(expect)) {
            EXPECT_TRUE(std::isinf(s[0]));
        } else {
            EXPECT_LE(std::abs(s[0] - expect), 1e-10 * std::max(1.0, std::abs(expect)));
        }
    }
}

TEST(Dsa, ZeroOnSameClassTraceAndMidpointGeometry) {
    auto ref = SAReference::build({{0.0, 0.0}, {2.0, 0.0}}, std::vector<std::size_t>{0, 1}, 2);
    EXPECT_EQ(ref.dsa(std::vector<double>{0.0, 0.0}, 0), 0.0);
    // Test point at distance 2 from its class trace, which lies 2 from the other class.
    EXPECT_EQ(ref.dsa(std::vector<double>{-2.0, 0.0}, 0), 1.0);
    EXPECT_EQ(ref.dsa(std::vector<double>{0.0, 2.0}, 0), 1.0);
}

TEST(Dsa, MatchesBruteForceOracleExactly) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 20 + 6 * t, c = 3;
        std::vector<std::vector<double>> traces;
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < n; ++i) {
            traces.push_back(random_vec(5, rng));
            labels.push_back(i % c);
        }
        auto ref = SAReference::build(traces, labels, c);
        for (int q = 0; q < 5; ++q) {
            auto x = random_vec(5, rng);
            const std::size_t pred = static_cast<std::size_t>(q) % c;
            EXPECT_EQ(ref.dsa(x, pred), oracle::dsa(traces, labels, x, pred));
        }
    }
}

TEST(Dsa, MissingClassIsADataError) {
    auto ref = SAReference::build({{0.0}, {1.0}}, std::vector<std::size_t>{0, 0}, 2);
    EXPECT_THROW(ref.dsa(std::vector<double>{0.5}, 1), DataError);
    EXPECT_THROW(ref.dsa(std::vector<double>{0.5}, 0), DataError);
}

TEST(Lsa, OneDimensionalClosedForm) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::vector<double>> traces;
        std::vector<double> flat;
        for (int i = 0; i < 10 + t; ++i) {
            flat.push_back(random_vec(1, rng)[0]);
            traces.push_back({flat.back()});
        }
        auto ref = SAReference::build(traces, std::vector<std::size_t>(traces.size(), 0), 1);
        for (double x : {-1.5, 0.0, 0.3, 2.0}) {
            EXPECT_NEAR(ref.lsa(std::vector<double>{x}, 0), oracle::lsa_1d(flat, x), 1e-9);
        }
    }
}

TEST(Lsa, DensityIntegratesToOne) {
    std::vector<std::vector<double>> pts{{-1.0}, {0.2}, {0.5}, {2.0}, {2.1}};
    Eigen::MatrixXd m(5, 1);
    for (int i = 0; i < 5; ++i) m(i, 0) = pts[static_cast<std::size_t>(i)][0];
    GaussianKde kde(m);
    double integral = 0.0;
    const double step = 1e-3;
    for (double x = -15.0; x <= 18.0; x += step) {
        Eigen::VectorXd v(1);
        v(0) = x;
        integral += std::exp(kde.log_density(v)) * step;
    }
    EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(Lsa, SymmetricPairMinimumAtMidpoint) {
    auto ref = SAReference::build({{-1.0}, {1.0}}, std::vector<std::size_t>{0, 0}, 1);
    const double mid = ref.lsa(std::vector<double>{0.0}, 0);
    for (double x : {-1.0, -0.8, -0.4, -0.1, 0.1, 0.4, 0.8, 1.0}) EXPECT_LE(mid, ref.lsa(std::vector<double>{x}, 0));
}

TEST(Lsa, SingularBandwidthIsANumericErrorWithDiagnostics) {
    // Perfectly collinear 2-D traces give a rank-one covariance.
    auto ref = SAReference::build({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}}, std::vector<std::size_t>{0, 0, 0}, 1);
    try {
        ref.lsa(std::vector<double>{0.5, 0.5}, 0);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("singular"), std::string::npos);
    }
}

TEST(Lsa, LowVarianceDimensionsAreDropped) {
    auto ref = SAReference::build({{0.0, 5.0}, {1.0, 5.0}, {3.0, 5.0}}, std::vector<std::size_t>{0, 0, 0}, 1);
    EXPECT_NEAR(ref.lsa(std::vector<double>{0.7, 123.0}, 0), oracle::lsa_1d({0.0, 1.0, 3.0}, 0.7), 1e-9);
}

TEST(Mdsa, MeanIsZeroAndIdentityIsEuclidean) {
    // Four points with unit sample covariance along both axes.
    const double a = std::sqrt(1.5);
    std::vector<std::vector<double>> pts{{a, 0}, {-a, 0}, {0, a}, {0, -a}};
    auto ref = SAReference::build(pts, std::vector<std::size_t>{0, 0, 0, 0}, 1, {1e-5, 0.0});
    EXPECT_NEAR(ref.mdsa(std::vector<double>{0, 0}, 0), 0.0, 1e-12);
    EXPECT_NEAR(ref.mdsa(std::vector<double>{3, 4}, 0), 5.0, 1e-12);
}

TEST(Mdsa, AnisotropicHandInverse) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 100; ++t) {
        std::vector<std::vector<double>> pts;
        for (int i = 0; i < 12; ++i) {
            auto v = random_vec(2, rng);
            pts.push_back({2.0 * v[0] + 0.5 * v[1], 0.3 * v[1]});
        }
        auto ref = SAReference::build(pts, std::vector<std::size_t>(pts.size(), 0), 1);
        auto x = random_vec(2, rng);
        EXPECT_NEAR(ref.mdsa(x, 0), oracle::mdsa_2d(pts, x, 1e-6), 1e-9);
    }
}

TEST(Ensemble, VariationCountExtremes) {
    const std::vector<std::size_t> agree(5, 2), disagree{0, 1, 3, 0, 1};
    EXPECT_EQ(variation_count(2, agree), 0u);
    EXPECT_EQ(variation_count(2, disagree), 5u);
}

TEST(Ensemble, LogisticFitOnSeparableToyData) {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 60; ++i) {
        const double g = u(rng), v = std::floor(u(rng) * 6);
        x.push_back({g, v});
        y.push_back(g + 0.2 * v > 1.0 ? 1 : 0);
    }
    LogisticRegression lr;
    lr.fit(x, y);
    int hits = 0;
    for (std::size_t i = 0; i < x.size(); ++i) hits += (lr.predict_proba(x[i]) >= 0.5) == (y[i] == 1);
    EXPECT_EQ(hits, 60);
    std::vector<int> ones(60, 1);
    EXPECT_THROW(lr.fit(x, ones), DataError);
}

TEST(Ensemble, ScoresAreProbabilitiesForEveryTestInput) {
    auto train_set = gen_source(3, 20, 1);
    auto test_set = gen_source(3, 10, 2);
    auto mut = make_classifier(Arch::mlp_small, {1, 16, 16}, 3, 3);
    EnsembleConfig cfg;
    cfg.train.epochs = 1;
    auto s = ensemble_metamodel_scores(mut, train_set, train_set, test_set, cfg);
    ASSERT_EQ(s.size(), test_set.size());
    for (double v : s) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(RankWith, GiniOrderInvariantToIncreasingTransform) {
    std::mt19937_64 rng(9);
    BaselineInputs in;
    in.num_classes = 4;
    for (int i = 0; i < 50; ++i) in.probs.push_back(random_probs(4, rng));
    auto r = rank_with("gini", in);
    EXPECT_EQ(r.size(), 50u);
    auto g = baseline_scores("gini", in);
    for (auto& v : g) v = std::exp(3.0 * v) + 1.0;
    EXPECT_EQ(Ranking::from_scores(g).order(), r.order());
}

TEST(RankWith, IdenticalScoresGiveIdenticalOrders) {
    BaselineInputs in;
    in.num_classes = 2;
    for (int i = 0; i < 6; ++i) in.probs.push_back({0.5, 0.5});
    in.precomputed = std::vector<double>(6, 0.3);
    EXPECT_EQ(rank_with("gini", in).order(), rank_with("ensemble", in).order());
    EXPECT_EQ(rank_with("vanilla", in).order(), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(RankWith, UnknownOrUnpreparedMethodIsAConfigError) {
    BaselineInputs in;
    in.probs = {{0.5, 0.5}};
    EXPECT_THROW(rank_with("prima", in), ConfigError);
    EXPECT_THROW(rank_with("dsa", in), ConfigError);
    EXPECT_THROW(rank_with("ensemble", in), ConfigError);
}
