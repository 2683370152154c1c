#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "wsselect/label_models.hpp"

using namespace wss;

namespace {

LabelMatrix labels(std::size_t n, std::size_t m, std::vector<int> v, int C = 2) {
    return LabelMatrix{Matrix<int>(n, m, std::move(v)), C};
}

DawidSkeneModel hand_model(int C, std::size_t m, std::vector<double> prior, std::vector<double> confusion) {
    DawidSkeneModel d;
    d.num_classes = C;
    d.num_lfs = m;
    d.class_prior = std::move(prior);
    d.confusion = std::move(confusion);
    return d;
}

}  // namespace

TEST(MajorityVote, ModeAndVoteShares) {
    const auto p = majority_vote(labels(1, 4, {1, kAbstain, 1, 0}));
    EXPECT_EQ(p.hard[0], 1);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 0), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 1), 2.0 / 3.0);
}

TEST(MajorityVote, AllAbstainIsAbstain) {
    const auto p = majority_vote(labels(1, 2, {kAbstain, kAbstain}));
    EXPECT_EQ(p.hard[0], kAbstain);
    EXPECT_NO_THROW(validate(p));
}

TEST(MajorityVote, TieGoesToLowestClass) {
    EXPECT_EQ(majority_vote(labels(1, 2, {0, 1})).hard[0], 0);
    EXPECT_EQ(majority_vote(labels(1, 4, {2, 1, 2, 1}, 3)).hard[0], 1);
}

TEST(MajorityVote, PermutationInvariantOverLabelingFunctions) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> v(-1, 2);
    const std::size_t n = 300, m = 6;
    std::vector<int> data(n * m);
    for (int& x : data) x = v(rng);
    const auto base = majority_vote(labels(n, m, data, 3));
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 5; ++trial) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int> shuffled(n * m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < m; ++k) shuffled[i * m + k] = data[i * m + perm[k]];
        const auto p = majority_vote(labels(n, m, shuffled, 3));
        EXPECT_EQ(p.hard, base.hard);
        EXPECT_EQ(*p.soft, *base.soft);
    }
}

TEST(MajorityVote, OutputValidates) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> v(-1, 3);
    std::vector<int> data(200 * 5);
    for (int& x : data) x = v(rng);
    EXPECT_NO_THROW(validate(majority_vote(labels(200, 5, data, 4))));
}

TEST(ClassMarginals, CountsCoveredOnly) {
    PseudoLabeling p;
    p.hard = {1, 1, 0};
    EXPECT_EQ(class_marginals(p), (std::vector<double>{1.0 / 3.0, 2.0 / 3.0}));
    p.hard = {1, kAbstain, 1};
    EXPECT_EQ(class_marginals(p), (std::vector<double>{0.0, 1.0}));
    p.hard = {kAbstain, kAbstain};
    EXPECT_THROW(class_marginals(p), PreconditionError);
}

TEST(DawidSkenePosteriors, IdentityConfusion) {
    // Abstain column last, identity on the class columns.
    const auto m = hand_model(2, 2, {0.5, 0.5}, {1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0});
    const auto p = dawid_skene_posteriors(m, labels(1, 2, {1, 1}));
    EXPECT_EQ(p.hard[0], 1);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 0), 0.0);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 1), 1.0);
}

TEST(DawidSkenePosteriors, UniformConfusionGivesPrior) {
    std::vector<double> conf(3 * 3 * 4, 0.25);
    const auto m = hand_model(3, 3, {0.2, 0.3, 0.5}, conf);
    const auto p = dawid_skene_posteriors(m, labels(3, 3, {0, 1, 2, kAbstain, 2, 2, 1, 1, kAbstain}, 3));
    for (std::size_t i = 0; i < 3; ++i)
        for (int y = 0; y < 3; ++y) EXPECT_NEAR((*p.soft)(i, y), m.class_prior[y], 1e-12);
}

TEST(DawidSkenePosteriors, BayesRuleOracle) {
    // One LF with 80% accuracy and no abstention; votes 1 under prior [0.9, 0.1].
    const auto m = hand_model(2, 1, {0.9, 0.1}, {0.8, 0.2, 0.0, 0.2, 0.8, 0.0});
    const auto p = dawid_skene_posteriors(m, labels(1, 1, {1}));
    const double a = 0.9 * 0.2, b = 0.1 * 0.8;
    EXPECT_NEAR((*p.soft)(0, 0), a / (a + b), 1e-12);
    EXPECT_NEAR((*p.soft)(0, 1), b / (a + b), 1e-12);
    EXPECT_NEAR((*p.soft)(0, 0), 0.692, 5e-4);
    EXPECT_EQ(p.hard[0], 0);
}

TEST(DawidSkenePosteriors, AllAbstainRowGetsPrior) {
    const auto m = hand_model(2, 2, {0.7, 0.3}, {0.6, 0.2, 0.2, 0.2, 0.6, 0.2, 0.5, 0.3, 0.2, 0.3, 0.5, 0.2});
    const auto p = dawid_skene_posteriors(m, labels(1, 2, {kAbstain, kAbstain}));
    EXPECT_EQ(p.hard[0], kAbstain);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 0), 0.7);
    EXPECT_DOUBLE_EQ((*p.soft)(0, 1), 0.3);
}

TEST(DawidSkenePosteriors, DimensionMismatch) {
    const auto m = hand_model(2, 1, {0.5, 0.5}, {0.8, 0.2, 0.0, 0.2, 0.8, 0.0});
    EXPECT_THROW(dawid_skene_posteriors(m, labels(1, 2, {1, 1})), DimensionError);
    EXPECT_THROW(dawid_skene_posteriors(m, labels(1, 1, {1}, 3)), DimensionError);
}

TEST(DawidSkeneFit, TwoPerfectLabelingFunctions) {
    std::mt19937_64 rng(5);
    std::vector<int> data;
    for (int i = 0; i < 1000; ++i) {
        const int y = static_cast<int>(rng() % 2);
        data.push_back(y);
        data.push_back(y);
    }
    const auto m = dawid_skene_fit(labels(1000, 2, data));
    for (std::size_t k = 0; k < 2; ++k)
        for (int y = 0; y < 2; ++y) EXPECT_GE(m(k, y, y), 0.99);
}

TEST(DawidSkeneFit, SingleLabelingFunction) {
    std::mt19937_64 rng(8);
    std::vector<int> data;
    for (int i = 0; i < 2000; ++i) data.push_back(rng() % 10 < 7 ? 0 : 1);
    const auto lm = labels(2000, 1, data);
    const auto m = dawid_skene_fit(lm);
    // Only the vote marginal is identifiable from one function.
    EXPECT_NEAR(m.class_prior[0] * m(0, 0, 0) + m.class_prior[1] * m(0, 1, 0), 0.7, 0.02);
    EXPECT_GT(m(0, 0, 0), m(0, 0, 1));
    EXPECT_GT(m(0, 1, 1), m(0, 1, 0));
    const auto p = dawid_skene_posteriors(m, lm);
    for (std::size_t i = 0; i < lm.n(); ++i) EXPECT_EQ(p.hard[i], data[i]);
}

TEST(DawidSkeneFit, SingleLabelingFunctionWithoutSmoothing) {
    std::mt19937_64 rng(8);
    std::vector<int> data;
    for (int i = 0; i < 2000; ++i) data.push_back(rng() % 10 < 7 ? 0 : 1);
    DawidSkeneOptions o;
    o.smoothing = 0.0;
    const auto m = dawid_skene_fit(labels(2000, 1, data), o);
    EXPECT_EQ(m(0, 0, 0), 1.0);
    EXPECT_EQ(m(0, 1, 1), 1.0);
    const double zeros = static_cast<double>(std::count(data.begin(), data.end(), 0));
    EXPECT_DOUBLE_EQ(m.class_prior[0], zeros / 2000.0);
    EXPECT_EQ(m.iterations, 2);
}

TEST(DawidSkeneFit, AllAbstainIsPreconditionError) {
    EXPECT_THROW(dawid_skene_fit(labels(2, 2, {kAbstain, kAbstain, kAbstain, kAbstain})), PreconditionError);
}

TEST(DawidSkeneFit, UnvotedClassWarnsButFits) {
    std::vector<std::string> warnings;
    ScopedWarningSink sink([&](const std::string& w) { warnings.push_back(w); });
    const auto m = dawid_skene_fit(labels(4, 2, {0, 1, 1, 1, 0, 0, 1, 0}, 3));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("class 2"), std::string::npos);
    for (double c : m.confusion) EXPECT_TRUE(std::isfinite(c) && c > 0.0);
}

TEST(DawidSkeneFit, ModelInvariantsAndMonotoneObjective) {
    std::mt19937_64 rng(21);
    for (int C : {2, 3}) {
        const auto truth = oracle::random_ds_truth(C, 4, 0.3, rng);
        const auto lm = oracle::sample_ds(truth, 3000, rng);
        const auto m = dawid_skene_fit(lm);
        EXPECT_NEAR(std::accumulate(m.class_prior.begin(), m.class_prior.end(), 0.0), 1.0, 1e-8);
        for (std::size_t k = 0; k < m.num_lfs; ++k)
            for (int y = 0; y < C; ++y) {
                double s = 0;
                for (std::size_t c = 0; c < m.emissions(); ++c) s += m.confusion[m.index(k, y, 0) + c];
                EXPECT_NEAR(s, 1.0, 1e-8);
            }
        for (std::size_t t = 1; t < m.objective_trace.size(); ++t)
            EXPECT_GE(m.objective_trace[t], m.objective_trace[t - 1] - 1e-12) << "iteration " << t;
        const auto p = dawid_skene_posteriors(m, lm);
        for (std::size_t i = 0; i < lm.n(); ++i) {
            double s = 0;
            for (int y = 0; y < C; ++y) s += (*p.soft)(i, y);
            EXPECT_NEAR(s, 1.0, 1e-8);
        }
        EXPECT_NO_THROW(validate(p));
    }
}

TEST(DawidSkeneFit, RecoversGeneratingConfusion) {
    std::mt19937_64 rng(1234);
    const auto truth = oracle::random_ds_truth(2, 5, 0.0, rng);
    const auto lm = oracle::sample_ds(truth, 10000, rng);
    const auto m = dawid_skene_fit(lm);
    for (std::size_t k = 0; k < 5; ++k)
        for (int y = 0; y < 2; ++y)
            for (int c = 0; c < 2; ++c) EXPECT_NEAR(m(k, y, c), truth.confusion[k][y][c], 0.05);
}

TEST(DawidSkeneFit, DeterministicAcrossThreadCounts) {
    std::mt19937_64 rng(77);
    const auto truth = oracle::random_ds_truth(3, 5, 0.2, rng);
    const auto lm = oracle::sample_ds(truth, 2000, rng);
    setenv("WSSELECT_THREADS", "1", 1);
    const auto a = dawid_skene_fit(lm);
    setenv("WSSELECT_THREADS", "4", 1);
    const auto b = dawid_skene_fit(lm);
    unsetenv("WSSELECT_THREADS");
    EXPECT_EQ(a.confusion, b.confusion);
    EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(DawidSkeneFit, JsonKeysSorted) {
    const auto m = dawid_skene_fit(labels(3, 2, {0, 0, 1, 1, 0, 1}));
    const std::string s = to_json(m).dump();
    EXPECT_LT(s.find("\"class_prior\""), s.find("\"confusion\""));
    EXPECT_LT(s.find("\"confusion\""), s.find("\"num_classes\""));
}

TEST(DawidSkeneFit, RejectsBadOptions) {
    DawidSkeneOptions o;
    o.max_iters = 0;
    EXPECT_THROW(dawid_skene_fit(labels(1, 1, {0}), o), ParameterError);
    o = {};
    o.tol = 0;
    EXPECT_THROW(dawid_skene_fit(labels(1, 1, {0}), o), ParameterError);
}
