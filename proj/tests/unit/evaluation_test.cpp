#include "riskstack/evaluation.hpp"
#include "riskstack/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace riskstack;

namespace {

__extension__ typedef __int128 i128;

auto choose(long n, long k) -> i128
{
    if (k < 0 || k > n) return 0;
    i128 r = 1;
    for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

struct FisherOracle {
    double two_sided;
    double lower;
    double point;
};

// exact integer enumeration of every table with the observed margins
auto fisher_oracle(long a, long b, long c, long d) -> FisherOracle
{
    const long r1 = a + b, r2 = c + d, c1 = a + c;
    const i128 total = choose(r1 + r2, c1);
    const i128 observed = choose(r1, a) * choose(r2, c1 - a);
    i128 two = 0, low = 0;
    for (long x = 0; x <= c1; ++x) {
        const i128 w = choose(r1, x) * choose(r2, c1 - x);
        if (w == 0) continue;
        if (w <= observed) two += w;
        if (x <= a) low += w;
    }
    const auto t = static_cast<double>(total);
    return {static_cast<double>(two) / t, static_cast<double>(low) / t, static_cast<double>(observed) / t};
}

auto pairwise_auc(const std::vector<double>& s, const Labels& y) -> double
{
    double num = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
                pairs += 1;
            }
    return num / pairs;
}

} // namespace

TEST(Metrics, DeathCohortSensitivities)
{
    const auto a = metrics({125, 280, 11, 11});
    EXPECT_NEAR(a.recall.value, 125.0 / 136.0, 1e-15);
    EXPECT_NEAR(a.recall.value, 0.91912, 5e-4);
    EXPECT_NEAR(a.recall.value, 0.919, 5e-4);
    const auto b = metrics({31, 68, 5, 3});
    EXPECT_NEAR(b.recall.value, 31.0 / 34.0, 1e-15);
    EXPECT_NEAR(b.recall.value, 0.9118, 5e-4);
    EXPECT_LT(fisher_exact(125, 11, 11, 280).p_value, 1e-3);
}

TEST(Metrics, FormulasAgainstArithmetic)
{
    Xoshiro256 g(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const ConfusionMatrix cm{static_cast<long>(g.below(50)), static_cast<long>(g.below(50)), static_cast<long>(g.below(50)),
                                 static_cast<long>(g.below(50)) + 1};
        const auto r = metrics(cm);
        const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
        const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
        EXPECT_EQ(r.accuracy.value, (tp + tn) / (tp + tn + fp + fn));
        EXPECT_EQ(r.recall.value, tp + fn > 0 ? tp / (tp + fn) : 0.0);
        EXPECT_EQ(r.precision.value, tp + fp > 0 ? tp / (tp + fp) : 0.0);
        EXPECT_EQ(r.specificity.value, tn + fp > 0 ? tn / (tn + fp) : 0.0);
        const double p = r.precision.value, rc = r.recall.value;
        if (p + rc > 0) {
            EXPECT_EQ(r.f1.value, 2 * (p * rc) / (p + rc));
            EXPECT_NEAR(r.f1.value, 2 * tp / (2 * tp + fp + fn), 1e-12);
        } else {
            EXPECT_TRUE(r.f1.degenerate);
        }
        EXPECT_EQ(r.accuracy.ci, 1.96 * std::sqrt(r.accuracy.value * (1 - r.accuracy.value) / (tp + tn + fp + fn)));
    }
}

TEST(Metrics, PerfectAndDegenerate)
{
    const auto r = metrics({10, 5, 0, 0});
    for (const auto& e : {r.accuracy, r.precision, r.recall, r.f1, r.specificity}) EXPECT_EQ(e.value, 1.0);
    const auto d = metrics({0, 5, 0, 0});
    EXPECT_TRUE(d.recall.degenerate);
    EXPECT_TRUE(d.precision.degenerate);
    EXPECT_EQ(d.recall.value, 0.0);
    EXPECT_THROW((void)metrics({}), InvalidArgument);
}

TEST(Metrics, WeightedReport)
{
    const ConfusionMatrix cm{40, 30, 10, 20};
    const auto w = weighted_report(cm);
    const double f1_pos = 2.0 * 40 / (2 * 40 + 10 + 20);
    const double f1_neg = 2.0 * 30 / (2 * 30 + 20 + 10);
    EXPECT_NEAR(w.f1.value, (60 * f1_pos + 40 * f1_neg) / 100, 1e-12);
    EXPECT_EQ(w.accuracy.value, 0.7);
    EXPECT_TRUE(w.weighted);

    const auto eq = weighted_report({40, 40, 10, 10});
    EXPECT_NEAR(eq.precision.value, 0.8, 1e-12);

    const auto one = weighted_report({8, 0, 0, 2});
    EXPECT_EQ(one.support_negative, 0);
    EXPECT_EQ(one.recall.value, 0.8);
    EXPECT_EQ(one.precision.value, 1.0);
    EXPECT_EQ(one.f1.value, metrics({8, 0, 0, 2}).f1.value);
}

TEST(Roc, PairwiseOracle)
{
    Xoshiro256 g(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 10 + g.below(191);
        std::vector<double> s(n);
        Labels y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(g.below(2));
            s[i] = static_cast<double>(g.below(20)) / 4.0 + y[i] * 0.5;
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(roc_auc(s, y).auc, pairwise_auc(s, y), 1e-9);
    }
}

TEST(Roc, ShapeAndEdgeCases)
{
    const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
    const Labels y{1, 1, 0, 0};
    const auto c = roc_auc(s, y);
    EXPECT_EQ(c.auc, 1.0);
    EXPECT_EQ(c.fpr.front(), 0.0);
    EXPECT_EQ(c.tpr.front(), 0.0);
    EXPECT_EQ(c.fpr.back(), 1.0);
    EXPECT_EQ(c.tpr.back(), 1.0);
    for (std::size_t i = 1; i < c.fpr.size(); ++i) {
        EXPECT_GE(c.fpr[i], c.fpr[i - 1]);
        EXPECT_GE(c.tpr[i], c.tpr[i - 1]);
    }
    EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5}, Labels{0, 1}).auc, 0.5);
    EXPECT_THROW((void)roc_auc(std::vector<double>{0.1, 0.2}, Labels{1, 1}), InvalidArgument);
}

TEST(Roc, NullScoresNearHalf)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Xoshiro256 g(seed);
        std::vector<double> s(200);
        Labels y(200);
        for (std::size_t i = 0; i < 200; ++i) {
            s[i] = g.uniform();
            y[i] = static_cast<int>(i % 2);
        }
        const double auc = roc_auc(s, y).auc;
        EXPECT_GE(auc, 0.4);
        EXPECT_LE(auc, 0.6);
    }
}

TEST(Calibration, TrueProbabilitiesAreCalibrated)
{
    Xoshiro256 g(3);
    std::vector<double> p(10000);
    Labels y(10000);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = g.uniform();
        y[i] = g.uniform() < p[i];
    }
    const auto c = calibration_curve(p, y);
    EXPECT_EQ(c.bins.size(), 10u);
    EXPECT_LT(c.max_gap, 0.05);
    long total = 0;
    for (std::size_t b = 0; b < c.bins.size(); ++b) {
        total += c.bins[b].count;
        EXPECT_NEAR(c.bins[b].lower, static_cast<double>(b) / 10, 1e-15);
        EXPECT_NEAR(c.bins[b].upper, static_cast<double>(b + 1) / 10, 1e-15);
    }
    EXPECT_EQ(total, 10000);
}

TEST(Calibration, DegenerateInputs)
{
    const auto half = calibration_curve(std::vector<double>{0.5, 0.5, 0.5, 0.5}, Labels{0, 1, 0, 1});
    ASSERT_EQ(half.bins.size(), 1u);
    EXPECT_EQ(half.bins[0].observed, 0.5);
    const auto perfect = calibration_curve(std::vector<double>{0.0, 1.0, 1.0}, Labels{0, 1, 1});
    ASSERT_EQ(perfect.bins.size(), 2u);
    EXPECT_EQ(perfect.max_gap, 0.0);
    EXPECT_THROW((void)calibration_curve(std::vector<double>{1.5}, Labels{1}), InvalidArgument);
}

TEST(DecisionCurve, HandCountedExample)
{
    const std::vector<double> p{0.9, 0.8, 0.6, 0.4, 0.3, 0.1};
    const Labels y{1, 0, 1, 1, 0, 0};
    const std::vector<double> pts{0.25, 0.5, 0.7};
    const auto c = decision_curve(p, y, pts);
    // pt 0.25: treat 5, TP 3, FP 2
    EXPECT_NEAR(c.model[0], 3.0 / 6 - 2.0 / 6 * (0.25 / 0.75), 1e-15);
    // pt 0.5: treat 3, TP 2, FP 1
    EXPECT_NEAR(c.model[1], 2.0 / 6 - 1.0 / 6, 1e-15);
    // pt 0.7: treat 2, TP 1, FP 1
    EXPECT_NEAR(c.model[2], 1.0 / 6 - 1.0 / 6 * (0.7 / 0.3), 1e-15);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_EQ(c.treat_none[i], 0.0);
        EXPECT_NEAR(c.treat_all[i], 0.5 - 0.5 * pts[i] / (1 - pts[i]), 1e-15);
    }
    EXPECT_THROW((void)decision_curve(p, y, std::vector<double>{1.0}), InvalidArgument);
}

TEST(DecisionCurve, PerfectClassifierBoundsEveryModel)
{
    Xoshiro256 g(4);
    std::vector<double> p(300), perfect(300);
    Labels y(300);
    for (std::size_t i = 0; i < 300; ++i) {
        y[i] = g.uniform() < 0.4;
        p[i] = std::clamp(0.4 * y[i] + 0.6 * g.uniform(), 0.0, 1.0);
        perfect[i] = y[i];
    }
    const auto grid = threshold_grid();
    const auto m = decision_curve(p, y, grid);
    const auto best = decision_curve(perfect, y, grid);
    const double prevalence = static_cast<double>(count_positive(y)) / 300;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_LE(m.model[i], best.model[i] + 1e-15);
        EXPECT_NEAR(best.model[i], prevalence, 1e-15);
    }
    const auto all = decision_curve(std::vector<double>(300, 1.0), y, std::vector<double>{1e-9});
    EXPECT_NEAR(all.model[0], prevalence, 1e-8);
}

TEST(Fisher, EnumerationOracle)
{
    Xoshiro256 g(5);
    for (int trial = 0; trial < 300; ++trial) {
        const long a = static_cast<long>(g.below(16)), b = static_cast<long>(g.below(16));
        const long c = static_cast<long>(g.below(16)), d = static_cast<long>(g.below(16));
        if (a + b + c + d == 0) continue;
        const auto r = fisher_exact(a, b, c, d);
        const auto o = fisher_oracle(a, b, c, d);
        EXPECT_NEAR(r.p_value, std::min(1.0, o.two_sided), 1e-12 * std::max(1e-300, o.two_sided)) << a << ' ' << b << ' ' << c << ' ' << d;
    }
}

TEST(Fisher, WorkedTable)
{
    const auto o = fisher_oracle(1, 9, 11, 3);
    // 0.001346 is the probability of the observed table itself
    EXPECT_NEAR(o.point, 0.001346, 5e-7);
    EXPECT_NEAR(o.lower, 0.001380, 5e-7);
    EXPECT_NEAR(o.two_sided, 0.002759, 5e-7);
    EXPECT_NEAR(fisher_exact(1, 9, 11, 3).p_value, o.two_sided, 1e-15);
}

TEST(Fisher, IndependentTableGivesOne)
{
    EXPECT_NEAR(fisher_exact(5, 5, 5, 5).p_value, 1.0, 1e-12);
    EXPECT_EQ(fisher_exact(0, 0, 0, 0).p_value, 1.0);
    EXPECT_THROW((void)fisher_exact(-1, 0, 0, 0), InvalidArgument);
}

TEST(ChiSquare, GenderCounts)
{
    const double n = 159 + 237 + 149 + 385;
    const double r1 = 159 + 237, r2 = 149 + 385, c1 = 159 + 149, c2 = 237 + 385;
    const double obs[4] = {159, 237, 149, 385};
    const double exp[4] = {r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n};
    double oracle = 0;
    for (int i = 0; i < 4; ++i) oracle += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
    const auto r = chi_square(159, 237, 149, 385);
    EXPECT_NEAR(r.statistic, oracle, 1e-9);
    EXPECT_NEAR(r.statistic, 15.41, 1e-2);
    EXPECT_LT(r.p_value, 1e-3);
    EXPECT_THROW((void)chi_square(0, 0, 1, 1), InvalidArgument);
}

TEST(Wilcoxon, SymmetryAndSeparation)
{
    const std::vector<double> a{1, 2, 3, 4}, b{1, 2, 3, 4};
    const auto same = wilcoxon_rank_sum(a, b);
    EXPECT_NEAR(same.statistic, 0.0, 1e-12);
    EXPECT_NEAR(same.p_value, 1.0, 1e-12);

    const std::vector<double> lo{1, 2, 3}, hi{10, 11, 12};
    const auto sep = wilcoxon_rank_sum(lo, hi);
    // rank sum 6, mean 10.5, variance 3*3*7/12
    EXPECT_NEAR(sep.statistic, (6 - 10.5) / std::sqrt(9.0 * 7 / 12), 1e-12);
    EXPECT_LT(sep.p_value, 0.05);
    EXPECT_NEAR(wilcoxon_rank_sum(hi, lo).statistic, -sep.statistic, 1e-12);
    EXPECT_THROW((void)wilcoxon_rank_sum(lo, std::vector<double>{}), InvalidArgument);
}

TEST(Wilcoxon, TieCorrection)
{
    const std::vector<double> a{1, 2, 2}, b{2, 3, 4};
    // ranks: 1, 3, 3 | 3, 5, 6 ; one tie group of size 3
    const double var = 9.0 / 12 * (7 - (27.0 - 3) / 30);
    EXPECT_NEAR(wilcoxon_rank_sum(a, b).statistic, (7 - 10.5) / std::sqrt(var), 1e-12);
}
