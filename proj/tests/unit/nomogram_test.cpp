#include "riskstack/nomogram.hpp"
#include "riskstack/rng.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

using namespace riskstack;

namespace {

constexpr long double b0 = 11.23907L, b1 = -14.85299L, b2 = -5.028269L, b3 = -1.788734L;

auto oracle_probability(long double m1, long double m2, long double m3) -> long double
{
    const long double lp = b0 + b1 * m1 + b2 * m2 + b3 * m3;
    return 1.0L / (1.0L + expl(-lp));
}

auto at(const NomogramModel& m, double a, double b, double c) -> double
{
    const std::array<double, 3> s{a, b, c};
    return linear_prediction(m, s);
}

auto prob(const NomogramModel& m, double a, double b, double c) -> double
{
    const std::array<double, 3> s{a, b, c};
    return death_probability(m, s);
}

struct Sim {
    Matrix x;
    Labels y;
};

auto simulate(Index n, const std::array<double, 4>& beta, std::uint64_t seed) -> Sim
{
    Xoshiro256 g(seed);
    Sim s{Matrix(n, 3), Labels(static_cast<std::size_t>(n))};
    for (Index i = 0; i < n; ++i) {
        double z = beta[0];
        for (Index j = 0; j < 3; ++j) {
            s.x(i, j) = g.uniform();
            z += beta[static_cast<std::size_t>(j) + 1] * s.x(i, j);
        }
        s.y[static_cast<std::size_t>(i)] = g.uniform() < sigmoid(z);
    }
    return s;
}

const std::vector<std::string> names3{"m1", "m2", "m3"};

} // namespace

TEST(Nomogram, PublishedLinearPredictions)
{
    const auto m = published_death_nomogram();
    EXPECT_EQ(at(m, 0, 0, 0), 11.23907);
    EXPECT_NEAR(at(m, 1, 1, 1), -10.430923, 1e-9);
    EXPECT_NEAR(at(m, 0.9, 0.8, 0.7), -7.403350, 1e-9);
    EXPECT_NEAR(at(m, 0.9, 0.8, 0.7), static_cast<double>(b0 + b1 * 0.9L + b2 * 0.8L + b3 * 0.7L), 1e-12);
}

TEST(Nomogram, PublishedDeathProbability)
{
    const auto m = published_death_nomogram();
    const double p = prob(m, 0.9, 0.8, 0.7);
    EXPECT_NEAR(p, static_cast<double>(oracle_probability(0.9L, 0.8L, 0.7L)), 1e-12);
    EXPECT_NEAR(p, 6.09e-4, 5e-6);
    Xoshiro256 g(1);
    for (int i = 0; i < 100; ++i) {
        const double a = g.uniform(), b = g.uniform(), c = g.uniform();
        EXPECT_NEAR(prob(m, a, b, c), static_cast<double>(oracle_probability(a, b, c)), 1e-12);
    }
}

TEST(Nomogram, SigmoidMidpointAndSignFlip)
{
    const auto zero = make_nomogram(0.0, {0.0, 0.0, 0.0}, names3);
    EXPECT_EQ(prob(zero, 0.3, 0.6, 0.9), 0.5);
    const auto m = published_death_nomogram();
    const auto flipped = make_nomogram(-m.intercept, {-m.coefficients[0], -m.coefficients[1], -m.coefficients[2]}, m.names);
    Xoshiro256 g(2);
    for (int i = 0; i < 50; ++i) {
        const double a = g.uniform(), b = g.uniform(), c = g.uniform();
        EXPECT_NEAR(prob(m, a, b, c) + prob(flipped, a, b, c), 1.0, 1e-12);
    }
}

TEST(Nomogram, LinearPredictionIsAffine)
{
    const auto m = published_death_nomogram();
    Xoshiro256 g(3);
    for (int i = 0; i < 100; ++i) {
        const std::array<double, 3> a{g.uniform(), g.uniform(), g.uniform()};
        const std::array<double, 3> b{g.uniform(), g.uniform(), g.uniform()};
        const double alpha = g.uniform();
        std::array<double, 3> mix{};
        for (std::size_t j = 0; j < 3; ++j) mix[j] = alpha * a[j] + (1 - alpha) * b[j];
        EXPECT_NEAR(linear_prediction(m, mix), alpha * linear_prediction(m, a) + (1 - alpha) * linear_prediction(m, b), 1e-12);
    }
}

TEST(Nomogram, InputValidation)
{
    const auto m = published_death_nomogram();
    EXPECT_THROW((void)at(m, 1.2, 0, 0), InvalidArgument);
    EXPECT_THROW((void)at(m, 0, -0.1, 0), InvalidArgument);
    EXPECT_THROW((void)at(m, 0, std::nan(""), 0), InvalidArgument);
    const std::array<double, 2> two{0.1, 0.2};
    EXPECT_THROW((void)linear_prediction(m, two), InvalidArgument);
    EXPECT_THROW((void)make_nomogram(0.0, {std::numeric_limits<double>::infinity()}, {"a"}), InvalidArgument);
}

TEST(Nomogram, Classification)
{
    auto m = published_death_nomogram();
    const std::array<double, 3> s{0.9, 0.8, 0.7};
    EXPECT_EQ(classify(m, s), Outcome::survived);
    const auto half = make_nomogram(0.0, {1.0, 1.0, 1.0}, names3);
    const std::array<double, 3> zeros{0, 0, 0};
    EXPECT_EQ(classify(half, zeros), Outcome::death);
    m.cutoff = 0.0;
    for (double v : {0.0, 0.5, 1.0}) {
        const std::array<double, 3> x{v, v, v};
        EXPECT_EQ(classify(m, x), Outcome::death);
    }
}

TEST(Points, PublishedAxes)
{
    const auto c = points_axes(published_death_nomogram());
    ASSERT_EQ(c.axes.size(), 3u);
    EXPECT_NEAR(c.axes[0].max_points, 100.0, 1e-12);
    EXPECT_NEAR(c.axes[1].max_points, 100 * 5.028269 / 14.85299, 1e-12);
    EXPECT_NEAR(c.axes[1].max_points, 33.85, 5e-3);
    EXPECT_NEAR(c.axes[2].max_points, 12.04, 5e-3);
    // negative coefficients: the zero-point end is the top of the range
    for (const auto& a : c.axes) {
        EXPECT_EQ(a.zero_end, 1.0);
        EXPECT_EQ(a.full_end, 0.0);
    }
    EXPECT_NEAR(c.lp_at_zero, -10.430923, 1e-9);
    EXPECT_NEAR(c.total_to_probability(0), prob(published_death_nomogram(), 1, 1, 1), 1e-15);
    EXPECT_NEAR(c.total_to_probability(c.cutoff_total), 0.5, 1e-12);
}

TEST(Points, InversionReproducesProbability)
{
    Xoshiro256 g(4);
    for (const auto& m : {published_death_nomogram(), make_nomogram(-1.0, {2.0, -3.0, 0.5}, names3)}) {
        const auto c = points_axes(m);
        for (int i = 0; i < 100; ++i) {
            const std::array<double, 3> s{g.uniform(), g.uniform(), g.uniform()};
            double total = 0;
            for (double p : points_breakdown(m, s)) {
                EXPECT_GE(p, 0.0);
                total += p;
            }
            EXPECT_NEAR(c.total_to_probability(total), death_probability(m, s), 1e-9);
        }
    }
}

TEST(Points, CutoffEdges)
{
    auto m = published_death_nomogram();
    m.cutoff = 0.0;
    EXPECT_EQ(points_axes(m).cutoff_total, 0.0);
    m.cutoff = 1.0;
    EXPECT_NEAR(points_axes(m).cutoff_total, points_axes(m).total_max, 1e-12);
    m.cutoff = 1.5;
    EXPECT_THROW((void)points_axes(m), InvalidArgument);
}

TEST(Fit, RecoversCoefficientsWithinTwoStandardErrors)
{
    const std::array<double, 4> beta{-1.0, 2.0, -1.5, 0.8};
    int covered = 0, checks = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const auto s = simulate(500, beta, 1000 + t);
        const auto m = fit_nomogram(s.x, s.y, names3, {200, t, 0.0, 1e-10});
        ASSERT_TRUE(m.inference);
        for (std::size_t j = 0; j < 3; ++j) {
            const auto& inf = m.inference->coefficients[j];
            covered += std::abs(m.coefficients[j] - beta[j + 1]) <= 2 * inf.se;
            ++checks;
        }
    }
    EXPECT_GE(static_cast<double>(covered) / checks, 0.95);
}

TEST(Fit, NullOutcomeGivesSmallZ)
{
    int small = 0, checks = 0;
    for (std::uint64_t t = 0; t < 50; ++t) {
        const auto s = simulate(300, {0.0, 0.0, 0.0, 0.0}, 5000 + t);
        const auto m = fit_nomogram(s.x, s.y, names3, {200, t, 0.0, 1e-10});
        for (const auto& c : m.inference->coefficients) {
            small += std::abs(c.z) < 2;
            ++checks;
            EXPECT_GE(c.p, 0.0);
            EXPECT_LE(c.p, 1.0);
        }
    }
    EXPECT_GE(static_cast<double>(small) / checks, 0.9);
}

TEST(Fit, InferenceArithmetic)
{
    const auto s = simulate(200, {0.5, 1.0, -1.0, 0.0}, 7);
    const auto m = fit_nomogram(s.x, s.y, names3, {100, 3, 0.0, 1e-10});
    for (std::size_t j = 0; j < 3; ++j) {
        const auto& c = m.inference->coefficients[j];
        EXPECT_NEAR(c.z, m.coefficients[j] / c.se, 1e-12);
        EXPECT_NEAR(c.ci_low, m.coefficients[j] - 1.96 * c.se, 1e-12);
        EXPECT_NEAR(c.ci_high, m.coefficients[j] + 1.96 * c.se, 1e-12);
        EXPECT_NEAR(c.p, std::erfc(std::abs(c.z) / std::sqrt(2.0)), 1e-12);
    }
    const auto again = fit_nomogram(s.x, s.y, names3, {100, 3, 0.0, 1e-10});
    EXPECT_EQ(nomogram_to_json(m), nomogram_to_json(again));
}

TEST(Fit, SeparatedOutcomeNeedsPenalty)
{
    Xoshiro256 g(8);
    Matrix x(200, 3);
    Labels y(200);
    for (Index i = 0; i < 200; ++i) {
        for (Index j = 0; j < 3; ++j) x(i, j) = g.uniform();
        y[static_cast<std::size_t>(i)] = x(i, 0) > 0.5;
    }
    try {
        (void)fit_nomogram(x, y, names3, {0, 0, 0.0, 1e-10});
        FAIL();
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("l2"), std::string::npos);
    }
    const auto m = fit_nomogram(x, y, names3, {0, 0, 1e-3, 1e-10});
    EXPECT_GT(m.coefficients[0], 10.0);
    EXPECT_GT(m.coefficients[0], 5 * std::abs(m.coefficients[1]));
}

TEST(Fit, Preconditions)
{
    const auto s = simulate(20, {0, 1, 1, 1}, 9);
    EXPECT_THROW((void)fit_nomogram(s.x.topRows(5), Labels(s.y.begin(), s.y.begin() + 5), names3), InvalidArgument);
    EXPECT_THROW((void)fit_nomogram(s.x, Labels(20, 1), names3), InvalidArgument);
    EXPECT_THROW((void)fit_nomogram(s.x, s.y, {"a"}), InvalidArgument);
}

TEST(Export, JsonRoundTripAndSvg)
{
    const auto m = published_death_nomogram();
    const Json j = nomogram_to_json(m);
    const auto back = nomogram_from_json(Json::parse(j.dump()));
    EXPECT_EQ(nomogram_to_json(back), j);
    EXPECT_EQ(prob(back, 0.9, 0.8, 0.7), prob(m, 0.9, 0.8, 0.7));

    const Json chart = chart_to_json(m);
    EXPECT_EQ(chart.at("axes").size(), 3u);
    EXPECT_NEAR(chart.at("axes").at(0).at("max_points").get<double>(), 100.0, 1e-12);

    const auto svg = nomogram_svg(m);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    for (const auto& name : m.names) EXPECT_NE(svg.find(name), std::string::npos);
    EXPECT_NE(svg.find("Total points"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
