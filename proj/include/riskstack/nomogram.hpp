#ifndef RISKSTACK_NOMOGRAM_HPP
#define RISKSTACK_NOMOGRAM_HPP

#include "riskstack/core.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/evaluation.hpp"
#include "riskstack/learners.hpp"
#include "riskstack/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace riskstack {

struct CoefficientInference {
    double se = 0.0;     // bootstrap standard error
    double z = 0.0;
    double p = 1.0;      // two-sided normal tail
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct NomogramInference {
    int resamples = 0;
    std::uint64_t seed = 0;
    CoefficientInference intercept;
    std::vector<CoefficientInference> coefficients;
};

/// Logistic model over base-learner probability scores, read as a points
/// chart: every predictor contributes points, the point total maps back to
/// the linear predictor and the event probability.
struct NomogramModel {
    double intercept = 0.0;
    std::vector<double> coefficients;
    std::vector<std::string> names;
    std::vector<std::pair<double, double>> ranges; // per predictor, default [0, 1]
    double points_max = 100.0;
    double cutoff = 0.5;
    std::optional<NomogramInference> inference;

    [[nodiscard]] auto size() const -> std::size_t { return coefficients.size(); }

    void validate() const
    {
        require(!coefficients.empty(), "nomogram: no predictors");
        require(names.size() == coefficients.size() && ranges.size() == coefficients.size(),
                "nomogram: names/ranges must match coefficient count");
        require(std::isfinite(intercept), "nomogram: intercept is not finite");
        for (std::size_t j = 0; j < coefficients.size(); ++j) {
            require(std::isfinite(coefficients[j]), "nomogram: coefficient '" + names[j] + "' is not finite");
            require(ranges[j].first < ranges[j].second, "nomogram: empty value range for '" + names[j] + "'");
        }
        require(cutoff >= 0 && cutoff <= 1, "nomogram: cutoff must lie in [0, 1]");
        require(points_max > 0, "nomogram: points scale must be positive");
    }
};

inline auto make_nomogram(double intercept, std::vector<double> coefficients, std::vector<std::string> names)
    -> NomogramModel
{
    NomogramModel m;
    m.intercept = intercept;
    m.coefficients = std::move(coefficients);
    m.names = std::move(names);
    m.ranges.assign(m.coefficients.size(), {0.0, 1.0});
    m.validate();
    return m;
}

// Published death nomogram over Random Forest (M1), Extra Tree (M2) and
// Gradient Boosting (M3) death scores, with its bootstrap inference table.
inline auto published_death_nomogram() -> NomogramModel
{
    auto m = make_nomogram(11.23907, {-14.85299, -5.028269, -1.788734}, {"Random Forest", "Extra Tree", "Gradient Boosting"});
    NomogramInference inf;
    inf.intercept = {1.822279, 6.17, 0.0004, 7.667468, 14.81067};
    inf.coefficients = {{3.262317, -4.5, 0.000, -21.24701, -8.458965},
                        {5.40965, -0.93, 0.353, -15.63099, 5.57445},
                        {0.47932, -3.73, 0.000, -2.728183, -0.84928}};
    m.inference = inf;
    return m;
}

inline void check_inputs(const NomogramModel& m, std::span<const double> scores)
{
    if (scores.size() != m.size())
        throw InvalidArgument("nomogram: expected " + std::to_string(m.size()) + " scores, got " + std::to_string(scores.size()));
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (!(scores[j] >= m.ranges[j].first && scores[j] <= m.ranges[j].second))
            throw InvalidArgument("nomogram: score for '" + m.names[j] + "' outside [" + std::to_string(m.ranges[j].first) +
                                  ", " + std::to_string(m.ranges[j].second) + "]");
}

inline auto linear_prediction(const NomogramModel& m, std::span<const double> scores) -> double
{
    check_inputs(m, scores);
    double lp = m.intercept;
    for (std::size_t j = 0; j < scores.size(); ++j) lp += m.coefficients[j] * scores[j];
    return lp;
}

inline auto death_probability(const NomogramModel& m, std::span<const double> scores) -> double
{
    return sigmoid(linear_prediction(m, scores));
}

inline auto classify(const NomogramModel& m, std::span<const double> scores) -> Outcome
{
    return death_probability(m, scores) >= m.cutoff ? Outcome::death : Outcome::survived;
}

// ---------------------------------------------------------------------------
// points

struct PointsAxis {
    std::string name;
    double zero_end = 0.0;   // predictor value worth 0 points
    double full_end = 0.0;   // value worth max_points
    double max_points = 0.0;
    std::vector<std::pair<double, double>> ticks; // (value, points)
};

struct PointsChart {
    std::vector<PointsAxis> axes;
    double lp_at_zero = 0.0;          // linear predictor when every predictor sits at its zero end
    double lp_per_point = 0.0;
    double total_max = 0.0;
    double cutoff_total = 0.0;        // total points where probability == cutoff
    std::vector<std::pair<double, double>> probability_axis; // (total points, probability)

    [[nodiscard]] auto total_to_lp(double total) const -> double { return lp_at_zero + total * lp_per_point; }
    [[nodiscard]] auto total_to_probability(double total) const -> double { return sigmoid(total_to_lp(total)); }
};

namespace detail {
inline auto points_unit(const NomogramModel& m) -> double
{
    double u = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j)
        u = std::max(u, std::abs(m.coefficients[j]) * (m.ranges[j].second - m.ranges[j].first));
    return u;
}
inline auto zero_end(const NomogramModel& m, std::size_t j) -> double
{
    return m.coefficients[j] < 0 ? m.ranges[j].second : m.ranges[j].first;
}
} // namespace detail

inline auto predictor_points(const NomogramModel& m, std::size_t j, double x) -> double
{
    const double unit = detail::points_unit(m);
    if (unit == 0) return 0.0;
    return m.points_max * std::abs(m.coefficients[j]) * std::abs(x - detail::zero_end(m, j)) / unit;
}

inline auto points_breakdown(const NomogramModel& m, std::span<const double> scores) -> std::vector<double>
{
    check_inputs(m, scores);
    std::vector<double> pts;
    for (std::size_t j = 0; j < m.size(); ++j) pts.push_back(predictor_points(m, j, scores[j]));
    return pts;
}

inline auto points_axes(const NomogramModel& m, int ticks_per_axis = 11) -> PointsChart
{
    m.validate();
    PointsChart c;
    const double unit = detail::points_unit(m);
    c.lp_at_zero = m.intercept;
    for (std::size_t j = 0; j < m.size(); ++j) {
        PointsAxis a;
        a.name = m.names[j];
        a.zero_end = detail::zero_end(m, j);
        a.full_end = a.zero_end == m.ranges[j].first ? m.ranges[j].second : m.ranges[j].first;
        a.max_points = predictor_points(m, j, a.full_end);
        for (int t = 0; t < ticks_per_axis; ++t) {
            const double x = m.ranges[j].first + (m.ranges[j].second - m.ranges[j].first) * t / std::max(1, ticks_per_axis - 1);
            a.ticks.emplace_back(x, predictor_points(m, j, x));
        }
        c.lp_at_zero += m.coefficients[j] * a.zero_end;
        c.total_max += a.max_points;
        c.axes.push_back(std::move(a));
    }
    c.lp_per_point = unit / m.points_max;
    if (m.cutoff <= 0) c.cutoff_total = 0.0;
    else if (m.cutoff >= 1) c.cutoff_total = c.total_max;
    else c.cutoff_total = c.lp_per_point > 0 ? (std::log(m.cutoff / (1 - m.cutoff)) - c.lp_at_zero) / c.lp_per_point : 0.0;
    const int steps = 50;
    for (int t = 0; t <= steps; ++t) {
        const double total = c.total_max * t / steps;
        c.probability_axis.emplace_back(total, c.total_to_probability(total));
    }
    return c;
}

// ---------------------------------------------------------------------------
// fitting

struct NomogramFitOptions {
    int resamples = 1000;
    std::uint64_t seed = 0;
    double l2 = 0.0; // > 0 allows a regularised refit of separable data
    double tol = 1e-10;
};

/// Maximum-likelihood logistic fit of `outcome` on the score columns, with
/// bootstrap standard errors, Wald z, two-sided p and 95% intervals.
inline auto fit_nomogram(const Matrix& scores, const Labels& outcome, std::vector<std::string> names,
                         const NomogramFitOptions& opt = {}) -> NomogramModel
{
    const Index n = scores.rows(), d = scores.cols();
    require(n == static_cast<Index>(outcome.size()), "fit_nomogram: row/outcome count mismatch");
    require(n >= 10, "fit_nomogram: need at least 10 rows");
    require(static_cast<Index>(names.size()) == d, "fit_nomogram: one name per score column required");
    require(opt.resamples >= 0, "fit_nomogram: resamples must be >= 0");
    require_binary(outcome);
    const Index pos = count_positive(outcome);
    require(pos > 0 && pos < n, "fit_nomogram: both outcomes must be present");

    const LogisticParams lp{opt.l2, 100, opt.tol};
    const auto fit = fit_logistic(scores, outcome, lp);
    if (opt.l2 == 0) {
        double max_neg = -std::numeric_limits<double>::infinity(), min_pos = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i) {
            const double z = fit.beta(0) + scores.row(i).dot(fit.beta.tail(d));
            if (outcome[static_cast<std::size_t>(i)] == 1) min_pos = std::min(min_pos, z);
            else max_neg = std::max(max_neg, z);
        }
        if (max_neg < min_pos || !fit.converged)
            throw InvalidArgument("fit_nomogram: outcomes are perfectly separated by the scores; refit with a positive l2 penalty");
    }

    NomogramModel m;
    m.intercept = fit.beta(0);
    m.coefficients.assign(fit.beta.data() + 1, fit.beta.data() + fit.beta.size());
    m.names = std::move(names);
    m.ranges.assign(static_cast<std::size_t>(d), {0.0, 1.0});
    m.validate();
    if (opt.resamples == 0) return m;

    std::vector<Vector> draws;
    draws.reserve(static_cast<std::size_t>(opt.resamples));
    std::uint64_t stream = 0;
    while (static_cast<int>(draws.size()) < opt.resamples) {
        Xoshiro256 rng(derive_seed(opt.seed, stream++));
        Matrix xs(n, d);
        Labels ys(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            const auto r = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
            xs.row(i) = scores.row(r);
            ys[static_cast<std::size_t>(i)] = outcome[static_cast<std::size_t>(r)];
        }
        const Index p = count_positive(ys);
        if (p == 0 || p == n) continue; // single-outcome resample, draw again
        draws.push_back(fit_logistic(xs, ys, lp).beta);
    }
    auto summarize = [&](Index k, double estimate) {
        double mean = 0.0;
        for (const auto& b : draws) mean += b(k);
        mean /= static_cast<double>(draws.size());
        double var = 0.0;
        for (const auto& b : draws) var += (b(k) - mean) * (b(k) - mean);
        CoefficientInference ci;
        ci.se = draws.size() > 1 ? std::sqrt(var / static_cast<double>(draws.size() - 1)) : 0.0;
        ci.z = ci.se > 0 ? estimate / ci.se : 0.0;
        ci.p = ci.se > 0 ? normal_two_sided_p(ci.z) : 1.0;
        ci.ci_low = estimate - 1.96 * ci.se;
        ci.ci_high = estimate + 1.96 * ci.se;
        return ci;
    };
    NomogramInference inf;
    inf.resamples = opt.resamples;
    inf.seed = opt.seed;
    inf.intercept = summarize(0, m.intercept);
    for (Index k = 0; k < d; ++k) inf.coefficients.push_back(summarize(k + 1, m.coefficients[static_cast<std::size_t>(k)]));
    m.inference = inf;
    return m;
}

// ---------------------------------------------------------------------------
// export

inline auto nomogram_to_json(const NomogramModel& m) -> Json
{
    Json j;
    j["intercept"] = m.intercept;
    j["coefficients"] = m.coefficients;
    j["names"] = m.names;
    Json ranges = Json::array();
    for (const auto& [lo, hi] : m.ranges) ranges.push_back({lo, hi});
    j["ranges"] = ranges;
    j["points_max"] = m.points_max;
    j["cutoff"] = m.cutoff;
    if (m.inference) {
        auto row = [](const CoefficientInference& c) {
            return Json{{"se", c.se}, {"z", c.z}, {"p", c.p}, {"ci_low", c.ci_low}, {"ci_high", c.ci_high}};
        };
        Json inf;
        inf["resamples"] = m.inference->resamples;
        inf["seed"] = m.inference->seed;
        inf["intercept"] = row(m.inference->intercept);
        Json coefs = Json::array();
        for (const auto& c : m.inference->coefficients) coefs.push_back(row(c));
        inf["coefficients"] = coefs;
        j["inference"] = inf;
    }
    return j;
}

inline auto nomogram_from_json(const Json& j) -> NomogramModel
{
    NomogramModel m;
    m.intercept = j.at("intercept").get<double>();
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    m.names = j.at("names").get<std::vector<std::string>>();
    for (const auto& r : j.at("ranges")) m.ranges.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
    m.points_max = j.value("points_max", 100.0);
    m.cutoff = j.value("cutoff", 0.5);
    if (j.contains("inference")) {
        auto row = [](const Json& c) {
            return CoefficientInference{c.at("se").get<double>(), c.at("z").get<double>(), c.at("p").get<double>(),
                                        c.at("ci_low").get<double>(), c.at("ci_high").get<double>()};
        };
        NomogramInference inf;
        const auto& ij = j.at("inference");
        inf.resamples = ij.at("resamples").get<int>();
        inf.seed = ij.at("seed").get<std::uint64_t>();
        inf.intercept = row(ij.at("intercept"));
        for (const auto& c : ij.at("coefficients")) inf.coefficients.push_back(row(c));
        m.inference = inf;
    }
    m.validate();
    return m;
}

// Axes as sampled polylines, for the UI and reports.
inline auto chart_to_json(const NomogramModel& m) -> Json
{
    const auto c = points_axes(m);
    Json axes = Json::array();
    for (const auto& a : c.axes) {
        Json ticks = Json::array();
        for (const auto& [x, p] : a.ticks) ticks.push_back({x, p});
        axes.push_back({{"name", a.name}, {"zero_end", a.zero_end}, {"full_end", a.full_end}, {"max_points", a.max_points},
                        {"ticks", ticks}});
    }
    Json prob = Json::array();
    for (const auto& [t, p] : c.probability_axis) prob.push_back({t, p});
    return {{"model", nomogram_to_json(m)},
            {"axes", axes},
            {"total_points_max", c.total_max},
            {"lp_at_zero_points", c.lp_at_zero},
            {"lp_per_point", c.lp_per_point},
            {"cutoff_total_points", c.cutoff_total},
            {"probability_axis", prob}};
}

/// Row layout: points scale, one row per predictor, total points, probability.
inline auto nomogram_svg(const NomogramModel& m) -> std::string
{
    const auto c = points_axes(m);
    const double left = 170, width = 560, row_h = 60;
    const int rows = static_cast<int>(c.axes.size()) + 3;
    const double height = row_h * rows + 40;
    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 40 << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    auto axis = [&](int row, const std::string& label, const std::vector<std::pair<double, std::string>>& ticks) {
        const double y = 30 + row * row_h;
        s << "  <text x=\"10\" y=\"" << y + 4 << "\">" << label << "</text>\n";
        s << "  <line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + width << "\" y2=\"" << y
          << "\" stroke=\"black\"/>\n";
        for (const auto& [frac, text] : ticks) {
            const double x = left + frac * width;
            s << "  <line x1=\"" << x << "\" y1=\"" << y - 5 << "\" x2=\"" << x << "\" y2=\"" << y << "\" stroke=\"black\"/>\n";
            s << "  <text x=\"" << x << "\" y=\"" << y - 8 << "\" text-anchor=\"middle\">" << text << "</text>\n";
        }
    };
    auto fmt = [](double v, int prec) {
        std::ostringstream o;
        o << std::fixed << std::setprecision(prec) << v;
        return o.str();
    };
    std::vector<std::pair<double, std::string>> pts;
    for (int t = 0; t <= 10; ++t) pts.emplace_back(t / 10.0, fmt(m.points_max * t / 10.0, 0));
    axis(0, "Points", pts);
    int row = 1;
    for (const auto& a : c.axes) {
        std::vector<std::pair<double, std::string>> ticks;
        for (const auto& [x, p] : a.ticks) ticks.emplace_back(p / m.points_max, fmt(x, 1));
        axis(row++, a.name, ticks);
    }
    std::vector<std::pair<double, std::string>> total;
    for (int t = 0; t <= 10; ++t) total.emplace_back(t / 10.0, fmt(c.total_max * t / 10.0, 0));
    axis(row++, "Total points", total);
    std::vector<std::pair<double, std::string>> prob;
    for (double p : {0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999}) {
        const double t = (std::log(p / (1 - p)) - c.lp_at_zero) / c.lp_per_point;
        if (t >= 0 && t <= c.total_max && c.total_max > 0) prob.emplace_back(t / c.total_max, fmt(p, 3));
    }
    axis(row, "Probability", prob);
    if (c.total_max > 0 && c.cutoff_total >= 0 && c.cutoff_total <= c.total_max) {
        const double x = left + c.cutoff_total / c.total_max * width;
        s << "  <line x1=\"" << x << "\" y1=\"" << 30 + (row - 1) * row_h << "\" x2=\"" << x << "\" y2=\"" << 30 + row * row_h
          << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

} // namespace riskstack

#endif
