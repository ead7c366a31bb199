#ifndef RISKSTACK_EVALUATION_HPP
#define RISKSTACK_EVALUATION_HPP

#include "riskstack/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace riskstack {

struct ConfusionMatrix {
    long tp = 0;
    long tn = 0;
    long fp = 0;
    long fn = 0;

    [[nodiscard]] auto total() const -> long { return tp + tn + fp + fn; }
    // the same counts with the other class designated positive
    [[nodiscard]] auto swapped() const -> ConfusionMatrix { return {tn, tp, fn, fp}; }

    auto operator==(const ConfusionMatrix&) const -> bool = default;
};

// predicted positive iff probability >= threshold
inline auto confusion(std::span<const double> prob, std::span<const int> y, double threshold = 0.5) -> ConfusionMatrix
{
    require(prob.size() == y.size(), "confusion: length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool pred = prob[i] >= threshold;
        if (y[i] == 1) (pred ? cm.tp : cm.fn)++;
        else (pred ? cm.fp : cm.tn)++;
    }
    return cm;
}

struct Estimate {
    double value = 0.0;
    double ci = 0.0; // 95% half-width, normal approximation
    bool degenerate = false; // denominator was zero
};

struct MetricReport {
    Estimate accuracy, precision, recall, f1, specificity;
    std::optional<double> auc;
    long support_negative = 0;
    long support_positive = 0;
    bool weighted = false;
};

inline auto binomial_ci(double m, double n) -> double
{
    if (n <= 0) return 0.0;
    return 1.96 * std::sqrt(std::max(0.0, m * (1 - m)) / n);
}

/// Accuracy, precision, recall (sensitivity), F1 and specificity for the
/// positive class of `cm`. A zero denominator yields 0 with the degenerate flag.
inline auto metrics(const ConfusionMatrix& cm) -> MetricReport
{
    require(cm.total() > 0, "metrics: empty confusion matrix");
    auto ratio = [](long num, long den) {
        Estimate e;
        if (den == 0) {
            e.degenerate = true;
            return e;
        }
        e.value = static_cast<double>(num) / static_cast<double>(den);
        e.ci = binomial_ci(e.value, static_cast<double>(den));
        return e;
    };
    MetricReport r;
    r.accuracy = ratio(cm.tp + cm.tn, cm.total());
    r.precision = ratio(cm.tp, cm.tp + cm.fp);
    r.recall = ratio(cm.tp, cm.tp + cm.fn);
    r.specificity = ratio(cm.tn, cm.tn + cm.fp);
    const double p = r.precision.value, rc = r.recall.value;
    if (p + rc > 0) {
        r.f1.value = 2 * (p * rc) / (p + rc);
        r.f1.ci = binomial_ci(r.f1.value, static_cast<double>(cm.tp + cm.fp + cm.fn));
    } else {
        r.f1.degenerate = true;
    }
    r.support_positive = cm.tp + cm.fn;
    r.support_negative = cm.tn + cm.fp;
    return r;
}

/// Support-weighted average of the two per-class reports; overall accuracy is
/// taken from the pooled counts.
inline auto weighted_report(const ConfusionMatrix& cm) -> MetricReport
{
    const auto pos = metrics(cm);
    const auto neg = metrics(cm.swapped());
    const double sp = static_cast<double>(cm.tp + cm.fn);
    const double sn = static_cast<double>(cm.tn + cm.fp);
    const double n = sp + sn;
    auto mix = [&](const Estimate& a, const Estimate& b) {
        Estimate e;
        e.value = (sp * a.value + sn * b.value) / n;
        e.ci = binomial_ci(e.value, n);
        e.degenerate = (sp > 0 && a.degenerate) || (sn > 0 && b.degenerate);
        return e;
    };
    MetricReport r;
    r.weighted = true;
    r.accuracy = pos.accuracy;
    r.precision = mix(pos.precision, neg.precision);
    r.recall = mix(pos.recall, neg.recall);
    r.f1 = mix(pos.f1, neg.f1);
    r.specificity = mix(pos.specificity, neg.specificity);
    r.support_positive = cm.tp + cm.fn;
    r.support_negative = cm.tn + cm.fp;
    return r;
}

// ---------------------------------------------------------------------------
// ROC

struct ROCCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;
    std::vector<double> thresholds; // score at which each point is reached (first point: +inf)
    double auc = 0.0;
};

/// Threshold sweep from the highest score down; tied scores move in one
/// step, so the trapezoid over a tie counts concordance 1/2.
inline auto roc_auc(std::span<const double> scores, std::span<const int> y) -> ROCCurve
{
    require(scores.size() == y.size(), "roc_auc: length mismatch");
    require_binary(y);
    const auto pos = static_cast<double>(count_positive(y));
    const auto neg = static_cast<double>(y.size()) - pos;
    if (pos == 0 || neg == 0) throw InvalidArgument("roc_auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    ROCCurve c;
    c.fpr.push_back(0);
    c.tpr.push_back(0);
    c.thresholds.push_back(std::numeric_limits<double>::infinity());
    double tp = 0, fp = 0, area = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        const double tp0 = tp, fp0 = fp;
        while (i < order.size() && scores[order[i]] == s) {
            (y[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
        c.fpr.push_back(fp / neg);
        c.tpr.push_back(tp / pos);
        c.thresholds.push_back(s);
    }
    c.auc = area / (pos * neg);
    return c;
}

// ---------------------------------------------------------------------------
// calibration

struct CalibrationBin {
    double lower = 0, upper = 0;
    double mean_predicted = 0;
    double observed = 0;
    long count = 0;
};

struct CalibrationCurve {
    std::vector<CalibrationBin> bins; // non-empty bins only
    double max_gap = 0.0;
};

inline auto calibration_curve(std::span<const double> prob, std::span<const int> y, int bins = 10) -> CalibrationCurve
{
    require(prob.size() == y.size(), "calibration_curve: length mismatch");
    require(bins >= 1, "calibration_curve: bins must be >= 1");
    std::vector<CalibrationBin> acc(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        acc[static_cast<std::size_t>(b)].lower = static_cast<double>(b) / bins;
        acc[static_cast<std::size_t>(b)].upper = static_cast<double>(b + 1) / bins;
    }
    for (std::size_t i = 0; i < prob.size(); ++i) {
        require(prob[i] >= 0 && prob[i] <= 1, "calibration_curve: probability outside [0, 1]");
        const int b = std::min(bins - 1, static_cast<int>(prob[i] * bins));
        auto& bin = acc[static_cast<std::size_t>(b)];
        bin.mean_predicted += prob[i];
        bin.observed += y[i];
        ++bin.count;
    }
    CalibrationCurve c;
    for (auto& bin : acc) {
        if (bin.count == 0) continue;
        bin.mean_predicted /= static_cast<double>(bin.count);
        bin.observed /= static_cast<double>(bin.count);
        c.max_gap = std::max(c.max_gap, std::abs(bin.mean_predicted - bin.observed));
        c.bins.push_back(bin);
    }
    return c;
}

// ---------------------------------------------------------------------------
// decision curve

struct DecisionCurve {
    std::vector<double> thresholds;
    std::vector<double> model;
    std::vector<double> treat_all;
    std::vector<double> treat_none;
};

// net benefit TP/N - FP/N * pt/(1-pt), treating patients with probability >= pt
inline auto decision_curve(std::span<const double> prob, std::span<const int> y, std::span<const double> thresholds)
    -> DecisionCurve
{
    require(prob.size() == y.size() && !y.empty(), "decision_curve: length mismatch or empty input");
    const auto n = static_cast<double>(y.size());
    const double prevalence = static_cast<double>(count_positive(y)) / n;
    DecisionCurve c;
    for (double pt : thresholds) {
        if (!(pt > 0 && pt < 1)) throw InvalidArgument("decision_curve: threshold " + std::to_string(pt) + " not in (0, 1)");
        const double odds = pt / (1 - pt);
        const auto cm = confusion(prob, y, pt);
        c.thresholds.push_back(pt);
        c.model.push_back(static_cast<double>(cm.tp) / n - static_cast<double>(cm.fp) / n * odds);
        c.treat_all.push_back(prevalence - (1 - prevalence) * odds);
        c.treat_none.push_back(0.0);
    }
    return c;
}

inline auto threshold_grid(double lo = 0.01, double hi = 0.99, int count = 99) -> std::vector<double>
{
    std::vector<double> g;
    for (int i = 0; i < count; ++i) g.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
    return g;
}

// ---------------------------------------------------------------------------
// hypothesis tests

struct StatTestResult {
    std::string test;
    double statistic = 0.0;
    double p_value = 1.0;
    long n = 0;
};

inline auto normal_two_sided_p(double z) -> double { return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0))); }

/// Two-sided Fisher exact test on [[a, b], [c, d]]: sum of the hypergeometric
/// probabilities of all tables with the observed margins that are no more
/// likely than the observed one.
inline auto fisher_exact(long a, long b, long c, long d) -> StatTestResult
{
    require(a >= 0 && b >= 0 && c >= 0 && d >= 0, "fisher_exact: counts must be nonnegative");
    const long r1 = a + b, r2 = c + d, c1 = a + c, n = r1 + r2;
    StatTestResult res{"fisher_exact", 0.0, 1.0, n};
    if (n == 0) return res;
    const double log_denominator = std::lgamma(n + 1.0) - std::lgamma(c1 + 1.0) - std::lgamma(n - c1 + 1.0);
    auto log_p = [&](long x) {
        auto lchoose = [](long nn, long k) { return std::lgamma(nn + 1.0) - std::lgamma(k + 1.0) - std::lgamma(nn - k + 1.0); };
        return lchoose(r1, x) + lchoose(r2, c1 - x) - log_denominator;
    };
    const long lo = std::max(0L, c1 - r2), hi = std::min(r1, c1);
    const double observed = log_p(a);
    // relative slack so tables tied with the observed one in exact arithmetic are counted
    const double cutoff = observed + 1e-7;
    double p = 0.0;
    for (long x = lo; x <= hi; ++x) {
        const double lp = log_p(x);
        if (lp <= cutoff) p += std::exp(lp);
    }
    res.statistic = a * d == 0 && b * c == 0 ? 1.0
                    : b * c == 0           ? std::numeric_limits<double>::infinity()
                                           : static_cast<double>(a) * d / (static_cast<double>(b) * c);
    res.p_value = std::min(1.0, p);
    return res;
}

// Pearson chi-square on a 2x2 table without continuity correction, 1 degree of freedom.
inline auto chi_square(long a, long b, long c, long d) -> StatTestResult
{
    require(a >= 0 && b >= 0 && c >= 0 && d >= 0, "chi_square: counts must be nonnegative");
    const double r[2] = {static_cast<double>(a + b), static_cast<double>(c + d)};
    const double col[2] = {static_cast<double>(a + c), static_cast<double>(b + d)};
    const double n = r[0] + r[1];
    if (r[0] == 0 || r[1] == 0 || col[0] == 0 || col[1] == 0)
        throw InvalidArgument("chi_square: a row or column margin is zero");
    const double obs[2][2] = {{static_cast<double>(a), static_cast<double>(b)}, {static_cast<double>(c), static_cast<double>(d)}};
    double stat = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double e = r[i] * col[j] / n;
            stat += (obs[i][j] - e) * (obs[i][j] - e) / e;
        }
    // chi-square(1) upper tail equals the two-sided normal tail at sqrt(stat)
    return {"chi_square", stat, normal_two_sided_p(std::sqrt(stat)), static_cast<long>(n)};
}

/// Wilcoxon rank-sum (Mann-Whitney) test: Z of the first sample's rank sum
/// under the normal approximation with tie correction.
inline auto wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) -> StatTestResult
{
    if (a.empty() || b.empty()) throw InvalidArgument("wilcoxon_rank_sum: both samples must be nonempty");
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;
    std::vector<std::pair<double, int>> all;
    all.reserve(n);
    for (double v : a) all.emplace_back(v, 0);
    for (double v : b) all.emplace_back(v, 1);
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    double rank_sum = 0.0, tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k < j; ++k)
            if (all[k].second == 0) rank_sum += avg;
        i = j;
    }
    const double dn = static_cast<double>(n);
    const double mean = static_cast<double>(na) * (dn + 1) / 2.0;
    const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                       ((dn + 1) - (n > 1 ? tie_term / (dn * (dn - 1)) : 0.0));
    StatTestResult r{"wilcoxon_rank_sum", 0.0, 1.0, static_cast<long>(n)};
    if (var > 0) {
        r.statistic = (rank_sum - mean) / std::sqrt(var);
        r.p_value = normal_two_sided_p(r.statistic);
    }
    return r;
}

} // namespace riskstack

#endif
