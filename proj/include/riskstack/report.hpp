#ifndef RISKSTACK_REPORT_HPP
#define RISKSTACK_REPORT_HPP

#include "riskstack/csv.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/evaluation.hpp"
#include "riskstack/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace riskstack {

// "71.75" style percentage with two decimals
inline auto pct(double v) -> std::string
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

inline auto fixed(double v, int digits) -> std::string
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline auto metric_header() -> std::vector<std::string>
{
    return {"accuracy", "accuracy_ci", "precision", "precision_ci", "recall", "recall_ci", "f1", "f1_ci", "specificity",
            "specificity_ci", "auc"};
}

inline auto metric_cells(const MetricReport& r) -> std::vector<std::string>
{
    return {pct(r.accuracy.value),    pct(r.accuracy.ci),    pct(r.precision.value), pct(r.precision.ci),
            pct(r.recall.value),      pct(r.recall.ci),      pct(r.f1.value),        pct(r.f1.ci),
            pct(r.specificity.value), pct(r.specificity.ci), r.auc ? fixed(*r.auc, 4) : ""};
}

/// One block of rows per modality: dataset, classifier, metrics in percent
/// with 95% half-widths, then fold F1 mean and SD.
inline void write_crossval_csv(std::ostream& out, const std::vector<CrossValResult>& blocks)
{
    auto header = std::vector<std::string>{"dataset", "classifier"};
    const auto m = metric_header();
    header.insert(header.end(), m.begin(), m.end());
    header.insert(header.end(), {"fold_f1_mean", "fold_f1_sd"});
    csv::write_row(out, header);
    for (const auto& b : blocks) {
        for (const auto& c : b.classifiers) {
            auto row = std::vector<std::string>{modality_title(b.modality), c.name};
            const auto cells = metric_cells(c.report);
            row.insert(row.end(), cells.begin(), cells.end());
            row.push_back(pct(c.fold_f1.mean));
            row.push_back(pct(c.fold_f1.sd));
            csv::write_row(out, row);
        }
    }
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& s)
{
    csv::write_row(out, {"k", "features", "precision", "precision_ci", "recall", "recall_ci", "f1", "f1_ci", "specificity",
                         "specificity_ci", "accuracy", "accuracy_ci", "best"});
    for (const auto& r : s.rows) {
        std::string names;
        for (std::size_t i = 0; i < r.features.size(); ++i) names += (i ? ";" : "") + r.features[i];
        const auto& m = r.report;
        csv::write_row(out, {std::to_string(r.k), names, pct(m.precision.value), pct(m.precision.ci), pct(m.recall.value),
                             pct(m.recall.ci), pct(m.f1.value), pct(m.f1.ci), pct(m.specificity.value), pct(m.specificity.ci),
                             pct(m.accuracy.value), pct(m.accuracy.ci), r.k == s.best_k ? "1" : "0"});
    }
}

inline void write_ranking_csv(std::ostream& out, const FeatureRanking& r)
{
    csv::write_row(out, {"rank", "feature", "importance"});
    for (std::size_t i = 0; i < r.features.size(); ++i)
        csv::write_row(out, {std::to_string(i + 1), r.features[i].first, csv::format_real(r.features[i].second)});
}

// ---------------------------------------------------------------------------
// cohort profile

struct ProfileRow {
    std::string variable;
    std::string low;  // "mean ± sd (n)" or "count (percent)"
    std::string high;
    double p = 1.0;
    std::string test;
};

/// Per-class summaries: counts and a chi-square test for gender, mean ± SD
/// and a rank-sum test for age and every biomarker.
inline auto profile_cohort(const Cohort& cohort, Stage stage) -> std::vector<ProfileRow>
{
    const Cohort c = stage == Stage::outcome ? cohort.high_risk_only() : cohort;
    const auto y = c.labels(stage);
    std::vector<ProfileRow> out;
    long male[2] = {0, 0}, female[2] = {0, 0};
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i].gender == Gender::male) ++male[y[i]];
        else if (c[i].gender == Gender::female) ++female[y[i]];
    }
    auto share = [](long k, long total) {
        return std::to_string(k) + " (" + fixed(total ? 100.0 * static_cast<double>(k) / static_cast<double>(total) : 0.0, 1) + "%)";
    };
    const auto chi = chi_square(male[0], female[0], male[1], female[1]);
    out.push_back({"gender: male", share(male[0], male[0] + female[0]), share(male[1], male[1] + female[1]), chi.p_value, "chi-square"});
    out.push_back({"gender: female", share(female[0], male[0] + female[0]), share(female[1], male[1] + female[1]), chi.p_value, "chi-square"});

    std::vector<std::string> names = {"age"};
    names.insert(names.end(), c.biomarker_names().begin(), c.biomarker_names().end());
    for (const auto& name : names) {
        std::vector<double> v[2];
        for (std::size_t i = 0; i < c.size(); ++i)
            if (auto x = clinical_value(c, c[i], name)) v[y[i]].push_back(*x);
        auto describe = [](const std::vector<double>& a) -> std::string {
            if (a.empty()) return "n/a (0)";
            double m = 0;
            for (double x : a) m += x;
            m /= static_cast<double>(a.size());
            double ss = 0;
            for (double x : a) ss += (x - m) * (x - m);
            const double sd = a.size() > 1 ? std::sqrt(ss / static_cast<double>(a.size() - 1)) : 0.0;
            return fixed(m, 2) + " ± " + fixed(sd, 2) + " (" + std::to_string(a.size()) + ")";
        };
        ProfileRow r{name, describe(v[0]), describe(v[1]), 1.0, "rank-sum"};
        if (!v[0].empty() && !v[1].empty()) r.p = wilcoxon_rank_sum(v[0], v[1]).p_value;
        out.push_back(r);
    }
    return out;
}

inline void write_profile_csv(std::ostream& out, const std::vector<ProfileRow>& rows, Stage stage)
{
    const bool risk = stage == Stage::risk;
    csv::write_row(out, {"variable", risk ? "low_risk" : "survived", risk ? "high_risk" : "death", "p_value", "test"});
    for (const auto& r : rows) csv::write_row(out, {r.variable, r.low, r.high, fixed(r.p, 4), r.test});
}

// ---------------------------------------------------------------------------
// curves

inline void write_roc_csv(std::ostream& out, const CrossValResult& cv)
{
    csv::write_row(out, {"classifier", "fpr", "tpr", "threshold"});
    for (const auto& c : cv.classifiers)
        for (std::size_t i = 0; i < c.roc.fpr.size(); ++i)
            csv::write_row(out, {c.name, csv::format_real(c.roc.fpr[i]), csv::format_real(c.roc.tpr[i]),
                                 std::isinf(c.roc.thresholds[i]) ? "inf" : csv::format_real(c.roc.thresholds[i])});
}

inline void write_calibration_csv(std::ostream& out, const CrossValResult& cv)
{
    csv::write_row(out, {"classifier", "bin_lower", "bin_upper", "mean_predicted", "observed", "count"});
    for (const auto& c : cv.classifiers)
        for (const auto& b : c.calibration.bins)
            csv::write_row(out, {c.name, csv::format_real(b.lower), csv::format_real(b.upper), csv::format_real(b.mean_predicted),
                                 csv::format_real(b.observed), std::to_string(b.count)});
}

inline void write_decision_csv(std::ostream& out, const CrossValResult& cv)
{
    csv::write_row(out, {"classifier", "threshold", "net_benefit", "treat_all", "treat_none"});
    for (const auto& c : cv.classifiers)
        for (std::size_t i = 0; i < c.decision.thresholds.size(); ++i)
            csv::write_row(out, {c.name, csv::format_real(c.decision.thresholds[i]), csv::format_real(c.decision.model[i]),
                                 csv::format_real(c.decision.treat_all[i]), csv::format_real(c.decision.treat_none[i])});
}

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

/// Minimal line chart on [x0, x1] x [y0, y1].
inline auto line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel, const std::vector<Series>& series,
                           double x0 = 0, double x1 = 1, double y0 = 0, double y1 = 1) -> std::string
{
    static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22"};
    const double w = 640, h = 480, left = 60, right = 200, top = 40, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
    auto sy = [&](double v) { return top + ph - (std::clamp(v, y0, y1) - y0) / (y1 - y0) * ph; };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << left << "\" y=\"22\" font-size=\"14\">" << title << "</text>\n";
    s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double xv = x0 + (x1 - x0) * t / 5.0, yv = y0 + (y1 - y0) * t / 5.0;
        s << "<text x=\"" << sx(xv) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">" << fixed(xv, 2) << "</text>\n";
        s << "<text x=\"" << left - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << fixed(yv, 2) << "</text>\n";
    }
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
    s << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2 << ")\" text-anchor=\"middle\">" << ylabel
      << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* col = colours[k % 10];
        s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\"" << (sr.dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
        for (std::size_t i = 0; i < sr.x.size(); ++i) s << fixed(sx(sr.x[i]), 2) << ',' << fixed(sy(sr.y[i]), 2) << ' ';
        s << "\"/>\n";
        const double ly = top + 12 + 14.0 * static_cast<double>(k);
        s << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly << "\" stroke=\"" << col << "\"/>\n";
        s << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\">" << sr.name << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline auto roc_svg(const CrossValResult& cv) -> std::string
{
    std::vector<Series> s;
    for (const auto& c : cv.classifiers) s.push_back({c.name + " (" + fixed(c.roc.auc, 3) + ")", c.roc.fpr, c.roc.tpr});
    s.push_back({"chance", {0, 1}, {0, 1}, true});
    return line_chart_svg("ROC: " + modality_title(cv.modality), "False positive rate", "True positive rate", s);
}

inline auto calibration_svg(const CrossValResult& cv) -> std::string
{
    std::vector<Series> s;
    for (const auto& c : cv.classifiers) {
        Series sr{c.name, {}, {}};
        for (const auto& b : c.calibration.bins) {
            sr.x.push_back(b.mean_predicted);
            sr.y.push_back(b.observed);
        }
        s.push_back(sr);
    }
    s.push_back({"ideal", {0, 1}, {0, 1}, true});
    return line_chart_svg("Calibration: " + modality_title(cv.modality), "Mean predicted probability", "Observed frequency", s);
}

inline auto decision_svg(const CrossValResult& cv) -> std::string
{
    std::vector<Series> s;
    double top = 0.05;
    for (const auto& c : cv.classifiers) {
        s.push_back({c.name, c.decision.thresholds, c.decision.model});
        for (double v : c.decision.model) top = std::max(top, v);
    }
    if (!cv.classifiers.empty()) {
        const auto& d = cv.classifiers.front().decision;
        s.push_back({"treat all", d.thresholds, d.treat_all, true});
        s.push_back({"treat none", d.thresholds, d.treat_none, true});
        for (double v : d.treat_all) top = std::max(top, v);
    }
    return line_chart_svg("Decision curve: " + modality_title(cv.modality), "Threshold probability", "Net benefit", s, 0, 1, -0.05, top);
}

} // namespace riskstack

#endif
