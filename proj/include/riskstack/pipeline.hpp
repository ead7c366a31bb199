#ifndef RISKSTACK_PIPELINE_HPP
#define RISKSTACK_PIPELINE_HPP

#include "riskstack/core.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/evaluation.hpp"
#include "riskstack/learners.hpp"
#include "riskstack/preprocess.hpp"
#include "riskstack/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace riskstack {

enum class Modality { image, clinical, fused };

inline auto to_string(Modality m) -> std::string
{
    switch (m) {
    case Modality::image: return "image";
    case Modality::clinical: return "clinical";
    default: return "fused";
    }
}

inline auto parse_modality(const std::string& s) -> Modality
{
    const auto v = lower(s);
    if (v == "image" || v == "cxr") return Modality::image;
    if (v == "clinical") return Modality::clinical;
    if (v == "fused" || v == "both") return Modality::fused;
    throw InvalidArgument("modality must be image, clinical or fused, got '" + s + "'");
}

inline auto modality_title(Modality m) -> std::string
{
    switch (m) {
    case Modality::image: return "CXR Images";
    case Modality::clinical: return "Clinical Data";
    default: return "Both CXR images & Clinical data";
    }
}

// short code -> learner, for config files and CLI flags
struct CandidateOverrides {
    std::optional<int> forest_trees;
    std::optional<int> boosting_rounds;
};

inline auto short_code(const LearnerSpec& s) -> std::string
{
    const auto open = s.name.rfind('(');
    const auto close = s.name.rfind(')');
    if (open != std::string::npos && close != std::string::npos && close > open) return s.name.substr(open + 1, close - open - 1);
    return s.name;
}

inline auto candidate_from_code(const std::string& code, std::uint64_t seed, const CandidateOverrides& o = {}) -> LearnerSpec
{
    const auto c = lower(code);
    auto forest = [&] {
        ForestParams p;
        if (o.forest_trees) p.trees = *o.forest_trees;
        return p;
    };
    auto boost = [&](BoostingParams p) {
        if (o.boosting_rounds) p.rounds = *o.boosting_rounds;
        return p;
    };
    if (c == "lr") return logistic_spec(seed);
    if (c == "lda") return lda_spec(seed);
    if (c == "knn") return knn_spec(seed);
    if (c == "rf") return random_forest_spec(seed, forest());
    if (c == "et") return extra_trees_spec(seed, forest());
    if (c == "gb") return gradient_boosting_spec(seed, boost({}));
    if (c == "xgb") {
        auto s = xgb_standin_spec(seed);
        s.params = boost(std::get<BoostingParams>(s.params));
        return s;
    }
    if (c == "ada") {
        auto s = adaboost_standin_spec(seed);
        s.params = boost(std::get<BoostingParams>(s.params));
        return s;
    }
    throw InvalidArgument("unknown learner code '" + code + "' (expected lr, lda, knn, rf, et, gb, xgb, ada)");
}

inline auto default_candidate_codes() -> std::vector<std::string> { return {"lda", "xgb", "rf", "lr", "ada", "et", "knn", "gb"}; }

inline auto make_candidates(const std::vector<std::string>& codes, std::uint64_t seed, const CandidateOverrides& o = {})
    -> std::vector<LearnerSpec>
{
    std::vector<LearnerSpec> out;
    for (std::size_t i = 0; i < codes.size(); ++i) out.push_back(candidate_from_code(codes[i], derive_seed(seed, 100 + i), o));
    return out;
}

struct PipelineConfig {
    Stage stage = Stage::risk;
    Modality modality = Modality::fused;
    std::vector<std::string> clinical_features = default_clinical_features();
    int pca_components = 64;
    bool whiten = true;
    double pca_floor = 1e-10;
    MiceOptions mice{};
    GammaMap gamma{};
    int folds = 5;
    std::uint64_t seed = 7;
    std::optional<BalancePlan> balance; // default depends on the stage
    std::vector<LearnerSpec> candidates = make_candidates(default_candidate_codes(), 7);
    double meta_l2 = 1e-6;
    bool stacking = true;
    int nomogram_resamples = 1000;
    double nomogram_l2 = 0.0;

    [[nodiscard]] auto balance_plan() const -> BalancePlan
    {
        if (balance) return *balance;
        return stage == Stage::risk ? BalancePlan::risk_default() : BalancePlan::outcome_default();
    }
};

// ---------------------------------------------------------------------------
// preprocessing

inline auto clinical_matrix(const Cohort& cohort, std::span<const Index> rows, const std::vector<std::string>& names)
    -> MaskedMatrix
{
    MaskedMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = cohort[static_cast<std::size_t>(rows[i])];
        for (std::size_t j = 0; j < names.size(); ++j)
            m.set(static_cast<Index>(i), static_cast<Index>(j), clinical_value(cohort, r, names[j]));
    }
    return m;
}

inline auto image_matrix(const Cohort& cohort, std::span<const Index> rows) -> Matrix
{
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cohort.feature_length()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = cohort[static_cast<std::size_t>(rows[i])];
        if (!r.image_features) throw InvalidArgument("record '" + r.id + "' has no image features");
        for (std::size_t j = 0; j < r.image_features->size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = (*r.image_features)[j];
    }
    return m;
}

/// Fitted input transform: imputation and z-scoring of the clinical block,
/// whitened PCA of the image block, concatenated per the modality.
struct Preprocessor {
    Modality modality = Modality::fused;
    std::vector<std::string> clinical_features;
    std::optional<ImputationModel> imputation;
    std::optional<Normalizer> normalizer;
    std::optional<PCAModel> pca;

    [[nodiscard]] auto uses_clinical() const -> bool { return modality != Modality::image; }
    [[nodiscard]] auto uses_image() const -> bool { return modality != Modality::clinical; }

    [[nodiscard]] auto width() const -> Index
    {
        return (uses_clinical() ? static_cast<Index>(clinical_features.size()) : 0) + (pca ? pca->count() : 0);
    }

    [[nodiscard]] auto transform(const MaskedMatrix& clinical, const Matrix& image) const -> Matrix
    {
        Matrix parts[2];
        if (uses_clinical()) parts[0] = zscore_apply(*normalizer, mice_apply(*imputation, clinical));
        if (uses_image()) parts[1] = pca_transform(*pca, image);
        if (!uses_image()) return parts[0];
        if (!uses_clinical()) return parts[1];
        return hstack(parts[0], parts[1]);
    }

    [[nodiscard]] auto transform(const Cohort& cohort, std::span<const Index> rows) const -> Matrix
    {
        return transform(uses_clinical() ? clinical_matrix(cohort, rows, clinical_features) : MaskedMatrix{},
                         uses_image() ? image_matrix(cohort, rows) : Matrix{});
    }
};

inline auto fit_preprocessor(const Cohort& cohort, std::span<const Index> rows, const PipelineConfig& cfg) -> Preprocessor
{
    Preprocessor p;
    p.modality = cfg.modality;
    p.clinical_features = cfg.clinical_features;
    if (p.uses_clinical()) {
        require(!cfg.clinical_features.empty(), "pipeline: no clinical features configured");
        const auto m = clinical_matrix(cohort, rows, cfg.clinical_features);
        p.imputation = mice_fit(m, cfg.mice, cfg.clinical_features);
        p.normalizer = zscore_fit(mice_apply(*p.imputation, m));
    }
    if (p.uses_image()) {
        const Matrix img = image_matrix(cohort, rows);
        const Index max_p = std::min<Index>(img.rows() - 1, img.cols());
        p.pca = pca_fit(img, std::min<Index>(cfg.pca_components, max_p), cfg.whiten, cfg.pca_floor);
    }
    return p;
}

inline auto all_rows(std::size_t n) -> std::vector<Index>
{
    std::vector<Index> r(n);
    std::iota(r.begin(), r.end(), 0);
    return r;
}

// ---------------------------------------------------------------------------
// cross-validation

struct FoldSummary {
    double mean = 0.0;
    double sd = 0.0;
};

struct ClassifierResult {
    std::string name;
    std::vector<double> probability; // pooled test-fold predictions, row order of the cohort
    MetricReport report;             // weighted, pooled over folds
    FoldSummary fold_f1;
    FoldSummary fold_accuracy;
    ROCCurve roc;
    CalibrationCurve calibration;
    DecisionCurve decision;
};

struct CrossValResult {
    Modality modality = Modality::fused;
    Stage stage = Stage::risk;
    Labels labels;
    std::vector<ClassifierResult> classifiers; // candidates in declaration order, then stacking
    std::vector<CandidateScore> ranking;
    std::vector<std::string> stack_members;
    OofAudit outer_audit;                      // every fold's training rows
    std::vector<OofAudit> stacking_audits;     // inner OOF audits, one per outer fold

    void verify() const
    {
        outer_audit.verify();
        for (const auto& a : stacking_audits) a.verify();
    }

    [[nodiscard]] auto find(const std::string& name) const -> const ClassifierResult*
    {
        for (const auto& c : classifiers)
            if (c.name == name) return &c;
        return nullptr;
    }

    [[nodiscard]] auto stacking() const -> const ClassifierResult*
    {
        for (const auto& c : classifiers)
            if (c.name.rfind("Stacking model", 0) == 0) return &c;
        return nullptr;
    }
};

namespace detail {
inline auto summarize(const std::vector<double>& v) -> FoldSummary
{
    FoldSummary s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return s;
}

inline auto finish(std::string name, std::vector<double> prob, const Labels& y, const FoldPlan& plan) -> ClassifierResult
{
    ClassifierResult c;
    c.name = std::move(name);
    c.probability = std::move(prob);
    c.report = weighted_report(confusion(c.probability, y));
    if (count_positive(y) > 0 && count_positive(y) < static_cast<Index>(y.size())) {
        c.roc = roc_auc(c.probability, y);
        c.report.auc = c.roc.auc;
    }
    c.calibration = calibration_curve(c.probability, y);
    const auto grid = threshold_grid();
    c.decision = decision_curve(c.probability, y, grid);
    std::vector<double> f1, acc;
    for (int f = 0; f < plan.k; ++f) {
        const auto rows = plan.test_rows(f);
        if (rows.empty()) continue;
        const auto p = select(std::span<const double>(c.probability), std::span<const Index>(rows));
        const auto yy = select(std::span<const int>(y), std::span<const Index>(rows));
        const auto rep = weighted_report(confusion(p, yy));
        f1.push_back(rep.f1.value);
        acc.push_back(rep.accuracy.value);
    }
    c.fold_f1 = summarize(f1);
    c.fold_accuracy = summarize(acc);
    return c;
}
} // namespace detail

/// Five-fold style evaluation: for each fold, preprocessing and learners are
/// fitted on the (class-balanced) training partition only and predict the
/// untouched test fold. Candidates are ranked on their pooled predictions;
/// the top three are stacked, with each outer fold's meta-learner trained on
/// out-of-fold predictions from the remaining folds.
inline auto crossval_run(const Cohort& cohort, const PipelineConfig& cfg, const FoldPlan& plan) -> CrossValResult
{
    const Labels y = cohort.labels(cfg.stage);
    require(plan.size() == y.size(), "crossval_run: fold plan does not match the cohort");
    require(!cfg.candidates.empty(), "crossval_run: no candidate learners");
    const auto balance = cfg.balance_plan();
    const auto n = static_cast<Index>(y.size());

    CrossValResult res;
    res.modality = cfg.modality;
    res.stage = cfg.stage;
    res.labels = y;
    res.outer_audit.row_fold = plan.fold;
    res.outer_audit.train_rows.resize(static_cast<std::size_t>(plan.k));
    res.outer_audit.train_folds.resize(static_cast<std::size_t>(plan.k));

    // per-fold transformed matrices, reused by the stacking pass
    std::vector<Matrix> xtrain(static_cast<std::size_t>(plan.k)), xtest(static_cast<std::size_t>(plan.k));
    Matrix cand = Matrix::Zero(n, static_cast<Index>(cfg.candidates.size()));
    for (int f = 0; f < plan.k; ++f) {
        const auto test = plan.test_rows(f);
        if (test.empty()) continue;
        const auto train_rows = plan.train_rows(f);
        const auto pre = fit_preprocessor(cohort, train_rows, cfg);
        xtrain[static_cast<std::size_t>(f)] = pre.transform(cohort, train_rows);
        xtest[static_cast<std::size_t>(f)] = pre.transform(cohort, test);

        auto& audit_rows = res.outer_audit.train_rows[static_cast<std::size_t>(f)];
        audit_rows = train_rows;
        for (Index r : train_rows) res.outer_audit.train_folds[static_cast<std::size_t>(f)].push_back(plan.fold[static_cast<std::size_t>(r)]);
        auto& tf = res.outer_audit.train_folds[static_cast<std::size_t>(f)];
        std::sort(tf.begin(), tf.end());
        tf.erase(std::unique(tf.begin(), tf.end()), tf.end());

        const auto ytr = select(std::span<const int>(y), std::span<const Index>(train_rows));
        const auto local = all_rows(train_rows.size());
        const auto rep = balance_by_replication(std::span<const Index>(local), std::span<const int>(ytr), balance);
        const Matrix xb = select_rows(xtrain[static_cast<std::size_t>(f)], rep);
        const auto yb = select(std::span<const int>(ytr), std::span<const Index>(rep));
        for (std::size_t j = 0; j < cfg.candidates.size(); ++j) {
            const auto model = train(cfg.candidates[j], xb, yb);
            const Vector p = model.predict_proba(xtest[static_cast<std::size_t>(f)]);
            for (std::size_t t = 0; t < test.size(); ++t) cand(test[t], static_cast<Index>(j)) = p(static_cast<Index>(t));
        }
    }
    for (std::size_t j = 0; j < cfg.candidates.size(); ++j) {
        const Vector col = cand.col(static_cast<Index>(j));
        res.classifiers.push_back(detail::finish(cfg.candidates[j].name, std::vector<double>(col.data(), col.data() + n), y, plan));
    }
    res.ranking = rank_candidates(cfg.candidates, cand, y);

    if (cfg.stacking && cfg.candidates.size() >= 3) {
        std::vector<LearnerSpec> chosen;
        std::string label;
        for (std::size_t i = 0; i < 3; ++i) {
            chosen.push_back(cfg.candidates[res.ranking[i].index]);
            res.stack_members.push_back(chosen.back().name);
            label += (i ? "+" : "") + short_code(chosen.back());
        }
        std::vector<double> prob(static_cast<std::size_t>(n), 0.0);
        for (int f = 0; f < plan.k; ++f) {
            const auto test = plan.test_rows(f);
            if (test.empty()) continue;
            const auto train_rows = plan.train_rows(f);
            const auto inner = plan.restricted(train_rows);
            const auto ytr = select(std::span<const int>(y), std::span<const Index>(train_rows));
            const auto model = fit_stacking(chosen, xtrain[static_cast<std::size_t>(f)], ytr, inner, {balance, cfg.meta_l2});
            // inner audit rows are local to the training partition; map them back to cohort rows
            OofAudit mapped = model.audit;
            for (auto& rows : mapped.train_rows) {
                for (auto& r : rows) r = train_rows[static_cast<std::size_t>(r)];
            }
            OofAudit global;
            global.row_fold.assign(static_cast<std::size_t>(n), -1);
            global.train_rows = mapped.train_rows;
            global.train_folds = mapped.train_folds;
            for (std::size_t i = 0; i < train_rows.size(); ++i)
                global.row_fold[static_cast<std::size_t>(train_rows[i])] = model.audit.row_fold[i];
            // rows outside the inner plan carry no OOF prediction; drop them before verification
            OofAudit compact;
            compact.train_rows = global.train_rows;
            compact.train_folds = global.train_folds;
            std::vector<Index> row_ids;
            for (Index r = 0; r < n; ++r)
                if (global.row_fold[static_cast<std::size_t>(r)] >= 0) row_ids.push_back(r);
            // verify in cohort coordinates: row r must not be among the training rows of its fold model
            for (Index r : row_ids) {
                const auto fm = static_cast<std::size_t>(global.row_fold[static_cast<std::size_t>(r)]);
                const auto& tr = global.train_rows[fm];
                if (std::find(tr.begin(), tr.end(), r) != tr.end())
                    throw Error("crossval audit: inner OOF row " + std::to_string(r) + " was seen by its model");
            }
            res.stacking_audits.push_back(model.audit);

            const Vector p = predict_stacking(model, xtest[static_cast<std::size_t>(f)]);
            for (std::size_t t = 0; t < test.size(); ++t) prob[static_cast<std::size_t>(test[t])] = p(static_cast<Index>(t));
        }
        res.classifiers.push_back(detail::finish("Stacking model (" + label + ")", std::move(prob), y, plan));
    }
    res.verify();
    return res;
}

// ---------------------------------------------------------------------------
// feature ranking and the top-k sweep

struct FeatureRanking {
    std::vector<std::pair<std::string, double>> features; // nonincreasing importance, sums to 1
    ForestParams forest;
    std::uint64_t seed = 0;
};

enum class ImportanceMethod { gini, permutation };

/// Mean-decrease-in-impurity ranking from a random forest; ties keep input order.
inline auto rank_features(const Matrix& x, const Labels& y, const std::vector<std::string>& names, ForestParams forest = {},
                          std::uint64_t seed = 0, ImportanceMethod method = ImportanceMethod::gini) -> FeatureRanking
{
    require(static_cast<Index>(names.size()) == x.cols(), "rank_features: one name per column required");
    require_binary(y);
    const Index pos = count_positive(y);
    if (pos == 0 || pos == static_cast<Index>(y.size())) throw InvalidArgument("rank_features: labels contain a single class");
    const auto model = fit_forest(x, y, forest, false, seed);
    std::vector<double> imp = model->importance();
    if (method == ImportanceMethod::permutation) {
        auto accuracy = [&](const Matrix& m) {
            const Vector p = model->predict_proba(m);
            double ok = 0;
            for (Index i = 0; i < p.size(); ++i) ok += ((p(i) >= 0.5) == (y[static_cast<std::size_t>(i)] == 1));
            return ok / static_cast<double>(p.size());
        };
        const double base = accuracy(x);
        Xoshiro256 rng(derive_seed(seed, 0x9E7));
        for (Index j = 0; j < x.cols(); ++j) {
            Matrix shuffled = x;
            std::vector<Index> perm = all_rows(static_cast<std::size_t>(x.rows()));
            rng.shuffle(std::span<Index>(perm));
            for (Index i = 0; i < x.rows(); ++i) shuffled(i, j) = x(perm[static_cast<std::size_t>(i)], j);
            imp[static_cast<std::size_t>(j)] = std::max(0.0, base - accuracy(shuffled));
        }
        const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
        for (auto& v : imp) v = total > 0 ? v / total : 1.0 / static_cast<double>(imp.size());
    }
    FeatureRanking r;
    r.forest = forest;
    r.seed = seed;
    for (std::size_t j = 0; j < names.size(); ++j) r.features.emplace_back(names[j], imp[j]);
    std::stable_sort(r.features.begin(), r.features.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return r;
}

/// Ranks every clinical variable of the cohort (demographics included) after
/// chained-equation imputation and z-scoring of the full cohort.
inline auto rank_cohort_features(const Cohort& cohort, Stage stage, ForestParams forest, std::uint64_t seed,
                                 const MiceOptions& mice = {}, ImportanceMethod method = ImportanceMethod::gini) -> FeatureRanking
{
    std::vector<std::string> names = {"age", "gender"};
    names.insert(names.end(), cohort.biomarker_names().begin(), cohort.biomarker_names().end());
    const auto rows = all_rows(cohort.size());
    const auto m = clinical_matrix(cohort, rows, names);
    const auto imp = mice_fit(m, mice, names);
    const Matrix x = zscore_apply(zscore_fit(mice_apply(imp, m)), mice_apply(imp, m));
    return rank_features(x, cohort.labels(stage), names, forest, seed, method);
}

struct SweepRow {
    int k = 0;
    std::vector<std::string> features;
    MetricReport report;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    int best_k = 0;
};

/// Cross-validates `reference` on the top-k ranked clinical variables for
/// each k; the best k maximises weighted F1, ties going to the smaller k.
inline auto topk_sweep(const Cohort& cohort, const FeatureRanking& ranking, int k_min, int k_max, const LearnerSpec& reference,
                       PipelineConfig cfg, const FoldPlan& plan) -> SweepResult
{
    require(k_min >= 1 && k_min <= k_max, "topk_sweep: invalid k range");
    require(static_cast<std::size_t>(k_max) <= ranking.features.size(), "topk_sweep: k exceeds the number of ranked features");
    cfg.modality = Modality::clinical;
    cfg.candidates = {reference};
    cfg.stacking = false;
    SweepResult out;
    double best = -1;
    for (int k = k_min; k <= k_max; ++k) {
        SweepRow row;
        row.k = k;
        for (int i = 0; i < k; ++i) row.features.push_back(ranking.features[static_cast<std::size_t>(i)].first);
        cfg.clinical_features = row.features;
        const auto cv = crossval_run(cohort, cfg, plan);
        row.report = cv.classifiers.front().report;
        if (row.report.f1.value > best) {
            best = row.report.f1.value;
            out.best_k = k;
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

} // namespace riskstack

#endif
