#ifndef RISKSTACK_STACKING_HPP
#define RISKSTACK_STACKING_HPP

#include "riskstack/core.hpp"
#include "riskstack/dataset.hpp"
#include "riskstack/evaluation.hpp"
#include "riskstack/learners.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace riskstack {

/// Record of which rows trained each per-fold model, kept next to every
/// out-of-fold prediction so leakage can be checked after the fact.
struct OofAudit {
    std::vector<int> row_fold;                    // fold that row i was predicted in
    std::vector<std::vector<Index>> train_rows;   // rows (unique, sorted) that trained fold f's models
    std::vector<std::vector<int>> train_folds;    // folds that trained fold f's models

    /// Throws Error if any row was predicted by a model that saw it.
    void verify() const
    {
        for (std::size_t i = 0; i < row_fold.size(); ++i) {
            const auto f = static_cast<std::size_t>(row_fold[i]);
            if (f >= train_rows.size()) throw Error("oof audit: row " + std::to_string(i) + " has no producing model");
            if (std::binary_search(train_rows[f].begin(), train_rows[f].end(), static_cast<Index>(i)))
                throw Error("oof audit: row " + std::to_string(i) + " was in the training set of its own fold model");
            if (std::find(train_folds[f].begin(), train_folds[f].end(), row_fold[i]) != train_folds[f].end())
                throw Error("oof audit: fold " + std::to_string(f) + " model was trained on its own fold");
        }
    }
};

struct OofResult {
    Matrix scores; // n x specs
    OofAudit audit;
};

// Training rows of fold f, replicated per the balance plan.
inline auto balanced_train_rows(const FoldPlan& plan, int f, std::span<const int> y, const BalancePlan& balance)
    -> std::vector<Index>
{
    const auto rows = plan.train_rows(f);
    const auto labels = select(y, std::span<const Index>(rows));
    return balance_by_replication(std::span<const Index>(rows), std::span<const int>(labels), balance);
}

/// Out-of-fold base probabilities: entry (i, j) comes from spec j trained on
/// every fold except fold(i).
inline auto generate_oof(std::span<const LearnerSpec> specs, const Matrix& x, const Labels& y, const FoldPlan& plan,
                         const BalancePlan& balance = {}) -> OofResult
{
    require(plan.size() == y.size() && x.rows() == static_cast<Index>(y.size()), "generate_oof: fold plan does not cover all rows");
    OofResult out;
    out.scores = Matrix::Constant(x.rows(), static_cast<Index>(specs.size()), -1.0);
    out.audit.row_fold = plan.fold;
    out.audit.train_rows.resize(static_cast<std::size_t>(plan.k));
    out.audit.train_folds.resize(static_cast<std::size_t>(plan.k));
    for (int f = 0; f < plan.k; ++f) {
        const auto test = plan.test_rows(f);
        if (test.empty()) continue;
        const auto train_idx = balanced_train_rows(plan, f, y, balance);
        const Matrix xtr = select_rows(x, train_idx);
        const auto ytr = select(std::span<const int>(y), std::span<const Index>(train_idx));
        const Matrix xte = select_rows(x, test);

        auto& audit_rows = out.audit.train_rows[static_cast<std::size_t>(f)];
        audit_rows.assign(train_idx.begin(), train_idx.end());
        std::sort(audit_rows.begin(), audit_rows.end());
        audit_rows.erase(std::unique(audit_rows.begin(), audit_rows.end()), audit_rows.end());
        auto& audit_folds = out.audit.train_folds[static_cast<std::size_t>(f)];
        for (Index r : audit_rows) audit_folds.push_back(plan.fold[static_cast<std::size_t>(r)]);
        std::sort(audit_folds.begin(), audit_folds.end());
        audit_folds.erase(std::unique(audit_folds.begin(), audit_folds.end()), audit_folds.end());

        for (std::size_t j = 0; j < specs.size(); ++j) {
            const auto model = train(specs[j], xtr, ytr);
            const Vector p = model.predict_proba(xte);
            for (std::size_t t = 0; t < test.size(); ++t) out.scores(test[t], static_cast<Index>(j)) = p(static_cast<Index>(t));
        }
    }
    if ((out.scores.array() < 0).any()) throw Error("generate_oof: some rows received no prediction");
    return out;
}

struct CandidateScore {
    std::size_t index = 0; // position in the candidate list
    std::string name;
    double f1 = 0.0;       // weighted F1 of the concatenated CV predictions
    double accuracy = 0.0;
};

/// Orders candidates by weighted F1, then accuracy, then declaration order.
inline auto rank_candidates(std::span<const LearnerSpec> specs, const Matrix& oof, std::span<const int> y)
    -> std::vector<CandidateScore>
{
    std::vector<CandidateScore> out;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const Vector col = oof.col(static_cast<Index>(j));
        const auto rep = weighted_report(confusion(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), y));
        out.push_back({j, specs[j].name, rep.f1.value, rep.accuracy.value});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.f1 != b.f1) return a.f1 > b.f1;
        return a.accuracy > b.accuracy;
    });
    return out;
}

struct Selection {
    std::vector<LearnerSpec> chosen;
    std::vector<CandidateScore> ranking;
};

inline auto select_top3(std::span<const LearnerSpec> candidates, const Matrix& x, const Labels& y, const FoldPlan& plan,
                        const BalancePlan& balance = {}) -> Selection
{
    require(candidates.size() >= 3, "select_top3: need at least 3 candidates");
    const auto oof = generate_oof(candidates, x, y, plan, balance);
    oof.audit.verify();
    Selection s;
    s.ranking = rank_candidates(candidates, oof.scores, y);
    for (std::size_t i = 0; i < 3; ++i) s.chosen.push_back(candidates[s.ranking[i].index]);
    return s;
}

struct StackingModel {
    std::vector<TrainedLearner> bases; // refit on the full training set
    Vector meta;                       // intercept, then one weight per base
    FoldPlan plan;
    OofAudit audit;
    Matrix oof;                        // meta-features the meta-learner was fitted on
    std::vector<CandidateScore> selection;

    [[nodiscard]] auto width() const -> Index { return bases.empty() ? 0 : bases.front().feature_count; }

    [[nodiscard]] auto base_scores(const Matrix& x) const -> Matrix
    {
        Matrix s(x.rows(), static_cast<Index>(bases.size()));
        for (std::size_t j = 0; j < bases.size(); ++j) s.col(static_cast<Index>(j)) = bases[j].predict_proba(x);
        return s;
    }

    [[nodiscard]] auto combine(const Matrix& scores) const -> Vector
    {
        require(scores.cols() == meta.size() - 1, "stacking: meta-feature width mismatch");
        Vector out(scores.rows());
        for (Index i = 0; i < scores.rows(); ++i) out(i) = sigmoid(meta(0) + scores.row(i).dot(meta.tail(meta.size() - 1)));
        return out;
    }
};

struct StackingOptions {
    BalancePlan balance{};
    double meta_l2 = 1e-6;
};

inline auto fit_stacking(std::span<const LearnerSpec> specs, const Matrix& x, const Labels& y, const FoldPlan& plan,
                         const StackingOptions& opt = {}) -> StackingModel
{
    require(!specs.empty(), "fit_stacking: no base learners");
    StackingModel m;
    m.plan = plan;
    auto oof = generate_oof(specs, x, y, plan, opt.balance);
    oof.audit.verify();
    m.audit = std::move(oof.audit);
    m.oof = std::move(oof.scores);
    m.meta = fit_logistic(m.oof, y, LogisticParams{opt.meta_l2, 100, 1e-8}).beta;

    std::vector<Index> all(static_cast<std::size_t>(x.rows()));
    std::iota(all.begin(), all.end(), 0);
    const auto full = balance_by_replication(std::span<const Index>(all), std::span<const int>(y), opt.balance);
    const Matrix xfull = select_rows(x, full);
    const auto yfull = select(std::span<const int>(y), std::span<const Index>(full));
    for (const auto& s : specs) m.bases.push_back(train(s, xfull, yfull));
    return m;
}

inline auto predict_stacking(const StackingModel& m, const Matrix& x) -> Vector
{
    if (x.cols() != m.width())
        throw InvalidArgument("predict_stacking: matrix has " + std::to_string(x.cols()) + " features, model expects " +
                              std::to_string(m.width()));
    return m.combine(m.base_scores(x));
}

} // namespace riskstack

#endif
