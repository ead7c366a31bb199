#include "riskstack/stacking.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace riskstack;

namespace {

// model returning column `col` of its input, clamped to [0, 1]
class ColumnModel final : public Classifier {
public:
    ColumnModel(Index col, Index width) : col_(col), width_(width) {}
    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override
    {
        check_width(width_, x);
        return x.col(col_).cwiseMax(0.0).cwiseMin(1.0);
    }
    [[nodiscard]] auto feature_count() const -> Index override { return width_; }
    [[nodiscard]] auto to_json() const -> Json override { return {{"col", col_}}; }

private:
    Index col_, width_;
};

class ConstantModel final : public Classifier {
public:
    ConstantModel(double p, Index width) : p_(p), width_(width) {}
    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override { return Vector::Constant(x.rows(), p_); }
    [[nodiscard]] auto feature_count() const -> Index override { return width_; }
    [[nodiscard]] auto to_json() const -> Json override { return {{"p", p_}}; }

private:
    double p_;
    Index width_;
};

auto column_spec(const std::string& name, Index col) -> LearnerSpec
{
    LearnerSpec s;
    s.name = name;
    s.custom = [col](const Matrix& x, const Labels&) { return std::make_shared<ColumnModel>(col, x.cols()); };
    return s;
}

auto constant_spec(const std::string& name, double p) -> LearnerSpec
{
    LearnerSpec s;
    s.name = name;
    s.custom = [p](const Matrix& x, const Labels&) { return std::make_shared<ConstantModel>(p, x.cols()); };
    return s;
}

struct Data {
    Matrix x;
    Labels y;
    FoldPlan plan;
};

// column 0 leaks the label, columns 1..2 are noisy scores, the rest is noise
auto make_data(Index n, std::uint64_t seed, double noise = 0.35) -> Data
{
    Xoshiro256 g(seed);
    Data d{Matrix(n, 6), Labels(static_cast<std::size_t>(n)), {}};
    for (Index i = 0; i < n; ++i) {
        const int c = g.uniform() < 0.45;
        d.y[static_cast<std::size_t>(i)] = c;
        d.x(i, 0) = c;
        d.x(i, 1) = std::clamp(0.5 + (c - 0.5) * 0.6 + noise * g.normal(), 0.0, 1.0);
        d.x(i, 2) = std::clamp(0.5 + (c - 0.5) * 0.4 + noise * g.normal(), 0.0, 1.0);
        for (Index j = 3; j < 6; ++j) d.x(i, j) = g.normal();
    }
    d.plan.k = 5;
    d.plan.seed = seed;
    d.plan.fold = plan_folds(d.y, 5, seed);
    return d;
}

auto small_forest(std::uint64_t seed) -> LearnerSpec
{
    ForestParams p;
    p.trees = 25;
    return random_forest_spec(seed, p);
}

} // namespace

TEST(Oof, EveryRowPredictedOncePerSpecWithoutLeakage)
{
    const auto d = make_data(120, 1);
    const std::vector<LearnerSpec> specs{logistic_spec(), knn_spec(), small_forest(2)};
    const auto oof = generate_oof(specs, d.x, d.y, d.plan, BalancePlan{2, 3});
    EXPECT_EQ(oof.scores.rows(), 120);
    EXPECT_EQ(oof.scores.cols(), 3);
    EXPECT_GE(oof.scores.minCoeff(), 0.0);
    EXPECT_LE(oof.scores.maxCoeff(), 1.0);
    EXPECT_NO_THROW(oof.audit.verify());
    for (std::size_t i = 0; i < d.y.size(); ++i) {
        const auto f = static_cast<std::size_t>(oof.audit.row_fold[i]);
        for (int tf : oof.audit.train_folds[f]) EXPECT_NE(tf, static_cast<int>(f));
    }
}

TEST(Oof, AuditDetectsTampering)
{
    const auto d = make_data(60, 2);
    auto oof = generate_oof(std::vector<LearnerSpec>{logistic_spec()}, d.x, d.y, d.plan);
    auto rows = oof.audit;
    rows.train_rows[static_cast<std::size_t>(rows.row_fold[0])].push_back(0);
    std::sort(rows.train_rows[static_cast<std::size_t>(rows.row_fold[0])].begin(),
              rows.train_rows[static_cast<std::size_t>(rows.row_fold[0])].end());
    EXPECT_THROW(rows.verify(), Error);
    auto folds = oof.audit;
    folds.train_folds[0].push_back(0);
    EXPECT_THROW(folds.verify(), Error);
}

TEST(Oof, LeaveOneOutWithDuplicates)
{
    // each point appears twice with the same label, so the 1-NN of a held-out row is its twin
    Matrix x(8, 2);
    Labels y(8);
    for (Index i = 0; i < 4; ++i) {
        x.row(2 * i) << 3.0 * i, -2.0 * i;
        x.row(2 * i + 1) = x.row(2 * i);
        y[static_cast<std::size_t>(2 * i)] = y[static_cast<std::size_t>(2 * i + 1)] = static_cast<int>(i % 2);
    }
    FoldPlan plan;
    plan.k = 8;
    for (int i = 0; i < 8; ++i) plan.fold.push_back(i);
    const auto oof = generate_oof(std::vector<LearnerSpec>{knn_spec(0, {1})}, x, y, plan);
    oof.audit.verify();
    for (Index i = 0; i < 8; ++i) EXPECT_EQ(oof.scores(i, 0), y[static_cast<std::size_t>(i)]);
}

TEST(Oof, ConstantLearnerGivesConstantColumn)
{
    const auto d = make_data(50, 3);
    const auto oof = generate_oof(std::vector<LearnerSpec>{constant_spec("half", 0.5)}, d.x, d.y, d.plan);
    EXPECT_EQ(oof.scores, Matrix::Constant(50, 1, 0.5));
}

TEST(Oof, OutOfFoldAucNotAboveInFold)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto d = make_data(150, 10 + seed, 0.5);
        Matrix x = d.x.rightCols(5);
        const auto spec = small_forest(seed);
        const auto oof = generate_oof(std::vector<LearnerSpec>{spec}, x, d.y, d.plan);
        const Vector in = train(spec, x, d.y).predict_proba(x);
        const Vector out = oof.scores.col(0);
        const double auc_in = roc_auc(std::span<const double>(in.data(), in.size()), d.y).auc;
        const double auc_out = roc_auc(std::span<const double>(out.data(), out.size()), d.y).auc;
        EXPECT_LE(auc_out, auc_in);
    }
}

TEST(Selection, OracleRankedFirst)
{
    const auto d = make_data(100, 4);
    const std::vector<LearnerSpec> cands{column_spec("noisy a", 1), constant_spec("constant", 0.3), column_spec("oracle", 0),
                                         column_spec("noisy b", 2)};
    const auto sel = select_top3(cands, d.x, d.y, d.plan);
    EXPECT_EQ(sel.ranking.front().name, "oracle");
    EXPECT_EQ(sel.ranking.front().f1, 1.0);
    EXPECT_EQ(sel.ranking.back().name, "constant");
    ASSERT_EQ(sel.chosen.size(), 3u);
    EXPECT_EQ(sel.chosen[0].name, "oracle");
}

TEST(Selection, ThreeCandidatesAllChosenAndTiesKeepOrder)
{
    const auto d = make_data(60, 5);
    const std::vector<LearnerSpec> cands{constant_spec("c1", 0.2), constant_spec("c2", 0.2), constant_spec("c3", 0.2)};
    const auto sel = select_top3(cands, d.x, d.y, d.plan);
    ASSERT_EQ(sel.chosen.size(), 3u);
    EXPECT_EQ(sel.chosen[0].name, "c1");
    EXPECT_EQ(sel.chosen[1].name, "c2");
    EXPECT_EQ(sel.chosen[2].name, "c3");
    EXPECT_THROW((void)select_top3(std::span<const LearnerSpec>(cands.data(), 2), d.x, d.y, d.plan), InvalidArgument);
}

TEST(Stacking, PerfectMetaFeatures)
{
    const auto d = make_data(80, 6);
    const std::vector<LearnerSpec> specs{column_spec("oracle", 0), column_spec("a", 1), column_spec("b", 2)};
    const auto m = fit_stacking(specs, d.x, d.y, d.plan);
    m.audit.verify();
    const Vector p = predict_stacking(m, d.x);
    for (Index i = 0; i < p.size(); ++i) EXPECT_EQ(p(i) >= 0.5, d.y[static_cast<std::size_t>(i)] == 1);
}

TEST(Stacking, ConstantBaseGetsNoWeight)
{
    const auto d = make_data(200, 7);
    const std::vector<LearnerSpec> specs{column_spec("a", 1), constant_spec("constant", 0.5), column_spec("b", 2)};
    const auto m = fit_stacking(specs, d.x, d.y, d.plan);
    EXPECT_LT(std::abs(m.meta(2)), 1e-3);
    EXPECT_GT(m.meta(1), 0.0);
    EXPECT_GT(m.meta(3), 0.0);
}

TEST(Stacking, PermutingBasesPermutesWeights)
{
    const auto d = make_data(150, 8);
    const std::vector<LearnerSpec> a{logistic_spec(), knn_spec(), lda_spec()};
    const std::vector<LearnerSpec> b{lda_spec(), logistic_spec(), knn_spec()};
    const auto ma = fit_stacking(a, d.x.rightCols(5), d.y, d.plan);
    const auto mb = fit_stacking(b, d.x.rightCols(5), d.y, d.plan);
    EXPECT_NEAR(ma.meta(0), mb.meta(0), 1e-9);
    EXPECT_NEAR(ma.meta(1), mb.meta(2), 1e-9);
    EXPECT_NEAR(ma.meta(2), mb.meta(3), 1e-9);
    EXPECT_NEAR(ma.meta(3), mb.meta(1), 1e-9);
    const Vector pa = predict_stacking(ma, d.x.rightCols(5));
    const Vector pb = predict_stacking(mb, d.x.rightCols(5));
    EXPECT_LT((pa - pb).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stacking, HandSetMetaWeights)
{
    const auto d = make_data(40, 9);
    auto m = fit_stacking(std::vector<LearnerSpec>{column_spec("a", 1), column_spec("b", 2), column_spec("o", 0)}, d.x, d.y,
                          d.plan);
    m.meta = Vector::Zero(4);
    EXPECT_EQ(predict_stacking(m, d.x), Vector::Constant(40, 0.5));
    m.meta << -1.0, 2.0, 0.5, 3.0;
    const Vector p = predict_stacking(m, d.x);
    for (Index i = 0; i < 40; ++i) {
        const double z = -1.0 + 2.0 * d.x(i, 1) + 0.5 * d.x(i, 2) + 3.0 * d.x(i, 0);
        EXPECT_NEAR(p(i), 1.0 / (1.0 + std::exp(-z)), 1e-15);
    }
    Matrix s = Matrix::Constant(1, 3, 0.2);
    const double before = m.combine(s)(0);
    s(0, 1) = 0.9;
    EXPECT_GE(m.combine(s)(0), before);
    EXPECT_THROW((void)predict_stacking(m, d.x.leftCols(3)), InvalidArgument);
}

TEST(Stacking, RestrictedPlanKeepsTestFoldOut)
{
    const auto d = make_data(100, 10);
    const auto test = d.plan.test_rows(0);
    const auto train_rows = d.plan.train_rows(0);
    const auto inner = d.plan.restricted(train_rows);
    EXPECT_EQ(inner.k, 4);
    const Matrix xtr = select_rows(d.x.rightCols(5), train_rows);
    const auto ytr = select(std::span<const int>(d.y), std::span<const Index>(train_rows));
    const auto m = fit_stacking(std::vector<LearnerSpec>{logistic_spec(), knn_spec(), lda_spec()}, xtr, ytr, inner);
    m.audit.verify();
    // map inner audit rows back and confirm no outer test row appears
    for (const auto& rows : m.audit.train_rows)
        for (Index r : rows) EXPECT_FALSE(std::binary_search(test.begin(), test.end(), train_rows[static_cast<std::size_t>(r)]));
}
