#ifndef RISKSTACK_LEARNERS_HPP
#define RISKSTACK_LEARNERS_HPP

#include "riskstack/core.hpp"
#include "riskstack/rng.hpp"
#include "riskstack/tree.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace riskstack {

using Json = nlohmann::json;

enum class Algorithm { logistic_regression, lda, knn, random_forest, extra_trees, gradient_boosting };

inline auto to_string(Algorithm a) -> std::string
{
    switch (a) {
    case Algorithm::logistic_regression: return "logistic_regression";
    case Algorithm::lda: return "lda";
    case Algorithm::knn: return "knn";
    case Algorithm::random_forest: return "random_forest";
    case Algorithm::extra_trees: return "extra_trees";
    case Algorithm::gradient_boosting: return "gradient_boosting";
    }
    return "?";
}

inline auto parse_algorithm(const std::string& s) -> Algorithm
{
    for (auto a : {Algorithm::logistic_regression, Algorithm::lda, Algorithm::knn, Algorithm::random_forest,
                   Algorithm::extra_trees, Algorithm::gradient_boosting})
        if (to_string(a) == s) return a;
    throw InvalidArgument("unknown algorithm '" + s + "'");
}

struct LogisticParams {
    double l2 = 1e-4;
    int max_iter = 100;
    double tol = 1e-8;
};

struct LdaParams {
    double ridge = 1e-6; // times trace(S) / d
};

struct KnnParams {
    int k = 5;
};

struct ForestParams {
    int trees = 200;
    int max_depth = -1;
    double min_leaf = 1;
    int max_features = 0; // 0: floor(sqrt(d))
    bool bootstrap = true;
    int threads = 1;      // does not affect results
};

struct BoostingParams {
    int rounds = 200;
    double learning_rate = 0.1;
    int max_depth = 3;
    double min_leaf = 1;
    double leaf_l2 = 0.0;
};

using Hyperparameters = std::variant<LogisticParams, LdaParams, KnnParams, ForestParams, BoostingParams>;

class Classifier;

struct LearnerSpec {
    std::string name;
    Algorithm algorithm = Algorithm::logistic_regression;
    Hyperparameters params = LogisticParams{};
    std::uint64_t seed = 0;
    // Replaces the built-in algorithm (test doubles, external models). Not serialisable.
    std::function<std::shared_ptr<const Classifier>(const Matrix&, const Labels&)> custom;

    [[nodiscard]] auto is_custom() const -> bool { return static_cast<bool>(custom); }
};

inline void validate(const LearnerSpec& s)
{
    if (s.is_custom()) return;
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LogisticParams>) {
                require(s.algorithm == Algorithm::logistic_regression, s.name + ": logistic parameters on non-logistic learner");
                require(p.l2 >= 0 && p.max_iter >= 1 && p.tol > 0, s.name + ": invalid logistic regression parameters");
            } else if constexpr (std::is_same_v<P, LdaParams>) {
                require(s.algorithm == Algorithm::lda, s.name + ": LDA parameters on non-LDA learner");
                require(p.ridge >= 0, s.name + ": LDA ridge must be >= 0");
            } else if constexpr (std::is_same_v<P, KnnParams>) {
                require(s.algorithm == Algorithm::knn, s.name + ": KNN parameters on non-KNN learner");
                require(p.k >= 1, s.name + ": k must be >= 1");
            } else if constexpr (std::is_same_v<P, ForestParams>) {
                require(s.algorithm == Algorithm::random_forest || s.algorithm == Algorithm::extra_trees,
                        s.name + ": forest parameters on non-forest learner");
                require(p.trees >= 1, s.name + ": trees must be >= 1");
                require(p.max_depth == -1 || p.max_depth >= 1, s.name + ": depth must be >= 1 or -1");
                require(p.min_leaf >= 1 && p.max_features >= 0 && p.threads >= 1, s.name + ": invalid forest parameters");
            } else {
                require(s.algorithm == Algorithm::gradient_boosting, s.name + ": boosting parameters on non-boosting learner");
                require(p.rounds >= 1, s.name + ": rounds must be >= 1");
                require(p.learning_rate > 0 && p.learning_rate <= 1, s.name + ": learning rate must be in (0, 1]");
                require(p.max_depth >= 1 && p.min_leaf >= 1 && p.leaf_l2 >= 0, s.name + ": invalid boosting parameters");
            }
        },
        s.params);
}

inline auto make_spec(std::string name, Algorithm algo, Hyperparameters params, std::uint64_t seed = 0) -> LearnerSpec
{
    LearnerSpec s{std::move(name), algo, std::move(params), seed, {}};
    validate(s);
    return s;
}

inline auto logistic_spec(std::uint64_t seed = 0, LogisticParams p = {}) -> LearnerSpec
{
    return make_spec("Logistic Regression (LR)", Algorithm::logistic_regression, p, seed);
}
inline auto lda_spec(std::uint64_t seed = 0, LdaParams p = {}) -> LearnerSpec
{
    return make_spec("Linear Discriminant Analysis (LDA)", Algorithm::lda, p, seed);
}
inline auto knn_spec(std::uint64_t seed = 0, KnnParams p = {}) -> LearnerSpec
{
    return make_spec("K-Nearest Neighbors (KNN)", Algorithm::knn, p, seed);
}
inline auto random_forest_spec(std::uint64_t seed = 0, ForestParams p = {}) -> LearnerSpec
{
    return make_spec("Random Forest (RF)", Algorithm::random_forest, p, seed);
}
inline auto extra_trees_spec(std::uint64_t seed = 0, ForestParams p = {}) -> LearnerSpec
{
    p.bootstrap = false;
    return make_spec("Extra Tree (ET)", Algorithm::extra_trees, p, seed);
}
inline auto gradient_boosting_spec(std::uint64_t seed = 0, BoostingParams p = {}) -> LearnerSpec
{
    return make_spec("Gradient Boosting (GB)", Algorithm::gradient_boosting, p, seed);
}
// deeper, leaf-regularised boosting; fills the XGBoost slot
inline auto xgb_standin_spec(std::uint64_t seed = 0) -> LearnerSpec
{
    return make_spec("XGBoost stand-in (XGB*)", Algorithm::gradient_boosting, BoostingParams{200, 0.1, 6, 1, 1.0}, seed);
}
// boosted stumps; fills the AdaBoost slot
inline auto adaboost_standin_spec(std::uint64_t seed = 0) -> LearnerSpec
{
    return make_spec("AdaBoost stand-in (ADA*)", Algorithm::gradient_boosting, BoostingParams{100, 0.5, 1, 1, 0.0}, seed);
}

// ---------------------------------------------------------------------------

class Classifier {
public:
    virtual ~Classifier() = default;
    [[nodiscard]] virtual auto predict_proba(const Matrix& x) const -> Vector = 0;
    [[nodiscard]] virtual auto feature_count() const -> Index = 0;
    [[nodiscard]] virtual auto to_json() const -> Json = 0;
};

inline void check_width(Index expected, const Matrix& x)
{
    if (x.cols() != expected)
        throw InvalidArgument("predict: matrix has " + std::to_string(x.cols()) + " features, model was trained on " +
                              std::to_string(expected));
}

// ---- logistic regression ----------------------------------------------------

/// Penalised negative log-likelihood, with beta = (intercept, weights...).
/// The intercept is not penalised.
inline auto logistic_objective(const Vector& beta, const Matrix& x, std::span<const int> y, double l2) -> double
{
    double f = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
        const double z = beta(0) + x.row(i).dot(beta.tail(beta.size() - 1));
        // log(1 + e^z) - y z, computed stably
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        f += softplus - y[static_cast<std::size_t>(i)] * z;
    }
    return f + 0.5 * l2 * beta.tail(beta.size() - 1).squaredNorm();
}

inline auto logistic_gradient(const Vector& beta, const Matrix& x, std::span<const int> y, double l2) -> Vector
{
    Vector g = Vector::Zero(beta.size());
    for (Index i = 0; i < x.rows(); ++i) {
        const double z = beta(0) + x.row(i).dot(beta.tail(beta.size() - 1));
        const double r = sigmoid(z) - y[static_cast<std::size_t>(i)];
        g(0) += r;
        g.tail(g.size() - 1) += r * x.row(i).transpose();
    }
    g.tail(g.size() - 1) += l2 * beta.tail(beta.size() - 1);
    return g;
}

struct LogisticFit {
    Vector beta; // intercept first
    int iterations = 0;
    bool converged = false;
};

/// Newton-Raphson (IRLS) with step halving. Stops when max |step| < tol.
inline auto fit_logistic(const Matrix& x, std::span<const int> y, const LogisticParams& p) -> LogisticFit
{
    const Index n = x.rows(), d = x.cols();
    Matrix a(n, d + 1);
    a.col(0).setOnes();
    a.rightCols(d) = x;

    LogisticFit fit;
    fit.beta = Vector::Zero(d + 1);
    double f = logistic_objective(fit.beta, x, y, p.l2);
    for (int it = 0; it < p.max_iter; ++it) {
        fit.iterations = it + 1;
        Vector z = a * fit.beta;
        Vector w(n);
        Vector g = Vector::Zero(d + 1);
        for (Index i = 0; i < n; ++i) {
            const double pi = sigmoid(z(i));
            w(i) = pi * (1 - pi);
            g += (pi - y[static_cast<std::size_t>(i)]) * a.row(i).transpose();
        }
        g.tail(d) += p.l2 * fit.beta.tail(d);
        Matrix h = a.transpose() * w.asDiagonal() * a;
        for (Index j = 1; j <= d; ++j) h(j, j) += p.l2;
        h.diagonal().array() += 1e-12; // keeps the factorisation defined on separable data with l2 = 0
        Vector step = h.ldlt().solve(g);

        double t = 1.0;
        Vector next = fit.beta - step;
        double fn = logistic_objective(next, x, y, p.l2);
        while (fn > f && t > 1e-10) {
            t *= 0.5;
            next = fit.beta - t * step;
            fn = logistic_objective(next, x, y, p.l2);
        }
        const double change = (t * step).cwiseAbs().maxCoeff();
        fit.beta = next;
        f = fn;
        if (change < p.tol) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

class LogisticModel final : public Classifier {
public:
    explicit LogisticModel(Vector beta) : beta_(std::move(beta)) {}

    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override
    {
        check_width(feature_count(), x);
        Vector out(x.rows());
        for (Index i = 0; i < x.rows(); ++i) out(i) = sigmoid(beta_(0) + x.row(i).dot(beta_.tail(beta_.size() - 1)));
        return out;
    }
    [[nodiscard]] auto feature_count() const -> Index override { return beta_.size() - 1; }
    [[nodiscard]] auto beta() const -> const Vector& { return beta_; }
    [[nodiscard]] auto to_json() const -> Json override
    {
        return {{"intercept", beta_(0)}, {"weights", std::vector<double>(beta_.data() + 1, beta_.data() + beta_.size())}};
    }

private:
    Vector beta_;
};

// ---- LDA --------------------------------------------------------------------

class LdaModel final : public Classifier {
public:
    LdaModel(Vector w, double b) : w_(std::move(w)), b_(b) {}

    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override
    {
        check_width(feature_count(), x);
        Vector out(x.rows());
        for (Index i = 0; i < x.rows(); ++i) out(i) = sigmoid(x.row(i).dot(w_) + b_);
        return out;
    }
    [[nodiscard]] auto feature_count() const -> Index override { return w_.size(); }
    [[nodiscard]] auto to_json() const -> Json override
    {
        return {{"weights", std::vector<double>(w_.data(), w_.data() + w_.size())}, {"bias", b_}};
    }

private:
    Vector w_;
    double b_;
};

// Two-class Fisher discriminant with pooled covariance and a trace-scaled ridge.
inline auto fit_lda(const Matrix& x, std::span<const int> y, const LdaParams& p) -> std::shared_ptr<const Classifier>
{
    const Index n = x.rows(), d = x.cols();
    Vector mu[2] = {Vector::Zero(d), Vector::Zero(d)};
    Index cnt[2] = {0, 0};
    for (Index i = 0; i < n; ++i) {
        const int c = y[static_cast<std::size_t>(i)];
        mu[c] += x.row(i).transpose();
        ++cnt[c];
    }
    mu[0] /= static_cast<double>(cnt[0]);
    mu[1] /= static_cast<double>(cnt[1]);
    Matrix s = Matrix::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
        const Vector dv = x.row(i).transpose() - mu[y[static_cast<std::size_t>(i)]];
        s.noalias() += dv * dv.transpose();
    }
    s /= static_cast<double>(std::max<Index>(1, n - 2));
    const double tr = s.trace();
    const double tau = p.ridge * (tr > 0 ? tr / static_cast<double>(d) : 1.0);
    s.diagonal().array() += tau;
    Eigen::LDLT<Matrix> ldlt(s);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw Error("lda: pooled covariance is singular after ridge");
    const Vector w = ldlt.solve(mu[1] - mu[0]);
    const double b = -0.5 * (mu[1] + mu[0]).dot(w) +
                     std::log(static_cast<double>(cnt[1]) / static_cast<double>(cnt[0]));
    return std::make_shared<LdaModel>(w, b);
}

// ---- KNN --------------------------------------------------------------------

class KnnModel final : public Classifier {
public:
    KnnModel(Matrix x, Labels y, int k) : x_(std::move(x)), y_(std::move(y)), k_(k) {}

    [[nodiscard]] auto predict_proba(const Matrix& q) const -> Vector override
    {
        check_width(feature_count(), q);
        const Index n = x_.rows();
        const Index k = std::min<Index>(k_, n);
        Vector out(q.rows());
        std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
        for (Index i = 0; i < q.rows(); ++i) {
            for (Index j = 0; j < n; ++j) dist[static_cast<std::size_t>(j)] = {(x_.row(j) - q.row(i)).squaredNorm(), j};
            // pair ordering breaks distance ties by lower training row index
            std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
            Index pos = 0;
            for (Index j = 0; j < k; ++j) pos += y_[static_cast<std::size_t>(dist[static_cast<std::size_t>(j)].second)];
            out(i) = static_cast<double>(pos) / static_cast<double>(k);
        }
        return out;
    }
    [[nodiscard]] auto feature_count() const -> Index override { return x_.cols(); }
    [[nodiscard]] auto to_json() const -> Json override
    {
        Json rows = Json::array();
        for (Index i = 0; i < x_.rows(); ++i) {
            std::vector<double> r(static_cast<std::size_t>(x_.cols()));
            for (Index j = 0; j < x_.cols(); ++j) r[static_cast<std::size_t>(j)] = x_(i, j);
            rows.push_back(r);
        }
        return {{"k", k_}, {"x", rows}, {"y", y_}};
    }

private:
    Matrix x_;
    Labels y_;
    int k_;
};

// ---- tree ensembles -----------------------------------------------------------

inline auto tree_to_json(const DecisionTree& t) -> Json
{
    Json nodes = Json::array();
    for (const auto& n : t.nodes) nodes.push_back(Json::array({n.feature, n.threshold, n.left, n.right, n.value}));
    return nodes;
}

inline auto tree_from_json(const Json& j) -> DecisionTree
{
    DecisionTree t;
    for (const auto& n : j)
        t.nodes.push_back(TreeNode{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                   n.at(4).get<double>()});
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || i + static_cast<std::size_t>(std::max(n.left, n.right)) >= t.nodes.size()))
            throw InvalidArgument("malformed tree: child offset out of range at node " + std::to_string(i));
    }
    return t;
}

class ForestModel final : public Classifier {
public:
    ForestModel(std::vector<DecisionTree> trees, Index width, std::vector<double> importance = {})
        : trees_(std::move(trees)), width_(width), importance_(std::move(importance))
    {
    }

    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override
    {
        check_width(width_, x);
        Vector out = Vector::Zero(x.rows());
        for (Index i = 0; i < x.rows(); ++i) {
            double s = 0.0;
            const auto row = x.row(i);
            for (const auto& t : trees_) s += t.predict(row);
            out(i) = s / static_cast<double>(trees_.size());
        }
        return out;
    }
    [[nodiscard]] auto feature_count() const -> Index override { return width_; }
    [[nodiscard]] auto trees() const -> const std::vector<DecisionTree>& { return trees_; }
    // mean decrease in gini impurity, normalised to sum to 1 (empty when not recorded)
    [[nodiscard]] auto importance() const -> const std::vector<double>& { return importance_; }
    [[nodiscard]] auto to_json() const -> Json override
    {
        Json trees = Json::array();
        for (const auto& t : trees_) trees.push_back(tree_to_json(t));
        return {{"width", width_}, {"trees", trees}};
    }

private:
    std::vector<DecisionTree> trees_;
    Index width_;
    std::vector<double> importance_;
};

inline auto fit_forest(const Matrix& x, std::span<const int> y, const ForestParams& p, bool extra, std::uint64_t seed)
    -> std::shared_ptr<const ForestModel>
{
    const Index n = x.rows(), d = x.cols();
    const PresortedColumns sorted(x);
    std::vector<double> target(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) target[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)];

    TreeParams tp;
    tp.criterion = SplitCriterion::gini;
    tp.thresholds = extra ? ThresholdRule::random : ThresholdRule::best;
    tp.max_depth = p.max_depth;
    tp.min_leaf = p.min_leaf;
    tp.max_features = p.max_features > 0 ? p.max_features
                                         : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));

    const auto t_count = static_cast<std::size_t>(p.trees);
    std::vector<DecisionTree> trees(t_count);
    std::vector<std::vector<double>> imps(t_count);
    auto fit_one = [&](std::size_t t) {
        const std::uint64_t tree_seed = derive_seed(seed, t);
        std::vector<double> w(static_cast<std::size_t>(n), 1.0);
        if (p.bootstrap) {
            Xoshiro256 rng(derive_seed(tree_seed, 0xB007));
            std::fill(w.begin(), w.end(), 0.0);
            for (Index i = 0; i < n; ++i) w[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n)))] += 1.0;
        }
        trees[t] = fit_tree(sorted, w, target, {}, tp, tree_seed, &imps[t]);
    };
    const auto threads = static_cast<std::size_t>(std::max(1, p.threads));
    if (threads == 1) {
        for (std::size_t t = 0; t < t_count; ++t) fit_one(t);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t t = w; t < t_count; t += threads) fit_one(t);
            });
    }

    std::vector<double> importance(static_cast<std::size_t>(d), 0.0);
    for (const auto& imp : imps) {
        const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
        if (s <= 0) continue;
        for (std::size_t j = 0; j < imp.size(); ++j) importance[j] += imp[j] / s;
    }
    const double total = std::accumulate(importance.begin(), importance.end(), 0.0);
    if (total > 0)
        for (auto& v : importance) v /= total;
    return std::make_shared<ForestModel>(std::move(trees), d, std::move(importance));
}

class BoostingModel final : public Classifier {
public:
    BoostingModel(double init, std::vector<DecisionTree> trees, Index width, std::vector<double> loss_history = {})
        : init_(init), trees_(std::move(trees)), width_(width), loss_history_(std::move(loss_history))
    {
    }

    [[nodiscard]] auto decision(const Matrix& x) const -> Vector
    {
        check_width(width_, x);
        Vector f = Vector::Constant(x.rows(), init_);
        for (Index i = 0; i < x.rows(); ++i) {
            const auto row = x.row(i);
            for (const auto& t : trees_) f(i) += t.predict(row);
        }
        return f;
    }
    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector override
    {
        return decision(x).unaryExpr([](double z) { return sigmoid(z); });
    }
    [[nodiscard]] auto feature_count() const -> Index override { return width_; }
    // mean training log-loss after the initial score and after each round
    [[nodiscard]] auto loss_history() const -> const std::vector<double>& { return loss_history_; }
    [[nodiscard]] auto to_json() const -> Json override
    {
        Json trees = Json::array();
        for (const auto& t : trees_) trees.push_back(tree_to_json(t));
        return {{"width", width_}, {"init", init_}, {"trees", trees}};
    }

private:
    double init_;
    std::vector<DecisionTree> trees_;
    Index width_;
    std::vector<double> loss_history_;
};

inline auto mean_log_loss(const Vector& score, std::span<const int> y) -> double
{
    double s = 0.0;
    for (Index i = 0; i < score.size(); ++i) {
        const double z = score(i);
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        s += softplus - y[static_cast<std::size_t>(i)] * z;
    }
    return s / static_cast<double>(score.size());
}

inline auto fit_boosting(const Matrix& x, std::span<const int> y, const BoostingParams& p, std::uint64_t seed)
    -> std::shared_ptr<const BoostingModel>
{
    const Index n = x.rows();
    const PresortedColumns sorted(x);
    const double pos = static_cast<double>(count_positive(y));
    const double base = pos / static_cast<double>(n);
    const double init = std::log(base / (1 - base));

    TreeParams tp;
    tp.criterion = SplitCriterion::newton;
    tp.max_depth = p.max_depth;
    tp.min_leaf = p.min_leaf;
    tp.leaf_l2 = p.leaf_l2;
    tp.leaf_scale = p.learning_rate;

    const std::vector<double> w(static_cast<std::size_t>(n), 1.0);
    std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));
    Vector f = Vector::Constant(n, init);
    std::vector<DecisionTree> trees;
    std::vector<double> history{mean_log_loss(f, y)};
    for (int r = 0; r < p.rounds; ++r) {
        for (Index i = 0; i < n; ++i) {
            const double pi = sigmoid(f(i));
            g[static_cast<std::size_t>(i)] = pi - y[static_cast<std::size_t>(i)];
            h[static_cast<std::size_t>(i)] = pi * (1 - pi);
        }
        auto tree = fit_tree(sorted, w, g, h, tp, derive_seed(seed, static_cast<std::uint64_t>(r)));
        for (Index i = 0; i < n; ++i) f(i) += tree.predict(x.row(i));
        trees.push_back(std::move(tree));
        history.push_back(mean_log_loss(f, y));
    }
    return std::make_shared<BoostingModel>(init, std::move(trees), x.cols(), std::move(history));
}

// ---------------------------------------------------------------------------

struct TrainedLearner {
    LearnerSpec spec;
    std::shared_ptr<const Classifier> model;
    Index feature_count = 0;

    [[nodiscard]] auto predict_proba(const Matrix& x) const -> Vector { return model->predict_proba(x); }
};

inline auto train(const LearnerSpec& spec, const Matrix& x, const Labels& y) -> TrainedLearner
{
    validate(spec);
    require(x.rows() == static_cast<Index>(y.size()), "train: row/label count mismatch");
    require(x.cols() >= 1, "train: no features");
    require_binary(y);
    const Index pos = count_positive(y);
    if (pos < 2 || static_cast<Index>(y.size()) - pos < 2)
        throw InvalidArgument("train: each class needs at least 2 rows (got " + std::to_string(y.size() - static_cast<std::size_t>(pos)) +
                              " negative, " + std::to_string(pos) + " positive)");

    TrainedLearner out{spec, nullptr, x.cols()};
    if (spec.is_custom()) {
        out.model = spec.custom(x, y);
        return out;
    }
    switch (spec.algorithm) {
    case Algorithm::logistic_regression:
        out.model = std::make_shared<LogisticModel>(fit_logistic(x, y, std::get<LogisticParams>(spec.params)).beta);
        break;
    case Algorithm::lda: out.model = fit_lda(x, y, std::get<LdaParams>(spec.params)); break;
    case Algorithm::knn: out.model = std::make_shared<KnnModel>(x, y, std::get<KnnParams>(spec.params).k); break;
    case Algorithm::random_forest:
        out.model = fit_forest(x, y, std::get<ForestParams>(spec.params), false, spec.seed);
        break;
    case Algorithm::extra_trees:
        out.model = fit_forest(x, y, std::get<ForestParams>(spec.params), true, spec.seed);
        break;
    case Algorithm::gradient_boosting:
        out.model = fit_boosting(x, y, std::get<BoostingParams>(spec.params), spec.seed);
        break;
    }
    return out;
}

inline auto predict_proba(const TrainedLearner& m, const Matrix& x) -> Vector { return m.predict_proba(x); }

// ---------------------------------------------------------------------------
// serialisation

inline auto params_to_json(const Hyperparameters& hp) -> Json
{
    return std::visit(
        [](const auto& p) -> Json {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LogisticParams>) return {{"l2", p.l2}, {"max_iter", p.max_iter}, {"tol", p.tol}};
            else if constexpr (std::is_same_v<P, LdaParams>) return {{"ridge", p.ridge}};
            else if constexpr (std::is_same_v<P, KnnParams>) return {{"k", p.k}};
            else if constexpr (std::is_same_v<P, ForestParams>)
                return {{"trees", p.trees}, {"max_depth", p.max_depth}, {"min_leaf", p.min_leaf},
                        {"max_features", p.max_features}, {"bootstrap", p.bootstrap}};
            else
                return {{"rounds", p.rounds}, {"learning_rate", p.learning_rate}, {"max_depth", p.max_depth},
                        {"min_leaf", p.min_leaf}, {"leaf_l2", p.leaf_l2}};
        },
        hp);
}

/// Defaults for `algo`, overridden by any keys present in `j`.
inline auto params_from_json(Algorithm algo, const Json& j) -> Hyperparameters
{
    auto get = [&](const char* key, auto def) {
        return j.contains(key) ? j.at(key).get<decltype(def)>() : def;
    };
    switch (algo) {
    case Algorithm::logistic_regression: {
        LogisticParams p;
        return LogisticParams{get("l2", p.l2), get("max_iter", p.max_iter), get("tol", p.tol)};
    }
    case Algorithm::lda: return LdaParams{get("ridge", LdaParams{}.ridge)};
    case Algorithm::knn: return KnnParams{get("k", KnnParams{}.k)};
    case Algorithm::random_forest:
    case Algorithm::extra_trees: {
        ForestParams p;
        p.bootstrap = algo == Algorithm::random_forest;
        return ForestParams{get("trees", p.trees), get("max_depth", p.max_depth), get("min_leaf", p.min_leaf),
                            get("max_features", p.max_features), get("bootstrap", p.bootstrap), 1};
    }
    case Algorithm::gradient_boosting: {
        BoostingParams p;
        return BoostingParams{get("rounds", p.rounds), get("learning_rate", p.learning_rate), get("max_depth", p.max_depth),
                              get("min_leaf", p.min_leaf), get("leaf_l2", p.leaf_l2)};
    }
    }
    throw InvalidArgument("unknown algorithm");
}

inline auto spec_to_json(const LearnerSpec& s) -> Json
{
    if (s.is_custom()) throw InvalidArgument("learner '" + s.name + "' is a custom learner and cannot be serialised");
    return {{"name", s.name}, {"algorithm", to_string(s.algorithm)}, {"params", params_to_json(s.params)},
            {"seed", s.seed}};
}

inline auto spec_from_json(const Json& j) -> LearnerSpec
{
    const auto algo = parse_algorithm(j.at("algorithm").get<std::string>());
    return make_spec(j.at("name").get<std::string>(), algo, params_from_json(algo, j.value("params", Json::object())),
                     j.value("seed", std::uint64_t{0}));
}

inline auto learner_to_json(const TrainedLearner& m) -> Json
{
    return {{"spec", spec_to_json(m.spec)}, {"features", m.feature_count}, {"model", m.model->to_json()}};
}

inline auto learner_from_json(const Json& j) -> TrainedLearner
{
    TrainedLearner m{spec_from_json(j.at("spec")), nullptr, j.at("features").get<Index>()};
    const auto& mj = j.at("model");
    auto vec = [](const Json& a) {
        auto v = a.get<std::vector<double>>();
        return Vector(Eigen::Map<Vector>(v.data(), static_cast<Index>(v.size())));
    };
    switch (m.spec.algorithm) {
    case Algorithm::logistic_regression: {
        Vector w = vec(mj.at("weights"));
        Vector beta(w.size() + 1);
        beta << mj.at("intercept").get<double>(), w;
        m.model = std::make_shared<LogisticModel>(beta);
        break;
    }
    case Algorithm::lda: m.model = std::make_shared<LdaModel>(vec(mj.at("weights")), mj.at("bias").get<double>()); break;
    case Algorithm::knn: {
        const auto& rows = mj.at("x");
        Matrix x(static_cast<Index>(rows.size()), m.feature_count);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto r = rows[i].get<std::vector<double>>();
            require(static_cast<Index>(r.size()) == m.feature_count, "knn: stored row width mismatch");
            for (Index c = 0; c < m.feature_count; ++c) x(static_cast<Index>(i), c) = r[static_cast<std::size_t>(c)];
        }
        m.model = std::make_shared<KnnModel>(std::move(x), mj.at("y").get<Labels>(), mj.at("k").get<int>());
        break;
    }
    case Algorithm::random_forest:
    case Algorithm::extra_trees: {
        std::vector<DecisionTree> trees;
        for (const auto& t : mj.at("trees")) trees.push_back(tree_from_json(t));
        m.model = std::make_shared<ForestModel>(std::move(trees), mj.at("width").get<Index>());
        break;
    }
    case Algorithm::gradient_boosting: {
        std::vector<DecisionTree> trees;
        for (const auto& t : mj.at("trees")) trees.push_back(tree_from_json(t));
        m.model = std::make_shared<BoostingModel>(mj.at("init").get<double>(), std::move(trees), mj.at("width").get<Index>());
        break;
    }
    }
    require(m.model->feature_count() == m.feature_count, "learner '" + m.spec.name + "': feature count mismatch");
    return m;
}

} // namespace riskstack

#endif
