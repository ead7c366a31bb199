#ifndef RISKSTACK_TREE_HPP
#define RISKSTACK_TREE_HPP

#include "riskstack/core.hpp"
#include "riskstack/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace riskstack {

// Preorder node list. A node is a leaf when feature < 0. Children are stored
// as offsets from the node's own index (left is always +1 for internal nodes).
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = 0;
    int right = 0;
    double value = 0.0;

    auto operator==(const TreeNode&) const -> bool = default;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    template <class Row>
    [[nodiscard]] auto predict(const Row& x) const -> double
    {
        std::size_t i = 0;
        while (nodes[i].feature >= 0) {
            const auto& n = nodes[i];
            i += static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
        }
        return nodes[i].value;
    }

    [[nodiscard]] auto depth() const -> int
    {
        int best = 0;
        std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (nodes[i].feature >= 0) {
                stack.emplace_back(i + static_cast<std::size_t>(nodes[i].left), d + 1);
                stack.emplace_back(i + static_cast<std::size_t>(nodes[i].right), d + 1);
            }
        }
        return best;
    }
};

enum class SplitCriterion { gini, newton };
enum class ThresholdRule { best, random };

struct TreeParams {
    SplitCriterion criterion = SplitCriterion::gini;
    ThresholdRule thresholds = ThresholdRule::best;
    int max_depth = -1;          // -1: unlimited
    double min_leaf = 1.0;       // minimum total sample weight per leaf
    int max_features = 0;        // features examined per split; 0 or >= d means all
    double leaf_l2 = 0.0;        // newton criterion: L2 penalty on leaf values
    double leaf_scale = 1.0;     // newton criterion: shrinkage applied to stored leaf values
};

/// Row order of every feature column, computed once per training matrix and
/// shared by all trees fitted on it.
class PresortedColumns {
public:
    explicit PresortedColumns(const Matrix& x) : x_(&x), order_(static_cast<std::size_t>(x.cols()))
    {
        const Index n = x.rows();
        for (Index f = 0; f < x.cols(); ++f) {
            auto& o = order_[static_cast<std::size_t>(f)];
            o.resize(static_cast<std::size_t>(n));
            std::iota(o.begin(), o.end(), 0);
            const double* col = x.col(f).data();
            std::stable_sort(o.begin(), o.end(), [col](int a, int b) { return col[a] < col[b]; });
        }
    }

    [[nodiscard]] auto matrix() const -> const Matrix& { return *x_; }
    [[nodiscard]] auto order(Index f) const -> const std::vector<int>& { return order_[static_cast<std::size_t>(f)]; }

private:
    const Matrix* x_;
    std::vector<std::vector<int>> order_;
};

namespace detail {

struct SplitStats {
    double w = 0.0; // total weight
    double a = 0.0; // gini: weighted positives; newton: weighted gradient
    double b = 0.0; // newton: weighted hessian

    void add(double wi, double ai, double bi)
    {
        w += wi;
        a += wi * ai;
        b += wi * bi;
    }
};

/// Builds one tree on weighted rows using presorted feature orders. Rows with
/// zero weight are excluded. Every internal split partitions all feature
/// orders stably, so no per-node sorting is needed.
class TreeBuilder {
public:
    TreeBuilder(const PresortedColumns& sorted, std::span<const double> weights, std::span<const double> target,
                std::span<const double> hessian, const TreeParams& params, std::uint64_t seed)
        : x_(sorted.matrix()), w_(weights), t_(target), h_(hessian), p_(params), rng_(seed)
    {
        const Index d = x_.cols();
        d_ = static_cast<int>(d);
        for (Index f = 0; f < d; ++f) {
            auto& o = order_.emplace_back();
            for (int r : sorted.order(f))
                if (w_[static_cast<std::size_t>(r)] > 0) o.push_back(r);
        }
        n_active_ = order_.empty() ? 0 : static_cast<int>(order_[0].size());
        if (order_.empty())
            for (std::size_t r = 0; r < w_.size(); ++r)
                if (w_[r] > 0) ++n_active_;
        goes_left_.assign(w_.size(), 0);
        buffer_.resize(static_cast<std::size_t>(n_active_));
        importance_.assign(static_cast<std::size_t>(d_), 0.0);
        for (std::size_t r = 0; r < w_.size(); ++r) total_weight_ += w_[r];
    }

    auto build() -> DecisionTree
    {
        DecisionTree tree;
        if (n_active_ == 0) {
            tree.nodes.push_back(TreeNode{});
            return tree;
        }
        grow(tree, 0, n_active_, 0);
        return tree;
    }

    // unnormalised weighted impurity decrease per feature (gini criterion)
    [[nodiscard]] auto importance() const -> const std::vector<double>& { return importance_; }

private:
    [[nodiscard]] auto node_stats(int lo, int hi) const -> SplitStats
    {
        SplitStats s;
        const auto& o = order_.empty() ? fallback_rows_ : order_[0];
        for (int i = lo; i < hi; ++i) {
            const auto r = static_cast<std::size_t>(o[static_cast<std::size_t>(i)]);
            s.add(w_[r], t_[r], h_.empty() ? 0.0 : h_[r]);
        }
        return s;
    }

    [[nodiscard]] auto impurity(const SplitStats& s) const -> double
    {
        if (s.w <= 0) return 0.0;
        const double p = s.a / s.w;
        return 2.0 * p * (1.0 - p);
    }

    // score to maximise: gini uses weighted impurity decrease, newton the second-order gain
    [[nodiscard]] auto gain(const SplitStats& parent, const SplitStats& l, const SplitStats& r) const -> double
    {
        if (p_.criterion == SplitCriterion::gini)
            return parent.w * impurity(parent) - l.w * impurity(l) - r.w * impurity(r);
        auto score = [&](const SplitStats& s) {
            const double den = s.b + p_.leaf_l2;
            return den > 0 ? s.a * s.a / den : 0.0;
        };
        return score(l) + score(r) - score(parent);
    }

    [[nodiscard]] auto leaf_value(const SplitStats& s) const -> double
    {
        if (p_.criterion == SplitCriterion::gini) return s.w > 0 ? s.a / s.w : 0.0;
        const double den = s.b + p_.leaf_l2;
        if (std::abs(den) < 1e-150) return 0.0;
        return -p_.leaf_scale * s.a / den;
    }

    struct Candidate {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    static auto better(const Candidate& c, const Candidate& best) -> bool
    {
        if (best.feature < 0) return true;
        if (c.gain != best.gain) return c.gain > best.gain;
        if (c.feature != best.feature) return c.feature < best.feature;
        return c.threshold < best.threshold;
    }

    // best split of feature f over node range [lo, hi)
    auto scan_feature(int f, int lo, int hi, const SplitStats& parent, Candidate& best) -> bool
    {
        const auto& o = order_[static_cast<std::size_t>(f)];
        const double* col = x_.col(f).data();
        const double vmin = col[o[static_cast<std::size_t>(lo)]];
        const double vmax = col[o[static_cast<std::size_t>(hi - 1)]];
        if (!(vmin < vmax)) return false; // constant in this node

        auto at = [&](int i) { return static_cast<std::size_t>(o[static_cast<std::size_t>(i)]); };
        if (p_.thresholds == ThresholdRule::random) {
            double thr = rng_.uniform(vmin, vmax);
            if (thr >= vmax) thr = vmin;
            SplitStats left;
            for (int i = lo; i < hi && col[at(i)] <= thr; ++i) {
                const auto r = at(i);
                left.add(w_[r], t_[r], h_.empty() ? 0.0 : h_[r]);
            }
            const SplitStats right{parent.w - left.w, parent.a - left.a, parent.b - left.b};
            if (left.w < p_.min_leaf || right.w < p_.min_leaf) return true;
            Candidate c{f, thr, gain(parent, left, right)};
            if (better(c, best)) best = c;
            return true;
        }

        SplitStats left;
        for (int i = lo; i < hi - 1; ++i) {
            const auto r = at(i);
            left.add(w_[r], t_[r], h_.empty() ? 0.0 : h_[r]);
            const double v = col[r];
            const double next = col[at(i + 1)];
            if (!(v < next)) continue;
            if (left.w < p_.min_leaf) continue;
            const SplitStats right{parent.w - left.w, parent.a - left.a, parent.b - left.b};
            if (right.w < p_.min_leaf) break;
            double thr = v + (next - v) / 2.0;
            if (!(thr < next)) thr = v;
            Candidate c{f, thr, gain(parent, left, right)};
            if (better(c, best)) best = c;
        }
        return true;
    }

    void partition(int lo, int hi, int feature, double thr, int& mid)
    {
        const double* col = x_.col(feature).data();
        const auto& key = order_[static_cast<std::size_t>(feature)];
        int nl = 0;
        for (int i = lo; i < hi; ++i) {
            const int r = key[static_cast<std::size_t>(i)];
            const bool left = col[r] <= thr;
            goes_left_[static_cast<std::size_t>(r)] = left ? 1 : 0;
            nl += left;
        }
        mid = lo + nl;
        for (auto& o : order_) {
            int li = lo, ri = 0;
            for (int i = lo; i < hi; ++i) {
                const int r = o[static_cast<std::size_t>(i)];
                if (goes_left_[static_cast<std::size_t>(r)]) o[static_cast<std::size_t>(li++)] = r;
                else buffer_[static_cast<std::size_t>(ri++)] = r;
            }
            std::copy(buffer_.begin(), buffer_.begin() + ri, o.begin() + li);
        }
    }

    auto grow(DecisionTree& tree, int lo, int hi, int depth) -> std::size_t
    {
        const std::size_t self = tree.nodes.size();
        tree.nodes.push_back(TreeNode{});
        const SplitStats parent = node_stats(lo, hi);
        tree.nodes[self].value = leaf_value(parent);

        const bool depth_ok = p_.max_depth < 0 || depth < p_.max_depth;
        const bool pure = p_.criterion == SplitCriterion::gini && (parent.a <= 0 || parent.a >= parent.w);
        if (!depth_ok || pure || parent.w < 2 * p_.min_leaf || d_ == 0) return self;

        Candidate best;
        const int mtry = (p_.max_features <= 0 || p_.max_features >= d_) ? d_ : p_.max_features;
        if (mtry == d_ && p_.thresholds == ThresholdRule::best) {
            for (int f = 0; f < d_; ++f) scan_feature(f, lo, hi, parent, best);
        } else {
            // visit features in random order until mtry non-constant ones were examined
            std::vector<int> feats(static_cast<std::size_t>(d_));
            std::iota(feats.begin(), feats.end(), 0);
            int visited = 0;
            for (int i = 0; i < d_ && visited < mtry; ++i) {
                const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng_.below(static_cast<std::uint64_t>(d_ - i)));
                std::swap(feats[static_cast<std::size_t>(i)], feats[j]);
                if (scan_feature(feats[static_cast<std::size_t>(i)], lo, hi, parent, best)) ++visited;
            }
        }
        if (best.feature < 0 || !(best.gain > 1e-12 * std::max(1.0, std::abs(parent.w)))) return self;

        if (p_.criterion == SplitCriterion::gini && total_weight_ > 0)
            importance_[static_cast<std::size_t>(best.feature)] += best.gain / total_weight_;

        int mid = lo;
        partition(lo, hi, best.feature, best.threshold, mid);
        if (mid == lo || mid == hi) return self;

        tree.nodes[self].feature = best.feature;
        tree.nodes[self].threshold = best.threshold;
        const std::size_t l = grow(tree, lo, mid, depth + 1);
        const std::size_t r = grow(tree, mid, hi, depth + 1);
        tree.nodes[self].left = static_cast<int>(l - self);
        tree.nodes[self].right = static_cast<int>(r - self);
        return self;
    }

    const Matrix& x_;
    std::span<const double> w_, t_, h_;
    TreeParams p_;
    Xoshiro256 rng_;
    int d_ = 0;
    int n_active_ = 0;
    double total_weight_ = 0.0;
    std::vector<std::vector<int>> order_;
    std::vector<int> fallback_rows_;
    std::vector<char> goes_left_;
    std::vector<int> buffer_;
    std::vector<double> importance_;
};

} // namespace detail

/// Fits one tree. `target` is the 0/1 label for the gini criterion and the
/// per-row loss gradient for the newton criterion (then `hessian` is required).
inline auto fit_tree(const PresortedColumns& sorted, std::span<const double> weights, std::span<const double> target,
                     std::span<const double> hessian, const TreeParams& params, std::uint64_t seed,
                     std::vector<double>* importance = nullptr) -> DecisionTree
{
    const auto n = static_cast<std::size_t>(sorted.matrix().rows());
    require(weights.size() == n && target.size() == n, "fit_tree: weight/target length mismatch");
    require(params.criterion == SplitCriterion::gini || hessian.size() == n, "fit_tree: newton criterion needs a hessian");
    detail::TreeBuilder builder(sorted, weights, target, hessian, params, seed);
    auto tree = builder.build();
    if (importance) *importance = builder.importance();
    return tree;
}

} // namespace riskstack

#endif
