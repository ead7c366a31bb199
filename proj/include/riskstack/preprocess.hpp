#ifndef RISKSTACK_PREPROCESS_HPP
#define RISKSTACK_PREPROCESS_HPP

#include "riskstack/core.hpp"
#include "riskstack/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace riskstack {

// Real matrix with a per-cell observed flag. Unobserved cells hold 0 and are never read.
struct MaskedMatrix {
    Matrix values;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;

    MaskedMatrix() = default;
    MaskedMatrix(Index rows, Index cols)
        : values(Matrix::Zero(rows, cols)), observed(Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(rows, cols, false))
    {
    }

    explicit MaskedMatrix(const Matrix& complete)
        : values(complete), observed(Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(complete.rows(), complete.cols(), true))
    {
    }

    [[nodiscard]] auto rows() const -> Index { return values.rows(); }
    [[nodiscard]] auto cols() const -> Index { return values.cols(); }

    void set(Index r, Index c, std::optional<double> v)
    {
        observed(r, c) = v.has_value();
        values(r, c) = v.value_or(0.0);
    }

    [[nodiscard]] auto get(Index r, Index c) const -> std::optional<double>
    {
        if (!observed(r, c)) return std::nullopt;
        return values(r, c);
    }

    [[nodiscard]] auto missing_count() const -> Index { return observed.size() - observed.count(); }

    [[nodiscard]] auto select_rows(std::span<const Index> rows) const -> MaskedMatrix
    {
        MaskedMatrix out(static_cast<Index>(rows.size()), cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.values.row(static_cast<Index>(i)) = values.row(rows[i]);
            out.observed.row(static_cast<Index>(i)) = observed.row(rows[i]);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Chained-equation imputation

struct MiceOptions {
    int iterations = 10;
    double ridge = 1e-6;
    // draw imputations from the fitted Gaussian residual instead of using the conditional mean
    bool stochastic = false;
    std::uint64_t seed = 0;
};

/// Per-column linear regressions over all other columns, fitted by chained
/// sweeps on the training matrix.
struct ImputationModel {
    std::vector<std::string> columns;
    std::vector<double> fallback_mean;
    // intercept[j] + sum_{k != j} weights[j][k] * x_k ; weights[j][j] is always 0
    std::vector<double> intercept;
    std::vector<std::vector<double>> weights;
    std::vector<double> residual_sd;
    MiceOptions options;

    [[nodiscard]] auto width() const -> Index { return static_cast<Index>(fallback_mean.size()); }

    [[nodiscard]] auto predict(Index j, const Matrix& filled, Index row) const -> double
    {
        double v = intercept[static_cast<std::size_t>(j)];
        const auto& w = weights[static_cast<std::size_t>(j)];
        for (Index k = 0; k < filled.cols(); ++k)
            if (k != j) v += w[static_cast<std::size_t>(k)] * filled(row, k);
        return v;
    }
};

namespace detail {

// Ridge regression of column `target` on all other columns using rows where
// `target` is observed. The intercept is not penalised.
inline void regress_column(const Matrix& filled, const MaskedMatrix& x, Index target, double ridge,
                           double& intercept, std::vector<double>& weights, double& residual_sd)
{
    const Index d = x.cols();
    std::vector<Index> rows;
    for (Index i = 0; i < x.rows(); ++i)
        if (x.observed(i, target)) rows.push_back(i);
    const auto n = static_cast<Index>(rows.size());

    Matrix a(n, d); // column 0 = intercept, columns 1.. = other predictors
    Vector b(n);
    for (Index r = 0; r < n; ++r) {
        a(r, 0) = 1.0;
        Index c = 1;
        for (Index k = 0; k < d; ++k)
            if (k != target) a(r, c++) = filled(rows[static_cast<std::size_t>(r)], k);
        b(r) = x.values(rows[static_cast<std::size_t>(r)], target);
    }
    Matrix gram = a.transpose() * a;
    for (Index c = 1; c < d; ++c) gram(c, c) += ridge;
    const Vector beta = gram.ldlt().solve(a.transpose() * b);

    intercept = beta(0);
    weights.assign(static_cast<std::size_t>(d), 0.0);
    Index c = 1;
    for (Index k = 0; k < d; ++k)
        if (k != target) weights[static_cast<std::size_t>(k)] = beta(c++);
    const Vector resid = b - a * beta;
    residual_sd = n > 1 ? std::sqrt(resid.squaredNorm() / static_cast<double>(n)) : 0.0;
}

inline auto column_name(const std::vector<std::string>& names, Index j) -> std::string
{
    if (static_cast<std::size_t>(j) < names.size()) return "'" + names[static_cast<std::size_t>(j)] + "'";
    return "#" + std::to_string(j);
}

} // namespace detail

inline auto mice_fit(const MaskedMatrix& x, const MiceOptions& opt = {}, std::vector<std::string> columns = {})
    -> ImputationModel
{
    require(opt.iterations >= 1, "mice_fit: iterations must be >= 1");
    require(columns.empty() || static_cast<Index>(columns.size()) == x.cols(), "mice_fit: column name count mismatch");
    const Index n = x.rows(), d = x.cols();

    ImputationModel model;
    model.columns = std::move(columns);
    model.options = opt;
    model.fallback_mean.resize(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) {
        double sum = 0.0;
        Index cnt = 0;
        for (Index i = 0; i < n; ++i)
            if (x.observed(i, j)) {
                sum += x.values(i, j);
                ++cnt;
            }
        if (cnt == 0) throw InvalidArgument("mice_fit: column " + detail::column_name(model.columns, j) + " has no observed values");
        if (cnt < 2) throw InvalidArgument("mice_fit: column " + detail::column_name(model.columns, j) + " has fewer than 2 observed values");
        model.fallback_mean[static_cast<std::size_t>(j)] = sum / static_cast<double>(cnt);
    }

    model.intercept.assign(static_cast<std::size_t>(d), 0.0);
    model.weights.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    model.residual_sd.assign(static_cast<std::size_t>(d), 0.0);
    if (d == 1) {
        model.intercept[0] = model.fallback_mean[0];
        return model;
    }

    Matrix filled = x.values;
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < n; ++i)
            if (!x.observed(i, j)) filled(i, j) = model.fallback_mean[static_cast<std::size_t>(j)];

    std::vector<Index> incomplete;
    for (Index j = 0; j < d; ++j)
        if (!x.observed.col(j).all()) incomplete.push_back(j);

    Xoshiro256 rng(opt.seed);
    for (int it = 0; it < opt.iterations && !incomplete.empty(); ++it) {
        for (Index j : incomplete) {
            auto& w = model.weights[static_cast<std::size_t>(j)];
            detail::regress_column(filled, x, j, opt.ridge, model.intercept[static_cast<std::size_t>(j)], w,
                                   model.residual_sd[static_cast<std::size_t>(j)]);
            for (Index i = 0; i < n; ++i) {
                if (x.observed(i, j)) continue;
                double v = model.predict(j, filled, i);
                if (opt.stochastic) v += model.residual_sd[static_cast<std::size_t>(j)] * rng.normal();
                filled(i, j) = v;
            }
        }
    }
    // final conditional models for every column, so new rows may be missing anywhere
    for (Index j = 0; j < d; ++j)
        detail::regress_column(filled, x, j, opt.ridge, model.intercept[static_cast<std::size_t>(j)],
                               model.weights[static_cast<std::size_t>(j)], model.residual_sd[static_cast<std::size_t>(j)]);
    return model;
}

/// Completes `x` with the fitted conditional models: mean fill, then the
/// configured number of chained sweeps over the missing cells. Observed cells
/// are copied through untouched.
inline auto mice_apply(const ImputationModel& model, const MaskedMatrix& x) -> Matrix
{
    if (x.cols() != model.width())
        throw InvalidArgument("mice_apply: matrix has " + std::to_string(x.cols()) + " columns, model expects " +
                              std::to_string(model.width()));
    const Index n = x.rows(), d = x.cols();
    Matrix filled = x.values;
    std::vector<Index> incomplete;
    for (Index j = 0; j < d; ++j) {
        bool any = false;
        for (Index i = 0; i < n; ++i)
            if (!x.observed(i, j)) {
                filled(i, j) = model.fallback_mean[static_cast<std::size_t>(j)];
                any = true;
            }
        if (any) incomplete.push_back(j);
    }
    if (incomplete.empty() || d == 1) return filled;

    // row-keyed stream so a row's imputation does not depend on its batch
    for (Index i = 0; i < n; ++i) {
        if (x.observed.row(i).all()) continue;
        Xoshiro256 rng(derive_seed(model.options.seed, static_cast<std::uint64_t>(i)));
        for (int it = 0; it < model.options.iterations; ++it) {
            for (Index j : incomplete) {
                if (x.observed(i, j)) continue;
                double v = model.predict(j, filled, i);
                if (model.options.stochastic) v += model.residual_sd[static_cast<std::size_t>(j)] * rng.normal();
                filled(i, j) = v;
            }
        }
    }
    return filled;
}

// Column-mean imputation, the baseline MICE is compared against.
inline auto mean_impute(const MaskedMatrix& train, const MaskedMatrix& x) -> Matrix
{
    Matrix filled = x.values;
    for (Index j = 0; j < x.cols(); ++j) {
        double sum = 0.0;
        Index cnt = 0;
        for (Index i = 0; i < train.rows(); ++i)
            if (train.observed(i, j)) {
                sum += train.values(i, j);
                ++cnt;
            }
        const double mean = cnt ? sum / static_cast<double>(cnt) : 0.0;
        for (Index i = 0; i < x.rows(); ++i)
            if (!x.observed(i, j)) filled(i, j) = mean;
    }
    return filled;
}

// ---------------------------------------------------------------------------
// z-score

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> sd; // population convention
    std::vector<bool> constant;

    [[nodiscard]] auto width() const -> Index { return static_cast<Index>(mean.size()); }
};

inline auto zscore_fit(const Matrix& x) -> Normalizer
{
    require(x.rows() > 0, "zscore_fit: empty matrix");
    Normalizer z;
    const auto n = static_cast<double>(x.rows());
    for (Index j = 0; j < x.cols(); ++j) {
        const double mu = x.col(j).sum() / n;
        const double var = (x.col(j).array() - mu).square().sum() / n;
        const double sd = std::sqrt(var);
        z.mean.push_back(mu);
        z.sd.push_back(sd);
        z.constant.push_back(!(sd > 1e-12 * std::max(1.0, std::abs(mu))));
    }
    return z;
}

inline auto zscore_apply(const Normalizer& z, const Matrix& x) -> Matrix
{
    if (x.cols() != z.width())
        throw InvalidArgument("zscore_apply: matrix has " + std::to_string(x.cols()) + " columns, normalizer expects " +
                              std::to_string(z.width()));
    Matrix out(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        const auto u = static_cast<std::size_t>(j);
        if (z.constant[u]) out.col(j).setZero();
        else out.col(j) = (x.col(j).array() - z.mean[u]) / z.sd[u];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gamma correction

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // row-major

    auto operator==(const GrayImage&) const -> bool = default;
};

/// Gamma per grey level: either one constant or a 256-entry table.
class GammaMap {
public:
    GammaMap() = default;

    static auto constant(double gamma) -> GammaMap
    {
        if (!(gamma > 0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be > 0, got " + std::to_string(gamma));
        GammaMap m;
        m.constant_ = gamma;
        return m;
    }

    static auto table(const std::vector<double>& gammas) -> GammaMap
    {
        if (gammas.size() != 256) throw InvalidArgument("gamma table must have 256 entries, got " + std::to_string(gammas.size()));
        GammaMap m;
        m.table_.emplace();
        for (std::size_t g = 0; g < 256; ++g) {
            if (!(gammas[g] > 0) || !std::isfinite(gammas[g]))
                throw InvalidArgument("gamma table entry " + std::to_string(g) + " must be > 0");
            (*m.table_)[g] = gammas[g];
        }
        return m;
    }

    [[nodiscard]] auto is_table() const -> bool { return table_.has_value(); }
    [[nodiscard]] auto constant_value() const -> double { return constant_; }

    [[nodiscard]] auto gamma(int grey) const -> double
    {
        return table_ ? (*table_)[static_cast<std::size_t>(grey)] : constant_;
    }

    [[nodiscard]] auto entries() const -> std::vector<double>
    {
        if (!table_) return {};
        return {table_->begin(), table_->end()};
    }

    /// s(G) = 255 * (G / 255)^(1 / gamma(G))
    [[nodiscard]] auto apply(int grey) const -> double
    {
        if (grey < 0 || grey > 255) throw InvalidArgument("pixel value " + std::to_string(grey) + " outside [0, 255]");
        return 255.0 * std::pow(grey / 255.0, 1.0 / gamma(grey));
    }

private:
    double constant_ = 1.0;
    std::optional<std::array<double, 256>> table_;
};

inline auto gamma_correct(const GrayImage& img, const GammaMap& map) -> std::vector<double>
{
    std::array<double, 256> lut{};
    for (int g = 0; g < 256; ++g) lut[static_cast<std::size_t>(g)] = map.apply(g);
    std::vector<double> out(img.pixels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lut[img.pixels[i]];
    return out;
}

// Binary 8-bit PGM (P5), maxval <= 255.
inline auto read_pgm(std::istream& in) -> GrayImage
{
    auto token = [&]() -> std::string {
        std::string t;
        int c = 0;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {}
                continue;
            }
            if (std::isspace(c)) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(static_cast<char>(c));
        }
        return t;
    };
    if (token() != "P5") throw InvalidArgument("not a binary PGM (P5) image");
    GrayImage img;
    int maxval = 0;
    try {
        img.width = std::stoi(token());
        img.height = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw InvalidArgument("malformed PGM header");
    }
    if (img.width <= 0 || img.height <= 0) throw InvalidArgument("PGM has non-positive dimensions");
    if (maxval <= 0 || maxval > 255) throw InvalidArgument("only 8-bit PGM images are supported");
    img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw InvalidArgument("PGM pixel data truncated");
    if (maxval != 255)
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
    return img;
}

inline void write_pgm(std::ostream& out, const GrayImage& img)
{
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

// ---------------------------------------------------------------------------
// PCA

struct PCAModel {
    Index input_dim = 0;
    Vector mean;
    Matrix components;   // p x d, orthonormal rows
    Vector eigenvalues;  // length p, nonincreasing, >= 0
    bool whiten = false;
    double floor = 1e-10;
    double total_variance = 0.0; // trace of the sample covariance

    [[nodiscard]] auto count() const -> Index { return components.rows(); }

    [[nodiscard]] auto explained_variance_ratio() const -> Vector
    {
        if (total_variance <= 0) return Vector::Zero(eigenvalues.size());
        return eigenvalues / total_variance;
    }
};

inline auto pca_fit(const Matrix& x, Index p, bool whiten = true, double floor = 1e-10) -> PCAModel
{
    const Index n = x.rows(), d = x.cols();
    if (p < 1 || p > std::min(n - 1, d))
        throw InvalidArgument("pca_fit: component count " + std::to_string(p) + " outside [1, " +
                              std::to_string(std::max<Index>(0, std::min(n - 1, d))) + "]");
    PCAModel m;
    m.input_dim = d;
    m.whiten = whiten;
    m.floor = floor;
    m.mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - m.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    m.total_variance = cov.trace();

    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success) throw Error("pca_fit: eigendecomposition failed");
    // ascending from Eigen; take the top p in descending order
    m.components.resize(p, d);
    m.eigenvalues.resize(p);
    for (Index c = 0; c < p; ++c) {
        const Index src = d - 1 - c;
        Vector v = es.eigenvectors().col(src);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        m.components.row(c) = v.transpose();
        m.eigenvalues(c) = std::max(0.0, es.eigenvalues()(src));
    }
    return m;
}

inline auto pca_transform(const PCAModel& m, const Matrix& x) -> Matrix
{
    if (x.cols() != m.input_dim)
        throw InvalidArgument("pca_transform: matrix has " + std::to_string(x.cols()) + " columns, model expects " +
                              std::to_string(m.input_dim));
    Matrix z = (x.rowwise() - m.mean.transpose()) * m.components.transpose();
    if (m.whiten)
        for (Index c = 0; c < z.cols(); ++c) z.col(c) /= std::sqrt(std::max(m.eigenvalues(c), m.floor));
    return z;
}

inline auto pca_inverse_transform(const PCAModel& m, const Matrix& z) -> Matrix
{
    require(z.cols() == m.count(), "pca_inverse_transform: component count mismatch");
    Matrix scores = z;
    if (m.whiten)
        for (Index c = 0; c < z.cols(); ++c) scores.col(c) *= std::sqrt(std::max(m.eigenvalues(c), m.floor));
    return (scores * m.components).rowwise() + m.mean.transpose();
}

} // namespace riskstack

#endif
