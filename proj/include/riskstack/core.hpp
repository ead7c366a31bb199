#ifndef RISKSTACK_CORE_HPP
#define RISKSTACK_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace riskstack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// binary labels, 1 = positive class (high risk / death)
using Labels = std::vector<int>;
using Index = std::ptrdiff_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// raised for caller mistakes: bad shapes, out-of-range parameters, malformed input
class InvalidArgument : public Error {
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw InvalidArgument(what);
}

inline auto count_positive(std::span<const int> y) -> Index
{
    Index n = 0;
    for (int v : y) n += (v == 1);
    return n;
}

inline void require_binary(std::span<const int> y)
{
    for (int v : y)
        if (v != 0 && v != 1) throw InvalidArgument("labels must be 0 or 1, got " + std::to_string(v));
}

inline auto select_rows(const Matrix& x, std::span<const Index> rows) -> Matrix
{
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
    return out;
}

template <class T>
auto select(std::span<const T> v, std::span<const Index> rows) -> std::vector<T>
{
    std::vector<T> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
    return out;
}

inline auto hstack(const Matrix& a, const Matrix& b) -> Matrix
{
    require(a.rows() == b.rows(), "hstack: row count mismatch");
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

inline auto sigmoid(double z) -> double
{
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// FNV-1a, used for bundle fingerprints and history checksums
inline auto fnv1a64(std::string_view bytes) -> std::uint64_t
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline auto hex64(std::uint64_t v) -> std::string
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

} // namespace riskstack

#endif
