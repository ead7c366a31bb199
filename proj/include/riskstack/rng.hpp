#ifndef RISKSTACK_RNG_HPP
#define RISKSTACK_RNG_HPP

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>

namespace riskstack {

// SplitMix64, used for seeding and for deriving independent child seeds.
inline auto splitmix64(std::uint64_t& state) -> std::uint64_t
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seed for stream `stream` of a master seed. Stable across platforms and thread counts.
inline auto derive_seed(std::uint64_t master, std::uint64_t stream) -> std::uint64_t
{
    std::uint64_t s = master ^ (0xd1b54a32d192ed03ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

/// xoshiro256** 1.0 (Blackman & Vigna). State is seeded from SplitMix64.
///
/// All sampling helpers below are implemented here instead of using <random>
/// distributions, whose output is implementation-defined; model fits must be
/// bit-reproducible across standard libraries.
__extension__ typedef unsigned __int128 u128;

class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(std::uint64_t seed = 0)
    {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static constexpr auto min() -> result_type { return 0; }
    static constexpr auto max() -> result_type { return std::numeric_limits<result_type>::max(); }

    auto operator()() -> result_type
    {
        const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = std::rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53 bits
    auto uniform() -> double { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    auto uniform(double lo, double hi) -> double { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), Lemire's multiply-shift with rejection
    auto below(std::uint64_t n) -> std::uint64_t
    {
        if (n == 0) return 0;
        u128 m = static_cast<u128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<u128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // standard normal via Box-Muller (the second variate is cached)
    auto normal() -> double
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do u1 = uniform(); while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    auto normal(double mean, double sd) -> double { return mean + sd * normal(); }

    auto bernoulli(double p) -> bool { return uniform() < p; }

    template <class T>
    void shuffle(std::span<T> v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace riskstack

#endif
