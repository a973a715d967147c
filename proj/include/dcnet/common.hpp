#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dcnet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input outside an operation's mathematical domain (log of nonpositive, zero-mean band).
class DomainError : public Error {
public:
    using Error::Error;
};

/// API misuse: broken precondition that is not a shape or domain issue.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed file content.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (missing file, short write).
class IoError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf surfaced where all values must stay finite.
class NumericError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Seeded randomness. All draws are produced from raw mt19937_64 output so the
// stream is pinned by this file alone, not by libstdc++ distribution details.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    int below(int n) {
        if (n <= 0) throw ContractError("Rng::below: n must be positive");
        return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

namespace detail {
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}
}  // namespace detail

/// Independent named substream of a master seed. Toggling one consumer of
/// randomness never shifts the draws seen by another.
inline Rng substream(std::uint64_t seed, std::string_view name) {
    return Rng(detail::mix64(seed ^ (0x9E3779B97F4A7C15ULL + detail::fnv1a(name))));
}

template <typename T>
std::string str(const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace dcnet
