#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace reluopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. Every failure surfaced by the library derives from Error so
// the CLI can map categories onto exit codes.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed something that violates a precondition.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent file contents.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Operation not defined for the network's activation kind.
class UnsupportedActivation : public Error {
public:
    using Error::Error;
};

/// An invariant check on computed data failed.
class VerificationFailure : public Error {
public:
    using Error::Error;
};

/// Axis-aligned box [lo, hi] in input space. lo == hi is allowed on a
/// coordinate (degenerate boxes arise for zero-radius perturbations).
struct Box {
    Vector lo;
    Vector hi;

    Box() = default;
    Box(Vector l, Vector h) : lo(std::move(l)), hi(std::move(h)) {
        if (lo.size() != hi.size()) throw InvalidInput("box: lo/hi size mismatch");
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]))
                throw InvalidInput("box: non-finite bound on coordinate " + std::to_string(i));
            if (lo[i] > hi[i])
                throw InvalidInput("box: lo > hi on coordinate " + std::to_string(i));
        }
    }

    [[nodiscard]] Eigen::Index dim() const { return lo.size(); }
    [[nodiscard]] Vector center() const { return 0.5 * (lo + hi); }
    [[nodiscard]] double volume() const { return (hi - lo).prod(); }
    [[nodiscard]] double diameter() const { return (hi - lo).norm(); }
    [[nodiscard]] bool contains(const Vector& x, double tol = 0.0) const {
        for (Eigen::Index i = 0; i < lo.size(); ++i)
            if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
        return true;
    }
};

/// Portable seeded generator (splitmix64). Conversions to doubles and bounded
/// integers live here because the std distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw InvalidInput("Rng::below(0)");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

/// Shortest round-trippable decimal for a double (17 significant digits).
inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// Fixed-precision formatting used in SVG and CSV output.
inline std::string format_fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    std::string s = os.str();
    if (s == "-" + std::string(s.size() - 1, '0')) return s.substr(1);
    if (s.rfind("-0.", 0) == 0 && s.find_first_not_of("-0.") == std::string::npos) return s.substr(1);
    return s;
}

/// 64-bit FNV-1a; stable across platforms and runs.
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace reluopt
