#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace reluopt {

enum class Benchmark { Peaks, Ackley, Himmelblau };

struct KnownMinimum {
    std::array<double, 2> point;
    double value;
};

struct BenchmarkInfo {
    Benchmark id;
    std::string name;
    std::array<double, 2> lo;
    std::array<double, 2> hi;
    std::vector<KnownMinimum> minima;  // as printed, 3 decimals
    int default_samples;

    [[nodiscard]] Box box() const { return Box(Vector{{lo[0], lo[1]}}, Vector{{hi[0], hi[1]}}); }
};

inline const BenchmarkInfo& benchmark_info(Benchmark f) {
    static const BenchmarkInfo peaks{Benchmark::Peaks, "peaks", {-2.0, -2.0}, {2.0, 2.0},
                                     {{{0.228, -1.626}, -6.551}}, 100000};
    static const BenchmarkInfo ackley{Benchmark::Ackley, "ackley", {-3.5, -3.5}, {3.5, 3.5},
                                      {{{0.0, 0.0}, 0.0}}, 150000};
    static const BenchmarkInfo himmelblau{Benchmark::Himmelblau,
                                          "himmelblau",
                                          {-5.0, -5.0},
                                          {5.0, 5.0},
                                          {{{3.0, 2.0}, 0.0},
                                           {{-2.805, 3.131}, 0.0},
                                           {{-3.779, -3.283}, 0.0},
                                           {{3.584, -1.848}, 0.0}},
                                          100000};
    switch (f) {
        case Benchmark::Peaks: return peaks;
        case Benchmark::Ackley: return ackley;
        case Benchmark::Himmelblau: return himmelblau;
    }
    return peaks;
}

inline Benchmark parse_benchmark(const std::string& name) {
    if (name == "peaks") return Benchmark::Peaks;
    if (name == "ackley") return Benchmark::Ackley;
    if (name == "himmelblau") return Benchmark::Himmelblau;
    throw InvalidInput("unknown benchmark '" + name + "' (expected peaks, ackley or himmelblau)");
}

inline double evaluate(Benchmark f, double x, double y) {
    switch (f) {
        case Benchmark::Peaks:
            return 3.0 * (1.0 - x) * (1.0 - x) * std::exp(-x * x - (y + 1.0) * (y + 1.0)) -
                   10.0 * (x / 5.0 - x * x * x - std::pow(y, 5)) * std::exp(-x * x - y * y) -
                   std::exp(-(x + 1.0) * (x + 1.0) - y * y) / 3.0;
        case Benchmark::Ackley:
            return -20.0 * std::exp(-0.2 * std::sqrt(0.5 * (x * x + y * y))) -
                   std::exp(0.5 * (std::cos(2.0 * M_PI * x) + std::cos(2.0 * M_PI * y))) + std::exp(1.0) + 20.0;
        case Benchmark::Himmelblau: {
            const double a = x * x + y - 11.0;
            const double b = x + y * y - 7.0;
            return a * a + b * b;
        }
    }
    return 0.0;
}

/// z-score statistics of one column.
struct Normalization {
    double mean = 0.0;
    double stddev = 1.0;

    [[nodiscard]] double apply(double v) const { return (v - mean) / stddev; }
    [[nodiscard]] double invert(double v) const { return v * stddev + mean; }
};

inline Normalization fit_normalization(const Vector& v) {
    Normalization n;
    n.mean = v.mean();
    const double var = (v.array() - n.mean).square().mean();
    n.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
    return n;
}

struct Dataset {
    Benchmark function = Benchmark::Peaks;
    std::uint64_t seed = 0;
    Matrix inputs;  // N x 2, raw
    Vector targets;  // N, raw
    std::vector<Normalization> input_norm;
    Normalization target_norm;
    std::vector<int> train;
    std::vector<int> test;

    [[nodiscard]] int size() const { return static_cast<int>(targets.size()); }

    /// Normalized copies of the rows in `idx`.
    [[nodiscard]] std::pair<Matrix, Vector> normalized(const std::vector<int>& idx) const {
        Matrix X(static_cast<Eigen::Index>(idx.size()), inputs.cols());
        Vector y(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (Eigen::Index c = 0; c < inputs.cols(); ++c)
                X(static_cast<Eigen::Index>(r), c) = input_norm[static_cast<std::size_t>(c)].apply(inputs(idx[r], c));
            y[static_cast<Eigen::Index>(r)] = target_norm.apply(targets[idx[r]]);
        }
        return {std::move(X), std::move(y)};
    }
};

inline constexpr double kTestFraction = 0.3;

/// Latin-hypercube sample of `n_samples` points over the benchmark domain.
/// Normalization statistics are fitted on the full set; the 70/30 split is a
/// seeded shuffle.
inline Dataset generate(Benchmark f, int n_samples, std::uint64_t seed) {
    if (n_samples < 10) throw InvalidInput("generate: n_samples must be >= 10");
    const BenchmarkInfo& info = benchmark_info(f);
    Rng rng(seed);
    Dataset d;
    d.function = f;
    d.seed = seed;
    d.inputs.resize(n_samples, 2);
    d.targets.resize(n_samples);
    for (int dim = 0; dim < 2; ++dim) {
        std::vector<int> strata(static_cast<std::size_t>(n_samples));
        for (int i = 0; i < n_samples; ++i) strata[static_cast<std::size_t>(i)] = i;
        rng.shuffle(strata);
        const double lo = info.lo[static_cast<std::size_t>(dim)];
        const double width = (info.hi[static_cast<std::size_t>(dim)] - lo) / n_samples;
        for (int i = 0; i < n_samples; ++i) {
            const int s = strata[static_cast<std::size_t>(i)];
            double v = lo + width * (s + rng.uniform());
            // Guard the half-open stratum against rounding up to its right edge.
            const double right = lo + width * (s + 1);
            if (v >= right) v = std::nextafter(right, lo);
            d.inputs(i, dim) = v;
        }
    }
    for (int i = 0; i < n_samples; ++i) d.targets[i] = evaluate(f, d.inputs(i, 0), d.inputs(i, 1));

    d.input_norm = {fit_normalization(d.inputs.col(0)), fit_normalization(d.inputs.col(1))};
    d.target_norm = fit_normalization(d.targets);

    std::vector<int> order(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    const auto n_test = static_cast<std::size_t>(std::llround(kTestFraction * n_samples));
    d.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    d.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    return d;
}

inline std::string dataset_csv(const Dataset& d) {
    std::ostringstream os;
    os << "x1,x2,target\n";
    for (int i = 0; i < d.size(); ++i)
        os << format_double(d.inputs(i, 0)) << ',' << format_double(d.inputs(i, 1)) << ','
           << format_double(d.targets[i]) << '\n';
    return os.str();
}

inline nlohmann::json dataset_sidecar(const Dataset& d) {
    nlohmann::json j;
    j["function"] = benchmark_info(d.function).name;
    j["seed"] = d.seed;
    j["n_samples"] = d.size();
    j["normalization_fitted_on"] = "all";
    j["input_normalization"] = nlohmann::json::array();
    for (const auto& n : d.input_norm) j["input_normalization"].push_back({{"mean", n.mean}, {"std", n.stddev}});
    j["target_normalization"] = {{"mean", d.target_norm.mean}, {"std", d.target_norm.stddev}};
    j["train"] = d.train;
    j["test"] = d.test;
    return j;
}

}  // namespace reluopt
