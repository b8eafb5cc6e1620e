#include <gtest/gtest.h>

#include <set>

#include <reluopt/benchfn.hpp>

using namespace reluopt;

TEST(Evaluate, KnownMinima) {
    EXPECT_EQ(evaluate(Benchmark::Himmelblau, 3.0, 2.0), 0.0);
    EXPECT_EQ(evaluate(Benchmark::Ackley, 0.0, 0.0), 0.0);
    EXPECT_NEAR(evaluate(Benchmark::Peaks, 0.228, -1.626), -6.551, 1e-2);
}

TEST(Evaluate, KnownMinimaTable) {
    for (Benchmark f : {Benchmark::Peaks, Benchmark::Ackley, Benchmark::Himmelblau}) {
        const BenchmarkInfo& info = benchmark_info(f);
        ASSERT_FALSE(info.minima.empty()) << info.name;
        for (const KnownMinimum& m : info.minima)
            EXPECT_NEAR(evaluate(f, m.point[0], m.point[1]), m.value, 1e-2) << info.name;
    }
    EXPECT_EQ(benchmark_info(Benchmark::Himmelblau).minima.size(), 4u);
}

TEST(Evaluate, PeaksMinimumIsLocalMinimum) {
    const double c = evaluate(Benchmark::Peaks, 0.228, -1.626);
    for (double dx : {-0.01, 0.0, 0.01})
        for (double dy : {-0.01, 0.0, 0.01}) EXPECT_GE(evaluate(Benchmark::Peaks, 0.228 + dx, -1.626 + dy), c - 1e-3);
}

TEST(BenchmarkInfo, DomainsAndDefaults) {
    EXPECT_EQ(benchmark_info(Benchmark::Peaks).hi[0], 2.0);
    EXPECT_EQ(benchmark_info(Benchmark::Ackley).lo[1], -3.5);
    EXPECT_EQ(benchmark_info(Benchmark::Himmelblau).hi[1], 5.0);
    EXPECT_EQ(benchmark_info(Benchmark::Peaks).default_samples, 100000);
    EXPECT_EQ(benchmark_info(Benchmark::Himmelblau).default_samples, 100000);
    EXPECT_EQ(benchmark_info(Benchmark::Ackley).default_samples, 150000);
    EXPECT_EQ(parse_benchmark("ackley"), Benchmark::Ackley);
    EXPECT_THROW(parse_benchmark("rosenbrock"), InvalidInput);
}

TEST(Generate, LatinHypercubeStrata) {
    const Dataset d = generate(Benchmark::Peaks, 100, 3);
    for (int dim = 0; dim < 2; ++dim) {
        std::set<int> strata;
        for (int i = 0; i < 100; ++i) {
            const double v = d.inputs(i, dim);
            const int s = static_cast<int>(std::floor((v + 2.0) / 4.0 * 100.0));
            EXPECT_GE(v, -2.0 + 4.0 * s / 100.0);
            EXPECT_LT(v, -2.0 + 4.0 * (s + 1) / 100.0);
            strata.insert(s);
        }
        EXPECT_EQ(strata.size(), 100u);
        EXPECT_EQ(*strata.begin(), 0);
        EXPECT_EQ(*strata.rbegin(), 99);
    }
}

TEST(Generate, TargetsAndSplit) {
    const Dataset d = generate(Benchmark::Himmelblau, 1000, 4);
    for (int i = 0; i < d.size(); ++i) EXPECT_EQ(d.targets[i], evaluate(Benchmark::Himmelblau, d.inputs(i, 0), d.inputs(i, 1)));
    EXPECT_EQ(d.test.size(), 300u);
    EXPECT_EQ(d.train.size(), 700u);
    std::set<int> all(d.train.begin(), d.train.end());
    all.insert(d.test.begin(), d.test.end());
    EXPECT_EQ(all.size(), 1000u);
}

TEST(Generate, Deterministic) {
    const Dataset a = generate(Benchmark::Ackley, 500, 9), b = generate(Benchmark::Ackley, 500, 9);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.targets, b.targets);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(dataset_csv(a), dataset_csv(b));
    EXPECT_NE(generate(Benchmark::Ackley, 500, 10).inputs, a.inputs);
}

TEST(Generate, RejectsTinySamples) { EXPECT_THROW(generate(Benchmark::Peaks, 9, 0), InvalidInput); }

TEST(Normalization, FullSetIsStandardized) {
    const Dataset d = generate(Benchmark::Peaks, 2000, 5);
    std::vector<int> all(static_cast<std::size_t>(d.size()));
    for (int i = 0; i < d.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    const auto [X, y] = d.normalized(all);
    for (Eigen::Index c = 0; c < 2; ++c) {
        const double mean = X.col(c).mean();
        const double var = (X.col(c).array() - mean).square().sum() / static_cast<double>(X.rows());
        EXPECT_LE(std::abs(mean), 1e-8);
        EXPECT_NEAR(std::sqrt(var), 1.0, 1e-6);
    }
    EXPECT_LE(std::abs(y.mean()), 1e-8);
}

TEST(Normalization, RoundTrip) {
    const Dataset d = generate(Benchmark::Himmelblau, 200, 6);
    for (int i = 0; i < d.size(); ++i) {
        EXPECT_NEAR(d.input_norm[0].invert(d.input_norm[0].apply(d.inputs(i, 0))), d.inputs(i, 0), 1e-12);
        EXPECT_NEAR(d.target_norm.invert(d.target_norm.apply(d.targets[i])), d.targets[i],
                    1e-12 * std::max(1.0, std::abs(d.targets[i])));
    }
}

TEST(Export, CsvAndSidecar) {
    const Dataset d = generate(Benchmark::Peaks, 20, 7);
    const std::string csv = dataset_csv(d);
    EXPECT_EQ(csv.rfind("x1,x2,target\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
    const nlohmann::json j = dataset_sidecar(d);
    EXPECT_EQ(j["seed"].get<int>(), 7);
    EXPECT_EQ(j["normalization_fitted_on"], "all");
    EXPECT_EQ(j["test"].size(), 6u);
    EXPECT_DOUBLE_EQ(j["target_normalization"]["mean"].get<double>(), d.target_norm.mean);
}
