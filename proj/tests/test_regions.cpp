#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include <reluopt/milp.hpp>
#include <reluopt/regions.hpp>

#include "oracles/grid_patterns.hpp"
#include "oracles/pattern_oracle.hpp"
#include "test_nets.hpp"

using namespace reluopt;

namespace {

const Box kSquare(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));

// One hidden layer whose neurons switch along the given lines a.x + c = 0.
Network line_net(const std::vector<std::array<double, 3>>& lines) {
    const auto k = static_cast<Eigen::Index>(lines.size());
    Matrix W(k, 2), V = Matrix::Ones(1, k);
    Vector b(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        W(i, 0) = lines[static_cast<std::size_t>(i)][0];
        W(i, 1) = lines[static_cast<std::size_t>(i)][1];
        b[i] = lines[static_cast<std::size_t>(i)][2];
    }
    return Network({{W, b, Activation::relu()}, {V, Vector::Zero(1), Activation::identity()}}, kSquare);
}

Vector interior_sample(Rng& rng, const LinearRegion& r) {
    // Random convex combination of the vertices, pulled slightly toward the centroid.
    std::vector<double> w(r.vertices.size());
    double s = 0.0;
    for (auto& v : w) s += (v = rng.uniform() + 1e-3);
    const auto c = r.centroid();
    Vector x = Vector::Zero(2);
    for (std::size_t i = 0; i < w.size(); ++i) {
        x[0] += w[i] / s * r.vertices[i][0];
        x[1] += w[i] / s * r.vertices[i][1];
    }
    x[0] = 0.9 * x[0] + 0.1 * c[0];
    x[1] = 0.9 * x[1] + 0.1 * c[1];
    return x;
}

double convex_overlap(const LinearRegion& a, const LinearRegion& b) {
    std::vector<std::array<double, 2>> poly = a.vertices;
    for (std::size_t e = 0; e < b.vertices.size() && poly.size() >= 3; ++e) {
        const auto& p = b.vertices[e];
        const auto& q = b.vertices[(e + 1) % b.vertices.size()];
        auto side = [&](const std::array<double, 2>& v) { return (q[0] - p[0]) * (v[1] - p[1]) - (q[1] - p[1]) * (v[0] - p[0]); };
        std::vector<std::array<double, 2>> out;
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const auto& P = poly[i];
            const auto& Q = poly[(i + 1) % poly.size()];
            const double sp = side(P), sq = side(Q);
            if (sp >= 0) out.push_back(P);
            if ((sp >= 0) != (sq >= 0)) {
                const double t = sp / (sp - sq);
                out.push_back({P[0] + t * (Q[0] - P[0]), P[1] + t * (Q[1] - P[1])});
            }
        }
        poly = out;
    }
    double area = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i)
        area += poly[i][0] * poly[(i + 1) % poly.size()][1] - poly[(i + 1) % poly.size()][0] * poly[i][1];
    return poly.size() < 3 ? 0.0 : 0.5 * area;
}

void check_atlas(const Network& net, const RegionAtlas& atlas, Rng& rng) {
    ASSERT_TRUE(atlas.complete);
    EXPECT_NEAR(atlas.total_area, atlas.box.volume(), 1e-6 * atlas.box.volume());
    std::map<Pattern, const LinearRegion*> by_pattern;
    for (const auto& r : atlas.regions) {
        EXPECT_TRUE(by_pattern.emplace(r.pattern, &r).second) << "duplicate pattern";
        EXPECT_GT(detail::polygon_area(r.vertices), 0.0);  // counterclockwise
        for (int s = 0; s < 10; ++s) {
            const Vector x = interior_sample(rng, r);
            const double affine = r.out_grad.row(0).dot(x) + r.out_offset[0];
            EXPECT_NEAR(forward(net, x)[0], affine, 1e-7);
            EXPECT_EQ(pattern_at(net, x), r.pattern);
        }
    }
    for (const auto& r : atlas.regions) {
        for (const Facet& f : r.facets) {
            ASSERT_TRUE(f.known);
            const LinearRegion* other = by_pattern.at(f.neighbor);
            bool back = false;
            for (const Facet& g : other->facets) back |= g.neuron == f.neuron && g.neighbor == r.pattern;
            EXPECT_TRUE(back) << "facet symmetry";
        }
        for (std::size_t e = 0; e < r.vertices.size(); ++e) {
            const int lbl = r.edge_labels[e];
            if (lbl < 0) continue;
            Vector mid(2);
            mid << 0.5 * (r.vertices[e][0] + r.vertices[(e + 1) % r.vertices.size()][0]),
                0.5 * (r.vertices[e][1] + r.vertices[(e + 1) % r.vertices.size()][1]);
            const LinearRegion* other = nullptr;
            for (const Facet& f : r.facets)
                if (f.neuron == lbl) other = by_pattern.at(f.neighbor);
            ASSERT_NE(other, nullptr);
            const double here = r.out_grad.row(0).dot(mid) + r.out_offset[0];
            const double there = other->out_grad.row(0).dot(mid) + other->out_offset[0];
            EXPECT_NEAR(here, there, 1e-7) << "continuity at facet midpoint";
        }
    }
    for (int s = 0; s < 50 && atlas.regions.size() > 1; ++s) {
        const auto i = rng.below(atlas.regions.size()), j = rng.below(atlas.regions.size());
        if (i == j) continue;
        EXPECT_LE(convex_overlap(atlas.regions[i], atlas.regions[j]), 1e-9 * atlas.box.volume());
    }
}

}  // namespace

TEST(Linearize, AllActiveIsComposedProduct) {
    Rng rng(1);
    std::vector<Layer> layers;
    Matrix W1 = Matrix::Random(3, 2).cwiseAbs(), W2 = Matrix::Random(2, 3).cwiseAbs(), W3 = Matrix::Random(1, 2);
    Vector b1 = Vector::Constant(3, 0.1), b2 = Vector::Constant(2, 0.2), b3 = Vector::Constant(1, -0.3);
    const Network net({{W1, b1, Activation::relu()}, {W2, b2, Activation::relu()}, {W3, b3, Activation::identity()}},
                      Box(Vector::Zero(2), Vector::Ones(2)));
    const Linearization lin = linearize_at(net, Pattern(5, 1));
    const Matrix A = W3 * W2 * W1;
    const Vector c = W3 * (W2 * b1 + b2) + b3;
    EXPECT_LE((lin.out_grad - A).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(lin.out_offset[0], c[0], 1e-14);
}

TEST(Linearize, AllInactiveIsLastBias) {
    Rng rng(2);
    const Network net = testnets::random_net(rng, 2, {4, 4}, 1);
    const Linearization lin = linearize_at(net, Pattern(8, 0));
    EXPECT_EQ(lin.out_grad.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(lin.out_offset[0], net.layer(2).bias[0]);
}

TEST(Linearize, ReproducesForwardAtTracePattern) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Network net = testnets::random_net(rng, 2, {5, 5}, 1);
        Vector x(2);
        x << rng.uniform(-1, 1), rng.uniform(-1, 1);
        const Linearization lin = linearize_at(net, pattern_at(net, x));
        EXPECT_NEAR(lin.out_grad.row(0).dot(x) + lin.out_offset[0], forward(net, x)[0], 1e-9);
    }
}

TEST(Linearize, RejectsClippedAndWrongLength) {
    Rng rng(4);
    const Network clipped = testnets::random_net(rng, 2, {3}, 1, Activation::clipped(2.0));
    EXPECT_THROW(linearize_at(clipped, Pattern(3, 1)), UnsupportedActivation);
    EXPECT_THROW(enumerate(clipped), UnsupportedActivation);
    const Network net = testnets::random_net(rng, 2, {3}, 1);
    EXPECT_THROW(linearize_at(net, Pattern(2, 1)), InvalidInput);
}

TEST(RegionOf, HalfSquare) {
    const Network net = line_net({{{1.0, 0.0, 0.0}}});
    const LinearRegion r = region_of(net, Vector::Map(std::array<double, 2>{0.5, 0.0}.data(), 2));
    EXPECT_NEAR(r.area, 2.0, 1e-12);
    ASSERT_EQ(r.facets.size(), 1u);
    EXPECT_EQ(r.facets[0].neuron, 0);
    for (const auto& v : r.vertices) EXPECT_GE(v[0], -1e-15);
}

TEST(RegionOf, LineMissingTheBox) {
    const Network net = line_net({{{1.0, 0.0, 5.0}}});
    const LinearRegion r = region_of(net, Vector::Zero(2));
    EXPECT_NEAR(r.area, 4.0, 1e-12);
    EXPECT_TRUE(r.facets.empty());
    EXPECT_EQ(r.vertices.size(), 4u);
}

TEST(RegionOf, SamplesReproducePattern) {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const Network net = testnets::random_net(rng, 2, {5, 5}, 1);
        Vector seed(2);
        seed << rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9);
        const LinearRegion r = region_of(net, seed);
        for (int s = 0; s < 100; ++s) EXPECT_EQ(oracle::trace_signs(net, interior_sample(rng, r)),
                                                 oracle::trace_signs(net, seed));
    }
}

TEST(RegionOf, SeedOnSwitchingLineIsJittered) {
    const Network net = line_net({{{1.0, 0.0, 0.0}}});
    const LinearRegion r = region_of(net, Vector::Zero(2));
    EXPECT_NEAR(r.area, 2.0, 1e-9);
}

TEST(Enumerate, LineArrangementCounts) {
    const Network one = line_net({{{1.0, 0.0, 0.1}}});
    const Network two = line_net({{{1.0, 0.0, 0.1}, {0.0, 1.0, -0.2}}});
    const double s = std::sqrt(3.0) / 2.0;
    const Network three = line_net({{{1.0, 0.0, 0.1}, {0.5, s, -0.2}, {-0.5, s, 0.05}}});
    EXPECT_EQ(enumerate(one).region_count(), 2u);
    EXPECT_EQ(enumerate(two).region_count(), 4u);
    EXPECT_EQ(enumerate(three).region_count(), 7u);
    for (const Network* n : {&one, &two, &three})
        EXPECT_EQ(oracle::grid_pattern_count(*n, n->input_box(), 200), enumerate(*n).region_count());
}

TEST(Enumerate, PartitionAndAdjacencyInvariants) {
    Rng rng(6);
    const std::vector<std::vector<int>> shapes{{10, 10}, {6, 6, 6}, {8}, {3, 3, 3}};
    for (const auto& shape : shapes) {
        const Network net = testnets::random_net(rng, 2, shape, 1);
        const RegionAtlas atlas = enumerate(net);
        EXPECT_TRUE(atlas.warnings.empty());
        check_atlas(net, atlas, rng);
    }
}

TEST(Enumerate, GridCountIsALowerBound) {
    Rng rng(7);
    const Network net = testnets::random_net(rng, 2, {10, 10}, 1);
    const RegionAtlas atlas = enumerate(net);
    const std::size_t grid = oracle::grid_pattern_count(net, net.input_box(), 1000);
    EXPECT_LE(grid, atlas.region_count());
    EXPECT_GE(static_cast<double>(grid), 0.98 * static_cast<double>(atlas.region_count()));
}

TEST(Enumerate, BudgetMarksAtlasIncomplete) {
    Rng rng(8);
    const Network net = testnets::random_net(rng, 2, {10, 10}, 1);
    EnumerateOptions opt;
    opt.max_regions = 3;
    const RegionAtlas atlas = enumerate(net, opt);
    EXPECT_FALSE(atlas.complete);
    EXPECT_EQ(atlas.region_count(), 3u);
    EXPECT_THROW(region_oracle_min(atlas), InvalidInput);
    opt.max_regions = 1000;
    opt.max_neurons = 5;
    EXPECT_THROW(enumerate(net, opt), InvalidInput);
}

TEST(Enumerate, NoHiddenNeuronsGivesTheBox) {
    Matrix W(1, 2);
    W << 1.0, -2.0;
    const Network net({{W, Vector::Zero(1), Activation::identity()}}, kSquare);
    const RegionAtlas atlas = enumerate(net);
    ASSERT_EQ(atlas.region_count(), 1u);
    EXPECT_NEAR(atlas.total_area, 4.0, 1e-12);
    const RegionMin m = region_oracle_min(atlas);
    EXPECT_NEAR(m.value, -3.0, 1e-12);  // corner (-1, 1)
    EXPECT_NEAR(m.x[0], -1.0, 1e-12);
    EXPECT_NEAR(m.x[1], 1.0, 1e-12);
    const std::string svg = render_svg(atlas, net);
    std::size_t count = 0;
    for (std::size_t p = svg.find("<polygon"); p != std::string::npos; p = svg.find("<polygon", p + 1)) ++count;
    EXPECT_EQ(count, 1u);
}

TEST(RegionOracle, AgreesWithPatternEnumerationAndSolver) {
    Rng rng(9);
    for (int trial = 0; trial < 8; ++trial) {
        const Network net = testnets::random_net(rng, 2, trial % 2 ? std::vector<int>{4, 4} : std::vector<int>{3, 3, 3}, 1);
        const RegionMin r = region_oracle_min(enumerate(net));
        EXPECT_NEAR(r.value, oracle::pattern_enumeration_min(net, net.input_box(), {1.0}).value, 1e-9);
        EXPECT_NEAR(forward(net, r.x)[0], r.value, 1e-9);
    }
    for (int trial = 0; trial < 4; ++trial) {
        const Network net = testnets::random_net(rng, 2, {10, 10, 10}, 1);
        const RegionMin r = region_oracle_min(enumerate(net));
        const BnbResult b = solve_min(net, ia_bounds(net));
        EXPECT_NEAR(b.objective, r.value, 1e-6);
    }
}

TEST(RenderSvg, TwoRegionsTwoPolygonsDeterministic) {
    const Network net = line_net({{{1.0, 0.0, 0.1}}});
    const RegionAtlas atlas = enumerate(net);
    const std::string a = render_svg(atlas, net), b = render_svg(atlas, net);
    EXPECT_EQ(a, b);
    std::size_t count = 0;
    for (std::size_t p = a.find("<polygon"); p != std::string::npos; p = a.find("<polygon", p + 1)) ++count;
    EXPECT_EQ(count, 2u);
}

TEST(RenderSvg, GoldenToyNetwork) {
    Rng rng(2024);
    const Network net = testnets::random_net(rng, 2, {4, 4}, 1);
    const std::string svg = render_svg(enumerate(net), net, 200, 8);
    const std::string path = std::string(RELUOPT_TEST_DATA) + "/toy_regions.svg";
    if (std::getenv("RELUOPT_UPDATE_GOLDEN")) write_file(path, svg);
    std::ifstream in(path);
    ASSERT_TRUE(in.good()) << "missing golden file " << path;
    const std::string golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(svg, golden);
}

TEST(AtlasJson, HexPatternsAndCounts) {
    const Network net = line_net({{{1.0, 0.0, 0.1}, {0.0, 1.0, -0.2}}});
    const nlohmann::json j = to_json(enumerate(net));
    EXPECT_EQ(j["region_count"], 4);
    EXPECT_EQ(j["regions"].size(), 4u);
    EXPECT_EQ(j["regions"][0]["pattern"], "0");
    EXPECT_EQ(j["regions"][3]["pattern"], "c");
    EXPECT_EQ(pattern_hex({1, 0, 1, 1, 1}), "b8");
}
