#include <gtest/gtest.h>

#include <reluopt/lp.hpp>

#include "oracles/tableau_lp.hpp"

using namespace reluopt;

namespace {

// Random feasible LP over the box [0, u]^n with mixed row relations; a
// hidden interior point guarantees feasibility, the box boundedness.
LpModel random_box_lp(Rng& rng, int n, int m, Sense sense) {
    LpModel lp;
    lp.sense = sense;
    Vector x0(n);
    for (int j = 0; j < n; ++j) {
        const double u = rng.uniform(1.0, 10.0);
        lp.add_variable(0.0, u, rng.uniform(-1.0, 1.0));
        x0[j] = rng.uniform(0.0, u);
    }
    for (int i = 0; i < m; ++i) {
        std::vector<LpTerm> terms;
        double ax = 0.0;
        for (int j = 0; j < n; ++j) {
            if (rng.uniform() < 0.3) continue;
            const double a = rng.uniform(-1.0, 1.0);
            terms.push_back({j, a});
            ax += a * x0[j];
        }
        const double pick = rng.uniform();
        if (pick < 0.45) lp.add_row(terms, Relation::LessEqual, ax + rng.uniform(0.0, 2.0));
        else if (pick < 0.9) lp.add_row(terms, Relation::GreaterEqual, ax - rng.uniform(0.0, 2.0));
        else lp.add_row(terms, Relation::Equal, ax);
    }
    return lp;
}

}  // namespace

TEST(Lp, SingleBoundedVariable) {
    LpModel lp;
    lp.add_variable(2.0, 5.0, 1.0);
    const LpSolution s = solve_lp(lp);
    ASSERT_EQ(s.status, LpStatus::Optimal);
    EXPECT_DOUBLE_EQ(s.x[0], 2.0);
    EXPECT_DOUBLE_EQ(s.objective, 2.0);
}

TEST(Lp, MaximizeSumUnderSimplexRow) {
    LpModel lp;
    lp.sense = Sense::Maximize;
    const int x = lp.add_variable(0.0, kInf, 1.0);
    const int y = lp.add_variable(0.0, kInf, 1.0);
    lp.add_row({{x, 1.0}, {y, 1.0}}, Relation::LessEqual, 1.0);
    const LpSolution s = solve_lp(lp);
    ASSERT_EQ(s.status, LpStatus::Optimal);
    EXPECT_NEAR(s.objective, 1.0, 1e-12);
}

TEST(Lp, DetectsInfeasibility) {
    LpModel lp;
    const int x = lp.add_variable(0.0, 1.0);
    lp.add_row({{x, 1.0}}, Relation::GreaterEqual, 2.0);
    EXPECT_EQ(solve_lp(lp).status, LpStatus::Infeasible);
}

TEST(Lp, DetectsUnboundedness) {
    LpModel lp;
    const int x = lp.add_variable(-kInf, kInf, 1.0);
    const int y = lp.add_variable(0.0, kInf, 0.0);
    lp.add_row({{x, 1.0}, {y, -1.0}}, Relation::LessEqual, 0.0);
    EXPECT_EQ(solve_lp(lp).status, LpStatus::Unbounded);
}

TEST(Lp, FreeVariablesAndEqualities) {
    // min |x - 3| written with a free x and an epigraph t.
    LpModel lp;
    const int x = lp.add_variable(-kInf, kInf, 0.0);
    const int t = lp.add_variable(-kInf, kInf, 1.0);
    lp.add_row({{t, 1.0}, {x, -1.0}}, Relation::GreaterEqual, -3.0);
    lp.add_row({{t, 1.0}, {x, 1.0}}, Relation::GreaterEqual, 3.0);
    const LpSolution s = solve_lp(lp);
    ASSERT_EQ(s.status, LpStatus::Optimal);
    EXPECT_NEAR(s.x[x], 3.0, 1e-9);
    EXPECT_NEAR(s.objective, 0.0, 1e-9);
}

TEST(Lp, RejectsMalformedModel) {
    LpModel lp;
    lp.add_variable(1.0, 0.0);
    EXPECT_THROW(solve_lp(lp), InvalidInput);
    LpModel lp2;
    lp2.add_variable(0.0, 1.0);
    lp2.add_row({{3, 1.0}}, Relation::LessEqual, 1.0);
    EXPECT_THROW(solve_lp(lp2), InvalidInput);
}

TEST(Lp, MatchesTextbookTableauOnRandomInstances) {
    Rng rng(20240611);
    for (int trial = 0; trial < 40; ++trial) {
        const Sense sense = trial % 2 ? Sense::Maximize : Sense::Minimize;
        const LpModel lp = random_box_lp(rng, 20, 30, sense);
        const LpSolution s = solve_lp(lp);
        const oracle::TableauResult o = oracle::tableau_solve(lp);
        ASSERT_TRUE(o.feasible);
        ASSERT_EQ(s.status, LpStatus::Optimal) << "trial " << trial;
        EXPECT_NEAR(s.objective, o.objective, 1e-6) << "trial " << trial;
        EXPECT_LE(s.max_residual, 1e-7);
        double cx = 0.0;
        for (int j = 0; j < lp.variables(); ++j) cx += lp.cost[static_cast<std::size_t>(j)] * s.x[j];
        EXPECT_NEAR(cx, s.objective, 1e-9 * std::max(1.0, std::abs(cx)));
    }
}

TEST(Lp, StrongDualityOnRandomInstances) {
    // Primal: min c.x, Ax >= b, x >= 0.  Dual: max b.y, A^T y <= c, y >= 0.
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 12, m = 9;
        Matrix A(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1.0, 2.0);
        Vector x0(n), y0(m);
        for (int j = 0; j < n; ++j) x0[j] = rng.uniform(0.0, 3.0);
        for (int i = 0; i < m; ++i) y0[i] = rng.uniform(0.0, 3.0);
        Vector b = A * x0, c = A.transpose() * y0;
        for (int i = 0; i < m; ++i) b[i] -= rng.uniform(0.0, 1.0);
        for (int j = 0; j < n; ++j) c[j] += rng.uniform(0.0, 1.0);

        LpModel primal;
        for (int j = 0; j < n; ++j) primal.add_variable(0.0, kInf, c[j]);
        for (int i = 0; i < m; ++i) {
            std::vector<LpTerm> t;
            for (int j = 0; j < n; ++j) t.push_back({j, A(i, j)});
            primal.add_row(t, Relation::GreaterEqual, b[i]);
        }
        LpModel dual;
        dual.sense = Sense::Maximize;
        for (int i = 0; i < m; ++i) dual.add_variable(0.0, kInf, b[i]);
        for (int j = 0; j < n; ++j) {
            std::vector<LpTerm> t;
            for (int i = 0; i < m; ++i) t.push_back({i, A(i, j)});
            dual.add_row(t, Relation::LessEqual, c[j]);
        }
        const LpSolution p = solve_lp(primal), d = solve_lp(dual);
        ASSERT_EQ(p.status, LpStatus::Optimal);
        ASSERT_EQ(d.status, LpStatus::Optimal);
        EXPECT_NEAR(p.objective, d.objective, 1e-6) << "trial " << trial;
    }
}

TEST(Lp, DegenerateInstanceTerminates) {
    // Klee-Minty-like degenerate cube corner: many rows active at the origin.
    LpModel lp;
    lp.sense = Sense::Maximize;
    const int n = 6;
    for (int j = 0; j < n; ++j) lp.add_variable(0.0, kInf, 1.0);
    Rng rng(3);
    for (int i = 0; i < 40; ++i) {
        std::vector<LpTerm> t;
        for (int j = 0; j < n; ++j) t.push_back({j, rng.uniform(-1.0, 1.0)});
        lp.add_row(t, Relation::LessEqual, 0.0);
    }
    for (int j = 0; j < n; ++j) lp.add_row({{j, 1.0}}, Relation::LessEqual, 1.0);
    const LpSolution s = solve_lp(lp);
    ASSERT_NE(s.status, LpStatus::NumericalFailure);
    const oracle::TableauResult o = oracle::tableau_solve(lp);
    if (s.status == LpStatus::Optimal) {
        EXPECT_NEAR(s.objective, o.objective, 1e-6);
    }
}

TEST(Lp, DeterministicAcrossRuns) {
    Rng rng(99);
    const LpModel lp = random_box_lp(rng, 15, 20, Sense::Minimize);
    const LpSolution a = solve_lp(lp), b = solve_lp(lp);
    EXPECT_EQ(a.iterations, b.iterations);
    EXPECT_EQ(a.x, b.x);
}

TEST(Lp, LpFormatDump) {
    LpModel lp;
    const int x = lp.add_variable(0.0, 4.0, -1.0, "x");
    const int y = lp.add_variable(-kInf, kInf, 0.0, "y");
    lp.add_row({{x, 1.0}, {y, -2.0}}, Relation::GreaterEqual, 1.0);
    const std::string s = to_lp_format(lp);
    EXPECT_NE(s.find("Minimize"), std::string::npos);
    EXPECT_NE(s.find("c0: 1 x - 2 y >= 1"), std::string::npos);
    EXPECT_NE(s.find("y free"), std::string::npos);
    EXPECT_NE(s.find("0 <= x <= 4"), std::string::npos);
}
