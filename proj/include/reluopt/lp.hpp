#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace reluopt {

enum class Sense { Minimize, Maximize };
enum class Relation { LessEqual, Equal, GreaterEqual };

struct LpTerm {
    int var;
    double coef;
};

struct LpRow {
    std::vector<LpTerm> terms;
    Relation relation = Relation::LessEqual;
    double rhs = 0.0;
};

/// Linear program over bounded variables:
///   min/max  cost . x   s.t.  rows,  lower <= x <= upper.
/// Rows are stored sparsely for building; the solver works densely.
struct LpModel {
    Sense sense = Sense::Minimize;
    std::vector<double> cost;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<std::string> names;
    std::vector<LpRow> rows;

    [[nodiscard]] int variables() const { return static_cast<int>(cost.size()); }
    [[nodiscard]] int constraints() const { return static_cast<int>(rows.size()); }

    int add_variable(double lo, double hi, double c = 0.0, std::string name = {}) {
        cost.push_back(c);
        lower.push_back(lo);
        upper.push_back(hi);
        if (name.empty()) name = "v" + std::to_string(cost.size() - 1);
        names.push_back(std::move(name));
        return static_cast<int>(cost.size()) - 1;
    }

    int add_row(std::vector<LpTerm> terms, Relation rel, double rhs) {
        rows.push_back({std::move(terms), rel, rhs});
        return static_cast<int>(rows.size()) - 1;
    }

    void clear_objective() { std::fill(cost.begin(), cost.end(), 0.0); }

    void validate() const {
        const int n = variables();
        if (lower.size() != cost.size() || upper.size() != cost.size())
            throw InvalidInput("lp: bound vectors do not match variable count");
        for (int j = 0; j < n; ++j) {
            const auto u = static_cast<std::size_t>(j);
            if (!std::isfinite(cost[u])) throw InvalidInput("lp: non-finite cost on " + names[u]);
            if (std::isnan(lower[u]) || std::isnan(upper[u]) || lower[u] > upper[u] || lower[u] == kInf ||
                upper[u] == -kInf)
                throw InvalidInput("lp: invalid bounds on " + names[u]);
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!std::isfinite(rows[r].rhs)) throw InvalidInput("lp: non-finite rhs in row " + std::to_string(r));
            for (const LpTerm& t : rows[r].terms)
                if (t.var < 0 || t.var >= n || !std::isfinite(t.coef))
                    throw InvalidInput("lp: bad term in row " + std::to_string(r));
        }
    }
};

enum class LpStatus { Optimal, Infeasible, Unbounded, NumericalFailure };

inline std::string to_string(LpStatus s) {
    switch (s) {
        case LpStatus::Optimal: return "optimal";
        case LpStatus::Infeasible: return "infeasible";
        case LpStatus::Unbounded: return "unbounded";
        case LpStatus::NumericalFailure: return "numerical_failure";
    }
    return "?";
}

struct LpSolution {
    LpStatus status = LpStatus::NumericalFailure;
    Vector x;
    double objective = 0.0;
    int iterations = 0;
    double max_residual = 0.0;
};

struct LpOptions {
    double feasibility_tol = 1e-7;
    double optimality_tol = 1e-9;
    double pivot_tol = 1e-10;
    int stall_threshold = 50;   // consecutive degenerate pivots before Bland's rule
    int refactor_interval = 64;
    int max_iterations = 0;     // 0: derived from problem size
};

namespace detail {

/// Bounded-variable revised simplex with an explicit dense basis inverse.
/// Columns are [structurals | row slacks | artificials]; the slack of row i
/// carries the row relation in its bounds, so every row is an equality.
class SimplexSolver {
public:
    SimplexSolver(const LpModel& model, const LpOptions& opt) : model_(model), opt_(opt) {}

    LpSolution solve() {
        model_.validate();
        setup();
        LpSolution sol;
        int iterations = 0;

        // Phase 1: drive artificials to zero.
        if (n_art_ > 0) {
            std::vector<double> c1(static_cast<std::size_t>(ncols_), 0.0);
            for (int j = n_ + m_; j < ncols_; ++j) c1[static_cast<std::size_t>(j)] = 1.0;
            const LpStatus s = iterate(c1, iterations);
            if (s == LpStatus::NumericalFailure) return fail(sol, iterations);
            double infeas = 0.0;
            for (int j = n_ + m_; j < ncols_; ++j) infeas += value(j);
            double scale = 1.0;
            for (const LpRow& r : model_.rows) scale = std::max(scale, std::abs(r.rhs));
            if (infeas > opt_.feasibility_tol * scale) {
                sol.status = LpStatus::Infeasible;
                sol.iterations = iterations;
                return sol;
            }
            for (int j = n_ + m_; j < ncols_; ++j) {
                hi_[static_cast<std::size_t>(j)] = 0.0;
                if (!is_basic(j)) xn_[static_cast<std::size_t>(j)] = 0.0;
            }
        }

        // Phase 2: the real objective, as minimization.
        std::vector<double> c2(static_cast<std::size_t>(ncols_), 0.0);
        const double sign = model_.sense == Sense::Maximize ? -1.0 : 1.0;
        for (int j = 0; j < n_; ++j) c2[static_cast<std::size_t>(j)] = sign * model_.cost[static_cast<std::size_t>(j)];
        const LpStatus s = iterate(c2, iterations);
        sol.iterations = iterations;
        if (s != LpStatus::Optimal) {
            sol.status = s;
            return sol;
        }
        refactor();
        sol.x.resize(n_);
        for (int j = 0; j < n_; ++j) {
            const auto u = static_cast<std::size_t>(j);
            sol.x[j] = std::clamp(value(j), model_.lower[u], model_.upper[u]);
        }
        sol.objective = 0.0;
        for (int j = 0; j < n_; ++j) sol.objective += model_.cost[static_cast<std::size_t>(j)] * sol.x[j];
        sol.max_residual = residual(sol.x);
        if (sol.max_residual > opt_.feasibility_tol) return fail(sol, iterations);
        sol.status = LpStatus::Optimal;
        return sol;
    }

private:
    static LpSolution& fail(LpSolution& sol, int iterations) {
        sol.status = LpStatus::NumericalFailure;
        sol.iterations = iterations;
        return sol;
    }

    // Scaled row residual: violation / (1 + |rhs| + sum |a_ij x_j|).
    [[nodiscard]] double residual(const Vector& x) const {
        double worst = 0.0;
        for (const LpRow& r : model_.rows) {
            double lhs = 0.0, mag = 1.0 + std::abs(r.rhs);
            for (const LpTerm& t : r.terms) {
                lhs += t.coef * x[t.var];
                mag += std::abs(t.coef * x[t.var]);
            }
            double v = 0.0;
            if (r.relation == Relation::LessEqual) v = lhs - r.rhs;
            else if (r.relation == Relation::GreaterEqual) v = r.rhs - lhs;
            else v = std::abs(lhs - r.rhs);
            worst = std::max(worst, std::max(0.0, v) / mag);
        }
        return worst;
    }

    void setup() {
        n_ = model_.variables();
        m_ = model_.constraints();
        A_ = Matrix::Zero(m_, n_);
        b_.resize(m_);
        for (int i = 0; i < m_; ++i) {
            const LpRow& r = model_.rows[static_cast<std::size_t>(i)];
            for (const LpTerm& t : r.terms) A_(i, t.var) += t.coef;
            b_[i] = r.rhs;
        }
        lo_.assign(model_.lower.begin(), model_.lower.end());
        hi_.assign(model_.upper.begin(), model_.upper.end());
        for (int i = 0; i < m_; ++i) {
            switch (model_.rows[static_cast<std::size_t>(i)].relation) {
                case Relation::LessEqual: lo_.push_back(0.0), hi_.push_back(kInf); break;
                case Relation::GreaterEqual: lo_.push_back(-kInf), hi_.push_back(0.0); break;
                case Relation::Equal: lo_.push_back(0.0), hi_.push_back(0.0); break;
            }
        }
        // Nonbasic starting values.
        xn_.assign(static_cast<std::size_t>(n_ + m_), 0.0);
        for (int j = 0; j < n_; ++j) {
            const auto u = static_cast<std::size_t>(j);
            xn_[u] = std::isfinite(lo_[u]) ? lo_[u] : (std::isfinite(hi_[u]) ? hi_[u] : 0.0);
        }
        Vector xs = Vector::Map(xn_.data(), n_);
        const Vector resid = b_ - A_ * xs;

        basis_.assign(static_cast<std::size_t>(m_), -1);
        art_row_.clear();
        art_sign_.clear();
        n_art_ = 0;
        for (int i = 0; i < m_; ++i) {
            const int slack = n_ + i;
            const double r = resid[i];
            if (r >= lo_[static_cast<std::size_t>(slack)] && r <= hi_[static_cast<std::size_t>(slack)]) {
                basis_[static_cast<std::size_t>(i)] = slack;
            } else {
                art_row_.push_back(i);
                art_sign_.push_back(r >= 0.0 ? 1.0 : -1.0);
                ++n_art_;
            }
        }
        ncols_ = n_ + m_ + n_art_;
        for (int a = 0; a < n_art_; ++a) {
            lo_.push_back(0.0);
            hi_.push_back(kInf);
            xn_.push_back(0.0);
            basis_[static_cast<std::size_t>(art_row_[static_cast<std::size_t>(a)])] = n_ + m_ + a;
        }
        pos_.assign(static_cast<std::size_t>(ncols_), -1);
        for (int i = 0; i < m_; ++i) pos_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])] = i;
        for (int i = 0; i < m_; ++i) {
            const int bv = basis_[static_cast<std::size_t>(i)];
            if (bv < n_ + m_) xn_[static_cast<std::size_t>(bv)] = 0.0;
        }
        Binv_ = Matrix::Identity(m_, m_);
        for (int a = 0; a < n_art_; ++a) {
            const int row = art_row_[static_cast<std::size_t>(a)];
            Binv_(row, row) = art_sign_[static_cast<std::size_t>(a)];
        }
        xb_.resize(m_);
        recompute_basic_values();
        since_refactor_ = 0;
    }

    [[nodiscard]] bool is_basic(int j) const { return pos_[static_cast<std::size_t>(j)] >= 0; }
    [[nodiscard]] double value(int j) const {
        const int p = pos_[static_cast<std::size_t>(j)];
        return p >= 0 ? xb_[p] : xn_[static_cast<std::size_t>(j)];
    }

    /// Column j of [A | I | artificials] as a dense vector.
    [[nodiscard]] Vector column(int j) const {
        if (j < n_) return A_.col(j);
        Vector e = Vector::Zero(m_);
        if (j < n_ + m_) {
            e[j - n_] = 1.0;
        } else {
            const auto a = static_cast<std::size_t>(j - n_ - m_);
            e[art_row_[a]] = art_sign_[a];
        }
        return e;
    }

    /// B^{-1} * column j without materializing unit columns.
    [[nodiscard]] Vector ftran(int j) const {
        if (j < n_) return Binv_ * A_.col(j);
        if (j < n_ + m_) return Binv_.col(j - n_);
        const auto a = static_cast<std::size_t>(j - n_ - m_);
        return art_sign_[a] * Binv_.col(art_row_[a]);
    }

    void recompute_basic_values() {
        // x_B = B^{-1} (b - N x_N)
        Vector rhs = b_;
        for (int j = 0; j < ncols_; ++j) {
            if (is_basic(j)) continue;
            const double v = xn_[static_cast<std::size_t>(j)];
            if (v == 0.0) continue;
            if (j < n_) rhs -= v * A_.col(j);
            else if (j < n_ + m_) rhs[j - n_] -= v;
            else {
                const auto a = static_cast<std::size_t>(j - n_ - m_);
                rhs[art_row_[a]] -= v * art_sign_[a];
            }
        }
        xb_ = Binv_ * rhs;
    }

    bool refactor() {
        if (m_ == 0) return true;
        Matrix B(m_, m_);
        for (int i = 0; i < m_; ++i) B.col(i) = column(basis_[static_cast<std::size_t>(i)]);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
        Matrix inv = lu.inverse();
        if (!inv.allFinite()) return false;
        Binv_ = std::move(inv);
        recompute_basic_values();
        since_refactor_ = 0;
        return true;
    }

    LpStatus iterate(const std::vector<double>& c, int& iterations) {
        const int limit = opt_.max_iterations > 0 ? opt_.max_iterations : 50 * (m_ + ncols_) + 1000;
        int degenerate = 0;
        bool bland = false;
        Vector cb(m_);
        for (;;) {
            if (iterations >= limit) return LpStatus::NumericalFailure;
            if (since_refactor_ >= opt_.refactor_interval && !refactor()) return LpStatus::NumericalFailure;

            for (int i = 0; i < m_; ++i) cb[i] = c[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])];
            const Vector y = Binv_.transpose() * cb;
            const Vector dstruct = -(A_.transpose() * y);

            // Pricing.
            int enter = -1;
            double best = 0.0;
            int dir = 0;
            for (int j = 0; j < ncols_; ++j) {
                if (is_basic(j)) continue;
                const auto u = static_cast<std::size_t>(j);
                if (lo_[u] == hi_[u]) continue;
                double d = c[u];
                if (j < n_) d += dstruct[j];
                else if (j < n_ + m_) d -= y[j - n_];
                else {
                    const auto a = static_cast<std::size_t>(j - n_ - m_);
                    d -= art_sign_[a] * y[art_row_[a]];
                }
                const double x = xn_[u];
                int jd = 0;
                if (d < -opt_.optimality_tol && x < hi_[u]) jd = 1;
                else if (d > opt_.optimality_tol && x > lo_[u]) jd = -1;
                if (jd == 0) continue;
                if (bland) {
                    enter = j;
                    dir = jd;
                    break;
                }
                if (std::abs(d) > best) {
                    best = std::abs(d);
                    enter = j;
                    dir = jd;
                }
            }
            if (enter < 0) return LpStatus::Optimal;

            const Vector alpha = ftran(enter);
            const auto ue = static_cast<std::size_t>(enter);
            const double flip = (std::isfinite(lo_[ue]) && std::isfinite(hi_[ue])) ? hi_[ue] - lo_[ue] : kInf;

            // Ratio test (Harris two-pass; plain min-ratio with smallest-index ties under Bland).
            int leave = -1;
            double step = kInf;
            if (bland) {
                double rmin = kInf;
                for (int i = 0; i < m_; ++i) rmin = std::min(rmin, ratio(i, dir * alpha[i], 0.0));
                if (rmin < kInf) {
                    int leave_var = -1;
                    for (int i = 0; i < m_; ++i) {
                        const double r = ratio(i, dir * alpha[i], 0.0);
                        const int var = basis_[static_cast<std::size_t>(i)];
                        if (r <= rmin + 1e-12 && (leave_var < 0 || var < leave_var)) {
                            leave = i;
                            leave_var = var;
                            step = r;
                        }
                    }
                }
            } else {
                double tmax = kInf;
                for (int i = 0; i < m_; ++i) tmax = std::min(tmax, ratio(i, dir * alpha[i], opt_.feasibility_tol));
                if (tmax < kInf) {
                    double best_piv = 0.0;
                    for (int i = 0; i < m_; ++i) {
                        const double delta = dir * alpha[i];
                        const double r = ratio(i, delta, 0.0);
                        if (r <= tmax && std::abs(delta) > best_piv) {
                            best_piv = std::abs(delta);
                            leave = i;
                            step = r;
                        }
                    }
                }
            }

            if (leave < 0 && flip == kInf) return LpStatus::Unbounded;
            ++iterations;
            ++since_refactor_;
            if (flip <= step) {
                // Entering variable runs into its opposite bound; no basis change.
                xn_[ue] = dir > 0 ? hi_[ue] : lo_[ue];
                xb_ -= (dir * flip) * alpha;
                degenerate = 0;
                bland = false;
                continue;
            }
            if (leave < 0) return LpStatus::Unbounded;

            if (step <= 1e-12) {
                if (++degenerate > opt_.stall_threshold) bland = true;
            } else {
                degenerate = 0;
                bland = false;
            }

            const double t = dir * step;
            const double entering_value = xn_[ue] + t;
            xb_ -= t * alpha;
            const int out = basis_[static_cast<std::size_t>(leave)];
            const auto uo = static_cast<std::size_t>(out);
            const double delta = dir * alpha[leave];
            xn_[uo] = delta > 0 ? lo_[uo] : hi_[uo];

            // Update B^{-1}: eliminate column `enter` on pivot row `leave`.
            const double piv = alpha[leave];
            Binv_.row(leave) /= piv;
            for (int i = 0; i < m_; ++i) {
                if (i == leave || alpha[i] == 0.0) continue;
                Binv_.row(i) -= alpha[i] * Binv_.row(leave);
            }
            basis_[static_cast<std::size_t>(leave)] = enter;
            pos_[uo] = -1;
            pos_[ue] = leave;
            xb_[leave] = entering_value;
        }
    }

    /// Step length at which basic variable of row i hits a bound when it
    /// changes by -delta per unit step; `slack` relaxes the bound.
    [[nodiscard]] double ratio(int i, double delta, double slack) const {
        const auto bv = static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)]);
        if (delta > opt_.pivot_tol) {
            if (lo_[bv] == -kInf) return kInf;
            return std::max(0.0, (xb_[i] - lo_[bv] + slack) / delta);
        }
        if (delta < -opt_.pivot_tol) {
            if (hi_[bv] == kInf) return kInf;
            return std::max(0.0, (hi_[bv] - xb_[i] + slack) / -delta);
        }
        return kInf;
    }

    const LpModel& model_;
    LpOptions opt_;
    int n_ = 0, m_ = 0, n_art_ = 0, ncols_ = 0;
    Matrix A_;
    Vector b_;
    std::vector<double> lo_, hi_;
    std::vector<double> xn_;   // values of nonbasic columns (basic entries unused)
    std::vector<int> basis_;   // row -> column
    std::vector<int> pos_;     // column -> row or -1
    std::vector<int> art_row_;
    std::vector<double> art_sign_;
    Matrix Binv_;
    Vector xb_;
    int since_refactor_ = 0;
};

}  // namespace detail

/// Solves `model` to a vertex optimum. Deterministic for identical input:
/// Dantzig pricing with a Bland fallback after a run of degenerate pivots.
inline LpSolution solve_lp(const LpModel& model, const LpOptions& options = {}) {
    detail::SimplexSolver solver(model, options);
    return solver.solve();
}

/// CPLEX-LP text rendering, for debugging.
inline std::string to_lp_format(const LpModel& m) {
    std::ostringstream os;
    os << std::setprecision(17);
    auto term = [&](double c, const std::string& name, bool first) {
        if (c < 0) os << (first ? "- " : " - ") << -c << ' ' << name;
        else os << (first ? "" : " + ") << c << ' ' << name;
    };
    os << (m.sense == Sense::Minimize ? "Minimize\n obj: " : "Maximize\n obj: ");
    bool first = true;
    for (int j = 0; j < m.variables(); ++j) {
        if (m.cost[static_cast<std::size_t>(j)] == 0.0) continue;
        term(m.cost[static_cast<std::size_t>(j)], m.names[static_cast<std::size_t>(j)], first);
        first = false;
    }
    if (first) os << "0 " << (m.variables() ? m.names[0] : "x");
    os << "\nSubject To\n";
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
        os << " c" << r << ": ";
        first = true;
        for (const LpTerm& t : m.rows[r].terms) {
            term(t.coef, m.names[static_cast<std::size_t>(t.var)], first);
            first = false;
        }
        if (first) os << "0 " << (m.variables() ? m.names[0] : "x");
        switch (m.rows[r].relation) {
            case Relation::LessEqual: os << " <= "; break;
            case Relation::GreaterEqual: os << " >= "; break;
            case Relation::Equal: os << " = "; break;
        }
        os << m.rows[r].rhs << '\n';
    }
    os << "Bounds\n";
    for (int j = 0; j < m.variables(); ++j) {
        const auto u = static_cast<std::size_t>(j);
        const double lo = m.lower[u], hi = m.upper[u];
        if (lo == -kInf && hi == kInf) os << ' ' << m.names[u] << " free\n";
        else if (lo == hi) os << ' ' << m.names[u] << " = " << lo << '\n';
        else {
            os << ' ' << (lo == -kInf ? std::string("-inf") : format_double(lo)) << " <= " << m.names[u]
               << " <= " << (hi == kInf ? std::string("+inf") : format_double(hi)) << '\n';
        }
    }
    os << "End\n";
    return os.str();
}

}  // namespace reluopt
