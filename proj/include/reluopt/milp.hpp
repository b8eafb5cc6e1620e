#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "bounds.hpp"
#include "lp.hpp"
#include "network.hpp"

namespace reluopt {

/// LP variables owned by one hidden neuron. z2 is used only by clipped
/// neurons whose output can saturate.
struct NeuronVars {
    int post = -1;
    int z1 = -1;
    int z2 = -1;
    NeuronStatus status = NeuronStatus::Unstable;
};

/// Big-M encoding of a network. The LP holds the relaxation (binaries in
/// [0, 1]); `binaries` lists the integral variables in branching order
/// (layer, then neuron, then z1 before z2).
struct MilpModel {
    LpModel lp;
    std::vector<int> inputs;
    std::vector<std::vector<NeuronVars>> hidden;
    std::vector<int> outputs;  // empty when only a prefix of the network is encoded
    std::vector<int> binaries;
    BoundsSet bounds;

    /// Pre-activation of neuron `i` of layer `k` as (terms, constant);
    /// valid for any layer whose predecessor is encoded.
    [[nodiscard]] std::pair<std::vector<LpTerm>, double> pre_activation(const Network& net, std::size_t k,
                                                                        Eigen::Index i) const {
        const Layer& layer = net.layer(k);
        std::vector<LpTerm> terms;
        terms.reserve(static_cast<std::size_t>(layer.inputs()));
        for (Eigen::Index j = 0; j < layer.inputs(); ++j) {
            const double w = layer.weights(i, j);
            if (w == 0.0) continue;
            const int var = k == 0 ? inputs[static_cast<std::size_t>(j)]
                                   : hidden[k - 1][static_cast<std::size_t>(j)].post;
            terms.push_back({var, w});
        }
        return {std::move(terms), layer.bias[i]};
    }
};

namespace detail {

inline std::vector<LpTerm> with_term(std::vector<LpTerm> terms, double scale, int var, double coef) {
    for (auto& t : terms) t.coef *= scale;
    terms.push_back({var, coef});
    return terms;
}

inline void check_encodable(const Network& net, const BoundsSet& bounds) {
    check_bounds_shape(net, bounds);
}

/// Encodes the input box and the first `n_hidden` hidden layers.
inline MilpModel encode_prefix(const Network& net, const BoundsSet& bounds, const Box& box, std::size_t n_hidden) {
    if (box.dim() != net.input_dim()) throw InvalidInput("encode: box dimension mismatch");
    MilpModel m;
    m.bounds = bounds;
    for (Eigen::Index j = 0; j < box.dim(); ++j)
        m.inputs.push_back(m.lp.add_variable(box.lo[j], box.hi[j], 0.0, "x0_" + std::to_string(j)));

    for (std::size_t k = 0; k < n_hidden; ++k) {
        const Layer& layer = net.layer(k);
        const Activation act = layer.activation;
        std::vector<NeuronVars> vars(static_cast<std::size_t>(layer.outputs()));
        m.hidden.emplace_back();
        for (Eigen::Index i = 0; i < layer.outputs(); ++i) {
            const double L = bounds.lower[k][i], U = bounds.upper[k][i];
            const std::string tag = std::to_string(k + 1) + "_" + std::to_string(i);
            NeuronVars& v = vars[static_cast<std::size_t>(i)];
            v.status = classify(L, U);
            auto [pre, b] = m.pre_activation(net, k, i);

            if (act.type == ActivationType::ReLU) {
                if (v.status == NeuronStatus::StablyInactive) {
                    v.post = m.lp.add_variable(0.0, 0.0, 0.0, "x" + tag);
                } else if (v.status == NeuronStatus::StablyActive) {
                    v.post = m.lp.add_variable(L, U, 0.0, "x" + tag);
                    m.lp.add_row(with_term(pre, -1.0, v.post, 1.0), Relation::Equal, b);
                } else {
                    v.post = m.lp.add_variable(0.0, U, 0.0, "x" + tag);
                    v.z1 = m.lp.add_variable(0.0, 1.0, 0.0, "z" + tag);
                    m.binaries.push_back(v.z1);
                    // x >= Wx + b
                    m.lp.add_row(with_term(pre, -1.0, v.post, 1.0), Relation::GreaterEqual, b);
                    // x <= Wx + b - L (1 - z)
                    auto row = with_term(pre, -1.0, v.post, 1.0);
                    row.push_back({v.z1, -L});
                    m.lp.add_row(std::move(row), Relation::LessEqual, b - L);
                    // x <= U z
                    m.lp.add_row({{v.post, 1.0}, {v.z1, -U}}, Relation::LessEqual, 0.0);
                }
            } else {
                const double M = act.clip;
                if (U < 0.0) {
                    v.status = NeuronStatus::StablyInactive;
                    v.post = m.lp.add_variable(0.0, 0.0, 0.0, "x" + tag);
                } else if (L >= M) {
                    v.post = m.lp.add_variable(M, M, 0.0, "x" + tag);
                } else if (L > 0.0 && U <= M) {
                    v.post = m.lp.add_variable(L, U, 0.0, "x" + tag);
                    m.lp.add_row(with_term(pre, -1.0, v.post, 1.0), Relation::Equal, b);
                } else {
                    v.post = m.lp.add_variable(0.0, std::min(M, U), 0.0, "x" + tag);
                    v.z1 = m.lp.add_variable(0.0, 1.0, 0.0, "z1_" + tag);
                    v.z2 = m.lp.add_variable(0.0, 1.0, 0.0, "z2_" + tag);
                    m.binaries.push_back(v.z1);
                    m.binaries.push_back(v.z2);
                    m.lp.add_row({{v.post, 1.0}, {v.z1, -M}}, Relation::LessEqual, 0.0);
                    m.lp.add_row({{v.post, 1.0}, {v.z1, -U}}, Relation::LessEqual, 0.0);
                    auto upper = with_term(pre, -1.0, v.post, 1.0);
                    upper.push_back({v.z1, -L});
                    m.lp.add_row(std::move(upper), Relation::LessEqual, b - L);
                    m.lp.add_row({{v.post, 1.0}, {v.z2, -M}}, Relation::GreaterEqual, 0.0);
                    auto lower = with_term(pre, -1.0, v.post, 1.0);
                    lower.push_back({v.z2, U - M});
                    m.lp.add_row(std::move(lower), Relation::GreaterEqual, b);
                    m.lp.add_row({{v.z1, 1.0}, {v.z2, -1.0}}, Relation::GreaterEqual, 0.0);
                }
            }
            m.hidden.back().push_back(v);
        }
    }
    return m;
}

}  // namespace detail

/// Full big-M encoding over an explicit input box (used for shifted boxes).
inline MilpModel encode(const Network& net, const BoundsSet& bounds, const Box& box) {
    for (std::size_t k = 0; k + 1 < net.depth(); ++k)
        if (!net.layer(k).activation.is_hidden_kind())
            throw UnsupportedActivation("encode: hidden layers must be relu or clipped_relu");
    detail::check_encodable(net, bounds);
    MilpModel m = detail::encode_prefix(net, bounds, box, net.hidden_layers());
    const std::size_t last = net.depth() - 1;
    for (Eigen::Index i = 0; i < net.output_dim(); ++i) {
        auto [pre, b] = m.pre_activation(net, last, i);
        const int y = m.lp.add_variable(-kInf, kInf, 0.0, "y_" + std::to_string(i));
        m.lp.add_row(detail::with_term(pre, -1.0, y, 1.0), Relation::Equal, b);
        m.outputs.push_back(y);
    }
    return m;
}

inline MilpModel encode(const Network& net, const BoundsSet& bounds) { return encode(net, bounds, net.input_box()); }

/// Full variable assignment induced by evaluating the network at `x`:
/// inputs, post-activations, binaries set to the active arm, outputs.
inline Vector assignment_at(const Network& net, const MilpModel& m, const Vector& x) {
    const Trace t = forward_trace(net, x);
    Vector v = Vector::Zero(m.lp.variables());
    for (std::size_t j = 0; j < m.inputs.size(); ++j) v[m.inputs[j]] = x[static_cast<Eigen::Index>(j)];
    for (std::size_t k = 0; k < m.hidden.size(); ++k) {
        const Activation act = net.layer(k).activation;
        for (std::size_t i = 0; i < m.hidden[k].size(); ++i) {
            const NeuronVars& nv = m.hidden[k][i];
            const double pre = t.pre[k][static_cast<Eigen::Index>(i)];
            v[nv.post] = act(pre);
            if (nv.z1 >= 0) v[nv.z1] = pre > 0.0 ? 1.0 : 0.0;
            if (nv.z2 >= 0) v[nv.z2] = pre >= act.clip ? 1.0 : 0.0;
        }
    }
    for (std::size_t i = 0; i < m.outputs.size(); ++i) v[m.outputs[i]] = t.output[static_cast<Eigen::Index>(i)];
    return v;
}

/// Largest absolute violation of rows and variable bounds by `v`.
inline double max_violation(const LpModel& lp, const Vector& v) {
    double worst = 0.0;
    for (int j = 0; j < lp.variables(); ++j) {
        const auto u = static_cast<std::size_t>(j);
        worst = std::max({worst, lp.lower[u] - v[j], v[j] - lp.upper[u]});
    }
    for (const LpRow& r : lp.rows) {
        double lhs = 0.0;
        for (const LpTerm& t : r.terms) lhs += t.coef * v[t.var];
        if (r.relation != Relation::GreaterEqual) worst = std::max(worst, lhs - r.rhs);
        if (r.relation != Relation::LessEqual) worst = std::max(worst, r.rhs - lhs);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Optimization-based bound tightening

struct ObbtOptions {
    double time_budget = kInf;  // seconds
    int passes = 1;
    LpOptions lp;
};

struct ObbtReport {
    BoundsSet bounds;
    int lp_count = 0;
    int newly_stable = 0;
    double lp_seconds = 0.0;
    bool completed = true;
    std::vector<std::string> warnings;
};

/// Tightens every hidden neuron's pre-activation interval by minimizing and
/// maximizing it over the LP relaxation of the encoding of all earlier
/// layers. Layers are swept input to output, neurons in index order; each
/// result is installed before the next layer is encoded and is intersected
/// with the incoming interval, so bounds never loosen.
inline ObbtReport obbt(const Network& net, const BoundsSet& start, const ObbtOptions& opt = {}) {
    for (std::size_t k = 0; k + 1 < net.depth(); ++k)
        if (!net.layer(k).activation.is_hidden_kind())
            throw UnsupportedActivation("obbt: hidden layers must be relu or clipped_relu");
    detail::check_encodable(net, start);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

    ObbtReport rep;
    rep.bounds = start;
    rep.bounds.provenance = (start.provenance == Provenance::ScaledIA || start.provenance == Provenance::ScaledOBBT)
                                ? Provenance::ScaledOBBT
                                : Provenance::OBBT;
    const StabilityReport before = classify(start);

    for (int pass = 0; pass < std::max(1, opt.passes) && rep.completed; ++pass) {
        for (std::size_t k = 0; k < net.hidden_layers() && rep.completed; ++k) {
            MilpModel m = detail::encode_prefix(net, rep.bounds, net.input_box(), k);
            for (Eigen::Index i = 0; i < net.layer(k).outputs(); ++i) {
                if (elapsed() > opt.time_budget) {
                    rep.completed = false;
                    rep.warnings.push_back("time budget exhausted at layer " + std::to_string(k));
                    break;
                }
                auto [terms, b] = m.pre_activation(net, k, i);
                m.lp.clear_objective();
                for (const LpTerm& t : terms) m.lp.cost[static_cast<std::size_t>(t.var)] += t.coef;
                double& L = rep.bounds.lower[k][i];
                double& U = rep.bounds.upper[k][i];
                for (Sense sense : {Sense::Minimize, Sense::Maximize}) {
                    m.lp.sense = sense;
                    const LpSolution s = solve_lp(m.lp, opt.lp);
                    ++rep.lp_count;
                    if (s.status != LpStatus::Optimal) {
                        rep.warnings.push_back("neuron (" + std::to_string(k) + "," + std::to_string(i) +
                                               ") " + (sense == Sense::Minimize ? "min" : "max") + " LP: " +
                                               to_string(s.status) + "; bound kept");
                        continue;
                    }
                    const double value = s.objective + b;
                    const double margin = 1e-9 * (1.0 + std::abs(value));
                    if (sense == Sense::Minimize) L = std::max(L, value - margin);
                    else U = std::min(U, value + margin);
                }
                if (L > U) {
                    // Numerical crossover on a (near-)constant neuron.
                    const double mid = 0.5 * (L + U);
                    L = U = mid;
                }
            }
        }
    }
    rep.lp_seconds = elapsed();
    const StabilityReport after = classify(rep.bounds);
    rep.newly_stable = (after.active + after.inactive) - (before.active + before.inactive);
    return rep;
}

inline nlohmann::json to_json(const ObbtReport& r) {
    return {{"bounds", to_json(r.bounds)},
            {"lp_count", r.lp_count},
            {"newly_stable", r.newly_stable},
            {"lp_seconds", r.lp_seconds},
            {"completed", r.completed},
            {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------
// Branch and bound

enum class BnbStatus { Optimal, TimeLimit, Infeasible };

inline std::string to_string(BnbStatus s) {
    switch (s) {
        case BnbStatus::Optimal: return "optimal";
        case BnbStatus::TimeLimit: return "time_limit";
        case BnbStatus::Infeasible: return "infeasible";
    }
    return "?";
}

struct BnbTraceRow {
    int node;
    int depth;
    double bound;
    double incumbent;
};

struct BnbResult {
    BnbStatus status = BnbStatus::Infeasible;
    Vector x;  // network input of the incumbent
    double objective = kInf;
    double best_bound = -kInf;
    double gap = kInf;
    int nodes = 0;
    double seconds = 0.0;
    int lp_failures = 0;
    std::vector<BnbTraceRow> trace;
};

struct BnbOptions {
    double time_limit = 300.0;  // seconds, checked between node solves
    int node_limit = 0;         // 0: unlimited; unlike time_limit, reproducible
    double gap_tolerance = 1e-6;
    int heuristic_interval = 16;
    bool record_trace = false;
    LpOptions lp;
};

/// Gap definition shared by solver and reports.
inline double relative_gap(double incumbent, double bound) {
    if (!std::isfinite(incumbent) || !std::isfinite(bound)) return kInf;
    return std::max(0.0, incumbent - bound) / std::max(1.0, std::abs(incumbent));
}

namespace detail {

/// Minimizes w . h(x) over `box` with best-bound branch and bound on the
/// big-M encoding.
inline BnbResult minimize_linear_output(const Network& net, const BoundsSet& bounds, const Box& box, const Vector& w,
                                        const BnbOptions& opt) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

    MilpModel m = encode(net, bounds, box);
    m.lp.clear_objective();
    m.lp.sense = Sense::Minimize;
    for (std::size_t i = 0; i < m.outputs.size(); ++i) m.lp.cost[static_cast<std::size_t>(m.outputs[i])] = w[static_cast<Eigen::Index>(i)];

    const std::size_t nb = m.binaries.size();
    std::vector<double> base_lo(nb), base_hi(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        base_lo[b] = m.lp.lower[static_cast<std::size_t>(m.binaries[b])];
        base_hi[b] = m.lp.upper[static_cast<std::size_t>(m.binaries[b])];
    }

    struct Node {
        double bound;
        int id;
        int depth;
        std::vector<std::int8_t> fix;  // -1 free, 0 / 1 fixed
    };
    auto worse = [](const Node& a, const Node& b) { return a.bound > b.bound || (a.bound == b.bound && a.id > b.id); };
    std::priority_queue<Node, std::vector<Node>, decltype(worse)> open(worse);

    BnbResult res;
    auto objective_at = [&](const Vector& x) { return w.dot(forward(net, x)); };
    auto offer = [&](const Vector& x) {
        const double v = objective_at(x);
        if (v < res.objective) {
            res.objective = v;
            res.x = x;
        }
    };
    auto input_of = [&](const LpSolution& s) {
        Vector x(static_cast<Eigen::Index>(m.inputs.size()));
        for (std::size_t j = 0; j < m.inputs.size(); ++j)
            x[static_cast<Eigen::Index>(j)] = std::clamp(s.x[m.inputs[j]], box.lo[static_cast<Eigen::Index>(j)],
                                                         box.hi[static_cast<Eigen::Index>(j)]);
        return x;
    };
    auto apply_fix = [&](const std::vector<std::int8_t>& fix) {
        for (std::size_t b = 0; b < nb; ++b) {
            const auto var = static_cast<std::size_t>(m.binaries[b]);
            m.lp.lower[var] = fix[b] < 0 ? base_lo[b] : fix[b];
            m.lp.upper[var] = fix[b] < 0 ? base_hi[b] : fix[b];
        }
    };
    // Activation-pattern heuristic: fix every binary to the arm taken at x
    // and optimize exactly within that linear region.
    auto region_heuristic = [&](const Vector& x) {
        const Vector a = assignment_at(net, m, x);
        std::vector<std::int8_t> fix(nb);
        for (std::size_t b = 0; b < nb; ++b) fix[b] = a[m.binaries[b]] > 0.5 ? 1 : 0;
        apply_fix(fix);
        const LpSolution s = solve_lp(m.lp, opt.lp);
        if (s.status == LpStatus::Optimal) offer(input_of(s));
    };

    open.push({-kInf, 0, 0, std::vector<std::int8_t>(nb, -1)});
    int next_id = 1;
    bool hit_limit = false;
    while (!open.empty()) {
        const double best_open = open.top().bound;
        if (std::isfinite(res.objective) && relative_gap(res.objective, best_open) <= opt.gap_tolerance) break;
        if (elapsed() > opt.time_limit || (opt.node_limit > 0 && res.nodes >= opt.node_limit)) {
            hit_limit = true;
            break;
        }
        Node node = open.top();
        open.pop();
        if (std::isfinite(res.objective) && node.bound >= res.objective) continue;

        apply_fix(node.fix);
        const LpSolution s = solve_lp(m.lp, opt.lp);
        ++res.nodes;
        double node_bound = node.bound;
        int branch = -1;
        if (s.status == LpStatus::Infeasible) {
            continue;
        } else if (s.status == LpStatus::Optimal) {
            node_bound = std::max(node.bound, s.objective);
            const Vector x = input_of(s);
            offer(x);
            double most = 1e-6;
            for (std::size_t b = 0; b < nb; ++b) {
                if (node.fix[b] >= 0) continue;
                const double z = s.x[m.binaries[b]];
                const double frac = std::min(z, 1.0 - z);
                if (frac > most) {
                    most = frac;
                    branch = static_cast<int>(b);
                }
            }
            if (node.id == 0 || (opt.heuristic_interval > 0 && res.nodes % opt.heuristic_interval == 0))
                region_heuristic(x);
        } else {
            // Unreliable relaxation: keep the parent bound and branch on the first free binary.
            ++res.lp_failures;
            for (std::size_t b = 0; b < nb && branch < 0; ++b)
                if (node.fix[b] < 0) branch = static_cast<int>(b);
        }
        if (opt.record_trace) res.trace.push_back({node.id, node.depth, node_bound, res.objective});
        if (branch < 0) continue;  // integral (or fully fixed) relaxation: node fathomed
        if (std::isfinite(res.objective) && node_bound >= res.objective - opt.gap_tolerance * 1e-3 * std::max(1.0, std::abs(res.objective)))
            continue;
        for (std::int8_t v : {std::int8_t{0}, std::int8_t{1}}) {
            Node child{node_bound, next_id++, node.depth + 1, node.fix};
            child.fix[static_cast<std::size_t>(branch)] = v;
            open.push(std::move(child));
        }
    }

    res.seconds = elapsed();
    if (!std::isfinite(res.objective)) {
        res.status = hit_limit ? BnbStatus::TimeLimit : BnbStatus::Infeasible;
        return res;
    }
    res.best_bound = open.empty() ? res.objective : std::min(res.objective, open.top().bound);
    res.gap = relative_gap(res.objective, res.best_bound);
    res.status = hit_limit && res.gap > opt.gap_tolerance ? BnbStatus::TimeLimit : BnbStatus::Optimal;
    return res;
}

}  // namespace detail

/// Global minimum of the (single, or first) network output over the input box.
inline BnbResult solve_min(const Network& net, const BoundsSet& bounds, const BnbOptions& opt = {}) {
    Vector w = Vector::Zero(net.output_dim());
    w[0] = 1.0;
    return detail::minimize_linear_output(net, bounds, net.input_box(), w, opt);
}

/// Maximizes h(x0 + e)_k - h(x0 + e)_i over |e|_inf <= delta (intersected
/// with the input box). A negative optimum certifies robustness at x0.
/// The returned objective and best_bound are in maximization terms.
inline BnbResult solve_adversarial(const Network& net, const Vector& x0, double delta, int k, int i,
                                   const BnbOptions& opt = {}) {
    const auto n_out = static_cast<int>(net.output_dim());
    if (k == i) throw InvalidInput("adversarial: target label k must differ from true label i");
    if (k < 0 || i < 0 || k >= n_out || i >= n_out) throw InvalidInput("adversarial: label out of range");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw InvalidInput("adversarial: delta must be finite and >= 0");
    if (x0.size() != net.input_dim()) throw InvalidInput("adversarial: x0 dimension mismatch");
    Vector lo = (x0.array() - delta).max(net.input_box().lo.array());
    Vector hi = (x0.array() + delta).min(net.input_box().hi.array());
    for (Eigen::Index j = 0; j < lo.size(); ++j)
        if (lo[j] > hi[j]) throw InvalidInput("adversarial: perturbation box misses the input domain");
    const Box box(lo, hi);
    Vector w = Vector::Zero(n_out);
    w[i] = 1.0;
    w[k] = -1.0;
    BnbResult r = detail::minimize_linear_output(net, ia_bounds(net, box), box, w, opt);
    r.objective = -r.objective;
    r.best_bound = -r.best_bound;
    for (auto& row : r.trace) {
        row.bound = -row.bound;
        row.incumbent = -row.incumbent;
    }
    return r;
}

inline nlohmann::json to_json(const BnbResult& r) {
    nlohmann::json j;
    j["status"] = to_string(r.status);
    j["x"] = std::vector<double>(r.x.data(), r.x.data() + r.x.size());
    j["objective"] = std::isfinite(r.objective) ? nlohmann::json(r.objective) : nlohmann::json(nullptr);
    j["best_bound"] = std::isfinite(r.best_bound) ? nlohmann::json(r.best_bound) : nlohmann::json(nullptr);
    j["gap"] = std::isfinite(r.gap) ? nlohmann::json(r.gap) : nlohmann::json(nullptr);
    j["nodes"] = r.nodes;
    j["seconds"] = r.seconds;
    j["lp_failures"] = r.lp_failures;
    return j;
}

inline std::string trace_csv(const BnbResult& r) {
    std::ostringstream os;
    os << "node,depth,bound,incumbent\n";
    for (const auto& t : r.trace)
        os << t.node << ',' << t.depth << ',' << format_double(t.bound) << ',' << format_double(t.incumbent) << '\n';
    return os.str();
}

}  // namespace reluopt
