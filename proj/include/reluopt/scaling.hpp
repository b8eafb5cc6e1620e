#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "network.hpp"

namespace reluopt {

/// exp(log_mag + c[plus] - c[minus]); -1 marks an absent side.
struct ScalingTerm {
    double log_mag;
    int plus;
    int minus;
};

struct ScalingProblem {
    std::vector<ScalingTerm> terms;
    std::vector<Eigen::Index> layer_sizes;  // hidden layers
    std::vector<int> layer_offset;
    std::vector<bool> fixed;  // dead neurons, pinned at 0
    double clamp = 20.0;

    [[nodiscard]] int variables() const { return static_cast<int>(fixed.size()); }

    [[nodiscard]] double objective(const Vector& c) const {
        double f = 0.0;
        for (const auto& t : terms) f += std::exp(exponent(t, c));
        return f;
    }

    [[nodiscard]] Vector gradient(const Vector& c) const {
        Vector g = Vector::Zero(variables());
        for (const auto& t : terms) {
            const double e = std::exp(exponent(t, c));
            if (t.plus >= 0) g[t.plus] += e;
            if (t.minus >= 0) g[t.minus] -= e;
        }
        for (int v = 0; v < variables(); ++v)
            if (fixed[static_cast<std::size_t>(v)]) g[v] = 0.0;
        return g;
    }

    /// Diagonal of the Hessian: each variable's share of every term it touches.
    [[nodiscard]] Vector curvature(const Vector& c) const {
        Vector h = Vector::Zero(variables());
        for (const auto& t : terms) {
            const double e = std::exp(exponent(t, c));
            if (t.plus >= 0) h[t.plus] += e;
            if (t.minus >= 0) h[t.minus] += e;
        }
        for (int v = 0; v < variables(); ++v) h[v] = std::max(h[v], 1e-300);
        return h;
    }

    /// f(b) - f(a) summed termwise with expm1, accurate when the change is
    /// far below the rounding error of f itself.
    [[nodiscard]] double change(const Vector& a, const Vector& b) const {
        double d = 0.0;
        for (const auto& t : terms) {
            const double delta = (t.plus >= 0 ? b[t.plus] - a[t.plus] : 0.0) - (t.minus >= 0 ? b[t.minus] - a[t.minus] : 0.0);
            d += std::exp(exponent(t, a)) * std::expm1(delta);
        }
        return d;
    }

    static double exponent(const ScalingTerm& t, const Vector& c) {
        return t.log_mag + (t.plus >= 0 ? c[t.plus] : 0.0) - (t.minus >= 0 ? c[t.minus] : 0.0);
    }
};

inline void require_relu_hidden(const Network& net, const char* who) {
    for (std::size_t k = 0; k < net.hidden_layers(); ++k)
        if (net.layer(k).activation.type != ActivationType::ReLU)
            throw UnsupportedActivation(std::string(who) + ": equivalent scaling needs relu hidden layers");
}

/// Log-domain terms of the l1 norm of weights and hidden biases under scaling.
inline ScalingProblem build_problem(const Network& net) {
    require_relu_hidden(net, "build_problem");
    ScalingProblem p;
    int offset = 0;
    for (std::size_t k = 0; k < net.hidden_layers(); ++k) {
        p.layer_offset.push_back(offset);
        p.layer_sizes.push_back(net.layer(k).outputs());
        offset += static_cast<int>(net.layer(k).outputs());
    }
    p.fixed.assign(static_cast<std::size_t>(offset), false);
    for (const NeuronId& n : net.dead_neurons())
        p.fixed[static_cast<std::size_t>(p.layer_offset[static_cast<std::size_t>(n.layer)] + n.index)] = true;

    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& layer = net.layer(k);
        const bool hidden = k < net.hidden_layers();
        for (Eigen::Index i = 0; i < layer.outputs(); ++i) {
            const int plus = hidden ? p.layer_offset[k] + static_cast<int>(i) : -1;
            for (Eigen::Index j = 0; j < layer.inputs(); ++j) {
                const double w = layer.weights(i, j);
                if (w == 0.0) continue;
                const int minus = k > 0 ? p.layer_offset[k - 1] + static_cast<int>(j) : -1;
                p.terms.push_back({std::log(std::abs(w)), plus, minus});
            }
            if (hidden && layer.bias[i] != 0.0) p.terms.push_back({std::log(std::abs(layer.bias[i])), plus, -1});
        }
    }
    return p;
}

struct ScalingSolution {
    ScalingFactors factors;
    double objective_before = 0.0;  // l1 norm of all weights and biases
    double objective_after = 0.0;
    double grad_norm = 0.0;         // projected, infinity norm
    int iterations = 0;
    int clamped = 0;                // variables resting on the clamp
    bool converged = false;
    std::vector<double> history;    // log-domain objective per accepted iterate
};

struct ScalingOptions {
    double tol = 1e-8;
    int max_iterations = 200000;
};

inline double l1_norm(const Network& net) {
    double s = 0.0;
    for (const Layer& l : net.layers()) s += l.weights.cwiseAbs().sum() + l.bias.cwiseAbs().sum();
    return s;
}

namespace detail {

inline ScalingFactors factors_from_log(const ScalingProblem& p, const Vector& c) {
    std::vector<Vector> layers;
    for (std::size_t k = 0; k < p.layer_sizes.size(); ++k)
        layers.push_back(c.segment(p.layer_offset[k], p.layer_sizes[k]).array().exp().matrix());
    return ScalingFactors(std::move(layers));
}

}  // namespace detail

/// Projected gradient descent on the box |c| <= clamp with Armijo
/// backtracking. The gradient is scaled by the Hessian diagonal (each
/// variable's own curvature), which keeps the iteration count low when term
/// magnitudes span many orders, as they do after l1-regularized training.
inline ScalingSolution solve_scaling(const ScalingProblem& p, const ScalingOptions& opt = {}) {
    const int n = p.variables();
    Vector c = Vector::Zero(n);
    ScalingSolution sol;
    auto project = [&](Vector& x) {
        for (int v = 0; v < n; ++v) x[v] = p.fixed[static_cast<std::size_t>(v)] ? 0.0 : std::clamp(x[v], -p.clamp, p.clamp);
    };
    auto projected_norm = [&](const Vector& x, const Vector& g) {
        double m = 0.0;
        for (int v = 0; v < n; ++v) {
            if ((x[v] >= p.clamp && g[v] < 0.0) || (x[v] <= -p.clamp && g[v] > 0.0)) continue;
            m = std::max(m, std::abs(g[v]));
        }
        return m;
    };

    double f = p.objective(c);
    Vector g = p.gradient(c);
    sol.history.push_back(f);
    for (; sol.iterations < opt.max_iterations; ++sol.iterations) {
        sol.grad_norm = projected_norm(c, g);
        if (sol.grad_norm <= opt.tol) {
            sol.converged = true;
            break;
        }
        const Vector d = -g.cwiseQuotient(p.curvature(c));
        double step = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            Vector trial = c + step * d;
            project(trial);
            const double df = p.change(c, trial);
            if (std::isfinite(df) && df <= 0.0 && df <= -1e-4 * g.dot(c - trial)) {
                c = trial;
                f += df;
                g = p.gradient(c);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no decrease representable
        sol.history.push_back(f);
    }
    sol.grad_norm = projected_norm(c, g);
    sol.converged = sol.converged || sol.grad_norm <= opt.tol;
    for (int v = 0; v < n; ++v) sol.clamped += std::abs(c[v]) >= p.clamp;
    sol.factors = detail::factors_from_log(p, c);
    return sol;
}

struct ScaleResult {
    Network network;
    ScalingSolution solution;
    double probe_deviation = 0.0;
};

inline constexpr double kProbeTolerance = 1e-6;

/// Optimal equivalent scaling; refuses to return a network that fails the
/// 32-point equivalence probe.
inline ScaleResult scale_network(const Network& net, const ScalingOptions& opt = {}) {
    require_relu_hidden(net, "scale_network");
    const ScalingProblem p = build_problem(net);
    ScalingSolution sol = solve_scaling(p, opt);
    // Converged at the start: keep the network bit-for-bit.
    if (sol.iterations == 0) sol.factors = ScalingFactors::ones(net);
    Network scaled = net.hidden_layers() ? apply_scaling(net, sol.factors) : net;
    sol.objective_before = l1_norm(net);
    sol.objective_after = l1_norm(scaled);

    Rng rng(0x5ca1eULL);
    const Box& box = net.input_box();
    double worst = 0.0;
    Vector worst_x = box.center();
    for (int s = 0; s < 32; ++s) {
        Vector x(box.dim());
        if (s == 0) x = box.center();
        else
            for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = rng.uniform(box.lo[j], box.hi[j]);
        const Vector y = forward(net, x), ys = forward(scaled, x);
        for (Eigen::Index o = 0; o < y.size(); ++o) {
            const double d = std::abs(ys[o] - y[o]) / std::max(1.0, std::abs(y[o]));
            if (d > worst) {
                worst = d;
                worst_x = x;
            }
        }
    }
    if (worst > kProbeTolerance) {
        std::ostringstream os;
        os << "scale_network: scaled network deviates by " << worst << " at (";
        for (Eigen::Index j = 0; j < worst_x.size(); ++j) os << (j ? ", " : "") << format_double(worst_x[j]);
        os << ")";
        throw VerificationFailure(os.str());
    }
    return {std::move(scaled), std::move(sol), worst};
}

inline nlohmann::json to_json(const ScalingSolution& s) {
    nlohmann::json factors = nlohmann::json::array();
    for (const Vector& v : s.factors.layers()) factors.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    return {{"objective_before", s.objective_before},
            {"objective_after", s.objective_after},
            {"grad_norm", s.grad_norm},
            {"iterations", s.iterations},
            {"clamped", s.clamped},
            {"converged", s.converged},
            {"factors", factors}};
}

}  // namespace reluopt
