#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "network.hpp"

namespace reluopt {

enum class Provenance { IA, OBBT, ScaledIA, ScaledOBBT };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::IA: return "ia";
        case Provenance::OBBT: return "obbt";
        case Provenance::ScaledIA: return "scaled+ia";
        case Provenance::ScaledOBBT: return "scaled+obbt";
    }
    return "?";
}

inline Provenance parse_provenance(const std::string& s) {
    if (s == "ia") return Provenance::IA;
    if (s == "obbt") return Provenance::OBBT;
    if (s == "scaled+ia") return Provenance::ScaledIA;
    if (s == "scaled+obbt") return Provenance::ScaledOBBT;
    throw ParseError("unknown bounds provenance '" + s + "'");
}

/// Pre-activation interval [lower, upper] for every neuron of every layer,
/// output layer included.
struct BoundsSet {
    std::vector<Vector> lower;
    std::vector<Vector> upper;
    Provenance provenance = Provenance::IA;

    [[nodiscard]] std::size_t layers() const { return lower.size(); }
    [[nodiscard]] double lo(const NeuronId& n) const { return lower[static_cast<std::size_t>(n.layer)][n.index]; }
    [[nodiscard]] double hi(const NeuronId& n) const { return upper[static_cast<std::size_t>(n.layer)][n.index]; }
};

/// Interval image of an activation applied to [l, u].
inline std::pair<double, double> activation_interval(const Activation& a, double l, double u) {
    return {a(l), a(u)};  // all supported activations are monotone
}

/// Interval-arithmetic propagation of `box` through the network.
inline BoundsSet ia_bounds(const Network& net, const Box& box) {
    if (box.dim() != net.input_dim()) throw InvalidInput("ia_bounds: box dimension mismatch");
    BoundsSet b;
    b.provenance = Provenance::IA;
    Vector lo = box.lo, hi = box.hi;
    for (const Layer& layer : net.layers()) {
        const Matrix wpos = layer.weights.cwiseMax(0.0);
        const Matrix wneg = layer.weights.cwiseMin(0.0);
        Vector L = wpos * lo + wneg * hi + layer.bias;
        Vector U = wpos * hi + wneg * lo + layer.bias;
        lo.resize(L.size());
        hi.resize(U.size());
        for (Eigen::Index i = 0; i < L.size(); ++i) {
            auto [pl, pu] = activation_interval(layer.activation, L[i], U[i]);
            lo[i] = pl;
            hi[i] = pu;
        }
        b.lower.push_back(std::move(L));
        b.upper.push_back(std::move(U));
    }
    return b;
}

inline BoundsSet ia_bounds(const Network& net) { return ia_bounds(net, net.input_box()); }

enum class NeuronStatus { StablyActive, StablyInactive, Unstable };

/// Strict sign tests: L == 0 or U == 0 counts as Unstable.
inline NeuronStatus classify(double lower, double upper) {
    if (lower > 0.0) return NeuronStatus::StablyActive;
    if (upper < 0.0) return NeuronStatus::StablyInactive;
    return NeuronStatus::Unstable;
}

struct StabilityReport {
    std::vector<std::vector<NeuronStatus>> status;  // hidden layers only
    int active = 0;
    int inactive = 0;
    int unstable = 0;

    [[nodiscard]] int total() const { return active + inactive + unstable; }
    /// Fraction of stable hidden neurons in [0, 1]; 1 for networks without hidden neurons.
    [[nodiscard]] double stable_fraction() const {
        return total() == 0 ? 1.0 : static_cast<double>(active + inactive) / total();
    }
};

inline StabilityReport classify(const BoundsSet& bounds) {
    StabilityReport r;
    for (std::size_t k = 0; k + 1 < bounds.layers(); ++k) {
        std::vector<NeuronStatus> layer;
        for (Eigen::Index i = 0; i < bounds.lower[k].size(); ++i) {
            const NeuronStatus s = classify(bounds.lower[k][i], bounds.upper[k][i]);
            layer.push_back(s);
            if (s == NeuronStatus::StablyActive) ++r.active;
            else if (s == NeuronStatus::StablyInactive) ++r.inactive;
            else ++r.unstable;
        }
        r.status.push_back(std::move(layer));
    }
    return r;
}

/// Mean of (U - L) over all hidden neurons; falls back to the output layer
/// for networks without hidden layers.
inline double mean_width(const BoundsSet& b) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = 0; k + 1 < b.layers(); ++k) {
        sum += (b.upper[k] - b.lower[k]).sum();
        n += static_cast<int>(b.lower[k].size());
    }
    if (n == 0 && b.layers() > 0) {
        sum = (b.upper.back() - b.lower.back()).sum();
        n = static_cast<int>(b.lower.back().size());
    }
    return n ? sum / n : 0.0;
}

/// Worst-case violation of `bounds` by the pre-activations at `x`
/// (0 when every value lies inside its interval).
inline double bounds_violation(const Network& net, const BoundsSet& bounds, const Vector& x) {
    const Trace t = forward_trace(net, x);
    double worst = 0.0;
    for (std::size_t k = 0; k < t.pre.size(); ++k)
        for (Eigen::Index i = 0; i < t.pre[k].size(); ++i) {
            worst = std::max(worst, bounds.lower[k][i] - t.pre[k][i]);
            worst = std::max(worst, t.pre[k][i] - bounds.upper[k][i]);
        }
    return worst;
}

struct ScaledBoundsRecord {
    double max_hidden_deviation = 0.0;
    double max_output_deviation = 0.0;
    NeuronId worst_hidden;
    NeuronId worst_output;
};

inline constexpr double kScaledBoundsTolerance = 1e-8;

/// Checks that interval bounds commute with equivalent scaling: hidden
/// bounds of the scaled network are c times the original ones and output
/// bounds are unchanged. Deviations are measured relative to max(1, |original|).
inline ScaledBoundsRecord scaled_bounds_relation(const Network& net, const ScalingFactors& c) {
    const Network scaled = apply_scaling(net, c);
    const BoundsSet a = ia_bounds(net);
    const BoundsSet s = ia_bounds(scaled);
    ScaledBoundsRecord rec;
    auto rel = [](double got, double want) { return std::abs(got - want) / std::max(1.0, std::abs(want)); };
    for (std::size_t k = 0; k < a.layers(); ++k) {
        const bool hidden = k + 1 < a.layers();
        for (Eigen::Index i = 0; i < a.lower[k].size(); ++i) {
            const double ck = hidden ? c.layer(k)[i] : 1.0;
            const double d = std::max(rel(s.lower[k][i] / ck, a.lower[k][i]), rel(s.upper[k][i] / ck, a.upper[k][i]));
            const NeuronId id{static_cast<int>(k), static_cast<int>(i)};
            if (hidden && d > rec.max_hidden_deviation) {
                rec.max_hidden_deviation = d;
                rec.worst_hidden = id;
            } else if (!hidden && d > rec.max_output_deviation) {
                rec.max_output_deviation = d;
                rec.worst_output = id;
            }
        }
    }
    if (rec.max_hidden_deviation > kScaledBoundsTolerance || rec.max_output_deviation > kScaledBoundsTolerance) {
        std::ostringstream os;
        os << "scaled IA bounds deviate: hidden " << rec.max_hidden_deviation << " at (" << rec.worst_hidden.layer
           << "," << rec.worst_hidden.index << "), output " << rec.max_output_deviation << " at ("
           << rec.worst_output.layer << "," << rec.worst_output.index << ")";
        throw VerificationFailure(os.str());
    }
    return rec;
}

inline nlohmann::json to_json(const BoundsSet& b) {
    nlohmann::json j;
    j["provenance"] = to_string(b.provenance);
    j["layers"] = nlohmann::json::array();
    for (std::size_t k = 0; k < b.layers(); ++k) {
        std::vector<double> L(b.lower[k].data(), b.lower[k].data() + b.lower[k].size());
        std::vector<double> U(b.upper[k].data(), b.upper[k].data() + b.upper[k].size());
        j["layers"].push_back({{"L", L}, {"U", U}});
    }
    const StabilityReport s = classify(b);
    j["stable"] = {{"active", s.active},
                   {"inactive", s.inactive},
                   {"unstable", s.unstable},
                   {"fraction", s.stable_fraction()}};
    j["mean_width"] = mean_width(b);
    return j;
}

inline BoundsSet bounds_from_json(const nlohmann::json& j) {
    BoundsSet b;
    try {
        b.provenance = parse_provenance(j.at("provenance").get<std::string>());
        for (const auto& layer : j.at("layers")) {
            const auto L = layer.at("L").get<std::vector<double>>();
            const auto U = layer.at("U").get<std::vector<double>>();
            if (L.size() != U.size()) throw ParseError("bounds: L/U length mismatch");
            b.lower.push_back(Eigen::Map<const Vector>(L.data(), static_cast<Eigen::Index>(L.size())));
            b.upper.push_back(Eigen::Map<const Vector>(U.data(), static_cast<Eigen::Index>(U.size())));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bounds: ") + e.what());
    }
    return b;
}

/// Bounds must cover every neuron of `net` with L <= U.
inline void check_bounds_shape(const Network& net, const BoundsSet& b) {
    if (b.layers() != net.depth()) throw InvalidInput("bounds: layer count does not match network");
    for (std::size_t k = 0; k < b.layers(); ++k) {
        if (b.lower[k].size() != net.layer(k).outputs() || b.upper[k].size() != net.layer(k).outputs())
            throw InvalidInput("bounds: layer " + std::to_string(k) + " width does not match network");
        for (Eigen::Index i = 0; i < b.lower[k].size(); ++i)
            if (!(b.lower[k][i] <= b.upper[k][i]))
                throw InvalidInput("bounds: L > U at (" + std::to_string(k) + "," + std::to_string(i) + ")");
    }
}

}  // namespace reluopt
