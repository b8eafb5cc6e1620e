#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace reluopt {

enum class ActivationType { ReLU, ClippedReLU, Identity };

/// Elementwise activation. `clip` is meaningful only for ClippedReLU.
struct Activation {
    ActivationType type = ActivationType::ReLU;
    double clip = 0.0;

    static Activation relu() { return {ActivationType::ReLU, 0.0}; }
    static Activation identity() { return {ActivationType::Identity, 0.0}; }
    static Activation clipped(double m) {
        if (!(m > 0.0) || !std::isfinite(m)) throw InvalidInput("clipped ReLU requires a finite clip M > 0");
        return {ActivationType::ClippedReLU, m};
    }

    [[nodiscard]] double operator()(double t) const {
        switch (type) {
            case ActivationType::ReLU: return t > 0.0 ? t : 0.0;
            case ActivationType::ClippedReLU: return std::max(0.0, std::min(clip, t));
            case ActivationType::Identity: return t;
        }
        return t;
    }

    [[nodiscard]] bool is_hidden_kind() const { return type != ActivationType::Identity; }
    bool operator==(const Activation&) const = default;
};

inline std::string to_string(ActivationType t) {
    switch (t) {
        case ActivationType::ReLU: return "relu";
        case ActivationType::ClippedReLU: return "clipped_relu";
        case ActivationType::Identity: return "identity";
    }
    return "?";
}

struct Layer {
    Matrix weights;  // n_out x n_in
    Vector bias;     // n_out
    Activation activation;

    [[nodiscard]] Eigen::Index inputs() const { return weights.cols(); }
    [[nodiscard]] Eigen::Index outputs() const { return weights.rows(); }
    bool operator==(const Layer& o) const {
        return activation == o.activation && weights.rows() == o.weights.rows() &&
               weights.cols() == o.weights.cols() && weights == o.weights && bias == o.bias;
    }
};

/// Identifies one neuron: layer index (0-based, so layer 0 is the first
/// hidden layer) and position within the layer.
struct NeuronId {
    int layer = 0;
    int index = 0;
    auto operator<=>(const NeuronId&) const = default;
};

/// Immutable feed-forward network h: R^{n_x} -> R^{n_J} together with the
/// input box every downstream procedure operates on.
class Network {
public:
    Network() = default;

    Network(std::vector<Layer> layers, Box input_box)
        : layers_(std::move(layers)), box_(std::move(input_box)) {
        validate();
    }

    [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
    [[nodiscard]] const Layer& layer(std::size_t k) const { return layers_.at(k); }
    [[nodiscard]] const Box& input_box() const { return box_; }
    [[nodiscard]] std::size_t depth() const { return layers_.size(); }
    [[nodiscard]] std::size_t hidden_layers() const { return layers_.empty() ? 0 : layers_.size() - 1; }
    [[nodiscard]] Eigen::Index input_dim() const { return box_.dim(); }
    [[nodiscard]] Eigen::Index output_dim() const { return layers_.back().outputs(); }

    /// Activation shared by all hidden layers (Identity if there are none).
    [[nodiscard]] Activation hidden_activation() const {
        return layers_.size() > 1 ? layers_.front().activation : Activation::identity();
    }

    [[nodiscard]] int hidden_neuron_count() const {
        int n = 0;
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k) n += static_cast<int>(layers_[k].outputs());
        return n;
    }

    /// Hidden neurons that feed nothing downstream (all-zero outgoing column).
    [[nodiscard]] std::vector<NeuronId> dead_neurons() const {
        std::vector<NeuronId> dead;
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
            const Matrix& next = layers_[k + 1].weights;
            for (Eigen::Index i = 0; i < layers_[k].outputs(); ++i)
                if ((next.col(i).array() == 0.0).all())
                    dead.push_back({static_cast<int>(k), static_cast<int>(i)});
        }
        return dead;
    }

    bool operator==(const Network& o) const {
        return layers_ == o.layers_ && box_.lo == o.box_.lo && box_.hi == o.box_.hi;
    }

private:
    void validate() const {
        if (layers_.empty()) throw InvalidInput("network needs at least one layer");
        if (box_.dim() == 0) throw InvalidInput("network input box is empty");
        for (Eigen::Index i = 0; i < box_.dim(); ++i)
            if (!(box_.lo[i] < box_.hi[i]))
                throw InvalidInput("input bound " + std::to_string(i) + ": lo must be < hi");
        Eigen::Index width = box_.dim();
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const Layer& l = layers_[k];
            const std::string where = "layer " + std::to_string(k);
            if (l.inputs() != width)
                throw InvalidInput(where + ": weight columns " + std::to_string(l.inputs()) +
                                   " != previous width " + std::to_string(width));
            if (l.bias.size() != l.outputs())
                throw InvalidInput(where + ": bias length " + std::to_string(l.bias.size()) +
                                   " != weight rows " + std::to_string(l.outputs()));
            if (l.outputs() == 0) throw InvalidInput(where + ": zero width");
            if (!l.weights.allFinite() || !l.bias.allFinite()) throw InvalidInput(where + ": non-finite entry");
            const bool last = k + 1 == layers_.size();
            if (last && l.activation.type != ActivationType::Identity)
                throw InvalidInput(where + ": final layer must be identity");
            if (!last && l.activation.type == ActivationType::Identity)
                throw InvalidInput(where + ": hidden layers must be relu or clipped_relu");
            if (!last && !(l.activation == layers_.front().activation))
                throw InvalidInput(where + ": hidden activations must be uniform");
            if (l.activation.type == ActivationType::ClippedReLU && !(l.activation.clip > 0.0))
                throw InvalidInput(where + ": clip must be > 0");
            width = l.outputs();
        }
    }

    std::vector<Layer> layers_;
    Box box_;
};

/// Pre-activations of every layer plus the network output.
struct Trace {
    std::vector<Vector> pre;  // pre[k] = W_k x_{k-1} + b_k
    Vector output;
};

inline Trace forward_trace(const Network& net, const Vector& x) {
    if (x.size() != net.input_dim())
        throw InvalidInput("forward: input has " + std::to_string(x.size()) + " entries, network expects " +
                           std::to_string(net.input_dim()));
    Trace t;
    t.pre.reserve(net.depth());
    Vector a = x;
    for (const Layer& l : net.layers()) {
        Vector z = l.weights * a + l.bias;
        a = z.unaryExpr([&](double v) { return l.activation(v); });
        t.pre.push_back(std::move(z));
    }
    t.output = std::move(a);
    return t;
}

inline Vector forward(const Network& net, const Vector& x) { return forward_trace(net, x).output; }

/// Per-neuron positive factors, one vector per hidden layer.
class ScalingFactors {
public:
    ScalingFactors() = default;
    explicit ScalingFactors(std::vector<Vector> factors) : c_(std::move(factors)) {
        for (std::size_t k = 0; k < c_.size(); ++k)
            for (Eigen::Index i = 0; i < c_[k].size(); ++i)
                if (!(c_[k][i] > 0.0) || !std::isfinite(c_[k][i]))
                    throw InvalidInput("scaling factor (" + std::to_string(k) + "," + std::to_string(i) +
                                       ") must be positive and finite");
    }

    static ScalingFactors ones(const Network& net) {
        std::vector<Vector> c;
        for (std::size_t k = 0; k + 1 < net.depth(); ++k) c.push_back(Vector::Ones(net.layer(k).outputs()));
        return ScalingFactors(std::move(c));
    }

    [[nodiscard]] const std::vector<Vector>& layers() const { return c_; }
    [[nodiscard]] const Vector& layer(std::size_t k) const { return c_.at(k); }

private:
    std::vector<Vector> c_;
};

/// Rescales neuron i of hidden layer k by c_k[i] (rows of W_k and b_k) and
/// compensates with 1/c_k[i] on column i of W_{k+1}. The network function is
/// unchanged by positive homogeneity of ReLU.
inline Network apply_scaling(const Network& net, const ScalingFactors& c) {
    for (std::size_t k = 0; k + 1 < net.depth(); ++k)
        if (net.layer(k).activation.type != ActivationType::ReLU)
            throw UnsupportedActivation("scaling is only defined for plain ReLU hidden layers");
    if (c.layers().size() != net.hidden_layers())
        throw InvalidInput("scaling factors cover " + std::to_string(c.layers().size()) + " layers, network has " +
                           std::to_string(net.hidden_layers()) + " hidden layers");
    std::vector<Layer> layers = net.layers();
    for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
        const Vector& ck = c.layer(k);
        if (ck.size() != layers[k].outputs())
            throw InvalidInput("scaling factors for layer " + std::to_string(k) + " have wrong length");
        layers[k].weights = ck.asDiagonal() * layers[k].weights;
        layers[k].bias = layers[k].bias.cwiseProduct(ck);
        layers[k + 1].weights = layers[k + 1].weights * ck.cwiseInverse().asDiagonal();
    }
    return Network(std::move(layers), net.input_box());
}

// ---------------------------------------------------------------------------
// JSON file format
//
// {"input_bounds": [[lo,hi],...],
//  "layers": [{"weights": [[...],...], "bias": [...],
//              "activation": "relu"|"clipped_relu"|"identity", "clip": M}]}
//
// Numbers are written with 17 significant digits so save/load is exact.

namespace detail {

inline void write_vector(std::ostream& os, const Vector& v) {
    os << '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << format_double(v[i]);
    os << ']';
}

inline double read_number(const nlohmann::json& j, const std::string& where) {
    if (!j.is_number()) throw ParseError(where + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ParseError(where + ": non-finite value");
    return v;
}

}  // namespace detail

inline std::string to_json_string(const Network& net) {
    std::ostringstream os;
    os << "{\n  \"input_bounds\": [";
    for (Eigen::Index i = 0; i < net.input_dim(); ++i)
        os << (i ? ", " : "") << '[' << format_double(net.input_box().lo[i]) << ", "
           << format_double(net.input_box().hi[i]) << ']';
    os << "],\n  \"layers\": [";
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& l = net.layer(k);
        os << (k ? ",\n" : "\n") << "    {\"activation\": \"" << to_string(l.activation.type) << '"';
        if (l.activation.type == ActivationType::ClippedReLU) os << ", \"clip\": " << format_double(l.activation.clip);
        os << ",\n     \"bias\": ";
        detail::write_vector(os, l.bias);
        os << ",\n     \"weights\": [";
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
            os << (r ? ", " : "");
            detail::write_vector(os, l.weights.row(r).transpose());
        }
        os << "]}";
    }
    os << "\n  ]\n}\n";
    return os.str();
}

inline Network network_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("network: top level must be an object");
    if (!j.contains("input_bounds") || !j["input_bounds"].is_array())
        throw ParseError("network: missing input_bounds array");
    if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
        throw ParseError("network: missing or empty layers array");

    const auto& jb = j["input_bounds"];
    Vector lo(static_cast<Eigen::Index>(jb.size())), hi(static_cast<Eigen::Index>(jb.size()));
    for (std::size_t i = 0; i < jb.size(); ++i) {
        const std::string where = "input_bounds[" + std::to_string(i) + "]";
        if (!jb[i].is_array() || jb[i].size() != 2) throw ParseError(where + ": expected [lo, hi]");
        lo[static_cast<Eigen::Index>(i)] = detail::read_number(jb[i][0], where);
        hi[static_cast<Eigen::Index>(i)] = detail::read_number(jb[i][1], where);
        if (!(lo[static_cast<Eigen::Index>(i)] < hi[static_cast<Eigen::Index>(i)]))
            throw ParseError(where + ": lo must be < hi");
    }

    std::vector<Layer> layers;
    const auto& jl = j["layers"];
    for (std::size_t k = 0; k < jl.size(); ++k) {
        const std::string where = "layers[" + std::to_string(k) + "]";
        const auto& L = jl[k];
        if (!L.is_object()) throw ParseError(where + ": expected an object");
        if (!L.contains("weights") || !L["weights"].is_array()) throw ParseError(where + ": missing weights");
        if (!L.contains("bias") || !L["bias"].is_array()) throw ParseError(where + ": missing bias");
        if (!L.contains("activation") || !L["activation"].is_string()) throw ParseError(where + ": missing activation");

        Layer layer;
        const std::string act = L["activation"].get<std::string>();
        if (act == "relu") {
            layer.activation = Activation::relu();
        } else if (act == "identity") {
            layer.activation = Activation::identity();
        } else if (act == "clipped_relu") {
            if (!L.contains("clip")) throw ParseError(where + ": clipped_relu requires clip");
            const double m = detail::read_number(L["clip"], where + ".clip");
            if (!(m > 0.0)) throw ParseError(where + ".clip: must be > 0");
            layer.activation = Activation::clipped(m);
        } else {
            throw ParseError(where + ": unknown activation '" + act + "'");
        }
        if (act != "clipped_relu" && L.contains("clip")) throw ParseError(where + ": clip given for " + act);

        const auto& W = L["weights"];
        const auto rows = static_cast<Eigen::Index>(W.size());
        if (rows == 0) throw ParseError(where + ".weights: empty");
        const auto cols = static_cast<Eigen::Index>(W[0].is_array() ? W[0].size() : 0);
        layer.weights.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const auto& row = W[static_cast<std::size_t>(r)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
                throw ParseError(where + ".weights[" + std::to_string(r) + "]: ragged row");
            for (Eigen::Index c = 0; c < cols; ++c)
                layer.weights(r, c) = detail::read_number(row[static_cast<std::size_t>(c)],
                                                          where + ".weights[" + std::to_string(r) + "]");
        }
        const auto& b = L["bias"];
        if (static_cast<Eigen::Index>(b.size()) != rows)
            throw ParseError(where + ".bias: length " + std::to_string(b.size()) + " != " + std::to_string(rows) +
                             " weight rows");
        layer.bias.resize(rows);
        for (Eigen::Index r = 0; r < rows; ++r)
            layer.bias[r] = detail::read_number(b[static_cast<std::size_t>(r)], where + ".bias");
        layers.push_back(std::move(layer));
    }
    try {
        return Network(std::move(layers), Box(lo, hi));
    } catch (const InvalidInput& e) {
        throw ParseError(std::string("network: ") + e.what());
    }
}

inline Network parse_network(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("network: malformed JSON: ") + e.what());
    }
    return network_from_json(j);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << contents;
    if (!out) throw Error("write failed: " + path);
}

inline Network load_network(const std::string& path) { return parse_network(read_file(path)); }
inline void save_network(const Network& net, const std::string& path) { write_file(path, to_json_string(net)); }

}  // namespace reluopt
