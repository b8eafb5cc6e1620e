#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "network.hpp"

namespace reluopt {

class DegenerateRegion : public Error {
public:
    using Error::Error;
};

/// One bit per hidden neuron, layer-major; 1 = active arm.
using Pattern = std::vector<std::uint8_t>;

inline std::string pattern_hex(const Pattern& p) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (std::size_t i = 0; i < p.size(); i += 4) {
        int nibble = 0;
        for (std::size_t b = 0; b < 4; ++b) nibble = (nibble << 1) | (i + b < p.size() ? p[i + b] : 0);
        s.push_back(digits[nibble]);
    }
    return s;
}

inline int hamming(const Pattern& a, const Pattern& b) {
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

/// Affine functionals in input space: neuron pre-activations per hidden
/// layer (gradient rows, offsets) and the output map.
struct Linearization {
    std::vector<Matrix> grad;
    std::vector<Vector> offset;
    Matrix out_grad;
    Vector out_offset;
};

namespace detail {

inline void require_relu(const Network& net, const char* who) {
    for (std::size_t k = 0; k < net.hidden_layers(); ++k)
        if (net.layer(k).activation.type != ActivationType::ReLU)
            throw UnsupportedActivation(std::string(who) + ": only relu hidden layers are supported");
}

inline bool zero_gradient(const Matrix& g, Eigen::Index i) { return g.row(i).cwiseAbs().maxCoeff() <= 1e-14; }

/// Linearization with the pattern taken from `bit(k, i, value_grad_row, offset)`.
template <class BitFn>
Linearization propagate(const Network& net, BitFn&& bit) {
    const Eigen::Index d = net.input_dim();
    Linearization lin;
    Matrix G = Matrix::Identity(d, d);
    Vector g = Vector::Zero(d);
    for (std::size_t k = 0; k < net.depth(); ++k) {
        const Layer& layer = net.layer(k);
        Matrix NG = layer.weights * G;
        Vector ng = layer.weights * g + layer.bias;
        if (k + 1 == net.depth()) {
            lin.out_grad = NG;
            lin.out_offset = ng;
            break;
        }
        lin.grad.push_back(NG);
        lin.offset.push_back(ng);
        for (Eigen::Index i = 0; i < NG.rows(); ++i) {
            if (!bit(k, i, NG, ng[i])) {
                NG.row(i).setZero();
                ng[i] = 0.0;
            }
        }
        G = std::move(NG);
        g = std::move(ng);
    }
    return lin;
}

}  // namespace detail

/// Affine functionals of every neuron and of the output for a fixed pattern.
inline Linearization linearize_at(const Network& net, const Pattern& pattern) {
    detail::require_relu(net, "linearize_at");
    if (static_cast<int>(pattern.size()) != net.hidden_neuron_count())
        throw InvalidInput("linearize_at: pattern length does not match hidden neuron count");
    std::size_t flat = 0;
    return detail::propagate(net, [&](std::size_t, Eigen::Index, const Matrix&, double) { return pattern[flat++] != 0; });
}

/// Canonical pattern at x: sign of the pre-activation, except that neurons
/// whose input-space gradient vanishes take the sign of their constant offset.
inline Pattern pattern_at(const Network& net, const Vector& x) {
    Pattern p;
    p.reserve(static_cast<std::size_t>(net.hidden_neuron_count()));
    detail::propagate(net, [&](std::size_t, Eigen::Index i, const Matrix& G, double off) {
        const bool on = detail::zero_gradient(G, i) ? off > 0.0 : G.row(i).dot(x) + off > 0.0;
        p.push_back(on ? 1 : 0);
        return on;
    });
    return p;
}

struct Facet {
    int neuron;  // flat hidden index
    Pattern neighbor;
    bool known = false;
};

struct LinearRegion {
    Pattern pattern;
    std::vector<std::array<double, 2>> vertices;  // counterclockwise, first vertex not repeated
    std::vector<int> edge_labels;                 // edge i -> i+1: neuron index, or -1 for the box
    Matrix out_grad;                              // outputs x 2
    Vector out_offset;
    std::vector<Facet> facets;
    double area = 0.0;
    std::array<double, 2> seed{};

    [[nodiscard]] std::array<double, 2> centroid() const {
        double cx = 0.0, cy = 0.0, a = 0.0;
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = vertices[i];
            const auto& q = vertices[(i + 1) % n];
            const double cr = p[0] * q[1] - q[0] * p[1];
            a += cr;
            cx += (p[0] + q[0]) * cr;
            cy += (p[1] + q[1]) * cr;
        }
        return {cx / (3.0 * a), cy / (3.0 * a)};
    }
};

namespace detail {

struct LabeledPolygon {
    std::vector<std::array<double, 2>> v;
    std::vector<int> label;
};

inline double polygon_area(const std::vector<std::array<double, 2>>& v) {
    double a = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& p = v[i];
        const auto& q = v[(i + 1) % v.size()];
        a += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * a;
}

/// Sutherland-Hodgman step keeping a x + c >= 0; new edges get `label`.
inline LabeledPolygon clip(const LabeledPolygon& poly, double ax, double ay, double c, int label) {
    LabeledPolygon out;
    const std::size_t n = poly.v.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& P = poly.v[i];
        const auto& Q = poly.v[(i + 1) % n];
        const double vp = ax * P[0] + ay * P[1] + c;
        const double vq = ax * Q[0] + ay * Q[1] + c;
        const bool pin = vp >= 0.0, qin = vq >= 0.0;
        auto cut = [&] {
            const double t = vp / (vp - vq);
            return std::array<double, 2>{P[0] + t * (Q[0] - P[0]), P[1] + t * (Q[1] - P[1])};
        };
        if (pin) {
            out.v.push_back(P);
            out.label.push_back(poly.label[i]);
            if (!qin) {
                out.v.push_back(cut());
                out.label.push_back(label);
            }
        } else if (qin) {
            out.v.push_back(cut());
            out.label.push_back(poly.label[i]);
        }
    }
    return out;
}

inline void drop_short_edges(LabeledPolygon& poly, double eps) {
    bool changed = true;
    while (changed && poly.v.size() > 2) {
        changed = false;
        for (std::size_t i = 0; i < poly.v.size(); ++i) {
            const auto& p = poly.v[i];
            const auto& q = poly.v[(i + 1) % poly.v.size()];
            if (std::hypot(q[0] - p[0], q[1] - p[1]) <= eps) {
                poly.v.erase(poly.v.begin() + static_cast<std::ptrdiff_t>(i));
                poly.label.erase(poly.label.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                break;
            }
        }
    }
}

}  // namespace detail

inline constexpr double kAreaEps = 1e-12;

/// Linear region containing `seed`. Throws DegenerateRegion when the region
/// has (numerically) empty interior.
inline LinearRegion region_of(const Network& net, const Box& box, const Vector& seed_in) {
    detail::require_relu(net, "region_of");
    if (net.input_dim() != 2 || box.dim() != 2) throw InvalidInput("regions: 2-D inputs only");
    const double diam = box.diameter();
    Vector seed = seed_in;
    Rng jitter(0x5eedULL);
    for (int attempt = 0;; ++attempt) {
        bool on_line = false;
        detail::propagate(net, [&](std::size_t, Eigen::Index i, const Matrix& G, double off) {
            const double gn = G.row(i).norm();
            const double v = G.row(i).dot(seed) + off;
            if (gn > 1e-14 && std::abs(v) <= 1e-12 * diam * gn) on_line = true;
            return detail::zero_gradient(G, i) ? off > 0.0 : v > 0.0;
        });
        if (!on_line) break;
        if (attempt == 10) throw DegenerateRegion("region_of: seed stays on a switching line after 10 jitters");
        for (Eigen::Index j = 0; j < 2; ++j)
            seed[j] = std::clamp(seed[j] + 1e-9 * diam * (2.0 * jitter.uniform() - 1.0), box.lo[j], box.hi[j]);
    }

    LinearRegion r;
    detail::LabeledPolygon poly;
    poly.v = {{box.lo[0], box.lo[1]}, {box.hi[0], box.lo[1]}, {box.hi[0], box.hi[1]}, {box.lo[0], box.hi[1]}};
    poly.label = {-1, -1, -1, -1};
    int flat = 0;
    const Linearization lin = detail::propagate(net, [&](std::size_t, Eigen::Index i, const Matrix& G, double off) {
        const int id = flat++;
        if (detail::zero_gradient(G, i)) {
            r.pattern.push_back(off > 0.0);
            return off > 0.0;
        }
        const bool on = G.row(i).dot(seed) + off > 0.0;
        r.pattern.push_back(on);
        const double s = (on ? 1.0 : -1.0) / G.row(i).norm();
        if (poly.v.size() >= 3) poly = detail::clip(poly, s * G(i, 0), s * G(i, 1), s * off, id);
        return on;
    });
    detail::drop_short_edges(poly, 1e-12 * diam);
    r.vertices = std::move(poly.v);
    r.edge_labels = std::move(poly.label);
    r.area = r.vertices.size() >= 3 ? detail::polygon_area(r.vertices) : 0.0;
    if (r.area <= kAreaEps * box.volume())
        throw DegenerateRegion("region_of: region around (" + format_double(seed[0]) + ", " + format_double(seed[1]) +
                               ") has empty interior");
    r.out_grad = lin.out_grad;
    r.out_offset = lin.out_offset;
    r.seed = {seed[0], seed[1]};
    for (int lbl : r.edge_labels) {
        if (lbl < 0) continue;
        Pattern nb = r.pattern;
        nb[static_cast<std::size_t>(lbl)] ^= 1;
        r.facets.push_back({lbl, std::move(nb), false});
    }
    return r;
}

inline LinearRegion region_of(const Network& net, const Vector& seed) { return region_of(net, net.input_box(), seed); }

struct RegionAtlas {
    Box box;
    std::vector<LinearRegion> regions;  // sorted by pattern
    double total_area = 0.0;
    bool complete = true;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t region_count() const { return regions.size(); }
};

struct EnumerateOptions {
    std::size_t max_regions = 200000;
    int max_neurons = 250;
};

/// Breadth-first traversal of the region adjacency graph from the box centre.
inline RegionAtlas enumerate(const Network& net, const Box& box, const EnumerateOptions& opt = {}) {
    detail::require_relu(net, "enumerate");
    if (net.hidden_neuron_count() > opt.max_neurons)
        throw InvalidInput("enumerate: " + std::to_string(net.hidden_neuron_count()) + " hidden neurons exceed the cap of " +
                           std::to_string(opt.max_neurons));
    RegionAtlas atlas{box, {}, 0.0, true, {}};
    const double diam = box.diameter();
    auto inside = [&](const Vector& p) {
        Vector q = p;
        for (Eigen::Index j = 0; j < 2; ++j) q[j] = std::clamp(q[j], box.lo[j], box.hi[j]);
        return q;
    };

    std::set<Pattern> seen;
    std::deque<Vector> frontier;
    const Vector c = box.center();
    seen.insert(pattern_at(net, c));
    frontier.push_back(c);
    while (!frontier.empty()) {
        if (atlas.regions.size() >= opt.max_regions) {
            atlas.complete = false;
            atlas.warnings.push_back("region budget of " + std::to_string(opt.max_regions) + " exhausted");
            break;
        }
        const Vector seed = frontier.front();
        frontier.pop_front();
        LinearRegion r;
        try {
            r = region_of(net, box, seed);
        } catch (const DegenerateRegion& e) {
            atlas.warnings.push_back(e.what());
            continue;
        }
        for (std::size_t e = 0; e < r.vertices.size(); ++e) {
            const int lbl = r.edge_labels[e];
            if (lbl < 0) continue;
            const auto& p = r.vertices[e];
            const auto& q = r.vertices[(e + 1) % r.vertices.size()];
            const double len = std::hypot(q[0] - p[0], q[1] - p[1]);
            Vector mid(2), normal(2);
            mid << 0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]);
            normal << (q[1] - p[1]) / len, -(q[0] - p[0]) / len;  // outward for a ccw polygon
            Pattern predicted = r.pattern;
            predicted[static_cast<std::size_t>(lbl)] ^= 1;
            double step = 1e-6 * diam;
            Vector next = inside(mid + step * normal);
            Pattern landed = pattern_at(net, next);
            for (int b = 0; b < 20 && hamming(landed, r.pattern) > 1; ++b) {
                step *= 0.5;
                next = inside(mid + step * normal);
                landed = pattern_at(net, next);
            }
            if (landed == r.pattern) continue;  // facet on the box boundary or a collinear duplicate
            if (landed != predicted)
                atlas.warnings.push_back("simultaneous switch across neuron " + std::to_string(lbl) + " from " +
                                         pattern_hex(r.pattern) + " to " + pattern_hex(landed));
            for (Facet& f : r.facets)
                if (f.neuron == lbl) f.neighbor = landed;
            if (seen.insert(landed).second) frontier.push_back(next);
        }
        atlas.regions.push_back(std::move(r));
    }
    if (!frontier.empty()) atlas.complete = false;

    std::sort(atlas.regions.begin(), atlas.regions.end(),
              [](const LinearRegion& a, const LinearRegion& b) { return a.pattern < b.pattern; });
    std::set<Pattern> present;
    for (const auto& r : atlas.regions) {
        present.insert(r.pattern);
        atlas.total_area += r.area;
    }
    for (auto& r : atlas.regions)
        for (auto& f : r.facets) f.known = present.count(f.neighbor) > 0;
    return atlas;
}

inline RegionAtlas enumerate(const Network& net, const EnumerateOptions& opt = {}) {
    return enumerate(net, net.input_box(), opt);
}

struct RegionMin {
    Vector x;
    double value = kInf;
};

/// Minimum of output `k` over a complete atlas: the best polygon vertex of
/// each region's affine map.
inline RegionMin region_oracle_min(const RegionAtlas& atlas, int k = 0) {
    if (!atlas.complete) throw InvalidInput("region_oracle_min: atlas is incomplete");
    RegionMin best;
    for (const auto& r : atlas.regions)
        for (const auto& v : r.vertices) {
            const double val = r.out_grad(k, 0) * v[0] + r.out_grad(k, 1) * v[1] + r.out_offset[k];
            if (val < best.value) {
                best.value = val;
                best.x = Vector(2);
                best.x << v[0], v[1];
            }
        }
    return best;
}

inline nlohmann::json to_json(const RegionAtlas& atlas) {
    nlohmann::json j;
    j["box"] = {{"lo", {atlas.box.lo[0], atlas.box.lo[1]}}, {"hi", {atlas.box.hi[0], atlas.box.hi[1]}}};
    j["complete"] = atlas.complete;
    j["region_count"] = atlas.region_count();
    j["total_area"] = atlas.total_area;
    j["warnings"] = atlas.warnings;
    j["regions"] = nlohmann::json::array();
    for (const auto& r : atlas.regions) {
        nlohmann::json jr;
        jr["pattern"] = pattern_hex(r.pattern);
        jr["area"] = r.area;
        jr["vertices"] = r.vertices;
        jr["gradient"] = nlohmann::json::array();
        for (Eigen::Index o = 0; o < r.out_grad.rows(); ++o) jr["gradient"].push_back({r.out_grad(o, 0), r.out_grad(o, 1)});
        jr["offset"] = std::vector<double>(r.out_offset.data(), r.out_offset.data() + r.out_offset.size());
        jr["facets"] = nlohmann::json::array();
        for (const auto& f : r.facets)
            jr["facets"].push_back({{"neuron", f.neuron}, {"neighbor", pattern_hex(f.neighbor)}, {"known", f.known}});
        j["regions"].push_back(std::move(jr));
    }
    return j;
}

/// Region outlines over a raster heatmap of output 0.
inline std::string render_svg(const RegionAtlas& atlas, const Network& net, int size = 480, int raster = 64) {
    const Box& b = atlas.box;
    const double sx = size / (b.hi[0] - b.lo[0]), sy = size / (b.hi[1] - b.lo[1]);
    auto px = [&](double x) { return format_fixed((x - b.lo[0]) * sx, 3); };
    auto py = [&](double y) { return format_fixed((b.hi[1] - y) * sy, 3); };

    std::vector<double> vals(static_cast<std::size_t>(raster * raster));
    double vmin = kInf, vmax = -kInf;
    for (int r = 0; r < raster; ++r)
        for (int c = 0; c < raster; ++c) {
            Vector x(2);
            x << b.lo[0] + (c + 0.5) * (b.hi[0] - b.lo[0]) / raster, b.hi[1] - (r + 0.5) * (b.hi[1] - b.lo[1]) / raster;
            const double v = forward(net, x)[0];
            vals[static_cast<std::size_t>(r * raster + c)] = v;
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    auto color = [&](double v) {
        const double t = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.5;
        // dark blue -> light yellow
        const int R = static_cast<int>(std::lround(40 + t * 213));
        const int G = static_cast<int>(std::lround(50 + t * 181));
        const int B = static_cast<int>(std::lround(120 + t * (37 - 120)));
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", R, G, B);
        return std::string(buf);
    };

    std::ostringstream os;
    const std::string cell = format_fixed(static_cast<double>(size) / raster, 3);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\" viewBox=\"0 0 "
       << size << ' ' << size << "\">\n<g shape-rendering=\"crispEdges\">\n";
    for (int r = 0; r < raster; ++r)
        for (int c = 0; c < raster; ++c)
            os << "<rect x=\"" << format_fixed(c * static_cast<double>(size) / raster, 3) << "\" y=\""
               << format_fixed(r * static_cast<double>(size) / raster, 3) << "\" width=\"" << cell << "\" height=\""
               << cell << "\" fill=\"" << color(vals[static_cast<std::size_t>(r * raster + c)]) << "\"/>\n";
    os << "</g>\n<g fill=\"none\" stroke=\"#000000\" stroke-width=\"0.6\">\n";
    for (const auto& reg : atlas.regions) {
        os << "<polygon points=\"";
        for (std::size_t i = 0; i < reg.vertices.size(); ++i)
            os << (i ? " " : "") << px(reg.vertices[i][0]) << ',' << py(reg.vertices[i][1]);
        os << "\"/>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

}  // namespace reluopt
