#pragma once

// Grid-sampling oracles: distinct activation patterns seen on a regular
// grid (a lower bound on the region count, thin regions are missed) and
// the best sampled value of an output functional.

#include <set>
#include <string>
#include <vector>

#include <reluopt/network.hpp>

namespace oracle {

inline std::string trace_signs(const reluopt::Network& net, const reluopt::Vector& x) {
    const reluopt::Trace t = reluopt::forward_trace(net, x);
    std::string s;
    for (std::size_t k = 0; k + 1 < t.pre.size(); ++k)
        for (Eigen::Index i = 0; i < t.pre[k].size(); ++i) s.push_back(t.pre[k][i] > 0.0 ? '1' : '0');
    return s;
}

/// Cell-centred n x n grid over a 2-D box.
inline std::size_t grid_pattern_count(const reluopt::Network& net, const reluopt::Box& box, int n) {
    std::set<std::string> seen;
    reluopt::Vector x(2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            x << box.lo[0] + (i + 0.5) * (box.hi[0] - box.lo[0]) / n, box.lo[1] + (j + 0.5) * (box.hi[1] - box.lo[1]) / n;
            seen.insert(trace_signs(net, x));
        }
    return seen.size();
}

/// Maximum of w . h(x) over an (n+1) x (n+1) vertex grid of a 2-D box.
inline double grid_max(const reluopt::Network& net, const reluopt::Box& box, const reluopt::Vector& w, int n) {
    double best = -std::numeric_limits<double>::infinity();
    reluopt::Vector x(2);
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            x << box.lo[0] + i * (box.hi[0] - box.lo[0]) / n, box.lo[1] + j * (box.hi[1] - box.lo[1]) / n;
            best = std::max(best, w.dot(reluopt::forward(net, x)));
        }
    return best;
}

}  // namespace oracle
