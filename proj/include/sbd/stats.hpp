#pragma once

#include <array>
#include <cmath>

#include "sbd/autodiff.hpp"
#include "sbd/errors.hpp"
#include "sbd/graph.hpp"

namespace sbd {

// Permutation-invariant geometric moments and the Dirichlet spectral
// energy. Each statistic exists twice: a plain evaluation on Tensor for
// constant-side (target) graphs, and a tape composition for prototypes so
// gradients reach the adjacency/feature parameters. The two paths mirror
// each other's arithmetic.

constexpr double kStatsEps = 1e-8;

struct MomentVector {
    double deg_mean = 0.0;
    double deg_std = 0.0;
    double density = 0.0;
    double tri = 0.0;

    double operator[](int m) const {
        switch (m) {
        case 0: return deg_mean;
        case 1: return deg_std;
        case 2: return density;
        default: return tri;
        }
    }
    static constexpr int count = 4;
    static const char* name(int m) {
        constexpr const char* names[] = {"deg_mean", "deg_std", "density", "tri"};
        return names[m];
    }
};

/// Per-moment rescaling weights (gamma).
struct MomentWeights {
    std::array<double, 4> gamma{1.0, 1.0, 1.0, 1.0};
};

namespace stats_detail {
inline void check_adjacency(int rows, int cols, const char* who) {
    if (rows != cols) throw std::invalid_argument(std::string(who) + ": adjacency must be square");
    if (rows < 2)
        throw invalid_input(std::string(who) + ": degenerate graph, need at least 2 nodes");
}

inline double trace_pow3_plain(const Tensor& a) {
    Tensor sq = matmul_plain(a, a);
    double tr = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) tr += sq(i, j) * a(j, i);
    return tr;
}
} // namespace stats_detail

inline MomentVector moments(const Tensor& a) {
    stats_detail::check_adjacency(a.rows(), a.cols(), "moments");
    const int n = a.rows();
    const double inv_n = 1.0 / n;
    double total = sum_all(a);
    MomentVector m;
    m.deg_mean = total * inv_n;
    double var_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) d += a(i, j);
        var_sum += (d - m.deg_mean) * (d - m.deg_mean);
    }
    m.deg_std = std::sqrt(var_sum * inv_n + kStatsEps);
    m.density = total * (1.0 / (static_cast<double>(n) * (n - 1) + kStatsEps));
    m.tri = stats_detail::trace_pow3_plain(a) * (1.0 / (6.0 * n + kStatsEps));
    return m;
}

inline MomentVector moments(const DenseGraph& g) { return moments(g.adjacency); }

struct MomentValues {
    Value deg_mean, deg_std, density, tri;
    Value operator[](int m) const {
        switch (m) {
        case 0: return deg_mean;
        case 1: return deg_std;
        case 2: return density;
        default: return tri;
        }
    }
};

/// Differentiable moments of an adjacency on the tape.
inline MomentValues moment_values(Tape& t, Value a) {
    stats_detail::check_adjacency(a.rows(), a.cols(), "moment_values");
    const int n = a.rows();
    const double inv_n = 1.0 / n;
    Value total = sum(a);
    MomentValues m;
    m.deg_mean = affine(total, inv_n, 0.0);
    Value degs = row_sum(a);
    Value mean_col = matmul(t.constant(Tensor::ones(n, 1)), m.deg_mean);
    Value var = affine(sum(square(sub(degs, mean_col))), inv_n, kStatsEps);
    m.deg_std = sqrt(var);
    m.density = affine(total, 1.0 / (static_cast<double>(n) * (n - 1) + kStatsEps), 0.0);
    m.tri = affine(trace_pow3(a), 1.0 / (6.0 * n + kStatsEps), 0.0);
    return m;
}

/// L_hat = I - D^{-1/2} A D^{-1/2} with weighted degrees; rows and columns
/// of isolated nodes get off-diagonal 0 and diagonal 1.
inline Tensor normalized_laplacian(const Tensor& a) {
    if (a.rows() != a.cols())
        throw std::invalid_argument("normalized_laplacian: adjacency must be square");
    const int n = a.rows();
    std::vector<double> s(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double d = 0.0;
        for (int j = 0; j < n; ++j) d += a(i, j);
        s[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    Tensor lap(n, n);
    for (int i = 0; i < n; ++i) {
        lap(i, i) = 1.0;
        for (int j = 0; j < n; ++j)
            if (i != j) lap(i, j) = -s[i] * a(i, j) * s[j];
    }
    return lap;
}

/// Dirichlet energy Tr(X^T L_hat X) on plain tensors.
inline double dirichlet_energy(const Tensor& a, const Tensor& x) {
    if (x.rows() != a.rows())
        throw std::invalid_argument("dirichlet_energy: feature rows must match node count");
    Tensor lap = normalized_laplacian(a);
    Tensor lx = matmul_plain(lap, x);
    double omega = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) omega += x[k] * lx[k];
    return omega;
}

inline double dirichlet_energy(const DenseGraph& g) {
    return dirichlet_energy(g.adjacency, g.features);
}

/// Differentiable Dirichlet energy: sum(X*X) - Tr(M^T A M) with M = S X,
/// S = diag(d^{-1/2}) and zero rows for isolated nodes. Identical to the
/// plain formula for any valid adjacency.
inline Value dirichlet_energy_value(Tape& t, Value a, Value x) {
    if (x.rows() != a.rows())
        throw std::invalid_argument("dirichlet_energy: feature rows must match node count");
    if (a.rows() != a.cols())
        throw std::invalid_argument("dirichlet_energy: adjacency must be square");
    Value degs = row_sum(a);
    Value s = rsqrt0(degs);
    Value m = scale_rows(x, s);
    Value smooth = sum(mul(m, matmul(a, m)));
    return sub(sum(square(x)), smooth);
}

/// Default per-moment weights: inverse squared target mean magnitude,
/// clamped to [1e-4, 1e4], so the four squared gaps live on one scale.
inline MomentWeights default_gamma(const DomainDataset& target) {
    if (target.empty()) throw invalid_input("default_gamma: empty target dataset");
    std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
    for (const DenseGraph& g : target.graphs) {
        MomentVector m = moments(g);
        for (int i = 0; i < 4; ++i) mean[i] += m[i];
    }
    MomentWeights w;
    for (int i = 0; i < 4; ++i) {
        mean[i] /= static_cast<double>(target.size());
        double gamma = 1.0 / (mean[i] * mean[i] + 1e-8);
        w.gamma[i] = std::min(1e4, std::max(1e-4, gamma));
    }
    return w;
}

} // namespace sbd
