#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/graph.hpp"
#include "sbd/rng.hpp"

namespace sbd {

// Synthetic 3-class benchmark for correlation shift. Each graph is a base
// graph (tree / ladder / wheel) with a 5-node label-determining motif
// (cycle / house / crane) attached by a single bridge edge. The base kind
// equals the label index with probability `bias`, otherwise it is drawn
// uniformly from the other two kinds, so P(base == label) == bias exactly.
// Node features are constant ones: only topology carries signal.

namespace motif_detail {

inline void add_edge(Tensor& a, int i, int j) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
}

// Bases use nodes [0, m); m is drawn from [8, 20] (ladder rounds down to even).
inline void build_base(Tensor& a, int kind, int m, Rng& rng) {
    switch (kind) {
    case 0: // random recursive tree
        for (int i = 1; i < m; ++i) add_edge(a, i, rng.uniform_int(0, i - 1));
        break;
    case 1: { // ladder: two rails plus rungs
        int h = m / 2;
        for (int i = 0; i + 1 < h; ++i) {
            add_edge(a, i, i + 1);
            add_edge(a, h + i, h + i + 1);
        }
        for (int i = 0; i < h; ++i) add_edge(a, i, h + i);
        break;
    }
    case 2: // wheel: hub 0 plus outer cycle
        for (int j = 1; j + 1 < m; ++j) add_edge(a, j, j + 1);
        add_edge(a, m - 1, 1);
        for (int j = 1; j < m; ++j) add_edge(a, 0, j);
        break;
    }
}

// Motifs use nodes [m, m+5).
inline void build_motif(Tensor& a, int kind, int m) {
    auto e = [&](int i, int j) { add_edge(a, m + i, m + j); };
    // 5-cycle shared by cycle and house
    if (kind == 0 || kind == 1) {
        e(0, 1);
        e(1, 2);
        e(2, 3);
        e(3, 4);
        e(4, 0);
        if (kind == 1) e(0, 3); // house: chord closing the roof triangle (0,3,4)
    } else { // crane: star with one extra edge (triangle 0,1,2)
        e(0, 1);
        e(0, 2);
        e(0, 3);
        e(0, 4);
        e(1, 2);
    }
}

} // namespace motif_detail

inline DomainDataset generate_spurious_motif(int n_graphs, double bias, std::uint64_t seed,
                                             std::string name = "spurious-motif") {
    if (n_graphs < 3) throw invalid_input("generate_spurious_motif: need at least 3 graphs");
    if (!(bias >= 0.0 && bias <= 1.0))
        throw invalid_input("generate_spurious_motif: bias must be in [0, 1]");

    constexpr int kMotifNodes = 5;
    Rng rng(seed);
    DomainDataset ds;
    ds.name = std::move(name);
    ds.num_classes = 3;
    ds.feature_dim = 1;
    ds.graphs.reserve(n_graphs);

    for (int gi = 0; gi < n_graphs; ++gi) {
        const int label = gi % 3; // round-robin keeps classes balanced within 1

        int base_kind = label;
        if (rng.uniform() >= bias) {
            int other = rng.uniform_int(0, 1);
            base_kind = (label + 1 + other) % 3;
        }

        int m = rng.uniform_int(8, 20);
        if (base_kind == 1 && m % 2 == 1) --m;

        DenseGraph g;
        g.n = m + kMotifNodes;
        g.adjacency = Tensor(g.n, g.n);
        motif_detail::build_base(g.adjacency, base_kind, m, rng);
        motif_detail::build_motif(g.adjacency, label, m);
        motif_detail::add_edge(g.adjacency, rng.uniform_int(0, m - 1),
                               m + rng.uniform_int(0, kMotifNodes - 1));
        g.features = Tensor::ones(g.n, 1);
        g.label = label;
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

} // namespace sbd
