#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbd/errors.hpp"
#include "sbd/tensor.hpp"

namespace sbd {

/// One graph instance: symmetric non-negative weighted adjacency with zero
/// diagonal, node features, optional class label.
struct DenseGraph {
    int n = 0;
    Tensor adjacency; // n x n
    Tensor features;  // n x d
    std::optional<int> label;
};

struct DomainDataset {
    std::string name;
    int num_classes = 0;
    int feature_dim = 0;
    std::vector<DenseGraph> graphs;

    bool empty() const { return graphs.empty(); }
    std::size_t size() const { return graphs.size(); }
};

/// Number of undirected edges (nonzero upper-triangle entries).
inline long edge_count(const DenseGraph& g) {
    long c = 0;
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (g.adjacency(i, j) != 0.0) ++c;
    return c;
}

/// Weighted density with the exact denominator n(n-1); 0 for n < 2.
inline double graph_density(const DenseGraph& g) {
    if (g.n < 2) return 0.0;
    return sum_all(g.adjacency) / (static_cast<double>(g.n) * (g.n - 1));
}

// ---- JSON Lines graph format ----
// One object per line: n (int), edges (list of [i, j], 0-indexed, i != j),
// features (n x d floats), optional label (int), optional weights (parallel
// to edges, floats in [0, 1], default 1.0).

inline DomainDataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open dataset file: " + path);

    DomainDataset ds;
    ds.name = std::filesystem::path(path).stem().string();
    int max_label = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fail = [&](const std::string& msg) -> invalid_input {
            return invalid_input(path + ": line " + std::to_string(lineno) + ": " + msg);
        };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw fail(std::string("parse error: ") + e.what());
        }
        try {
            DenseGraph g;
            g.n = j.at("n").get<int>();
            if (g.n < 1) throw fail("n must be >= 1");

            const auto& feats = j.at("features");
            if (!feats.is_array() || static_cast<int>(feats.size()) != g.n)
                throw fail("features must have n rows");
            int d = feats.empty() ? 0 : static_cast<int>(feats.at(0).size());
            if (d < 1) throw fail("features must have at least one column");
            if (ds.graphs.empty() && ds.feature_dim == 0) ds.feature_dim = d;
            if (d != ds.feature_dim)
                throw fail("inconsistent feature_dim (schema error): expected " +
                           std::to_string(ds.feature_dim) + ", got " + std::to_string(d));
            g.features = Tensor(g.n, d);
            for (int i = 0; i < g.n; ++i) {
                if (static_cast<int>(feats.at(i).size()) != d)
                    throw fail("ragged feature row " + std::to_string(i));
                for (int c = 0; c < d; ++c) g.features(i, c) = feats.at(i).at(c).get<double>();
            }

            g.adjacency = Tensor(g.n, g.n);
            const auto& edges = j.at("edges");
            if (!edges.is_array()) throw fail("edges must be an array");
            std::vector<double> weights;
            if (j.contains("weights") && !j.at("weights").is_null()) {
                weights = j.at("weights").get<std::vector<double>>();
                if (weights.size() != edges.size())
                    throw fail("weights must parallel edges");
            }
            for (std::size_t e = 0; e < edges.size(); ++e) {
                const auto& pair = edges.at(e);
                if (!pair.is_array() || pair.size() != 2) throw fail("edge must be [i, j]");
                int a = pair.at(0).get<int>();
                int b = pair.at(1).get<int>();
                if (a < 0 || a >= g.n || b < 0 || b >= g.n)
                    throw fail("edge index out of range in edge " + std::to_string(e));
                if (a == b) throw fail("self-loop in edge " + std::to_string(e));
                double w = weights.empty() ? 1.0 : weights[e];
                if (!(w >= 0.0 && w <= 1.0)) throw fail("weight outside [0, 1]");
                g.adjacency(a, b) = w;
                g.adjacency(b, a) = w;
            }

            if (j.contains("label") && !j.at("label").is_null()) {
                int lab = j.at("label").get<int>();
                if (lab < 0) throw fail("negative label");
                g.label = lab;
                max_label = std::max(max_label, lab);
            }
            ds.graphs.push_back(std::move(g));
        } catch (const nlohmann::json::exception& e) {
            throw fail(std::string("bad record: ") + e.what());
        }
    }
    ds.num_classes = max_label + 1;
    return ds;
}

inline void save_jsonl(const DomainDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary); // LF endings everywhere
    if (!out) throw invalid_input("cannot write dataset file: " + path);
    for (const DenseGraph& g : ds.graphs) {
        nlohmann::json j;
        j["n"] = g.n;
        nlohmann::json edges = nlohmann::json::array();
        nlohmann::json weights = nlohmann::json::array();
        bool any_weighted = false;
        for (int i = 0; i < g.n; ++i) {
            for (int c = i + 1; c < g.n; ++c) {
                double w = g.adjacency(i, c);
                if (w == 0.0) continue;
                edges.push_back({i, c});
                weights.push_back(w);
                if (w != 1.0) any_weighted = true;
            }
        }
        j["edges"] = std::move(edges);
        if (any_weighted) j["weights"] = std::move(weights);
        nlohmann::json feats = nlohmann::json::array();
        for (int i = 0; i < g.n; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < g.features.cols(); ++c) row.push_back(g.features(i, c));
            feats.push_back(std::move(row));
        }
        j["features"] = std::move(feats);
        if (g.label) j["label"] = *g.label;
        out << j.dump() << "\n";
    }
}

// ---- density-based domain splitting ----

enum class DensityCriterion { NodeDensity, EdgeDensity };

struct SplitSpec {
    DensityCriterion criterion = DensityCriterion::NodeDensity;
    int num_bins = 4;
    std::vector<double> boundaries; // filled with the quantile cut points
};

inline double split_statistic(const DenseGraph& g, DensityCriterion crit) {
    if (crit == DensityCriterion::NodeDensity) return static_cast<double>(g.n);
    if (g.n < 2) return 0.0;
    return static_cast<double>(edge_count(g)) /
           (static_cast<double>(g.n) * (g.n - 1) / 2.0);
}

/// Linear-interpolation quantile (the numpy default) of a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    const std::size_t n = sorted.size();
    double h = (static_cast<double>(n) - 1.0) * p;
    std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= n) return sorted.back();
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Partition into num_bins quantile bins of ascending density. Bin i covers
/// [q_i, q_{i+1}) with the last bin closed; names are M0..M{k-1}.
inline std::vector<DomainDataset> split_by_density(const DomainDataset& ds, SplitSpec& spec) {
    if (ds.empty()) throw invalid_input("split_by_density: empty dataset");
    if (spec.num_bins < 2) throw invalid_input("split_by_density: num_bins must be >= 2");

    std::vector<double> stats(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
        stats[i] = split_statistic(ds.graphs[i], spec.criterion);

    std::vector<double> sorted = stats;
    std::sort(sorted.begin(), sorted.end());
    std::size_t distinct = 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1]) ++distinct;
    if (distinct < static_cast<std::size_t>(spec.num_bins))
        throw invalid_input("split_by_density: degenerate split, only " +
                            std::to_string(distinct) + " distinct statistic values for " +
                            std::to_string(spec.num_bins) + " bins");

    spec.boundaries.clear();
    for (int i = 1; i < spec.num_bins; ++i)
        spec.boundaries.push_back(quantile_sorted(sorted, static_cast<double>(i) / spec.num_bins));
    for (std::size_t i = 1; i < spec.boundaries.size(); ++i)
        if (!(spec.boundaries[i] > spec.boundaries[i - 1]))
            throw invalid_input("split_by_density: degenerate split, quantile boundaries collide");

    std::vector<DomainDataset> bins(spec.num_bins);
    for (int b = 0; b < spec.num_bins; ++b) {
        bins[b].name = "M" + std::to_string(b);
        bins[b].num_classes = ds.num_classes;
        bins[b].feature_dim = ds.feature_dim;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int b = 0;
        while (b < spec.num_bins - 1 && stats[i] >= spec.boundaries[b]) ++b;
        bins[b].graphs.push_back(ds.graphs[i]);
    }
    return bins;
}

// ---- summary statistics ----

struct DatasetStats {
    double mean_nodes = 0.0;
    double std_nodes = 0.0;
    double mean_density = 0.0;
    std::vector<long> class_hist;
};

inline DatasetStats dataset_stats(const DomainDataset& ds) {
    if (ds.empty()) throw invalid_input("dataset_stats: empty dataset");
    DatasetStats s;
    s.class_hist.assign(std::max(ds.num_classes, 0), 0);
    double sum_n = 0.0, sum_den = 0.0;
    for (const DenseGraph& g : ds.graphs) {
        sum_n += g.n;
        sum_den += graph_density(g);
        if (g.label) {
            if (*g.label >= static_cast<int>(s.class_hist.size()))
                s.class_hist.resize(*g.label + 1, 0);
            ++s.class_hist[*g.label];
        }
    }
    const double nn = static_cast<double>(ds.size());
    s.mean_nodes = sum_n / nn;
    s.mean_density = sum_den / nn;
    double var = 0.0;
    for (const DenseGraph& g : ds.graphs) var += (g.n - s.mean_nodes) * (g.n - s.mean_nodes);
    s.std_nodes = std::sqrt(var / nn);
    return s;
}

inline int median_node_count(const DomainDataset& ds) {
    if (ds.empty()) throw invalid_input("median_node_count: empty dataset");
    std::vector<int> ns;
    ns.reserve(ds.size());
    for (const DenseGraph& g : ds.graphs) ns.push_back(g.n);
    std::sort(ns.begin(), ns.end());
    const std::size_t m = ns.size();
    if (m % 2 == 1) return ns[m / 2];
    return static_cast<int>(std::lround((ns[m / 2 - 1] + ns[m / 2]) / 2.0));
}

} // namespace sbd
