#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sbd/autodiff.hpp"
#include "sbd/errors.hpp"
#include "sbd/graph.hpp"
#include "sbd/rng.hpp"
#include "sbd/serialize.hpp"
#include "sbd/stats.hpp"

namespace sbd {

// Learnable synthetic prototype graphs. Free parameters are adjacency
// logits and node features; the realized adjacency sigmoid((L + L^T)/2)
// masked off the diagonal is symmetric with entries in (0, 1) for any
// finite logits, so feasibility holds by construction. Labels are fixed
// and balanced.

struct PrototypeGraph {
    int n_syn = 0;
    Tensor adj_logits;  // n_syn x n_syn
    Tensor feat_params; // n_syn x d
    int label = 0;
};

struct BasisSet {
    std::vector<PrototypeGraph> prototypes;
    int n_syn = 0;
    nlohmann::json creation_config; // snapshot, preserved verbatim

    int k() const { return static_cast<int>(prototypes.size()); }
};

/// Labels round-robin over classes; adjacency logits seeded at the source
/// mean density; features at the class-conditional source feature mean.
inline BasisSet init_basis(const DomainDataset& source, int k, int n_syn, std::uint64_t seed) {
    if (source.empty()) throw invalid_input("init_basis: empty source dataset");
    if (source.num_classes < 1) throw invalid_input("init_basis: source has no labels");
    if (k < source.num_classes)
        throw invalid_input("init_basis: K=" + std::to_string(k) + " is below num_classes=" +
                            std::to_string(source.num_classes));
    if (n_syn <= 0) n_syn = median_node_count(source);
    if (n_syn < 2) throw invalid_input("init_basis: n_syn must be >= 2");

    const int num_classes = source.num_classes;
    const int d = source.feature_dim;

    // class-conditional node-feature means, global mean as fallback
    std::vector<Tensor> class_mean(num_classes, Tensor(1, d));
    std::vector<long> class_rows(num_classes, 0);
    Tensor global_mean(1, d);
    long global_rows = 0;
    for (const DenseGraph& g : source.graphs) {
        for (int i = 0; i < g.n; ++i) {
            for (int c = 0; c < d; ++c) global_mean(0, c) += g.features(i, c);
            ++global_rows;
            if (g.label) {
                for (int c = 0; c < d; ++c) class_mean[*g.label](0, c) += g.features(i, c);
                ++class_rows[*g.label];
            }
        }
    }
    for (int c = 0; c < d; ++c) global_mean(0, c) /= static_cast<double>(global_rows);
    for (int y = 0; y < num_classes; ++y) {
        if (class_rows[y] > 0) {
            for (int c = 0; c < d; ++c) class_mean[y](0, c) /= static_cast<double>(class_rows[y]);
        } else {
            class_mean[y] = global_mean;
        }
    }

    double density = std::clamp(dataset_stats(source).mean_density, 1e-6, 1.0 - 1e-6);
    const double logit0 = std::log(density / (1.0 - density));
    constexpr double kInitNoise = 0.1;

    Rng rng(seed);
    BasisSet basis;
    basis.n_syn = n_syn;
    basis.prototypes.reserve(k);
    for (int p = 0; p < k; ++p) {
        PrototypeGraph proto;
        proto.n_syn = n_syn;
        proto.label = p % num_classes;
        proto.adj_logits = Tensor(n_syn, n_syn);
        for (int i = 0; i < n_syn; ++i) {
            for (int j = i + 1; j < n_syn; ++j) {
                double v = logit0 + kInitNoise * rng.normal();
                proto.adj_logits(i, j) = v;
                proto.adj_logits(j, i) = v;
            }
        }
        proto.feat_params = Tensor(n_syn, d);
        for (int i = 0; i < n_syn; ++i)
            for (int c = 0; c < d; ++c)
                proto.feat_params(i, c) = class_mean[proto.label](0, c) + kInitNoise * rng.normal();
        basis.prototypes.push_back(std::move(proto));
    }
    return basis;
}

/// A prototype lifted onto a tape: parameter leaves plus the realized
/// differentiable adjacency/features.
struct ProtoVars {
    Value adj_logits;
    Value feat_params;
    Value a; // realized adjacency
    Value x; // realized features
    int label = 0;
};

inline ProtoVars realize(Tape& t, const PrototypeGraph& p) {
    ProtoVars v;
    v.label = p.label;
    v.adj_logits = t.leaf(p.adj_logits);
    v.feat_params = t.leaf(p.feat_params);
    Value sym = affine(add(v.adj_logits, transpose(v.adj_logits)), 0.5, 0.0);
    Tensor mask = Tensor::ones(p.n_syn, p.n_syn);
    for (int i = 0; i < p.n_syn; ++i) mask(i, i) = 0.0;
    v.a = mul(sigmoid(sym), t.constant(std::move(mask)));
    v.x = v.feat_params;
    return v;
}

/// Plain realization (same arithmetic as the tape path).
inline DenseGraph realize_graph(const PrototypeGraph& p) {
    DenseGraph g;
    g.n = p.n_syn;
    g.adjacency = Tensor(p.n_syn, p.n_syn);
    for (int i = 0; i < p.n_syn; ++i)
        for (int j = 0; j < p.n_syn; ++j)
            if (i != j)
                g.adjacency(i, j) =
                    stable_sigmoid((p.adj_logits(i, j) + p.adj_logits(j, i)) * 0.5);
    g.features = p.feat_params;
    g.label = p.label;
    return g;
}

/// Export-only hard thresholding at 0.5 (visualization).
inline DenseGraph realize_thresholded(const PrototypeGraph& p, double threshold = 0.5) {
    DenseGraph g = realize_graph(p);
    for (std::size_t k = 0; k < g.adjacency.size(); ++k)
        g.adjacency[k] = g.adjacency[k] >= threshold ? 1.0 : 0.0;
    return g;
}

// ---- basis checkpoints ----

inline void save_basis(const BasisSet& b, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["k"] = b.k();
    j["n_syn"] = b.n_syn;
    j["config"] = b.creation_config;
    nlohmann::json protos = nlohmann::json::array();
    for (const PrototypeGraph& p : b.prototypes) {
        nlohmann::json pj;
        pj["label"] = p.label;
        pj["adj_logits"] = tensor_to_json(p.adj_logits);
        pj["feat_params"] = tensor_to_json(p.feat_params);
        protos.push_back(std::move(pj));
    }
    j["prototypes"] = std::move(protos);
    write_json_file(j, path);
}

inline BasisSet load_basis(const std::string& path) {
    nlohmann::json j = read_json_file(path);
    try {
        if (j.at("version").get<int>() != 1)
            throw invalid_input(path + ": unsupported basis version");
        BasisSet b;
        b.n_syn = j.at("n_syn").get<int>();
        b.creation_config = j.at("config");
        for (const auto& pj : j.at("prototypes")) {
            PrototypeGraph p;
            p.n_syn = b.n_syn;
            p.label = pj.at("label").get<int>();
            p.adj_logits = tensor_from_json(pj.at("adj_logits"));
            p.feat_params = tensor_from_json(pj.at("feat_params"));
            if (p.adj_logits.rows() != b.n_syn || p.adj_logits.cols() != b.n_syn ||
                p.feat_params.rows() != b.n_syn)
                throw invalid_input(path + ": prototype tensor shapes inconsistent with n_syn");
            b.prototypes.push_back(std::move(p));
        }
        if (b.k() != j.at("k").get<int>())
            throw invalid_input(path + ": prototype count does not match k");
        if (b.prototypes.empty()) throw invalid_input(path + ": empty basis");
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(path + ": corrupt basis checkpoint: " + e.what());
    }
}

} // namespace sbd
