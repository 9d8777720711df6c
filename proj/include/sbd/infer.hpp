#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sbd/basis.hpp"
#include "sbd/distill.hpp"
#include "sbd/errors.hpp"
#include "sbd/gin.hpp"
#include "sbd/graph.hpp"
#include "sbd/optimizer.hpp"

namespace sbd {

// Stage 2: train a freshly initialized classifier on the distilled basis
// alone (the proxy and the source data are not inputs), then evaluate on
// target graphs. Target labels are read here and nowhere else.

struct InferConfig {
    int epochs = 200;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double early_stop_tol = 1e-5;
    int early_stop_window = 20;

    void validate() const {
        if (epochs < 1) throw invalid_input("infer: epochs must be >= 1");
        if (lr <= 0.0) throw invalid_input("infer: lr must be > 0");
        if (early_stop_tol < 0.0) throw invalid_input("infer: early_stop_tol must be >= 0");
    }
};

struct EvalReport {
    double accuracy = 0.0;
    std::optional<double> auc; // binary tasks with both classes present
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<long>> confusion; // [true][predicted]
    long n_eval = 0;
};

/// Full-batch Adam training of a GIN on labeled graphs with early stop on
/// the training-loss change. Deterministic per cfg.seed.
inline GinParams train_classifier(const std::vector<DenseGraph>& graphs, ModelConfig mcfg,
                                  const InferConfig& cfg) {
    cfg.validate();
    if (graphs.empty()) throw invalid_input("train_classifier: no graphs");
    for (const DenseGraph& g : graphs)
        if (!g.label) throw invalid_input("train_classifier: unlabeled graph");
    mcfg.validate();

    GinParams params = init_params(mcfg, sub_seed(cfg.seed, "init"));
    Adam adam(cfg.lr);
    Rng dropout_rng(sub_seed(cfg.seed, "dropout"));
    std::vector<double> losses;
    losses.reserve(cfg.epochs);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape t;
        GinVars vars = lift_params(t, params);
        Value acc;
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            Value logits = gin_forward(t, vars, t.constant(graphs[i].adjacency),
                                       t.constant(graphs[i].features), true, &dropout_rng);
            Value ce = cross_entropy(t, logits, *graphs[i].label);
            acc = i == 0 ? ce : add(acc, ce);
        }
        Value loss = affine(acc, 1.0 / static_cast<double>(graphs.size()), 0.0);
        double lv = loss.item();
        if (!std::isfinite(lv))
            throw std::runtime_error("train_classifier: non-finite loss at epoch " +
                                     std::to_string(epoch));
        losses.push_back(lv);

        t.backward(loss);
        std::vector<Tensor> grads;
        std::vector<Tensor*> ptrs;
        grads.reserve(params.tensors.size());
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            grads.push_back(t.grad(vars.v[i]));
            ptrs.push_back(&params.tensors[i]);
        }
        adam.step(ptrs, grads);

        const int w = cfg.early_stop_window;
        if (w > 0 && epoch >= w &&
            std::fabs(losses[epoch] - losses[epoch - w]) < cfg.early_stop_tol)
            break;
    }
    return params;
}

/// Train a fresh model exclusively on the realized basis. The source
/// dataset and the distillation proxy are not parameters by construction.
inline GinParams retrain_fresh(const BasisSet& basis, const InferConfig& cfg, ModelConfig mcfg) {
    if (basis.prototypes.empty()) throw invalid_input("retrain_fresh: empty basis");
    std::vector<DenseGraph> realized;
    realized.reserve(basis.prototypes.size());
    int max_label = 0;
    for (const PrototypeGraph& p : basis.prototypes) {
        realized.push_back(realize_graph(p));
        max_label = std::max(max_label, p.label);
    }
    mcfg.num_classes = std::max(mcfg.num_classes, max_label + 1);
    mcfg.feature_dim = realized.front().features.cols();
    return train_classifier(realized, mcfg, cfg);
}

/// Source-only baseline: train on the labeled source graphs directly.
inline GinParams train_source_only(const DomainDataset& source, ModelConfig mcfg,
                                   const InferConfig& cfg) {
    if (source.empty()) throw invalid_input("train_source_only: empty source");
    mcfg.num_classes = source.num_classes;
    mcfg.feature_dim = source.feature_dim;
    return train_classifier(source.graphs, mcfg, cfg);
}

/// Rank-based AUC (Mann-Whitney) with ties counted one half.
inline double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    long n_pos = 0, n_neg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == 1) {
            rank_sum_pos += rank[k];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Accuracy, confusion matrix, per-class accuracy, and (binary) AUC over a
/// labeled target set. Never mutates params or the dataset.
inline EvalReport evaluate(const GinParams& params, const DomainDataset& target) {
    if (target.empty()) throw invalid_input("evaluate: empty target dataset");
    const int c = params.cfg.num_classes;
    EvalReport rep;
    rep.confusion.assign(c, std::vector<long>(c, 0));
    std::vector<double> pos_scores;
    std::vector<int> bin_labels;
    long correct = 0;
    for (const DenseGraph& g : target.graphs) {
        if (!g.label) throw invalid_input("evaluate: unlabeled graph in evaluation set");
        if (*g.label >= c)
            throw invalid_input("evaluate: label " + std::to_string(*g.label) +
                                " outside model classes");
        Tensor logits = gin_logits(params, g);
        int pred = predict(logits);
        ++rep.confusion[*g.label][pred];
        if (pred == *g.label) ++correct;
        if (c == 2) {
            pos_scores.push_back(softmax_plain(logits)[1]);
            bin_labels.push_back(*g.label);
        }
    }
    rep.n_eval = static_cast<long>(target.size());
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.n_eval);
    rep.per_class_accuracy.assign(c, 0.0);
    for (int y = 0; y < c; ++y) {
        long row = 0;
        for (int p = 0; p < c; ++p) row += rep.confusion[y][p];
        if (row > 0)
            rep.per_class_accuracy[y] = static_cast<double>(rep.confusion[y][y]) / row;
    }
    if (c == 2) {
        bool has_pos = false, has_neg = false;
        for (int l : bin_labels) (l == 1 ? has_pos : has_neg) = true;
        if (has_pos && has_neg) rep.auc = rank_auc(pos_scores, bin_labels);
    }
    return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["accuracy"] = rep.accuracy;
    if (rep.auc)
        j["auc"] = *rep.auc;
    else
        j["auc"] = nullptr;
    j["per_class_accuracy"] = rep.per_class_accuracy;
    j["confusion"] = rep.confusion;
    j["n_eval"] = rep.n_eval;
    return j;
}

/// Per-graph mean-pooled embeddings as CSV (for external projection tools).
inline void dump_embeddings(const GinParams& params, const DomainDataset& ds,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw invalid_input("cannot write embeddings file: " + path);
    out << "graph_index,label";
    for (int h = 0; h < params.cfg.hidden; ++h) out << ",e" << h;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor emb = gin_embedding_plain(params, ds.graphs[i]);
        out << i << "," << (ds.graphs[i].label ? std::to_string(*ds.graphs[i].label) : "");
        for (std::size_t k = 0; k < emb.size(); ++k) {
            std::snprintf(buf, sizeof(buf), ",%.17g", emb[k]);
            out << buf;
        }
        out << "\n";
    }
}

// ---- end-to-end pipeline ----

struct AblationFlags {
    bool no_sem = false;     // drop the source semantic term
    bool no_geo = false;     // lambda1 = 0
    bool no_spec = false;    // lambda2 = 0
    bool no_retrain = false; // evaluate the final proxy directly
};

struct PipelineArtifacts {
    DistillResult distill_result;
    GinParams model;
    EvalReport report;
};

inline PipelineArtifacts run_pipeline(const DomainDataset& source, const DomainDataset& target,
                                      DistillConfig dcfg, const InferConfig& icfg,
                                      const AblationFlags& flags = {}) {
    dcfg.ablate_sem = flags.no_sem;
    if (flags.no_geo) dcfg.lambda1 = 0.0;
    if (flags.no_spec) dcfg.lambda2 = 0.0;

    PipelineArtifacts art;
    art.distill_result = distill(source, target, dcfg);
    if (flags.no_retrain) {
        art.model = art.distill_result.final_proxy;
    } else {
        art.model = retrain_fresh(art.distill_result.basis, icfg, dcfg.model);
    }
    art.report = evaluate(art.model, target);
    return art;
}

} // namespace sbd
