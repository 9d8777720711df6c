#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sbd/autodiff.hpp"
#include "sbd/errors.hpp"
#include "sbd/graph.hpp"
#include "sbd/rng.hpp"
#include "sbd/serialize.hpp"

namespace sbd {

// Graph isomorphism network for graph classification. Each layer applies a
// two-linear-layer MLP to (1 + eps) * H + A * H, followed by ReLU and
// (in training mode) inverted dropout; the readout is mean pooling over
// node embeddings feeding a linear classifier.

struct ModelConfig {
    int layers = 3;
    int hidden = 32; // 128 in the full-scale configuration
    double dropout = 0.2;
    double eps_gin = 0.0;
    int num_classes = 2;
    int feature_dim = 1;

    void validate() const {
        if (layers < 1) throw invalid_input("model: layers must be >= 1");
        if (hidden < 1) throw invalid_input("model: hidden must be >= 1");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw invalid_input("model: dropout must be in [0, 1)");
        if (num_classes < 1) throw invalid_input("model: num_classes must be >= 1");
        if (feature_dim < 1) throw invalid_input("model: feature_dim must be >= 1");
    }
};

inline bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.layers == b.layers && a.hidden == b.hidden && a.dropout == b.dropout &&
           a.eps_gin == b.eps_gin && a.num_classes == b.num_classes &&
           a.feature_dim == b.feature_dim;
}

/// All classifier weights, in a fixed order: per layer {w1, b1, w2, b2},
/// then the readout {w, b}.
struct GinParams {
    ModelConfig cfg;
    std::vector<std::string> names;
    std::vector<Tensor> tensors;
};

/// Xavier-uniform weights, zero biases; deterministic per seed.
inline GinParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GinParams p;
    p.cfg = cfg;
    Rng rng(seed);
    auto xavier = [&rng](int fan_in, int fan_out) {
        Tensor w(fan_in, fan_out);
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = rng.uniform(-bound, bound);
        return w;
    };
    for (int l = 0; l < cfg.layers; ++l) {
        int in_dim = l == 0 ? cfg.feature_dim : cfg.hidden;
        std::string prefix = "layer" + std::to_string(l) + ".";
        p.names.push_back(prefix + "w1");
        p.tensors.push_back(xavier(in_dim, cfg.hidden));
        p.names.push_back(prefix + "b1");
        p.tensors.push_back(Tensor(1, cfg.hidden));
        p.names.push_back(prefix + "w2");
        p.tensors.push_back(xavier(cfg.hidden, cfg.hidden));
        p.names.push_back(prefix + "b2");
        p.tensors.push_back(Tensor(1, cfg.hidden));
    }
    p.names.push_back("readout.w");
    p.tensors.push_back(xavier(cfg.hidden, cfg.num_classes));
    p.names.push_back("readout.b");
    p.tensors.push_back(Tensor(1, cfg.num_classes));
    return p;
}

/// Tape-lifted parameter handles in the same order as GinParams.tensors.
struct GinVars {
    ModelConfig cfg;
    std::vector<Value> v;
};

inline GinVars lift_params(Tape& t, const GinParams& p) {
    GinVars g;
    g.cfg = p.cfg;
    g.v.reserve(p.tensors.size());
    for (const Tensor& w : p.tensors) g.v.push_back(t.leaf(w));
    return g;
}

/// Read the current parameter values back off the tape.
inline GinParams materialize_params(const GinVars& vars, const GinParams& like) {
    GinParams p;
    p.cfg = vars.cfg;
    p.names = like.names;
    p.tensors.reserve(vars.v.size());
    for (const Value& v : vars.v) p.tensors.push_back(v.val());
    return p;
}

/// Mean-pooled graph embedding (1 x hidden) after all GIN layers.
/// dropout_rng must be provided in training mode when dropout > 0.
inline Value gin_embedding(Tape& t, const GinVars& p, Value a, Value x, bool train_mode,
                           Rng* dropout_rng) {
    const ModelConfig& cfg = p.cfg;
    if (x.cols() != cfg.feature_dim)
        throw std::invalid_argument("gin: feature dim mismatch, expected " +
                                    std::to_string(cfg.feature_dim) + ", got " +
                                    std::to_string(x.cols()));
    if (a.rows() != a.cols() || a.rows() != x.rows())
        throw std::invalid_argument("gin: adjacency/features shape mismatch");
    const int n = x.rows();
    Value h = x;
    for (int l = 0; l < cfg.layers; ++l) {
        const Value& w1 = p.v[4 * l];
        const Value& b1 = p.v[4 * l + 1];
        const Value& w2 = p.v[4 * l + 2];
        const Value& b2 = p.v[4 * l + 3];
        Value pre = add(affine(h, 1.0 + cfg.eps_gin, 0.0), matmul(a, h));
        Value hidden1 = relu(add_rowvec(matmul(pre, w1), b1));
        h = relu(add_rowvec(matmul(hidden1, w2), b2));
        if (train_mode && cfg.dropout > 0.0) {
            if (!dropout_rng) throw std::invalid_argument("gin: training mode needs dropout rng");
            Tensor mask(n, cfg.hidden);
            const double keep = 1.0 - cfg.dropout;
            for (std::size_t k = 0; k < mask.size(); ++k)
                mask[k] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
            h = mul(h, t.constant(std::move(mask)));
        }
    }
    Value pool = t.constant(Tensor(1, n, 1.0 / n));
    return matmul(pool, h);
}

/// Class logits (1 x C).
inline Value gin_forward(Tape& t, const GinVars& p, Value a, Value x, bool train_mode,
                         Rng* dropout_rng) {
    Value emb = gin_embedding(t, p, a, x, train_mode, dropout_rng);
    const std::size_t base = p.v.size() - 2;
    return add_rowvec(matmul(emb, p.v[base]), p.v[base + 1]);
}

/// Eval-mode logits for a plain graph (throwaway tape).
inline Tensor gin_logits(const GinParams& p, const DenseGraph& g) {
    Tape t;
    GinVars vars = lift_params(t, p);
    return gin_forward(t, vars, t.constant(g.adjacency), t.constant(g.features), false, nullptr)
        .val();
}

inline Tensor gin_embedding_plain(const GinParams& p, const DenseGraph& g) {
    Tape t;
    GinVars vars = lift_params(t, p);
    return gin_embedding(t, vars, t.constant(g.adjacency), t.constant(g.features), false, nullptr)
        .val();
}

/// -log softmax(logits)[label] with max-subtraction stability, composed
/// from primitive ops so it stays differentiable to any depth.
inline Value cross_entropy(Tape& t, Value logits, int label) {
    if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: logits must be 1 x C");
    const int c = logits.cols();
    if (label < 0 || label >= c)
        throw invalid_input("cross_entropy: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(c) + ")");
    double mx = logits.val()[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, logits.val()[k]);
    Value shifted = affine(logits, 1.0, -mx);
    Value lse = log(sum(exp(shifted)));
    Tensor pick(c, 1);
    pick(label, 0) = 1.0;
    Value z_label = matmul(shifted, t.constant(std::move(pick)));
    return sub(lse, z_label);
}

/// argmax with ties broken by the lowest index.
inline int predict(const Tensor& logits) {
    int best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
        if (logits[k] > logits[best]) best = static_cast<int>(k);
    return best;
}

inline std::vector<double> softmax_plain(const Tensor& logits) {
    double mx = logits[0];
    for (std::size_t k = 1; k < logits.size(); ++k) mx = std::max(mx, logits[k]);
    std::vector<double> p(logits.size());
    double denom = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        p[k] = std::exp(logits[k] - mx);
        denom += p[k];
    }
    for (double& v : p) v /= denom;
    return p;
}

// ---- parameter checkpoints ----

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["layers"] = cfg.layers;
    j["hidden"] = cfg.hidden;
    j["dropout"] = cfg.dropout;
    j["eps_gin"] = cfg.eps_gin;
    j["num_classes"] = cfg.num_classes;
    j["feature_dim"] = cfg.feature_dim;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.eps_gin = j.at("eps_gin").get<double>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    return cfg;
}

inline void save_params(const GinParams& p, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = model_config_to_json(p.cfg);
    nlohmann::json tensors;
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
        tensors[p.names[i]] = tensor_to_json(p.tensors[i]);
    j["tensors"] = std::move(tensors);
    write_json_file(j, path);
}

inline GinParams load_params(const std::string& path) {
    nlohmann::json j = read_json_file(path);
    try {
        if (j.at("version").get<int>() != 1)
            throw invalid_input(path + ": unsupported checkpoint version");
        GinParams p;
        p.cfg = model_config_from_json(j.at("config"));
        p.cfg.validate();
        GinParams ref = init_params(p.cfg, 0); // canonical name order
        for (std::size_t i = 0; i < ref.names.size(); ++i) {
            p.names.push_back(ref.names[i]);
            Tensor t = tensor_from_json(j.at("tensors").at(ref.names[i]));
            if (!t.same_shape(ref.tensors[i]))
                throw invalid_input(path + ": tensor " + ref.names[i] + " has wrong shape");
            p.tensors.push_back(std::move(t));
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw invalid_input(path + ": corrupt checkpoint: " + e.what());
    }
}

} // namespace sbd
