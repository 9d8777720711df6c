#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sbd/autodiff.hpp"
#include "sbd/basis.hpp"
#include "sbd/errors.hpp"
#include "sbd/gin.hpp"
#include "sbd/graph.hpp"
#include "sbd/optimizer.hpp"
#include "sbd/rng.hpp"
#include "sbd/stats.hpp"

namespace sbd {

// Stage 1: bi-level distillation of the structural basis. The inner loop
// trains a throwaway proxy classifier on the realized prototypes; the outer
// loop updates the prototype parameters by differentiating a combination of
// the proxy's source cross-entropy (through the unrolled inner trajectory),
// the moment-matching geometric term, and the mean Dirichlet-energy gap.

enum class MetaMode { Unrolled, FirstOrder };

/// Inner-loop optimizer. Adam follows the paper's training setup and is
/// differentiated through its moment buffers; plain gradient descent is
/// kept as the cheaper alternative.
enum class InnerOpt { Adam, Gd };

struct DistillConfig {
    int t_inner = 20;
    double lr_inner = 1e-3;
    InnerOpt inner_opt = InnerOpt::Adam;
    double lr_outer = 1e-4;
    double grad_clip = 1.0;
    double lambda1 = 0.7;
    double lambda2 = 0.5;
    int outer_steps = 300;
    int batch_source = 32;
    int batch_target = 64;
    MetaMode meta_mode = MetaMode::Unrolled;
    std::uint64_t seed = 0;
    int k = 30;
    int n_syn = 0; // 0 -> median source node count
    ModelConfig model;
    bool ablate_sem = false;
    std::optional<MomentWeights> gamma_override;
    double convergence_tol = 1e-4;
    int convergence_window = 20;

    void validate() const {
        if (t_inner < 0) throw invalid_input("distill: T_inner must be >= 0");
        if (lr_inner <= 0.0 || lr_outer <= 0.0) throw invalid_input("distill: rates must be > 0");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw invalid_input("distill: lambdas must be >= 0");
        if (grad_clip <= 0.0) throw invalid_input("distill: grad_clip must be > 0");
        if (outer_steps < 1) throw invalid_input("distill: outer_steps must be >= 1");
        if (batch_source < 1 || batch_target < 1)
            throw invalid_input("distill: batch sizes must be >= 1");
        if (k < 1) throw invalid_input("distill: K must be >= 1");
    }
};

struct TraceRecord {
    int step = 0;
    double l_sem = 0.0, l_geo = 0.0, l_spec = 0.0, total = 0.0;
    std::array<double, 4> moment_gap{0.0, 0.0, 0.0, 0.0};
    double energy_gap = 0.0;
};

struct DistillTrace {
    std::vector<TraceRecord> records;

    void save_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw invalid_input("cannot write trace file: " + path);
        out << "step,L_sem,L_geo,L_spec,total,moment_gap_deg_mean,moment_gap_deg_std,"
               "moment_gap_density,moment_gap_tri,energy_gap\n";
        char buf[512];
        for (const TraceRecord& r : records) {
            std::snprintf(buf, sizeof(buf),
                          "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                          r.l_sem, r.l_geo, r.l_spec, r.total, r.moment_gap[0], r.moment_gap[1],
                          r.moment_gap[2], r.moment_gap[3], r.energy_gap);
            out << buf;
        }
    }
};

/// Raised when a loss goes non-finite; carries the partial trace so the
/// caller can dump it.
struct distill_diverged : std::runtime_error {
    distill_diverged(const std::string& msg, DistillTrace t)
        : std::runtime_error(msg), trace(std::move(t)) {}
    DistillTrace trace;
};

struct DistillResult {
    BasisSet basis;
    DistillTrace trace;
    GinParams final_proxy;
    MomentWeights gamma;
};

inline const char* meta_mode_name(MetaMode m) {
    return m == MetaMode::Unrolled ? "unrolled" : "first_order";
}

inline nlohmann::json distill_config_to_json(const DistillConfig& cfg) {
    nlohmann::json j;
    j["t_inner"] = cfg.t_inner;
    j["lr_inner"] = cfg.lr_inner;
    j["lr_outer"] = cfg.lr_outer;
    j["grad_clip"] = cfg.grad_clip;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["outer_steps"] = cfg.outer_steps;
    j["batch_source"] = cfg.batch_source;
    j["batch_target"] = cfg.batch_target;
    j["meta_mode"] = meta_mode_name(cfg.meta_mode);
    j["inner_opt"] = cfg.inner_opt == InnerOpt::Adam ? "adam" : "gd";
    j["seed"] = cfg.seed;
    j["k"] = cfg.k;
    j["n_syn"] = cfg.n_syn;
    j["ablate_sem"] = cfg.ablate_sem;
    j["model"] = model_config_to_json(cfg.model);
    return j;
}

inline std::vector<ProtoVars> realize_basis(Tape& t, const BasisSet& basis) {
    std::vector<ProtoVars> protos;
    protos.reserve(basis.prototypes.size());
    for (const PrototypeGraph& p : basis.prototypes) protos.push_back(realize(t, p));
    return protos;
}

/// Mean cross-entropy of the proxy over the realized prototypes.
inline Value basis_ce_loss(Tape& t, const std::vector<ProtoVars>& protos, const GinVars& theta,
                           bool train_mode, Rng* dropout_rng) {
    Value acc;
    for (std::size_t k = 0; k < protos.size(); ++k) {
        Value logits = gin_forward(t, theta, protos[k].a, protos[k].x, train_mode, dropout_rng);
        Value ce = cross_entropy(t, logits, protos[k].label);
        acc = k == 0 ? ce : add(acc, ce);
    }
    return affine(acc, 1.0 / static_cast<double>(protos.size()), 0.0);
}

// Adam constants shared by the symbolic and the detached numeric phase.
// kAdamDelta sits inside the square root so dead coordinates (g == 0
// exactly) keep a finite derivative.
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kAdamDelta = 1e-16;

/// T optimizer steps on the prototype cross-entropy. In Unrolled mode
/// every step lives on the tape (including Adam's moment buffers), so
/// outer gradients flow through the whole trajectory; in FirstOrder mode
/// only the last step does and the earlier iterates are computed off-tape
/// as constants.
inline GinVars inner_train(Tape& t, const std::vector<ProtoVars>& protos,
                           const DistillConfig& cfg, std::uint64_t init_seed, Rng& dropout_rng,
                           std::vector<double>* loss_log = nullptr) {
    GinParams start = init_params(cfg.model, init_seed);
    if (cfg.t_inner == 0) return lift_params(t, start);

    auto check_finite = [](double v, int step) {
        if (!std::isfinite(v))
            throw std::runtime_error("inner_train: non-finite loss at inner step " +
                                     std::to_string(step));
    };

    const std::size_t np = start.tensors.size();
    int symbolic_from = 0;
    std::vector<Tensor> m0(np), v0(np); // moment state entering the symbolic phase
    for (std::size_t i = 0; i < np; ++i) {
        m0[i] = Tensor(start.tensors[i].rows(), start.tensors[i].cols());
        v0[i] = Tensor(start.tensors[i].rows(), start.tensors[i].cols());
    }

    if (cfg.meta_mode == MetaMode::FirstOrder) {
        symbolic_from = cfg.t_inner - 1;
        // detached phase on the current realized prototypes, mirroring the
        // symbolic arithmetic exactly
        std::vector<std::pair<Tensor, Tensor>> frozen;
        frozen.reserve(protos.size());
        for (const ProtoVars& p : protos) frozen.emplace_back(p.a.val(), p.x.val());
        for (int step = 0; step < symbolic_from; ++step) {
            Tape scratch;
            GinVars theta = lift_params(scratch, start);
            Value acc;
            for (std::size_t k = 0; k < frozen.size(); ++k) {
                Value logits =
                    gin_forward(scratch, theta, scratch.constant(frozen[k].first),
                                scratch.constant(frozen[k].second), true, &dropout_rng);
                Value ce = cross_entropy(scratch, logits, protos[k].label);
                acc = k == 0 ? ce : add(acc, ce);
            }
            Value loss = affine(acc, 1.0 / static_cast<double>(frozen.size()), 0.0);
            check_finite(loss.item(), step);
            if (loss_log) loss_log->push_back(loss.item());
            scratch.backward(loss);
            if (cfg.inner_opt == InnerOpt::Adam) {
                const double bc1 = 1.0 / (1.0 - std::pow(kAdamBeta1, step + 1));
                const double bc2 = 1.0 / (1.0 - std::pow(kAdamBeta2, step + 1));
                for (std::size_t i = 0; i < np; ++i) {
                    Tensor g = scratch.grad(theta.v[i]);
                    for (std::size_t k = 0; k < g.size(); ++k) {
                        m0[i][k] = kAdamBeta1 * m0[i][k] + (1.0 - kAdamBeta1) * g[k];
                        v0[i][k] = kAdamBeta2 * v0[i][k] + (1.0 - kAdamBeta2) * (g[k] * g[k]);
                        double mhat = m0[i][k] * bc1;
                        double vhat = v0[i][k] * bc2;
                        double denom = std::sqrt(vhat + kAdamDelta) + kAdamEps;
                        double upd = mhat * (1.0 / denom);
                        start.tensors[i][k] -= cfg.lr_inner * upd;
                    }
                }
            } else {
                for (std::size_t i = 0; i < np; ++i) {
                    Tensor g = scratch.grad(theta.v[i]);
                    for (std::size_t k = 0; k < g.size(); ++k)
                        start.tensors[i][k] -= cfg.lr_inner * g[k];
                }
            }
        }
    }

    GinVars theta = lift_params(t, start);
    std::vector<Value> m(np), v(np);
    for (std::size_t i = 0; i < np; ++i) {
        m[i] = t.constant(m0[i]);
        v[i] = t.constant(v0[i]);
    }
    for (int step = symbolic_from; step < cfg.t_inner; ++step) {
        Value loss = basis_ce_loss(t, protos, theta, true, &dropout_rng);
        check_finite(loss.item(), step);
        if (loss_log) loss_log->push_back(loss.item());
        std::vector<Value> grads = t.grad_nodes(loss, theta.v);
        if (cfg.inner_opt == InnerOpt::Adam) {
            const double bc1 = 1.0 / (1.0 - std::pow(kAdamBeta1, step + 1));
            const double bc2 = 1.0 / (1.0 - std::pow(kAdamBeta2, step + 1));
            for (std::size_t i = 0; i < np; ++i) {
                m[i] = add(affine(m[i], kAdamBeta1, 0.0), affine(grads[i], 1.0 - kAdamBeta1, 0.0));
                v[i] = add(affine(v[i], kAdamBeta2, 0.0),
                           affine(square(grads[i]), 1.0 - kAdamBeta2, 0.0));
                Value mhat = affine(m[i], bc1, 0.0);
                Value vhat = affine(v[i], bc2, 0.0);
                Value denom = affine(sqrt(affine(vhat, 1.0, kAdamDelta)), 1.0, kAdamEps);
                Value upd = mul(mhat, reciprocal(denom));
                theta.v[i] = sub(theta.v[i], affine(upd, cfg.lr_inner, 0.0));
            }
        } else {
            for (std::size_t i = 0; i < np; ++i)
                theta.v[i] = sub(theta.v[i], affine(grads[i], cfg.lr_inner, 0.0));
        }
    }
    return theta;
}

/// Mean proxy cross-entropy over a labeled source batch (eval mode).
inline Value sem_loss(Tape& t, const GinVars& theta, const std::vector<const DenseGraph*>& batch) {
    if (batch.empty()) throw invalid_input("sem_loss: empty source batch");
    Value acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const DenseGraph& g = *batch[i];
        if (!g.label) throw invalid_input("sem_loss: unlabeled graph in source batch");
        Value logits =
            gin_forward(t, theta, t.constant(g.adjacency), t.constant(g.features), false, nullptr);
        Value ce = cross_entropy(t, logits, *g.label);
        acc = i == 0 ? ce : add(acc, ce);
    }
    return affine(acc, 1.0 / static_cast<double>(batch.size()), 0.0);
}

/// Moment matching between every prototype and every target graph in the
/// batch, gamma-weighted, averaged over batch and prototypes.
inline Value geo_loss(Tape& t, const std::vector<MomentValues>& proto_moments,
                      const std::vector<MomentVector>& target_batch, const MomentWeights& gamma) {
    if (proto_moments.empty() || target_batch.empty())
        throw invalid_input("geo_loss: empty basis or target batch");
    Value acc;
    bool first = true;
    for (const MomentVector& tm : target_batch) {
        for (const MomentValues& pm : proto_moments) {
            for (int m = 0; m < MomentVector::count; ++m) {
                if (gamma.gamma[m] == 0.0) continue;
                Value gap2 = square(affine(pm[m], 1.0, -tm[m]));
                Value weighted = affine(gap2, gamma.gamma[m], 0.0);
                acc = first ? weighted : add(acc, weighted);
                first = false;
            }
        }
    }
    if (first) return t.scalar(0.0); // all gammas zero
    const double norm =
        1.0 / (static_cast<double>(target_batch.size()) * static_cast<double>(proto_moments.size()));
    return affine(acc, norm, 0.0);
}

inline Value geo_loss(Tape& t, const std::vector<ProtoVars>& protos,
                      const std::vector<MomentVector>& target_batch, const MomentWeights& gamma) {
    std::vector<MomentValues> pm;
    pm.reserve(protos.size());
    for (const ProtoVars& p : protos) pm.push_back(moment_values(t, p.a));
    return geo_loss(t, pm, target_batch, gamma);
}

/// Squared gap between the basis mean Dirichlet energy and the (constant)
/// target mean energy.
inline Value spec_loss(Tape& t, const std::vector<Value>& proto_energies,
                       double target_mean_energy) {
    if (proto_energies.empty()) throw invalid_input("spec_loss: empty basis");
    Value acc;
    for (std::size_t k = 0; k < proto_energies.size(); ++k)
        acc = k == 0 ? proto_energies[k] : add(acc, proto_energies[k]);
    Value mean = affine(acc, 1.0 / static_cast<double>(proto_energies.size()), 0.0);
    return square(affine(mean, 1.0, -target_mean_energy));
}

inline Value spec_loss(Tape& t, const std::vector<ProtoVars>& protos, double target_mean_energy) {
    std::vector<Value> energies;
    energies.reserve(protos.size());
    for (const ProtoVars& p : protos) energies.push_back(dirichlet_energy_value(t, p.a, p.x));
    return spec_loss(t, energies, target_mean_energy);
}

inline std::vector<int> sample_indices(Rng& rng, int population, int batch) {
    if (batch >= population) {
        std::vector<int> all(population);
        for (int i = 0; i < population; ++i) all[i] = i;
        return all;
    }
    std::vector<int> perm = rng.permutation(population);
    perm.resize(batch);
    return perm;
}

inline DistillResult distill(const DomainDataset& source, const DomainDataset& target,
                             DistillConfig cfg) {
    cfg.validate();
    if (source.empty()) throw invalid_input("distill: empty source dataset");
    if (target.empty()) throw invalid_input("distill: empty target dataset");
    if (source.num_classes < 2) throw invalid_input("distill: source needs at least 2 classes");
    if (target.feature_dim != source.feature_dim)
        throw invalid_input("distill: source/target feature_dim mismatch");

    cfg.model.num_classes = source.num_classes;
    cfg.model.feature_dim = source.feature_dim;
    cfg.model.validate();

    BasisSet basis = init_basis(source, cfg.k, cfg.n_syn, sub_seed(cfg.seed, "init"));
    basis.creation_config = distill_config_to_json(cfg);

    const MomentWeights gamma = cfg.gamma_override ? *cfg.gamma_override : default_gamma(target);

    // constant target-side statistics
    std::vector<MomentVector> target_moments;
    target_moments.reserve(target.size());
    MomentVector target_mean_moments;
    double target_mean_energy = 0.0;
    for (const DenseGraph& g : target.graphs) {
        target_moments.push_back(moments(g));
        target_mean_energy += dirichlet_energy(g);
    }
    target_mean_energy /= static_cast<double>(target.size());
    {
        double acc[4] = {0, 0, 0, 0};
        for (const MomentVector& m : target_moments)
            for (int i = 0; i < 4; ++i) acc[i] += m[i];
        target_mean_moments.deg_mean = acc[0] / target.size();
        target_mean_moments.deg_std = acc[1] / target.size();
        target_mean_moments.density = acc[2] / target.size();
        target_mean_moments.tri = acc[3] / target.size();
    }

    Adam outer(cfg.lr_outer);
    Rng data_rng(sub_seed(cfg.seed, "data"));
    const std::uint64_t inner_stream = sub_seed(cfg.seed, "inner");
    const std::uint64_t dropout_stream = sub_seed(cfg.seed, "dropout");

    GinParams proxy_ref = init_params(cfg.model, 0); // canonical names/shapes
    GinParams final_proxy = proxy_ref;
    DistillTrace trace;

    for (int step = 0; step < cfg.outer_steps; ++step) {
        Tape tape;
        std::vector<ProtoVars> protos = realize_basis(tape, basis);

        Rng dropout_rng(sub_seed(dropout_stream, static_cast<std::uint64_t>(step)));
        GinVars theta =
            inner_train(tape, protos, cfg, sub_seed(inner_stream, static_cast<std::uint64_t>(step)),
                        dropout_rng);

        std::vector<int> src_idx =
            sample_indices(data_rng, static_cast<int>(source.size()), cfg.batch_source);
        std::vector<int> tgt_idx =
            sample_indices(data_rng, static_cast<int>(target.size()), cfg.batch_target);
        std::vector<const DenseGraph*> src_batch;
        src_batch.reserve(src_idx.size());
        for (int i : src_idx) src_batch.push_back(&source.graphs[i]);
        std::vector<MomentVector> tgt_batch;
        tgt_batch.reserve(tgt_idx.size());
        for (int i : tgt_idx) tgt_batch.push_back(target_moments[i]);

        std::vector<MomentValues> proto_moments;
        proto_moments.reserve(protos.size());
        for (const ProtoVars& p : protos) proto_moments.push_back(moment_values(tape, p.a));
        std::vector<Value> proto_energies;
        proto_energies.reserve(protos.size());
        for (const ProtoVars& p : protos)
            proto_energies.push_back(dirichlet_energy_value(tape, p.a, p.x));

        Value l_sem = sem_loss(tape, theta, src_batch);
        Value l_geo = geo_loss(tape, proto_moments, tgt_batch, gamma);
        Value l_spec = spec_loss(tape, proto_energies, target_mean_energy);

        Value total = add(affine(l_geo, cfg.lambda1, 0.0), affine(l_spec, cfg.lambda2, 0.0));
        if (!cfg.ablate_sem) total = add(l_sem, total);

        TraceRecord rec;
        rec.step = step;
        rec.l_sem = l_sem.item();
        rec.l_geo = l_geo.item();
        rec.l_spec = l_spec.item();
        rec.total = total.item();
        for (int m = 0; m < 4; ++m) {
            double basis_mean = 0.0;
            for (const MomentValues& pm : proto_moments) basis_mean += pm[m].item();
            basis_mean /= static_cast<double>(proto_moments.size());
            rec.moment_gap[m] = std::fabs(basis_mean - target_mean_moments[m]);
        }
        {
            double basis_energy = 0.0;
            for (const Value& e : proto_energies) basis_energy += e.item();
            basis_energy /= static_cast<double>(proto_energies.size());
            rec.energy_gap = std::fabs(basis_energy - target_mean_energy);
        }
        trace.records.push_back(rec);

        if (!std::isfinite(rec.total))
            throw distill_diverged("distill: non-finite outer loss at step " +
                                       std::to_string(step),
                                   std::move(trace));

        tape.backward(total);
        std::vector<Tensor> grads;
        std::vector<Tensor*> params;
        grads.reserve(2 * protos.size());
        params.reserve(2 * protos.size());
        for (std::size_t k = 0; k < protos.size(); ++k) {
            grads.push_back(tape.grad(protos[k].adj_logits));
            params.push_back(&basis.prototypes[k].adj_logits);
            grads.push_back(tape.grad(protos[k].feat_params));
            params.push_back(&basis.prototypes[k].feat_params);
        }
        clip_global_norm(grads, cfg.grad_clip);
        outer.step(params, grads);

        final_proxy = materialize_params(theta, proxy_ref);

        // converged when the mean total loss of the two halves of the
        // trailing window agree; half-window means keep batch noise from
        // triggering a spurious stop
        const int w = cfg.convergence_window;
        if (w > 1 && step + 1 >= w) {
            const int half = w / 2;
            double recent = 0.0, older = 0.0;
            for (int i = 0; i < half; ++i) {
                recent += trace.records[step - i].total;
                older += trace.records[step - half - i].total;
            }
            recent /= half;
            older /= half;
            if (std::fabs(recent - older) / std::max(std::fabs(older), 1e-12) <
                cfg.convergence_tol)
                break;
        }
    }

    DistillResult result;
    result.basis = std::move(basis);
    result.trace = std::move(trace);
    result.final_proxy = std::move(final_proxy);
    result.gamma = gamma;
    return result;
}

} // namespace sbd
