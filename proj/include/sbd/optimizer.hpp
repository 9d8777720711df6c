#pragma once

#include <cmath>
#include <vector>

#include "sbd/tensor.hpp"

namespace sbd {

/// Adam with bias correction; state buffers are lazily shaped on first step.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
                v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
                p[k] -= lr_ * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Scale gradients so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (std::size_t k = 0; k < g.size(); ++k) sq += g[k] * g[k];
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (Tensor& g : grads)
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= scale;
    }
    return norm;
}

} // namespace sbd
