#include "ecfnet/optim.hpp"

#include <cmath>

namespace ecfnet {

Adam::Adam(const ParamRegistry& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::size_t n = static_cast<std::size_t>(params_[i]->value.numel());
        m_[i].assign(n, 0);
        v_[i].assign(n, 0);
    }
}

void Adam::step(const std::vector<std::vector<scalar>>& grads, double lr) {
    if (grads.size() != params_.size())
        throw Error("Adam::step: gradient list size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i]->value.data;
        const auto& g = grads[i];
        if (g.empty()) continue;  // no gradient reached this parameter
        if (g.size() != p.size())
            throw Error("Adam::step: gradient shape mismatch for " + params_[i]->name);
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr_init, double lr_final) {
    if (step >= total) return lr_final;
    if (step < 0) step = 0;
    const double t = static_cast<double>(step) / static_cast<double>(total);
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(M_PI * t));
}

}  // namespace ecfnet
