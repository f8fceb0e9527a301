#ifndef ECFNET_OPTIM_HPP
#define ECFNET_OPTIM_HPP

#include <vector>

#include "ecfnet/param.hpp"

namespace ecfnet {

// Bias-corrected Adam over a fixed parameter list.
class Adam {
public:
    Adam(const ParamRegistry& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // grads[i] matches params[i] element for element; lr is per-step.
    void step(const std::vector<std::vector<scalar>>& grads, double lr);

    std::int64_t step_count() const { return t_; }

private:
    ParamRegistry params_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<scalar>> m_, v_;
};

// Cosine annealing from lr_init (step 0) to lr_final (step == total);
// steps past total clamp to lr_final.
double cosine_lr(std::int64_t step, std::int64_t total, double lr_init, double lr_final);

}  // namespace ecfnet

#endif
