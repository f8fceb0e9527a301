#ifndef ECFNET_LOSS_HPP
#define ECFNET_LOSS_HPP

#include <vector>

#include "ecfnet/ops.hpp"

namespace ecfnet {

struct LossWeights {
    scalar eps = 0.001;
    scalar lambda = 0.1;  // frequency term
    scalar delta = 0.05;  // edge term
};

// Mean over all elements of sqrt(d^2 + eps^2).
Tensor charbonnier(const Tensor& pred, const Tensor& target, scalar eps);

// Charbonnier distance between per-channel Laplacians (3x3 kernel
// [[0,1,0],[1,-4,1],[0,1,0]], replicate padding).
Tensor edge_loss(const Tensor& pred, const Tensor& target, scalar eps);

// Mean absolute difference over the real and imaginary parts of the 2-D
// DFTs; inputs zero-padded to the next power of two per side.
Tensor freq_loss(const Tensor& pred, const Tensor& target);

// Sum over heads of L_c + delta * L_e + lambda * L_f.
Tensor total_loss(const std::vector<Tensor>& outputs, const std::vector<Tensor>& targets,
                  const LossWeights& w = {});

}  // namespace ecfnet

#endif
