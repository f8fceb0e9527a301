#ifndef ECFNET_METRICS_HPP
#define ECFNET_METRICS_HPP

#include "ecfnet/tensor.hpp"

namespace ecfnet {

// 10*log10(peak^2 / MSE); +infinity when the images are identical.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);

double mae(const Tensor& pred, const Tensor& target);

// Mean SSIM over 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03),
// valid windows only, averaged over channels.
double ssim(const Tensor& pred, const Tensor& target, double peak = 1.0);

}  // namespace ecfnet

#endif
