#ifndef ECFNET_OPS_HPP
#define ECFNET_OPS_HPP

#include <utility>
#include <vector>

#include "ecfnet/tensor.hpp"

namespace ecfnet {

enum class PadMode { Zeros, Replicate };

struct ConvOpts {
    int stride = 1;
    int pad = 0;
    int groups = 1;
    PadMode mode = PadMode::Zeros;
};

// Axis subset of {channel, height, width} for reductions/softmax.
struct AxisSet {
    bool c = false, h = false, w = false;
    bool any() const { return c || h || w; }
};

// ---- elementwise (broadcasting over size-1 axes) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, scalar s);
Tensor add_scalar(const Tensor& a, scalar s);
Tensor sqrt_elem(const Tensor& a);
Tensor abs_elem(const Tensor& a);

// ---- layout ----
Tensor reshape(const Tensor& a, Shape s);
Tensor concat_c(const std::vector<Tensor>& parts);
Tensor slice_c(const Tensor& a, int c_lo, int c_hi);

// ---- neural primitives ----
// w: (out_c, in_c/groups, kh, kw); b: (1, out_c, 1, 1) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvOpts& opts);
// k odd; replicate padding (k-1)/2; output (n, c*k*k, h, w), patch entries
// ordered channel-major then row-major.
Tensor unfold(const Tensor& x, int k);
Tensor reduce_mean(const Tensor& x, AxisSet axes);
Tensor reduce_max(const Tensor& x, AxisSet axes);
// gain/bias: (1,c,1,1); normalizes over the channel axis per (n,y,x).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, scalar eps = 1e-6);
// Supported axis sets: {c} and {h,w}.
Tensor softmax(const Tensor& x, AxisSet axes);
Tensor avg_downsample(const Tensor& x, int r);
// (n, c*r*r, h, w) -> (n, c, h*r, w*r); channel block dy*r+dx -> offset (dy,dx).
Tensor depth_to_space(const Tensor& x, int r);

// ---- spectral ----
struct Complex2d {
    Tensor re, im;
};
// Unnormalized forward DFT per (n,c) plane; h, w must be powers of two.
Complex2d fft2d(const Tensor& x);
// Inverse (normalized by 1/(h*w)); for testing round trips. Not differentiable.
Tensor ifft2d(const Complex2d& f);
Tensor pad_hw_zero(const Tensor& x, int H, int W);

// ---- attention helpers ----
// unfolded: (n, c*k*k, h, w); filters: (n, g, k, k); channels split into g
// contiguous groups. Output (n, c, h, w) = per-pixel dot of each patch with
// its group's filter.
Tensor apply_filter_bank(const Tensor& unfolded, const Tensor& filters, int channels);

// ---- reductions to scalar ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- image resampling (constant tensors only, not differentiable) ----
Tensor bilinear_resize(const Tensor& x, int H, int W);

// Multiply-accumulate counter over conv2d forward calls (for FLOPs
// accounting); single-threaded like the kernels themselves.
void reset_mac_counter();
std::int64_t mac_counter();

}  // namespace ecfnet

#endif
