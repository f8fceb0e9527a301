#include "ecfnet/loss.hpp"

namespace ecfnet {
namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw Error(std::string(op) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
}

int next_pow2(int v) {
    int p = 1;
    while (p < v) p <<= 1;
    return p;
}

// Depthwise Laplacian with a fixed (non-learnable) kernel.
Tensor laplacian(const Tensor& x) {
    const int c = x.shape.c;
    Tensor k = Tensor::zeros(Shape{c, 1, 3, 3});
    for (int ch = 0; ch < c; ++ch) {
        scalar* kp = k.ptr() + ch * 9;
        kp[1] = 1;
        kp[3] = 1;
        kp[4] = -4;
        kp[5] = 1;
        kp[7] = 1;
    }
    ConvOpts o;
    o.pad = 1;
    o.groups = c;
    o.mode = PadMode::Replicate;
    return conv2d(x, k, Tensor{}, o);
}

}  // namespace

Tensor charbonnier(const Tensor& pred, const Tensor& target, scalar eps) {
    check_same(pred, target, "charbonnier");
    Tensor d = sub(pred, target);
    return mean_all(sqrt_elem(add_scalar(mul(d, d), eps * eps)));
}

Tensor edge_loss(const Tensor& pred, const Tensor& target, scalar eps) {
    check_same(pred, target, "edge_loss");
    return charbonnier(laplacian(pred), laplacian(target), eps);
}

Tensor freq_loss(const Tensor& pred, const Tensor& target) {
    check_same(pred, target, "freq_loss");
    const int H = next_pow2(pred.shape.h);
    const int W = next_pow2(pred.shape.w);
    Complex2d fp = fft2d(pad_hw_zero(pred, H, W));
    Complex2d ft = fft2d(pad_hw_zero(target, H, W));
    Tensor re = mean_all(abs_elem(sub(fp.re, ft.re)));
    Tensor im = mean_all(abs_elem(sub(fp.im, ft.im)));
    return scale(add(re, im), 0.5);
}

Tensor total_loss(const std::vector<Tensor>& outputs, const std::vector<Tensor>& targets,
                  const LossWeights& w) {
    if (outputs.size() != targets.size())
        throw Error("total_loss: " + std::to_string(outputs.size()) + " outputs vs " +
                    std::to_string(targets.size()) + " targets");
    if (outputs.empty()) throw Error("total_loss: no outputs");
    Tensor total;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        Tensor term = add(charbonnier(outputs[i], targets[i], w.eps),
                          add(scale(edge_loss(outputs[i], targets[i], w.eps), w.delta),
                              scale(freq_loss(outputs[i], targets[i]), w.lambda)));
        total = i == 0 ? term : add(total, term);
    }
    return total;
}

}  // namespace ecfnet
