#include "ecfnet/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace ecfnet {
namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw Error(std::string(op) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& target, double peak) {
    check_same(pred, target, "psnr");
    double mse = 0;
    const std::int64_t ne = pred.numel();
    for (std::int64_t i = 0; i < ne; ++i) {
        const double d = (*pred.data)[static_cast<std::size_t>(i)] - (*target.data)[static_cast<std::size_t>(i)];
        mse += d * d;
    }
    mse /= static_cast<double>(ne);
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double mae(const Tensor& pred, const Tensor& target) {
    check_same(pred, target, "mae");
    double s = 0;
    const std::int64_t ne = pred.numel();
    for (std::int64_t i = 0; i < ne; ++i)
        s += std::abs((*pred.data)[static_cast<std::size_t>(i)] - (*target.data)[static_cast<std::size_t>(i)]);
    return s / static_cast<double>(ne);
}

double ssim(const Tensor& pred, const Tensor& target, double peak) {
    check_same(pred, target, "ssim");
    constexpr int win = 11;
    constexpr double sigma = 1.5;
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const Shape& s = pred.shape;
    if (s.h < win || s.w < win)
        throw Error("ssim: image smaller than the 11x11 window, got " + s.str());

    double g[win * win];
    double gsum = 0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - win / 2, dx = x - win / 2;
            g[y * win + x] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            gsum += g[y * win + x];
        }
    for (double& v : g) v /= gsum;

    double acc = 0;
    std::int64_t count = 0;
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const scalar* a = pred.ptr() + (static_cast<std::int64_t>(n) * s.c + c) * plane;
            const scalar* b = target.ptr() + (static_cast<std::int64_t>(n) * s.c + c) * plane;
            for (int y = 0; y + win <= s.h; ++y)
                for (int x = 0; x + win <= s.w; ++x) {
                    double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
                    for (int wy = 0; wy < win; ++wy)
                        for (int wx = 0; wx < win; ++wx) {
                            const double wv = g[wy * win + wx];
                            const double av = a[(y + wy) * s.w + (x + wx)];
                            const double bv = b[(y + wy) * s.w + (x + wx)];
                            ma += wv * av;
                            mb += wv * bv;
                            va += wv * av * av;
                            vb += wv * bv * bv;
                            cov += wv * av * bv;
                        }
                    va -= ma * ma;
                    vb -= mb * mb;
                    cov -= ma * mb;
                    acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
        }
    return acc / static_cast<double>(count);
}

}  // namespace ecfnet
