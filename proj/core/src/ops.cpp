#include "ecfnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <limits>

namespace ecfnet {
namespace {

bool broadcastable(int a, int b) { return a == b || a == 1 || b == 1; }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (!broadcastable(a.n, b.n) || !broadcastable(a.c, b.c) ||
        !broadcastable(a.h, b.h) || !broadcastable(a.w, b.w))
        throw Error(std::string(op) + ": shapes " + a.str() + " and " + b.str() + " do not broadcast");
    return Shape{std::max(a.n, b.n), std::max(a.c, b.c), std::max(a.h, b.h), std::max(a.w, b.w)};
}

inline std::int64_t offset(const Shape& s, int n, int c, int y, int x) {
    return ((static_cast<std::int64_t>(n % s.n) * s.c + (c % s.c)) * s.h + (y % s.h)) * s.w + (x % s.w);
}

// Elementwise binary with broadcasting; fwd(av, bv) and per-operand
// gradient factors supplied by the caller.
template <class Fwd>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                        std::function<void(Tape&, int, const Tensor&, const Tensor&, int, int)> back) {
    Shape os = broadcast_shape(a.shape, b.shape, name);
    Tensor out = Tensor::zeros(os);
    const scalar* ap = a.ptr();
    const scalar* bp = b.ptr();
    scalar* op = out.ptr();
    std::int64_t i = 0;
    for (int n = 0; n < os.n; ++n)
        for (int c = 0; c < os.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int x = 0; x < os.w; ++x, ++i)
                    op[i] = fwd(ap[offset(a.shape, n, c, y, x)], bp[offset(b.shape, n, c, y, x)]);
    TapePtr tape = joint_tape({&a, &b});
    if (tape) {
        Tensor av = a, bv = b;
        int an = a.node, bn = b.node;
        out.tape = tape;
        out.node = tape->add_node(os, [av, bv, an, bn, back](Tape& t, int self) {
            back(t, self, av, bv, an, bn);
        });
    }
    return out;
}

// Accumulates gout (shaped `os`) into the gradient of an operand with
// shape `s`, scaling each element by factor(out_index).
template <class Factor>
void reduce_into(Tape& t, int node, const Shape& s, const Shape& os, const std::vector<scalar>& gout,
                 Factor factor) {
    if (node < 0) return;
    auto& g = t.grad(node);
    std::int64_t i = 0;
    for (int n = 0; n < os.n; ++n)
        for (int c = 0; c < os.c; ++c)
            for (int y = 0; y < os.h; ++y)
                for (int x = 0; x < os.w; ++x, ++i)
                    g[static_cast<std::size_t>(offset(s, n, c, y, x))] += gout[static_cast<std::size_t>(i)] * factor(i);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "add", [](scalar x, scalar y) { return x + y; },
        [](Tape& t, int self, const Tensor& av, const Tensor& bv, int an, int bn) {
            const auto& go = t.grad(self);
            Shape os = broadcast_shape(av.shape, bv.shape, "add");
            reduce_into(t, an, av.shape, os, go, [](std::int64_t) { return scalar(1); });
            reduce_into(t, bn, bv.shape, os, go, [](std::int64_t) { return scalar(1); });
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "sub", [](scalar x, scalar y) { return x - y; },
        [](Tape& t, int self, const Tensor& av, const Tensor& bv, int an, int bn) {
            const auto& go = t.grad(self);
            Shape os = broadcast_shape(av.shape, bv.shape, "sub");
            reduce_into(t, an, av.shape, os, go, [](std::int64_t) { return scalar(1); });
            reduce_into(t, bn, bv.shape, os, go, [](std::int64_t) { return scalar(-1); });
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "mul", [](scalar x, scalar y) { return x * y; },
        [](Tape& t, int self, const Tensor& av, const Tensor& bv, int an, int bn) {
            const auto& go = t.grad(self);
            Shape os = broadcast_shape(av.shape, bv.shape, "mul");
            const scalar* ap = av.ptr();
            const scalar* bp = bv.ptr();
            if (an >= 0) {
                auto& g = t.grad(an);
                std::int64_t i = 0;
                for (int n = 0; n < os.n; ++n)
                    for (int c = 0; c < os.c; ++c)
                        for (int y = 0; y < os.h; ++y)
                            for (int x = 0; x < os.w; ++x, ++i)
                                g[static_cast<std::size_t>(offset(av.shape, n, c, y, x))] +=
                                    go[static_cast<std::size_t>(i)] * bp[offset(bv.shape, n, c, y, x)];
            }
            if (bn >= 0) {
                auto& g = t.grad(bn);
                std::int64_t i = 0;
                for (int n = 0; n < os.n; ++n)
                    for (int c = 0; c < os.c; ++c)
                        for (int y = 0; y < os.h; ++y)
                            for (int x = 0; x < os.w; ++x, ++i)
                                g[static_cast<std::size_t>(offset(bv.shape, n, c, y, x))] +=
                                    go[static_cast<std::size_t>(i)] * ap[offset(av.shape, n, c, y, x)];
            }
        });
}

namespace {

template <class Fwd, class Grad>
Tensor unary_elem(const Tensor& a, Fwd fwd, Grad grad_factor) {
    Tensor out = Tensor::zeros(a.shape);
    const scalar* ap = a.ptr();
    scalar* op = out.ptr();
    std::int64_t ne = a.numel();
    for (std::int64_t i = 0; i < ne; ++i) op[i] = fwd(ap[i]);
    if (a.tracked()) {
        Tensor av = a;
        int an = a.node;
        out.tape = a.tape;
        out.node = a.tape->add_node(a.shape, [av, an, grad_factor](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(an);
            const scalar* p = av.ptr();
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * grad_factor(p[i]);
        });
    }
    return out;
}

}  // namespace

Tensor scale(const Tensor& a, scalar s) {
    return unary_elem(a, [s](scalar x) { return x * s; }, [s](scalar) { return s; });
}

Tensor add_scalar(const Tensor& a, scalar s) {
    return unary_elem(a, [s](scalar x) { return x + s; }, [](scalar) { return scalar(1); });
}

Tensor sqrt_elem(const Tensor& a) {
    return unary_elem(a, [](scalar x) { return std::sqrt(x); },
                      [](scalar x) { return scalar(0.5) / std::sqrt(x); });
}

Tensor abs_elem(const Tensor& a) {
    return unary_elem(a, [](scalar x) { return std::abs(x); },
                      [](scalar x) { return x > 0 ? scalar(1) : (x < 0 ? scalar(-1) : scalar(0)); });
}

Tensor reshape(const Tensor& a, Shape s) {
    if (s.numel() != a.numel())
        throw Error("reshape: element count mismatch, " + a.shape.str() + " -> " + s.str());
    Tensor out;
    out.shape = s;
    out.data = a.data;
    if (a.tracked()) {
        int an = a.node;
        out.tape = a.tape;
        out.node = a.tape->add_node(s, [an](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(an);
            for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
        });
    }
    return out;
}

Tensor concat_c(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error("concat_c: no inputs");
    Shape s0 = parts[0].shape;
    int total_c = 0;
    for (const auto& p : parts) {
        if (p.shape.n != s0.n || p.shape.h != s0.h || p.shape.w != s0.w)
            throw Error("concat_c: mismatched non-channel dims, " + s0.str() + " vs " + p.shape.str());
        total_c += p.shape.c;
    }
    Shape os{s0.n, total_c, s0.h, s0.w};
    Tensor out = Tensor::zeros(os);
    std::int64_t plane = static_cast<std::int64_t>(s0.h) * s0.w;
    for (int n = 0; n < os.n; ++n) {
        int coff = 0;
        for (const auto& p : parts) {
            std::memcpy(out.ptr() + (static_cast<std::int64_t>(n) * total_c + coff) * plane,
                        p.ptr() + static_cast<std::int64_t>(n) * p.shape.c * plane,
                        static_cast<std::size_t>(p.shape.c * plane) * sizeof(scalar));
            coff += p.shape.c;
        }
    }
    std::vector<const Tensor*> ptrs;
    TapePtr tape;
    for (const auto& p : parts) {
        if (p.tracked()) {
            if (tape && tape != p.tape) throw Error("concat_c: inputs on different tapes");
            tape = p.tape;
        }
    }
    if (tape) {
        std::vector<int> nodes;
        std::vector<int> chans;
        for (const auto& p : parts) {
            nodes.push_back(p.node);
            chans.push_back(p.shape.c);
        }
        out.tape = tape;
        out.node = tape->add_node(os, [nodes, chans, os, plane](Tape& t, int self) {
            const auto& go = t.grad(self);
            for (int n = 0; n < os.n; ++n) {
                int coff = 0;
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                    if (nodes[k] >= 0) {
                        auto& g = t.grad(nodes[k]);
                        const scalar* src = go.data() + (static_cast<std::int64_t>(n) * os.c + coff) * plane;
                        scalar* dst = g.data() + static_cast<std::int64_t>(n) * chans[k] * plane;
                        std::int64_t cnt = static_cast<std::int64_t>(chans[k]) * plane;
                        for (std::int64_t i = 0; i < cnt; ++i) dst[i] += src[i];
                    }
                    coff += chans[k];
                }
            }
        });
    }
    return out;
}

Tensor slice_c(const Tensor& a, int c_lo, int c_hi) {
    if (c_lo < 0 || c_hi > a.shape.c || c_lo >= c_hi)
        throw Error("slice_c: bad channel range [" + std::to_string(c_lo) + "," + std::to_string(c_hi) +
                    ") for " + a.shape.str());
    Shape os{a.shape.n, c_hi - c_lo, a.shape.h, a.shape.w};
    Tensor out = Tensor::zeros(os);
    std::int64_t plane = static_cast<std::int64_t>(a.shape.h) * a.shape.w;
    for (int n = 0; n < os.n; ++n)
        std::memcpy(out.ptr() + static_cast<std::int64_t>(n) * os.c * plane,
                    a.ptr() + (static_cast<std::int64_t>(n) * a.shape.c + c_lo) * plane,
                    static_cast<std::size_t>(os.c * plane) * sizeof(scalar));
    if (a.tracked()) {
        int an = a.node;
        Shape as = a.shape;
        out.tape = a.tape;
        out.node = a.tape->add_node(os, [an, as, os, c_lo, plane](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(an);
            for (int n = 0; n < os.n; ++n) {
                const scalar* src = go.data() + static_cast<std::int64_t>(n) * os.c * plane;
                scalar* dst = g.data() + (static_cast<std::int64_t>(n) * as.c + c_lo) * plane;
                std::int64_t cnt = static_cast<std::int64_t>(os.c) * plane;
                for (std::int64_t i = 0; i < cnt; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- conv2d

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct ConvDims {
    int n, in_c, h, w;
    int oc, icg, kh, kw;
    int ocg;
    int oh, ow;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, const ConvOpts& o) {
    ConvDims d{};
    d.n = xs.n; d.in_c = xs.c; d.h = xs.h; d.w = xs.w;
    d.oc = ws.n; d.icg = ws.c; d.kh = ws.h; d.kw = ws.w;
    if (o.groups <= 0) throw Error("conv2d: groups must be positive");
    if (d.in_c % o.groups != 0)
        throw Error("conv2d: input channels " + std::to_string(d.in_c) + " not divisible by groups " +
                    std::to_string(o.groups));
    if (d.oc % o.groups != 0)
        throw Error("conv2d: output channels " + std::to_string(d.oc) + " not divisible by groups " +
                    std::to_string(o.groups));
    if (d.icg != d.in_c / o.groups)
        throw Error("conv2d: kernel expects " + std::to_string(d.icg) + " channels per group, input has " +
                    std::to_string(d.in_c / o.groups) + " (channel axis mismatch)");
    if (d.h + 2 * o.pad < d.kh || d.w + 2 * o.pad < d.kw)
        throw Error("conv2d: spatial dims " + xs.str() + " smaller than kernel after padding");
    d.ocg = d.oc / o.groups;
    d.oh = (d.h + 2 * o.pad - d.kh) / o.stride + 1;
    d.ow = (d.w + 2 * o.pad - d.kw) / o.stride + 1;
    return d;
}

void conv_forward(const scalar* x, const scalar* w, const scalar* b, scalar* y,
                  const ConvDims& d, const ConvOpts& o) {
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;
    const bool rep = o.mode == PadMode::Replicate;
    for (int n = 0; n < d.n; ++n) {
        for (int g = 0; g < o.groups; ++g) {
            for (int ol = 0; ol < d.ocg; ++ol) {
                const int oc = g * d.ocg + ol;
                scalar* yp = y + (static_cast<std::int64_t>(n) * d.oc + oc) * out_plane;
                const scalar bias = b ? b[oc] : scalar(0);
                for (std::int64_t i = 0; i < out_plane; ++i) yp[i] = bias;
                for (int il = 0; il < d.icg; ++il) {
                    const int ic = g * d.icg + il;
                    const scalar* xp = x + (static_cast<std::int64_t>(n) * d.in_c + ic) * in_plane;
                    const scalar* wp = w + ((static_cast<std::int64_t>(oc) * d.icg + il) * d.kh) * d.kw;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const scalar wv = wp[ky * d.kw + kx];
                            if (wv == scalar(0)) continue;
                            for (int oy = 0; oy < d.oh; ++oy) {
                                int iy = oy * o.stride - o.pad + ky;
                                if (iy < 0 || iy >= d.h) {
                                    if (!rep) continue;
                                    iy = clampi(iy, 0, d.h - 1);
                                }
                                scalar* yrow = yp + static_cast<std::int64_t>(oy) * d.ow;
                                const scalar* xrow = xp + static_cast<std::int64_t>(iy) * d.w;
                                if (o.stride == 1) {
                                    const int lo = std::max(0, o.pad - kx);
                                    const int hi = std::min(d.ow, d.w + o.pad - kx);
                                    if (rep) {
                                        for (int ox = 0; ox < lo; ++ox) yrow[ox] += wv * xrow[0];
                                        for (int ox = hi; ox < d.ow; ++ox) yrow[ox] += wv * xrow[d.w - 1];
                                    }
                                    const scalar* xs2 = xrow - o.pad + kx;
                                    for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xs2[ox];
                                } else {
                                    for (int ox = 0; ox < d.ow; ++ox) {
                                        int ix = ox * o.stride - o.pad + kx;
                                        if (ix < 0 || ix >= d.w) {
                                            if (!rep) continue;
                                            ix = clampi(ix, 0, d.w - 1);
                                        }
                                        yrow[ox] += wv * xrow[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const scalar* x, const scalar* w, const scalar* gy,
                   scalar* gx, scalar* gw, scalar* gb,
                   const ConvDims& d, const ConvOpts& o) {
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;
    const bool rep = o.mode == PadMode::Replicate;
    for (int n = 0; n < d.n; ++n) {
        for (int g = 0; g < o.groups; ++g) {
            for (int ol = 0; ol < d.ocg; ++ol) {
                const int oc = g * d.ocg + ol;
                const scalar* gyp = gy + (static_cast<std::int64_t>(n) * d.oc + oc) * out_plane;
                if (gb) {
                    scalar s = 0;
                    for (std::int64_t i = 0; i < out_plane; ++i) s += gyp[i];
                    gb[oc] += s;
                }
                for (int il = 0; il < d.icg; ++il) {
                    const int ic = g * d.icg + il;
                    const scalar* xp = x + (static_cast<std::int64_t>(n) * d.in_c + ic) * in_plane;
                    scalar* gxp = gx ? gx + (static_cast<std::int64_t>(n) * d.in_c + ic) * in_plane : nullptr;
                    const scalar* wp = w + ((static_cast<std::int64_t>(oc) * d.icg + il) * d.kh) * d.kw;
                    scalar* gwp = gw ? gw + ((static_cast<std::int64_t>(oc) * d.icg + il) * d.kh) * d.kw : nullptr;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const scalar wv = wp[ky * d.kw + kx];
                            scalar wsum = 0;
                            for (int oy = 0; oy < d.oh; ++oy) {
                                int iy = oy * o.stride - o.pad + ky;
                                if (iy < 0 || iy >= d.h) {
                                    if (!rep) continue;
                                    iy = clampi(iy, 0, d.h - 1);
                                }
                                const scalar* gyrow = gyp + static_cast<std::int64_t>(oy) * d.ow;
                                const scalar* xrow = xp + static_cast<std::int64_t>(iy) * d.w;
                                scalar* gxrow = gxp ? gxp + static_cast<std::int64_t>(iy) * d.w : nullptr;
                                if (o.stride == 1) {
                                    const int lo = std::max(0, o.pad - kx);
                                    const int hi = std::min(d.ow, d.w + o.pad - kx);
                                    if (rep) {
                                        for (int ox = 0; ox < lo; ++ox) {
                                            wsum += xrow[0] * gyrow[ox];
                                            if (gxrow) gxrow[0] += wv * gyrow[ox];
                                        }
                                        for (int ox = hi; ox < d.ow; ++ox) {
                                            wsum += xrow[d.w - 1] * gyrow[ox];
                                            if (gxrow) gxrow[d.w - 1] += wv * gyrow[ox];
                                        }
                                    }
                                    const scalar* xs2 = xrow - o.pad + kx;
                                    scalar* gxs2 = gxrow ? gxrow - o.pad + kx : nullptr;
                                    if (gxs2) {
                                        for (int ox = lo; ox < hi; ++ox) {
                                            wsum += xs2[ox] * gyrow[ox];
                                            gxs2[ox] += wv * gyrow[ox];
                                        }
                                    } else {
                                        for (int ox = lo; ox < hi; ++ox) wsum += xs2[ox] * gyrow[ox];
                                    }
                                } else {
                                    for (int ox = 0; ox < d.ow; ++ox) {
                                        int ix = ox * o.stride - o.pad + kx;
                                        if (ix < 0 || ix >= d.w) {
                                            if (!rep) continue;
                                            ix = clampi(ix, 0, d.w - 1);
                                        }
                                        wsum += xrow[ix] * gyrow[ox];
                                        if (gxrow) gxrow[ix] += wv * gyrow[ox];
                                    }
                                }
                            }
                            if (gwp) gwp[ky * d.kw + kx] += wsum;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

namespace {
std::int64_t g_conv_macs = 0;
}

void reset_mac_counter() { g_conv_macs = 0; }
std::int64_t mac_counter() { return g_conv_macs; }

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvOpts& opts) {
    ConvDims d = conv_dims(x.shape, w.shape, opts);
    g_conv_macs += static_cast<std::int64_t>(d.n) * d.oc * d.icg * d.kh * d.kw * d.oh * d.ow;
    if (b.defined() && (b.shape.c != d.oc || b.shape.n != 1 || b.shape.h != 1 || b.shape.w != 1))
        throw Error("conv2d: bias shape " + b.shape.str() + " does not match out_c " + std::to_string(d.oc));
    Shape os{d.n, d.oc, d.oh, d.ow};
    Tensor out = Tensor::zeros(os);
    conv_forward(x.ptr(), w.ptr(), b.defined() ? b.ptr() : nullptr, out.ptr(), d, opts);
    TapePtr tape = b.defined() ? joint_tape({&x, &w, &b}) : joint_tape({&x, &w});
    if (tape) {
        Tensor xv = x, wv = w, bv = b;
        int xn = x.node, wn = w.node, bn = b.defined() ? b.node : -1;
        ConvOpts o = opts;
        out.tape = tape;
        out.node = tape->add_node(os, [xv, wv, bv, xn, wn, bn, d, o](Tape& t, int self) {
            const auto& go = t.grad(self);
            scalar* gx = xn >= 0 ? t.grad(xn).data() : nullptr;
            scalar* gw = wn >= 0 ? t.grad(wn).data() : nullptr;
            scalar* gb = bn >= 0 ? t.grad(bn).data() : nullptr;
            conv_backward(xv.ptr(), wv.ptr(), go.data(), gx, gw, gb, d, o);
        });
    }
    return out;
}

// ---------------------------------------------------------------- unfold

Tensor unfold(const Tensor& x, int k) {
    if (k % 2 == 0) throw Error("unfold: kernel size must be odd, got " + std::to_string(k));
    const int p = (k - 1) / 2;
    const Shape& s = x.shape;
    Shape os{s.n, s.c * k * k, s.h, s.w};
    Tensor out = Tensor::zeros(os);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    const std::int64_t oco = (c * k + dy) * k + dx;
                    scalar* dst = op + (static_cast<std::int64_t>(n) * os.c + oco) * plane;
                    const scalar* src = xp + (static_cast<std::int64_t>(n) * s.c + c) * plane;
                    for (int y = 0; y < s.h; ++y) {
                        const int iy = clampi(y - p + dy, 0, s.h - 1);
                        const scalar* srow = src + static_cast<std::int64_t>(iy) * s.w;
                        scalar* drow = dst + static_cast<std::int64_t>(y) * s.w;
                        for (int xx = 0; xx < s.w; ++xx)
                            drow[xx] = srow[clampi(xx - p + dx, 0, s.w - 1)];
                    }
                }
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, xs, k, p, plane](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            const int kk = k * k;
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const std::int64_t oco = (c * k + dy) * k + dx;
                            const scalar* src = go.data() + (static_cast<std::int64_t>(n) * xs.c * kk + oco) * plane;
                            scalar* dst = g.data() + (static_cast<std::int64_t>(n) * xs.c + c) * plane;
                            for (int y = 0; y < xs.h; ++y) {
                                const int iy = clampi(y - p + dy, 0, xs.h - 1);
                                const scalar* srow = src + static_cast<std::int64_t>(y) * xs.w;
                                scalar* drow = dst + static_cast<std::int64_t>(iy) * xs.w;
                                for (int xx = 0; xx < xs.w; ++xx)
                                    drow[clampi(xx - p + dx, 0, xs.w - 1)] += srow[xx];
                            }
                        }
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

namespace {

Shape reduced_shape(const Shape& s, AxisSet a) {
    return Shape{s.n, a.c ? 1 : s.c, a.h ? 1 : s.h, a.w ? 1 : s.w};
}

}  // namespace

Tensor reduce_mean(const Tensor& x, AxisSet axes) {
    if (!axes.any()) throw Error("reduce_mean: empty axis set");
    const Shape& s = x.shape;
    Shape os = reduced_shape(s, axes);
    const scalar count = static_cast<scalar>(s.numel() / os.numel());
    Tensor out = Tensor::zeros(os);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    std::int64_t i = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx, ++i)
                    op[offset(os, n, c, y, xx)] += xp[i];
    for (std::int64_t j = 0; j < os.numel(); ++j) op[j] /= count;
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, xs, os, count](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            std::int64_t i = 0;
            for (int n = 0; n < xs.n; ++n)
                for (int c = 0; c < xs.c; ++c)
                    for (int y = 0; y < xs.h; ++y)
                        for (int xx = 0; xx < xs.w; ++xx, ++i)
                            g[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(offset(os, n, c, y, xx))] / count;
        });
    }
    return out;
}

Tensor reduce_max(const Tensor& x, AxisSet axes) {
    if (!axes.any()) throw Error("reduce_max: empty axis set");
    const Shape& s = x.shape;
    Shape os = reduced_shape(s, axes);
    Tensor out = Tensor::full(os, -std::numeric_limits<scalar>::infinity());
    // argmax (first hit in row-major input order) for gradient routing
    auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(os.numel()), -1);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    std::int64_t i = 0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx, ++i) {
                    std::int64_t oi = offset(os, n, c, y, xx);
                    if (xp[i] > op[oi]) {
                        op[oi] = xp[i];
                        (*arg)[static_cast<std::size_t>(oi)] = i;
                    }
                }
    if (x.tracked()) {
        int xn = x.node;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, arg](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            for (std::size_t j = 0; j < go.size(); ++j)
                if ((*arg)[j] >= 0) g[static_cast<std::size_t>((*arg)[j])] += go[j];
        });
    }
    return out;
}

// ---------------------------------------------------------------- layer_norm

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, scalar eps) {
    const Shape& s = x.shape;
    if (gain.shape != Shape{1, s.c, 1, 1} || bias.shape != Shape{1, s.c, 1, 1})
        throw Error("layer_norm: gain/bias must be (1," + std::to_string(s.c) + ",1,1)");
    if (eps <= 0) throw Error("layer_norm: eps must be positive");
    Tensor out = Tensor::zeros(s);
    // xhat saved for backward
    auto xhat = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(s.numel()));
    auto istd = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(s.n) * s.h * s.w);
    const scalar* xp = x.ptr();
    const scalar* gp = gain.ptr();
    const scalar* bp = bias.ptr();
    scalar* op = out.ptr();
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t cstride = plane;
    for (int n = 0; n < s.n; ++n) {
        const scalar* xb = xp + static_cast<std::int64_t>(n) * s.c * plane;
        scalar* ob = op + static_cast<std::int64_t>(n) * s.c * plane;
        scalar* hb = xhat->data() + static_cast<std::int64_t>(n) * s.c * plane;
        for (std::int64_t px = 0; px < plane; ++px) {
            scalar mean = 0;
            for (int c = 0; c < s.c; ++c) mean += xb[c * cstride + px];
            mean /= s.c;
            scalar var = 0;
            for (int c = 0; c < s.c; ++c) {
                scalar dv = xb[c * cstride + px] - mean;
                var += dv * dv;
            }
            var /= s.c;
            const scalar is = scalar(1) / std::sqrt(var + eps);
            (*istd)[static_cast<std::size_t>(n * plane + px)] = is;
            for (int c = 0; c < s.c; ++c) {
                scalar xh = (xb[c * cstride + px] - mean) * is;
                hb[c * cstride + px] = xh;
                ob[c * cstride + px] = gp[c] * xh + bp[c];
            }
        }
    }
    TapePtr tape = joint_tape({&x, &gain, &bias});
    if (tape) {
        Tensor gv = gain;
        int xn = x.node, gn = gain.node, bn = bias.node;
        out.tape = tape;
        out.node = tape->add_node(s, [xn, gn, bn, gv, xhat, istd, s, plane, cstride](Tape& t, int self) {
            const auto& go = t.grad(self);
            const scalar* gp = gv.ptr();
            scalar* gx = xn >= 0 ? t.grad(xn).data() : nullptr;
            scalar* gg = gn >= 0 ? t.grad(gn).data() : nullptr;
            scalar* gb = bn >= 0 ? t.grad(bn).data() : nullptr;
            for (int n = 0; n < s.n; ++n) {
                const scalar* gob = go.data() + static_cast<std::int64_t>(n) * s.c * plane;
                const scalar* hb = xhat->data() + static_cast<std::int64_t>(n) * s.c * plane;
                scalar* gxb = gx ? gx + static_cast<std::int64_t>(n) * s.c * plane : nullptr;
                for (std::int64_t px = 0; px < plane; ++px) {
                    const scalar is = (*istd)[static_cast<std::size_t>(n * plane + px)];
                    scalar sum_dh = 0, sum_dh_h = 0;
                    for (int c = 0; c < s.c; ++c) {
                        const scalar dh = gob[c * cstride + px] * gp[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hb[c * cstride + px];
                        if (gg) gg[c] += gob[c * cstride + px] * hb[c * cstride + px];
                        if (gb) gb[c] += gob[c * cstride + px];
                    }
                    if (gxb) {
                        const scalar inv_c = scalar(1) / s.c;
                        for (int c = 0; c < s.c; ++c) {
                            const scalar dh = gob[c * cstride + px] * gp[c];
                            gxb[c * cstride + px] +=
                                is * (dh - inv_c * sum_dh - hb[c * cstride + px] * inv_c * sum_dh_h);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- softmax

Tensor softmax(const Tensor& x, AxisSet axes) {
    const Shape& s = x.shape;
    const bool over_c = axes.c && !axes.h && !axes.w;
    const bool over_hw = !axes.c && axes.h && axes.w;
    if (!over_c && !over_hw) throw Error("softmax: supported axis sets are {c} and {h,w}");
    for (std::int64_t i = 0; i < s.numel(); ++i)
        if (std::isnan((*x.data)[static_cast<std::size_t>(i)])) throw Error("softmax: NaN in input");
    Tensor out = Tensor::zeros(s);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    if (over_c) {
        for (int n = 0; n < s.n; ++n) {
            const scalar* xb = xp + static_cast<std::int64_t>(n) * s.c * plane;
            scalar* ob = op + static_cast<std::int64_t>(n) * s.c * plane;
            for (std::int64_t px = 0; px < plane; ++px) {
                scalar mx = -std::numeric_limits<scalar>::infinity();
                for (int c = 0; c < s.c; ++c) mx = std::max(mx, xb[c * plane + px]);
                scalar sum = 0;
                for (int c = 0; c < s.c; ++c) {
                    scalar e = std::exp(xb[c * plane + px] - mx);
                    ob[c * plane + px] = e;
                    sum += e;
                }
                for (int c = 0; c < s.c; ++c) ob[c * plane + px] /= sum;
            }
        }
    } else {
        const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
        for (std::int64_t pl = 0; pl < planes; ++pl) {
            const scalar* xb = xp + pl * plane;
            scalar* ob = op + pl * plane;
            scalar mx = -std::numeric_limits<scalar>::infinity();
            for (std::int64_t i = 0; i < plane; ++i) mx = std::max(mx, xb[i]);
            scalar sum = 0;
            for (std::int64_t i = 0; i < plane; ++i) {
                ob[i] = std::exp(xb[i] - mx);
                sum += ob[i];
            }
            for (std::int64_t i = 0; i < plane; ++i) ob[i] /= sum;
        }
    }
    if (x.tracked()) {
        int xn = x.node;
        Tensor y = out;  // shares forward buffer
        out.tape = x.tape;
        out.node = x.tape->add_node(s, [xn, y, s, plane, over_c](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            const scalar* yp = y.ptr();
            if (over_c) {
                for (int n = 0; n < s.n; ++n) {
                    const std::int64_t base = static_cast<std::int64_t>(n) * s.c * plane;
                    for (std::int64_t px = 0; px < plane; ++px) {
                        scalar dot = 0;
                        for (int c = 0; c < s.c; ++c)
                            dot += go[static_cast<std::size_t>(base + c * plane + px)] * yp[base + c * plane + px];
                        for (int c = 0; c < s.c; ++c) {
                            std::int64_t i = base + c * plane + px;
                            g[static_cast<std::size_t>(i)] += yp[i] * (go[static_cast<std::size_t>(i)] - dot);
                        }
                    }
                }
            } else {
                const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
                for (std::int64_t pl = 0; pl < planes; ++pl) {
                    const std::int64_t base = pl * plane;
                    scalar dot = 0;
                    for (std::int64_t i = 0; i < plane; ++i)
                        dot += go[static_cast<std::size_t>(base + i)] * yp[base + i];
                    for (std::int64_t i = 0; i < plane; ++i)
                        g[static_cast<std::size_t>(base + i)] +=
                            yp[base + i] * (go[static_cast<std::size_t>(base + i)] - dot);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- resampling

Tensor avg_downsample(const Tensor& x, int r) {
    const Shape& s = x.shape;
    if (r != 2 && r != 4) throw Error("avg_downsample: ratio must be 2 or 4");
    if (s.h % r != 0 || s.w % r != 0)
        throw Error("avg_downsample: spatial dims " + s.str() + " not divisible by " + std::to_string(r));
    Shape os{s.n, s.c, s.h / r, s.w / r};
    Tensor out = Tensor::zeros(os);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    const scalar inv = scalar(1) / (r * r);
    const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const scalar* xb = xp + pl * s.h * s.w;
        scalar* ob = op + pl * os.h * os.w;
        for (int y = 0; y < os.h; ++y)
            for (int xx = 0; xx < os.w; ++xx) {
                scalar acc = 0;
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx)
                        acc += xb[(y * r + dy) * s.w + (xx * r + dx)];
                ob[y * os.w + xx] = acc * inv;
            }
    }
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, xs, os, r, inv, planes](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            for (std::int64_t pl = 0; pl < planes; ++pl) {
                const scalar* gob = go.data() + pl * os.h * os.w;
                scalar* gb = g.data() + pl * xs.h * xs.w;
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) {
                        const scalar v = gob[y * os.w + xx] * inv;
                        for (int dy = 0; dy < r; ++dy)
                            for (int dx = 0; dx < r; ++dx)
                                gb[(y * r + dy) * xs.w + (xx * r + dx)] += v;
                    }
            }
        });
    }
    return out;
}

Tensor depth_to_space(const Tensor& x, int r) {
    const Shape& s = x.shape;
    if (r == 1) return x;
    if (s.c % (r * r) != 0)
        throw Error("depth_to_space: channels " + std::to_string(s.c) + " not divisible by r^2 = " +
                    std::to_string(r * r));
    Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
    Tensor out = Tensor::zeros(os);
    const scalar* xp = x.ptr();
    scalar* op = out.ptr();
    for (int n = 0; n < s.n; ++n)
        for (int co = 0; co < os.c; ++co)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int ci = co * r * r + dy * r + dx;
                    const scalar* src = xp + (static_cast<std::int64_t>(n) * s.c + ci) * s.h * s.w;
                    scalar* dst = op + (static_cast<std::int64_t>(n) * os.c + co) * os.h * os.w;
                    for (int y = 0; y < s.h; ++y)
                        for (int xx = 0; xx < s.w; ++xx)
                            dst[(y * r + dy) * os.w + (xx * r + dx)] = src[y * s.w + xx];
                }
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, xs, os, r](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            for (int n = 0; n < xs.n; ++n)
                for (int co = 0; co < os.c; ++co)
                    for (int dy = 0; dy < r; ++dy)
                        for (int dx = 0; dx < r; ++dx) {
                            const int ci = co * r * r + dy * r + dx;
                            const scalar* src = go.data() + (static_cast<std::int64_t>(n) * os.c + co) * os.h * os.w;
                            scalar* dst = g.data() + (static_cast<std::int64_t>(n) * xs.c + ci) * xs.h * xs.w;
                            for (int y = 0; y < xs.h; ++y)
                                for (int xx = 0; xx < xs.w; ++xx)
                                    dst[y * xs.w + xx] += src[(y * r + dy) * os.w + (xx * r + dx)];
                        }
        });
    }
    return out;
}

// ---------------------------------------------------------------- fft

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

// In-place iterative radix-2 along a stride-1 row of length len.
void fft_row(std::complex<scalar>* a, int len, int sign) {
    // bit reversal
    for (int i = 1, j = 0; i < len; ++i) {
        int bit = len >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int half = 1; half < len; half <<= 1) {
        const scalar ang = sign * scalar(M_PI) / half;
        const std::complex<scalar> wstep(std::cos(ang), std::sin(ang));
        for (int i = 0; i < len; i += half * 2) {
            std::complex<scalar> w(1, 0);
            for (int j = 0; j < half; ++j) {
                auto u = a[i + j];
                auto v = a[i + j + half] * w;
                a[i + j] = u + v;
                a[i + j + half] = u - v;
                w *= wstep;
            }
        }
    }
}

// 2-D transform of an h x w plane; sign = -1 forward, +1 inverse kernel
// (no normalization either way).
void fft_plane(std::vector<std::complex<scalar>>& p, int h, int w, int sign) {
    for (int y = 0; y < h; ++y) fft_row(p.data() + static_cast<std::int64_t>(y) * w, w, sign);
    std::vector<std::complex<scalar>> col(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = p[static_cast<std::int64_t>(y) * w + x];
        fft_row(col.data(), h, sign);
        for (int y = 0; y < h; ++y) p[static_cast<std::int64_t>(y) * w + x] = col[static_cast<std::size_t>(y)];
    }
}

}  // namespace

Complex2d fft2d(const Tensor& x) {
    const Shape& s = x.shape;
    if (!is_pow2(s.h) || !is_pow2(s.w))
        throw Error("fft2d: spatial dims must be powers of two, got " + s.str());
    Tensor re = Tensor::zeros(s);
    Tensor im = Tensor::zeros(s);
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
    std::vector<std::complex<scalar>> buf(static_cast<std::size_t>(plane));
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const scalar* xb = x.ptr() + pl * plane;
        for (std::int64_t i = 0; i < plane; ++i) buf[static_cast<std::size_t>(i)] = {xb[i], 0};
        fft_plane(buf, s.h, s.w, -1);
        scalar* rb = re.ptr() + pl * plane;
        scalar* ib = im.ptr() + pl * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            rb[i] = buf[static_cast<std::size_t>(i)].real();
            ib[i] = buf[static_cast<std::size_t>(i)].imag();
        }
    }
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        // d(Re F)/dx and d(Im F)/dx are the transposed transforms: apply
        // the unnormalized inverse kernel to the output gradient and take
        // the real part.
        auto back = [xn, xs, plane](Tape& t, int self, bool imag_part) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            const std::int64_t planes = static_cast<std::int64_t>(xs.n) * xs.c;
            std::vector<std::complex<scalar>> buf(static_cast<std::size_t>(plane));
            for (std::int64_t pl = 0; pl < planes; ++pl) {
                const scalar* gb = go.data() + pl * plane;
                for (std::int64_t i = 0; i < plane; ++i)
                    buf[static_cast<std::size_t>(i)] = imag_part ? std::complex<scalar>(0, gb[i])
                                                                 : std::complex<scalar>(gb[i], 0);
                fft_plane(buf, xs.h, xs.w, +1);
                scalar* dst = g.data() + pl * plane;
                for (std::int64_t i = 0; i < plane; ++i) dst[i] += buf[static_cast<std::size_t>(i)].real();
            }
        };
        re.tape = x.tape;
        re.node = x.tape->add_node(s, [back](Tape& t, int self) { back(t, self, false); });
        im.tape = x.tape;
        im.node = x.tape->add_node(s, [back](Tape& t, int self) { back(t, self, true); });
    }
    return Complex2d{re, im};
}

Tensor ifft2d(const Complex2d& f) {
    const Shape& s = f.re.shape;
    if (f.im.shape != s) throw Error("ifft2d: real/imag shape mismatch");
    Tensor out = Tensor::zeros(s);
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
    std::vector<std::complex<scalar>> buf(static_cast<std::size_t>(plane));
    const scalar norm = scalar(1) / static_cast<scalar>(plane);
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const scalar* rb = f.re.ptr() + pl * plane;
        const scalar* ib = f.im.ptr() + pl * plane;
        for (std::int64_t i = 0; i < plane; ++i) buf[static_cast<std::size_t>(i)] = {rb[i], ib[i]};
        fft_plane(buf, s.h, s.w, +1);
        scalar* ob = out.ptr() + pl * plane;
        for (std::int64_t i = 0; i < plane; ++i) ob[i] = buf[static_cast<std::size_t>(i)].real() * norm;
    }
    return out;
}

Tensor pad_hw_zero(const Tensor& x, int H, int W) {
    const Shape& s = x.shape;
    if (H < s.h || W < s.w) throw Error("pad_hw_zero: target smaller than input");
    if (H == s.h && W == s.w) return x;
    Shape os{s.n, s.c, H, W};
    Tensor out = Tensor::zeros(os);
    const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
    for (std::int64_t pl = 0; pl < planes; ++pl)
        for (int y = 0; y < s.h; ++y)
            std::memcpy(out.ptr() + (pl * H + y) * W, x.ptr() + (pl * s.h + y) * s.w,
                        static_cast<std::size_t>(s.w) * sizeof(scalar));
    if (x.tracked()) {
        int xn = x.node;
        Shape xs = s;
        out.tape = x.tape;
        out.node = x.tape->add_node(os, [xn, xs, H, W, planes](Tape& t, int self) {
            const auto& go = t.grad(self);
            auto& g = t.grad(xn);
            for (std::int64_t pl = 0; pl < planes; ++pl)
                for (int y = 0; y < xs.h; ++y)
                    for (int xx = 0; xx < xs.w; ++xx)
                        g[static_cast<std::size_t>((pl * xs.h + y) * xs.w + xx)] +=
                            go[static_cast<std::size_t>((pl * H + y) * W + xx)];
        });
    }
    return out;
}

// ---------------------------------------------------------------- filter bank

Tensor apply_filter_bank(const Tensor& unfolded, const Tensor& filters, int channels) {
    const Shape& us = unfolded.shape;
    const Shape& fs = filters.shape;  // (n, g, k, k)
    const int g = fs.c;
    const int k = fs.h;
    if (fs.w != k) throw Error("apply_filter_bank: filters must be square");
    if (us.c != channels * k * k)
        throw Error("apply_filter_bank: unfolded channels " + std::to_string(us.c) + " != c*k*k = " +
                    std::to_string(channels * k * k));
    if (channels % g != 0)
        throw Error("apply_filter_bank: channels " + std::to_string(channels) + " not divisible by groups " +
                    std::to_string(g));
    if (fs.n != us.n) throw Error("apply_filter_bank: batch mismatch");
    const int kk = k * k;
    const int cpg = channels / g;
    Shape os{us.n, channels, us.h, us.w};
    Tensor out = Tensor::zeros(os);
    const std::int64_t plane = static_cast<std::int64_t>(us.h) * us.w;
    for (int n = 0; n < us.n; ++n)
        for (int c = 0; c < channels; ++c) {
            const scalar* f = filters.ptr() + (static_cast<std::int64_t>(n) * g + c / cpg) * kk;
            scalar* ob = out.ptr() + (static_cast<std::int64_t>(n) * channels + c) * plane;
            for (int t = 0; t < kk; ++t) {
                const scalar fv = f[t];
                const scalar* ub = unfolded.ptr() + (static_cast<std::int64_t>(n) * us.c + c * kk + t) * plane;
                for (std::int64_t i = 0; i < plane; ++i) ob[i] += fv * ub[i];
            }
        }
    TapePtr tape = joint_tape({&unfolded, &filters});
    if (tape) {
        Tensor uv = unfolded, fv = filters;
        int un = unfolded.node, fn = filters.node;
        out.tape = tape;
        out.node = tape->add_node(os, [uv, fv, un, fn, channels, g, kk, cpg, plane](Tape& t, int self) {
            const auto& go = t.grad(self);
            const Shape us = uv.shape;
            scalar* gu = un >= 0 ? t.grad(un).data() : nullptr;
            scalar* gf = fn >= 0 ? t.grad(fn).data() : nullptr;
            for (int n = 0; n < us.n; ++n)
                for (int c = 0; c < channels; ++c) {
                    const scalar* gob = go.data() + (static_cast<std::int64_t>(n) * channels + c) * plane;
                    const scalar* f = fv.ptr() + (static_cast<std::int64_t>(n) * g + c / cpg) * kk;
                    for (int ti = 0; ti < kk; ++ti) {
                        const std::int64_t ubase = (static_cast<std::int64_t>(n) * us.c + c * kk + ti) * plane;
                        if (gu) {
                            const scalar fvv = f[ti];
                            for (std::int64_t i = 0; i < plane; ++i) gu[ubase + i] += fvv * gob[i];
                        }
                        if (gf) {
                            const scalar* ub = uv.ptr() + ubase;
                            scalar s = 0;
                            for (std::int64_t i = 0; i < plane; ++i) s += ub[i] * gob[i];
                            gf[(static_cast<std::int64_t>(n) * g + c / cpg) * kk + ti] += s;
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------- scalars

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros(Shape{1, 1, 1, 1});
    scalar s = 0;
    const scalar* xp = x.ptr();
    const std::int64_t ne = x.numel();
    for (std::int64_t i = 0; i < ne; ++i) s += xp[i];
    (*out.data)[0] = s;
    if (x.tracked()) {
        int xn = x.node;
        out.tape = x.tape;
        out.node = x.tape->add_node(out.shape, [xn](Tape& t, int self) {
            const scalar go = t.grad(self)[0];
            auto& g = t.grad(xn);
            for (auto& v : g) v += go;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    return scale(sum_all(x), scalar(1) / static_cast<scalar>(x.numel()));
}

// ---------------------------------------------------------------- bilinear

Tensor bilinear_resize(const Tensor& x, int H, int W) {
    if (x.tracked()) throw Error("bilinear_resize: not differentiable, use on constant tensors only");
    const Shape& s = x.shape;
    if (s.h == H && s.w == W) return x;
    Shape os{s.n, s.c, H, W};
    Tensor out = Tensor::zeros(os);
    const scalar sy = static_cast<scalar>(s.h) / H;
    const scalar sx = static_cast<scalar>(s.w) / W;
    const std::int64_t planes = static_cast<std::int64_t>(s.n) * s.c;
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        const scalar* xb = x.ptr() + pl * s.h * s.w;
        scalar* ob = out.ptr() + pl * static_cast<std::int64_t>(H) * W;
        for (int y = 0; y < H; ++y) {
            const scalar fy = (y + scalar(0.5)) * sy - scalar(0.5);
            const int y0 = clampi(static_cast<int>(std::floor(fy)), 0, s.h - 1);
            const int y1 = std::min(y0 + 1, s.h - 1);
            const scalar ry = fy < 0 ? scalar(0) : std::min(std::max(fy - std::floor(fy), scalar(0)), scalar(1));
            for (int xx = 0; xx < W; ++xx) {
                const scalar fx = (xx + scalar(0.5)) * sx - scalar(0.5);
                const int x0 = clampi(static_cast<int>(std::floor(fx)), 0, s.w - 1);
                const int x1 = std::min(x0 + 1, s.w - 1);
                const scalar rx = fx < 0 ? scalar(0) : std::min(std::max(fx - std::floor(fx), scalar(0)), scalar(1));
                const scalar v00 = xb[y0 * s.w + x0], v01 = xb[y0 * s.w + x1];
                const scalar v10 = xb[y1 * s.w + x0], v11 = xb[y1 * s.w + x1];
                ob[y * W + xx] = (1 - ry) * ((1 - rx) * v00 + rx * v01) + ry * ((1 - rx) * v10 + rx * v11);
            }
        }
    }
    return out;
}

}  // namespace ecfnet
