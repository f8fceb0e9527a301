#include "ecfnet/blocks.hpp"

namespace ecfnet {

Tensor simple_gate(const Tensor& x) {
    if (x.shape.c % 2 != 0)
        throw Error("simple_gate: channel count must be even, got " + std::to_string(x.shape.c));
    const int half = x.shape.c / 2;
    return mul(slice_c(x, 0, half), slice_c(x, half, x.shape.c));
}

Conv2dLayer::Conv2dLayer(const std::string& name, int in_c, int out_c, int k, Rng& rng,
                         int stride, int groups, PadMode mode, int pad) {
    opts.stride = stride;
    opts.groups = groups;
    opts.mode = mode;
    opts.pad = pad < 0 ? (k - 1) / 2 : pad;
    w.name = name + ".w";
    w.value = init_conv_weight(Shape{out_c, in_c / groups, k, k}, rng);
    b.name = name + ".b";
    b.value = Tensor::zeros(Shape{1, out_c, 1, 1});
}

Tensor Conv2dLayer::forward(const Tensor& x, const TapePtr& tape) {
    return conv2d(x, w.use(tape), b.use(tape), opts);
}

void Conv2dLayer::collect(ParamRegistry& r) {
    r.push_back(&w);
    r.push_back(&b);
}

LayerNormLayer::LayerNormLayer(const std::string& name, int channels) {
    gain.name = name + ".g";
    gain.value = Tensor::full(Shape{1, channels, 1, 1}, 1.0);
    bias.name = name + ".b";
    bias.value = Tensor::zeros(Shape{1, channels, 1, 1});
}

Tensor LayerNormLayer::forward(const Tensor& x, const TapePtr& tape) {
    return layer_norm(x, gain.use(tape), bias.use(tape));
}

void LayerNormLayer::collect(ParamRegistry& r) {
    r.push_back(&gain);
    r.push_back(&bias);
}

// ---------------------------------------------------------------- SCABlock

SCABlock::SCABlock(const std::string& name, int c, Rng& rng)
    : ln(name + ".ln", c),
      expand(name + ".expand", c, 2 * c, 1, rng),
      dw(name + ".dw", 2 * c, 2 * c, 3, rng, 1, 2 * c),
      sca(name + ".sca", c, c, 1, rng),
      proj(name + ".proj", c, c, 1, rng) {}

Tensor SCABlock::forward(const Tensor& x, const TapePtr& tape) {
    Tensor xp = simple_gate(dw.forward(expand.forward(ln.forward(x, tape), tape), tape));
    Tensor att = sca.forward(reduce_mean(xp, AxisSet{false, true, true}), tape);
    return add(proj.forward(mul(xp, att), tape), x);
}

void SCABlock::collect(ParamRegistry& r) {
    ln.collect(r);
    expand.collect(r);
    dw.collect(r);
    sca.collect(r);
    proj.collect(r);
}

// ---------------------------------------------------------------- MSFBlock

MSFBlock::MSFBlock(const std::string& name, int c, Rng& rng)
    : ln(name + ".ln", c),
      expand_t(name + ".expand_t", c, 2 * c, 1, rng),
      dw_t(name + ".dw_t", 2 * c, 2 * c, 3, rng, 1, 2 * c),
      expand_b(name + ".expand_b", c, 2 * c, 1, rng),
      dw_b(name + ".dw_b", 2 * c, 2 * c, 5, rng, 1, 2 * c),
      cross_t(name + ".cross_t", 2 * c, 2 * c, 3, rng, 1, 2 * c),
      cross_b(name + ".cross_b", 2 * c, 2 * c, 5, rng, 1, 2 * c),
      proj(name + ".proj", 2 * c, c, 1, rng) {}

Tensor MSFBlock::forward(const Tensor& x, const TapePtr& tape) {
    Tensor normed = ln.forward(x, tape);
    Tensor xt = simple_gate(dw_t.forward(expand_t.forward(normed, tape), tape));
    Tensor xb = simple_gate(dw_b.forward(expand_b.forward(normed, tape), tape));
    Tensor fused_t = simple_gate(cross_t.forward(concat_c({xt, xb}), tape));
    Tensor fused_b = simple_gate(cross_b.forward(concat_c({xb, xt}), tape));
    return add(proj.forward(concat_c({fused_t, fused_b}), tape), x);
}

void MSFBlock::collect(ParamRegistry& r) {
    ln.collect(r);
    expand_t.collect(r);
    dw_t.collect(r);
    expand_b.collect(r);
    dw_b.collect(r);
    cross_t.collect(r);
    cross_b.collect(r);
    proj.collect(r);
}

// ---------------------------------------------------------------- MSSFBlock

MSSFBlock::MSSFBlock(const std::string& name, int c, Rng& rng)
    : scab(name + ".scab", c, rng), msfb(name + ".msfb", c, rng) {}

Tensor MSSFBlock::forward(const Tensor& x, const TapePtr& tape) {
    Tensor mid = add(x, scab.forward(x, tape));
    return add(mid, msfb.forward(mid, tape));
}

void MSSFBlock::collect(ParamRegistry& r) {
    scab.collect(r);
    msfb.collect(r);
}

// ---------------------------------------------------------------- SDAM

SDAM::SDAM(const std::string& name, int c, Rng& rng)
    : spatial(name + ".spatial", 2, 1, 3, rng),
      dw5(name + ".dw5", c, c, 5, rng, 1, c),
      dw7(name + ".dw7", c, c, 7, rng, 1, c),
      dw3(name + ".dw3", c, c, 3, rng, 1, c),
      chan(name + ".chan", c, c, 1, rng) {}

Tensor SDAM::forward(const Tensor& x, const TapePtr& tape) {
    Tensor pooled = concat_c({reduce_mean(x, AxisSet{true, false, false}),
                              reduce_max(x, AxisSet{true, false, false})});
    Tensor smap = spatial.forward(pooled, tape);
    Tensor f_s = mul(smap, dw7.forward(dw5.forward(x, tape), tape));
    // channel score applied without extra nonlinearity
    Tensor f_c = mul(chan.forward(reduce_mean(x, AxisSet{false, true, true}), tape), x);
    return add(add(f_s, f_c), dw3.forward(x, tape));
}

void SDAM::collect(ParamRegistry& r) {
    spatial.collect(r);
    dw5.collect(r);
    dw7.collect(r);
    dw3.collect(r);
    chan.collect(r);
}

// ---------------------------------------------------------------- FDAM

FDAM::FDAM(const std::string& name, int c, int k_, int g, Rng& rng)
    : channels(c), k(k_), groups(g),
      derive(name + ".derive", c, g * k_ * k_, 1, rng),
      ln(name + ".ln", g * k_ * k_) {
    if (k % 2 == 0) throw Error("FDAM: kernel size must be odd");
    if (c % g != 0)
        throw Error("FDAM: channels " + std::to_string(c) + " not divisible by groups " + std::to_string(g));
}

Tensor FDAM::filter_bank(const Tensor& x, const TapePtr& tape) {
    Tensor pooled = reduce_mean(x, AxisSet{false, true, true});  // (n,c,1,1)
    Tensor logits = ln.forward(derive.forward(pooled, tape), tape);
    Tensor per_filter = reshape(logits, Shape{x.shape.n, groups, k, k});
    return softmax(per_filter, AxisSet{false, true, true});
}

FDAM::Parts FDAM::forward_parts(const Tensor& x, const TapePtr& tape) {
    Parts p;
    p.filters = filter_bank(x, tape);
    p.low = apply_filter_bank(unfold(x, k), p.filters, channels);
    p.high = sub(x, p.low);
    p.out = add(mul(p.high, x), x);
    return p;
}

Tensor FDAM::forward(const Tensor& x, const TapePtr& tape) {
    return forward_parts(x, tape).out;
}

void FDAM::collect(ParamRegistry& r) {
    derive.collect(r);
    ln.collect(r);
}

// ---------------------------------------------------------------- SFAM

SFAM::SFAM(const std::string& name, int c, int k, int g, Rng& rng)
    : sdam(name + ".sdam", c, rng), fdam(name + ".fdam", c, k, g, rng) {
    weight.name = name + ".weight";
    weight.value = Tensor::full(Shape{1, c, 1, 1}, 1.0);
}

SFAM::Parts SFAM::forward_parts(const Tensor& x, const TapePtr& tape) {
    Parts p;
    p.branch1 = sdam.forward(fdam.forward(x, tape), tape);
    p.branch2 = fdam.forward(sdam.forward(x, tape), tape);
    p.out = add(mul(weight.use(tape), p.branch1), p.branch2);
    return p;
}

Tensor SFAM::forward(const Tensor& x, const TapePtr& tape) {
    return forward_parts(x, tape).out;
}

void SFAM::collect(ParamRegistry& r) {
    sdam.collect(r);
    fdam.collect(r);
    r.push_back(&weight);
}

// ---------------------------------------------------------------- MSBlock

MSBlock::MSBlock(const std::string& name, int c, int n, Rng& rng)
    : channels(c), n_blocks(n),
      msfb1(name + ".b1.msfb", c, rng),
      msfb2(name + ".b2.msfb", c, rng),
      msfb3(name + ".b3.msfb", c, rng),
      up2(name + ".up2", c, 4 * c, 1, rng),
      up4(name + ".up4", c, 16 * c, 1, rng) {
    if (n < 1) throw Error("MSBlock: need at least one SCABlock per branch");
    for (int i = 0; i < n; ++i) {
        scabs1.emplace_back(name + ".b1.scab" + std::to_string(i), c, rng);
        scabs2.emplace_back(name + ".b2.scab" + std::to_string(i), c, rng);
        scabs3.emplace_back(name + ".b3.scab" + std::to_string(i), c, rng);
    }
}

Tensor MSBlock::forward(const Tensor& x, const TapePtr& tape) {
    if (x.shape.h % 4 != 0 || x.shape.w % 4 != 0)
        throw Error("MSBlock: spatial dims " + x.shape.str() + " must be divisible by 4");
    Tensor x1 = x;
    for (auto& b : scabs1) x1 = b.forward(x1, tape);
    x1 = msfb1.forward(x1, tape);

    Tensor x2 = avg_downsample(x, 2);
    for (auto& b : scabs2) x2 = b.forward(x2, tape);
    x2 = msfb2.forward(x2, tape);

    Tensor x3 = add(avg_downsample(x, 4), avg_downsample(x2, 2));
    for (auto& b : scabs3) x3 = b.forward(x3, tape);
    x3 = msfb3.forward(x3, tape);

    Tensor u2 = depth_to_space(up2.forward(x2, tape), 2);
    Tensor u4 = depth_to_space(up4.forward(x3, tape), 4);
    return add(add(x1, u2), u4);
}

void MSBlock::collect(ParamRegistry& r) {
    for (auto& b : scabs1) b.collect(r);
    msfb1.collect(r);
    for (auto& b : scabs2) b.collect(r);
    msfb2.collect(r);
    for (auto& b : scabs3) b.collect(r);
    msfb3.collect(r);
    up2.collect(r);
    up4.collect(r);
}

}  // namespace ecfnet
