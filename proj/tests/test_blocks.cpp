#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ecfnet/blocks.hpp"
#include "helpers.hpp"

using namespace ecfnet;
using testutil::grad_check;
using testutil::make_param;
using testutil::max_abs_diff;
using testutil::project;
using testutil::random_tensor;

namespace {

double max_abs(const Tensor& t) {
    double m = 0;
    for (auto v : *t.data) m = std::max(m, std::abs(v));
    return m;
}

// Per-channel constant tensor: channel c holds value base + 0.3 * c.
Tensor channel_constants(Shape s, double base) {
    Tensor t = Tensor::zeros(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) t.at(n, c, y, x) = base + 0.3 * c;
    return t;
}

// Finite-difference check of one block over all its parameters plus the
// input. Deeply composed blocks have large third derivatives (LayerNorm's
// 1/std stacked several times), so callers pick the step size.
template <typename Block>
double block_grad_check(Block& block, Tensor input, std::uint64_t seed, double h = 1e-4) {
    ParamRegistry params;
    block.collect(params);
    Param px = make_param("x", input);
    params.push_back(&px);
    Rng proj_rng(seed, 99);
    return grad_check(
        params,
        [&](const TapePtr& tape) {
            Rng r = proj_rng;
            return project(block.forward(px.use(tape), tape), r);
        },
        h);
}

}  // namespace

TEST_CASE("simple_gate: ones, halves, random oracle, odd channels") {
    Tensor ones = Tensor::full(Shape{1, 4, 2, 2}, 1.0);
    Tensor g = simple_gate(ones);
    CHECK(g.shape.c == 2);
    for (auto v : *g.data) CHECK(v == doctest::Approx(1.0));

    Tensor halves = Tensor::zeros(Shape{1, 2, 1, 1});
    halves.at(0, 0, 0, 0) = 2.0;
    halves.at(0, 1, 0, 0) = 3.0;
    CHECK(simple_gate(halves).at(0, 0, 0, 0) == doctest::Approx(6.0));

    Rng rng(5);
    Tensor x = random_tensor(Shape{2, 6, 3, 4}, rng);
    Tensor y = simple_gate(x);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int iy = 0; iy < 3; ++iy)
                for (int ix = 0; ix < 4; ++ix)
                    CHECK(y.at(n, c, iy, ix) ==
                          doctest::Approx(x.at(n, c, iy, ix) * x.at(n, c + 3, iy, ix)));

    CHECK_THROWS_AS(simple_gate(Tensor::zeros(Shape{1, 3, 2, 2})), Error);
}

TEST_CASE("SCABlock: zero maps to zero, residual law, composition oracle") {
    Rng rng(11);
    SCABlock blk("scab", 4, rng);
    CHECK(max_abs(blk.forward(Tensor::zeros(Shape{1, 4, 6, 6}), nullptr)) == 0.0);

    Tensor x = random_tensor(Shape{2, 4, 6, 6}, rng);
    Tensor out = blk.forward(x, nullptr);

    // Oracle assembled from the verified primitives.
    Tensor xp = simple_gate(conv2d(conv2d(layer_norm(x, blk.ln.gain.value, blk.ln.bias.value),
                                          blk.expand.w.value, blk.expand.b.value, blk.expand.opts),
                                   blk.dw.w.value, blk.dw.b.value, blk.dw.opts));
    Tensor att = conv2d(reduce_mean(xp, AxisSet{false, true, true}), blk.sca.w.value,
                        blk.sca.b.value, blk.sca.opts);
    Tensor branch = conv2d(mul(xp, att), blk.proj.w.value, blk.proj.b.value, blk.proj.opts);
    CHECK(max_abs_diff(out, add(branch, x)) < 1e-12);
    // Residual law: out - x is exactly the branch value.
    CHECK(max_abs_diff(sub(out, x), branch) < 1e-12);
}

TEST_CASE("MSFBlock: zero maps to zero, residual law, composition oracle") {
    Rng rng(12);
    MSFBlock blk("msfb", 4, rng);
    CHECK(max_abs(blk.forward(Tensor::zeros(Shape{1, 4, 6, 6}), nullptr)) == 0.0);

    Tensor x = random_tensor(Shape{1, 4, 6, 6}, rng);
    Tensor out = blk.forward(x, nullptr);

    Tensor normed = layer_norm(x, blk.ln.gain.value, blk.ln.bias.value);
    auto run = [](const Conv2dLayer& l, const Tensor& v) {
        return conv2d(v, l.w.value, l.b.value, l.opts);
    };
    Tensor xt = simple_gate(run(blk.dw_t, run(blk.expand_t, normed)));
    Tensor xb = simple_gate(run(blk.dw_b, run(blk.expand_b, normed)));
    Tensor fused_t = simple_gate(run(blk.cross_t, concat_c({xt, xb})));
    Tensor fused_b = simple_gate(run(blk.cross_b, concat_c({xb, xt})));
    Tensor branch = run(blk.proj, concat_c({fused_t, fused_b}));
    CHECK(max_abs_diff(out, add(branch, x)) < 1e-12);
    CHECK(max_abs_diff(sub(out, x), branch) < 1e-12);
}

TEST_CASE("MSSFBlock: zero maps to zero, literal double residual") {
    Rng rng(13);
    MSSFBlock blk("mssf", 4, rng);
    CHECK(max_abs(blk.forward(Tensor::zeros(Shape{1, 4, 6, 6}), nullptr)) == 0.0);

    Tensor x = random_tensor(Shape{1, 4, 6, 6}, rng);
    Tensor mid = add(x, blk.scab.forward(x, nullptr));
    Tensor expect = add(mid, blk.msfb.forward(mid, nullptr));
    CHECK(max_abs_diff(blk.forward(x, nullptr), expect) < 1e-12);
}

TEST_CASE("SDAM: zero maps to zero, unit-gate case, composition oracle") {
    Rng rng(14);
    SDAM blk("sdam", 8, rng);
    CHECK(max_abs(blk.forward(Tensor::zeros(Shape{1, 8, 6, 6}), nullptr)) == 0.0);

    Tensor x = random_tensor(Shape{1, 8, 8, 8}, rng);
    auto run = [](const Conv2dLayer& l, const Tensor& v) {
        return conv2d(v, l.w.value, l.b.value, l.opts);
    };

    // Composition oracle for the full module.
    Tensor pooled = concat_c({reduce_mean(x, AxisSet{true, false, false}),
                              reduce_max(x, AxisSet{true, false, false})});
    Tensor smap = run(blk.spatial, pooled);
    Tensor f_s = mul(smap, run(blk.dw7, run(blk.dw5, x)));
    Tensor f_c = mul(run(blk.chan, reduce_mean(x, AxisSet{false, true, true})), x);
    Tensor expect = add(add(f_s, f_c), run(blk.dw3, x));
    CHECK(max_abs_diff(blk.forward(x, nullptr), expect) < 1e-12);

    // Spatial map forced to all ones, channel path zeroed:
    // output collapses to dw7(dw5(x)) + dw3(x).
    SDAM unit("unit", 8, rng);
    std::fill(unit.spatial.w.value.data->begin(), unit.spatial.w.value.data->end(), 0.0);
    unit.spatial.b.value.at(0, 0, 0, 0) = 1.0;
    std::fill(unit.chan.w.value.data->begin(), unit.chan.w.value.data->end(), 0.0);
    Tensor collapsed = add(run(unit.dw7, run(unit.dw5, x)), run(unit.dw3, x));
    CHECK(max_abs_diff(unit.forward(x, nullptr), collapsed) < 1e-12);
}

TEST_CASE("FDAM: filter normalization over many random draws") {
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(200 + trial);
        FDAM blk("fdam", 8, 3, 4, rng);
        // Randomize the derivation parameters away from their defaults too.
        for (auto& v : *blk.derive.b.value.data) v = rng.uniform(-2, 2);
        for (auto& v : *blk.ln.gain.value.data) v = rng.uniform(0.2, 3.0);
        for (auto& v : *blk.ln.bias.value.data) v = rng.uniform(-2, 2);
        Tensor x = random_tensor(Shape{2, 8, 5, 5}, rng, -3, 3);
        Tensor f = blk.filter_bank(x, nullptr);
        REQUIRE(f.shape == Shape{2, 4, 3, 3});
        for (int n = 0; n < f.shape.n; ++n)
            for (int g = 0; g < f.shape.c; ++g) {
                double sum = 0;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        CHECK(f.at(n, g, ky, kx) >= 0.0);
                        sum += f.at(n, g, ky, kx);
                    }
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("FDAM: constant input invariance and low/high decomposition") {
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(300 + trial);
        FDAM blk("fdam", 8, 3, 2, rng);
        for (auto& v : *blk.derive.b.value.data) v = rng.uniform(-1, 1);
        Tensor x = channel_constants(Shape{1, 8, 6, 6}, rng.uniform(-2, 2));
        FDAM::Parts p = blk.forward_parts(x, nullptr);
        CHECK(max_abs_diff(p.low, x) < 1e-12);
        CHECK(max_abs(p.high) < 1e-12);
        CHECK(max_abs_diff(p.out, x) < 1e-12);
        CHECK(max_abs_diff(add(p.low, p.high), x) < 1e-12);
    }
}

TEST_CASE("FDAM: interior impulse conserves mass under normalized filters") {
    Rng rng(17);
    FDAM blk("fdam", 4, 3, 2, rng);
    Tensor x = Tensor::zeros(Shape{1, 4, 8, 8});
    for (int c = 0; c < 4; ++c) x.at(0, c, 4, 4) = 1.0 + 0.5 * c;
    FDAM::Parts p = blk.forward_parts(x, nullptr);
    for (int c = 0; c < 4; ++c) {
        double in_sum = 0, low_sum = 0;
        for (int y = 0; y < 8; ++y)
            for (int ix = 0; ix < 8; ++ix) {
                in_sum += x.at(0, c, y, ix);
                low_sum += p.low.at(0, c, y, ix);
            }
        CHECK(low_sum == doctest::Approx(in_sum).epsilon(1e-9));
    }
}

TEST_CASE("FDAM: low-pass response matches unfold-and-dot oracle") {
    Rng rng(18);
    FDAM blk("fdam", 4, 3, 2, rng);
    for (auto& v : *blk.derive.b.value.data) v = rng.uniform(-1, 1);
    Tensor x = random_tensor(Shape{1, 4, 8, 8}, rng);
    FDAM::Parts p = blk.forward_parts(x, nullptr);
    const int cpg = 4 / 2;
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 8; ++y)
            for (int ix = 0; ix < 8; ++ix) {
                double acc = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int iy = std::clamp(y + dy, 0, 7);
                        const int jx = std::clamp(ix + dx, 0, 7);
                        acc += p.filters.at(0, c / cpg, dy + 1, dx + 1) * x.at(0, c, iy, jx);
                    }
                CHECK(p.low.at(0, c, y, ix) == doctest::Approx(acc).epsilon(1e-9));
            }
}

TEST_CASE("FDAM: constructor rejects even kernels and bad group splits") {
    Rng rng(19);
    CHECK_THROWS_AS(FDAM("bad", 8, 4, 2, rng), Error);
    CHECK_THROWS_AS(FDAM("bad", 6, 3, 4, rng), Error);
}

TEST_CASE("SFAM: weighting laws and branch-2 invariance") {
    Rng rng(21);
    SFAM blk("sfam", 8, 3, 2, rng);
    for (auto v : *blk.weight.value.data) CHECK(v == 1.0);

    Tensor x = random_tensor(Shape{1, 8, 8, 8}, rng);
    SFAM::Parts p = blk.forward_parts(x, nullptr);
    // W = 1: output is exactly the unweighted branch sum.
    CHECK(max_abs_diff(p.out, add(p.branch1, p.branch2)) == 0.0);

    // W = 0: only the FDAM-first branch remains.
    std::fill(blk.weight.value.data->begin(), blk.weight.value.data->end(), 0.0);
    SFAM::Parts p0 = blk.forward_parts(x, nullptr);
    CHECK(max_abs_diff(p0.out, p0.branch2) == 0.0);

    // Arbitrary W: branch 2 is bitwise unchanged, branch 1 scales per channel.
    for (int c = 0; c < 8; ++c) blk.weight.value.at(0, c, 0, 0) = 0.25 * c - 1.0;
    SFAM::Parts pw = blk.forward_parts(x, nullptr);
    CHECK(max_abs_diff(pw.branch2, p.branch2) == 0.0);
    CHECK(max_abs_diff(pw.branch1, p.branch1) == 0.0);
    CHECK(max_abs_diff(pw.out, add(mul(blk.weight.value, pw.branch1), pw.branch2)) == 0.0);
}

TEST_CASE("SFAM: per-channel-constant input reduces to (W+1) * SDAM(const)") {
    Rng rng(22);
    SFAM blk("sfam", 4, 3, 2, rng);
    for (int c = 0; c < 4; ++c) blk.weight.value.at(0, c, 0, 0) = 0.5 + 0.5 * c;
    Tensor x = channel_constants(Shape{1, 4, 6, 6}, 0.7);
    // FDAM is the identity on per-channel constants, so both branch orders
    // collapse to SDAM(x)... but only if SDAM(x) is itself constant per
    // channel. It is: every path of SDAM maps channel-constants to
    // channel-constants (convs of constants are constant away from borders
    // only under replicate padding, so check the composition directly).
    Tensor sd = blk.sdam.forward(x, nullptr);
    Tensor expect = add(mul(blk.weight.value, blk.sdam.forward(blk.fdam.forward(x, nullptr), nullptr)),
                        blk.fdam.forward(sd, nullptr));
    CHECK(max_abs_diff(blk.forward(x, nullptr), expect) < 1e-12);
    // And branch 1 equals SDAM applied to the (unchanged) input.
    CHECK(max_abs_diff(blk.forward_parts(x, nullptr).branch1, sd) < 1e-10);
}

TEST_CASE("MSBlock: task presets construct, zero maps to zero, shape law") {
    Rng rng(23);
    MSBlock dehaze("ms4", 2, 4, rng);
    MSBlock deblur("ms8", 2, 8, rng);
    CHECK(dehaze.scabs1.size() == 4);
    CHECK(deblur.scabs3.size() == 8);
    CHECK_THROWS_AS(MSBlock("bad", 2, 0, rng), Error);

    MSBlock blk("ms", 3, 1, rng);
    CHECK(max_abs(blk.forward(Tensor::zeros(Shape{1, 3, 8, 8}), nullptr)) == 0.0);
    for (int hw : {8, 16}) {
        Tensor x = random_tensor(Shape{1, 3, hw, hw}, rng);
        Tensor y = blk.forward(x, nullptr);
        CHECK(y.shape == x.shape);
    }
    CHECK_THROWS_AS(blk.forward(Tensor::zeros(Shape{1, 3, 6, 6}), nullptr), Error);
}

TEST_CASE("MSBlock: branch wiring matches the three-resolution oracle") {
    Rng rng(24);
    MSBlock blk("ms", 2, 1, rng);
    Tensor x = random_tensor(Shape{1, 2, 8, 8}, rng);

    Tensor x1 = blk.msfb1.forward(blk.scabs1[0].forward(x, nullptr), nullptr);
    Tensor x2 = blk.msfb2.forward(blk.scabs2[0].forward(avg_downsample(x, 2), nullptr), nullptr);
    Tensor x3in = add(avg_downsample(x, 4), avg_downsample(x2, 2));
    Tensor x3 = blk.msfb3.forward(blk.scabs3[0].forward(x3in, nullptr), nullptr);
    Tensor u2 = depth_to_space(conv2d(x2, blk.up2.w.value, blk.up2.b.value, blk.up2.opts), 2);
    Tensor u4 = depth_to_space(conv2d(x3, blk.up4.w.value, blk.up4.b.value, blk.up4.opts), 4);
    CHECK(max_abs_diff(blk.forward(x, nullptr), add(add(x1, u2), u4)) < 1e-12);
}

TEST_CASE("gradients: every block matches finite differences") {
    Rng rng(31);
    {
        SCABlock blk("scab", 3, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 3, 6, 6}, rng), 41, 1e-5) < 1e-4);
    }
    {
        MSFBlock blk("msfb", 3, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 3, 6, 6}, rng), 42, 1e-5) < 1e-4);
    }
    {
        MSSFBlock blk("mssf", 3, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 3, 6, 6}, rng), 43, 1e-5) < 1e-4);
    }
    {
        SDAM blk("sdam", 4, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 4, 6, 6}, rng), 44, 1e-5) < 1e-4);
    }
    {
        FDAM blk("fdam", 4, 3, 2, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 4, 6, 6}, rng), 45, 1e-5) < 1e-4);
    }
    {
        SFAM blk("sfam", 4, 3, 2, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 4, 6, 6}, rng), 46, 1e-5) < 1e-4);
    }
    {
        MSBlock blk("ms", 2, 1, rng);
        CHECK(block_grad_check(blk, random_tensor(Shape{1, 2, 8, 8}, rng), 47, 1e-6) < 1e-4);
    }
}
