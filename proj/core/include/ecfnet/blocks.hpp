#ifndef ECFNET_BLOCKS_HPP
#define ECFNET_BLOCKS_HPP

#include <string>
#include <vector>

#include "ecfnet/param.hpp"

namespace ecfnet {

// Channel split-and-multiply gate; halves the channel count.
Tensor simple_gate(const Tensor& x);

struct Conv2dLayer {
    Param w, b;
    ConvOpts opts;

    Conv2dLayer() = default;
    // pad defaults to (k-1)/2
    Conv2dLayer(const std::string& name, int in_c, int out_c, int k, Rng& rng,
                int stride = 1, int groups = 1, PadMode mode = PadMode::Zeros, int pad = -1);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

struct LayerNormLayer {
    Param gain, bias;

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& name, int channels);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Spatial detail block: LN -> 1x1 (c->2c) -> dw3x3 -> SG -> channel
// attention from pooled context -> 1x1 project, plus identity.
struct SCABlock {
    LayerNormLayer ln;
    Conv2dLayer expand, dw, sca, proj;

    SCABlock() = default;
    SCABlock(const std::string& name, int channels, Rng& rng);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Two-scale gated feed-forward with cross fusion, plus identity.
struct MSFBlock {
    LayerNormLayer ln;
    Conv2dLayer expand_t, dw_t, expand_b, dw_b;
    Conv2dLayer cross_t, cross_b, proj;

    MSFBlock() = default;
    MSFBlock(const std::string& name, int channels, Rng& rng);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

struct MSSFBlock {
    SCABlock scab;
    MSFBlock msfb;

    MSSFBlock() = default;
    MSSFBlock(const std::string& name, int channels, Rng& rng);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Spatial domain attention: spatial selective map times mid-scale
// features, channel scores times input, plus a depthwise shortcut.
struct SDAM {
    Conv2dLayer spatial;  // 3x3, 2 -> 1
    Conv2dLayer dw5, dw7, dw3;
    Conv2dLayer chan;  // 1x1, c -> c, on pooled descriptor

    SDAM() = default;
    SDAM(const std::string& name, int channels, Rng& rng);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Frequency domain attention: predicts g normalized k x k low-pass
// filters per sample from pooled context, subtracts the low-pass
// response and gates the input with the high-frequency residue.
struct FDAM {
    int channels = 0, k = 3, groups = 8;
    Conv2dLayer derive;  // 1x1, c -> g*k*k
    LayerNormLayer ln;

    struct Parts {
        Tensor filters;  // (n, g, k, k), rows nonnegative, each sums to 1
        Tensor low, high, out;
    };

    FDAM() = default;
    FDAM(const std::string& name, int channels, int k, int groups, Rng& rng);

    Tensor filter_bank(const Tensor& x, const TapePtr& tape);
    Parts forward_parts(const Tensor& x, const TapePtr& tape);
    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Dual-order composition of one shared SDAM and one shared FDAM with a
// learnable per-channel weight on the FDAM-first branch.
struct SFAM {
    SDAM sdam;
    FDAM fdam;
    Param weight;  // (1,c,1,1), initialized to 1

    struct Parts {
        Tensor branch1;  // SDAM(FDAM(x))
        Tensor branch2;  // FDAM(SDAM(x))
        Tensor out;
    };

    SFAM() = default;
    SFAM(const std::string& name, int channels, int k, int groups, Rng& rng);

    Parts forward_parts(const Tensor& x, const TapePtr& tape);
    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

// Three-branch multi-resolution block (ratios 1, 2, 4). Each branch is
// N SCABlocks followed by an MSFBlock; branch 3 additionally receives
// the downsampled branch-2 output; fusion by learnable upsampling.
struct MSBlock {
    int channels = 0, n_blocks = 0;
    std::vector<SCABlock> scabs1, scabs2, scabs3;
    MSFBlock msfb1, msfb2, msfb3;
    Conv2dLayer up2, up4;  // 1x1 expands feeding depth-to-space

    MSBlock() = default;
    MSBlock(const std::string& name, int channels, int n_blocks, Rng& rng);

    Tensor forward(const Tensor& x, const TapePtr& tape);
    void collect(ParamRegistry& r);
};

}  // namespace ecfnet

#endif
