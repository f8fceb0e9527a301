#ifndef ECFNET_MODEL_HPP
#define ECFNET_MODEL_HPP

#include <memory>
#include <string>
#include <vector>

#include "ecfnet/blocks.hpp"

namespace ecfnet {

struct ModelConfig {
    int base_channels = 16;
    int num_blocks = 4;  // N: SCABlocks per MSBlock branch, MSSFBlocks per stage
    int fdam_k = 3;
    int fdam_g = 8;
    int n_output_heads = 3;       // 3, or 4 for an extra refined full-res head
    bool convs_single_conv = false;  // low-res stem: single conv instead of conv+gate

    static ModelConfig dehaze() { ModelConfig c; c.num_blocks = 4; return c; }
    static ModelConfig deblur() { ModelConfig c; c.num_blocks = 8; return c; }
    static ModelConfig desnow() { return deblur(); }

    // Throws on the first violated constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Distinct load failure modes for checkpoint files.
struct ChecksumError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};

class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    // Returns restored images coarse-to-fine last: index 0 full
    // resolution, 1 half, 2 quarter (and 3 = refined full when the
    // config has four heads). Input (n,3,h,w), h and w divisible by 16.
    std::vector<Tensor> forward(const Tensor& image, const TapePtr& tape = nullptr);

    // Low-res image stem (3 -> channels with a gate).
    Tensor convs_shallow(const Tensor& image_lowres, int scale_idx, const TapePtr& tape);

    const ModelConfig& config() const { return config_; }
    // Rebuilt on each call; valid while the model object stays alive and
    // unmoved. (The model itself stores no internal pointers, so it is
    // freely movable.)
    ParamRegistry params();
    std::int64_t param_count();
    // Analytic FLOPs (2x multiply-accumulate) of one forward pass at (h, w).
    std::int64_t flops(int h, int w);

    void save(const std::string& path);
    static Model load(const std::string& path);

private:
    ModelConfig config_;
    Conv2dLayer intro_;
    MSBlock enc1_;
    Conv2dLayer down1_;
    Conv2dLayer convs2_a_, convs2_expand_;
    Conv2dLayer merge2_;
    std::vector<MSSFBlock> enc2_;
    Conv2dLayer down2_;
    Conv2dLayer convs3_a_, convs3_expand_;
    Conv2dLayer merge3_;
    std::vector<MSSFBlock> enc3_;
    SFAM sfam_;
    std::vector<MSSFBlock> dec3_;
    Conv2dLayer head3_;
    Conv2dLayer up3_;
    Conv2dLayer skip2_;
    std::vector<MSSFBlock> dec2_;
    Conv2dLayer head2_;
    Conv2dLayer up2_;
    Conv2dLayer skip1_;
    MSBlock dec1_;
    Conv2dLayer head1_;
    Conv2dLayer refine_, head4_;  // only built with four heads
};

}  // namespace ecfnet

#endif
