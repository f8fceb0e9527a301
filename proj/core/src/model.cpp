#include "ecfnet/model.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace ecfnet {

void ModelConfig::validate() const {
    if (base_channels < 2) throw Error("config: base_channels must be >= 2");
    if (num_blocks < 1) throw Error("config: num_blocks must be >= 1");
    if (fdam_k < 1 || fdam_k % 2 == 0) throw Error("config: fdam_k must be odd and positive");
    if (fdam_g < 1) throw Error("config: fdam_g must be >= 1");
    if ((4 * base_channels) % fdam_g != 0)
        throw Error("config: bottleneck channels " + std::to_string(4 * base_channels) +
                    " not divisible by fdam_g " + std::to_string(fdam_g));
    if (n_output_heads != 3 && n_output_heads != 4)
        throw Error("config: n_output_heads must be 3 or 4");
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int c1 = config_.base_channels;
    const int c2 = 2 * c1;
    const int c3 = 4 * c1;
    const int n = config_.num_blocks;

    intro_ = Conv2dLayer("intro", 3, c1, 3, rng);
    enc1_ = MSBlock("enc1", c1, n, rng);
    down1_ = Conv2dLayer("down1", c1, c2, 3, rng, 2);
    convs2_a_ = Conv2dLayer("convs2.conv", 3, c2, 3, rng);
    if (!config_.convs_single_conv) convs2_expand_ = Conv2dLayer("convs2.expand", c2, 2 * c2, 1, rng);
    merge2_ = Conv2dLayer("merge2", 2 * c2, c2, 1, rng);
    for (int i = 0; i < n; ++i) enc2_.emplace_back("enc2." + std::to_string(i), c2, rng);
    down2_ = Conv2dLayer("down2", c2, c3, 3, rng, 2);
    convs3_a_ = Conv2dLayer("convs3.conv", 3, c3, 3, rng);
    if (!config_.convs_single_conv) convs3_expand_ = Conv2dLayer("convs3.expand", c3, 2 * c3, 1, rng);
    merge3_ = Conv2dLayer("merge3", 2 * c3, c3, 1, rng);
    for (int i = 0; i < n; ++i) enc3_.emplace_back("enc3." + std::to_string(i), c3, rng);
    sfam_ = SFAM("sfam", c3, config_.fdam_k, config_.fdam_g, rng);
    for (int i = 0; i < n; ++i) dec3_.emplace_back("dec3." + std::to_string(i), c3, rng);
    head3_ = Conv2dLayer("head3", c3, 3, 3, rng);
    up3_ = Conv2dLayer("up3", c3, 4 * c2, 1, rng);
    skip2_ = Conv2dLayer("skip2", 2 * c2, c2, 1, rng);
    for (int i = 0; i < n; ++i) dec2_.emplace_back("dec2." + std::to_string(i), c2, rng);
    head2_ = Conv2dLayer("head2", c2, 3, 3, rng);
    up2_ = Conv2dLayer("up2", c2, 4 * c1, 1, rng);
    skip1_ = Conv2dLayer("skip1", 2 * c1, c1, 1, rng);
    dec1_ = MSBlock("dec1", c1, n, rng);
    head1_ = Conv2dLayer("head1", c1, 3, 3, rng);
    if (config_.n_output_heads == 4) {
        refine_ = Conv2dLayer("refine", c1, c1, 3, rng);
        head4_ = Conv2dLayer("head4", c1, 3, 3, rng);
    }
    // Residual heads start at zero so the untrained model reproduces the
    // bilinear baseline exactly and training only has to learn corrections.
    auto zero_weight = [](Conv2dLayer& l) {
        std::fill(l.w.value.data->begin(), l.w.value.data->end(), scalar(0));
    };
    zero_weight(head1_);
    zero_weight(head2_);
    zero_weight(head3_);
    if (config_.n_output_heads == 4) zero_weight(head4_);
}

ParamRegistry Model::params() {
    ParamRegistry params_;
    intro_.collect(params_);
    enc1_.collect(params_);
    down1_.collect(params_);
    convs2_a_.collect(params_);
    if (!config_.convs_single_conv) convs2_expand_.collect(params_);
    merge2_.collect(params_);
    for (auto& b : enc2_) b.collect(params_);
    down2_.collect(params_);
    convs3_a_.collect(params_);
    if (!config_.convs_single_conv) convs3_expand_.collect(params_);
    merge3_.collect(params_);
    for (auto& b : enc3_) b.collect(params_);
    sfam_.collect(params_);
    for (auto& b : dec3_) b.collect(params_);
    head3_.collect(params_);
    up3_.collect(params_);
    skip2_.collect(params_);
    for (auto& b : dec2_) b.collect(params_);
    head2_.collect(params_);
    up2_.collect(params_);
    skip1_.collect(params_);
    dec1_.collect(params_);
    head1_.collect(params_);
    if (config_.n_output_heads == 4) {
        refine_.collect(params_);
        head4_.collect(params_);
    }
    return params_;
}

std::int64_t Model::param_count() {
    std::int64_t total = 0;
    for (const Param* p : params()) total += p->value.numel();
    return total;
}

Tensor Model::convs_shallow(const Tensor& img, int scale_idx, const TapePtr& tape) {
    Conv2dLayer& conv = scale_idx == 2 ? convs2_a_ : convs3_a_;
    Tensor f = conv.forward(img, tape);
    if (config_.convs_single_conv) return f;
    Conv2dLayer& expand = scale_idx == 2 ? convs2_expand_ : convs3_expand_;
    return simple_gate(expand.forward(f, tape));
}

std::vector<Tensor> Model::forward(const Tensor& image, const TapePtr& tape) {
    const Shape& s = image.shape;
    if (s.c != 3) throw Error("forward: expected 3-channel image, got " + s.str());
    if (s.h % 16 != 0 || s.w % 16 != 0)
        throw Error("forward: spatial dims " + s.str() + " must be divisible by 16");

    Tensor img2 = bilinear_resize(image, s.h / 2, s.w / 2);
    Tensor img4 = bilinear_resize(image, s.h / 4, s.w / 4);

    Tensor e1 = enc1_.forward(intro_.forward(image, tape), tape);
    Tensor x = down1_.forward(e1, tape);
    x = merge2_.forward(concat_c({x, convs_shallow(img2, 2, tape)}), tape);
    for (auto& b : enc2_) x = b.forward(x, tape);
    Tensor e2 = x;
    x = down2_.forward(e2, tape);
    x = merge3_.forward(concat_c({x, convs_shallow(img4, 3, tape)}), tape);
    for (auto& b : enc3_) x = b.forward(x, tape);

    x = sfam_.forward(x, tape);

    for (auto& b : dec3_) x = b.forward(x, tape);
    Tensor out3 = add(head3_.forward(x, tape), img4);
    x = depth_to_space(up3_.forward(x, tape), 2);
    x = skip2_.forward(concat_c({x, e2}), tape);
    for (auto& b : dec2_) x = b.forward(x, tape);
    Tensor out2 = add(head2_.forward(x, tape), img2);
    x = depth_to_space(up2_.forward(x, tape), 2);
    x = skip1_.forward(concat_c({x, e1}), tape);
    x = dec1_.forward(x, tape);
    Tensor out1 = add(head1_.forward(x, tape), image);

    std::vector<Tensor> outs{out1, out2, out3};
    if (config_.n_output_heads == 4) {
        Tensor refined = refine_.forward(x, tape);
        outs.push_back(add(head4_.forward(refined, tape), image));
    }
    return outs;
}

std::int64_t Model::flops(int h, int w) {
    Tensor probe = Tensor::zeros(Shape{1, 3, h, w});
    reset_mac_counter();
    forward(probe);
    return 2 * mac_counter();
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'E', 'C', 'F', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

struct Reader {
    const unsigned char* p;
    std::size_t n, pos = 0;

    void need(std::size_t k) {
        if (pos + k > n) throw ChecksumError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::string str(std::size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + pos), k);
        pos += k;
        return s;
    }
};

}  // namespace

void Model::save(const std::string& path) {
    const ParamRegistry params_ = params();
    std::string payload;
    put_u32(payload, kVersion);
    put_u32(payload, static_cast<std::uint32_t>(config_.base_channels));
    put_u32(payload, static_cast<std::uint32_t>(config_.num_blocks));
    put_u32(payload, static_cast<std::uint32_t>(config_.fdam_k));
    put_u32(payload, static_cast<std::uint32_t>(config_.fdam_g));
    put_u32(payload, static_cast<std::uint32_t>(config_.n_output_heads));
    put_u32(payload, config_.convs_single_conv ? 1 : 0);
    put_u32(payload, static_cast<std::uint32_t>(params_.size()));
    for (const Param* p : params_) {
        put_u16(payload, static_cast<std::uint16_t>(p->name.size()));
        payload += p->name;
        put_u32(payload, static_cast<std::uint32_t>(p->value.shape.n));
        put_u32(payload, static_cast<std::uint32_t>(p->value.shape.c));
        put_u32(payload, static_cast<std::uint32_t>(p->value.shape.h));
        put_u32(payload, static_cast<std::uint32_t>(p->value.shape.w));
        for (scalar v : *p->value.data) {
            float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(payload, bits);
        }
    }
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("save: cannot open " + path);
    f.write(kMagic, 4);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string trailer;
    put_u32(trailer, crc);
    f.write(trailer.data(), 4);
    if (!f) throw Error("save: write failed for " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw VersionError("load: not an ECFN checkpoint: " + path);
    const std::size_t payload_len = bytes.size() - 8;
    const unsigned char* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + 4;
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(
                          static_cast<unsigned char>(bytes[bytes.size() - 4 + static_cast<std::size_t>(i)]))
                      << (8 * i);
    const std::uint32_t crc =
        static_cast<std::uint32_t>(crc32(0L, payload, static_cast<uInt>(payload_len)));
    if (crc != stored_crc) throw ChecksumError("load: checksum mismatch in " + path);

    Reader r{payload, payload_len};
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw VersionError("load: unknown checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.base_channels = static_cast<int>(r.u32());
    cfg.num_blocks = static_cast<int>(r.u32());
    cfg.fdam_k = static_cast<int>(r.u32());
    cfg.fdam_g = static_cast<int>(r.u32());
    cfg.n_output_heads = static_cast<int>(r.u32());
    cfg.convs_single_conv = r.u32() != 0;

    Model model(cfg, 0);
    const ParamRegistry reg = model.params();
    const std::uint32_t count = r.u32();
    if (count != reg.size())
        throw ShapeError("load: checkpoint has " + std::to_string(count) + " parameters, model expects " +
                         std::to_string(reg.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u16());
        Shape s;
        s.n = static_cast<int>(r.u32());
        s.c = static_cast<int>(r.u32());
        s.h = static_cast<int>(r.u32());
        s.w = static_cast<int>(r.u32());
        Param* p = reg[i];
        if (p->name != name)
            throw ShapeError("load: parameter order mismatch at '" + name + "', expected '" + p->name + "'");
        if (p->value.shape != s)
            throw ShapeError("load: shape mismatch for parameter '" + name + "': file " + s.str() +
                             " vs model " + p->value.shape.str());
        for (std::int64_t j = 0; j < s.numel(); ++j) {
            std::uint32_t bits = r.u32();
            float fv;
            std::memcpy(&fv, &bits, 4);
            (*p->value.data)[static_cast<std::size_t>(j)] = static_cast<scalar>(fv);
        }
    }
    return model;
}

}  // namespace ecfnet
