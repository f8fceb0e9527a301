#ifndef ECFNET_DATA_HPP
#define ECFNET_DATA_HPP

#include <array>
#include <string>
#include <utility>

#include "ecfnet/random.hpp"
#include "ecfnet/tensor.hpp"

namespace ecfnet {

struct ImagePair {
    Tensor input;   // degraded
    Tensor target;  // clean
};

enum class DegradationKind { Haze, Blur, Snow };

struct DegradationSpec {
    DegradationKind kind = DegradationKind::Haze;
    // haze: I = J*t + A*(1-t)
    double haze_t = 0.5;
    std::array<double, 3> airlight{0.9, 0.9, 0.9};
    // blur: Gaussian
    double blur_sigma = 1.5;
    int blur_kernel = 9;
    // snow: additive bright discs
    int snow_flakes = 120;
    double snow_radius_min = 0.5, snow_radius_max = 2.5;
    double snow_brightness = 0.9;

    void validate() const;
};

DegradationKind parse_kind(const std::string& s);

// Binary PPM (P6), maxval 255; values mapped to [0,1] by /255 on load,
// rounded half-to-even on save. Always a single image (n=1, c=3).
Tensor load_ppm(const std::string& path);
void save_ppm(const Tensor& image, const std::string& path);

// Applies the degradation; output clipped to [0,1].
Tensor degrade(const Tensor& clean, const DegradationSpec& spec, Rng& rng);

// Identical random horizontal/vertical flips (p = 0.5 each) on both
// images of the pair.
ImagePair augment(const ImagePair& pair, Rng& rng);

// Identical random crop of both images.
ImagePair sample_patch(const ImagePair& pair, int size, Rng& rng);

// Seeded synthetic clean image: smooth gradients plus random shapes,
// enough structure for edges and texture.
Tensor make_synthetic_clean(int h, int w, Rng& rng);

}  // namespace ecfnet

#endif
