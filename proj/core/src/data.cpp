#include "ecfnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace ecfnet {
namespace {

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

// round half to even
int quantize255(double v) {
    const double x = clamp01(v) * 255.0;
    const double fl = std::floor(x);
    const double frac = x - fl;
    int q;
    if (frac > 0.5) {
        q = static_cast<int>(fl) + 1;
    } else if (frac < 0.5) {
        q = static_cast<int>(fl);
    } else {
        q = static_cast<int>(fl);
        if (q % 2 != 0) ++q;
    }
    return std::min(255, std::max(0, q));
}

// Skips whitespace and '#' comments between PPM header tokens.
bool next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) continue;
        break;
    }
    if (ch == EOF) return false;
    tok.push_back(static_cast<char>(ch));
    while ((ch = in.get()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(ch));
    return true;
}

}  // namespace

void DegradationSpec::validate() const {
    switch (kind) {
        case DegradationKind::Haze:
            if (haze_t <= 0 || haze_t > 1) throw Error("degrade: haze transmission must be in (0,1]");
            for (double a : airlight)
                if (a < 0 || a > 1) throw Error("degrade: airlight components must be in [0,1]");
            break;
        case DegradationKind::Blur:
            if (blur_sigma < 0) throw Error("degrade: blur sigma must be nonnegative");
            if (blur_kernel < 1 || blur_kernel % 2 == 0) throw Error("degrade: blur kernel must be odd");
            break;
        case DegradationKind::Snow:
            if (snow_flakes < 0) throw Error("degrade: flake count must be nonnegative");
            if (snow_radius_min <= 0 || snow_radius_max < snow_radius_min)
                throw Error("degrade: bad flake radius range");
            if (snow_brightness < 0 || snow_brightness > 1)
                throw Error("degrade: snow brightness must be in [0,1]");
            break;
    }
}

DegradationKind parse_kind(const std::string& s) {
    if (s == "haze") return DegradationKind::Haze;
    if (s == "blur") return DegradationKind::Blur;
    if (s == "snow") return DegradationKind::Snow;
    throw Error("unknown degradation kind '" + s + "' (expected haze|blur|snow)");
}

Tensor load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("load_ppm: cannot open " + path);
    std::string tok;
    if (!next_token(f, tok) || tok != "P6")
        throw Error("load_ppm: " + path + ": malformed header, expected magic P6");
    int w, h, maxval;
    try {
        if (!next_token(f, tok)) throw Error("eof");
        w = std::stoi(tok);
        if (!next_token(f, tok)) throw Error("eof");
        h = std::stoi(tok);
        if (!next_token(f, tok)) throw Error("eof");
        maxval = std::stoi(tok);
    } catch (const std::exception&) {
        throw Error("load_ppm: " + path + ": malformed header dimensions");
    }
    if (w <= 0 || h <= 0) throw Error("load_ppm: " + path + ": malformed header dimensions");
    if (maxval != 255) throw Error("load_ppm: " + path + ": only maxval 255 supported, got " + tok);
    // single whitespace byte already consumed by tokenizer
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(f.gcount()) != raw.size())
        throw Error("load_ppm: " + path + ": truncated pixel payload");
    Tensor t = Tensor::zeros(Shape{1, 3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(0, c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] / 255.0;
    return t;
}

void save_ppm(const Tensor& image, const std::string& path) {
    const Shape& s = image.shape;
    if (s.n != 1 || s.c != 3) throw Error("save_ppm: expected (1,3,h,w), got " + s.str());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("save_ppm: cannot open " + path);
    f << "P6\n" << s.w << " " << s.h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(s.w) * s.h * 3);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c)
                raw[(static_cast<std::size_t>(y) * s.w + x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(quantize255(image.at(0, c, y, x)));
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw Error("save_ppm: write failed for " + path);
}

namespace {

Tensor gaussian_blur(const Tensor& x, double sigma, int k) {
    if (sigma <= 0) return x.clone();
    std::vector<double> kern(static_cast<std::size_t>(k));
    double sum = 0;
    for (int i = 0; i < k; ++i) {
        const double d = i - k / 2;
        kern[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += kern[static_cast<std::size_t>(i)];
    }
    for (auto& v : kern) v /= sum;
    const Shape& s = x.shape;
    Tensor tmp = Tensor::zeros(s), out = Tensor::zeros(s);
    // separable, replicate borders
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    double acc = 0;
                    for (int i = 0; i < k; ++i) {
                        int sx = std::clamp(xx + i - k / 2, 0, s.w - 1);
                        acc += kern[static_cast<std::size_t>(i)] * x.at(n, c, y, sx);
                    }
                    tmp.at(n, c, y, xx) = acc;
                }
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    double acc = 0;
                    for (int i = 0; i < k; ++i) {
                        int sy = std::clamp(y + i - k / 2, 0, s.h - 1);
                        acc += kern[static_cast<std::size_t>(i)] * tmp.at(n, c, sy, xx);
                    }
                    out.at(n, c, y, xx) = acc;
                }
        }
    return out;
}

}  // namespace

Tensor degrade(const Tensor& clean, const DegradationSpec& spec, Rng& rng) {
    spec.validate();
    const Shape& s = clean.shape;
    Tensor out;
    switch (spec.kind) {
        case DegradationKind::Haze: {
            out = clean.clone();
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const double a = spec.airlight[static_cast<std::size_t>(c % 3)];
                    for (int y = 0; y < s.h; ++y)
                        for (int x = 0; x < s.w; ++x)
                            out.at(n, c, y, x) =
                                clamp01(clean.at(n, c, y, x) * spec.haze_t + a * (1 - spec.haze_t));
                }
            break;
        }
        case DegradationKind::Blur:
            out = gaussian_blur(clean, spec.blur_sigma, spec.blur_kernel);
            for (auto& v : *out.data) v = clamp01(v);
            break;
        case DegradationKind::Snow: {
            out = clean.clone();
            for (int n = 0; n < s.n; ++n)
                for (int i = 0; i < spec.snow_flakes; ++i) {
                    const double cy = rng.uniform(0, s.h);
                    const double cx = rng.uniform(0, s.w);
                    const double r = rng.uniform(spec.snow_radius_min, spec.snow_radius_max);
                    const int y0 = std::max(0, static_cast<int>(cy - r - 1));
                    const int y1 = std::min(s.h - 1, static_cast<int>(cy + r + 1));
                    const int x0 = std::max(0, static_cast<int>(cx - r - 1));
                    const int x1 = std::min(s.w - 1, static_cast<int>(cx + r + 1));
                    for (int y = y0; y <= y1; ++y)
                        for (int x = x0; x <= x1; ++x) {
                            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                            if (d2 > r * r) continue;
                            const double alpha = 1.0 - d2 / (r * r);
                            for (int c = 0; c < s.c; ++c)
                                out.at(n, c, y, x) = clamp01(out.at(n, c, y, x) * (1 - alpha) +
                                                             spec.snow_brightness * alpha);
                        }
                }
            break;
        }
    }
    return out;
}

ImagePair augment(const ImagePair& pair, Rng& rng) {
    const Shape& s = pair.input.shape;
    if (pair.target.shape != s) throw Error("augment: pair shapes differ");
    const bool hflip = rng.uniform() < 0.5;
    const bool vflip = rng.uniform() < 0.5;
    if (!hflip && !vflip) return pair;
    auto flip = [&](const Tensor& t) {
        Tensor out = Tensor::zeros(s);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x)
                        out.at(n, c, y, x) = t.at(n, c, vflip ? s.h - 1 - y : y, hflip ? s.w - 1 - x : x);
        return out;
    };
    return ImagePair{flip(pair.input), flip(pair.target)};
}

ImagePair sample_patch(const ImagePair& pair, int size, Rng& rng) {
    const Shape& s = pair.input.shape;
    if (pair.target.shape != s) throw Error("sample_patch: pair shapes differ");
    if (s.h < size || s.w < size)
        throw Error("sample_patch: image " + s.str() + " smaller than patch " + std::to_string(size));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.h - size + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.w - size + 1)));
    auto crop = [&](const Tensor& t) {
        Tensor out = Tensor::zeros(Shape{s.n, s.c, size, size});
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x)
                        out.at(n, c, y, x) = t.at(n, c, y0 + y, x0 + x);
        return out;
    };
    return ImagePair{crop(pair.input), crop(pair.target)};
}

Tensor make_synthetic_clean(int h, int w, Rng& rng) {
    Tensor img = Tensor::zeros(Shape{1, 3, h, w});
    // smooth background gradient per channel
    for (int c = 0; c < 3; ++c) {
        const double a = rng.uniform(0.1, 0.9);
        const double gy = rng.uniform(-0.4, 0.4);
        const double gx = rng.uniform(-0.4, 0.4);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(0, c, y, x) = clamp01(a + gy * (static_cast<double>(y) / h - 0.5) +
                                             gx * (static_cast<double>(x) / w - 0.5));
    }
    // random rectangles and discs for edges
    const int shapes = 6 + static_cast<int>(rng.below(6));
    for (int i = 0; i < shapes; ++i) {
        const bool disc = rng.coin();
        const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
        const double ry = rng.uniform(h / 16.0, h / 3.0), rx = rng.uniform(w / 16.0, w / 3.0);
        double col[3] = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool inside;
                if (disc) {
                    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                    inside = dy * dy + dx * dx <= 1.0;
                } else {
                    inside = std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
                }
                if (inside)
                    for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = col[c];
            }
    }
    return img;
}

}  // namespace ecfnet
