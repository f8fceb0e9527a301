#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ecfnet/train.hpp"
#include "helpers.hpp"

using namespace ecfnet;
using testutil::make_param;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

std::filesystem::path tmp_path(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Tensor hflip(const Tensor& t) {
    const Shape& s = t.shape;
    Tensor out = Tensor::zeros(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
    return out;
}

Tensor vflip(const Tensor& t) {
    const Shape& s = t.shape;
    Tensor out = Tensor::zeros(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, s.h - 1 - y, x);
    return out;
}

// Flip decisions drawn exactly as augment draws them.
std::pair<bool, bool> flip_flags(std::uint64_t seed) {
    Rng r(seed);
    const bool h = r.uniform() < 0.5;
    const bool v = r.uniform() < 0.5;
    return {h, v};
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.base_channels = 4;
    c.num_blocks = 1;
    c.fdam_g = 8;
    return c;
}

std::vector<ImagePair> make_dataset(int count, int hw, DegradationKind kind, std::uint64_t seed) {
    std::vector<ImagePair> pairs;
    Rng rng(seed);
    DegradationSpec spec;
    spec.kind = kind;
    for (int i = 0; i < count; ++i) {
        Tensor clean = make_synthetic_clean(hw, hw, rng);
        pairs.push_back(ImagePair{degrade(clean, spec, rng), clean});
    }
    return pairs;
}

std::vector<double> snapshot(Model& m) {
    std::vector<double> out;
    for (Param* p : m.params()) out.insert(out.end(), p->value.data->begin(), p->value.data->end());
    return out;
}

}  // namespace

TEST_CASE("adam: first-step law, zero gradient no-op, shape errors") {
    Param p = make_param("p", Tensor::zeros(Shape{1, 1, 1, 1}));
    Adam opt({&p});
    opt.step({{1.0}}, 1e-3);
    // mhat = 1, vhat = 1 after bias correction, so the step is -lr/(1+eps).
    CHECK((*p.value.data)[0] == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(opt.step_count() == 1);

    Param q = make_param("q", Tensor::full(Shape{1, 1, 1, 1}, 0.5));
    Adam opt2({&q});
    opt2.step({{0.0}}, 1e-3);
    CHECK((*q.value.data)[0] == 0.5);
    opt2.step({{}}, 1e-3);  // parameter skipped entirely
    CHECK((*q.value.data)[0] == 0.5);

    CHECK_THROWS_AS(opt2.step({}, 1e-3), Error);
    CHECK_THROWS_AS(opt2.step({{1.0, 2.0}}, 1e-3), Error);
}

TEST_CASE("adam: descends f(x) = x^2 from x = 1") {
    Param p = make_param("p", Tensor::full(Shape{1, 1, 1, 1}, 1.0));
    Adam opt({&p});
    double prev_f = 1.0;
    for (int i = 0; i < 10; ++i) {
        const double x = (*p.value.data)[0];
        opt.step({{2.0 * x}}, 0.05);
        const double f = (*p.value.data)[0] * (*p.value.data)[0];
        CHECK(f < prev_f);
        prev_f = f;
    }
}

TEST_CASE("cosine_lr: endpoints, midpoint, clamping, monotone decay") {
    CHECK(cosine_lr(0, 200, 8e-4, 1e-6) == 8e-4);
    CHECK(cosine_lr(200, 200, 8e-4, 1e-6) == 1e-6);
    CHECK(cosine_lr(100, 200, 8e-4, 1e-6) == doctest::Approx((8e-4 + 1e-6) / 2).epsilon(1e-12));
    CHECK(cosine_lr(300, 200, 8e-4, 1e-6) == 1e-6);
    double prev = cosine_lr(0, 50, 8e-4, 1e-6);
    for (int s = 1; s <= 50; ++s) {
        const double lr = cosine_lr(s, 50, 8e-4, 1e-6);
        CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("augment: all four flip outcomes behave as pixel permutations") {
    Rng rng(1);
    ImagePair pair{random_tensor(Shape{1, 3, 6, 8}, rng, 0, 1),
                   random_tensor(Shape{1, 3, 6, 8}, rng, 0, 1)};
    bool seen[2][2] = {{false, false}, {false, false}};
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        auto [h, v] = flip_flags(seed);
        seen[h][v] = true;
        Rng r(seed);
        ImagePair out = augment(pair, r);
        Tensor expect_in = pair.input, expect_tg = pair.target;
        if (h) {
            expect_in = hflip(expect_in);
            expect_tg = hflip(expect_tg);
        }
        if (v) {
            expect_in = vflip(expect_in);
            expect_tg = vflip(expect_tg);
        }
        CHECK(max_abs_diff(out.input, expect_in) == 0.0);
        CHECK(max_abs_diff(out.target, expect_tg) == 0.0);
    }
    CHECK((seen[0][0] && seen[0][1] && seen[1][0] && seen[1][1]));

    // Applying the same flip twice is the identity.
    std::uint64_t hseed = 0;
    while (flip_flags(hseed) != std::pair<bool, bool>{true, false}) ++hseed;
    Rng r1(hseed), r2(hseed);
    ImagePair twice = augment(augment(pair, r1), r2);
    CHECK(max_abs_diff(twice.input, pair.input) == 0.0);
    CHECK(max_abs_diff(twice.target, pair.target) == 0.0);

    ImagePair bad{pair.input, Tensor::zeros(Shape{1, 3, 8, 6})};
    Rng r3(0);
    CHECK_THROWS_AS(augment(bad, r3), Error);
}

TEST_CASE("sample_patch: bounds fuzz over 10^4 draws, errors") {
    // Encode coordinates in the pixels so the crop origin is recoverable.
    const int H = 16, W = 16, S = 8;
    Tensor coded = Tensor::zeros(Shape{1, 3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) coded.at(0, c, y, x) = y * W + x + 1000.0 * c;
    ImagePair pair{coded, coded.clone()};
    Rng rng(99);
    for (int trial = 0; trial < 10000; ++trial) {
        ImagePair out = sample_patch(pair, S, rng);
        REQUIRE(out.input.shape == Shape{1, 3, S, S});
        const int code = static_cast<int>(out.input.at(0, 0, 0, 0));
        const int y0 = code / W, x0 = code % W;
        REQUIRE(y0 >= 0);
        REQUIRE(y0 <= H - S);
        REQUIRE(x0 >= 0);
        REQUIRE(x0 <= W - S);
        // Input and target receive the identical crop.
        REQUIRE(max_abs_diff(out.input, out.target) == 0.0);
        REQUIRE(out.input.at(0, 2, S - 1, S - 1) ==
                doctest::Approx((y0 + S - 1) * W + (x0 + S - 1) + 2000.0));
    }
    Rng r2(1);
    CHECK_THROWS_AS(sample_patch(pair, 32, r2), Error);
    ImagePair bad{coded, Tensor::zeros(Shape{1, 3, H, W + 1})};
    CHECK_THROWS_AS(sample_patch(bad, S, r2), Error);
}

TEST_CASE("degrade: haze transmission limits and airlight") {
    Rng rng(2);
    Tensor clean = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
    DegradationSpec spec;
    spec.kind = DegradationKind::Haze;

    spec.haze_t = 1.0;
    Rng r1(0);
    CHECK(max_abs_diff(degrade(clean, spec, r1), clean) == 0.0);

    spec.haze_t = 1e-12;
    spec.airlight = {0.8, 0.6, 0.4};
    Rng r2(0);
    Tensor fog = degrade(clean, spec, r2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(fog.at(0, c, y, x) == doctest::Approx(spec.airlight[c]).epsilon(1e-9));

    spec.haze_t = 0.0;
    CHECK_THROWS_AS(degrade(clean, spec, r2), Error);
    spec.haze_t = 0.5;
    spec.airlight = {1.2, 0.5, 0.5};
    CHECK_THROWS_AS(degrade(clean, spec, r2), Error);
}

TEST_CASE("degrade: blur impulse limit, kernel mass, validation") {
    Rng rng(3);
    Tensor clean = random_tensor(Shape{1, 3, 10, 10}, rng, 0, 1);
    DegradationSpec spec;
    spec.kind = DegradationKind::Blur;

    spec.blur_sigma = 1e-3;
    Rng r1(0);
    CHECK(max_abs_diff(degrade(clean, spec, r1), clean) < 1e-3);

    // Normalized kernel with replicate borders keeps constants constant.
    spec.blur_sigma = 2.0;
    Tensor flat = Tensor::full(Shape{1, 3, 10, 10}, 0.42);
    CHECK(max_abs_diff(degrade(flat, spec, r1), flat) < 1e-12);

    // Blurring redistributes but roughly conserves mass away from clipping.
    Tensor blurred = degrade(clean, spec, r1);
    double before = 0, after = 0;
    for (auto v : *clean.data) before += v;
    for (auto v : *blurred.data) after += v;
    CHECK(std::abs(before - after) / before < 0.05);

    spec.blur_sigma = -1;
    CHECK_THROWS_AS(degrade(clean, spec, r1), Error);
    spec.blur_sigma = 1;
    spec.blur_kernel = 4;
    CHECK_THROWS_AS(degrade(clean, spec, r1), Error);
}

TEST_CASE("degrade: snow determinism, range, zero flakes, validation") {
    Rng rng(4);
    Tensor clean = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 0.5);
    DegradationSpec spec;
    spec.kind = DegradationKind::Snow;

    Rng ra(7), rb(7);
    Tensor s1 = degrade(clean, spec, ra);
    Tensor s2 = degrade(clean, spec, rb);
    CHECK(max_abs_diff(s1, s2) == 0.0);
    CHECK(max_abs_diff(s1, clean) > 0.0);  // flakes actually landed
    for (auto v : *s1.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    spec.snow_flakes = 0;
    Rng rc(7);
    CHECK(max_abs_diff(degrade(clean, spec, rc), clean) == 0.0);

    spec.snow_flakes = 10;
    spec.snow_radius_min = 3;
    spec.snow_radius_max = 2;
    CHECK_THROWS_AS(degrade(clean, spec, rc), Error);
    spec.snow_radius_min = 0.5;
    spec.snow_radius_max = 2;
    spec.snow_brightness = 1.5;
    CHECK_THROWS_AS(degrade(clean, spec, rc), Error);
}

TEST_CASE("degrade commutes with flips for pixelwise degradations") {
    Rng rng(5);
    Tensor clean = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
    DegradationSpec spec;  // haze
    Rng r1(0), r2(0);
    CHECK(max_abs_diff(hflip(degrade(clean, spec, r1)), degrade(hflip(clean), spec, r2)) == 0.0);
}

TEST_CASE("parse_kind: known names and rejection") {
    CHECK(parse_kind("haze") == DegradationKind::Haze);
    CHECK(parse_kind("blur") == DegradationKind::Blur);
    CHECK(parse_kind("snow") == DegradationKind::Snow);
    CHECK_THROWS_AS(parse_kind("rain"), Error);
}

TEST_CASE("ppm: round trips, quantization bound, exact grid values") {
    const auto path = tmp_path("ecfnet_test_img.ppm");

    Tensor white = Tensor::full(Shape{1, 3, 1, 1}, 1.0);
    save_ppm(white, path.string());
    CHECK(max_abs_diff(load_ppm(path.string()), white) == 0.0);

    // Every exactly-representable level k/255 survives a round trip.
    Tensor grid = Tensor::zeros(Shape{1, 3, 16, 16});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 256; ++i) grid.at(0, c, i / 16, i % 16) = i / 255.0;
    save_ppm(grid, path.string());
    CHECK(max_abs_diff(load_ppm(path.string()), grid) == 0.0);

    Rng rng(6);
    Tensor img = random_tensor(Shape{1, 3, 9, 7}, rng, 0, 1);
    save_ppm(img, path.string());
    Tensor back = load_ppm(path.string());
    CHECK(max_abs_diff(back, img) <= 1.0 / 510.0 + 1e-12);
    // Quantization is idempotent: a second round trip is exact.
    save_ppm(back, path.string());
    CHECK(max_abs_diff(load_ppm(path.string()), back) == 0.0);

    CHECK_THROWS_AS(save_ppm(Tensor::zeros(Shape{1, 1, 4, 4}), path.string()), Error);
    std::filesystem::remove(path);
}

TEST_CASE("ppm: header parsing with comments, malformed vs truncated errors") {
    const auto path = tmp_path("ecfnet_test_hdr.ppm");
    auto write_raw = [&](const std::string& bytes) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };

    write_raw("P6 # comment\n2 2 # another\n255\n" + std::string(12, '\x80'));
    Tensor t = load_ppm(path.string());
    CHECK(t.shape == Shape{1, 3, 2, 2});
    CHECK(t.at(0, 0, 0, 0) == doctest::Approx(128.0 / 255.0));

    auto expect_error_containing = [&](const std::string& needle) {
        try {
            load_ppm(path.string());
            FAIL("expected load_ppm to throw");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    write_raw("P5 2 2 255\n" + std::string(12, 'x'));
    expect_error_containing("malformed header");
    write_raw("P6 two 2 255\n" + std::string(12, 'x'));
    expect_error_containing("malformed header");
    write_raw("P6 2 2 65535\n" + std::string(12, 'x'));
    expect_error_containing("maxval");
    write_raw("P6 2 2 255\n" + std::string(5, 'x'));
    expect_error_containing("truncated");

    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_ppm(path.string()), Error);
}

TEST_CASE("make_synthetic_clean: range, determinism, structure") {
    Rng r1(8), r2(8), r3(9);
    Tensor a = make_synthetic_clean(32, 32, r1);
    Tensor b = make_synthetic_clean(32, 32, r2);
    Tensor c = make_synthetic_clean(32, 32, r3);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, c) > 0.0);
    double lo = 1e9, hi = -1e9;
    for (auto v : *a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(hi - lo > 0.05);  // not a constant image
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lr_final = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.lr_final = 1e-2;  // above lr_init
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.patch = 40;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.eval_interval = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("train_loop: zero steps, determinism, descent, NaN diagnostic") {
    auto pairs = make_dataset(3, 16, DegradationKind::Haze, 42);
    auto eval_pairs = make_dataset(1, 16, DegradationKind::Haze, 43);

    TrainConfig cfg;
    cfg.total_steps = 0;
    cfg.patch = 16;
    cfg.batch = 2;
    cfg.seed = 7;
    {
        Model m(tiny_config(), 7);
        const auto before = snapshot(m);
        auto records = train_loop(m, pairs, eval_pairs, cfg);
        CHECK(records.empty());
        CHECK(snapshot(m) == before);
    }

    cfg.total_steps = 12;
    cfg.eval_interval = 5;
    std::vector<TrainRecord> ra, rb;
    std::vector<double> pa, pb;
    {
        Model m(tiny_config(), 7);
        ra = train_loop(m, pairs, eval_pairs, cfg);
        pa = snapshot(m);
    }
    {
        Model m(tiny_config(), 7);
        rb = train_loop(m, pairs, eval_pairs, cfg);
        pb = snapshot(m);
    }
    REQUIRE(ra.size() == 12);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].step == static_cast<int>(i) + 1);
        CHECK(ra[i].lr == rb[i].lr);
        CHECK(ra[i].loss == rb[i].loss);
        CHECK((ra[i].psnr == rb[i].psnr || (std::isnan(ra[i].psnr) && std::isnan(rb[i].psnr))));
        CHECK(!std::isnan(ra[i].psnr));  // step 1 seeds the held-out PSNR
    }
    CHECK(pa == pb);
    CHECK(ra.back().loss < ra.front().loss);

    // Without eval pairs the PSNR column stays unset.
    {
        Model m(tiny_config(), 7);
        TrainConfig c2 = cfg;
        c2.total_steps = 2;
        auto recs = train_loop(m, pairs, {}, c2);
        for (const auto& r : recs) CHECK(std::isnan(r.psnr));
    }

    // A poisoned parameter produces a NaN gradient diagnostic with a name.
    // Use a head weight: it sits after the FDAM softmax (whose own input
    // check would otherwise fire first) so the NaN only surfaces in the
    // loss and its gradients.
    {
        Model m(tiny_config(), 7);
        for (Param* p : m.params())
            if (p->name == "head1.w") (*p->value.data)[0] = std::numeric_limits<double>::quiet_NaN();
        TrainConfig c2 = cfg;
        c2.total_steps = 1;
        try {
            train_loop(m, pairs, {}, c2);
            FAIL("expected NaN diagnostic");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("NaN gradient") != std::string::npos);
        }
    }

    CHECK_THROWS_AS(([&] {
                        Model m(tiny_config(), 7);
                        train_loop(m, {}, {}, cfg);
                    }()),
                    Error);
}

TEST_CASE("write_loss_csv: header, formatting, inf and blank sentinels") {
    const auto path = tmp_path("ecfnet_test_log.csv");
    std::vector<TrainRecord> recs{
        TrainRecord{1, 8e-4, 0.5, std::numeric_limits<double>::infinity()},
        TrainRecord{2, 4e-4, 0.25, 31.5},
        TrainRecord{3, 1e-6, 0.125, std::numeric_limits<double>::quiet_NaN()},
    };
    write_loss_csv(recs, path.string());
    const std::string text = read_file(path);
    CHECK(text == "step,lr,loss,psnr\n"
                  "1,0.0008,0.5,inf\n"
                  "2,0.0004,0.25,31.5\n"
                  "3,1e-06,0.125,\n");
    std::filesystem::remove(path);
}
