// Microbenchmarks for the hot kernels and the full forward pass.
#include <benchmark/benchmark.h>

#include "ecfnet/loss.hpp"
#include "ecfnet/model.hpp"
#include "ecfnet/ops.hpp"
#include "ecfnet/random.hpp"

using namespace ecfnet;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
    Tensor t = Tensor::zeros(s);
    for (auto& v : *t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

void BM_conv2d_3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Rng rng(1);
    Tensor x = random_tensor(Shape{1, c, 64, 64}, rng);
    Tensor w = random_tensor(Shape{c, c, 3, 3}, rng);
    Tensor b = random_tensor(Shape{1, c, 1, 1}, rng);
    ConvOpts opts;
    opts.pad = 1;
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, opts));
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(c) * c * 9 * 64 * 64);
}
BENCHMARK(BM_conv2d_3x3)->Arg(8)->Arg(16)->Arg(32);

void BM_conv2d_depthwise_5x5(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Rng rng(2);
    Tensor x = random_tensor(Shape{1, c, 64, 64}, rng);
    Tensor w = random_tensor(Shape{c, 1, 5, 5}, rng);
    Tensor b = random_tensor(Shape{1, c, 1, 1}, rng);
    ConvOpts opts;
    opts.pad = 2;
    opts.groups = c;
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, opts));
}
BENCHMARK(BM_conv2d_depthwise_5x5)->Arg(16)->Arg(64);

void BM_fft2d_64(benchmark::State& state) {
    Rng rng(3);
    Tensor x = random_tensor(Shape{1, 3, 64, 64}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(fft2d(x));
}
BENCHMARK(BM_fft2d_64);

void BM_model_forward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.base_channels = static_cast<int>(state.range(0));
    cfg.num_blocks = static_cast<int>(state.range(1));
    Model model(cfg, 4);
    Rng rng(5);
    Tensor image = random_tensor(Shape{1, 3, 64, 64}, rng);
    for (auto& v : *image.data) v = 0.5 + 0.4 * v;
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(image));
}
BENCHMARK(BM_model_forward)->Args({4, 1})->Args({16, 2});

void BM_train_step(benchmark::State& state) {
    ModelConfig cfg;
    cfg.base_channels = 4;
    cfg.num_blocks = 1;
    cfg.fdam_g = 4;
    Model model(cfg, 6);
    Rng rng(7);
    Tensor image = random_tensor(Shape{1, 3, 32, 32}, rng);
    Tensor target = image.clone();
    for (auto _ : state) {
        TapePtr tape = Tape::create();
        std::vector<Tensor> outs = model.forward(image, tape);
        std::vector<Tensor> targets;
        for (const Tensor& o : outs)
            targets.push_back(bilinear_resize(target, o.shape.h, o.shape.w));
        Tensor loss = total_loss(outs, targets);
        tape->backward(loss);
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(BM_train_step);

}  // namespace

BENCHMARK_MAIN();
