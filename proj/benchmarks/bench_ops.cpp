#include <benchmark/benchmark.h>

#include "cascade/ops.hpp"
#include "cascade/rng.hpp"
#include "cascade/unet.hpp"

using namespace cascade;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.v()) v = static_cast<float>(rng.normal());
    return t;
}

void BM_conv2d_forward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    auto x = random_tensor({1, c, 96, 96}, 1);
    auto w = random_tensor({c, c, 3, 3}, 2);
    auto b = random_tensor({c}, 3);
    for (auto _ : state) {
        auto y = conv2d<float>(nullptr, x, w, b);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 96 * 96 * c * c * 9);
}
BENCHMARK(BM_conv2d_forward)->Arg(8)->Arg(16)->Arg(32);

void BM_conv2d_train_step(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    auto x = random_tensor({1, c, 96, 96}, 1);
    auto w = random_tensor({c, c, 3, 3}, 2);
    auto b = random_tensor({c}, 3);
    w.set_needs_grad(true);
    b.set_needs_grad(true);
    x.set_needs_grad(true);
    for (auto _ : state) {
        Tape<float> tape;
        auto y = conv2d(&tape, x, w, b);
        auto s = sum(&tape, y);
        tape.backward(s);
        benchmark::DoNotOptimize(w.g().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 96 * 96 * c * c * 27);
}
BENCHMARK(BM_conv2d_train_step)->Arg(8)->Arg(16);

void BM_unet_forward(benchmark::State& state) {
    UNetConfig cfg;
    cfg.base_filters = static_cast<std::size_t>(state.range(0));
    cfg.num_classes = 3;
    cfg.input_size = 96;
    auto net = UNet<float>::build(cfg);
    auto x = random_tensor({1, 1, 96, 96}, 7);
    for (auto _ : state) {
        auto y = net.forward(nullptr, x, true);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_unet_forward)->Arg(8)->Arg(16);

void BM_unet_train_step(benchmark::State& state) {
    UNetConfig cfg;
    cfg.base_filters = static_cast<std::size_t>(state.range(0));
    cfg.num_classes = 3;
    cfg.input_size = 96;
    auto net = UNet<float>::build(cfg);
    auto x = random_tensor({1, 1, 96, 96}, 7);
    Tensor<float> onehot({1, 3, 96, 96});
    for (std::size_t i = 0; i < 96 * 96; ++i) onehot.v()[i] = 1.0f;  // all background
    const std::vector<float> weights{1.0f, 1.0f, 1.0f};
    AdamState<float> adam;
    for (auto _ : state) {
        Tape<float> tape;
        auto logits = net.forward(&tape, x, true);
        auto probs = softmax_pixelwise(&tape, logits);
        auto loss = weighted_cross_entropy<float>(&tape, probs, onehot, weights);
        auto params = net.parameters();
        for (auto* p : params) p->value.zero_grad();
        tape.backward(loss);
        adam_step<float>(params, adam, 1e-4f);
    }
}
BENCHMARK(BM_unet_train_step)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
