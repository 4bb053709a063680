// Microbenchmarks for the hot paths: convolution forward/backward, the
// pyramid pooling pieces, and a full training iteration at benchmark scale.

#include <benchmark/benchmark.h>

#include <random>

#include "segdetail/data.hpp"
#include "segdetail/network.hpp"
#include "segdetail/ops.hpp"
#include "segdetail/train.hpp"

using namespace segdetail;

namespace {

Tensor4<float> random_tensor(int n, int c, int h, int w, std::mt19937& rng) {
    Tensor4<float> t(n, c, h, w);
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    for (auto& v : t.v) v = dist(rng);
    return t;
}

ConvParams<float> random_conv(int co, int ci, int k, int stride, int pad,
                              std::mt19937& rng) {
    ConvParams<float> p;
    p.weight = Tensor4<float>(co, ci, k, k);
    p.bias.assign(co, 0.f);
    p.stride = stride;
    p.padding = pad;
    std::uniform_real_distribution<float> dist(-0.1f, 0.1f);
    for (auto& v : p.weight.v) v = dist(rng);
    return p;
}

void BM_Conv2dForward(benchmark::State& state) {
    std::mt19937 rng(1);
    const int c = static_cast<int>(state.range(0));
    auto input = random_tensor(8, c, 24, 24, rng);
    auto params = random_conv(c, c, 3, 1, 1, rng);
    for (auto _ : state) {
        auto out = conv2d_forward(input, params);
        benchmark::DoNotOptimize(out.v.data());
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
    std::mt19937 rng(2);
    const int c = static_cast<int>(state.range(0));
    auto input = random_tensor(8, c, 24, 24, rng);
    auto params = random_conv(c, c, 3, 1, 1, rng);
    auto grad_out = random_tensor(8, c, 24, 24, rng);
    for (auto _ : state) {
        auto grads = conv2d_backward(input, params, grad_out);
        benchmark::DoNotOptimize(grads.input.v.data());
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_AdaptiveAvgPool(benchmark::State& state) {
    std::mt19937 rng(3);
    auto input = random_tensor(8, 64, 12, 12, rng);
    const int bin = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto out = adaptive_avg_pool(input, bin, bin);
        benchmark::DoNotOptimize(out.v.data());
    }
}
BENCHMARK(BM_AdaptiveAvgPool)->Arg(1)->Arg(3)->Arg(6);

void BM_BilinearUpsample(benchmark::State& state) {
    std::mt19937 rng(4);
    auto input = random_tensor(8, 5, 12, 12, rng);
    for (auto _ : state) {
        auto out = bilinear_upsample(input, 48, 48);
        benchmark::DoNotOptimize(out.v.data());
    }
}
BENCHMARK(BM_BilinearUpsample);

void BM_Augment(benchmark::State& state) {
    SceneSpec spec;
    CoarsenSpec cs;
    auto ds = generate_dataset(spec, cs, 1, 5);
    std::uint32_t seed = 0;
    for (auto _ : state) {
        auto out = augment(ds.items[0], 48, seed++, {0.5f, 0.5f, 0.5f},
                           {0.25f, 0.25f, 0.25f});
        benchmark::DoNotOptimize(out.image.v.data());
    }
}
BENCHMARK(BM_Augment);

void BM_TrainIteration(benchmark::State& state) {
    SceneSpec spec;
    CoarsenSpec cs;
    auto ds = generate_dataset(spec, cs, 8, 6);
    NetworkConfig nc;
    nc.injection = InjectionPoint::AfterFinal;
    MiniPsp<float> net(nc);

    // One batch assembled once; the loop measures forward + loss + backward +
    // step, which is what each training iteration costs.
    Tensor4<float> batch(8, 3, 48, 48);
    std::vector<LabelMask> coarse, fine;
    for (int i = 0; i < 8; ++i) {
        const auto& item = ds.items[i];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 48; ++y)
                for (int x = 0; x < 48; ++x)
                    batch.at(i, c, y, x) = item.image.at(0, c, y, x);
        coarse.push_back(item.coarse);
        fine.push_back(item.fine);
    }
    auto params = net.params();
    SgdState sgd;
    for (auto _ : state) {
        ForwardCache<float> cache;
        auto logits = net.forward_detailer(batch, coarse, &cache);
        auto ce = softmax_ce_ignore(logits, fine);
        net.zero_grad();
        net.backward(cache, ce.grad_logits);
        sgd_step(params, sgd, 1e-3, 0.99);
        benchmark::DoNotOptimize(ce.loss);
    }
}
BENCHMARK(BM_TrainIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
