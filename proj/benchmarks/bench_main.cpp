/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include <random>

#include <benchmark/benchmark.h>

#include "tgan/autograd.hpp"
#include "tgan/colorkit.hpp"
#include "tgan/nets.hpp"

using namespace tgan;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t(s);
    for (double& v : t.data()) {
        v = n(rng);
    }
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int ch = static_cast<int>(state.range(1));
    const ag::Var x = ag::Var::constant(random_tensor({4, ch, side, side}, 1));
    const ag::Var w = ag::Var::constant(random_tensor({ch, ch, 3, 3}, 2));
    const ag::Var b = ag::Var::constant(random_tensor({1, ch, 1, 1}, 3));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ag::conv2d(x, w, b, {1, 1, false}).value().ptr());
    }
    state.SetItemsProcessed(state.iterations() * 4LL * side * side * ch * ch * 9);
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16})->Args({64, 16})->Args({64, 32});

void BM_Conv2dBackward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int ch = static_cast<int>(state.range(1));
    const Tensor xt = random_tensor({4, ch, side, side}, 1);
    const Tensor wt = random_tensor({ch, ch, 3, 3}, 2);
    const Tensor bt = random_tensor({1, ch, 1, 1}, 3);
    for (auto _ : state) {
        const ag::Var x = ag::Var::parameter(xt);
        const ag::Var w = ag::Var::parameter(wt);
        const ag::Var b = ag::Var::parameter(bt);
        ag::sum(ag::conv2d(x, w, b, {1, 1, false})).backward();
        benchmark::DoNotOptimize(w.grad().ptr());
    }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 16})->Args({64, 16});

void BM_Gram(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const ag::Var f = ag::Var::constant(random_tensor({4, ch, 32, 32}, 4));
    for (auto _ : state) {
        benchmark::DoNotOptimize(ag::gram(f, true).value().ptr());
    }
}
BENCHMARK(BM_Gram)->Arg(16)->Arg(64)->Arg(256);

void BM_RgbToLab(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    RgbImage img(side, side);
    for (float& v : img.pixels) {
        v = u(rng);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(colorkit::rgb_to_lab(img).L.values.data());
    }
    state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_RgbToLab)->Arg(128)->Arg(256);

void BM_GeneratorForward(benchmark::State& state) {
    nets::GeneratorConfig gc;
    gc.resolution = static_cast<int>(state.range(0));
    gc.base_width = 8;
    const nets::Generator g(gc, 7);
    const ag::Var x = ag::Var::constant(random_tensor({1, 5, gc.resolution, gc.resolution}, 6));
    ag::NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(g.forward(x).value().ptr());
    }
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
