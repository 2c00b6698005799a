#include <benchmark/benchmark.h>

#include <random>

#include "pemed/kernels.hpp"
#include "pemed/layers.hpp"
#include "pemed/network.hpp"

namespace {

using namespace pemed;

TensorF random(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  TensorF t(std::move(shape));
  for (float& v : t.data()) v = dist(rng);
  return t;
}

void BM_GemmParallel(benchmark::State& state) {
  const Index n = state.range(0);
  const TensorF a = random({n, n}, 1), b = random({n, n}, 2);
  TensorF c({n, n});
  for (auto _ : state) {
    kernels::gemm_nn<float>(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void BM_GemmReference(benchmark::State& state) {
  const Index n = state.range(0);
  const TensorF a = random({n, n}, 1), b = random({n, n}, 2);
  TensorF c({n, n});
  for (auto _ : state) {
    kernels::reference::gemm<float>(a.data(), b.data(), c.data(), n, n, n, false, false);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void BM_SoftmaxParallel(benchmark::State& state) {
  const Index n = state.range(0);
  const TensorF x = random({n, n}, 3);
  TensorF y({n, n});
  for (auto _ : state) {
    kernels::softmax_rows<float>(x.data(), y.data(), n, n);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_SoftmaxReference(benchmark::State& state) {
  const Index n = state.range(0);
  const TensorF x = random({n, n}, 3);
  TensorF y({n, n});
  for (auto _ : state) {
    kernels::reference::softmax_rows<float>(x.data(), y.data(), n, n);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_LayerNormParallel(benchmark::State& state) {
  const Index rows = state.range(0), d = 64;
  const TensorF x = random({rows, d}, 4), g = random({d}, 5), b = random({d}, 6);
  TensorF y({rows, d}), mean({rows}), rstd({rows});
  for (auto _ : state) {
    kernels::layer_norm_forward<float>(x.data(), g.data(), b.data(), 1e-5f, y.data(), mean.data(), rstd.data(), rows,
                                       d);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_LayerNormReference(benchmark::State& state) {
  const Index rows = state.range(0), d = 64;
  const TensorF x = random({rows, d}, 4), g = random({d}, 5), b = random({d}, 6);
  TensorF y({rows, d});
  for (auto _ : state) {
    kernels::reference::layer_norm_forward<float>(x.data(), g.data(), b.data(), 1e-5f, y.data(), rows, d);
    benchmark::DoNotOptimize(y.data().data());
  }
}

kernels::ConvGeometry conv_geometry(Index kernel) {
  kernels::ConvGeometry g;
  g.c_in = 64;
  g.c_out = 64;
  g.height = g.width = 32;
  g.kernel = kernel;
  g.pad = kernel / 2;
  return g;
}

void BM_ConvParallel(benchmark::State& state) {
  const auto g = conv_geometry(state.range(0));
  const TensorF x = random({g.c_in, g.height, g.width}, 7), w = random({g.c_out, g.c_in, g.kernel, g.kernel}, 8);
  TensorF y({g.c_out, g.out_height(), g.out_width()});
  for (auto _ : state) {
    kernels::conv2d_forward<float>(x.data(), w.data(), y.data(), g);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_ConvReference(benchmark::State& state) {
  const auto g = conv_geometry(state.range(0));
  const TensorF x = random({g.c_in, g.height, g.width}, 7), w = random({g.c_out, g.c_in, g.kernel, g.kernel}, 8);
  TensorF y({g.c_out, g.out_height(), g.out_width()});
  for (auto _ : state) {
    kernels::reference::conv2d_forward<float>(x.data(), w.data(), y.data(), g);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_UpsampleParallel(benchmark::State& state) {
  const TensorF x = random({16 * 16, 64}, 9);
  TensorF y({64 * 64, 64});
  for (auto _ : state) {
    kernels::upsample_bilinear_forward<float>(x.data(), y.data(), 16, 16, 64, 64, 64);
    benchmark::DoNotOptimize(y.data().data());
  }
}

void BM_UpsampleReference(benchmark::State& state) {
  const TensorF x = random({16 * 16, 64}, 9);
  TensorF y({64 * 64, 64});
  for (auto _ : state) {
    kernels::reference::upsample_bilinear_forward<float>(x.data(), y.data(), 16, 16, 64, 64, 64);
    benchmark::DoNotOptimize(y.data().data());
  }
}

// Whole-network forward at the default 64 px configuration.
void BM_NetworkForward(benchmark::State& state) {
  const ModelConfig cfg;
  const NetworkF net(cfg, init_params(cfg, 1));
  const TensorF image = random({1, 64, 64}, 10);
  const std::vector<Click> clicks{{20, 30, Polarity::Positive, 1}};
  const PromptMaps maps = assemble_input(image, clicks, TensorF({1, 64, 64}));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(maps).value().data().data());
}

BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256);
BENCHMARK(BM_SoftmaxParallel)->Arg(256);
BENCHMARK(BM_SoftmaxReference)->Arg(256);
BENCHMARK(BM_LayerNormParallel)->Arg(4096);
BENCHMARK(BM_LayerNormReference)->Arg(4096);
BENCHMARK(BM_ConvParallel)->Arg(1)->Arg(3);
BENCHMARK(BM_ConvReference)->Arg(1)->Arg(3);
BENCHMARK(BM_UpsampleParallel);
BENCHMARK(BM_UpsampleReference);
BENCHMARK(BM_NetworkForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
