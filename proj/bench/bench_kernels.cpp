// Serial-vs-OpenMP lane comparison for the hot kernels.
#include <benchmark/benchmark.h>

#include "milreg/common.hpp"
#include "milreg/kernels.hpp"

using namespace milreg;

namespace {

MatF random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  MatF h(n, d);
  for (float& v : h.a) v = static_cast<float>(rng.normal());
  return h;
}

struct AttnInputs {
  MatF h;
  MatD v;
  VecD w;
  VecD a;
  std::vector<std::uint32_t> order;
};

AttnInputs make_inputs(std::size_t n, std::size_t d, std::size_t h_att) {
  AttnInputs in;
  in.h = random_features(n, d, 1);
  Rng rng(2);
  in.v = MatD(h_att, d);
  for (double& x : in.v.a) x = rng.normal() * 0.1;
  in.w.resize(h_att);
  for (double& x : in.w) x = rng.normal() * 0.1;
  in.a.resize(n);
  double s = 0.0;
  for (double& x : in.a) {
    x = rng.uniform() + 1e-3;
    s += x;
  }
  for (double& x : in.a) x /= s;
  in.order.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) in.order[i] = i;
  return in;
}

void bench_attention_scores_serial(benchmark::State& state) {
  auto in = make_inputs(512, 2048, 128);
  MatD t;
  VecD e;
  for (auto _ : state) {
    kernels::serial::attention_scores(in.h, in.v, in.w, t, e);
    benchmark::DoNotOptimize(e.data());
  }
}

void bench_attention_scores_omp(benchmark::State& state) {
  auto in = make_inputs(512, 2048, 128);
  MatD t;
  VecD e;
  for (auto _ : state) {
    kernels::omp::attention_scores(in.h, in.v, in.w, t, e);
    benchmark::DoNotOptimize(e.data());
  }
}

void bench_weighted_pool_serial(benchmark::State& state) {
  auto in = make_inputs(512, 2048, 128);
  VecD z;
  for (auto _ : state) {
    kernels::serial::weighted_pool(in.h, in.a, in.order, z);
    benchmark::DoNotOptimize(z.data());
  }
}

void bench_weighted_pool_omp(benchmark::State& state) {
  auto in = make_inputs(512, 2048, 128);
  VecD z;
  for (auto _ : state) {
    kernels::omp::weighted_pool(in.h, in.a, in.order, z);
    benchmark::DoNotOptimize(z.data());
  }
}

void bench_nnls2_serial(benchmark::State& state) {
  const std::size_t n = 224 * 224;
  std::vector<double> od(3 * n);
  Rng rng(3);
  for (double& v : od) v = rng.uniform() * 2.0;
  const double stain[6] = {0.65, 0.07, 0.70, 0.99, 0.29, 0.11};
  std::vector<double> conc(2 * n);
  for (auto _ : state) {
    kernels::serial::nnls2_batch(od.data(), n, stain, conc.data());
    benchmark::DoNotOptimize(conc.data());
  }
}

void bench_nnls2_omp(benchmark::State& state) {
  const std::size_t n = 224 * 224;
  std::vector<double> od(3 * n);
  Rng rng(3);
  for (double& v : od) v = rng.uniform() * 2.0;
  const double stain[6] = {0.65, 0.07, 0.70, 0.99, 0.29, 0.11};
  std::vector<double> conc(2 * n);
  for (auto _ : state) {
    kernels::omp::nnls2_batch(od.data(), n, stain, conc.data());
    benchmark::DoNotOptimize(conc.data());
  }
}

void bench_gaussian_blur_serial(benchmark::State& state) {
  std::vector<double> img(224 * 224);
  Rng rng(4);
  for (double& v : img) v = rng.uniform() * 255.0;
  std::vector<double> out;
  for (auto _ : state) {
    kernels::serial::gaussian_blur(img, 224, 224, 1.4, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void bench_gaussian_blur_omp(benchmark::State& state) {
  std::vector<double> img(224 * 224);
  Rng rng(4);
  for (double& v : img) v = rng.uniform() * 255.0;
  std::vector<double> out;
  for (auto _ : state) {
    kernels::omp::gaussian_blur(img, 224, 224, 1.4, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(bench_attention_scores_serial);
BENCHMARK(bench_attention_scores_omp);
BENCHMARK(bench_weighted_pool_serial);
BENCHMARK(bench_weighted_pool_omp);
BENCHMARK(bench_nnls2_serial);
BENCHMARK(bench_nnls2_omp);
BENCHMARK(bench_gaussian_blur_serial);
BENCHMARK(bench_gaussian_blur_omp);

BENCHMARK_MAIN();
