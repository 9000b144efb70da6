#include <benchmark/benchmark.h>

#include "rgqed3/fermion.hpp"

using namespace rgqed3;

static void BM_sweep(benchmark::State& st) {
  Lattice lat(3, 2, 1);
  bool parallel = st.range(0) != 0;
  for (auto _ : st) benchmark::DoNotOptimize(averaging_sweep(lat, 1, 4, 1, 1.0, parallel).max());
}
BENCHMARK(BM_sweep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
