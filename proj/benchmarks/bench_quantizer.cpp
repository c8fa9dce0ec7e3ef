#include <benchmark/benchmark.h>

#include "clvq/quantizer.hpp"

namespace {

clvq::Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  clvq::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  clvq::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

void BM_SphericalInit(benchmark::State& state) {
  const auto k = static_cast<int>(state.range(0));
  const clvq::Mat x = gaussian(4 * k, 64, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clvq::init_spherical_kmeanspp(x, k, 7, 20, 1e-4, 0.99));
  }
}
BENCHMARK(BM_SphericalInit)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_QuantizeTrain(benchmark::State& state) {
  const auto k = static_cast<int>(state.range(0));
  const auto d = state.range(1);
  const clvq::Codebook cb = clvq::Codebook::from_vectors(
      gaussian(k, d, 2), std::vector<double>(static_cast<std::size_t>(k), 1.0), 0.99);
  const clvq::Mat z = gaussian(128, d, 3);
  clvq::Rng rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        clvq::quantize_batch(z, cb, {5, 1.0}, clvq::Mode::kTrain, rng));
  }
  state.SetItemsProcessed(state.iterations() * z.rows());
}
BENCHMARK(BM_QuantizeTrain)->Args({400, 64})->Args({400, 768})->Args({2048, 64});

void BM_QuantizeEval(benchmark::State& state) {
  const auto k = static_cast<int>(state.range(0));
  const clvq::Codebook cb = clvq::Codebook::from_vectors(
      gaussian(k, 64, 2), std::vector<double>(static_cast<std::size_t>(k), 1.0), 0.99);
  const clvq::Mat z = gaussian(128, 64, 3);
  clvq::Rng rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clvq::quantize_batch(z, cb, {5, 1.0}, clvq::Mode::kEval, rng));
  }
  state.SetItemsProcessed(state.iterations() * z.rows());
}
BENCHMARK(BM_QuantizeEval)->Arg(400)->Arg(2048);

void BM_EmaUpdate(benchmark::State& state) {
  const int k = 400;
  clvq::Codebook cb = clvq::Codebook::from_vectors(
      gaussian(k, 64, 2), std::vector<double>(static_cast<std::size_t>(k), 1.0), 0.99);
  const clvq::Mat z = gaussian(128, 64, 3);
  std::vector<int> idx(128);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>((i * 37) % k);
  for (auto _ : state) {
    clvq::ema_update(cb, z, idx);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_EmaUpdate);

}  // namespace

BENCHMARK_MAIN();
