#include <benchmark/benchmark.h>

#include "clvq/decoder.hpp"

namespace {

clvq::Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  clvq::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  clvq::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

clvq::DecoderParams make_decoder(Eigen::Index d, int layers) {
  clvq::DecoderConfig cfg;
  cfg.num_layers = layers;
  cfg.num_heads = 4;
  cfg.ffn_dim = 4 * static_cast<int>(d);
  clvq::Rng rng(1);
  return clvq::DecoderParams::init(d, cfg, rng);
}

void BM_DecoderForward(benchmark::State& state) {
  const auto t = state.range(0);
  const auto d = state.range(1);
  const clvq::DecoderParams p = make_decoder(d, 2);
  const clvq::Mat zq = gaussian(t, d, 2);
  const clvq::Mat mem = gaussian(t, d, 3);
  clvq::Rng rng(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(clvq::decoder_forward(p, zq, mem, {}, clvq::Mode::kEval, rng));
  }
  state.SetItemsProcessed(state.iterations() * t);
}
BENCHMARK(BM_DecoderForward)->Args({16, 64})->Args({64, 64})->Args({32, 256});

void BM_DecoderForwardBackward(benchmark::State& state) {
  const auto t = state.range(0);
  const auto d = state.range(1);
  clvq::DecoderParams p = make_decoder(d, 2);
  const clvq::Mat zq = gaussian(t, d, 2);
  const clvq::Mat mem = gaussian(t, d, 3);
  const clvq::Mat dy = gaussian(t, d, 5);
  clvq::Rng rng(4);
  for (auto _ : state) {
    clvq::DecoderCache cache;
    clvq::decoder_forward(p, zq, mem, {}, clvq::Mode::kTrain, rng, &cache);
    benchmark::DoNotOptimize(clvq::decoder_backward(p, cache, dy));
  }
  state.SetItemsProcessed(state.iterations() * t);
}
BENCHMARK(BM_DecoderForwardBackward)->Args({16, 64})->Args({64, 64});

}  // namespace

BENCHMARK_MAIN();
