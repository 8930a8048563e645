// Microbenchmarks for the hot paths: tensor matmul, divergence evaluation,
// DAC clipping, ROUGE-L scoring, and a transformer forward pass.
#include <benchmark/benchmark.h>

#include <vector>

#include "mgsr/divergences.hpp"
#include "mgsr/evaluate.hpp"
#include "mgsr/lm.hpp"
#include "mgsr/rng.hpp"
#include "mgsr/tensor.hpp"

using namespace mgsr;
using ad::Tensor;

namespace {

ProbVector random_simplex(Rng& rng, size_t n) {
  ProbVector p(n);
  double s = 0;
  for (auto& x : p) {
    x = rng.next_double() + 1e-6;
    s += x;
  }
  for (auto& x : p) x /= s;
  return p;
}

Tensor random_tensor(Rng& rng, ad::Shape shape, bool leaf) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return leaf ? Tensor::leaf(shape, std::move(v))
              : Tensor::constant(shape, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(1);
  const Tensor a = random_tensor(rng, {n, n}, false);
  const Tensor b = random_tensor(rng, {n, n}, false);
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(2);
  Tensor a = random_tensor(rng, {n, n}, true);
  const Tensor b = random_tensor(rng, {n, n}, false);
  for (auto _ : state) {
    a.zero_grad();
    ad::backward(ad::sum(ad::matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(128);

void BM_ForwardKL(benchmark::State& state) {
  Rng rng(3);
  const auto p = random_simplex(rng, 32);
  const auto q = random_simplex(rng, 32);
  for (auto _ : state) benchmark::DoNotOptimize(div::forward_kl(p, q));
}
BENCHMARK(BM_ForwardKL);

void BM_DacClipHard(benchmark::State& state) {
  Rng rng(4);
  const auto p = random_simplex(rng, 32);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        div::dac_clip(p, {0.5, 0.01}, div::ClipMode::hard()).indices.data());
}
BENCHMARK(BM_DacClipHard);

void BM_DacKlSoft(benchmark::State& state) {
  Rng rng(5);
  const auto p = random_simplex(rng, 32);
  const Tensor q = div::prob_tensor(random_simplex(rng, 32));
  div::SubNetwork subnet(32, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        div::dac_kl_loss(p, q, subnet, div::ClipMode::soft()).item());
}
BENCHMARK(BM_DacKlSoft);

void BM_RougeL(benchmark::State& state) {
  Rng rng(7);
  std::vector<int> a(24), b(24);
  for (auto& x : a) x = static_cast<int>(rng.next_below(30));
  for (auto& x : b) x = static_cast<int>(rng.next_below(30));
  for (auto _ : state) benchmark::DoNotOptimize(eval::rouge_l(a, b).f1);
}
BENCHMARK(BM_RougeL);

void BM_LmForward(benchmark::State& state) {
  lm::ModelConfig cfg;
  cfg.vocab_size = 31;
  cfg.context_len = 32;
  cfg.n_layers = static_cast<int>(state.range(0));
  cfg.n_heads = 2;
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.seed = 8;
  const lm::TransformerLM model(cfg);
  lm::TokenSequence seq;
  seq.prompt = {1, 2, 3, 4, 5};
  seq.response = {6, 7, 8, 9, 10, 0};
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(seq).data());
}
BENCHMARK(BM_LmForward)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
