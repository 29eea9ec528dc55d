#include <benchmark/benchmark.h>

#include "mnf/elbo.hpp"
#include "mnf/model.hpp"
#include "mnf/ops.hpp"
#include "mnf/rng.hpp"

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mnf::Rng rng(1);
  const auto a = mnf::sample_normal(rng, {n, n});
  const auto b = mnf::sample_normal(rng, {n, n});
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    mnf::kernels::matmul(a.data(), b.data(), c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  mnf::Rng rng(2);
  const auto x = mnf::sample_normal(rng, {32, 28, 28, 1});
  mnf::Parameter kernel{"k", mnf::sample_normal(rng, {5, 5, 1, 20})};
  for (auto _ : state) {
    mnf::Tape tape;
    auto y = mnf::ops::conv2d(tape.constant(x), tape.param(kernel), mnf::ops::Padding::valid);
    auto g = tape.backward(mnf::ops::sum(y));
    benchmark::DoNotOptimize(g.of(kernel).data().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward);

mnf::ModelSpec mlp(mnf::LayerKind kind) {
  mnf::ModelSpec spec;
  spec.input_shape = {784};
  spec.sigma_cap = 0.5;
  spec.layers = {{.kind = kind, .in = 784, .out = 100}, {.kind = mnf::LayerKind::relu},
                 {.kind = kind, .in = 100, .out = 100}, {.kind = mnf::LayerKind::relu},
                 {.kind = kind, .in = 100, .out = 10}};
  return spec;
}

void BM_ElboStep(benchmark::State& state, mnf::LayerKind kind) {
  mnf::Rng rng(3);
  mnf::Model model = mnf::init_model(mlp(kind), rng);
  mnf::Batch batch;
  batch.inputs = mnf::Tensor(mnf::Shape{128, 784});
  for (auto& v : batch.inputs.data()) v = rng.uniform();
  for (std::size_t i = 0; i < 128; ++i) batch.labels.push_back(i % 10);
  for (auto _ : state) {
    mnf::Tape tape;
    auto elbo = mnf::elbo_minibatch(tape, model, batch, rng, 10000);
    auto g = tape.backward(-elbo.total);
    benchmark::DoNotOptimize(&g);
  }
}
BENCHMARK_CAPTURE(BM_ElboStep, mnf, mnf::LayerKind::mnf_dense);
BENCHMARK_CAPTURE(BM_ElboStep, ffg, mnf::LayerKind::ffg);
BENCHMARK_CAPTURE(BM_ElboStep, l2, mnf::LayerKind::l2_dense);

}  // namespace

BENCHMARK_MAIN();
