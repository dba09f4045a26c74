// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "reduxpll/dataset.hpp"
#include "reduxpll/hypergradient.hpp"
#include "reduxpll/mlp.hpp"
#include "reduxpll/pseudo_label.hpp"
#include "reduxpll/random.hpp"
#include "reduxpll/theory.hpp"
#include "reduxpll/train.hpp"

namespace {

using namespace reduxpll;

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.flat()) x = n(rng);
  return m;
}

Matrix soft_targets(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Matrix t(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (double& x : t.row(i)) s += (x = u(rng));
    for (double& x : t.row(i)) x /= s;
  }
  return t;
}

void BM_ForwardBackward(benchmark::State& state) {
  auto rng = stream_rng(1, 0);
  const std::vector<std::size_t> widths{2, 32, 32, 5};
  const auto p = MlpParams::glorot(widths, rng);
  const auto m = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(m, 2, rng);
  const Matrix t = soft_targets(m, 5, rng);
  for (auto _ : state) {
    auto fwd = forward(p, x);
    auto g = backward_ce(std::move(fwd.tape), fwd.probs, t);
    benchmark::DoNotOptimize(g.loss);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256);

void BM_Hypergradient(benchmark::State& state) {
  auto rng = stream_rng(2, 0);
  const std::vector<std::size_t> widths{2, 32, 32, 5};
  const auto theta = MlpParams::glorot(widths, rng);
  const auto gamma = MlpParams::glorot(widths, rng);
  const std::size_t m = 64;
  const Matrix x = random_matrix(m, 2, rng);
  const Matrix xv = random_matrix(m, 2, rng);
  Matrix yv(m, 5);
  for (std::size_t i = 0; i < m; ++i) yv(i, i % 5) = 1.0;
  std::vector<Matrix> u;
  for (std::size_t i = 0; i < m; ++i) u.push_back(initial_reduction_matrix(LabelSet::of({0, 1, 3}), 5));
  const auto map = make_reduction_label_map(x, u);
  for (auto _ : state) {
    auto hg = hypergradient(theta, gamma, x, xv, yv, 0.05, map);
    benchmark::DoNotOptimize(hg.outer_loss);
  }
}
BENCHMARK(BM_Hypergradient);

void BM_ReductionPseudoBatch(benchmark::State& state) {
  auto rng = stream_rng(3, 0);
  const std::size_t m = 64;
  const Matrix w = soft_targets(m, 5, rng);
  std::vector<Matrix> u;
  for (std::size_t i = 0; i < m; ++i) u.push_back(initial_reduction_matrix(LabelSet::of({0, 2, 4}), 5));
  for (auto _ : state) benchmark::DoNotOptimize(reduction_pseudo_batch(w, u));
}
BENCHMARK(BM_ReductionPseudoBatch);

void BM_TrainEpoch(benchmark::State& state) {
  const auto ds = corrupt_instance_dependent(gen_gaussian_mixture(5, 2, 2000, 2.5, 7), 0.5, 7);
  const auto data = split(ds, {});
  TrainConfig cfg;
  cfg.method = state.range(0) == 0 ? Method::kReduxPll : Method::kProden;
  Trainer t(data, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(t.train_epoch());
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Theorem1(benchmark::State& state) {
  TheoryScenario s;
  s.points.push_back({{}, {0.40, 0.36, 0.14, 0.10}, 1.0, std::nullopt});
  s.excluded = LabelSet::of({1});
  s.tau = 0.1;
  s.epsilon = 0.1;
  s.epsilon_prime = 0.02;
  Theorem1Options o;
  o.trials = 10000;
  o.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(verify_theorem1(s, o).lhs);
}
BENCHMARK(BM_Theorem1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
