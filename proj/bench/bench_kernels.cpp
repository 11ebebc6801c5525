// Serial reference kernels against their OpenMP versions.

#include <benchmark/benchmark.h>

#include <random>

#include "scalerl/rl_objectives.hpp"
#include "scalerl/scaling_law.hpp"

namespace {

using namespace scalerl;

TrainingCurve noisy_curve(int n) {
  SynthSpec spec;
  spec.n_points = static_cast<std::size_t>(n);
  spec.noise_sigma = 0.01;
  return synthesize_curve({0.1, 0.61, 1.92, 2542.0}, spec, 1);
}

rl::Batch random_batch(int prompts, int group, int max_tokens) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lp(-3.0, -0.05), drift(-0.3, 0.3);
  std::uniform_int_distribution<int> len(1, max_tokens);
  std::bernoulli_distribution coin(0.5);
  rl::Batch batch(static_cast<std::size_t>(prompts));
  for (int p = 0; p < prompts; ++p) {
    batch[p].prompt_id = "p" + std::to_string(p);
    for (int g = 0; g < group; ++g) {
      rl::CompletionRecord c;
      const int n = len(rng);
      for (int t = 0; t < n; ++t) {
        const double gen = lp(rng);
        c.logp_gen.push_back(gen);
        c.logp_train.push_back(std::min(0.0, gen + drift(rng)));
      }
      c.reward = coin(rng) ? 1.0 : -1.0;
      batch[p].completions.push_back(std::move(c));
    }
  }
  return batch;
}

void fit(benchmark::State& state, Exec exec) {
  const auto curve = noisy_curve(static_cast<int>(state.range(0)));
  FitConfig cfg;
  cfg.exec = exec;
  for (auto _ : state) benchmark::DoNotOptimize(fit_sigmoid(curve, cfg));
}

void power_law(benchmark::State& state, Exec exec) {
  const auto curve = noisy_curve(static_cast<int>(state.range(0)));
  FitConfig cfg;
  cfg.exec = exec;
  for (auto _ : state) benchmark::DoNotOptimize(fit_power_law(curve, cfg));
}

void loss(benchmark::State& state, Exec exec) {
  const auto batch = random_batch(static_cast<int>(state.range(0)), 16, 512);
  const auto spec = rl::LossSpec::scalerl();
  for (auto _ : state) benchmark::DoNotOptimize(rl::compute_loss(batch, spec, exec));
}

BENCHMARK_CAPTURE(fit, serial, Exec::serial)->Arg(75)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(fit, parallel, Exec::parallel)->Arg(75)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(power_law, serial, Exec::serial)->Arg(75)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(power_law, parallel, Exec::parallel)->Arg(75)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(loss, serial, Exec::serial)->Arg(48)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(loss, parallel, Exec::parallel)->Arg(48)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
